//! Greedy non-maximum suppression.

use super::iou;
use crate::geom::PixelBox;

/// Returns indices of kept boxes, highest score first. A box is dropped
/// when its overlap with an already kept box is strictly above
/// `iou_thresh`; equal scores break by original index so results are
/// independent of input order history.
pub fn nms(boxes: &[PixelBox], scores: &[f64], iou_thresh: f64) -> Vec<usize> {
    assert_eq!(boxes.len(), scores.len());
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        if kept.iter().all(|&k| iou(&boxes[k], &boxes[i]) <= iou_thresh) {
            kept.push(i);
        }
    }
    kept
}
