//! Average precision with the all-point precision/recall area.

use crate::detcore::{iou, Detection};
use crate::synthgen::BoxLabel;

/// Predictions and ground truth for one image.
#[derive(Clone, Default)]
pub struct ImageEval {
    pub dets: Vec<Detection>,
    pub gts: Vec<BoxLabel>,
}

/// Matching outcome for one class across the dataset. Detections are
/// pooled over images and sorted by descending score; ties break by
/// (image index, detection index) so results never depend on input
/// shuffling.
pub struct ClassMatch {
    /// `(image index, detection index, true positive)` in score order.
    pub dets: Vec<(usize, usize, bool)>,
    pub n_gt: usize,
    /// Per image: which ground-truth boxes of this class were claimed.
    pub gt_matched: Vec<Vec<bool>>,
}

/// Greedy matching: each detection claims the highest-IoU still-unmatched
/// ground truth of its class when that IoU clears the threshold.
pub fn class_matches(pairs: &[ImageEval], class_id: usize, iou_thresh: f64) -> ClassMatch {
    let mut order: Vec<(usize, usize, f64)> = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        for (j, d) in p.dets.iter().enumerate() {
            if d.class_id == class_id {
                order.push((i, j, d.score));
            }
        }
    }
    order.sort_by(|a, b| {
        b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1))
    });

    let gt_idx: Vec<Vec<usize>> = pairs
        .iter()
        .map(|p| (0..p.gts.len()).filter(|&g| p.gts[g].class_id == class_id).collect())
        .collect();
    let n_gt = gt_idx.iter().map(|v| v.len()).sum();
    let mut gt_matched: Vec<Vec<bool>> = gt_idx.iter().map(|v| vec![false; v.len()]).collect();

    let mut dets = Vec::with_capacity(order.len());
    for (i, j, _) in order {
        let dbox = &pairs[i].dets[j].bbox;
        let mut best: Option<(usize, f64)> = None;
        for (k, &g) in gt_idx[i].iter().enumerate() {
            if gt_matched[i][k] {
                continue;
            }
            let v = iou(dbox, &pairs[i].gts[g].bbox);
            if best.map_or(true, |(_, bv)| v > bv) {
                best = Some((k, v));
            }
        }
        let tp = match best {
            Some((k, v)) if v >= iou_thresh => {
                gt_matched[i][k] = true;
                true
            }
            _ => false,
        };
        dets.push((i, j, tp));
    }
    ClassMatch { dets, n_gt, gt_matched }
}

/// Area under the all-point precision/recall curve.
pub fn ap_from_matches(tp: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut recalls = Vec::with_capacity(tp.len());
    let mut precisions = Vec::with_capacity(tp.len());
    let (mut tps, mut fps) = (0usize, 0usize);
    for &t in tp {
        if t {
            tps += 1;
        } else {
            fps += 1;
        }
        recalls.push(tps as f64 / n_gt as f64);
        precisions.push(tps as f64 / (tps + fps) as f64);
    }
    let mut ap = 0.0;
    let mut pmax = 0.0f64;
    for i in (0..tp.len()).rev() {
        pmax = pmax.max(precisions[i]);
        let dr = if i == 0 { recalls[0] } else { recalls[i] - recalls[i - 1] };
        ap += dr * pmax;
    }
    ap
}

pub struct MapResult {
    /// `None` for classes without ground truth; those are excluded.
    pub per_class: Vec<Option<f64>>,
    pub map: f64,
}

pub fn mean_ap(pairs: &[ImageEval], num_classes: usize, iou_thresh: f64) -> MapResult {
    let mut per_class = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let m = class_matches(pairs, c, iou_thresh);
        if m.n_gt == 0 {
            per_class.push(None);
        } else {
            let tp: Vec<bool> = m.dets.iter().map(|&(_, _, t)| t).collect();
            per_class.push(Some(ap_from_matches(&tp, m.n_gt)));
        }
    }
    let present: Vec<f64> = per_class.iter().filter_map(|x| *x).collect();
    let map = if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
    MapResult { per_class, map }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::PixelBox;

    fn det(class_id: usize, score: f64, b: (f64, f64, f64, f64)) -> Detection {
        Detection { class_id, score, bbox: PixelBox::new(b.0, b.1, b.2, b.3) }
    }

    fn gt(class_id: usize, b: (f64, f64, f64, f64)) -> BoxLabel {
        BoxLabel { class_id, bbox: PixelBox::new(b.0, b.1, b.2, b.3) }
    }

    fn one_image(dets: Vec<Detection>, gts: Vec<BoxLabel>) -> Vec<ImageEval> {
        vec![ImageEval { dets, gts }]
    }

    // Each case carries a hand-enumerated precision/recall area.
    #[test]
    fn ap_matches_hand_enumerated_curves() {
        let b = (0.0, 0.0, 10.0, 10.0);
        let far = (30.0, 30.0, 40.0, 40.0);
        let off = (8.0, 8.0, 18.0, 18.0); // iou vs b = 4/196 < 0.5

        // 1. one gt, one perfect detection: area 1
        let pairs = one_image(vec![det(0, 0.9, b)], vec![gt(0, b)]);
        assert!((mean_ap(&pairs, 1, 0.5).map - 1.0).abs() < 1e-9);

        // 2. fp at 0.9 then tp at 0.8: precision 1/2 over the whole recall axis
        let pairs = one_image(vec![det(0, 0.9, far), det(0, 0.8, b)], vec![gt(0, b)]);
        assert!((mean_ap(&pairs, 1, 0.5).map - 0.5).abs() < 1e-9);

        // 3. tp first, fp later: envelope keeps precision 1 up to full recall
        let pairs = one_image(vec![det(0, 0.9, b), det(0, 0.8, far)], vec![gt(0, b)]);
        assert!((mean_ap(&pairs, 1, 0.5).map - 1.0).abs() < 1e-9);

        // 4. two gts, one found: half the recall at precision 1
        let pairs = one_image(vec![det(0, 0.9, b)], vec![gt(0, b), gt(0, far)]);
        assert!((mean_ap(&pairs, 1, 0.5).map - 0.5).abs() < 1e-9);

        // 5. duplicate on a matched gt is a fp after the tp: area stays 1
        let pairs = one_image(
            vec![det(0, 0.9, b), det(0, 0.8, (1.0, 1.0, 11.0, 11.0))],
            vec![gt(0, b)],
        );
        assert!((mean_ap(&pairs, 1, 0.5).map - 1.0).abs() < 1e-9);

        // 6. tp, fp, tp over two gts: 0.5 * 1 + 0.5 * 2/3
        let pairs = one_image(
            vec![det(0, 0.9, b), det(0, 0.8, off), det(0, 0.7, far)],
            vec![gt(0, b), gt(0, far)],
        );
        assert!((mean_ap(&pairs, 1, 0.5).map - (0.5 + 1.0 / 3.0)).abs() < 1e-9);

        // 7. no detections at all
        let pairs = one_image(vec![], vec![gt(0, b)]);
        assert!(mean_ap(&pairs, 1, 0.5).map.abs() < 1e-9);

        // 8. iou below threshold only: every detection is a fp
        let pairs = one_image(vec![det(0, 0.9, off)], vec![gt(0, b)]);
        assert!(mean_ap(&pairs, 1, 0.5).map.abs() < 1e-9);

        // 9. two classes averaged: class 0 perfect, class 1 half
        let pairs = one_image(
            vec![det(0, 0.9, b), det(1, 0.9, far), det(1, 0.8, b)],
            vec![gt(0, b), gt(1, far), gt(1, (60.0, 60.0, 70.0, 70.0))],
        );
        // class 1: tp then fp over 2 gts: 0.5; mean(1.0, 0.5)
        assert!((mean_ap(&pairs, 2, 0.5).map - 0.75).abs() < 1e-9);

        // 10. class without gt is excluded, its fps cost nothing here
        let pairs = one_image(vec![det(0, 0.9, b), det(1, 0.95, far)], vec![gt(0, b)]);
        let r = mean_ap(&pairs, 2, 0.5);
        assert!(r.per_class[1].is_none());
        assert!((r.map - 1.0).abs() < 1e-9);

        // 11. two images, interleaved scores: fp at 0.9 (img 2), tps at
        // 0.95 and 0.8: points (0.5, 1), (0.5, 0.5), (1, 2/3)
        let pairs = vec![
            ImageEval { dets: vec![det(0, 0.95, b), det(0, 0.8, far)], gts: vec![gt(0, b), gt(0, far)] },
            ImageEval { dets: vec![det(0, 0.9, b)], gts: vec![] },
        ];
        assert!((mean_ap(&pairs, 1, 0.5).map - (0.5 + 1.0 / 3.0)).abs() < 1e-9);

        // 12. recall never reached 1: tail recall contributes nothing
        let pairs = one_image(
            vec![det(0, 0.9, b), det(0, 0.8, off)],
            vec![gt(0, b), gt(0, far), gt(0, (60.0, 60.0, 70.0, 70.0))],
        );
        // tp then fp over 3 gts: area = (1/3) * 1
        assert!((mean_ap(&pairs, 1, 0.5).map - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn score_scaling_leaves_ap_unchanged() {
        let b = (0.0, 0.0, 10.0, 10.0);
        let far = (30.0, 30.0, 40.0, 40.0);
        let off = (8.0, 8.0, 18.0, 18.0);
        let base = vec![
            det(0, 0.9, b),
            det(0, 0.6, off),
            det(1, 0.8, far),
            det(0, 0.3, far),
        ];
        let gts = vec![gt(0, b), gt(0, far), gt(1, far)];
        let before = mean_ap(&one_image(base.clone(), gts.clone()), 2, 0.5).map;
        let scaled: Vec<Detection> = base
            .iter()
            .map(|d| Detection { class_id: d.class_id, score: d.score * 0.37, bbox: d.bbox })
            .collect();
        let after = mean_ap(&one_image(scaled, gts), 2, 0.5).map;
        assert_eq!(before, after);
    }

    #[test]
    fn detection_prefers_highest_iou_unmatched_gt() {
        // one detection overlapping two gts; it must claim the closer one
        let d = det(0, 0.9, (0.0, 0.0, 10.0, 10.0));
        let g_near = gt(0, (1.0, 1.0, 11.0, 11.0));
        let g_far = gt(0, (4.0, 4.0, 14.0, 14.0));
        let pairs = one_image(vec![d], vec![g_far.clone(), g_near.clone()]);
        let m = class_matches(&pairs, 0, 0.5);
        assert_eq!(m.dets[0].2, true);
        // gt order in the image was (far, near): near (index 1) is taken
        assert_eq!(m.gt_matched[0], vec![false, true]);
    }

    #[test]
    fn perfect_predictions_give_exactly_one() {
        let mut pairs = Vec::new();
        for i in 0..4 {
            let shift = i as f64 * 3.0;
            let b0 = (shift, 0.0, shift + 10.0, 10.0);
            let b1 = (0.0, 30.0 + shift, 12.0, 44.0 + shift);
            pairs.push(ImageEval {
                dets: vec![det(0, 0.9, b0), det(1, 0.7, b1)],
                gts: vec![gt(0, b0), gt(1, b1)],
            });
        }
        let r = mean_ap(&pairs, 2, 0.5);
        assert_eq!(r.map, 1.0);
    }
}
