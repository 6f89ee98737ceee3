//! Six-category error decomposition.
//!
//! Every false positive lands in exactly one of {Cls, Loc, Both, Dupe,
//! Bkg}; Miss counts ground truth that no detection comes near. The
//! priority order below makes the categories mutually exclusive:
//! a false positive with same-class IoU >= 0.5 can only be a duplicate,
//! because matching would otherwise have made it a true positive.

use super::ap::{class_matches, mean_ap, ImageEval};
use crate::detcore::iou;

pub const ERROR_NAMES: [&str; 6] = ["cls", "loc", "both", "dupe", "bkg", "miss"];

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorBreakdown {
    pub map50: f64,
    pub cls: usize,
    pub loc: usize,
    pub both: usize,
    pub dupe: usize,
    pub bkg: usize,
    pub miss: usize,
    pub fp_count: usize,
    pub fn_count: usize,
}

impl ErrorBreakdown {
    pub fn counts(&self) -> [usize; 6] {
        [self.cls, self.loc, self.both, self.dupe, self.bkg, self.miss]
    }

    /// Counts normalized by the total number of errors.
    pub fn shares(&self) -> [f64; 6] {
        let total: usize = self.counts().iter().sum();
        if total == 0 {
            return [0.0; 6];
        }
        self.counts().map(|c| c as f64 / total as f64)
    }
}

/// `fg_iou` separates good localization from bad (0.5), `bkg_iou` is the
/// floor below which an overlap does not count at all (0.1).
pub fn tide_decompose(
    pairs: &[ImageEval],
    num_classes: usize,
    fg_iou: f64,
    bkg_iou: f64,
) -> ErrorBreakdown {
    let map50 = mean_ap(pairs, num_classes, fg_iou).map;

    // matching verdicts per class
    let mut tp_flags: Vec<Vec<bool>> = pairs.iter().map(|p| vec![false; p.dets.len()]).collect();
    let mut gt_claimed: Vec<Vec<bool>> = pairs.iter().map(|p| vec![false; p.gts.len()]).collect();
    for c in 0..num_classes {
        let m = class_matches(pairs, c, fg_iou);
        for &(i, j, tp) in &m.dets {
            tp_flags[i][j] = tp;
        }
        for (i, p) in pairs.iter().enumerate() {
            let idx: Vec<usize> = (0..p.gts.len()).filter(|&g| p.gts[g].class_id == c).collect();
            for (k, &g) in idx.iter().enumerate() {
                if m.gt_matched[i][k] {
                    gt_claimed[i][g] = true;
                }
            }
        }
    }

    let (mut cls, mut loc, mut both, mut dupe, mut bkg) = (0, 0, 0, 0, 0);
    let mut fp_count = 0;
    for (i, p) in pairs.iter().enumerate() {
        for (j, d) in p.dets.iter().enumerate() {
            if tp_flags[i][j] {
                continue;
            }
            fp_count += 1;
            let mut iou_same = 0.0f64;
            let mut iou_other = 0.0f64;
            for g in &p.gts {
                let v = iou(&d.bbox, &g.bbox);
                if g.class_id == d.class_id {
                    iou_same = iou_same.max(v);
                } else {
                    iou_other = iou_other.max(v);
                }
            }
            if iou_same >= fg_iou {
                dupe += 1;
            } else if iou_other >= fg_iou {
                cls += 1;
            } else if iou_same >= bkg_iou {
                loc += 1;
            } else if iou_other >= bkg_iou {
                both += 1;
            } else {
                bkg += 1;
            }
        }
    }

    let mut miss = 0;
    let mut fn_count = 0;
    for (i, p) in pairs.iter().enumerate() {
        for (g, label) in p.gts.iter().enumerate() {
            if gt_claimed[i][g] {
                continue;
            }
            fn_count += 1;
            let near = p.dets.iter().any(|d| iou(&d.bbox, &label.bbox) >= bkg_iou);
            if !near {
                miss += 1;
            }
        }
    }

    ErrorBreakdown { map50, cls, loc, both, dupe, bkg, miss, fp_count, fn_count }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detcore::Detection;
    use crate::geom::PixelBox;
    use crate::synthgen::BoxLabel;

    fn det(class_id: usize, score: f64, b: (f64, f64, f64, f64)) -> Detection {
        Detection { class_id, score, bbox: PixelBox::new(b.0, b.1, b.2, b.3) }
    }

    fn gt(class_id: usize, b: (f64, f64, f64, f64)) -> BoxLabel {
        BoxLabel { class_id, bbox: PixelBox::new(b.0, b.1, b.2, b.3) }
    }

    /// One crafted scene triggers each category exactly once.
    #[test]
    fn six_case_scene_hits_every_category_once() {
        let g0 = (0.0, 0.0, 10.0, 10.0);
        let g1 = (30.0, 30.0, 40.0, 40.0);
        let g2 = (60.0, 60.0, 70.0, 70.0);
        let gts = vec![gt(0, g0), gt(1, g1), gt(0, g2)];
        let dets = vec![
            // true positive on g0
            det(0, 0.95, g0),
            // duplicate: same class, iou 81/119 with the claimed g0
            det(0, 0.90, (1.0, 1.0, 11.0, 11.0)),
            // wrong class on a well-localized object: iou 1.0 with g1
            det(0, 0.85, g1),
            // right class, poor box: iou vs g1 = 28/172
            det(1, 0.80, (33.0, 36.0, 43.0, 46.0)),
            // wrong class and poor box: iou vs g0 = 64/136
            det(1, 0.75, (2.0, 2.0, 12.0, 12.0)),
            // background: overlaps nothing
            det(2, 0.50, (80.0, 80.0, 90.0, 90.0)),
        ];
        let pairs = vec![ImageEval { dets, gts }];
        let b = tide_decompose(&pairs, 3, 0.5, 0.1);
        assert_eq!(
            (b.cls, b.loc, b.both, b.dupe, b.bkg, b.miss),
            (1, 1, 1, 1, 1, 1),
            "breakdown {b:?}"
        );
        assert_eq!(b.fp_count, 5);
        // g1 (poorly localized) and g2 (never seen) are the false negatives
        assert_eq!(b.fn_count, 2);
        let shares = b.shares();
        assert!((shares.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(shares.iter().all(|&s| (s - 1.0 / 6.0).abs() < 1e-12));
    }

    #[test]
    fn perfect_predictions_have_no_errors() {
        let g0 = (0.0, 0.0, 10.0, 10.0);
        let g1 = (30.0, 30.0, 40.0, 40.0);
        let pairs = vec![ImageEval {
            dets: vec![det(0, 0.9, g0), det(1, 0.8, g1)],
            gts: vec![gt(0, g0), gt(1, g1)],
        }];
        let b = tide_decompose(&pairs, 2, 0.5, 0.1);
        assert_eq!(b.counts(), [0; 6]);
        assert_eq!(b.fp_count, 0);
        assert_eq!(b.fn_count, 0);
        assert_eq!(b.map50, 1.0);
        assert_eq!(b.shares(), [0.0; 6]);
    }

    #[test]
    fn miss_requires_no_nearby_detection_of_any_class() {
        let g0 = (0.0, 0.0, 10.0, 10.0);
        // a wrong-class detection overlapping 0.47 explains the miss away
        let pairs = vec![ImageEval {
            dets: vec![det(1, 0.9, (2.0, 2.0, 12.0, 12.0))],
            gts: vec![gt(0, g0)],
        }];
        let b = tide_decompose(&pairs, 2, 0.5, 0.1);
        assert_eq!(b.miss, 0);
        assert_eq!(b.fn_count, 1);
        assert_eq!(b.both, 1);

        // without it the gt is a miss
        let pairs = vec![ImageEval { dets: vec![], gts: vec![gt(0, g0)] }];
        let b = tide_decompose(&pairs, 2, 0.5, 0.1);
        assert_eq!(b.miss, 1);
        assert_eq!(b.fn_count, 1);
    }

    #[test]
    fn boundary_ious_fall_on_the_documented_side() {
        let g0 = (0.0, 0.0, 10.0, 10.0);
        // same class, iou exactly 1/3 (in [0.1, 0.5)): loc
        let pairs = vec![ImageEval {
            dets: vec![det(0, 0.9, (5.0, 0.0, 15.0, 10.0))],
            gts: vec![gt(0, g0)],
        }];
        let b = tide_decompose(&pairs, 1, 0.5, 1.0 / 3.0);
        // bkg floor set exactly at the overlap: >= keeps it a loc error
        assert_eq!((b.loc, b.bkg), (1, 0));
    }

    #[test]
    fn score_scaling_leaves_decomposition_unchanged() {
        let g0 = (0.0, 0.0, 10.0, 10.0);
        let g1 = (30.0, 30.0, 40.0, 40.0);
        let dets = vec![
            det(0, 0.9, g0),
            det(0, 0.8, (1.0, 1.0, 11.0, 11.0)),
            det(1, 0.7, (33.0, 36.0, 43.0, 46.0)),
        ];
        let gts = vec![gt(0, g0), gt(1, g1)];
        let before = tide_decompose(&[ImageEval { dets: dets.clone(), gts: gts.clone() }], 2, 0.5, 0.1);
        let scaled: Vec<Detection> = dets
            .iter()
            .map(|d| Detection { class_id: d.class_id, score: d.score * 2.5, bbox: d.bbox })
            .collect();
        let after = tide_decompose(&[ImageEval { dets: scaled, gts }], 2, 0.5, 0.1);
        assert_eq!(before, after);
    }
}
