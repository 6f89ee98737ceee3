//! mAP as a function of the adaptation iteration budget.

use std::path::Path;

use crate::adapt::adapt_sweep;
use crate::detcore::Detector;
use crate::error::Result;
use crate::evalkit::{mean_ap, ImageEval};
use crate::rng::substream;
use crate::rotself::RotHead;
use crate::synthgen::AnnotatedImage;

pub struct CurvePoint {
    pub gamma: usize,
    pub map50: f64,
    pub faults: usize,
}

/// Evaluate every requested gamma in one pass per image. Per-image
/// randomness is keyed the same way as batch prediction, so a curve point
/// reproduces a standalone run at that gamma.
pub fn iterations_curve(
    det0: &Detector,
    rot0: &RotHead,
    images: &[AnnotatedImage],
    gammas: &[usize],
    inner_lr: f64,
    pseudo_thresh: f64,
    seed: u64,
) -> Vec<CurvePoint> {
    let mut per_gamma: Vec<Vec<ImageEval>> = gammas.iter().map(|_| Vec::with_capacity(images.len())).collect();
    let mut faults = vec![0usize; gammas.len()];
    for img in images {
        let mut rng = substream(seed, &["adapt", &img.id]);
        let sweep = adapt_sweep(det0, rot0, &img.pixels, gammas, inner_lr, pseudo_thresh, &mut rng);
        for (slot, point) in sweep.points.into_iter().enumerate() {
            faults[slot] += usize::from(point.faulted);
            per_gamma[slot].push(ImageEval { dets: point.detections, gts: img.labels.clone() });
        }
    }
    let num_classes = det0.cfg.num_classes;
    gammas
        .iter()
        .zip(per_gamma.iter())
        .zip(faults.iter())
        .map(|((&gamma, pairs), &f)| CurvePoint {
            gamma,
            map50: mean_ap(pairs, num_classes, 0.5).map,
            faults: f,
        })
        .collect()
}

pub fn write_curve_csv(path: &Path, points: &[CurvePoint]) -> Result<()> {
    let mut out = String::from("gamma,mAP,faults\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.gamma, p.map50, p.faults));
    }
    std::fs::write(path, out)?;
    Ok(())
}
