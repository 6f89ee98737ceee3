//! Test-time adaptation: a few self-supervised rotation steps per image.
//!
//! Each image gets fresh copies of (theta_f, theta_r) from the pretrained
//! model. One iteration recomputes the pseudo-label on the current adapted
//! features, draws a rotation, takes one gradient step on the rotation loss,
//! and logs the step. theta_d is never written. A numerical fault restores
//! the unadapted copies and flags the image instead of aborting the run.

use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::detcore::heads::{detect, Detection};
use crate::detcore::params::{Flat, Reader};
use crate::detcore::Detector;
use crate::error::Result;
use crate::geom::PixelBox;
use crate::rng::substream;
use crate::rotself::{pseudo_label, rotation_loss, RotHead, NUM_ROTATIONS};
use crate::synthgen::AnnotatedImage;
use crate::train::optim::sgd_step;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdaptConfig {
    /// Number of adaptation iterations (gamma).
    pub gamma: usize,
    pub inner_lr: f64,
    pub pseudo_thresh: f64,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig { gamma: 5, inner_lr: 1e-3, pseudo_thresh: 0.8, seed: 7 }
    }
}

#[derive(Clone, Debug)]
pub struct TraceEntry {
    pub rot_loss: f64,
    pub pseudo_box: PixelBox,
    /// True when no detection cleared the threshold and the full-image box
    /// was used instead.
    pub fallback: bool,
    pub q: usize,
}

pub struct SweepPoint {
    pub gamma: usize,
    pub detections: Vec<Detection>,
    pub faulted: bool,
}

pub struct SweepResult {
    /// One point per requested gamma, ascending.
    pub points: Vec<SweepPoint>,
    /// Model state after the largest gamma (unadapted copies on fault).
    pub det: Detector,
    pub rot: RotHead,
    pub trace: Vec<TraceEntry>,
    pub faulted: bool,
}

/// Adapt once and snapshot detections at every requested iteration count.
/// The rotation draw at iteration t does not depend on which snapshots are
/// taken, so one sweep produces exactly what separate runs at each gamma
/// would. `gammas` must be ascending.
pub fn adapt_sweep(
    det0: &Detector,
    rot0: &RotHead,
    pixels: &Array3<f64>,
    gammas: &[usize],
    inner_lr: f64,
    pseudo_thresh: f64,
    rng: &mut ChaCha12Rng,
) -> SweepResult {
    assert!(gammas.windows(2).all(|w| w[0] < w[1]), "gammas must be strictly ascending");
    let mut det = det0.clone();
    let mut rot = rot0.clone();
    let mut tf = det.theta_f();
    let mut tr = Vec::new();
    rot.write_flat(&mut tr);

    let max_gamma = gammas.last().copied().unwrap_or(0);
    let mut points: Vec<SweepPoint> = Vec::with_capacity(gammas.len());
    let mut trace: Vec<TraceEntry> = Vec::with_capacity(max_gamma);
    let mut next = gammas.iter().copied().peekable();
    let mut faulted = false;

    for t in 0..max_gamma {
        if next.peek() == Some(&t) {
            points.push(SweepPoint { gamma: t, detections: detect(&det, pixels), faulted: false });
            next.next();
        }
        let (pbox, fallback) = pseudo_label(&det, pixels, pseudo_thresh);
        let q = rng.gen_range(0..NUM_ROTATIONS);
        let out = rotation_loss(&det, &rot, pixels, &[pbox], q);
        if !out.loss.is_finite()
            || out.grad_f.iter().any(|v| !v.is_finite())
            || out.grad_r.iter().any(|v| !v.is_finite())
        {
            faulted = true;
            break;
        }
        sgd_step(&mut tf, &out.grad_f, inner_lr);
        sgd_step(&mut tr, &out.grad_r, inner_lr);
        if tf.iter().chain(tr.iter()).any(|v| !v.is_finite()) {
            faulted = true;
            break;
        }
        det.set_theta_f(&tf);
        rot.read_flat(&mut Reader::new(&tr));
        trace.push(TraceEntry { rot_loss: out.loss, pseudo_box: pbox, fallback, q });
    }

    if faulted {
        det = det0.clone();
        rot = rot0.clone();
    }
    for g in next {
        points.push(SweepPoint { gamma: g, detections: detect(&det, pixels), faulted });
    }
    SweepResult { points, det, rot, trace, faulted }
}

pub struct Adapted {
    pub det: Detector,
    pub rot: RotHead,
    pub detections: Vec<Detection>,
    pub trace: Vec<TraceEntry>,
    pub faulted: bool,
}

/// Adapt copies of the model on one unlabeled image and detect.
pub fn adapt_image(
    det0: &Detector,
    rot0: &RotHead,
    pixels: &Array3<f64>,
    gamma: usize,
    inner_lr: f64,
    pseudo_thresh: f64,
    rng: &mut ChaCha12Rng,
) -> Adapted {
    let mut sweep = adapt_sweep(det0, rot0, pixels, &[gamma], inner_lr, pseudo_thresh, rng);
    let point = sweep.points.pop().expect("one point per requested gamma");
    Adapted {
        det: sweep.det,
        rot: sweep.rot,
        detections: point.detections,
        trace: sweep.trace,
        faulted: sweep.faulted,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct DetRecord {
    class: usize,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    score: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct PredRecord {
    image_id: String,
    detections: Vec<DetRecord>,
    gamma: usize,
    rot_loss_trace: Vec<f64>,
    faulted: bool,
}

#[derive(Clone, Debug)]
pub struct ImagePrediction {
    pub image_id: String,
    pub detections: Vec<Detection>,
    pub gamma: usize,
    pub rot_loss_trace: Vec<f64>,
    pub faulted: bool,
}

/// Adapt and predict every image independently from the same starting model.
/// Per-image randomness is keyed by image id, so order and subset selection
/// cannot change any single image's outcome.
pub fn adapt_batch(
    det0: &Detector,
    rot0: &RotHead,
    images: &[AnnotatedImage],
    cfg: &AdaptConfig,
) -> Vec<ImagePrediction> {
    images
        .iter()
        .map(|img| {
            let mut rng = substream(cfg.seed, &["adapt", &img.id]);
            let a = adapt_image(det0, rot0, &img.pixels, cfg.gamma, cfg.inner_lr, cfg.pseudo_thresh, &mut rng);
            ImagePrediction {
                image_id: img.id.clone(),
                detections: a.detections,
                gamma: cfg.gamma,
                rot_loss_trace: a.trace.iter().map(|t| t.rot_loss).collect(),
                faulted: a.faulted,
            }
        })
        .collect()
}

pub fn write_predictions(path: &std::path::Path, preds: &[ImagePrediction]) -> Result<()> {
    let mut out = String::new();
    for p in preds {
        let rec = PredRecord {
            image_id: p.image_id.clone(),
            detections: p
                .detections
                .iter()
                .map(|d| DetRecord {
                    class: d.class_id,
                    x1: d.bbox.x1,
                    y1: d.bbox.y1,
                    x2: d.bbox.x2,
                    y2: d.bbox.y2,
                    score: d.score,
                })
                .collect(),
            gamma: p.gamma,
            rot_loss_trace: p.rot_loss_trace.clone(),
            faulted: p.faulted,
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_predictions(path: &std::path::Path) -> Result<Vec<ImagePrediction>> {
    if !path.exists() {
        return Err(crate::error::Error::MissingInput(format!("predictions not found: {}", path.display())));
    }
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let rec: PredRecord = serde_json::from_str(line)?;
        out.push(ImagePrediction {
            image_id: rec.image_id,
            detections: rec
                .detections
                .iter()
                .map(|d| Detection {
                    class_id: d.class,
                    score: d.score,
                    bbox: PixelBox::new(d.x1, d.y1, d.x2, d.y2),
                })
                .collect(),
            gamma: rec.gamma,
            rot_loss_trace: rec.rot_loss_trace,
            faulted: rec.faulted,
        });
    }
    Ok(out)
}
