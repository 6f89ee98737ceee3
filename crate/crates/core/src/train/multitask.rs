//! Stage-one pretraining: joint detection plus weighted rotation loss.
//!
//! Every step draws one ground-truth instance and one rotation uniformly for
//! the auxiliary term. All randomness comes from substreams keyed by
//! (purpose, epoch, step), so disabling one branch never shifts another:
//! with lambda = 0 the detection trajectory of an oshot run matches the
//! baseline variant bit for bit.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::detcore::heads::detect;
use crate::detcore::loss::detection_loss;
use crate::detcore::params::{Flat, Reader};
use crate::detcore::{Detector, DetectorConfig};
use crate::error::{Error, Result};
use crate::evalkit::{mean_ap, ImageEval};
use crate::rng::substream;
use crate::rotself::{rotation_loss, RotHead};
use crate::synthgen::{augment, AnnotatedImage, TRAIN_CATALOGUE};
use crate::train::checkpoint::{Checkpoint, MetricRow};
use crate::train::config::TrainConfig;
use crate::train::optim::Sgd;

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// True when training hit a numerical fault and the checkpoint holds the
    /// last finished epoch instead of the requested one.
    pub faulted: bool,
}

/// mAP at IoU 0.5 of the current detector over a labelled set.
pub fn eval_map50(det: &Detector, images: &[AnnotatedImage]) -> f64 {
    let pairs: Vec<ImageEval> = images
        .iter()
        .map(|img| ImageEval { dets: detect(det, &img.pixels), gts: img.labels.clone() })
        .collect();
    mean_ap(&pairs, det.cfg.num_classes, 0.5).map
}

struct EpochStats {
    ld_sum: f64,
    lr_sum: f64,
    steps: usize,
}

pub fn pretrain_multitask(
    train_set: &[AnnotatedImage],
    val_set: &[AnnotatedImage],
    det_cfg: &DetectorConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.is_meta() {
        return Err(Error::Config(format!(
            "variant '{}' needs meta pretraining, not the multitask stage",
            cfg.variant
        )));
    }
    if train_set.is_empty() {
        return Err(Error::MissingInput("multitask pretraining got an empty training set".to_string()));
    }

    let seed = cfg.seed;
    let mut det = Detector::new(det_cfg.clone(), &mut substream(seed, &["init"]))?;
    let mut rot = RotHead::new(det_cfg.pooled_len());
    let train_rot = cfg.trains_rot_head();

    let mut tf = det.theta_f();
    let mut td = det.theta_d();
    let mut tr = vec![0.0; rot.flat_len()];
    let mut opt_f = Sgd::new(tf.len(), cfg.lr, cfg.momentum);
    let mut opt_d = Sgd::new(td.len(), cfg.lr, cfg.momentum);
    let mut opt_r = Sgd::new(tr.len(), cfg.lr, cfg.momentum);

    let mut metric_log: Vec<MetricRow> = Vec::new();
    let mut snapshot = (tf.clone(), td.clone(), tr.clone());
    let mut completed = 0usize;
    let mut faulted = false;

    'epochs: for e in 0..cfg.epochs {
        let ep = e.to_string();
        let lr_e = cfg.lr * cfg.lr_decay.powi(e as i32);
        opt_f.lr = lr_e;
        opt_d.lr = lr_e;
        opt_r.lr = lr_e;
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut substream(seed, &["data", &ep]));

        let mut stats = EpochStats { ld_sum: 0.0, lr_sum: 0.0, steps: 0 };
        let mut step = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut gf = vec![0.0; tf.len()];
            let mut gd = vec![0.0; td.len()];
            let mut gr = vec![0.0; tr.len()];
            for &img_idx in chunk {
                let sp = step.to_string();
                let base = &train_set[img_idx];
                let augmented;
                let image = if cfg.uses_augment() {
                    let mut arng = substream(seed, &["augment", &ep, &sp]);
                    let kind = TRAIN_CATALOGUE[arng.gen_range(0..TRAIN_CATALOGUE.len())];
                    augmented = augment(base, kind, &mut arng);
                    &augmented
                } else {
                    base
                };

                let mut plan_rng = substream(seed, &["plan", &ep, &sp]);
                let (ld, dgrads, _) = detection_loss(&det, &image.pixels, &image.labels, &mut plan_rng);
                let mut lr_loss = 0.0;
                if train_rot && !image.labels.is_empty() {
                    let mut rrng = substream(seed, &["rot-draw", &ep, &sp]);
                    let inst = image.labels[rrng.gen_range(0..image.labels.len())].bbox;
                    let q = rrng.gen_range(0..4usize);
                    let out = rotation_loss(&det, &rot, &image.pixels, &[inst], q);
                    lr_loss = out.loss;
                    for i in 0..gf.len() {
                        gf[i] += cfg.lambda * out.grad_f[i];
                    }
                    for i in 0..gr.len() {
                        gr[i] += cfg.lambda * out.grad_r[i];
                    }
                }
                if !ld.is_finite() || !lr_loss.is_finite() {
                    faulted = true;
                    break 'epochs;
                }
                for i in 0..gf.len() {
                    gf[i] += dgrads.f[i];
                }
                for i in 0..gd.len() {
                    gd[i] += dgrads.d[i];
                }
                stats.ld_sum += ld;
                stats.lr_sum += lr_loss;
                stats.steps += 1;
                step += 1;
            }
            let inv = 1.0 / chunk.len() as f64;
            for g in gf.iter_mut() {
                *g *= inv;
            }
            for g in gd.iter_mut() {
                *g *= inv;
            }
            opt_f.step(&mut tf, &gf);
            opt_d.step(&mut td, &gd);
            if train_rot {
                for g in gr.iter_mut() {
                    *g *= inv;
                }
                opt_r.step(&mut tr, &gr);
                rot.read_flat(&mut Reader::new(&tr));
            }
            det.set_theta_f(&tf);
            det.set_theta_d(&td);
        }

        if tf.iter().chain(td.iter()).chain(tr.iter()).any(|v| !v.is_finite()) {
            faulted = true;
            break 'epochs;
        }

        let n = stats.steps.max(1) as f64;
        let map = if val_set.is_empty() { None } else { Some(eval_map50(&det, val_set)) };
        metric_log.push(MetricRow {
            epoch: e,
            split: "train".to_string(),
            l_d: stats.ld_sum / n,
            l_r: stats.lr_sum / n,
            map,
        });
        snapshot = (tf.clone(), td.clone(), tr.clone());
        completed = e + 1;
    }

    if faulted {
        let (sf, sd, sr) = snapshot;
        det.set_theta_f(&sf);
        det.set_theta_d(&sd);
        rot.read_flat(&mut Reader::new(&sr));
        metric_log.truncate(completed);
    }

    let checkpoint = Checkpoint::from_model(&det, &rot, cfg, completed, train_rot, metric_log);
    Ok(TrainOutcome { checkpoint, faulted })
}
