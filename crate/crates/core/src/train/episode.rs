//! Meta-learning stage: episodes over augmented source images.
//!
//! Each episode adapts a copy of (theta_f, theta_r) with `eta` pseudo-label
//! rotation steps, then measures the detection loss of the adapted features
//! on the same augmented image with its ground-truth labels. The gradient of
//! that outer loss w.r.t. the starting parameters flows back through the
//! unroll (see `meta`), and only (theta_f, theta_d) take the outer update.
//! theta_r is never stepped here: it leaves this stage exactly as the warm
//! start provided it.

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use rand::SeedableRng;

use crate::detcore::loss::{detection_loss, LossPlan};
use crate::detcore::params::{Flat, Reader};
use crate::detcore::Detector;
use crate::error::{Error, Result};
use crate::geom::PixelBox;
use crate::rng::substream;
use crate::rotself::{pseudo_label, rotation_loss, RotHead};
use crate::synthgen::{augment, episode_kinds, AnnotatedImage, BoxLabel};
use crate::train::checkpoint::{Checkpoint, MetricRow};
use crate::train::config::TrainConfig;
use crate::train::meta::{meta_gradient, BilevelTask, MetaGradMode};
use crate::train::multitask::{eval_map50, TrainOutcome};
use crate::train::optim::Sgd;

/// Bi-level task for one episode. `u = [theta_f | theta_r]`.
///
/// The pseudo-label and rotation draw of inner step `i` are sampled on the
/// first visit (during the forward unroll, at the current adapted
/// parameters) and cached, so the reverse sweep and any re-evaluation
/// differentiate the same detached objective. The task writes into the
/// borrowed detector and head; the caller restores persistent parameters
/// after the episode.
pub struct EpisodeTask<'a> {
    det: &'a mut Detector,
    rot: &'a mut RotHead,
    pixels: &'a Array3<f64>,
    labels: &'a [BoxLabel],
    pseudo_thresh: f64,
    // Separate streams so the number of inner draws can never shift the
    // outer plan sampling.
    q_rng: ChaCha12Rng,
    plan_rng: ChaCha12Rng,
    steps: Vec<(PixelBox, usize)>,
    nf: usize,
    nr: usize,
    /// Gradient of the outer loss w.r.t. theta_d, captured by `outer_grad`.
    pub outer_d: Option<Vec<f64>>,
    /// Frozen sampling decisions of the outer detection loss.
    pub last_plan: Option<LossPlan>,
}

impl<'a> EpisodeTask<'a> {
    pub fn new(
        det: &'a mut Detector,
        rot: &'a mut RotHead,
        pixels: &'a Array3<f64>,
        labels: &'a [BoxLabel],
        pseudo_thresh: f64,
        mut rng: ChaCha12Rng,
    ) -> EpisodeTask<'a> {
        let nf = det.theta_f_len();
        let nr = rot.flat_len();
        let q_rng = ChaCha12Rng::from_rng(&mut rng).expect("chacha reseed");
        let plan_rng = ChaCha12Rng::from_rng(&mut rng).expect("chacha reseed");
        EpisodeTask {
            det,
            rot,
            pixels,
            labels,
            pseudo_thresh,
            q_rng,
            plan_rng,
            steps: Vec::new(),
            nf,
            nr,
            outer_d: None,
            last_plan: None,
        }
    }

    fn install(&mut self, u: &[f64]) {
        self.det.set_theta_f(&u[..self.nf]);
        self.rot.read_flat(&mut Reader::new(&u[self.nf..]));
    }
}

impl BilevelTask for EpisodeTask<'_> {
    fn dim(&self) -> usize {
        self.nf + self.nr
    }

    fn inner_grad(
        &mut self,
        step: usize,
        u: &[f64],
        dir: Option<&[f64]>,
    ) -> Result<(f64, Vec<f64>, Option<Vec<f64>>)> {
        self.install(u);
        if self.steps.len() == step {
            let (pbox, _) = pseudo_label(self.det, self.pixels, self.pseudo_thresh);
            let q = self.q_rng.gen_range(0..crate::rotself::NUM_ROTATIONS);
            self.steps.push((pbox, q));
        }
        assert!(step < self.steps.len(), "inner steps must be visited in order");
        let (pbox, q) = self.steps[step];
        if let Some(d) = dir {
            self.det.set_theta_f_tangent(&d[..self.nf]);
            self.rot.set_tangent(&mut Reader::new(&d[self.nf..]));
        }
        let out = rotation_loss(self.det, self.rot, self.pixels, &[pbox], q);
        if dir.is_some() {
            self.det.clear_tangents();
            self.rot.clear_tangent();
        }
        let mut grad = out.grad_f;
        grad.extend_from_slice(&out.grad_r);
        let hv = match (out.grad_f_t, out.grad_r_t) {
            (Some(mut f), Some(r)) => {
                f.extend_from_slice(&r);
                Some(f)
            }
            _ => None,
        };
        Ok((out.loss, grad, hv))
    }

    fn outer_grad(&mut self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.install(u);
        let (loss, grads, plan) = detection_loss(self.det, self.pixels, self.labels, &mut self.plan_rng);
        self.outer_d = Some(grads.d);
        self.last_plan = Some(plan);
        let mut g = grads.f;
        g.extend(std::iter::repeat(0.0).take(self.nr));
        Ok((loss, g))
    }
}

pub fn meta_pretrain(
    train_set: &[AnnotatedImage],
    val_set: &[AnnotatedImage],
    cfg: &TrainConfig,
    warm: &Checkpoint,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if !cfg.is_meta() {
        return Err(Error::Config(format!("variant '{}' does not use meta pretraining", cfg.variant)));
    }
    if train_set.is_empty() {
        return Err(Error::MissingInput("meta pretraining got an empty training set".to_string()));
    }
    if !warm.rot_trained {
        return Err(Error::MissingInput(
            "meta pretraining needs a warm-start checkpoint with a trained rotation head".to_string(),
        ));
    }
    let mode = MetaGradMode::parse(&cfg.meta_grad_mode)?;
    let k = cfg.effective_k();
    let seed = cfg.seed;

    let (mut det, mut rot) = warm.build_model()?;
    let mut tf = det.theta_f();
    let mut td = det.theta_d();
    let mut tr = Vec::new();
    rot.write_flat(&mut tr);

    let mut opt_f = Sgd::new(tf.len(), cfg.outer_lr, 0.0);
    let mut opt_d = Sgd::new(td.len(), cfg.outer_lr, 0.0);

    let mut metric_log: Vec<MetricRow> = Vec::new();
    let mut snapshot = (tf.clone(), td.clone());
    let mut completed = 0usize;
    let mut faulted = false;

    'epochs: for e in 0..cfg.epochs {
        let ep = e.to_string();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut substream(seed, &["data", &ep]));

        let mut outer_sum = 0.0;
        let mut inner_sum = 0.0;
        let mut images = 0usize;
        for (s, &img_idx) in order.iter().enumerate() {
            let sp = s.to_string();
            let base = &train_set[img_idx];
            let mut arng = substream(seed, &["augment", &ep, &sp]);
            let kinds = episode_kinds(k, &mut arng);

            let mut u0 = tf.clone();
            u0.extend_from_slice(&tr);
            let mut gf = vec![0.0; tf.len()];
            let mut gd = vec![0.0; td.len()];
            let inv_k = 1.0 / kinds.len() as f64;
            for (kk, kind) in kinds.iter().enumerate() {
                let episode_img = augment(base, *kind, &mut arng);
                let erng = substream(seed, &["episode", &ep, &sp, &kk.to_string()]);
                let mut task =
                    EpisodeTask::new(&mut det, &mut rot, &episode_img.pixels, &episode_img.labels, cfg.pseudo_thresh, erng);
                let res = match meta_gradient(&mut task, &u0, cfg.eta, cfg.inner_lr, mode) {
                    Ok(r) => r,
                    Err(Error::TrainingFault(_)) => {
                        faulted = true;
                        break 'epochs;
                    }
                    Err(other) => return Err(other),
                };
                let outer_d = task.outer_d.take().expect("outer_grad ran");
                det.set_theta_f(&tf);
                rot.read_flat(&mut Reader::new(&tr));
                for i in 0..gf.len() {
                    gf[i] += inv_k * res.grad_u0[i];
                }
                for i in 0..gd.len() {
                    gd[i] += inv_k * outer_d[i];
                }
                outer_sum += inv_k * res.outer_loss;
                inner_sum += inv_k * res.inner_losses.last().copied().unwrap_or(0.0);
            }
            opt_f.step(&mut tf, &gf);
            opt_d.step(&mut td, &gd);
            det.set_theta_f(&tf);
            det.set_theta_d(&td);
            images += 1;
        }

        if tf.iter().chain(td.iter()).any(|v| !v.is_finite()) {
            faulted = true;
            break 'epochs;
        }
        let n = images.max(1) as f64;
        let map = if val_set.is_empty() { None } else { Some(eval_map50(&det, val_set)) };
        metric_log.push(MetricRow {
            epoch: e,
            split: "train".to_string(),
            l_d: outer_sum / n,
            l_r: inner_sum / n,
            map,
        });
        snapshot = (tf.clone(), td.clone());
        completed = e + 1;
    }

    if faulted {
        let (sf, sd) = snapshot;
        det.set_theta_f(&sf);
        det.set_theta_d(&sd);
        rot.read_flat(&mut Reader::new(&tr));
        metric_log.truncate(completed);
    }

    let checkpoint = Checkpoint::from_model(&det, &rot, cfg, completed, true, metric_log);
    Ok(TrainOutcome { checkpoint, faulted })
}
