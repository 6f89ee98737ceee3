use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv;

pub const VARIANT_NAMES: [&str; 6] =
    ["baseline", "tran-baseline", "oshot", "tran-oshot", "meta-oshot", "full-oshot"];

pub const META_GRAD_MODES: [&str; 2] = ["exact", "first-order"];

/// Everything the pretraining stage needs, expressible as flat key=value text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: String,
    pub lambda: f64,
    pub k: usize,
    pub eta: usize,
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub meta_grad_mode: String,
    pub lr: f64,
    /// Per-epoch multiplicative learning-rate decay; 1 disables it.
    pub lr_decay: f64,
    pub momentum: f64,
    pub pseudo_thresh: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: "oshot".to_string(),
            lambda: 0.05,
            k: 4,
            eta: 5,
            inner_lr: 1e-3,
            outer_lr: 1e-4,
            epochs: 20,
            batch_size: 1,
            seed: 7,
            meta_grad_mode: "exact".to_string(),
            lr: 0.02,
            lr_decay: 1.0,
            momentum: 0.9,
            pseudo_thresh: 0.8,
        }
    }
}

impl TrainConfig {
    pub fn is_meta(&self) -> bool {
        matches!(self.variant.as_str(), "meta-oshot" | "full-oshot")
    }

    /// Variants whose stage-one pretraining includes the weighted rotation term.
    pub fn trains_rot_head(&self) -> bool {
        matches!(self.variant.as_str(), "oshot" | "tran-oshot")
    }

    pub fn uses_augment(&self) -> bool {
        matches!(self.variant.as_str(), "tran-baseline" | "tran-oshot")
    }

    /// meta-oshot is defined as the single-episode ablation regardless of `k`.
    pub fn effective_k(&self) -> usize {
        if self.variant == "meta-oshot" {
            1
        } else {
            self.k
        }
    }

    pub fn apply_pairs(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (k, v) in kv::dedup_last(pairs) {
            match k.as_str() {
                "variant" => self.variant = v,
                "lambda" => self.lambda = kv::parse_field(&k, &v)?,
                "k" => self.k = kv::parse_field(&k, &v)?,
                "eta" => self.eta = kv::parse_field(&k, &v)?,
                "inner_lr" => self.inner_lr = kv::parse_field(&k, &v)?,
                "outer_lr" => self.outer_lr = kv::parse_field(&k, &v)?,
                "epochs" => self.epochs = kv::parse_field(&k, &v)?,
                "batch_size" => self.batch_size = kv::parse_field(&k, &v)?,
                "seed" => self.seed = kv::parse_field(&k, &v)?,
                "meta_grad_mode" => self.meta_grad_mode = v,
                "lr" => self.lr = kv::parse_field(&k, &v)?,
                "lr_decay" => self.lr_decay = kv::parse_field(&k, &v)?,
                "momentum" => self.momentum = kv::parse_field(&k, &v)?,
                "pseudo_thresh" => self.pseudo_thresh = kv::parse_field(&k, &v)?,
                _ => {
                    return Err(Error::Config(format!(
                        "unknown train config key '{k}' (known: variant lambda k eta inner_lr \
                         outer_lr epochs batch_size seed meta_grad_mode lr lr_decay momentum \
                         pseudo_thresh)"
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_pairs(pairs)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !VARIANT_NAMES.contains(&self.variant.as_str()) {
            problems.push(format!("variant '{}' not in {:?}", self.variant, VARIANT_NAMES));
        }
        if !META_GRAD_MODES.contains(&self.meta_grad_mode.as_str()) {
            problems.push(format!(
                "meta_grad_mode '{}' not in {:?}",
                self.meta_grad_mode, META_GRAD_MODES
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            problems.push(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if self.k == 0 {
            problems.push("k must be >= 1".to_string());
        }
        if self.epochs == 0 {
            problems.push("epochs must be >= 1".to_string());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be >= 1".to_string());
        }
        for (name, v) in [("inner_lr", self.inner_lr), ("outer_lr", self.outer_lr), ("lr", self.lr)] {
            if !(v > 0.0 && v.is_finite()) {
                problems.push(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            problems.push(format!("lr_decay must be in (0, 1], got {}", self.lr_decay));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            problems.push(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.pseudo_thresh > 0.0 && self.pseudo_thresh.is_finite()) {
            problems.push(format!("pseudo_thresh must be finite and > 0, got {}", self.pseudo_thresh));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}
