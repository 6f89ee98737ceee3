//! Variant registry. Each training variant is a strategy object selected by
//! its config name, so the CLI and tests never branch on variant strings.

use crate::detcore::DetectorConfig;
use crate::error::{Error, Result};
use crate::synthgen::AnnotatedImage;
use crate::train::checkpoint::Checkpoint;
use crate::train::config::{TrainConfig, VARIANT_NAMES};
use crate::train::episode::meta_pretrain;
use crate::train::multitask::{pretrain_multitask, TrainOutcome};

pub trait TrainStrategy {
    fn name(&self) -> &'static str;
    /// True when the stage must start from an earlier checkpoint.
    fn needs_warm_start(&self) -> bool;
    fn run(
        &self,
        train_set: &[AnnotatedImage],
        val_set: &[AnnotatedImage],
        det_cfg: &DetectorConfig,
        cfg: &TrainConfig,
        warm: Option<&Checkpoint>,
    ) -> Result<TrainOutcome>;
}

struct MultitaskStrategy {
    variant: &'static str,
}

impl TrainStrategy for MultitaskStrategy {
    fn name(&self) -> &'static str {
        self.variant
    }

    fn needs_warm_start(&self) -> bool {
        false
    }

    fn run(
        &self,
        train_set: &[AnnotatedImage],
        val_set: &[AnnotatedImage],
        det_cfg: &DetectorConfig,
        cfg: &TrainConfig,
        _warm: Option<&Checkpoint>,
    ) -> Result<TrainOutcome> {
        pretrain_multitask(train_set, val_set, det_cfg, cfg)
    }
}

struct MetaStrategy {
    variant: &'static str,
}

impl TrainStrategy for MetaStrategy {
    fn name(&self) -> &'static str {
        self.variant
    }

    fn needs_warm_start(&self) -> bool {
        true
    }

    fn run(
        &self,
        train_set: &[AnnotatedImage],
        val_set: &[AnnotatedImage],
        det_cfg: &DetectorConfig,
        cfg: &TrainConfig,
        warm: Option<&Checkpoint>,
    ) -> Result<TrainOutcome> {
        let warm = warm.ok_or_else(|| {
            Error::MissingInput(format!("variant '{}' needs a warm-start checkpoint (init)", self.variant))
        })?;
        if warm.det_config != *det_cfg {
            return Err(Error::Config(
                "detector config does not match the warm-start checkpoint".to_string(),
            ));
        }
        meta_pretrain(train_set, val_set, cfg, warm)
    }
}

pub fn strategy_for(variant: &str) -> Result<Box<dyn TrainStrategy>> {
    match variant {
        "baseline" => Ok(Box::new(MultitaskStrategy { variant: "baseline" })),
        "tran-baseline" => Ok(Box::new(MultitaskStrategy { variant: "tran-baseline" })),
        "oshot" => Ok(Box::new(MultitaskStrategy { variant: "oshot" })),
        "tran-oshot" => Ok(Box::new(MultitaskStrategy { variant: "tran-oshot" })),
        "meta-oshot" => Ok(Box::new(MetaStrategy { variant: "meta-oshot" })),
        "full-oshot" => Ok(Box::new(MetaStrategy { variant: "full-oshot" })),
        other => Err(Error::Config(format!("unknown variant '{other}' (known: {VARIANT_NAMES:?})"))),
    }
}
