pub mod checkpoint;
pub mod config;
pub mod episode;
pub mod meta;
pub mod multitask;
pub mod optim;
pub mod variants;

pub use checkpoint::{Checkpoint, MetricRow};
pub use config::{TrainConfig, VARIANT_NAMES};
pub use episode::meta_pretrain;
pub use meta::{meta_gradient, BilevelTask, MetaGradMode, MetaResult};
pub use multitask::{eval_map50, pretrain_multitask, TrainOutcome};
pub use variants::{strategy_for, TrainStrategy};
