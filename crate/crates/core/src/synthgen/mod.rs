//! Synthetic benchmark generation: scenes, domain shifts, augmentations,
//! quarter-turn rotations, and dataset disk IO.

pub mod augment;
pub mod dataset;
pub mod rotate;
pub mod scene;
pub mod shift;

pub use augment::{augment, episode_kinds, AugmentKind, EPISODE_CATALOGUE, TRAIN_CATALOGUE};
pub use dataset::{dir_checksum, load_domain, read_meta, write_domain};
pub use rotate::{rotate, rotate_box, rotate_chw, rotate_index};
pub use scene::{generate_scene, AnnotatedImage, BoxLabel, OrientationCue, SceneSpec, CLASS_NAMES};
pub use shift::{apply_domain_shift, parse_transform, DomainSpec, ShiftTransform, TRANSFORM_NAMES};
