//! Detection metrics: mAP at a fixed IoU threshold and a six-category
//! error decomposition over false positives and missed objects.

pub mod ap;
pub mod curve;
pub mod tide;

pub use ap::{ap_from_matches, class_matches, mean_ap, ClassMatch, ImageEval, MapResult};
pub use curve::{iterations_curve, write_curve_csv, CurvePoint};
pub use tide::{tide_decompose, ErrorBreakdown, ERROR_NAMES};
