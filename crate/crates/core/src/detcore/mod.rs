//! Two-stage detector: conv backbone, region proposal head, box head.
//!
//! Everything here is written for single images (no batch axis). The
//! backbone is the shared feature extractor group `theta_f`; the RPN and
//! box head together form `theta_d`. Both groups flatten to plain `f64`
//! vectors in a fixed layer order (see `params`).

pub mod backbone;
pub mod heads;
pub mod loss;
pub mod nms;
pub mod params;

pub use backbone::{Backbone, BackboneGrads};
pub use heads::{
    anchor_boxes, decode_box, encode_box, detect, detect_on_features, extract_features,
    propose_regions, Detection, RoiGrads, RoiHead, RpnGrads, RpnHead,
};
pub use loss::{detection_loss, detection_loss_value, DetGrads, LossPlan, RoiSample};
pub use nms::nms;
pub use params::{Flat, Reader};

use crate::error::{Error, Result};
use crate::geom::PixelBox;
use crate::nn::pool::CellRect;
use ndarray::Array3;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Images are square `image_size x image_size`.
    pub image_size: usize,
    /// Foreground classes; background gets index `num_classes` in the box head.
    pub num_classes: usize,
    pub channels: Vec<usize>,
    pub block_strides: Vec<usize>,
    pub gn_groups: usize,
    /// Anchor side length at ratio 1, in pixels.
    pub anchor_scales: Vec<f64>,
    /// Height/width ratios.
    pub anchor_ratios: Vec<f64>,
    pub rpn_nms_iou: f64,
    pub rpn_train_topn: usize,
    pub rpn_eval_topn: usize,
    pub roi_pool: usize,
    pub roi_fc: usize,
    pub cls_nms_iou: f64,
    pub eval_score_thresh: f64,
    pub anchor_pos_iou: f64,
    pub anchor_neg_iou: f64,
    pub roi_pos_iou: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            image_size: 96,
            num_classes: crate::synthgen::CLASS_NAMES.len(),
            channels: vec![12, 16, 24, 32, 48, 48],
            block_strides: vec![1, 2, 1, 2, 1, 2],
            gn_groups: 4,
            anchor_scales: vec![16.0, 28.0, 44.0],
            anchor_ratios: vec![1.0, 0.5],
            rpn_nms_iou: 0.7,
            rpn_train_topn: 64,
            rpn_eval_topn: 32,
            roi_pool: 5,
            roi_fc: 64,
            cls_nms_iou: 0.5,
            eval_score_thresh: 0.05,
            anchor_pos_iou: 0.5,
            anchor_neg_iou: 0.3,
            roi_pos_iou: 0.5,
        }
    }
}

impl DetectorConfig {
    pub fn stride(&self) -> usize {
        self.block_strides.iter().product()
    }

    pub fn num_anchors(&self) -> usize {
        self.anchor_scales.len() * self.anchor_ratios.len()
    }

    pub fn feat_hw(&self) -> (usize, usize) {
        let s = self.stride();
        (self.image_size / s, self.image_size / s)
    }

    pub fn feat_channels(&self) -> usize {
        *self.channels.last().expect("channels must be non-empty")
    }

    /// Flattened size of one pooled roi patch, input width of the box and
    /// rotation heads.
    pub fn pooled_len(&self) -> usize {
        self.feat_channels() * self.roi_pool * self.roi_pool
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.channels.is_empty() || self.channels.len() != self.block_strides.len() {
            problems.push("channels and block_strides must be non-empty and equal length".to_string());
        }
        for (i, c) in self.channels.iter().enumerate() {
            if c % self.gn_groups != 0 {
                problems.push(format!("channels[{i}]={c} not divisible by gn_groups={}", self.gn_groups));
            }
        }
        let s = self.stride();
        if s == 0 || self.image_size % s != 0 {
            problems.push(format!("image_size={} must be divisible by stride={s}", self.image_size));
        }
        if self.anchor_scales.is_empty() || self.anchor_ratios.is_empty() {
            problems.push("need at least one anchor scale and ratio".to_string());
        }
        if self.anchor_neg_iou >= self.anchor_pos_iou {
            problems.push("anchor_neg_iou must be below anchor_pos_iou".to_string());
        }
        if self.num_classes == 0 {
            problems.push("num_classes must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Backbone output plus the geometry needed to map boxes onto it.
pub struct FeatureMap {
    /// `(C, Hf, Wf)`
    pub values: Array3<f64>,
    pub stride: usize,
    pub image_h: usize,
    pub image_w: usize,
}

#[derive(Clone)]
pub struct Detector {
    pub cfg: DetectorConfig,
    pub backbone: Backbone,
    pub rpn: RpnHead,
    pub roi: RoiHead,
}

impl Detector {
    pub fn new(cfg: DetectorConfig, rng: &mut ChaCha12Rng) -> Result<Detector> {
        cfg.validate()?;
        let backbone = Backbone::new(&cfg, rng);
        let rpn = RpnHead::new(&cfg, rng);
        let roi = RoiHead::new(&cfg, rng);
        Ok(Detector { cfg, backbone, rpn, roi })
    }

    pub fn theta_f_len(&self) -> usize {
        self.backbone.flat_len()
    }

    pub fn theta_d_len(&self) -> usize {
        self.rpn.flat_len() + self.roi.flat_len()
    }

    pub fn theta_f(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.theta_f_len());
        self.backbone.write_flat(&mut out);
        out
    }

    pub fn set_theta_f(&mut self, flat: &[f64]) {
        let mut r = Reader::new(flat);
        self.backbone.read_flat(&mut r);
        r.finish();
    }

    /// RPN block first, then the box head.
    pub fn theta_d(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.theta_d_len());
        self.rpn.write_flat(&mut out);
        self.roi.write_flat(&mut out);
        out
    }

    pub fn set_theta_d(&mut self, flat: &[f64]) {
        let mut r = Reader::new(flat);
        self.rpn.read_flat(&mut r);
        self.roi.read_flat(&mut r);
        r.finish();
    }

    /// Seed backbone parameter tangents with a direction vector. Together
    /// with the tangent-carrying gradients this yields exact
    /// Hessian-vector products.
    pub fn set_theta_f_tangent(&mut self, dir: &[f64]) {
        let mut r = Reader::new(dir);
        self.backbone.set_tangent(&mut r);
        r.finish();
    }

    pub fn clear_tangents(&mut self) {
        self.backbone.clear_tangent();
        self.rpn.clear_tangent();
        self.roi.clear_tangent();
    }
}

/// Intersection-over-union for half-open pixel boxes.
pub fn iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Map an image-space box onto feature cells: floor the low edge, ceil the
/// high edge, keep at least one cell. `None` when the box misses the map.
pub fn box_to_cells(b: &PixelBox, stride: usize, hf: usize, wf: usize) -> Option<CellRect> {
    if b.is_degenerate() {
        return None;
    }
    let s = stride as f64;
    if b.x2 <= 0.0 || b.y2 <= 0.0 || b.x1 >= wf as f64 * s || b.y1 >= hf as f64 * s {
        return None;
    }
    let x0 = ((b.x1 / s).floor().max(0.0) as usize).min(wf - 1);
    let y0 = ((b.y1 / s).floor().max(0.0) as usize).min(hf - 1);
    let x1 = ((b.x2 / s).ceil() as usize).clamp(x0 + 1, wf);
    let y1 = ((b.y2 / s).ceil() as usize).clamp(y0 + 1, hf);
    Some(CellRect { y0, y1, x0, x1 })
}

/// `(H, W, 3)` image to the `(3, H, W)` layout the backbone wants.
pub fn hwc_to_chw(pixels: &Array3<f64>) -> Array3<f64> {
    pixels.view().permuted_axes([2, 0, 1]).as_standard_layout().to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn iou_matches_frozen_case() {
        let a = PixelBox::new(0.0, 0.0, 10.0, 10.0);
        let b = PixelBox::new(5.0, 5.0, 15.0, 15.0);
        // inter 25, union 100 + 100 - 25
        assert!((iou(&a, &b) - 25.0 / 175.0).abs() < 1e-12);
        assert_eq!(iou(&a, &a), 1.0);
        let c = PixelBox::new(20.0, 20.0, 30.0, 30.0);
        assert_eq!(iou(&a, &c), 0.0);
    }

    #[test]
    fn iou_matches_pixel_enumeration() {
        let mut rng = crate::rng::substream(31, &["test", "iou"]);
        for _ in 0..50 {
            let x1 = rng.gen_range(0..30) as f64;
            let y1 = rng.gen_range(0..30) as f64;
            let a = PixelBox::new(x1, y1, x1 + rng.gen_range(1..20) as f64, y1 + rng.gen_range(1..20) as f64);
            let x1 = rng.gen_range(0..30) as f64;
            let y1 = rng.gen_range(0..30) as f64;
            let b = PixelBox::new(x1, y1, x1 + rng.gen_range(1..20) as f64, y1 + rng.gen_range(1..20) as f64);
            let mut inter = 0usize;
            let mut aa = 0usize;
            let mut bb = 0usize;
            for y in 0..60 {
                for x in 0..60 {
                    let (xf, yf) = (x as f64, y as f64);
                    let ina = xf >= a.x1 && xf < a.x2 && yf >= a.y1 && yf < a.y2;
                    let inb = xf >= b.x1 && xf < b.x2 && yf >= b.y1 && yf < b.y2;
                    if ina {
                        aa += 1;
                    }
                    if inb {
                        bb += 1;
                    }
                    if ina && inb {
                        inter += 1;
                    }
                }
            }
            let expect = if aa + bb - inter == 0 { 0.0 } else { inter as f64 / (aa + bb - inter) as f64 };
            assert!((iou(&a, &b) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn box_to_cells_floors_and_ceils() {
        let b = PixelBox::new(17.0, 8.0, 41.0, 24.0);
        let r = box_to_cells(&b, 8, 12, 12).unwrap();
        assert_eq!((r.x0, r.x1, r.y0, r.y1), (2, 6, 1, 3));
        // sub-cell box keeps one cell
        let tiny = PixelBox::new(18.0, 18.0, 19.0, 19.0);
        let r = box_to_cells(&tiny, 8, 12, 12).unwrap();
        assert_eq!((r.x0, r.x1, r.y0, r.y1), (2, 3, 2, 3));
        // outside
        assert!(box_to_cells(&PixelBox::new(-5.0, 0.0, -1.0, 4.0), 8, 12, 12).is_none());
        assert!(box_to_cells(&PixelBox::new(3.0, 3.0, 3.0, 9.0), 8, 12, 12).is_none());
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = DetectorConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.stride(), 8);
        assert_eq!(cfg.feat_hw(), (12, 12));
        assert_eq!(cfg.num_anchors(), 6);
        assert_eq!(cfg.pooled_len(), 1200);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = DetectorConfig::default();
        cfg.channels = vec![12, 15];
        cfg.block_strides = vec![1, 2];
        match cfg.validate() {
            Err(Error::Config(msg)) => assert!(msg.contains("gn_groups")),
            other => panic!("expected config error, got {:?}", other.map(|_| ())),
        }
        let mut cfg = DetectorConfig::default();
        cfg.image_size = 100;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hwc_chw_roundtrip_values() {
        let mut rng = crate::rng::substream(32, &["test", "chw"]);
        let img = Array3::from_shape_fn((5, 7, 3), |_| rng.gen::<f64>());
        let chw = hwc_to_chw(&img);
        assert_eq!(chw.dim(), (3, 5, 7));
        for y in 0..5 {
            for x in 0..7 {
                for c in 0..3 {
                    assert_eq!(chw[[c, y, x]], img[[y, x, c]]);
                }
            }
        }
    }
}
