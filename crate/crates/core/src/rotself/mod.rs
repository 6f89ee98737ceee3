//! Rotation self-supervision.
//!
//! An image is rotated by a quarter turn `q`, features are pooled over the
//! (rotated) object box and a small head predicts `q`. The pooled patch of
//! the rotated image equals the rotated pooled patch of the original
//! image, exactly: cell bins are reversal-symmetric and image sides are
//! divisible by the stride, so the task is about orientation and not
//! about where the crop landed.
//!
//! The head `theta_r` is zero-initialized, which keeps its initial loss at
//! `ln 4` and leaves detector pretraining untouched until the rotation
//! loss starts pulling on shared features.

use crate::detcore::{box_to_cells, detect_on_features, hwc_to_chw, Detector, Flat, Reader};
use crate::geom::PixelBox;
use crate::nn::dual::{flatten3, softmax_ce, unflatten3, Dual3};
use crate::nn::layers::{Linear, LinearGrads};
use crate::nn::pool::{adaptive_pool, adaptive_pool_backward, CellRect, PoolCache};
use crate::synthgen::rotate_box;
use ndarray::Array3;

pub const NUM_ROTATIONS: usize = 4;

/// Quarter-turn classifier over a pooled feature patch.
#[derive(Clone)]
pub struct RotHead {
    pub fc: Linear,
}

impl RotHead {
    /// Zero weights: uniform logits for any input.
    pub fn new(pooled_len: usize) -> RotHead {
        RotHead { fc: Linear::zeros(pooled_len, NUM_ROTATIONS) }
    }
}

impl Flat for RotHead {
    fn flat_len(&self) -> usize {
        self.fc.flat_len()
    }
    fn write_flat(&self, out: &mut Vec<f64>) {
        self.fc.write_flat(out);
    }
    fn read_flat(&mut self, r: &mut Reader) {
        self.fc.read_flat(r);
    }
    fn write_flat_tangent(&self, out: &mut Vec<f64>) {
        self.fc.write_flat_tangent(out);
    }
    fn set_tangent(&mut self, r: &mut Reader) {
        self.fc.set_tangent(r);
    }
    fn clear_tangent(&mut self) {
        self.fc.clear_tangent();
    }
}

pub fn full_image_box(w: usize, h: usize) -> PixelBox {
    PixelBox::new(0.0, 0.0, w as f64, h as f64)
}

/// Pool a feature patch over an image-space box. Falls back to the whole
/// map when the box misses it; the flag reports that.
pub fn boxcrop(fmap: &Dual3, bbox: &PixelBox, stride: usize, s: usize) -> (Dual3, PoolCache, bool) {
    let (_, hf, wf) = fmap.v.dim();
    match box_to_cells(bbox, stride, hf, wf) {
        Some(cells) => {
            let (patch, cache) = adaptive_pool(fmap, cells, s);
            (patch, cache, false)
        }
        None => {
            let (patch, cache) = adaptive_pool(fmap, CellRect { y0: 0, y1: hf, x0: 0, x1: wf }, s);
            (patch, cache, true)
        }
    }
}

/// `boxcrop` on the feature map of a rotated image: the box lives in
/// original image coordinates and is rotated along with the content.
pub fn pseudoboxcrop(
    fmap_rot: &Dual3,
    bbox: &PixelBox,
    q: usize,
    img_w: usize,
    img_h: usize,
    stride: usize,
    s: usize,
) -> (Dual3, PoolCache, bool) {
    let rbox = rotate_box(*bbox, q as u8, img_w as f64, img_h as f64);
    boxcrop(fmap_rot, &rbox, stride, s)
}

pub struct RotOut {
    pub loss: f64,
    pub grad_f: Vec<f64>,
    pub grad_r: Vec<f64>,
    /// Tangents of the gradients, present when parameters carried
    /// tangents. Seeding the parameter tangents with a direction `v`
    /// makes these exact Hessian-vector products `H v`.
    pub grad_f_t: Option<Vec<f64>>,
    pub grad_r_t: Option<Vec<f64>>,
    pub fallback: bool,
}

/// Rotation loss for one image: rotate by `q`, pool each box, mean cross
/// entropy against `q`. Gradients cover the backbone and the head.
pub fn rotation_loss(
    det: &Detector,
    rot: &RotHead,
    pixels: &Array3<f64>,
    boxes: &[PixelBox],
    q: usize,
) -> RotOut {
    assert!(q < NUM_ROTATIONS);
    assert!(!boxes.is_empty());
    let cfg = &det.cfg;
    let (h, w, _) = pixels.dim();
    let rotated = crate::synthgen::rotate(pixels, q as u8);
    let x = Dual3::plain(hwc_to_chw(&rotated));
    let (fmap, bb_cache) = det.backbone.forward(&x);

    let n = boxes.len() as f64;
    let mut total = 0.0;
    let mut fallback = false;
    let mut g_fmap = fmap.zeros_like();
    let mut head_grads: Option<LinearGrads> = None;
    for b in boxes {
        let (patch, pcache, fb) = pseudoboxcrop(&fmap, b, q, w, h, cfg.stride(), cfg.roi_pool);
        fallback |= fb;
        let flat = flatten3(&patch);
        let (logits, lcache) = rot.fc.forward(&flat);
        let (ce, g_logits) = softmax_ce(&logits, q);
        total += ce.v / n;
        let (g_flat, grads) = rot.fc.backward(&lcache, &g_logits.scale(1.0 / n));
        let g_patch = unflatten3(&g_flat, patch.v.dim());
        g_fmap.axpy(&adaptive_pool_backward(&pcache, &g_patch), 1.0);
        match &mut head_grads {
            Some(acc) => {
                acc.w.axpy(&grads.w, 1.0);
                acc.b.axpy(&grads.b, 1.0);
            }
            None => head_grads = Some(grads),
        }
    }
    let bb_grads = det.backbone.backward(&bb_cache, &g_fmap);
    let head_grads = head_grads.unwrap();

    let mut grad_f = Vec::with_capacity(det.theta_f_len());
    bb_grads.write_flat(&mut grad_f);
    let mut grad_r = Vec::with_capacity(rot.flat_len());
    head_grads.write_flat(&mut grad_r);

    let seeded = det.backbone.blocks[0].conv.w.t.is_some() || rot.fc.w.t.is_some();
    let (grad_f_t, grad_r_t) = if seeded {
        let mut ft = Vec::with_capacity(grad_f.len());
        bb_grads.write_flat_tangent(&mut ft);
        let mut rt = Vec::with_capacity(grad_r.len());
        head_grads.write_flat_tangent(&mut rt);
        (Some(ft), Some(rt))
    } else {
        (None, None)
    };

    RotOut { loss: total, grad_f, grad_r, grad_f_t, grad_r_t, fallback }
}

/// Top detection box when its score clears `thresh`, otherwise the full
/// image. The class is discarded either way.
pub fn pseudo_label_on_features(
    det: &Detector,
    fmap: &crate::detcore::FeatureMap,
    thresh: f64,
) -> (PixelBox, bool) {
    let dets = detect_on_features(det, fmap, det.cfg.rpn_eval_topn, 0.0);
    match dets.first() {
        Some(d) if d.score >= thresh => (d.bbox, false),
        _ => (full_image_box(fmap.image_w, fmap.image_h), true),
    }
}

pub fn pseudo_label(det: &Detector, pixels: &Array3<f64>, thresh: f64) -> (PixelBox, bool) {
    let fmap = crate::detcore::extract_features(det, pixels);
    pseudo_label_on_features(det, &fmap, thresh)
}

/// Rotation logits for one view: the image rotated by `q` with `bbox` in
/// original coordinates. Forward only.
pub fn rotation_logits(det: &Detector, rot: &RotHead, pixels: &Array3<f64>, bbox: &PixelBox, q: usize) -> Vec<f64> {
    assert!(q < NUM_ROTATIONS);
    let (h, w, _) = pixels.dim();
    let rotated = crate::synthgen::rotate(pixels, q as u8);
    let x = Dual3::plain(hwc_to_chw(&rotated));
    let (fmap, _) = det.backbone.forward(&x);
    let (patch, _, _) = pseudoboxcrop(&fmap, bbox, q, w, h, det.cfg.stride(), det.cfg.roi_pool);
    let (logits, _) = rot.fc.forward(&flatten3(&patch));
    logits.v.to_vec()
}

/// Fraction of (image, quarter turn) pairs whose rotation is classified
/// correctly, pooling over each image's first ground-truth box (the whole
/// image when there is none).
pub fn rotation_accuracy(det: &Detector, rot: &RotHead, images: &[crate::synthgen::AnnotatedImage]) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    for img in images {
        let bbox = img
            .labels
            .first()
            .map(|l| l.bbox)
            .unwrap_or_else(|| full_image_box(img.width(), img.height()));
        for q in 0..NUM_ROTATIONS {
            let logits = rotation_logits(det, rot, &img.pixels, &bbox, q);
            let pred = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap();
            hits += usize::from(pred == q);
            total += 1;
        }
    }
    hits as f64 / total.max(1) as f64
}
