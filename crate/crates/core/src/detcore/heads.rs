//! Region proposal head, box head, anchors and the inference path.

use super::params::{Flat, Reader};
use super::{box_to_cells, hwc_to_chw, nms::nms, Detector, DetectorConfig, FeatureMap};
use crate::geom::PixelBox;
use crate::nn::dual::{mask_apply, Dual1, Dual3};
use crate::nn::layers::{Conv2d, ConvCache, ConvGrads, Linear, LinearCache, LinearGrads};
use crate::nn::pool::adaptive_pool;
use ndarray::{Array1, Array3};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: usize,
    pub score: f64,
    pub bbox: PixelBox,
}

/// Anchor boxes for a `hf x wf` feature grid, centred on cells. Index
/// layout is `(y * wf + x) * A + a` with `a = scale_idx * n_ratios +
/// ratio_idx`, matching the channel layout of the RPN outputs.
pub fn anchor_boxes(cfg: &DetectorConfig, hf: usize, wf: usize) -> Vec<PixelBox> {
    let s = cfg.stride() as f64;
    let mut out = Vec::with_capacity(hf * wf * cfg.num_anchors());
    for y in 0..hf {
        for x in 0..wf {
            let cx = (x as f64 + 0.5) * s;
            let cy = (y as f64 + 0.5) * s;
            for &scale in &cfg.anchor_scales {
                for &ratio in &cfg.anchor_ratios {
                    let w = scale / ratio.sqrt();
                    let h = scale * ratio.sqrt();
                    out.push(PixelBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0));
                }
            }
        }
    }
    out
}

/// Regression target of `gt` relative to `anchor`.
pub fn encode_box(anchor: &PixelBox, gt: &PixelBox) -> [f64; 4] {
    let aw = anchor.width();
    let ah = anchor.height();
    let acx = anchor.cx();
    let acy = anchor.cy();
    [
        (gt.cx() - acx) / aw,
        (gt.cy() - acy) / ah,
        (gt.width() / aw).ln(),
        (gt.height() / ah).ln(),
    ]
}

/// Apply a regression delta to an anchor and clip to the image. Log sizes
/// are clamped so garbage logits cannot overflow.
pub fn decode_box(anchor: &PixelBox, t: &[f64], img_w: f64, img_h: f64) -> PixelBox {
    let aw = anchor.width();
    let ah = anchor.height();
    let cx = anchor.cx() + t[0] * aw;
    let cy = anchor.cy() + t[1] * ah;
    let w = aw * t[2].clamp(-4.0, 4.0).exp();
    let h = ah * t[3].clamp(-4.0, 4.0).exp();
    PixelBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0).clip(img_w, img_h)
}

#[derive(Clone)]
pub struct RpnHead {
    pub conv: Conv2d,
    pub obj: Conv2d,
    pub reg: Conv2d,
}

pub struct RpnCache {
    conv: ConvCache,
    mask: Array3<f64>,
    obj: ConvCache,
    reg: ConvCache,
}

pub struct RpnGrads {
    pub conv: ConvGrads,
    pub obj: ConvGrads,
    pub reg: ConvGrads,
}

impl RpnHead {
    pub fn new(cfg: &DetectorConfig, rng: &mut ChaCha12Rng) -> RpnHead {
        let c = cfg.feat_channels();
        let a = cfg.num_anchors();
        RpnHead {
            conv: Conv2d::new(c, c, 3, 1, 1, rng),
            obj: Conv2d::new(c, a, 1, 1, 0, rng),
            reg: Conv2d::new(c, 4 * a, 1, 1, 0, rng),
        }
    }

    /// Objectness logits `(A, hf, wf)` and deltas `(4A, hf, wf)`; delta
    /// channel `4a + j` holds component `j` of anchor slot `a`.
    pub fn forward(&self, fmap: &Dual3) -> (Dual3, Dual3, RpnCache) {
        let (z, cc) = self.conv.forward(fmap);
        let (h, mask) = crate::nn::dual::relu(&z);
        let (obj, oc) = self.obj.forward(&h);
        let (reg, rc) = self.reg.forward(&h);
        (obj, reg, RpnCache { conv: cc, mask, obj: oc, reg: rc })
    }

    pub fn backward(&self, cache: &RpnCache, g_obj: &Dual3, g_reg: &Dual3) -> (Dual3, RpnGrads) {
        let (g_h_obj, obj_grads) = self.obj.backward(&cache.obj, g_obj);
        let (g_h_reg, reg_grads) = self.reg.backward(&cache.reg, g_reg);
        let mut g_h = g_h_obj;
        g_h.axpy(&g_h_reg, 1.0);
        let g_z = mask_apply(&g_h, &cache.mask);
        let (g_fmap, conv_grads) = self.conv.backward(&cache.conv, &g_z);
        (g_fmap, RpnGrads { conv: conv_grads, obj: obj_grads, reg: reg_grads })
    }
}

impl Flat for RpnHead {
    fn flat_len(&self) -> usize {
        self.conv.flat_len() + self.obj.flat_len() + self.reg.flat_len()
    }
    fn write_flat(&self, out: &mut Vec<f64>) {
        self.conv.write_flat(out);
        self.obj.write_flat(out);
        self.reg.write_flat(out);
    }
    fn read_flat(&mut self, r: &mut Reader) {
        self.conv.read_flat(r);
        self.obj.read_flat(r);
        self.reg.read_flat(r);
    }
    fn write_flat_tangent(&self, out: &mut Vec<f64>) {
        self.conv.write_flat_tangent(out);
        self.obj.write_flat_tangent(out);
        self.reg.write_flat_tangent(out);
    }
    fn set_tangent(&mut self, r: &mut Reader) {
        self.conv.set_tangent(r);
        self.obj.set_tangent(r);
        self.reg.set_tangent(r);
    }
    fn clear_tangent(&mut self) {
        self.conv.clear_tangent();
        self.obj.clear_tangent();
        self.reg.clear_tangent();
    }
}

impl Flat for RpnGrads {
    fn flat_len(&self) -> usize {
        self.conv.flat_len() + self.obj.flat_len() + self.reg.flat_len()
    }
    fn write_flat(&self, out: &mut Vec<f64>) {
        self.conv.write_flat(out);
        self.obj.write_flat(out);
        self.reg.write_flat(out);
    }
    fn read_flat(&mut self, r: &mut Reader) {
        self.conv.read_flat(r);
        self.obj.read_flat(r);
        self.reg.read_flat(r);
    }
    fn write_flat_tangent(&self, out: &mut Vec<f64>) {
        self.conv.write_flat_tangent(out);
        self.obj.write_flat_tangent(out);
        self.reg.write_flat_tangent(out);
    }
    fn set_tangent(&mut self, r: &mut Reader) {
        self.conv.set_tangent(r);
        self.obj.set_tangent(r);
        self.reg.set_tangent(r);
    }
    fn clear_tangent(&mut self) {
        self.conv.clear_tangent();
        self.obj.clear_tangent();
        self.reg.clear_tangent();
    }
}

/// Box head: pooled patch -> fc -> relu -> {class logits, agnostic box
/// delta}. Class index `num_classes` is background.
#[derive(Clone)]
pub struct RoiHead {
    pub fc: Linear,
    pub cls: Linear,
    pub reg: Linear,
}

pub struct RoiCache {
    fc: LinearCache,
    mask: Array1<f64>,
    cls: LinearCache,
    reg: LinearCache,
}

pub struct RoiGrads {
    pub fc: LinearGrads,
    pub cls: LinearGrads,
    pub reg: LinearGrads,
}

impl RoiHead {
    pub fn new(cfg: &DetectorConfig, rng: &mut ChaCha12Rng) -> RoiHead {
        RoiHead {
            fc: Linear::new(cfg.pooled_len(), cfg.roi_fc, rng),
            cls: Linear::new(cfg.roi_fc, cfg.num_classes + 1, rng),
            reg: Linear::new(cfg.roi_fc, 4, rng),
        }
    }

    pub fn forward(&self, patch: &Dual1) -> (Dual1, Dual1, RoiCache) {
        let (z, fcc) = self.fc.forward(patch);
        let (h, mask) = crate::nn::dual::relu(&z);
        let (cls, cc) = self.cls.forward(&h);
        let (reg, rc) = self.reg.forward(&h);
        (cls, reg, RoiCache { fc: fcc, mask, cls: cc, reg: rc })
    }

    pub fn backward(&self, cache: &RoiCache, g_cls: &Dual1, g_reg: &Dual1) -> (Dual1, RoiGrads) {
        let (g_h_cls, cls_grads) = self.cls.backward(&cache.cls, g_cls);
        let (g_h_reg, reg_grads) = self.reg.backward(&cache.reg, g_reg);
        let mut g_h = g_h_cls;
        g_h.axpy(&g_h_reg, 1.0);
        let g_z = mask_apply(&g_h, &cache.mask);
        let (g_patch, fc_grads) = self.fc.backward(&cache.fc, &g_z);
        (g_patch, RoiGrads { fc: fc_grads, cls: cls_grads, reg: reg_grads })
    }
}

impl RoiGrads {
    pub fn add_assign(&mut self, o: &RoiGrads) {
        self.fc.w.axpy(&o.fc.w, 1.0);
        self.fc.b.axpy(&o.fc.b, 1.0);
        self.cls.w.axpy(&o.cls.w, 1.0);
        self.cls.b.axpy(&o.cls.b, 1.0);
        self.reg.w.axpy(&o.reg.w, 1.0);
        self.reg.b.axpy(&o.reg.b, 1.0);
    }
}

impl Flat for RoiHead {
    fn flat_len(&self) -> usize {
        self.fc.flat_len() + self.cls.flat_len() + self.reg.flat_len()
    }
    fn write_flat(&self, out: &mut Vec<f64>) {
        self.fc.write_flat(out);
        self.cls.write_flat(out);
        self.reg.write_flat(out);
    }
    fn read_flat(&mut self, r: &mut Reader) {
        self.fc.read_flat(r);
        self.cls.read_flat(r);
        self.reg.read_flat(r);
    }
    fn write_flat_tangent(&self, out: &mut Vec<f64>) {
        self.fc.write_flat_tangent(out);
        self.cls.write_flat_tangent(out);
        self.reg.write_flat_tangent(out);
    }
    fn set_tangent(&mut self, r: &mut Reader) {
        self.fc.set_tangent(r);
        self.cls.set_tangent(r);
        self.reg.set_tangent(r);
    }
    fn clear_tangent(&mut self) {
        self.fc.clear_tangent();
        self.cls.clear_tangent();
        self.reg.clear_tangent();
    }
}

impl Flat for RoiGrads {
    fn flat_len(&self) -> usize {
        self.fc.flat_len() + self.cls.flat_len() + self.reg.flat_len()
    }
    fn write_flat(&self, out: &mut Vec<f64>) {
        self.fc.write_flat(out);
        self.cls.write_flat(out);
        self.reg.write_flat(out);
    }
    fn read_flat(&mut self, r: &mut Reader) {
        self.fc.read_flat(r);
        self.cls.read_flat(r);
        self.reg.read_flat(r);
    }
    fn write_flat_tangent(&self, out: &mut Vec<f64>) {
        self.fc.write_flat_tangent(out);
        self.cls.write_flat_tangent(out);
        self.reg.write_flat_tangent(out);
    }
    fn set_tangent(&mut self, r: &mut Reader) {
        self.fc.set_tangent(r);
        self.cls.set_tangent(r);
        self.reg.set_tangent(r);
    }
    fn clear_tangent(&mut self) {
        self.fc.clear_tangent();
        self.cls.clear_tangent();
        self.reg.clear_tangent();
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Decode, score and NMS raw RPN outputs into at most `topn` proposals,
/// highest score first. Operates on plain values; proposals are treated
/// as constants downstream.
pub fn propose_regions(
    cfg: &DetectorConfig,
    obj: &Array3<f64>,
    reg: &Array3<f64>,
    topn: usize,
) -> Vec<(PixelBox, f64)> {
    let (a_ch, hf, wf) = obj.dim();
    let anchors = anchor_boxes(cfg, hf, wf);
    let img = cfg.image_size as f64;
    let mut boxes = Vec::new();
    let mut scores = Vec::new();
    for y in 0..hf {
        for x in 0..wf {
            for a in 0..a_ch {
                let anchor = &anchors[(y * wf + x) * a_ch + a];
                let t = [
                    reg[[4 * a, y, x]],
                    reg[[4 * a + 1, y, x]],
                    reg[[4 * a + 2, y, x]],
                    reg[[4 * a + 3, y, x]],
                ];
                let b = decode_box(anchor, &t, img, img);
                if b.width() < 2.0 || b.height() < 2.0 {
                    continue;
                }
                boxes.push(b);
                scores.push(sigmoid(obj[[a, y, x]]));
            }
        }
    }
    // keep NMS input small; candidates beyond this cannot reach topn
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    order.truncate(6 * topn);
    let cand_boxes: Vec<PixelBox> = order.iter().map(|&i| boxes[i]).collect();
    let cand_scores: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
    let kept = nms(&cand_boxes, &cand_scores, cfg.rpn_nms_iou);
    kept.into_iter().take(topn).map(|i| (cand_boxes[i], cand_scores[i])).collect()
}

/// Run the backbone on an `(H, W, 3)` image.
pub fn extract_features(det: &Detector, pixels: &Array3<f64>) -> FeatureMap {
    let x = Dual3::plain(hwc_to_chw(pixels));
    let (y, _) = det.backbone.forward(&x);
    FeatureMap {
        values: y.v,
        stride: det.cfg.stride(),
        image_h: pixels.dim().0,
        image_w: pixels.dim().1,
    }
}

fn softmax(v: &Array1<f64>) -> Array1<f64> {
    let m = v.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = v.mapv(|x| (x - m).exp());
    let s = e.sum();
    e / s
}

/// Full second stage on an existing feature map: propose, classify,
/// refine, class-wise NMS, then the score floor.
pub fn detect_on_features(
    det: &Detector,
    fmap: &FeatureMap,
    topn: usize,
    score_thresh: f64,
) -> Vec<Detection> {
    let cfg = &det.cfg;
    let fdual = Dual3::plain(fmap.values.clone());
    let (obj, reg, _) = det.rpn.forward(&fdual);
    let proposals = propose_regions(cfg, &obj.v, &reg.v, topn);
    let (img_w, img_h) = (fmap.image_w as f64, fmap.image_h as f64);
    let (_, hf, wf) = fmap.values.dim();

    let mut raw: Vec<Detection> = Vec::new();
    for (pbox, _) in &proposals {
        let Some(cells) = box_to_cells(pbox, fmap.stride, hf, wf) else { continue };
        let (patch, _) = adaptive_pool(&fdual, cells, cfg.roi_pool);
        let flat = Dual1::plain(Array1::from_iter(patch.v.iter().copied()));
        let (cls, delta, _) = det.roi.forward(&flat);
        let probs = softmax(&cls.v);
        let (best, best_p) = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .unwrap();
        if best == cfg.num_classes {
            continue;
        }
        let refined = decode_box(pbox, delta.v.as_slice().unwrap(), img_w, img_h);
        if refined.is_degenerate() {
            continue;
        }
        raw.push(Detection { class_id: best, score: *best_p, bbox: refined });
    }

    let mut out: Vec<Detection> = Vec::new();
    for c in 0..cfg.num_classes {
        let idx: Vec<usize> = (0..raw.len()).filter(|&i| raw[i].class_id == c).collect();
        let boxes: Vec<PixelBox> = idx.iter().map(|&i| raw[i].bbox).collect();
        let scores: Vec<f64> = idx.iter().map(|&i| raw[i].score).collect();
        for k in nms(&boxes, &scores, cfg.cls_nms_iou) {
            out.push(raw[idx[k]].clone());
        }
    }
    out.retain(|d| d.score >= score_thresh);
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.class_id.cmp(&b.class_id)));
    out
}

/// Inference with evaluation-time settings.
pub fn detect(det: &Detector, pixels: &Array3<f64>) -> Vec<Detection> {
    let fmap = extract_features(det, pixels);
    detect_on_features(det, &fmap, det.cfg.rpn_eval_topn, det.cfg.eval_score_thresh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use ndarray::Array3;
    use rand::Rng;

    #[test]
    fn anchor_layout_is_frozen() {
        let cfg = DetectorConfig::default();
        let anchors = anchor_boxes(&cfg, 12, 12);
        assert_eq!(anchors.len(), 12 * 12 * 6);
        // cell (0, 0), scale 16, ratio 1: centre (4, 4), 16 x 16
        let a0 = anchors[0];
        assert!((a0.x1 - -4.0).abs() < 1e-12 && (a0.x2 - 12.0).abs() < 1e-12);
        assert!((a0.y1 - -4.0).abs() < 1e-12 && (a0.y2 - 12.0).abs() < 1e-12);
        // slot 1 is scale 16, ratio 0.5: wide and short
        let a1 = anchors[1];
        assert!(a1.width() > a1.height());
        assert!((a1.width() - 16.0 / 0.5_f64.sqrt()).abs() < 1e-12);
        // cell (y=1, x=2) starts at index (1 * 12 + 2) * 6
        let a = anchors[(12 + 2) * 6];
        assert!((a.cx() - 20.0).abs() < 1e-12 && (a.cy() - 12.0).abs() < 1e-12);
    }

    #[test]
    fn encode_decode_roundtrip() {
        let mut rng = substream(50, &["test", "boxcode"]);
        let anchor = PixelBox::new(10.0, 20.0, 42.0, 44.0);
        for _ in 0..30 {
            let cx = rng.gen_range(20.0..70.0);
            let cy = rng.gen_range(20.0..70.0);
            let w = rng.gen_range(8.0..25.0);
            let h = rng.gen_range(8.0..25.0);
            let gt = PixelBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0);
            let t = encode_box(&anchor, &gt);
            let back = decode_box(&anchor, &t, 96.0, 96.0);
            assert!((back.x1 - gt.x1).abs() < 1e-9);
            assert!((back.y1 - gt.y1).abs() < 1e-9);
            assert!((back.x2 - gt.x2).abs() < 1e-9);
            assert!((back.y2 - gt.y2).abs() < 1e-9);
        }
    }

    #[test]
    fn decode_clips_and_clamps() {
        let anchor = PixelBox::new(40.0, 40.0, 56.0, 56.0);
        let b = decode_box(&anchor, &[0.0, 0.0, 30.0, 30.0], 96.0, 96.0);
        assert!(b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= 96.0 && b.y2 <= 96.0);
    }

    #[test]
    fn proposals_are_valid_and_deterministic() {
        let cfg = DetectorConfig::default();
        let mut rng = substream(51, &["test", "proposals"]);
        let a = cfg.num_anchors();
        let obj = Array3::from_shape_fn((a, 12, 12), |_| rng.gen::<f64>() * 4.0 - 2.0);
        let reg = Array3::from_shape_fn((4 * a, 12, 12), |_| rng.gen::<f64>() * 0.4 - 0.2);
        let p1 = propose_regions(&cfg, &obj, &reg, 64);
        let p2 = propose_regions(&cfg, &obj, &reg, 64);
        assert_eq!(p1.len(), p2.len());
        assert!(!p1.is_empty() && p1.len() <= 64);
        for ((b1, s1), (b2, s2)) in p1.iter().zip(p2.iter()) {
            assert_eq!(b1, b2);
            assert_eq!(s1, s2);
        }
        for (b, s) in &p1 {
            assert!(*s > 0.0 && *s < 1.0);
            assert!(b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= 96.0 && b.y2 <= 96.0);
            assert!(!b.is_degenerate());
        }
        // scores are non-increasing
        for w in p1.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
    }

    #[test]
    fn rpn_backward_matches_finite_differences() {
        let cfg = DetectorConfig {
            image_size: 16,
            channels: vec![6],
            block_strides: vec![2],
            gn_groups: 2,
            anchor_scales: vec![6.0],
            anchor_ratios: vec![1.0],
            ..DetectorConfig::default()
        };
        let mut rng = substream(52, &["test", "rpn-fd"]);
        let mut rpn = RpnHead::new(&cfg, &mut rng);
        let fmap = Dual3::plain(Array3::from_shape_fn((6, 8, 8), |_| rng.gen::<f64>() - 0.4));
        let wo = Array3::from_shape_fn((1, 8, 8), |_| rng.gen::<f64>() - 0.5);
        let wr = Array3::from_shape_fn((4, 8, 8), |_| rng.gen::<f64>() - 0.5);

        let (obj, reg, cache) = rpn.forward(&fmap);
        let loss0 = (&obj.v * &wo).sum() + (&reg.v * &wr).sum();
        assert!(loss0.is_finite());
        let (_, grads) = rpn.backward(&cache, &Dual3::plain(wo.clone()), &Dual3::plain(wr.clone()));
        let mut gflat = Vec::new();
        grads.write_flat(&mut gflat);

        let mut flat = Vec::new();
        rpn.write_flat(&mut flat);
        let h = 1e-6;
        for &i in &[0usize, 11, flat.len() / 2, flat.len() - 1] {
            let orig = flat[i];
            let eval = |v: f64, rpn: &mut RpnHead, flat: &mut Vec<f64>| {
                flat[i] = v;
                let mut r = Reader::new(flat);
                rpn.read_flat(&mut r);
                r.finish();
                let (o, g, _) = rpn.forward(&fmap);
                (&o.v * &wo).sum() + (&g.v * &wr).sum()
            };
            let lp = eval(orig + h, &mut rpn, &mut flat);
            let lm = eval(orig - h, &mut rpn, &mut flat);
            eval(orig, &mut rpn, &mut flat);
            let fd = (lp - lm) / (2.0 * h);
            let got = gflat[i];
            assert!(
                (fd - got).abs() / fd.abs().max(got.abs()).max(1e-8) < 1e-5,
                "param {i}: fd {fd} vs grad {got}"
            );
        }
    }

    #[test]
    fn roi_backward_matches_finite_differences() {
        let cfg = DetectorConfig {
            channels: vec![4],
            block_strides: vec![2],
            gn_groups: 2,
            roi_pool: 3,
            roi_fc: 8,
            num_classes: 3,
            image_size: 16,
            ..DetectorConfig::default()
        };
        let mut rng = substream(53, &["test", "roi-fd"]);
        let mut roi = RoiHead::new(&cfg, &mut rng);
        let patch = Dual1::plain(Array1::from_shape_fn(cfg.pooled_len(), |_| rng.gen::<f64>() - 0.3));
        let wc = Array1::from_shape_fn(cfg.num_classes + 1, |_| rng.gen::<f64>() - 0.5);
        let wr = Array1::from_shape_fn(4, |_| rng.gen::<f64>() - 0.5);

        let (cls, reg, cache) = roi.forward(&patch);
        assert_eq!(cls.v.len(), 4);
        assert_eq!(reg.v.len(), 4);
        let (_, grads) = roi.backward(&cache, &Dual1::plain(wc.clone()), &Dual1::plain(wr.clone()));
        let mut gflat = Vec::new();
        grads.write_flat(&mut gflat);

        let mut flat = Vec::new();
        roi.write_flat(&mut flat);
        let h = 1e-6;
        for &i in &[0usize, 7, flat.len() / 2, flat.len() - 1] {
            let orig = flat[i];
            let eval = |v: f64, roi: &mut RoiHead, flat: &mut Vec<f64>| {
                flat[i] = v;
                let mut r = Reader::new(flat);
                roi.read_flat(&mut r);
                r.finish();
                let (c, g, _) = roi.forward(&patch);
                (&c.v * &wc).sum() + (&g.v * &wr).sum()
            };
            let lp = eval(orig + h, &mut roi, &mut flat);
            let lm = eval(orig - h, &mut roi, &mut flat);
            eval(orig, &mut roi, &mut flat);
            let fd = (lp - lm) / (2.0 * h);
            let got = gflat[i];
            assert!(
                (fd - got).abs() / fd.abs().max(got.abs()).max(1e-8) < 1e-5,
                "param {i}: fd {fd} vs grad {got}"
            );
        }
    }

    #[test]
    fn detect_output_is_well_formed() {
        let cfg = DetectorConfig::default();
        let mut rng = substream(54, &["test", "detect"]);
        let det = Detector::new(cfg, &mut rng).unwrap();
        let img = Array3::from_shape_fn((96, 96, 3), |_| rng.gen::<f64>());
        let dets = detect(&det, &img);
        for d in &dets {
            assert!(d.class_id < det.cfg.num_classes);
            assert!(d.score >= det.cfg.eval_score_thresh && d.score <= 1.0);
            assert!(d.bbox.x1 >= 0.0 && d.bbox.y1 >= 0.0);
            assert!(d.bbox.x2 <= 96.0 && d.bbox.y2 <= 96.0);
            assert!(!d.bbox.is_degenerate());
        }
        for w in dets.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
    }
}
