//! Detection loss with hand-written backward.
//!
//! Target assignment is split out into a `LossPlan` so gradients can be
//! checked by finite differences: the plan freezes every discrete choice
//! (sampled anchors, proposals, class targets) and the loss is smooth in
//! the parameters given the plan. Proposal boxes are constants; no
//! gradient flows through box decoding.

use super::backbone::BackboneCache;
use super::heads::{anchor_boxes, encode_box, propose_regions, RoiGrads, RpnCache};
use super::params::Flat;
use super::{box_to_cells, hwc_to_chw, iou, Detector};
use crate::geom::PixelBox;
use crate::nn::dual::{flatten3, smooth_l1, softmax_ce, unflatten3, Dual1, Dual3};
use crate::nn::pool::{adaptive_pool, adaptive_pool_backward, CellRect};
use crate::synthgen::BoxLabel;
use ndarray::{Array1, Array3};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha12Rng;

/// Per-anchor RPN sample cap; positives take at most half.
const RPN_SAMPLES: usize = 64;
/// Background rois kept per foreground roi.
const BG_PER_FG: usize = 3;

pub struct RoiSample {
    pub bbox: PixelBox,
    /// `num_classes` means background.
    pub class_target: usize,
    pub box_target: Option<[f64; 4]>,
}

pub struct LossPlan {
    /// `(flat anchor index, objectness target)`
    pub rpn_obj: Vec<(usize, f64)>,
    /// `(flat anchor index, encoded box target)`, positives only
    pub rpn_box: Vec<(usize, [f64; 4])>,
    pub rois: Vec<RoiSample>,
}

/// Flat gradients per parameter group, same layout as
/// `Detector::theta_f` / `theta_d`.
pub struct DetGrads {
    pub f: Vec<f64>,
    pub d: Vec<f64>,
}

struct Forward {
    fdual: Dual3,
    bb_cache: BackboneCache,
    obj: Dual3,
    reg: Dual3,
    rpn_cache: RpnCache,
}

fn forward(det: &Detector, pixels: &Array3<f64>) -> Forward {
    let x = Dual3::plain(hwc_to_chw(pixels));
    let (fdual, bb_cache) = det.backbone.forward(&x);
    let (obj, reg, rpn_cache) = det.rpn.forward(&fdual);
    Forward { fdual, bb_cache, obj, reg, rpn_cache }
}

fn anchor_pos(idx: usize, a_ch: usize, wf: usize) -> (usize, usize, usize) {
    let a = idx % a_ch;
    let cell = idx / a_ch;
    (a, cell / wf, cell % wf)
}

fn gather_obj(map: &Dual3, idxs: &[usize], wf: usize) -> Dual1 {
    let a_ch = map.v.dim().0;
    let pick = |arr: &Array3<f64>| {
        Array1::from_iter(idxs.iter().map(|&i| {
            let (a, y, x) = anchor_pos(i, a_ch, wf);
            arr[[a, y, x]]
        }))
    };
    Dual1 { v: pick(&map.v), t: map.t.as_ref().map(|t| pick(t)) }
}

fn scatter_obj(dim: (usize, usize, usize), idxs: &[usize], wf: usize, g: &Dual1) -> Dual3 {
    let a_ch = dim.0;
    let fill = |src: &Array1<f64>| {
        let mut out = Array3::zeros(dim);
        for (k, &i) in idxs.iter().enumerate() {
            let (a, y, x) = anchor_pos(i, a_ch, wf);
            out[[a, y, x]] += src[k];
        }
        out
    };
    Dual3 { v: fill(&g.v), t: g.t.as_ref().map(|t| fill(t)) }
}

fn gather_reg(map: &Dual3, idxs: &[usize], a_ch: usize, wf: usize) -> Dual1 {
    let pick = |arr: &Array3<f64>| {
        let mut out = Vec::with_capacity(4 * idxs.len());
        for &i in idxs {
            let (a, y, x) = anchor_pos(i, a_ch, wf);
            for j in 0..4 {
                out.push(arr[[4 * a + j, y, x]]);
            }
        }
        Array1::from(out)
    };
    Dual1 { v: pick(&map.v), t: map.t.as_ref().map(|t| pick(t)) }
}

fn scatter_reg(dim: (usize, usize, usize), idxs: &[usize], a_ch: usize, wf: usize, g: &Dual1) -> Dual3 {
    let fill = |src: &Array1<f64>| {
        let mut out = Array3::zeros(dim);
        for (k, &i) in idxs.iter().enumerate() {
            let (a, y, x) = anchor_pos(i, a_ch, wf);
            for j in 0..4 {
                out[[4 * a + j, y, x]] += src[4 * k + j];
            }
        }
        out
    };
    Dual3 { v: fill(&g.v), t: g.t.as_ref().map(|t| fill(t)) }
}

/// Assign anchors and proposals to ground truth. Draws from `rng` in a
/// fixed order: positive shuffle, negative shuffle, background shuffle.
pub fn build_plan(
    det: &Detector,
    obj: &Array3<f64>,
    reg: &Array3<f64>,
    labels: &[BoxLabel],
    rng: &mut ChaCha12Rng,
) -> LossPlan {
    let cfg = &det.cfg;
    let (_, hf, wf) = obj.dim();
    let anchors = anchor_boxes(cfg, hf, wf);
    let gts: Vec<PixelBox> = labels.iter().map(|l| l.bbox).collect();

    let mut best_gt = vec![usize::MAX; anchors.len()];
    let mut best_iou = vec![0.0f64; anchors.len()];
    let mut gt_best: Vec<(usize, f64)> = vec![(usize::MAX, -1.0); gts.len()];
    for (ai, a) in anchors.iter().enumerate() {
        for (gi, g) in gts.iter().enumerate() {
            let v = iou(a, g);
            if v > best_iou[ai] || best_gt[ai] == usize::MAX {
                best_iou[ai] = v;
                best_gt[ai] = gi;
            }
            if v > gt_best[gi].1 {
                gt_best[gi] = (ai, v);
            }
        }
    }

    let mut pos: Vec<usize> = (0..anchors.len())
        .filter(|&ai| !gts.is_empty() && best_iou[ai] >= cfg.anchor_pos_iou)
        .collect();
    // every object keeps its best anchor even below the threshold
    for (gi, &(ai, v)) in gt_best.iter().enumerate() {
        if v > 0.0 && !pos.contains(&ai) {
            best_gt[ai] = gi;
            pos.push(ai);
        }
    }
    pos.sort_unstable();
    let mut neg: Vec<usize> = (0..anchors.len())
        .filter(|&ai| best_iou[ai] < cfg.anchor_neg_iou && !pos.contains(&ai))
        .collect();

    pos.shuffle(rng);
    pos.truncate(RPN_SAMPLES / 2);
    neg.shuffle(rng);
    neg.truncate(RPN_SAMPLES - pos.len());

    let mut rpn_obj = Vec::with_capacity(pos.len() + neg.len());
    let mut rpn_box = Vec::with_capacity(pos.len());
    for &ai in &pos {
        rpn_obj.push((ai, 1.0));
        rpn_box.push((ai, encode_box(&anchors[ai], &gts[best_gt[ai]])));
    }
    for &ai in &neg {
        rpn_obj.push((ai, 0.0));
    }

    let mut proposals: Vec<PixelBox> =
        propose_regions(cfg, obj, reg, cfg.rpn_train_topn).into_iter().map(|(b, _)| b).collect();
    // ground truth joins the roi pool so the box head always sees clean
    // positives, even before the RPN finds anything
    proposals.extend(gts.iter().copied());

    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for p in &proposals {
        let mut best = (usize::MAX, 0.0f64);
        for (gi, g) in gts.iter().enumerate() {
            let v = iou(p, g);
            if v > best.1 {
                best = (gi, v);
            }
        }
        if best.0 != usize::MAX && best.1 >= cfg.roi_pos_iou {
            fg.push(RoiSample {
                bbox: *p,
                class_target: labels[best.0].class_id,
                box_target: Some(encode_box(p, &gts[best.0])),
            });
        } else {
            bg.push(RoiSample { bbox: *p, class_target: cfg.num_classes, box_target: None });
        }
    }
    bg.shuffle(rng);
    bg.truncate((BG_PER_FG * fg.len()).max(4));
    let mut rois = fg;
    rois.append(&mut bg);

    LossPlan { rpn_obj, rpn_box, rois }
}

fn compute(det: &Detector, fwd: &Forward, plan: &LossPlan) -> (f64, DetGrads) {
    let cfg = &det.cfg;
    let (_, hf, wf) = fwd.fdual.v.dim();
    let a_ch = cfg.num_anchors();
    let obj_dim = fwd.obj.v.dim();
    let reg_dim = fwd.reg.v.dim();

    let mut total = 0.0;

    // objectness: mean binary cross entropy over sampled anchors
    let obj_idx: Vec<usize> = plan.rpn_obj.iter().map(|&(i, _)| i).collect();
    let obj_logits = gather_obj(&fwd.obj, &obj_idx, wf);
    let targets = Array1::from_iter(plan.rpn_obj.iter().map(|&(_, t)| t));
    let n_obj = obj_idx.len().max(1);
    let weights = Array1::from_elem(obj_idx.len(), 1.0 / n_obj as f64);
    let (l_obj, g_obj_gathered) = crate::nn::dual::bce_with_logits(&obj_logits, &targets, &weights);
    total += l_obj.v;
    let g_obj_map = scatter_obj(obj_dim, &obj_idx, wf, &g_obj_gathered);

    // box regression: smooth l1 summed over coordinates, per positive anchor
    let box_idx: Vec<usize> = plan.rpn_box.iter().map(|&(i, _)| i).collect();
    let n_pos = box_idx.len().max(1);
    let g_reg_map = if box_idx.is_empty() {
        Dual3::plain(Array3::zeros(reg_dim))
    } else {
        let preds = gather_reg(&fwd.reg, &box_idx, a_ch, wf);
        let mut t = Vec::with_capacity(4 * box_idx.len());
        for (_, tt) in &plan.rpn_box {
            t.extend_from_slice(tt);
        }
        let targets = Array1::from(t);
        let weights = Array1::from_elem(4 * box_idx.len(), 1.0 / n_pos as f64);
        let (l_box, g) = smooth_l1(&preds, &targets, &weights);
        total += l_box.v;
        scatter_reg(reg_dim, &box_idx, a_ch, wf, &g)
    };

    let (g_fmap_rpn, rpn_grads) = det.rpn.backward(&fwd.rpn_cache, &g_obj_map, &g_reg_map);

    // box head terms, one roi at a time
    let n_roi = plan.rois.len().max(1);
    let n_fg = plan.rois.iter().filter(|r| r.box_target.is_some()).count().max(1);
    let mut g_fmap = g_fmap_rpn;
    let mut roi_grads: Option<RoiGrads> = None;
    for roi in &plan.rois {
        let cells = box_to_cells(&roi.bbox, cfg.stride(), hf, wf)
            .unwrap_or(CellRect { y0: 0, y1: hf, x0: 0, x1: wf });
        let (patch, pcache) = adaptive_pool(&fwd.fdual, cells, cfg.roi_pool);
        let flat = flatten3(&patch);
        let (cls, reg, rcache) = det.roi.forward(&flat);

        let (ce, mut g_cls) = softmax_ce(&cls, roi.class_target);
        total += ce.v / n_roi as f64;
        g_cls = g_cls.scale(1.0 / n_roi as f64);

        let g_reg = match &roi.box_target {
            Some(t) => {
                let targets = Array1::from(t.to_vec());
                let weights = Array1::from_elem(4, 1.0 / n_fg as f64);
                let (l, g) = smooth_l1(&reg, &targets, &weights);
                total += l.v;
                g
            }
            None => reg.zeros_like(),
        };

        let (g_patch_flat, grads) = det.roi.backward(&rcache, &g_cls, &g_reg);
        let g_patch = unflatten3(&g_patch_flat, patch.v.dim());
        let g_map = adaptive_pool_backward(&pcache, &g_patch);
        g_fmap.axpy(&g_map, 1.0);
        match &mut roi_grads {
            Some(acc) => acc.add_assign(&grads),
            None => roi_grads = Some(grads),
        }
    }

    let bb_grads = det.backbone.backward(&fwd.bb_cache, &g_fmap);

    let mut f = Vec::with_capacity(det.theta_f_len());
    bb_grads.write_flat(&mut f);
    let mut d = Vec::with_capacity(det.theta_d_len());
    rpn_grads.write_flat(&mut d);
    match roi_grads {
        Some(g) => g.write_flat(&mut d),
        None => d.extend(std::iter::repeat(0.0).take(det.roi.flat_len())),
    }
    (total, DetGrads { f, d })
}

/// One forward pass, target assignment, loss and gradients.
pub fn detection_loss(
    det: &Detector,
    pixels: &Array3<f64>,
    labels: &[BoxLabel],
    rng: &mut ChaCha12Rng,
) -> (f64, DetGrads, LossPlan) {
    let fwd = forward(det, pixels);
    let plan = build_plan(det, &fwd.obj.v, &fwd.reg.v, labels, rng);
    let (loss, grads) = compute(det, &fwd, &plan);
    (loss, grads, plan)
}

/// Loss at the current parameters under a frozen plan.
pub fn detection_loss_value(det: &Detector, pixels: &Array3<f64>, plan: &LossPlan) -> f64 {
    let fwd = forward(det, pixels);
    compute(det, &fwd, plan).0
}
