//! Scratch benchmark sizing harness (not part of the library surface).
//!
//! Modes:
//!   cache                    train + save baseline/oshot ckpts for seeds 1..3
//!   adapt <lr...>            eval oshot gamma 0/5 gains per seed per lr
//!   meta <inner_lr> <e:lr..> meta-stage grid vs cached oshot, per seed
//!   plateau <inner_lr>       seed-1 gamma 0/5/30/50 per domain

use osda_core::adapt::adapt_sweep;
use osda_core::detcore::{detect, Detector, DetectorConfig};
use osda_core::evalkit::{mean_ap, ImageEval};
use osda_core::rng::substream;
use osda_core::rotself::{full_image_box, rotation_accuracy, rotation_loss, RotHead};
use osda_core::synthgen::{
    apply_domain_shift, generate_scene, AnnotatedImage, DomainSpec, SceneSpec,
};
use osda_core::train::{strategy_for, Checkpoint, TrainConfig};
use std::time::Instant;

const SEEDS: [u64; 3] = [1, 2, 3];
const DOMAINS: [(&str, &str); 3] =
    [("fog", "fog:0.7"), ("sketch", "edge:0.6,noise:0.05"), ("grain", "texture:0.8,noise:0.08")];

fn det_cfg(image_size: usize) -> DetectorConfig {
    DetectorConfig {
        image_size,
        channels: vec![8, 12, 16, 24],
        block_strides: vec![1, 2, 1, 2],
        gn_groups: 4,
        anchor_scales: vec![14.0, 26.0],
        anchor_ratios: vec![1.0],
        rpn_train_topn: 32,
        rpn_eval_topn: 16,
        roi_pool: 4,
        roi_fc: 32,
        ..DetectorConfig::default()
    }
}

fn scene_spec(image_size: usize) -> SceneSpec {
    SceneSpec {
        width: image_size,
        height: image_size,
        num_objects: (1, 2),
        size_range: (18.0, 34.0),
        max_mutual_overlap: 0.3,
        ..SceneSpec::default()
    }
}

fn make_split(spec: &SceneSpec, scope: &str, n: usize, seed: u64) -> Vec<AnnotatedImage> {
    (0..n)
        .map(|i| {
            let id = format!("{scope}{i:04}");
            generate_scene(spec, &id, &mut substream(seed, &["gen", scope, &id])).unwrap()
        })
        .collect()
}

fn targets_for(spec: &SceneSpec, seed: u64, n: usize) -> Vec<(String, Vec<AnnotatedImage>)> {
    DOMAINS
        .iter()
        .map(|(name, chain)| {
            let d = DomainSpec::parse(name, chain, seed).unwrap();
            let base = make_split(spec, &format!("{name}-"), n, seed);
            (name.to_string(), base.iter().map(|i| apply_domain_shift(i, &d)).collect())
        })
        .collect()
}

fn map50(det: &Detector, images: &[AnnotatedImage]) -> f64 {
    let evals: Vec<ImageEval> = images
        .iter()
        .map(|img| ImageEval { dets: detect(det, &img.pixels), gts: img.labels.clone() })
        .collect();
    mean_ap(&evals, det.cfg.num_classes, 0.5).map
}

fn rot_loss_full(det: &Detector, rot: &RotHead, pixels: &ndarray::Array3<f64>) -> f64 {
    let (h, w, _) = pixels.dim();
    let bx = full_image_box(w, h);
    (0..4).map(|q| rotation_loss(det, rot, pixels, &[bx], q).loss).sum::<f64>() / 4.0
}

fn pretrain(
    variant: &str,
    train: &[AnnotatedImage],
    val: &[AnnotatedImage],
    dcfg: &DetectorConfig,
    base: &TrainConfig,
    warm: Option<&Checkpoint>,
) -> Checkpoint {
    let mut tc = base.clone();
    tc.variant = variant.into();
    let t0 = Instant::now();
    let out = strategy_for(variant).unwrap().run(train, val, dcfg, &tc, warm).unwrap();
    eprintln!("  {variant}: {:.0}s  faulted {}", t0.elapsed().as_secs_f64(), out.faulted);
    out.checkpoint
}

fn base_tc(seed: u64) -> TrainConfig {
    let mut tc = TrainConfig::default();
    tc.epochs = 120;
    tc.lambda = 0.1;
    tc.lr = 0.02;
    tc.lr_decay = 0.985;
    tc.inner_lr = 1e-3;
    tc.batch_size = 2;
    tc.seed = seed;
    tc
}

fn ckpt_path(kind: &str, seed: u64) -> std::path::PathBuf {
    std::path::PathBuf::from(format!("/tmp/osda-acc-{kind}-{seed}.ckpt"))
}

fn cmd_cache() {
    let dcfg = det_cfg(64);
    let spec = scene_spec(64);
    for seed in SEEDS {
        let train = make_split(&spec, "tr", 224, seed);
        let val = make_split(&spec, "va", 48, seed);
        let tc = base_tc(seed);
        eprintln!("seed {seed}:");
        let ck_b = pretrain("baseline", &train, &val, &dcfg, &tc, None);
        ck_b.save(&ckpt_path("base", seed)).unwrap();
        let ck_o = pretrain("oshot", &train, &val, &dcfg, &tc, None);
        ck_o.save(&ckpt_path("oshot", seed)).unwrap();
        let (det_o, rot_o) = ck_o.build_model().unwrap();
        println!(
            "seed {seed}: src-val {:.4} rot-acc {:.3}",
            map50(&det_o, &val),
            rotation_accuracy(&det_o, &rot_o, &val)
        );
    }
}

/// Pooled and per-domain gamma 0/5 numbers for one model.
struct EvalOut {
    pooled0: f64,
    pooled5: f64,
    dom0: Vec<f64>,
    dom5: Vec<f64>,
    descend: usize,
    total: usize,
}

fn eval_sweep(det: &Detector, rot: &RotHead, targets: &[(String, Vec<AnnotatedImage>)], inner_lr: f64, thresh: f64) -> EvalOut {
    let mut pool0 = Vec::new();
    let mut pool5 = Vec::new();
    let mut dom0 = Vec::new();
    let mut dom5 = Vec::new();
    let mut descend = 0usize;
    let mut total = 0usize;
    for (_, imgs) in targets {
        let mut e0 = Vec::new();
        let mut e5 = Vec::new();
        for img in imgs {
            let mut rng = substream(7, &["adapt", &img.id]);
            let sw = adapt_sweep(det, rot, &img.pixels, &[0, 5], inner_lr, thresh, &mut rng);
            e0.push(ImageEval { dets: sw.points[0].detections.clone(), gts: img.labels.clone() });
            e5.push(ImageEval { dets: sw.points[1].detections.clone(), gts: img.labels.clone() });
            let l0 = rot_loss_full(det, rot, &img.pixels);
            let l5 = rot_loss_full(&sw.det, &sw.rot, &img.pixels);
            descend += usize::from(l5 < l0);
            total += 1;
        }
        dom0.push(mean_ap(&e0, det.cfg.num_classes, 0.5).map);
        dom5.push(mean_ap(&e5, det.cfg.num_classes, 0.5).map);
        pool0.extend(e0);
        pool5.extend(e5);
    }
    EvalOut {
        pooled0: mean_ap(&pool0, det.cfg.num_classes, 0.5).map,
        pooled5: mean_ap(&pool5, det.cfg.num_classes, 0.5).map,
        dom0,
        dom5,
        descend,
        total,
    }
}

fn cmd_adapt(lrs: &[f64], thresh: f64, n_targets: usize) {
    let spec = scene_spec(64);
    for seed in SEEDS {
        let targets = targets_for(&spec, seed, n_targets);
        let ck_o = Checkpoint::load(&ckpt_path("oshot", seed)).unwrap();
        let (det_o, rot_o) = ck_o.build_model().unwrap();
        let ck_b = Checkpoint::load(&ckpt_path("base", seed)).unwrap();
        let (det_b, _) = ck_b.build_model().unwrap();
        let mut pool_b = Vec::new();
        let mut dom_b = Vec::new();
        for (_, imgs) in &targets {
            let evals: Vec<ImageEval> = imgs
                .iter()
                .map(|img| ImageEval { dets: detect(&det_b, &img.pixels), gts: img.labels.clone() })
                .collect();
            dom_b.push(mean_ap(&evals, det_b.cfg.num_classes, 0.5).map);
            pool_b.extend(evals);
        }
        let mb = mean_ap(&pool_b, det_b.cfg.num_classes, 0.5).map;
        for &lr in lrs {
            let t0 = Instant::now();
            let e = eval_sweep(&det_o, &rot_o, &targets, lr, thresh);
            let dg: Vec<String> = e
                .dom0
                .iter()
                .zip(&e.dom5)
                .map(|(a, b)| format!("{:+.2}", (b - a) * 100.0))
                .collect();
            let mean_dom_gain: f64 = e
                .dom0
                .iter()
                .zip(&e.dom5)
                .map(|(a, b)| (b - a) * 100.0)
                .sum::<f64>()
                / e.dom0.len() as f64;
            println!(
                "seed {seed} lr {lr:.0e}: base {mb:.4} | g0 {:.4} g5 {:.4} gain {:+.2}pt dom [{}] mean-dom {mean_dom_gain:+.2}pt | desc {}/{} | {:.0}s",
                e.pooled0,
                e.pooled5,
                (e.pooled5 - e.pooled0) * 100.0,
                dg.join(" "),
                e.descend,
                e.total,
                t0.elapsed().as_secs_f64()
            );
        }
        let db: Vec<String> = dom_b.iter().map(|v| format!("{v:.3}")).collect();
        println!("seed {seed} baseline dom [{}]", db.join(" "));
    }
}

fn cmd_meta(inner_lr: f64, combos: &[(usize, f64, usize, usize)], n_targets: usize) {
    let dcfg = det_cfg(64);
    let spec = scene_spec(64);
    for seed in SEEDS {
        let train = make_split(&spec, "tr", 224, seed);
        let val = make_split(&spec, "va", 48, seed);
        let targets = targets_for(&spec, seed, n_targets);
        let ck_o = Checkpoint::load(&ckpt_path("oshot", seed)).unwrap();
        let (det_o, rot_o) = ck_o.build_model().unwrap();
        let ref_eval = eval_sweep(&det_o, &rot_o, &targets, inner_lr, 0.8);
        println!("seed {seed}: oshot g5 {:.4} (g0 {:.4})", ref_eval.pooled5, ref_eval.pooled0);
        for &(epochs, outer_lr, k, eta) in combos {
            let mut mc = base_tc(seed);
            mc.epochs = epochs;
            mc.k = k;
            mc.eta = eta;
            mc.inner_lr = inner_lr;
            mc.outer_lr = outer_lr;
            let ck_f = pretrain("full-oshot", &train, &val, &dcfg, &mc, Some(&ck_o));
            let (det_f, rot_f) = ck_f.build_model().unwrap();
            let e = eval_sweep(&det_f, &rot_f, &targets, inner_lr, 0.8);
            println!(
                "  e{epochs} olr {outer_lr:.0e} k{k} eta{eta}: full g5 {:.4} vs oshot {:.4} ({:+.2}pt) src {:.4}",
                e.pooled5,
                ref_eval.pooled5,
                (e.pooled5 - ref_eval.pooled5) * 100.0,
                map50(&det_f, &val)
            );
        }
    }
}

fn cmd_plateau(inner_lr: f64, seed: u64) {
    let spec = scene_spec(64);
    let targets = targets_for(&spec, seed, 34);
    let ck = Checkpoint::load(&ckpt_path("oshot", seed)).unwrap();
    let (det, rot) = ck.build_model().unwrap();
    for (name, imgs) in &targets {
        let mut evals: Vec<Vec<ImageEval>> = vec![Vec::new(); 4];
        for img in imgs {
            let mut rng = substream(7, &["adapt", &img.id]);
            let sw = adapt_sweep(&det, &rot, &img.pixels, &[0, 5, 30, 50], inner_lr, 0.8, &mut rng);
            for (slot, point) in evals.iter_mut().zip(&sw.points) {
                slot.push(ImageEval { dets: point.detections.clone(), gts: img.labels.clone() });
            }
        }
        let maps: Vec<f64> = evals.iter().map(|e| mean_ap(e, det.cfg.num_classes, 0.5).map).collect();
        println!(
            "seed {seed} {name:7} g0 {:.4} g5 {:.4} g30 {:.4} g50 {:.4} plateau {:+.2}pt",
            maps[0],
            maps[1],
            maps[2],
            maps[3],
            (maps[3] - maps[2]) * 100.0
        );
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("");
    match mode {
        "cache" => cmd_cache(),
        "adapt" => {
            let lrs: Vec<f64> = args[2..].iter().filter_map(|s| s.parse().ok()).collect();
            let lrs = if lrs.is_empty() { vec![1e-3] } else { lrs };
            cmd_adapt(&lrs, 0.8, 34);
        }
        "adapt-thresh" => {
            let thresh = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.8);
            cmd_adapt(&[1e-3], thresh, 34);
        }
        "meta" => {
            let inner_lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
            // combos like 2:1e-4:2:2 (epochs:outer_lr:k:eta)
            let combos: Vec<(usize, f64, usize, usize)> = args[3..]
                .iter()
                .filter_map(|s| {
                    let p: Vec<&str> = s.split(':').collect();
                    Some((p[0].parse().ok()?, p[1].parse().ok()?, p[2].parse().ok()?, p[3].parse().ok()?))
                })
                .collect();
            cmd_meta(inner_lr, &combos, 34);
        }
        "plateau" => {
            let inner_lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
            let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1);
            cmd_plateau(inner_lr, seed);
        }
        other => eprintln!("unknown mode '{other}' (cache | adapt | adapt-thresh | meta | plateau)"),
    }
}
