//! Command implementations behind the CLI.
//!
//! Every command materializes one artifact directory containing exactly
//! one `manifest.json` (command, config snapshot, seed, input checksums,
//! output checksums, wall-clock timings) next to its data files. Paths
//! passed on the command line resolve against the `OSDA_OUT` environment
//! variable when they are relative, so batch scripts can retarget a whole
//! run tree by exporting one variable.

pub mod plot;

use crate::adapt::{adapt_batch, write_predictions, AdaptConfig};
use crate::detcore::DetectorConfig;
use crate::error::{Error, Result};
use crate::evalkit::{iterations_curve, tide_decompose, write_curve_csv, ImageEval};
use crate::kv::{dedup_last, parse_field, parse_kv};
use crate::rng::substream;
use crate::synthgen::{
    apply_domain_shift, dir_checksum, generate_scene, load_domain, write_domain, AnnotatedImage,
    DomainSpec, SceneSpec,
};
use crate::train::{strategy_for, Checkpoint, TrainConfig};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Environment variable naming the root that relative output paths
/// resolve against.
pub const OUT_ROOT_ENV: &str = "OSDA_OUT";

/// Iteration sweep evaluated by `curve` and `adapt-eval --curve`.
pub const SWEEP_GAMMAS: [usize; 9] = [0, 1, 2, 5, 10, 15, 20, 30, 50];

pub const METRICS_HEADER: &str = "variant,domain,gamma,mAP,cls,loc,both,dupe,bkg,miss";

/// Provenance record, one per artifact directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Effective configuration after file and CLI overrides.
    pub config: Vec<(String, String)>,
    pub seed: u64,
    /// `(path, sha256)` of every input artifact read.
    pub inputs: Vec<(String, String)>,
    /// `(path, sha256)` of every output artifact written.
    pub outputs: Vec<(String, String)>,
    /// `(label, seconds)` wall-clock entries.
    pub timings: Vec<(String, f64)>,
}

impl RunManifest {
    fn new(command: &str, seed: u64) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            config: Vec::new(),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
        }
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<RunManifest> {
        let path = dir.join("manifest.json");
        if !path.exists() {
            return Err(Error::MissingInput(format!("manifest not found: {}", path.display())));
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Resolve a user-supplied path: absolute paths pass through, relative
/// ones land under `$OSDA_OUT` (or the working directory when unset).
pub fn resolve_path(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) => PathBuf::from(root).join(path),
        None => path.to_path_buf(),
    }
}

/// Create a fresh artifact directory. An existing non-empty directory is
/// refused unless `force` is set, in which case it is replaced.
pub fn prepare_out_dir(path: &Path, force: bool) -> Result<PathBuf> {
    let dir = resolve_path(path);
    if dir.exists() && fs::read_dir(&dir)?.next().is_some() {
        if !force {
            return Err(Error::Config(format!(
                "output directory {} is not empty; pass --force to replace it",
                dir.display()
            )));
        }
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

pub fn file_checksum(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(fs::read(path)?);
    Ok(format!("{:x}", h.finalize()))
}

/// Read a flat key=value config file (optional) and append CLI overrides;
/// later occurrences win.
pub fn load_config(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Vec<(String, String)>> {
    let mut pairs = match file {
        Some(p) => {
            if !p.exists() {
                return Err(Error::MissingInput(format!("config file not found: {}", p.display())));
            }
            parse_kv(&fs::read_to_string(p)?)?
        }
        None => Vec::new(),
    };
    pairs.extend(overrides.iter().cloned());
    Ok(dedup_last(&pairs))
}

fn snapshot<T: Serialize>(value: &T) -> Vec<(String, String)> {
    let mut out = Vec::new();
    if let Ok(serde_json::Value::Object(map)) = serde_json::to_value(value) {
        for (k, v) in map {
            let text = match v {
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            };
            out.push((k, text));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// gen-data

#[derive(Clone, Debug, Serialize)]
pub struct GenConfig {
    pub seed: u64,
    pub train_images: usize,
    pub val_images: usize,
    pub target_images: usize,
    pub image_size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_size: f64,
    pub max_size: f64,
    pub cue_strength: f64,
    /// `name=chain;name=chain`, chains in the transform registry syntax.
    pub targets: String,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 7,
            train_images: 64,
            val_images: 16,
            target_images: 32,
            image_size: 96,
            min_objects: 1,
            max_objects: 4,
            min_size: 20.0,
            max_size: 44.0,
            cue_strength: 0.38,
            targets: "fog=fog:0.6;paint=palette:1,texture:0.3;sketch=edge:0.7,noise:0.04"
                .to_string(),
        }
    }
}

impl GenConfig {
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<GenConfig> {
        let mut cfg = GenConfig::default();
        for (key, value) in pairs {
            match key.as_str() {
                "seed" => cfg.seed = parse_field(key, value)?,
                "train_images" => cfg.train_images = parse_field(key, value)?,
                "val_images" => cfg.val_images = parse_field(key, value)?,
                "target_images" => cfg.target_images = parse_field(key, value)?,
                "image_size" => cfg.image_size = parse_field(key, value)?,
                "min_objects" => cfg.min_objects = parse_field(key, value)?,
                "max_objects" => cfg.max_objects = parse_field(key, value)?,
                "min_size" => cfg.min_size = parse_field(key, value)?,
                "max_size" => cfg.max_size = parse_field(key, value)?,
                "cue_strength" => cfg.cue_strength = parse_field(key, value)?,
                "targets" => cfg.targets = value.clone(),
                other => {
                    return Err(Error::Config(format!(
                        "unknown gen-data key '{other}' (known: seed, train_images, val_images, \
                         target_images, image_size, min_objects, max_objects, min_size, max_size, \
                         cue_strength, targets)"
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.train_images == 0 || self.val_images == 0 || self.target_images == 0 {
            problems.push("image counts must all be >= 1".to_string());
        }
        if self.min_objects == 0 || self.max_objects < self.min_objects {
            problems.push(format!(
                "object count range ({}, {}) invalid",
                self.min_objects, self.max_objects
            ));
        }
        if !(self.min_size > 0.0) || self.max_size < self.min_size {
            problems.push(format!("size range ({}, {}) invalid", self.min_size, self.max_size));
        }
        let n = self.targets.split(';').filter(|s| !s.trim().is_empty()).count();
        if !(1..=8).contains(&n) {
            problems.push(format!("target domain count {n} outside 1..=8"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn domains(&self) -> Result<Vec<DomainSpec>> {
        let mut out = Vec::new();
        for entry in self.targets.split(';').filter(|s| !s.trim().is_empty()) {
            let (name, chain) = entry.split_once('=').ok_or_else(|| {
                Error::Config(format!("target entry '{entry}' is not name=chain"))
            })?;
            out.push(DomainSpec::parse(name.trim(), chain.trim(), self.seed)?);
        }
        Ok(out)
    }

    fn scene_spec(&self) -> SceneSpec {
        SceneSpec {
            width: self.image_size,
            height: self.image_size,
            num_objects: (self.min_objects, self.max_objects),
            size_range: (self.min_size, self.max_size),
            cue_strength: self.cue_strength,
            ..SceneSpec::default()
        }
    }
}

fn render_split(cfg: &GenConfig, scope: &str, count: usize) -> Result<Vec<AnnotatedImage>> {
    let spec = cfg.scene_spec();
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let id = format!("{scope}{i:04}");
        let mut rng = substream(cfg.seed, &["gen", scope, &id]);
        out.push(generate_scene(&spec, &id, &mut rng)?);
    }
    Ok(out)
}

/// Generate the source train/val splits plus one shifted dataset per
/// target domain under `out`.
pub fn cmd_gen_data(out: &Path, pairs: &[(String, String)], force: bool) -> Result<RunManifest> {
    let cfg = GenConfig::from_pairs(pairs)?;
    let domains = cfg.domains()?;
    let dir = prepare_out_dir(out, force)?;
    let t0 = Instant::now();

    let mut manifest = RunManifest::new("gen-data", cfg.seed);
    manifest.config = snapshot(&cfg);

    let mut emit = |rel: &str, images: &[AnnotatedImage], extra: &[(String, String)]| -> Result<()> {
        let sub = dir.join(rel);
        let mut meta = vec![
            ("seed".to_string(), cfg.seed.to_string()),
            ("count".to_string(), images.len().to_string()),
        ];
        meta.extend(extra.iter().cloned());
        write_domain(&sub, images, &meta)?;
        manifest.outputs.push((rel.to_string(), dir_checksum(&sub)?));
        Ok(())
    };

    let train = render_split(&cfg, "tr", cfg.train_images)?;
    emit("source/train", &train, &[("split".to_string(), "train".to_string())])?;
    let val = render_split(&cfg, "va", cfg.val_images)?;
    emit("source/val", &val, &[("split".to_string(), "val".to_string())])?;

    for domain in &domains {
        let scope = format!("{}-", domain.name);
        let base = render_split(&cfg, &scope, cfg.target_images)?;
        let shifted: Vec<AnnotatedImage> =
            base.iter().map(|img| apply_domain_shift(img, domain)).collect();
        emit(
            &format!("targets/{}", domain.name),
            &shifted,
            &[
                ("domain".to_string(), domain.name.clone()),
                ("chain".to_string(), domain.chain_text.clone()),
            ],
        )?;
    }

    manifest.timings.push(("total".to_string(), t0.elapsed().as_secs_f64()));
    manifest.save(&dir)?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// train

/// Split a mixed config into training keys and `det.`-prefixed detector
/// keys.
fn split_det_pairs(
    pairs: &[(String, String)],
) -> (Vec<(String, String)>, Vec<(String, String)>) {
    let mut train = Vec::new();
    let mut det = Vec::new();
    for (k, v) in pairs {
        match k.strip_prefix("det.") {
            Some(rest) => det.push((rest.to_string(), v.clone())),
            None => train.push((k.clone(), v.clone())),
        }
    }
    (train, det)
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|s| parse_field::<T>(key, s.trim()))
        .collect()
}

pub fn det_config_from_pairs(
    mut cfg: DetectorConfig,
    pairs: &[(String, String)],
) -> Result<DetectorConfig> {
    for (key, value) in pairs {
        match key.as_str() {
            "image_size" => cfg.image_size = parse_field(key, value)?,
            "num_classes" => cfg.num_classes = parse_field(key, value)?,
            "channels" => cfg.channels = parse_list(key, value)?,
            "block_strides" => cfg.block_strides = parse_list(key, value)?,
            "gn_groups" => cfg.gn_groups = parse_field(key, value)?,
            "anchor_scales" => cfg.anchor_scales = parse_list(key, value)?,
            "anchor_ratios" => cfg.anchor_ratios = parse_list(key, value)?,
            "rpn_nms_iou" => cfg.rpn_nms_iou = parse_field(key, value)?,
            "rpn_train_topn" => cfg.rpn_train_topn = parse_field(key, value)?,
            "rpn_eval_topn" => cfg.rpn_eval_topn = parse_field(key, value)?,
            "roi_pool" => cfg.roi_pool = parse_field(key, value)?,
            "roi_fc" => cfg.roi_fc = parse_field(key, value)?,
            "cls_nms_iou" => cfg.cls_nms_iou = parse_field(key, value)?,
            "eval_score_thresh" => cfg.eval_score_thresh = parse_field(key, value)?,
            "anchor_pos_iou" => cfg.anchor_pos_iou = parse_field(key, value)?,
            "anchor_neg_iou" => cfg.anchor_neg_iou = parse_field(key, value)?,
            "roi_pos_iou" => cfg.roi_pos_iou = parse_field(key, value)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown detector key 'det.{other}' (known: image_size, num_classes, \
                     channels, block_strides, gn_groups, anchor_scales, anchor_ratios, \
                     rpn_nms_iou, rpn_train_topn, rpn_eval_topn, roi_pool, roi_fc, cls_nms_iou, \
                     eval_score_thresh, anchor_pos_iou, anchor_neg_iou, roi_pos_iou)"
                )))
            }
        }
    }
    Ok(cfg)
}

/// Pretrain on `data/source/{train,val}` and write `checkpoint.bin` plus
/// the per-epoch `metrics.csv`. A numerical fault still writes both (the
/// checkpoint holds the last finite epoch) and then surfaces as an error.
pub fn cmd_train(
    data: &Path,
    out: &Path,
    pairs: &[(String, String)],
    init: Option<&Path>,
    force: bool,
) -> Result<RunManifest> {
    let (train_pairs, det_pairs) = split_det_pairs(pairs);
    let cfg = TrainConfig::from_pairs(&train_pairs)?;

    let data = resolve_path(data);
    let train_dir = data.join("source/train");
    let val_dir = data.join("source/val");
    let train = load_domain(&train_dir)?;
    let val = load_domain(&val_dir)?;
    if train.is_empty() {
        return Err(Error::MissingInput(format!("no images under {}", train_dir.display())));
    }

    let mut det_cfg = DetectorConfig { image_size: train[0].width(), ..DetectorConfig::default() };
    det_cfg = det_config_from_pairs(det_cfg, &det_pairs)?;
    if det_cfg.image_size != train[0].width() {
        return Err(Error::Config(format!(
            "det.image_size {} does not match dataset image size {}",
            det_cfg.image_size,
            train[0].width()
        )));
    }

    let warm = match init {
        Some(p) => Some(Checkpoint::load(&resolve_path(p))?),
        None => None,
    };

    let strategy = strategy_for(&cfg.variant)?;
    let dir = prepare_out_dir(out, force)?;

    let mut manifest = RunManifest::new("train", cfg.seed);
    manifest.config = snapshot(&cfg);
    manifest.config.extend(det_pairs.iter().map(|(k, v)| (format!("det.{k}"), v.clone())));
    manifest.inputs.push((train_dir.display().to_string(), dir_checksum(&train_dir)?));
    manifest.inputs.push((val_dir.display().to_string(), dir_checksum(&val_dir)?));
    if let Some(p) = init {
        let p = resolve_path(p);
        manifest.inputs.push((p.display().to_string(), file_checksum(&p)?));
    }

    let t0 = Instant::now();
    let outcome = strategy.run(&train, &val, &det_cfg, &cfg, warm.as_ref())?;
    manifest.timings.push(("pretrain".to_string(), t0.elapsed().as_secs_f64()));

    let ckpt_path = dir.join("checkpoint.bin");
    let csv_path = dir.join("metrics.csv");
    outcome.checkpoint.save(&ckpt_path)?;
    outcome.checkpoint.write_metrics_csv(&csv_path)?;
    manifest.outputs.push(("checkpoint.bin".to_string(), file_checksum(&ckpt_path)?));
    manifest.outputs.push(("metrics.csv".to_string(), file_checksum(&csv_path)?));
    manifest.save(&dir)?;

    if outcome.faulted {
        return Err(Error::TrainingFault(
            "training diverged; checkpoint holds the last finite epoch".to_string(),
        ));
    }
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// adapt-eval

#[derive(Clone, Debug, Serialize)]
pub struct EvalConfig {
    /// Iteration counts to evaluate, ascending.
    pub gammas: Vec<usize>,
    pub inner_lr: f64,
    pub pseudo_thresh: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let a = AdaptConfig::default();
        EvalConfig {
            gammas: vec![a.gamma],
            inner_lr: a.inner_lr,
            pseudo_thresh: a.pseudo_thresh,
            seed: a.seed,
        }
    }
}

impl EvalConfig {
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<EvalConfig> {
        let mut cfg = EvalConfig::default();
        for (key, value) in pairs {
            match key.as_str() {
                "gamma" => {
                    cfg.gammas = parse_list(key, value)?;
                    cfg.gammas.sort_unstable();
                    cfg.gammas.dedup();
                }
                "inner_lr" => cfg.inner_lr = parse_field(key, value)?,
                "pseudo_thresh" => cfg.pseudo_thresh = parse_field(key, value)?,
                "seed" => cfg.seed = parse_field(key, value)?,
                other => {
                    return Err(Error::Config(format!(
                        "unknown adapt key '{other}' (known: gamma, inner_lr, pseudo_thresh, seed)"
                    )))
                }
            }
        }
        if cfg.gammas.is_empty() {
            return Err(Error::Config("gamma list is empty".to_string()));
        }
        if !(cfg.inner_lr > 0.0 && cfg.inner_lr.is_finite()) {
            return Err(Error::Config(format!("inner_lr {} must be positive", cfg.inner_lr)));
        }
        if !(cfg.pseudo_thresh > 0.0 && cfg.pseudo_thresh.is_finite()) {
            return Err(Error::Config(format!(
                "pseudo_thresh {} must be positive",
                cfg.pseudo_thresh
            )));
        }
        Ok(cfg)
    }

    fn adapt(&self, gamma: usize) -> AdaptConfig {
        AdaptConfig {
            gamma,
            inner_lr: self.inner_lr,
            pseudo_thresh: self.pseudo_thresh,
            seed: self.seed,
        }
    }
}

/// One `metrics.csv` row.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub variant: String,
    pub domain: String,
    pub gamma: usize,
    pub map50: f64,
    /// cls, loc, both, dupe, bkg, miss error counts.
    pub counts: [usize; 6],
}

pub fn write_eval_rows(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{},{},{}", r.variant, r.domain, r.gamma, r.map50);
        for c in r.counts {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_eval_rows(path: &Path) -> Result<Vec<EvalRow>> {
    if !path.exists() {
        return Err(Error::MissingInput(format!("metrics not found: {}", path.display())));
    }
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        other => {
            return Err(Error::Config(format!(
                "{}: bad metrics header {:?}",
                path.display(),
                other
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 10 {
            return Err(Error::Config(format!(
                "{} line {}: expected 10 columns, got {}",
                path.display(),
                i + 2,
                cols.len()
            )));
        }
        let mut counts = [0usize; 6];
        for (slot, col) in counts.iter_mut().zip(&cols[4..]) {
            *slot = parse_field("error count", col)?;
        }
        rows.push(EvalRow {
            variant: cols[0].to_string(),
            domain: cols[1].to_string(),
            gamma: parse_field("gamma", cols[2])?,
            map50: parse_field("mAP", cols[3])?,
            counts,
        });
    }
    Ok(rows)
}

const SHARES_NOTE: &str = "Error columns are raw per-category counts; the histogram shows \
count-normalized shares. Neither is in mAP-impact units, so compare shares across runs, not \
against mAP deltas.\n";

/// Adapt a checkpoint on one or more target datasets and write metrics,
/// predictions and the error-decomposition histogram. Reads only the
/// checkpoint and the target directories.
pub fn cmd_adapt_eval(
    ckpt_path: &Path,
    targets: &[PathBuf],
    out: &Path,
    pairs: &[(String, String)],
    curve: bool,
    force: bool,
) -> Result<RunManifest> {
    let cfg = EvalConfig::from_pairs(pairs)?;
    if targets.is_empty() {
        return Err(Error::Config("adapt-eval needs at least one target dataset".to_string()));
    }
    let ckpt_path = resolve_path(ckpt_path);
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let (det, rot) = ckpt.build_model()?;
    let variant = ckpt.train_config.variant.clone();
    let nc = det.cfg.num_classes;

    let dir = prepare_out_dir(out, force)?;
    let mut manifest = RunManifest::new("adapt-eval", cfg.seed);
    manifest.config = snapshot(&cfg);
    manifest.config.push(("curve".to_string(), curve.to_string()));
    manifest.inputs.push((ckpt_path.display().to_string(), file_checksum(&ckpt_path)?));

    let mut rows = Vec::new();
    let push_output = |manifest: &mut RunManifest, dir: &Path, rel: String| -> Result<()> {
        let sum = file_checksum(&dir.join(&rel))?;
        manifest.outputs.push((rel, sum));
        Ok(())
    };

    for target in targets {
        let target = resolve_path(target);
        let name = target
            .file_name()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "target".to_string());
        let images = load_domain(&target)?;
        manifest.inputs.push((target.display().to_string(), dir_checksum(&target)?));

        let mut last_break = None;
        for &gamma in &cfg.gammas {
            let t0 = Instant::now();
            let preds = adapt_batch(&det, &rot, &images, &cfg.adapt(gamma));
            let secs = t0.elapsed().as_secs_f64();
            let faults = preds.iter().filter(|p| p.faulted).count();

            let rel = format!("preds-{name}-g{gamma}.jsonl");
            write_predictions(&dir.join(&rel), &preds)?;
            push_output(&mut manifest, &dir, rel)?;

            let evals: Vec<ImageEval> = preds
                .iter()
                .zip(&images)
                .map(|(p, img)| ImageEval { dets: p.detections.clone(), gts: img.labels.clone() })
                .collect();
            let breakdown = tide_decompose(&evals, nc, 0.5, 0.1);
            rows.push(EvalRow {
                variant: variant.clone(),
                domain: name.clone(),
                gamma,
                map50: breakdown.map50,
                counts: breakdown.counts(),
            });
            manifest
                .timings
                .push((format!("{name} gamma={gamma} secs/image"), secs / images.len() as f64));
            if faults > 0 {
                manifest.timings.push((format!("{name} gamma={gamma} faults"), faults as f64));
            }
            last_break = Some((gamma, breakdown));
        }

        if let Some((gamma, breakdown)) = last_break {
            let labels: Vec<String> =
                crate::evalkit::ERROR_NAMES.iter().map(|s| s.to_string()).collect();
            let rel = format!("errors-{name}.png");
            plot::bar_chart(
                &dir.join(&rel),
                &format!("{name} error shares gamma={gamma}"),
                &labels,
                &breakdown.shares(),
            )?;
            push_output(&mut manifest, &dir, rel)?;
        }

        if curve {
            let points = iterations_curve(
                &det,
                &rot,
                &images,
                &SWEEP_GAMMAS,
                cfg.inner_lr,
                cfg.pseudo_thresh,
                cfg.seed,
            );
            let rel_csv = format!("curve-{name}.csv");
            write_curve_csv(&dir.join(&rel_csv), &points)?;
            push_output(&mut manifest, &dir, rel_csv)?;
            let rel_png = format!("curve-{name}.png");
            let series =
                vec![(name.clone(), points.iter().map(|p| (p.gamma as f64, p.map50)).collect())];
            plot::line_chart(
                &dir.join(&rel_png),
                &format!("{name}: map vs gamma"),
                "gamma",
                "map",
                &series,
            )?;
            push_output(&mut manifest, &dir, rel_png)?;
        }
    }

    write_eval_rows(&dir.join("metrics.csv"), &rows)?;
    push_output(&mut manifest, &dir, "metrics.csv".to_string())?;
    fs::write(dir.join("notes.txt"), SHARES_NOTE)?;
    manifest.save(&dir)?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// curve

/// Dedicated iterations-curve run over one target dataset.
pub fn cmd_curve(
    ckpt_path: &Path,
    target: &Path,
    out: &Path,
    pairs: &[(String, String)],
    force: bool,
) -> Result<RunManifest> {
    // gamma list doubles as the sweep here
    let mut cfg = EvalConfig::from_pairs(pairs)?;
    if cfg.gammas == vec![AdaptConfig::default().gamma] {
        cfg.gammas = SWEEP_GAMMAS.to_vec();
    }
    let ckpt_path = resolve_path(ckpt_path);
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let (det, rot) = ckpt.build_model()?;
    let target = resolve_path(target);
    let images = load_domain(&target)?;

    let dir = prepare_out_dir(out, force)?;
    let mut manifest = RunManifest::new("curve", cfg.seed);
    manifest.config = snapshot(&cfg);
    manifest.inputs.push((ckpt_path.display().to_string(), file_checksum(&ckpt_path)?));
    manifest.inputs.push((target.display().to_string(), dir_checksum(&target)?));

    let t0 = Instant::now();
    let points = iterations_curve(
        &det,
        &rot,
        &images,
        &cfg.gammas,
        cfg.inner_lr,
        cfg.pseudo_thresh,
        cfg.seed,
    );
    manifest.timings.push(("sweep".to_string(), t0.elapsed().as_secs_f64()));

    write_curve_csv(&dir.join("curve.csv"), &points)?;
    let series = vec![(
        ckpt.train_config.variant.clone(),
        points.iter().map(|p| (p.gamma as f64, p.map50)).collect(),
    )];
    plot::line_chart(&dir.join("curve.png"), "map vs gamma", "gamma", "map", &series)?;
    manifest.outputs.push(("curve.csv".to_string(), file_checksum(&dir.join("curve.csv"))?));
    manifest.outputs.push(("curve.png".to_string(), file_checksum(&dir.join("curve.png"))?));
    manifest.save(&dir)?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// report

/// Merge the metrics of several adapt-eval runs into one report: a
/// combined CSV sorted by (variant, domain, gamma) and an mAP chart with
/// one series per variant/domain pair.
pub fn cmd_report(runs: &[PathBuf], out: &Path, force: bool) -> Result<RunManifest> {
    if runs.is_empty() {
        return Err(Error::Config("report needs at least one adapt-eval directory".to_string()));
    }
    let mut manifest = RunManifest::new("report", 0);
    let mut rows: Vec<EvalRow> = Vec::new();
    for run in runs {
        let run = resolve_path(run);
        let csv = run.join("metrics.csv");
        rows.extend(read_eval_rows(&csv)?);
        manifest.inputs.push((csv.display().to_string(), file_checksum(&csv)?));
    }
    rows.sort_by(|a, b| {
        (&a.variant, &a.domain, a.gamma).cmp(&(&b.variant, &b.domain, b.gamma))
    });

    let dir = prepare_out_dir(out, force)?;
    write_eval_rows(&dir.join("report.csv"), &rows)?;

    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for r in &rows {
        let key = format!("{}/{}", r.variant, r.domain);
        match series.iter_mut().find(|(k, _)| *k == key) {
            Some((_, pts)) => pts.push((r.gamma as f64, r.map50)),
            None => series.push((key, vec![(r.gamma as f64, r.map50)])),
        }
    }
    plot::line_chart(&dir.join("map.png"), "map vs gamma", "gamma", "map", &series)?;
    fs::write(dir.join("notes.txt"), SHARES_NOTE)?;

    manifest.outputs.push(("report.csv".to_string(), file_checksum(&dir.join("report.csv"))?));
    manifest.outputs.push(("map.png".to_string(), file_checksum(&dir.join("map.png"))?));
    manifest.save(&dir)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests;
