use super::*;
use crate::detcore::detect;

fn fresh_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("osda-pipe-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn pairs(kv: &[(&str, &str)]) -> Vec<(String, String)> {
    kv.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn mini_gen_pairs() -> Vec<(String, String)> {
    pairs(&[
        ("seed", "11"),
        ("train_images", "3"),
        ("val_images", "2"),
        ("target_images", "2"),
        ("image_size", "32"),
        ("min_objects", "1"),
        ("max_objects", "2"),
        ("min_size", "10"),
        ("max_size", "18"),
        ("targets", "fog=fog:0.6"),
    ])
}

fn mini_train_pairs() -> Vec<(String, String)> {
    pairs(&[
        ("variant", "baseline"),
        ("epochs", "2"),
        ("batch_size", "2"),
        ("seed", "5"),
        ("det.channels", "4,6"),
        ("det.block_strides", "1,2"),
        ("det.gn_groups", "2"),
        ("det.anchor_scales", "8,14"),
        ("det.anchor_ratios", "1.0"),
        ("det.roi_pool", "3"),
        ("det.roi_fc", "8"),
        ("det.rpn_train_topn", "12"),
        ("det.rpn_eval_topn", "8"),
    ])
}

/// gen-data + train into `root`, returning (data dir, checkpoint path).
fn small_run(root: &Path) -> (PathBuf, PathBuf) {
    let data = root.join("data");
    cmd_gen_data(&data, &mini_gen_pairs(), false).unwrap();
    let run = root.join("pretrain");
    cmd_train(&data, &run, &mini_train_pairs(), None, false).unwrap();
    (data, run.join("checkpoint.bin"))
}

#[test]
fn gen_data_is_reproducible_and_refuses_overwrite() {
    let root = fresh_dir("gen");
    let m1 = cmd_gen_data(&root.join("a"), &mini_gen_pairs(), false).unwrap();
    let m2 = cmd_gen_data(&root.join("b"), &mini_gen_pairs(), false).unwrap();
    assert_eq!(m1.outputs.len(), 3);
    for ((rel_a, sum_a), (rel_b, sum_b)) in m1.outputs.iter().zip(&m2.outputs) {
        assert_eq!(rel_a, rel_b);
        assert_eq!(sum_a, sum_b, "checksum drift for {rel_a}");
    }
    // different seed changes every split
    let mut other = mini_gen_pairs();
    other.push(("seed".to_string(), "12".to_string()));
    let m3 = cmd_gen_data(&root.join("c"), &dedup_last(&other), false).unwrap();
    for ((rel, sum), (_, sum3)) in m1.outputs.iter().zip(&m3.outputs) {
        assert_ne!(sum, sum3, "seed ignored for {rel}");
    }

    let err = cmd_gen_data(&root.join("a"), &mini_gen_pairs(), false).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    assert!(err.to_string().contains("--force"), "{err}");
    cmd_gen_data(&root.join("a"), &mini_gen_pairs(), true).unwrap();

    // exactly one manifest per artifact dir
    let count = fs::read_dir(root.join("a"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name() == "manifest.json")
        .count();
    assert_eq!(count, 1);
    let loaded = RunManifest::load(&root.join("a")).unwrap();
    assert_eq!(loaded.command, "gen-data");
    assert_eq!(loaded.seed, 11);
    fs::remove_dir_all(&root).unwrap();
}

#[test]
fn gen_data_rejects_bad_configs() {
    let root = fresh_dir("genbad");
    let mut p = mini_gen_pairs();
    p.push((
        "targets".to_string(),
        (0..9).map(|i| format!("t{i}=fog:0.5")).collect::<Vec<_>>().join(";"),
    ));
    let err = cmd_gen_data(&root, &dedup_last(&p), false).unwrap_err();
    assert!(err.to_string().contains("outside 1..=8"), "{err}");

    let err = cmd_gen_data(&root, &pairs(&[("bogus", "1")]), false).unwrap_err();
    assert!(err.to_string().contains("unknown gen-data key 'bogus'"), "{err}");
    assert!(!root.exists(), "failed gen-data must not leave a directory behind");
}

#[test]
fn train_writes_checkpoint_metrics_and_manifest() {
    let root = fresh_dir("train");
    let (data, ckpt_path) = small_run(&root);
    let ckpt = Checkpoint::load(&ckpt_path).unwrap();
    assert_eq!(ckpt.train_config.variant, "baseline");
    assert_eq!(ckpt.metric_log.len(), 2, "one metrics row per epoch");

    let csv = fs::read_to_string(root.join("pretrain/metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,split,L_d,L_r,mAP");
    assert_eq!(lines.len(), 1 + 2);

    let manifest = RunManifest::load(&root.join("pretrain")).unwrap();
    assert_eq!(manifest.command, "train");
    assert_eq!(manifest.inputs.len(), 2);
    assert!(manifest.outputs.iter().any(|(rel, _)| rel == "checkpoint.bin"));
    assert!(manifest.timings.iter().any(|(label, secs)| label == "pretrain" && *secs > 0.0));

    // image-size mismatch is caught before any training
    let mut p = mini_train_pairs();
    p.push(("det.image_size".to_string(), "96".to_string()));
    let err = cmd_train(&data, &root.join("x"), &dedup_last(&p), None, false).unwrap_err();
    assert!(err.to_string().contains("does not match dataset image size 32"), "{err}");

    let err = cmd_train(&root.join("nope"), &root.join("y"), &mini_train_pairs(), None, false)
        .unwrap_err();
    assert!(matches!(err, Error::MissingInput(_)), "{err}");
    fs::remove_dir_all(&root).unwrap();
}

#[test]
fn adapt_eval_never_touches_source_and_matches_plain_inference_at_gamma_zero() {
    let root = fresh_dir("adapteval");
    let (data, ckpt_path) = small_run(&root);
    let target = data.join("targets/fog");
    let images = load_domain(&target).unwrap();

    // source audit: adapt-eval must work with the source splits deleted
    fs::remove_dir_all(data.join("source")).unwrap();

    let eval_pairs = pairs(&[("gamma", "2,0"), ("seed", "3")]);
    let out = root.join("eval");
    let manifest =
        cmd_adapt_eval(&ckpt_path, &[target.clone()], &out, &eval_pairs, false, false).unwrap();
    for (path, _) in &manifest.inputs {
        assert!(!path.contains("source"), "adapt-eval read source data: {path}");
    }

    let rows = read_eval_rows(&out.join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0].gamma, rows[1].gamma), (0, 2), "gamma list sorted ascending");
    assert!(rows.iter().all(|r| r.variant == "baseline" && r.domain == "fog"));

    // gamma=0 row must equal plain inference with the checkpoint weights
    let (det, _) = Checkpoint::load(&ckpt_path).unwrap().build_model().unwrap();
    let evals: Vec<ImageEval> = images
        .iter()
        .map(|img| ImageEval { dets: detect(&det, &img.pixels), gts: img.labels.clone() })
        .collect();
    let direct = tide_decompose(&evals, det.cfg.num_classes, 0.5, 0.1);
    assert_eq!(rows[0].map50, direct.map50);
    assert_eq!(rows[0].counts, direct.counts());

    for gamma in [0, 2] {
        let preds =
            crate::adapt::read_predictions(&out.join(format!("preds-fog-g{gamma}.jsonl"))).unwrap();
        assert_eq!(preds.len(), images.len());
        assert!(preds.iter().all(|p| p.gamma == gamma));
    }
    assert!(out.join("errors-fog.png").exists());
    assert!(out.join("notes.txt").exists());
    assert!(manifest.timings.iter().any(|(l, _)| l == "fog gamma=2 secs/image"));

    // rerun reproduces the metrics byte for byte
    let before = fs::read(out.join("metrics.csv")).unwrap();
    cmd_adapt_eval(&ckpt_path, &[target], &out, &eval_pairs, false, true).unwrap();
    assert_eq!(before, fs::read(out.join("metrics.csv")).unwrap());
    fs::remove_dir_all(&root).unwrap();
}

#[test]
fn curve_command_writes_sweep_and_plot() {
    let root = fresh_dir("curve");
    let (data, ckpt_path) = small_run(&root);
    let target = data.join("targets/fog");
    let out = root.join("curve");
    let eval_pairs = pairs(&[("gamma", "0,1,2"), ("seed", "3")]);
    cmd_curve(&ckpt_path, &target, &out, &eval_pairs, false).unwrap();

    let csv = fs::read_to_string(out.join("curve.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "gamma,mAP,faults");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,"));
    assert!(out.join("curve.png").exists());
    assert_eq!(RunManifest::load(&out).unwrap().command, "curve");
    fs::remove_dir_all(&root).unwrap();
}

#[test]
fn report_merges_and_sorts_rows() {
    let root = fresh_dir("report");
    fs::create_dir_all(root.join("r1")).unwrap();
    fs::create_dir_all(root.join("r2")).unwrap();
    let r = |variant: &str, domain: &str, gamma: usize, map50: f64| EvalRow {
        variant: variant.to_string(),
        domain: domain.to_string(),
        gamma,
        map50,
        counts: [1, 0, 2, 0, 3, 4],
    };
    write_eval_rows(
        &root.join("r1/metrics.csv"),
        &[r("oshot", "fog", 5, 0.5), r("oshot", "fog", 0, 0.4)],
    )
    .unwrap();
    write_eval_rows(&root.join("r2/metrics.csv"), &[r("baseline", "fog", 0, 0.41)]).unwrap();

    let out = root.join("out");
    cmd_report(&[root.join("r1"), root.join("r2")], &out, false).unwrap();
    let rows = read_eval_rows(&out.join("report.csv")).unwrap();
    let key: Vec<(String, usize)> = rows.iter().map(|x| (x.variant.clone(), x.gamma)).collect();
    assert_eq!(
        key,
        vec![
            ("baseline".to_string(), 0),
            ("oshot".to_string(), 0),
            ("oshot".to_string(), 5)
        ]
    );
    assert!(out.join("map.png").exists());

    let err = cmd_report(&[root.join("missing")], &root.join("out2"), false).unwrap_err();
    assert!(matches!(err, Error::MissingInput(_)), "{err}");
    fs::remove_dir_all(&root).unwrap();
}

#[test]
fn eval_config_parses_and_validates() {
    let cfg = EvalConfig::from_pairs(&pairs(&[("gamma", "5,0,5,1")])).unwrap();
    assert_eq!(cfg.gammas, vec![0, 1, 5]);
    let err = EvalConfig::from_pairs(&pairs(&[("nope", "1")])).unwrap_err();
    assert!(err.to_string().contains("unknown adapt key 'nope'"), "{err}");
    let err = EvalConfig::from_pairs(&pairs(&[("inner_lr", "-1")])).unwrap_err();
    assert!(err.to_string().contains("inner_lr"), "{err}");
}

#[test]
fn relative_paths_resolve_under_env_root() {
    // no other test relies on relative paths, so mutating the variable is safe
    std::env::set_var(OUT_ROOT_ENV, "/tmp/osda-root");
    assert_eq!(resolve_path(Path::new("runs/a")), PathBuf::from("/tmp/osda-root/runs/a"));
    assert_eq!(resolve_path(Path::new("/abs/x")), PathBuf::from("/abs/x"));
    std::env::remove_var(OUT_ROOT_ENV);
    assert_eq!(resolve_path(Path::new("runs/a")), PathBuf::from("runs/a"));
}

#[test]
fn metrics_round_trip_and_header_check() {
    let root = fresh_dir("metrics");
    fs::create_dir_all(&root).unwrap();
    let rows = vec![EvalRow {
        variant: "oshot".to_string(),
        domain: "fog".to_string(),
        gamma: 5,
        map50: 0.512345678901234,
        counts: [0, 1, 2, 3, 4, 5],
    }];
    let path = root.join("m.csv");
    write_eval_rows(&path, &rows).unwrap();
    assert_eq!(read_eval_rows(&path).unwrap(), rows);

    fs::write(&path, "wrong,header\n").unwrap();
    let err = read_eval_rows(&path).unwrap_err();
    assert!(err.to_string().contains("bad metrics header"), "{err}");
    fs::remove_dir_all(&root).unwrap();
}
