use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use meirl_core::mdp::{compute_svf, export, Policy};
use meirl_core::model::IrlModel;
use meirl_core::synth::{read_dataset, read_manifest, Dataset};
use meirl_core::tensor::checkpoint::Checkpoint;
use meirl_core::trainer::TrainConfig;

fn meirl_env(dir: &Path, env: &[(&str, &str)], args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_meirl"));
    cmd.current_dir(dir).env_remove("MEIRL_WORKERS").args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn meirl(dir: &Path, args: &[&str]) -> Output {
    meirl_env(dir, &[], args)
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn small_dataset(dir: &Path, name: &str, seed: &str) {
    ok(meirl(
        dir,
        &[
            "generate",
            "--out",
            name,
            "--seed",
            seed,
            "--demos",
            "20",
            "--rows",
            "12",
            "--cols",
            "12",
            "--horizon-min",
            "6",
            "--horizon-max",
            "9",
        ],
    ));
}

fn train_ours(dir: &Path, out: &str, iterations: &str) {
    ok(meirl(
        dir,
        &[
            "train",
            "--data",
            "data",
            "--out",
            out,
            "--iterations",
            iterations,
            "--batch-size",
            "4",
            "--checkpoint-every",
            "2",
        ],
    ));
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generate_splits_by_fraction() {
    let t = tempfile::tempdir().unwrap();
    ok(meirl(
        t.path(),
        &[
            "generate",
            "--out",
            "data",
            "--demos",
            "660",
            "--split",
            "0.9",
            "--rows",
            "12",
            "--cols",
            "12",
            "--horizon-min",
            "4",
            "--horizon-max",
            "6",
        ],
    ));
    let m = read_manifest(&t.path().join("data")).unwrap();
    assert_eq!(m.counts["train"], 594);
    assert_eq!(m.counts["test"], 66);
    assert_eq!(m.train.len(), 594);
    assert!(t.path().join("data/config.json").is_file());
}

#[test]
fn generate_is_reproducible_and_seed_sensitive() {
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    for (d, seed) in dirs.iter().zip(["3", "3", "4"]) {
        small_dataset(d.path(), "data", seed);
    }
    let a = files(&dirs[0].path().join("data"));
    assert_eq!(a, files(&dirs[1].path().join("data")));
    assert_ne!(a, files(&dirs[2].path().join("data")));
}

#[test]
fn balanced_generation_equalizes_tags() {
    let t = tempfile::tempdir().unwrap();
    ok(meirl(
        t.path(),
        &[
            "generate",
            "--out",
            "data",
            "--demos",
            "60",
            "--rows",
            "12",
            "--cols",
            "12",
            "--intersections",
            "1",
            "--horizon-min",
            "6",
            "--horizon-max",
            "10",
            "--balance",
            "equal",
        ],
    ));
    let (_, ds) = read_dataset(&t.path().join("data")).unwrap();
    let all: Vec<_> = ds.train.iter().chain(&ds.test).cloned().collect();
    let counts: Vec<usize> = Dataset::tag_counts(&all).into_values().collect();
    assert_eq!(counts.len(), 3, "{counts:?}");
    assert!(counts.iter().all(|&c| c == 20), "{counts:?}");
}

#[test]
fn zero_iterations_saves_the_initial_network() {
    let t = tempfile::tempdir().unwrap();
    small_dataset(t.path(), "data", "1");
    ok(meirl(
        t.path(),
        &[
            "train",
            "--data",
            "data",
            "--out",
            "run",
            "--iterations",
            "0",
            "--seed",
            "5",
        ],
    ));
    let ck = Checkpoint::load(&t.path().join("run/model.ckpt")).unwrap();
    let model = IrlModel::from_checkpoint(&ck).unwrap();
    let cfg = TrainConfig {
        seed: 5,
        ..TrainConfig::default()
    };
    assert_eq!(model.net, cfg.init_network().unwrap());
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let t = tempfile::tempdir().unwrap();
    small_dataset(t.path(), "data", "1");
    train_ours(t.path(), "full", "4");
    ok(meirl(
        t.path(),
        &[
            "train",
            "--data",
            "data",
            "--out",
            "resumed",
            "--iterations",
            "2",
            "--batch-size",
            "4",
            "--resume",
            "full/checkpoints/iter_000002.ckpt",
        ],
    ));
    let full = std::fs::read(t.path().join("full/model.ckpt")).unwrap();
    let resumed = std::fs::read(t.path().join("resumed/model.ckpt")).unwrap();
    assert_eq!(full, resumed);
    let full_csv = std::fs::read_to_string(t.path().join("full/train_report.csv")).unwrap();
    let resumed_csv = std::fs::read_to_string(t.path().join("resumed/train_report.csv")).unwrap();
    let tail: Vec<&str> = full_csv.lines().skip(3).collect();
    assert_eq!(resumed_csv.lines().skip(1).collect::<Vec<_>>(), tail);
    assert!(tail[0].starts_with("3,"));
}

#[test]
fn predict_exports_consistent_forecasts() {
    let t = tempfile::tempdir().unwrap();
    small_dataset(t.path(), "data", "2");
    train_ours(t.path(), "run", "2");
    ok(meirl(
        t.path(),
        &[
            "predict",
            "--data",
            "data",
            "--out",
            "pred",
            "--checkpoint",
            "run/model.ckpt",
            "--samples",
            "7",
        ],
    ));
    let s = json(&t.path().join("pred/summary.json"));
    let h = s["horizon"].as_u64().unwrap() as usize;
    assert!((s["svf_mass"].as_f64().unwrap() - h as f64).abs() < 1e-6);
    assert_eq!(s["method"], "ours");
    let samples = std::fs::read_to_string(t.path().join("pred/samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 1 + 7 * h);
    for f in ["reward.csv", "reward.pgm", "svf.csv", "svf.pgm"] {
        assert!(t.path().join("pred").join(f).is_file(), "{f}");
    }

    ok(meirl(
        t.path(),
        &[
            "predict",
            "--data",
            "data",
            "--out",
            "pred_flat",
            "--checkpoint",
            "run/model.ckpt",
            "--zero-lidar",
        ],
    ));
    assert_eq!(
        json(&t.path().join("pred_flat/summary.json"))["zero_lidar"],
        true
    );
    assert_ne!(
        std::fs::read(t.path().join("pred/reward.csv")).unwrap(),
        std::fs::read(t.path().join("pred_flat/reward.csv")).unwrap()
    );
}

#[test]
fn random_heatmap_is_uniform_policy_visitation() {
    let t = tempfile::tempdir().unwrap();
    small_dataset(t.path(), "data", "2");
    ok(meirl(
        t.path(),
        &[
            "predict", "--data", "data", "--out", "pred", "--method", "random", "--index", "1",
        ],
    ));
    let (m, ds) = read_dataset(&t.path().join("data")).unwrap();
    let demo = &ds.test[1];
    let expected = compute_svf(
        &Policy::uniform(demo.world.shape()),
        demo.start(),
        demo.horizon(),
    )
    .unwrap();
    assert_eq!(
        std::fs::read_to_string(t.path().join("pred/svf.csv")).unwrap(),
        export::to_csv(&expected.counts)
    );
    assert_eq!(m.test[1].horizon, demo.horizon());
    let s = json(&t.path().join("pred/summary.json"));
    assert!((s["nll"].as_f64().unwrap() - 4f64.ln()).abs() < 1e-15);
}

#[test]
fn ekf_predict_writes_a_path() {
    let t = tempfile::tempdir().unwrap();
    small_dataset(t.path(), "data", "2");
    ok(meirl(
        t.path(),
        &[
            "predict", "--data", "data", "--out", "pred", "--method", "ekf",
        ],
    ));
    let s = json(&t.path().join("pred/summary.json"));
    let h = s["horizon"].as_u64().unwrap() as usize;
    let path = std::fs::read_to_string(t.path().join("pred/ekf_path.csv")).unwrap();
    assert_eq!(path.lines().count(), 1 + h);
    assert!(s["hd"].as_f64().unwrap() >= 0.0);
}

#[test]
fn eval_lists_methods_in_table_order() {
    let t = tempfile::tempdir().unwrap();
    small_dataset(t.path(), "data", "2");
    train_ours(t.path(), "run", "2");
    ok(meirl(
        t.path(),
        &[
            "eval",
            "--data",
            "data",
            "--out",
            "eval",
            "--methods",
            "ours,random,ekf",
            "--checkpoint",
            "ours=run/model.ckpt",
            "--samples",
            "10",
        ],
    ));
    let csv = std::fs::read_to_string(t.path().join("eval/summary.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    let names: Vec<&str> = rows.iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(names, ["ekf", "random", "ours"]);
    assert!(rows[0].starts_with("ekf,N.A.,N.A.,"));
    let j = json(&t.path().join("eval/summary.json"));
    assert!(j.to_string().contains("N.A."));
    let per_demo = std::fs::read_to_string(t.path().join("eval/per_demo.csv")).unwrap();
    let m = read_manifest(&t.path().join("data")).unwrap();
    assert_eq!(per_demo.lines().count(), 1 + 3 * m.counts["test"]);
}

#[test]
fn eval_reports_every_missing_artifact() {
    let t = tempfile::tempdir().unwrap();
    small_dataset(t.path(), "data", "2");
    let out = meirl(
        t.path(),
        &[
            "eval",
            "--data",
            "data",
            "--out",
            "eval",
            "--checkpoint",
            "bc=nope.ckpt",
        ],
    );
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    for m in ["bc", "irl_nokin", "ours"] {
        assert!(err.contains(&format!("{m}:")), "{err}");
    }
}

#[test]
fn exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let dir = t.path();
    assert_eq!(code(&meirl(dir, &["frobnicate"])), 2);
    assert_eq!(
        code(&meirl(dir, &["train", "--data", "missing", "--out", "o"])),
        2
    );
    assert_eq!(
        code(&meirl(dir, &["generate", "--out", "d", "--split", "1.5"])),
        2
    );
    assert_eq!(
        code(&meirl_env(
            dir,
            &[("MEIRL_WORKERS", "abc")],
            &["generate", "--out", "d"]
        )),
        2
    );
    assert_eq!(
        code(&meirl(dir, &["--workers", "0", "generate", "--out", "d"])),
        2
    );
    std::fs::write(dir.join("bad.json"), "{\"out\": \"d\", \"colour\": 1}").unwrap();
    assert_eq!(code(&meirl(dir, &["generate", "--config", "bad.json"])), 2);

    // the environment variable wins over the flag
    small_dataset(dir, "data", "1");
    ok(meirl_env(
        dir,
        &[("MEIRL_WORKERS", "1")],
        &[
            "--workers",
            "0",
            "predict",
            "--data",
            "data",
            "--out",
            "p",
            "--method",
            "random",
        ],
    ));

    // a corrupted record is a runtime failure
    let m = read_manifest(&dir.join("data")).unwrap();
    let rec = dir.join("data").join(&m.test[0].file);
    let bytes = std::fs::read(&rec).unwrap();
    std::fs::write(&rec, &bytes[..bytes.len() / 2]).unwrap();
    let out = meirl(
        dir,
        &[
            "predict", "--data", "data", "--out", "p2", "--method", "random",
        ],
    );
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}
