use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ppap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppap")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a two-cluster feature file and returns its path.
fn features(dir: &Path) -> PathBuf {
    let path = dir.join("feat.bin");
    let out = ppap(&["generate", "--preset", "two-clusters", "--seed", "3", "--out", s(&path)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    path
}

fn csv_column(path: &Path, name: &str) -> Vec<f64> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let idx = reader.headers().unwrap().iter().position(|h| h == name).unwrap();
    reader.records().map(|r| r.unwrap()[idx].parse().unwrap()).collect()
}

#[test]
fn generate_mine_train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let feat = features(dir.path());
    let mined = dir.path().join("mined.bin");
    let out = ppap(&["mine", "--features", s(&feat), "--out", s(&mined)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.path().join("mined.bin.manifest.json").exists());

    let train = dir.path().join("train");
    let out = ppap(&["train", "--features", s(&feat), "--mining", s(&mined), "--epochs", "30", "--out", s(&train)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let loss = csv_column(&train.join("loss.csv"), "loss");
    assert_eq!(loss.len(), 31);
    assert!(loss.last().unwrap() < &loss[0]);

    let eval = dir.path().join("eval");
    let out = ppap(&[
        "eval", "--features", s(&feat), "--mining", s(&mined), "--trust", "--curve", "--bands", "--cluster",
        "--projection", s(&train.join("projection.bin")), "--set", "clusters=2", "--out", s(&eval),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["trust.json", "trust_anchors.csv", "curve.json", "curve.csv", "bands.json", "bands.csv", "cluster.json"] {
        assert!(eval.join(f).exists(), "{f}");
    }
    let trust: serde_json::Value = serde_json::from_slice(&fs::read(eval.join("trust.json")).unwrap()).unwrap();
    assert_eq!(trust["tp_in_p_ratio"].as_f64().unwrap(), 1.0);
    assert_eq!(csv_column(&eval.join("curve.csv"), "q").len(), 10);
}

#[test]
fn usage_and_config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let feat = features(dir.path());
    let out_path = dir.path().join("r.bin");
    let out = s(&out_path);

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "phi0 = 0.5\nsigma_pos = [\n").unwrap();
    let r = ppap(&["mine", "--features", s(&feat), "--config", s(&bad), "--out", out]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("line"), "{}", stderr(&r));

    let r = ppap(&["mine", "--features", s(&feat), "--strategy", "knn", "--set", "k=0", "--out", out]);
    assert_eq!(code(&r), 2, "{}", stderr(&r));
    let r = ppap(&["mine", "--features", s(&feat), "--set", "k=5", "--out", out]);
    assert_eq!(code(&r), 2, "{}", stderr(&r));
    let r = ppap(&["mine", "--features", s(&feat), "--set", "phi0=0.2", "--set", "psi0=0.4", "--out", out]);
    assert_eq!(code(&r), 2, "{}", stderr(&r));
    let r = ppap(&["mine", "--features", s(&feat), "--strategy", "magic", "--out", out]);
    assert_eq!(code(&r), 2);
    let r = ppap(&["mine", "--out", out]);
    assert_eq!(code(&r), 2);

    // A mining result for a different feature file.
    let other = dir.path().join("other.bin");
    assert_eq!(code(&ppap(&["generate", "--preset", "overlap8", "--seed", "1", "--out", s(&other)])), 0);
    let mined_other = dir.path().join("other_mined.bin");
    assert_eq!(code(&ppap(&["mine", "--features", s(&other), "--set", "steps=0", "--out", s(&mined_other)])), 0);
    let r = ppap(&["train", "--features", s(&feat), "--mining", s(&mined_other), "--out", s(&dir.path().join("t"))]);
    assert_eq!(code(&r), 2, "{}", stderr(&r));

    // Label-dependent report without labels.
    let csv = dir.path().join("plain.csv");
    fs::write(&csv, "1,0\n0,1\n0.9,0.1\n").unwrap();
    let mined_csv = dir.path().join("plain_mined.bin");
    assert_eq!(code(&ppap(&["mine", "--features", s(&csv), "--out", s(&mined_csv)])), 0);
    let r = ppap(&["eval", "--features", s(&csv), "--mining", s(&mined_csv), "--trust", "--out", s(&dir.path().join("e"))]);
    assert_eq!(code(&r), 2, "{}", stderr(&r));

    for spec in ["[grid]\n", "[grid]\nphi0 = []\n", "[grid]\nphi0 = [0.5]\nbogus = 1\n", "[grid]\nnot_a_field = [1]\n"] {
        let path = dir.path().join("sweep.toml");
        fs::write(&path, spec).unwrap();
        let r = ppap(&["sweep", "--features", s(&feat), "--sweep", s(&path), "--out", s(&dir.path().join("sw"))]);
        assert_eq!(code(&r), 2, "{spec:?}: {}", stderr(&r));
    }
}

#[test]
fn io_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let r = ppap(&["mine", "--features", "/nonexistent/f.bin", "--out", s(&dir.path().join("r.bin"))]);
    assert_eq!(code(&r), 3);
    let junk = dir.path().join("junk.bin");
    fs::write(&junk, b"not a container").unwrap();
    let r = ppap(&["mine", "--features", s(&junk), "--out", s(&dir.path().join("r.bin"))]);
    assert_eq!(code(&r), 3);
}

#[test]
fn phi_grid_produces_one_run_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let feat = features(dir.path());
    let spec = dir.path().join("sweep.toml");
    fs::write(&spec, "[grid]\nphi0 = [0.3, 0.5, 0.7]\n").unwrap();
    let out = dir.path().join("sweep");
    let r = ppap(&["sweep", "--features", s(&feat), "--sweep", s(&spec), "--out", s(&out)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    for i in 0..3 {
        let run = out.join(format!("run-{i:03}"));
        assert!(run.join("result.bin").exists() && run.join("trust.json").exists());
    }
    assert!(!out.join("run-003").exists());
    assert_eq!(csv_column(&out.join("sweep.csv"), "phi0"), vec![0.3, 0.5, 0.7]);
    // A higher starting criterion never admits more positives.
    let counts = csv_column(&out.join("sweep.csv"), "mean_positive_count");
    assert!(counts.windows(2).all(|w| w[1] <= w[0]), "{counts:?}");
}

#[test]
fn larger_sigma_pos_relaxes_less() {
    let dir = tempfile::tempdir().unwrap();
    let feat = dir.path().join("overlap.bin");
    assert_eq!(code(&ppap(&["generate", "--preset", "overlap8", "--seed", "0", "--out", s(&feat)])), 0);
    let base = dir.path().join("base.toml");
    fs::write(&base, "preset = \"coco-vit-s16\"\n").unwrap();
    let spec = dir.path().join("sweep.toml");
    fs::write(&spec, "[grid]\nsigma_pos = [1.0, 3.0, 10.0]\n").unwrap();
    let out = dir.path().join("sweep");
    let r = ppap(&["sweep", "--features", s(&feat), "--base", s(&base), "--sweep", s(&spec), "--out", s(&out)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let counts = csv_column(&out.join("sweep.csv"), "mean_positive_count");
    assert!(counts.windows(2).all(|w| w[1] <= w[0]), "{counts:?}");
}

#[test]
fn reruns_and_replays_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let feat = features(dir.path());
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    for (path, threads) in [(&a, "1"), (&b, "3")] {
        let r = ppap(&["--threads", threads, "mine", "--features", s(&feat), "--set", "steps=3", "--out", s(path)]);
        assert_eq!(code(&r), 0, "{}", stderr(&r));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let c = dir.path().join("c.bin");
    let manifest = dir.path().join("a.bin.manifest.json");
    let r = ppap(&["replay", s(&manifest), "--out", s(&c)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}
