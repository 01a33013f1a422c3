use std::path::Path;
use std::process::{Command, Output};

fn deft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deft")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn gen_noise_detect_eval_flow() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean.bin");
    let noisy = dir.path().join("noisy.csv");
    let det = dir.path().join("det");

    let o = deft(&[
        "gen",
        "--n",
        "400",
        "--dim",
        "16",
        "--classes",
        "4",
        "--intra-noise",
        "0.1",
        "--out",
        path(&clean),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let o = deft(&[
        "noise",
        "--input",
        path(&clean),
        "--ratio",
        "0.3",
        "--seed",
        "5",
        "--out",
        path(&noisy),
    ]);
    assert!(o.status.success());
    let spec: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(spec["realized_ratio"].as_f64().unwrap(), 0.3);
    assert!(std::fs::read_to_string(&noisy).unwrap().lines().count() > 400);

    let o = deft(&["detect", "--input", path(&noisy), "--epochs", "4", "--out", path(&det)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mask = det.join("clean_mask.txt");
    assert_eq!(std::fs::read_to_string(&mask).unwrap().lines().count(), 400);
    let trace = std::fs::read_to_string(det.join("detector_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 5);

    let o = deft(&["eval-mask", "--mask", path(&mask), "--truth", path(&noisy), "--format", "jsonl"]);
    assert!(o.status.success());
    let m: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(m["f1"].as_f64().unwrap() > 0.8);

    // The mask scored against itself is perfect.
    let o = deft(&["eval-mask", "--mask", path(&mask), "--truth-mask", path(&mask)]);
    assert!(o.status.success());
    let text = stdout(&o);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..3], ["1", "1", "1"]);
    assert_eq!(row[3], row[4]);
}

#[test]
fn adapt_writes_checkpoint_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.bin");
    assert!(deft(&["gen", "--n", "200", "--dim", "8", "--classes", "3", "--out", path(&data)])
        .status
        .success());
    let out = dir.path().join("nested/adapt");
    let o = deft(&[
        "adapt",
        "--input",
        path(&data),
        "--test",
        path(&data),
        "--epochs",
        "3",
        "--out",
        path(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("model.bin").exists());
    assert_eq!(std::fs::read_to_string(out.join("phase2_trace.csv")).unwrap().lines().count(), 4);
    assert!(stdout(&o).starts_with("best_acc,last_acc\n"));
}

#[test]
fn run_from_config_writes_manifest_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        r#"
strategy = "gmm"
seeds = [0]
[data]
n_test = 100
[data.synthetic]
n = 300
dim = 16
num_classes = 4
intra_class_noise = 0.1
[noise]
ratio = 0.4
"#,
    )
    .unwrap();
    let out = dir.path().join("run");
    let o = deft(&["run", "--config", path(&cfg), "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["complete"], true);
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(report, stdout(&o));
    assert!(report.lines().nth(1).unwrap().starts_with("run,gmm,0,0.4,"));
    assert!(out.join("seed_0/gmm/clean_mask.txt").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.bin");
    assert!(deft(&["gen", "--n", "50", "--dim", "4", "--classes", "2", "--out", path(&data)])
        .status
        .success());

    // Configuration errors.
    let o = deft(&[
        "noise",
        "--input",
        path(&data),
        "--ratio",
        "1.5",
        "--out",
        path(&dir.path().join("x.bin")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    assert_eq!(deft(&["gen", "--n", "10"]).status.code(), Some(2));

    // Missing or malformed input.
    let o = deft(&[
        "detect",
        "--input",
        path(&dir.path().join("missing.bin")),
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let garbage = dir.path().join("garbage.bin");
    std::fs::write(&garbage, b"not an embedding file").unwrap();
    assert_eq!(
        deft(&["detect", "--input", path(&garbage), "--out", path(dir.path())])
            .status
            .code(),
        Some(3)
    );
    let mask = dir.path().join("m.txt");
    std::fs::write(&mask, "1\n0\nmaybe\n").unwrap();
    assert_eq!(
        deft(&["eval-mask", "--mask", path(&mask), "--truth-mask", path(&mask)])
            .status
            .code(),
        Some(3)
    );

    // Clap usage errors keep clap's own code.
    assert_eq!(deft(&["frobnicate"]).status.code(), Some(2));
}
