use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set", "dim=8", "--set", "hidden=8", "--set", "depth=2", "--set", "batch_size=16",
];

fn dsparse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsparse")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn train_small(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--toy", "24", "--epochs", "2", "--out", out.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    dsparse(&args)
}

#[test]
fn missing_data_dir_exits_2_naming_it() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = dsparse(&["train", "--data", "/no/such/kg", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such/kg"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "# comment\ndim = 8\nwidth = 3\n").unwrap();
    let o = dsparse(&["train", "--toy", "24", "--config", cfg.to_str().unwrap(), "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("width"));
    let o = dsparse(&["train", "--toy", "24", "--set", "dim=-1", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    let o = dsparse(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn several_runs_write_one_checkpoint_each() {
    let tmp = tempfile::tempdir().unwrap();
    let o = train_small(tmp.path(), &["--runs", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for i in 0..3 {
        assert!(tmp.path().join(format!("run{i}/checkpoint.dspc")).is_file());
        assert!(tmp.path().join(format!("run{i}/history.csv")).is_file());
    }
    let report = std::fs::read_to_string(tmp.path().join("report.txt")).unwrap();
    assert!(report.contains("runs = 3"));
    let config = std::fs::read_to_string(tmp.path().join("config.txt")).unwrap();
    assert!(config.contains("runs = 3") && config.contains("dim = 8"));
}

#[test]
fn eval_is_repeatable_and_checks_vocab() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(train_small(tmp.path(), &[]).status.success());
    let ckpt = tmp.path().join("checkpoint.dspc");
    let c = ckpt.to_str().unwrap();
    let e1 = tmp.path().join("e1");
    let e2 = tmp.path().join("e2");
    for dir in [&e1, &e2] {
        let o = dsparse(&["eval", "--checkpoint", c, "--toy", "24", "--out", dir.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(
        std::fs::read(e1.join("report.json")).unwrap(),
        std::fs::read(e2.join("report.json")).unwrap()
    );
    let o = dsparse(&["eval", "--checkpoint", c, "--toy", "25"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("integrity"), "{}", stderr(&o));
}

#[test]
fn gate_export_has_one_normalised_row_per_pair() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(train_small(tmp.path(), &[]).status.success());
    let csv_path = tmp.path().join("gates.csv");
    let o = dsparse(&[
        "export-gates",
        "--checkpoint",
        tmp.path().join("checkpoint.dspc").to_str().unwrap(),
        "--toy",
        "24",
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    assert_eq!(reader.headers().unwrap(), vec!["entity", "relation", "g_1", "g_2", "g_3"]);
    let mut pairs = BTreeSet::new();
    for rec in reader.records() {
        let rec = rec.unwrap();
        let total: f64 = rec.iter().skip(2).map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-6);
        pairs.insert((rec[0].to_string(), rec[1].to_string()));
    }
    let kg = dsparse_core::kg::generate_toy_kg(24, 7).unwrap();
    assert_eq!(pairs.len(), dsparse_core::kg::PairIndex::new(kg.train_augmented()).len());
}

#[test]
fn invalid_ablation_grid_fails_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("abl");
    let o = dsparse(&[
        "ablate", "--mode", "downscale", "--grid", "0.5,0", "--toy", "24", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    let o = dsparse(&["ablate", "--mode", "width", "--toy", "24", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ablation_rows_carry_their_config() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec![
        "ablate", "--mode", "dropout", "--grid", "0.5", "--toy", "24", "--epochs", "1", "--out",
    ];
    let out = tmp.path().join("abl");
    args.push(out.to_str().unwrap());
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--set", "dropout=0.3"]);
    let o = dsparse(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: String = std::fs::read_to_string(out.join("ablation.json")).unwrap();
    let report = dsparse_core::ablation::AblationReport::from_json(&json).unwrap();
    assert_eq!(report.rows.len(), 1);
    let get = |k: &str| report.rows[0].config[k].parse::<f64>().unwrap();
    assert!((get("dropout") - 0.65).abs() < 1e-12);
    assert_eq!(get("sparsity"), 0.0);
}


#[test]
fn toy_data_dir_round_trip_through_make_toy() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let o = dsparse(&["make-toy", "--n", "24", "--seed", "7", "--out", data.to_str().unwrap()]);
    assert!(o.status.success());
    let out = tmp.path().join("run");
    let mut args = vec!["train", "--data", data.to_str().unwrap(), "--epochs", "1", "--out", out.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    let o = dsparse(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    // same graph through the toy flag gives the same vocabulary
    let o = dsparse(&["eval", "--checkpoint", out.join("checkpoint.dspc").to_str().unwrap(), "--toy", "24"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn toy_forty_with_defaults_finishes_quickly() {
    let tmp = tempfile::tempdir().unwrap();
    let start = std::time::Instant::now();
    let o = dsparse(&["train", "--toy", "40", "--out", tmp.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(start.elapsed().as_secs() < 300);
}
