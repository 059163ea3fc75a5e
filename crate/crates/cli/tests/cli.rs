use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_intertwine");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TABLE: &str = "subject,int,par,cas
s1,0.91,0.88,0.80
s2,0.95,0.90,0.86
s3,0.88,0.85,0.83
s4,0.93,0.89,0.82
s5,0.90,0.87,0.84
s6,0.97,0.92,0.85
";

#[test]
fn plan_prints_reference_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["plan"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let first = text.lines().next().unwrap();
    assert!(first.starts_with("19×200 → 16×200 → 16×16×198 → 16×16×99 → 256×99"), "{first}");
    assert!(first.ends_with("256×48 → LSTM → FC → 6"), "{first}");
    assert!(text.contains("total MACs per trial: 3632144"));
    assert!(tmp.path().join("plan.manifest.json").exists());
}

#[test]
fn friedman_json_matches_hand_ranks() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("t.csv"), TABLE).unwrap();
    let o = run(tmp.path(), &["--json", "stats", "friedman", "t.csv"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    // strict ordering in every row: ranks 3,2,1 and chi-square = n(k-1) = 12
    assert_eq!(v["dof"], 2);
    assert!((v["chi_square"].as_f64().unwrap() - 12.0).abs() < 1e-12);
    let p = v["p_value"].as_f64().unwrap();
    assert!((p - (-6.0f64).exp()).abs() < 1e-12, "{p}");
}

#[test]
fn pairwise_flags_extreme_pair() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("t.csv"), TABLE).unwrap();
    let o = run(tmp.path(), &["--json", "stats", "pairwise", "t.csv"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let pairs = v["pairs"].as_array().unwrap_or_else(|| panic!("{v}"));
    assert_eq!(pairs.len(), 3);
    for p in pairs {
        let raw = p["p_raw"].as_f64().unwrap();
        let adj = p["p_adjusted"].as_f64().unwrap();
        assert!(adj >= raw && adj <= 1.0);
    }
    let ic = pairs.iter().find(|p| p["a"] == "int" && p["b"] == "cas").unwrap();
    assert_eq!(ic["significant"], true);
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(tmp.path(), &["bogus"]).status.code(), Some(1));
    assert_eq!(run(tmp.path(), &["stats", "pairwise", "x.csv", "--method", "nope"]).status.code(), Some(1));
    assert_eq!(run(tmp.path(), &["--help"]).status.code(), Some(0));
    let o = run(tmp.path(), &["train", "--data", "missing.json"]);
    assert_eq!(o.status.code(), Some(2));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("train.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["exit_code"], 2);
    assert!(m["error"].is_string());

    std::fs::write(tmp.path().join("bad.csv"), "subject,a,b\ns1,0.5,1.5\n").unwrap();
    assert_eq!(run(tmp.path(), &["stats", "friedman", "bad.csv"]).status.code(), Some(2));

    std::fs::write(tmp.path().join("sweep.json"), r#"{"budget": 2, "bogus_key": 1}"#).unwrap();
    assert_eq!(run(tmp.path(), &["sweep", "--config", "sweep.json"]).status.code(), Some(1));
}

#[test]
fn synth_train_evaluate_and_rerun_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = run(d, &["synth", "--per-class", "4", "--seed", "3", "--out", "data"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("data/synth.json").exists());

    let train = |out: &str| {
        let o = run(
            d,
            &["train", "--data", "data/synth.json", "--epochs", "1", "--batch-size", "8", "--seed", "5", "--quiet", "--out", out],
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    train("a");
    train("b");
    for f in ["record.jsonl", "curve.csv", "model.json"] {
        assert_eq!(std::fs::read(d.join("a").join(f)).unwrap(), std::fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }

    let model_a = std::fs::read(d.join("a/model.json")).unwrap();
    let o = run(d, &["rerun", "a/train.manifest.json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(d.join("a/model.json")).unwrap(), model_a);

    let o = run(d, &["--json", "evaluate", "--model", "a/model.json", "--data", "data/synth.json", "--out", "a"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let acc = v["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn preprocess_writes_standardized_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert!(run(d, &["synth", "--per-class", "2", "--out", "raw"]).status.success());
    let o = run(d, &["--json", "preprocess", "--input", "raw/synth.json", "--out", "pp", "--name", "clean"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["trials"], 12);
    assert!(d.join("pp/clean.json").exists());
    assert!(d.join("pp/clean.stats.json").exists());
    assert!(d.join("pp/preprocess.manifest.json").exists());
}
