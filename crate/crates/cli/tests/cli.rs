use std::path::Path;
use std::process::{Command, Output};

fn hitter(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hitter")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = hitter(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const TINY: [&str; 16] = [
    "--set", "d_model=16",
    "--set", "ffn_dim=32",
    "--set", "heads=2",
    "--set", "entity_layers=1",
    "--set", "context_layers=1",
    "--set", "max_epochs=3",
    "--set", "eval_every=1",
    "--set", "batch_size=32",
];

fn generate(dir: &Path) -> String {
    let data = dir.join("data");
    ok(&["gen-synthetic", "--entities", "40", "--relations", "4", "--seed", "1", "--out", data.to_str().unwrap()]);
    data.to_str().unwrap().to_string()
}

#[test]
fn stats_prints_the_four_counts() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path());
    let json: serde_json::Value = serde_json::from_str(&ok(&["stats", "--data", &data])).unwrap();
    assert_eq!(json["relations"], 4);
    assert!(json["entities"].as_u64().unwrap() <= 40);
    assert!(json["avg_degree"].as_f64().unwrap() > 0.0);
}

#[test]
fn train_eval_and_analyses_work_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path());
    let run = dir.path().join("run");
    let mut args = vec!["train", "--data", &data, "--out", run.to_str().unwrap(), "--seed", "5"];
    args.extend(TINY);
    let echo: serde_json::Value = serde_json::from_str(&ok(&args)).unwrap();
    assert_eq!(echo["d_model"], 16);
    assert_eq!(echo["seed"], 5);
    for f in ["config.json", "best.ckpt", "ledger.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let ledger = std::fs::read_to_string(run.join("ledger.csv")).unwrap();
    assert_eq!(ledger.lines().count(), 4);

    let ckpt = run.join("best.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    let report: serde_json::Value = serde_json::from_str(&ok(&["eval", "--checkpoint", ckpt, "--split", "test"])).unwrap();
    let mrr = report["mrr"].as_f64().unwrap();
    assert!(mrr > 0.0 && mrr <= 1.0);
    for f in ["report.json", "relations.csv", "hops.csv", "ranks.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }

    let near = ok(&["analyze", "neighbors", "--checkpoint", ckpt, "--entity", "e0001", "--k", "3"]);
    assert_eq!(near.lines().count(), 3);
    let hops: serde_json::Value = serde_json::from_str(&ok(&["analyze", "hops", "--checkpoint", ckpt, "--split", "dev"])).unwrap();
    assert!(!hops.as_array().unwrap().is_empty());
}

#[test]
fn echoed_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path());
    let first = dir.path().join("a");
    let mut args = vec!["train", "--data", &data, "--out", first.to_str().unwrap()];
    args.extend(TINY);
    ok(&args);
    let second = dir.path().join("b");
    let echoed = first.join("config.json");
    ok(&["train", "--config", echoed.to_str().unwrap(), "--out", second.to_str().unwrap()]);

    // everything but the wall-clock column
    let ledger = |d: &Path| {
        std::fs::read_to_string(d.join("ledger.csv"))
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect::<Vec<_>>()
    };
    assert_eq!(ledger(&first), ledger(&second));
    assert_eq!(std::fs::read(first.join("best.ckpt")).unwrap(), std::fs::read(second.join("best.ckpt")).unwrap());
}

#[test]
fn bad_input_fails_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path());
    let out = hitter(&["train", "--data", &data, "--set", "dmodel=3"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown config key `dmodel`"));

    let out = hitter(&["stats", "--data", dir.path().join("nowhere").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = hitter(&["gen-synthetic", "--pattern", "spiral", "--out", dir.path().join("x").to_str().unwrap()]);
    assert!(!out.status.success());
}
