//! End-to-end runs of the command-line tool: synthesize, run, report.

use std::path::Path;
use std::process::Command;

fn cli(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_fewshot-da")).args(args).env("RUST_LOG", "warn").output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(out.status.success(), "{args:?} failed: {}{}", stdout, String::from_utf8_lossy(&out.stderr));
    stdout
}

fn write_json(path: &Path, v: serde_json::Value) {
    std::fs::write(path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

#[test]
fn synth_run_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write_json(&p.join("spec.json"), serde_json::json!({"source_len": 400, "target_len": 300, "seed": 5}));
    let data = p.join("data");
    cli(&["synth", "--spec", p.join("spec.json").to_str().unwrap(), "--out", data.to_str().unwrap()]);
    assert!(data.join("source.csv").exists() && data.join("target.csv").exists());

    let results = p.join("results");
    std::fs::create_dir(&results).unwrap();
    // deterministic methods are scored once, seeded ones once per evaluation
    for (method, scores) in [("lr", 1), ("dnn", 2)] {
        let cfg = p.join(format!("{method}.json"));
        write_json(
            &cfg,
            serde_json::json!({
                "name": "synthetic",
                "source": [data.join("source.csv")],
                "target": [data.join("target.csv")],
                "method": method,
                "evals": 2,
                "dnn": {"epochs": 3},
            }),
        );
        let out = results.join(format!("{method}.json"));
        let text = cli(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(text.contains("mean accuracy"), "{text}");
        let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(r["cells"][0]["accuracies"].as_array().unwrap().len(), scores);
    }

    let table = p.join("table.md");
    let text = cli(&["report", "--in", results.to_str().unwrap(), "--out", table.to_str().unwrap()]);
    assert!(text.starts_with("| Source-Target | LR | DNN |"), "{text}");
    assert!(text.contains("| synthetic |"));
    assert!(table.with_extension("json").exists());
}

#[test]
fn rejects_config_without_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    write_json(&cfg, serde_json::json!({"method": "lr"}));
    let out = Command::new(env!("CARGO_BIN_EXE_fewshot-da")).args(["run", "--config", cfg.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
}
