use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scene-mockup"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = cli(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn full_workflow_round_trips_through_files() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(
        d,
        &[
            "--seed",
            "3",
            "--out",
            "template.json",
            "gen-templates",
            "--models",
            "16",
        ],
    );
    ok(
        d,
        &[
            "--seed",
            "3",
            "--out",
            "scenes",
            "gen-scenes",
            "--template",
            "template.json",
            "--layout",
            "row",
            "--count",
            "4",
            "--min-objects",
            "2",
            "--max-objects",
            "4",
        ],
    );
    assert_eq!(fs::read_dir(d.join("scenes")).unwrap().count(), 4);
    ok(
        d,
        &[
            "--out",
            "maps.kpm",
            "render-maps",
            "--scene",
            "scenes/scene_0000.json",
            "--template",
            "template.json",
        ],
    );

    let info = ok(d, &["kpm-info", "--maps", "maps.kpm"]);
    let header: Value = serde_json::from_slice(&info.stdout).unwrap();
    let template = json(&d.join("template.json"));
    assert_eq!(header["width"], 128);
    assert_eq!(
        header["channels"].as_u64().unwrap() as usize,
        template["mean"].as_array().map_or(0, |m| m.len() / 3)
    );

    ok(
        d,
        &[
            "--out",
            "gmm.json",
            "fit-gmm",
            "--scenes",
            "scenes",
            "--components",
            "2",
        ],
    );
    let scene = json(&d.join("scenes/scene_0000.json"));
    fs::write(d.join("camera.json"), scene["camera"].to_string()).unwrap();
    ok(
        d,
        &[
            "--out",
            "result.json",
            "infer",
            "--maps",
            "maps.kpm",
            "--camera",
            "camera.json",
            "--template",
            "template.json",
            "--gmm",
            "gmm.json",
            "--trace",
            "trace.jsonl",
        ],
    );
    let result = json(&d.join("result.json"));
    assert_eq!(
        result["objects"].as_array().unwrap().len(),
        scene["objects"].as_array().unwrap().len()
    );
    assert!(!fs::read_to_string(d.join("trace.jsonl"))
        .unwrap()
        .is_empty());

    let eval = ok(
        d,
        &[
            "evaluate",
            "--result",
            "result.json",
            "--gt",
            "scenes/scene_0000.json",
        ],
    );
    let report: Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(report["locang"]["f1"], 1.0);
}

#[test]
fn templates_go_to_stdout_without_out() {
    let tmp = TempDir::new().unwrap();
    let out = ok(tmp.path(), &["gen-templates", "--models", "12"]);
    let template: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(template.is_object());
}

#[test]
fn experiment_reports_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("config.json"),
        r#"{"drop_fractions": [0.0, 0.5], "scenes_per_bin": 2, "count_max": 3, "seed": 4}"#,
    )
    .unwrap();
    ok(d, &["--config", "config.json", "--out", "a", "experiment"]);
    ok(d, &["--config", "config.json", "--out", "b", "experiment"]);
    for name in ["report.json", "report.csv", "sweep.csv"] {
        assert_eq!(
            fs::read(d.join("a").join(name)).unwrap(),
            fs::read(d.join("b").join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn tune_returns_the_best_trial() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("config.json"),
        r#"{"count_max": 3, "template_models": 12}"#,
    )
    .unwrap();
    let out = ok(
        d,
        &[
            "--config",
            "config.json",
            "--seed",
            "2",
            "tune",
            "--budget",
            "2",
        ],
    );
    let result: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(result["trials"].as_array().unwrap().len(), 2);
}

#[test]
fn bad_input_exits_with_two() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fs::write(d.join("junk.kpm"), b"not a map file at all").unwrap();
    assert_eq!(
        cli(d, &["kpm-info", "--maps", "junk.kpm"]).status.code(),
        Some(2)
    );

    fs::write(d.join("config.json"), r#"{"scenes_per_bin": 0}"#).unwrap();
    assert_eq!(
        cli(d, &["--config", "config.json", "experiment"])
            .status
            .code(),
        Some(2)
    );

    assert_eq!(cli(d, &["no-such-command"]).status.code(), Some(2));
}

#[test]
fn internal_failures_exit_with_one() {
    let tmp = TempDir::new().unwrap();
    let out = cli(
        tmp.path(),
        &[
            "--out",
            "missing/dir/template.json",
            "gen-templates",
            "--models",
            "12",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
