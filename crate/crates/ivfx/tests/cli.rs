use std::path::Path;
use std::process::{Command, Output};

fn ivfx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ivfx")).args(args).env("IVFX_THREADS", "1").output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = ivfx(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_two() {
    let out = ivfx(&["edit", "--prompt", "x", "--ckpt", "c", "--out", "o.ivfx"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--source"));
    assert_eq!(ivfx(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(ivfx(&["gen-data", "--kind", "general", "--count", "1", "--out", "x", "--bogus"]).status.code(), Some(2));
    assert_eq!(ivfx(&["gen-data", "--kind", "vfx", "--effect", "SPARKLE", "--count", "1", "--out", "x"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = ivfx(&["gen-data", "--kind", "vfx", "--count", "1", "--out", p(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(1));
    let out = ivfx(&["gen-data", "--kind", "general", "--count", "1", "--out", p(dir.path()), "--set", "synth.colour=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("synth.colour"));
    let out = ivfx(&["eval", "--ckpt", p(&dir.path().join("missing")), "--data", p(dir.path()), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn end_to_end_pipeline_on_a_tiny_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = |s: &str| dir.path().join(s);
    let tiny = ["--set", "model.depth=1", "--set", "model.model_dim=32", "--set", "model.heads=1", "--set", "train.steps=3"];

    ok(&["gen-data", "--kind", "general", "--count", "3", "--seed", "1", "--out", p(&d("general"))]);
    ok(&["gen-data", "--kind", "vfx", "--effect", "glow_outline", "--count", "2", "--seed", "2", "--out", p(&d("vfx"))]);
    assert!(d("vfx/00001/source.ivfx").exists());

    let (general, editor) = (d("general"), d("editor"));
    let mut args = vec!["train-editor", "--data", p(&general), "--out", p(&editor)];
    args.extend(tiny);
    ok(&args);
    let loss = std::fs::read_to_string(d("editor/loss.csv")).unwrap();
    assert_eq!(loss.lines().next(), Some("step,loss,lr"));
    assert_eq!(loss.lines().count(), 4);

    ok(&["train-effect", "--ckpt", p(&d("editor")), "--data", p(&d("vfx")), "--out", p(&d("effect")), "--set", "train.steps=2"]);
    assert!(d("effect/adapter/adapter.json").exists());
    ok(&["merge-lora", "--ckpt", p(&d("effect")), "--out", p(&d("merged"))]);
    ok(&["merge-lora", "--ckpt", p(&d("editor")), "--adapter", p(&d("effect/adapter")), "--out", p(&d("merged2"))]);
    assert_eq!(std::fs::read(d("merged/weights.ivfx")).unwrap(), std::fs::read(d("merged2/weights.ivfx")).unwrap());

    let edit = |out: &str| {
        ok(&[
            "edit",
            "--source",
            p(&d("vfx/00000/source.ivfx")),
            "--prompt",
            "add a glowing outline",
            "--ckpt",
            p(&d("effect")),
            "--steps",
            "2",
            "--cfg",
            "3",
            "--seed",
            "5",
            "--out",
            p(&d(out)),
            "--png-dir",
            p(&d("frames")),
            "--gif",
            p(&d("preview.gif")),
        ])
    };
    edit("a.ivfx");
    edit("b.ivfx");
    assert_eq!(std::fs::read(d("a.ivfx")).unwrap(), std::fs::read(d("b.ivfx")).unwrap());
    assert!(d("frames/frame_015.png").exists() && d("preview.gif").exists());

    ok(&["eval", "--ckpt", p(&d("effect")), "--data", p(&d("vfx")), "--out", p(&d("eval")), "--set", "sample.steps=2"]);
    let csv = std::fs::read_to_string(d("eval/eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let eff: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d("eval/effective-config.json")).unwrap()).unwrap();
    assert_eq!(eff["sample"]["steps"], 2);
}

#[test]
fn effective_config_reproduces_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["gen-data", "--kind", "general", "--count", "2", "--seed", "9", "--out", p(&a), "--set", "synth.max_subject_speed=0.5"]);
    ok(&["gen-data", "--kind", "general", "--count", "2", "--out", p(&b), "--config", p(&a.join("effective-config.json"))]);
    assert_eq!(std::fs::read(a.join("manifest.json")).unwrap(), std::fs::read(b.join("manifest.json")).unwrap());
}

#[test]
fn profile_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let shapes = dir.path().join("shapes.json");
    std::fs::write(
        &shapes,
        r#"[{"name":"stst","target":16,"sparse":4,"frame":4},{"name":"full-condition","target":16,"sparse":16,"frame":0}]"#,
    )
    .unwrap();
    let report = dir.path().join("report.json");
    ok(&[
        "profile",
        "--shapes",
        p(&shapes),
        "--out",
        p(&report),
        "--set",
        "profile.runs=2",
        "--set",
        "profile.warmup=1",
        "--set",
        "profile.model.depth=1",
    ]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
    assert!(v["ratio"]["analytic_quadratic"].as_f64().unwrap() > 1.0);
}
