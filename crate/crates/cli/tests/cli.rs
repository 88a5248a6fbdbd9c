mod common;

use std::fs;

use common::{kgcal, ok, write_tsv_kg, INGEST};

fn stderr(o: &std::process::Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &std::process::Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn unknown_flag_exits_2_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let o = kgcal(dir.path(), &["train-lp", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage:"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = kgcal(dir.path(), &["train-lp", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = kgcal(dir.path(), &["report", "--dim", "four"]);
    assert_eq!(o.status.code(), Some(2));
    let o = kgcal(dir.path(), &["report", "--dim", "4", "--tnorm", "x"]);
    assert_eq!(o.status.code(), Some(2));
    fs::write(dir.path().join("run.conf"), "dims = 4\n").unwrap();
    let o = kgcal(dir.path(), &["report", "--config", "run.conf"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown key `dims`"));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = kgcal(dir.path(), &["train-lp", "--kg", "missing.bin", "--out", "lp.ckpt"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("missing.bin"));
}

#[test]
fn flags_override_environment_override_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.conf"), "dim = 3\ncondition = full\n").unwrap();
    let lp_dim = |o: &std::process::Output| stdout(o).split("lp_dim=").nth(1).unwrap().split(' ').next().unwrap().to_owned();
    let o = ok(dir.path(), &["report", "--config", "run.conf"]);
    assert_eq!(lp_dim(&o), "3");
    assert!(stdout(&o).contains("condition=full"));
    let run = |args: &[&str]| {
        std::process::Command::new(env!("CARGO_BIN_EXE_kgcal"))
            .args(args)
            .current_dir(dir.path())
            .env("KGCAL_DIM", "5")
            .output()
            .unwrap()
    };
    assert_eq!(lp_dim(&run(&["report", "--config", "run.conf"])), "5");
    assert_eq!(lp_dim(&run(&["report", "--config", "run.conf", "--dim", "9"])), "9");
}

#[test]
fn report_prints_the_adapter_size() {
    let dir = tempfile::tempdir().unwrap();
    let o = ok(dir.path(), &["report", "--dim", "1000", "--condition", "pred", "--psi-layers", "1"]);
    assert!(stdout(&o).contains("adapter_params 4002"), "{}", stdout(&o));
}

#[test]
fn pipeline_writes_manifests_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_tsv_kg(d, 1, 30, 3, 240);
    ok(d, INGEST);
    let o = ok(d, &["train-lp", "--kg", "kg.bin", "--out", "lp.ckpt", "--dim", "8", "--steps", "30", "--batch-size", "32"]);
    let progress: Vec<&str> = std::str::from_utf8(&o.stderr).unwrap().lines().filter(|l| l.starts_with("step=")).collect();
    assert_eq!(progress.len(), 30);
    assert!(progress[0].starts_with("step=0 loss="));

    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("lp.ckpt.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "train-lp");
    assert_eq!(m["config"]["dim"], "8");
    assert_eq!(m["config"]["n3_weight"], "0.005");
    assert!(m["wall_time_secs"].as_f64().unwrap() >= 0.0);
    assert!(m["version"].is_string());

    fs::rename(d.join("lp.ckpt"), d.join("first.ckpt")).unwrap();
    ok(d, &["train-lp", "--config", "lp.ckpt.manifest.json"]);
    assert_eq!(fs::read(d.join("lp.ckpt")).unwrap(), fs::read(d.join("first.ckpt")).unwrap());

    ok(d, &["sample-queries", "--kg", "kg.bin", "--out", "q.jsonl", "--types", "2i,2in", "--per-type", "5", "--target", "train"]);
    let o = kgcal(d, &["train-adapter", "--lp", "lp.ckpt", "--queries", "q.jsonl", "--types", "2i,pi"]);
    assert_eq!(o.status.code(), Some(2), "existential types are rejected for training");
    ok(d, &["train-adapter", "--lp", "lp.ckpt", "--queries", "q.jsonl", "--types", "2i,2in", "--steps", "5"]);
    assert!(d.join("adapter.ckpt").exists() && d.join("adapter.ckpt.manifest.json").exists());

    let o = ok(d, &["answer", "--kg", "kg.bin", "--lp", "lp.ckpt", "--adapter", "adapter.ckpt", "--query", "?T : r0(e1, T)", "--topn", "4"]);
    let lines: Vec<&str> = std::str::from_utf8(&o.stdout).unwrap().lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("1\te"));
}

#[test]
fn explain_lists_every_beam_step() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_tsv_kg(d, 2, 20, 2, 120);
    ok(d, INGEST);
    ok(d, &["train-lp", "--kg", "kg.bin", "--out", "lp.ckpt", "--dim", "4", "--steps", "5", "--log-every", "100"]);
    fs::write(d.join("q.txt"), "?T : exists V . r0(e1, V) & r1(V, T)\n").unwrap();
    let o = ok(d, &["answer", "--kg", "kg.bin", "--lp", "lp.ckpt", "--query", "q.txt", "--beam-k", "3", "--explain"]);
    let text = stdout(&o);
    assert!(text.contains("step 0 branch=0 var=V atoms=[0] entries=3"), "{text}");
    assert!(text.contains("step 1 branch=0 var=T atoms=[1] entries=3"), "{text}");
    assert!(text.contains("parent=0"));
}
