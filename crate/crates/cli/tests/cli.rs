use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_triadground"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn parse_table1_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.tsv");
    let o = run(&["parse", "--in", &fixture("table1.conllu"), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 11);
    let per_query = |q: &str| rows.iter().filter(|r| r.starts_with(&format!("{q}\t"))).count();
    assert_eq!((1..=7).map(|i| per_query(&format!("q{i}"))).collect::<Vec<_>>(), [1, 1, 1, 1, 1, 1, 5]);
    assert!(rows.contains(&"q1\t1\tman\tman\tSELF"));
    assert!(rows.contains(&"q2\t1\tUKN\tUKN\tleft"));
}

#[test]
fn gradcheck_passes() {
    let o = run(&["gradcheck", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("< 1e-4"), "{}", stdout(&o));
}

#[test]
fn unknown_subcommand_prints_usage() {
    let o = run(&["frobnicate"]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn unknown_flag_rejected() {
    let o = run(&["gradcheck", "--bogus"]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn every_subcommand_has_help() {
    for (cmd, flag) in [
        ("parse", "--in"),
        ("gen-scenes", "--emb-out"),
        ("train", "--config"),
        ("eval", "--report"),
        ("ground", "--query-id"),
        ("ablate", "--seeds"),
        ("gradcheck", "--seed"),
    ] {
        let o = run(&[cmd, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{cmd}");
        assert!(stdout(&o).contains(flag), "{cmd} help lacks {flag}");
    }
}

#[test]
fn version_names_formats() {
    let o = run(&["--version"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("checkpoint format"));
}

#[test]
fn missing_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["parse", "--in", s(&dir.path().join("nope.conllu")), "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr(&o).lines().count(), 1);
    assert!(!dir.path().join("x").exists());
}

#[test]
fn invalid_config_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("s.jsonl");
    let emb = dir.path().join("e.txt");
    let o = run(&["gen-scenes", "--n", "2", "--seed", "1", "--out", s(&scenes), "--emb-out", s(&emb)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "epochs = 0\n").unwrap();
    let o = run(&["train", "--scenes", s(&scenes), "--emb", s(&emb), "--config", s(&cfg), "--out", s(&dir.path().join("ck"))]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let o = run(&["train", "--scenes", s(&scenes), "--emb", s(&emb), "--config", s(&cfg), "--out", s(&dir.path().join("ck"))]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    let o = run(&["train", "--scenes", s(&scenes), "--emb", s(&emb), "--tau=-1", "--out", s(&dir.path().join("ck"))]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("s.jsonl");
    assert!(run(&["gen-scenes", "--n", "2", "--seed", "1", "--out", s(&scenes)]).status.success());
    let ckpt = dir.path().join("bad.ckpt");
    std::fs::write(&ckpt, b"TRIADGND garbage").unwrap();
    let o = run(&["eval", "--scenes", s(&scenes), "--ckpt", s(&ckpt), "--report", s(&dir.path().join("r.jsonl"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("r.jsonl").exists());
}

fn train_and_eval(dir: &Path, scenes: &Path, held_out: &Path, emb: &Path, tag: &str) -> (Vec<u8>, String) {
    let out = dir.join(format!("ck-{tag}"));
    let o = run(&["train", "--scenes", s(scenes), "--emb", s(emb), "--config", &fixture("desk.toml"), "--epochs", "1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut files: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    assert_eq!(files, ["config.toml", "model.ckpt", "train.log.jsonl"]);

    let log = std::fs::read_to_string(out.join("train.log.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["step"], 1);
    assert_eq!(first["variant"], "Ours");
    assert!(first["loss"].is_number());

    let report = dir.join(format!("report-{tag}.jsonl"));
    let ckpt = out.join("model.ckpt");
    let o = run(&["eval", "--scenes", s(held_out), "--ckpt", s(&ckpt), "--report", s(&report)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    (std::fs::read(&ckpt).unwrap(), std::fs::read_to_string(&report).unwrap())
}

#[test]
fn train_eval_ground_round_trip_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("train.jsonl");
    let held_out = dir.path().join("test.jsonl");
    let emb = dir.path().join("emb.txt");
    let o = run(&["gen-scenes", "--n", "40", "--seed", "1", "--out", s(&scenes), "--emb-out", s(&emb)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(run(&["gen-scenes", "--n", "10", "--seed", "2", "--out", s(&held_out)]).status.success());
    assert_eq!(std::fs::read_to_string(&emb).unwrap(), std::fs::read_to_string(fixture("desk_embeddings.txt")).unwrap());

    let (ckpt_a, report_a) = train_and_eval(dir.path(), &scenes, &held_out, &emb, "a");
    let (ckpt_b, report_b) = train_and_eval(dir.path(), &scenes, &held_out, &emb, "b");
    assert!(ckpt_a == ckpt_b, "checkpoints differ");
    assert_eq!(report_a, report_b);

    let rows: Vec<serde_json::Value> = report_a.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 20);
    for key in ["query_id", "chosen", "gt", "iou", "correct", "scores"] {
        assert!(rows[0].get(key).is_some(), "report lacks {key}");
    }

    let qid = rows[0]["query_id"].as_str().unwrap();
    let ckpt = dir.path().join("ck-a/model.ckpt");
    let o = run(&["ground", "--scene", s(&held_out), "--query-id", qid, "--ckpt", s(&ckpt)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains(&format!("chosen {}", rows[0]["chosen"])), "{text}");
    assert_eq!(text.lines().filter(|l| l.trim_start().starts_with(char::is_numeric) || l.starts_with('*')).count(), 8);

    let o = run(&["ground", "--scene", s(&held_out), "--query-id", "missing", "--ckpt", s(&ckpt)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("s.jsonl");
    let emb = dir.path().join("e.txt");
    assert!(run(&["gen-scenes", "--n", "4", "--seed", "3", "--out", s(&scenes), "--emb-out", s(&emb)]).status.success());
    let out = dir.path().join("ck");
    let o = run(&[
        "train", "--scenes", s(&scenes), "--emb", s(&emb), "--config", &fixture("desk.toml"),
        "--seed", "9", "--mode", "soft", "--variant", "w/o L^r", "--epochs", "1", "--out", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let resolved: toml::Value = toml::from_str(&std::fs::read_to_string(out.join("config.toml")).unwrap()).unwrap();
    assert_eq!(resolved["seed"].as_integer(), Some(9));
    assert_eq!(resolved["epochs"].as_integer(), Some(1));
    assert_eq!(resolved["model"]["mode"].as_str(), Some("soft"));
    assert_eq!(resolved["units"]["reference"].as_bool(), Some(false));
    let log = std::fs::read_to_string(out.join("train.log.jsonl")).unwrap();
    assert!(log.lines().all(|l| l.contains("\"variant\":\"w/o L^r\"")));
}

#[test]
fn ablate_reports_every_variant() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.jsonl");
    let test = dir.path().join("test.jsonl");
    let emb = dir.path().join("e.txt");
    assert!(run(&["gen-scenes", "--n", "20", "--seed", "1", "--out", s(&train), "--emb-out", s(&emb)]).status.success());
    assert!(run(&["gen-scenes", "--n", "5", "--seed", "2", "--out", s(&test)]).status.success());
    let out = dir.path().join("ablation.json");
    let o = run(&[
        "ablate", "--train-scenes", s(&train), "--eval-scenes", s(&test), "--emb", s(&emb),
        "--seeds", "1,2", "--epochs", "1", "--out", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for label in ["w/o L^t", "w/o L^d", "w/o L^r", "w/o Recon", "Soft", "Single", "Ours"] {
        assert!(stdout(&o).lines().any(|l| l.starts_with(label)), "missing {label}");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 14);
}
