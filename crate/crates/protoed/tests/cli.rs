use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn protoed(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_protoed")).current_dir(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn error_kind(o: &Output) -> String {
    let line = String::from_utf8_lossy(&o.stderr);
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap_or_else(|_| panic!("not JSON: {line}"));
    v["error"]["kind"].as_str().unwrap().to_string()
}

const CONFIG: &str = r#"
[optimizer]
lr_grid = [0.1]
steps = 8

[encoder]
buckets = 256
dim = 12
hidden = 16

[benchmark]
n_types = 4
pool_sentences = 120
test_sentences = 40
n_source_types = 2
"#;

#[test]
fn end_to_end_session() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("cfg.toml"), CONFIG).unwrap();
    let ok = |args: &[&str]| {
        let o = protoed(d, args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        stdout(&o)
    };
    ok(&["gen-synth", "--out", "pool.jsonl", "--schema-out", "schema.json", "--n-types", "4", "--n-sentences", "150"]);
    ok(&["--seed", "3", "gen-synth", "--out", "test.jsonl", "--n-types", "4", "--n-sentences", "40"]);
    let s = ok(&["--seed", "1", "sample", "--corpus", "pool.jsonl", "--schema", "schema.json", "--k-train", "2", "--k-dev", "1", "--out-train", "train.jsonl", "--out-dev", "dev.jsonl"]);
    assert!(s.starts_with("train "));
    let s = ok(&["split-transfer", "--corpus", "pool.jsonl", "--n-source-types", "2", "--out-source", "src.jsonl", "--out-target-pool", "tgt.jsonl"]);
    assert!(s.contains("target types"));

    let s = ok(&[
        "--config", "cfg.toml", "train", "--train", "train.jsonl", "--dev", "dev.jsonl", "--test", "test.jsonl", "--schema", "schema.json",
        "--method", "fsls", "--out", "m.ckpt", "--pred-out", "pred.jsonl", "--log", "runs.jsonl",
    ]);
    let f1_line = s.lines().find(|l| l.starts_with("F1 ")).unwrap().to_string();
    assert_eq!(f1_line.len(), "F1 0.0000".len());
    let by_pred = ok(&["eval", "--gold", "test.jsonl", "--pred", "pred.jsonl"]);
    let by_ckpt = ok(&["eval", "--gold", "test.jsonl", "--checkpoint", "m.ckpt", "--schema", "schema.json"]);
    assert_eq!(by_pred, by_ckpt);
    assert!(by_pred.contains(&f1_line));
    assert_eq!(fs::read_to_string(d.join("runs.jsonl")).unwrap().lines().count(), 1);

    let table = ok(&["--config", "cfg.toml", "grid", "--methods", "fsls;protonet", "--seeds", "2", "--json", "g.json"]);
    assert_eq!(table.lines().count(), 3);
    let again = ok(&["--config", "cfg.toml", "grid", "--methods", "fsls;protonet", "--seeds", "2"]);
    assert_eq!(table, again);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("g.json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 2);

    let t = ok(&["--config", "cfg.toml", "transfer-grid", "--sources", "none;fsls", "--targets", "fsls", "--seeds", "1"]);
    assert!(t.contains("none -> fsls") && t.contains("fsls -> fsls"));
}

#[test]
fn failures_exit_nonzero_with_an_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = protoed(d, &["eval", "--gold", "missing.jsonl", "--pred", "missing.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_kind(&o), "io");

    fs::write(d.join("bad.jsonl"), "{\"id\":\"a\",\"tokens\":[\"x\"]}\nnot json\n").unwrap();
    let o = protoed(d, &["sample", "--corpus", "bad.jsonl", "--k-train", "1", "--out-train", "t.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_kind(&o), "parse");
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.jsonl:2"));

    fs::write(d.join("cfg.toml"), "nonsense = 1\n").unwrap();
    let o = protoed(d, &["--config", "cfg.toml", "grid", "--methods", "fsls"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_kind(&o), "config");

    let o = protoed(d, &["grid", "--methods", "no-such-method", "--seeds", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_kind(&o), "core");

    let o = protoed(d, &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_kind(&o), "usage");

    let o = protoed(d, &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("transfer-grid"));
}
