//! End-to-end behaviour of the command line through `run`.

use std::path::Path;

use qembed_cli::{run, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE};
use serde_json::{json, Value};

struct Outcome {
    code: i32,
    out: String,
    log: String,
}

fn qembed(args: &[&str]) -> Outcome {
    let mut out = Vec::new();
    let mut log = Vec::new();
    let code = run(
        std::iter::once("qembed").chain(args.iter().copied()),
        &mut out,
        &mut log,
    );
    Outcome {
        code,
        out: String::from_utf8(out).unwrap(),
        log: String::from_utf8(log).unwrap(),
    }
}

/// The last log line parsed as the JSON error record.
fn error_record(o: &Outcome) -> Value {
    serde_json::from_str(o.log.lines().last().unwrap()).unwrap()
}

fn write_config(dir: &Path, config: Value) -> String {
    let path = dir.join("run.json");
    std::fs::write(&path, config.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn in_dir(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn empty_config_materializes_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.json");
    std::fs::write(&path, "").unwrap();
    let o = qembed(&[
        "--config",
        path.to_str().unwrap(),
        "--seed",
        "9",
        "gradcheck",
    ]);
    assert_eq!(o.code, EXIT_OK, "{}", o.log);
    let echo = o
        .log
        .lines()
        .find_map(|l| l.strip_prefix("config "))
        .unwrap();
    let echo: Value = serde_json::from_str(echo).unwrap();
    assert_eq!(echo["K"], 120);
    assert_eq!(echo["type_dim"], 108);
    assert_eq!(echo["seed"], 9);
    assert!(o.log.lines().any(|l| l == "seed 9"));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({"foo": 1}));
    let o = qembed(&["--config", &cfg, "gradcheck"]);
    assert_eq!(o.code, EXIT_CONFIG);
    assert_eq!(error_record(&o)["key"], "foo");
}

#[test]
fn negative_sample_size_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({"K": -1}));
    let o = qembed(&["--config", &cfg, "gradcheck"]);
    assert_eq!(o.code, EXIT_CONFIG);
    let record = error_record(&o);
    assert_eq!(record["key"], "K");
    assert_eq!(record["code"], EXIT_CONFIG);

    let o = qembed(&["--set", "K=-1", "gradcheck"]);
    assert_eq!(o.code, EXIT_CONFIG);
    assert_eq!(error_record(&o)["key"], "K");
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({"dim": 12, "seed": 3, "K": 7}));
    let o = qembed(&[
        "--config",
        &cfg,
        "--set",
        "dim=20",
        "--set",
        "dim=24",
        "--seed",
        "5",
        "gradcheck",
    ]);
    assert_eq!(o.code, EXIT_OK, "{}", o.log);
    let echo: Value = serde_json::from_str(
        o.log
            .lines()
            .find_map(|l| l.strip_prefix("config "))
            .unwrap(),
    )
    .unwrap();
    assert_eq!(echo["dim"], 24);
    assert_eq!(echo["seed"], 5);
    assert_eq!(echo["K"], 7);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(qembed(&["no-such-command"]).code, EXIT_USAGE);
    assert_eq!(qembed(&[]).code, EXIT_USAGE);
    let o = qembed(&["answer", "--type", "1p"]);
    assert_eq!(o.code, EXIT_USAGE);
    assert_eq!(error_record(&o)["error"], "usage");
    assert_eq!(qembed(&["--help"]).code, EXIT_OK);
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = in_dir(dir.path(), "absent.tsv");
    let o = qembed(&["--set", &format!("train_triples={missing}"), "build-kg"]);
    assert_eq!(o.code, EXIT_DATA);
    let record = error_record(&o);
    assert_eq!(record["error"], "data");
    assert!(record["message"].as_str().unwrap().contains("absent.tsv"));
}

#[test]
fn gradcheck_passes_on_fresh_init() {
    let o = qembed(&["gradcheck"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.log);
    let lines: Vec<&str> = o.out.lines().collect();
    assert!(lines.iter().any(|l| l.starts_with("primitive ")));
    assert!(lines.iter().any(|l| l.starts_with("full_loss box ")));
    assert!(lines.iter().any(|l| l.starts_with("full_loss beta 2in ")));
    for line in lines {
        let err: f64 = line
            .split_whitespace()
            .find_map(|w| w.strip_prefix("max_rel_error="))
            .unwrap()
            .parse()
            .unwrap();
        let limit = if line.starts_with("primitive") {
            1e-4
        } else {
            1e-3
        };
        assert!(err < limit, "{line}");
        assert!(line.ends_with(" ok"), "{line}");
    }
    // Exit 4 is reserved for checks that run but miss their threshold.
    assert_ne!(o.code, EXIT_NUMERIC);
}

#[test]
fn box_refuses_negation_training_data() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(
        d,
        json!({
            "preset": "desk",
            "train_triples": in_dir(d, "train.tsv"),
            "synthetic_entities": 40,
            "synthetic_triples": 160,
            "query_types": ["1p", "2in"],
            "queries_per_type": 10,
            "queries_output": in_dir(d, "train.q"),
            "train_queries": in_dir(d, "train.q"),
            "checkpoint": in_dir(d, "model.ckpt"),
            "max_steps": 5,
        }),
    );
    for cmd in ["build-kg", "make-queries"] {
        let o = qembed(&["--config", &cfg, cmd]);
        assert_eq!(o.code, EXIT_OK, "{cmd}: {}", o.log);
    }
    let o = qembed(&["--config", &cfg, "--set", "backend=box", "train"]);
    assert_eq!(o.code, EXIT_CONFIG, "{}", o.log);
    let message = error_record(&o)["message"].as_str().unwrap().to_string();
    assert!(
        message.contains("negation queries are excluded for box embeddings"),
        "{message}"
    );
    assert!(!d.join("model.ckpt").exists());

    let o = qembed(&["--config", &cfg, "--set", "backend=beta", "train"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.log);
}

#[test]
fn answer_ranks_known_tails_first() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("kg.tsv"), "a\tr\tb\na\tr\tc\n").unwrap();
    let query = json!({"type": "1p", "anchors": ["a"], "relations": ["r"],
        "easy_answers": ["b", "c"], "hard_answers": []});
    std::fs::write(d.join("train.q"), format!("{query}\n")).unwrap();
    let cfg = write_config(
        d,
        json!({
            "preset": "desk",
            "backend": "box",
            "train_triples": in_dir(d, "kg.tsv"),
            "train_queries": in_dir(d, "train.q"),
            "checkpoint": in_dir(d, "model.ckpt"),
            "negatives": 1,
            "batch_size": 4,
            "max_steps": 300,
            "log_every": 0,
        }),
    );
    let o = qembed(&["--config", &cfg, "train"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.log);
    let o = qembed(&[
        "--config",
        &cfg,
        "answer",
        "--type",
        "1p",
        "--anchors",
        "a",
        "--relations",
        "r",
    ]);
    assert_eq!(o.code, EXIT_OK, "{}", o.log);
    let rows: Vec<Vec<&str>> = o.out.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 3);
    let mut top: Vec<&str> = rows[..2].iter().map(|r| r[1]).collect();
    top.sort();
    assert_eq!(top, ["b", "c"]);
    assert_eq!(rows[2][1], "a");
    let dist: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(dist.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn binary_reports_exit_codes() {
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_qembed"))
        .args(["--set", "K=-1", "gradcheck"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(EXIT_CONFIG));
    let last = String::from_utf8(status.stderr).unwrap();
    let record: Value = serde_json::from_str(last.lines().last().unwrap()).unwrap();
    assert_eq!(record["key"], "K");
}
