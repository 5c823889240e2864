use std::path::Path;
use std::process::{Command, Output};

fn gog(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gog")).args(args).output().expect("binary runs")
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
fn gen_train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let o = gog(&["gen-toy", "--out", s(&data), "--seed", "7", "--dialogs", "50"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(data.join("train.dialogs.jsonl").is_file());
    assert!(data.join("val.regions.jsonl").is_file());

    let o = gog(&[
        "train", "--corpus", s(&data), "--run", s(&run), "--epochs", "1",
        "--set", "hidden=16", "--set", "word_dim=16", "--set", "heads=2", "--mode", "multi",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("epoch   1"));
    for f in ["config.txt", "vocab.txt", "metrics.jsonl", "checkpoint.bin", "optimizer.bin"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }

    let o = gog(&["eval", "--corpus", s(&data), "--run", s(&run), "--split", "val"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("val disc: MRR") && out.contains("val gen: MRR"), "{out}");
    assert!(run.join("dumps/val.disc.jsonl").is_file());

    let o = gog(&["inspect", s(&run)]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("config_digest"));
}

#[test]
fn eval_without_checkpoint_is_usage_error() {
    let o = gog(&["eval", "--corpus", "nowhere"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--run"));

    let dir = tempfile::tempdir().unwrap();
    let o = gog(&["eval", "--corpus", "nowhere", "--run", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn unknown_flag_prints_usage() {
    let o = gog(&["train", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn ablation_row_names_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(gog(&["gen-toy", "--out", s(&data), "--dialogs", "3"]).status.success());
    let run = dir.path().join("run");
    let o = gog(&[
        "train", "--corpus", s(&data), "--run", s(&run), "--epochs", "1", "--set", "hidden=8",
        "--set", "word_dim=8", "--set", "heads=2", "--ablate", "w/o I-Graph,q-aware",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = std::fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(cfg.contains("ablations = i-graph,q-aware"), "{cfg}");

    let o = gog(&["train", "--corpus", s(&data), "--run", s(&run), "--ablate", "w/o Everything"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn digest_mismatch_prints_both_digests() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    assert!(gog(&["gen-toy", "--out", s(&data), "--dialogs", "3"]).status.success());
    let o = gog(&[
        "train", "--corpus", s(&data), "--run", s(&run), "--epochs", "1", "--set", "hidden=8",
        "--set", "word_dim=8", "--set", "heads=2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let other = dir.path().join("other.txt");
    std::fs::write(&other, "hidden = 16\nword_dim = 8\nheads = 2\n").unwrap();
    let o = gog(&["eval", "--corpus", s(&data), "--run", s(&run), "--config", s(&other)]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("digest mismatch"), "{err}");
    assert!(err.matches(|c: char| c.is_ascii_hexdigit()).count() >= 128, "{err}");
}

#[test]
fn build_graphs_dumps_three_graphs_per_round() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(gog(&["gen-toy", "--out", s(&data), "--dialogs", "2", "--turns", "2"]).status.success());
    let o = gog(&["build-graphs", "--corpus", s(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.matches("# toy-").count(), 4);
    assert_eq!(out.matches("graph history").count(), 4);
    assert_eq!(out.matches("graph image").count(), 4);
}
