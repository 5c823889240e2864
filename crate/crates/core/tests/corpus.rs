//! Corpus loading, vocabulary and generator checks against the shipped
//! fixture and independent counts.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use gog::corpus::{
    generate_toy_corpus, load_corpus, save_corpus, split_file, LengthLimits, Split, ToyConfig, Vocabulary, UNK,
};
use gog::GogError;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/three")
}

fn copy_fixture(to: &Path) {
    for entry in fs::read_dir(fixture()).unwrap() {
        let p = entry.unwrap().path();
        fs::copy(&p, to.join(p.file_name().unwrap())).unwrap();
    }
}

#[test]
fn fixture_has_three_dialogs_of_ten_rounds() {
    let c = load_corpus(&fixture(), Split::Train, LengthLimits::default()).unwrap();
    assert_eq!(c.dialogs.len(), 3);
    assert_eq!(c.report.rounds, 30);
    for a in &c.dialogs {
        assert_eq!(a.dialog.rounds.len(), 10);
        assert_eq!(a.dialog.regions.len(), 5);
        for r in &a.dialog.rounds {
            assert_eq!(r.candidates.len(), 100);
            assert_eq!(r.candidates[r.gt_index], r.answer);
            assert_eq!(r.candidates.iter().filter(|c| **c == r.answer).count(), 1);
        }
    }
}

#[test]
fn empty_dialog_file_is_an_empty_corpus() {
    let dir = tempfile::tempdir().unwrap();
    for kind in ["dialogs", "coref", "deps", "regions"] {
        fs::write(split_file(dir.path(), Split::Val, kind), "").unwrap();
    }
    let c = load_corpus(dir.path(), Split::Val, LengthLimits::default()).unwrap();
    assert!(c.dialogs.is_empty());
    assert_eq!(c.report.rounds, 0);
}

#[test]
fn ninety_nine_candidates_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    copy_fixture(dir.path());
    let path = split_file(dir.path(), Split::Train, "dialogs");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let round = &mut lines[1]["rounds"][4];
    let gt = round["gt_index"].as_u64().unwrap() as usize;
    let drop = if gt == 99 { 0 } else { 99 };
    round["candidates"].as_array_mut().unwrap().remove(drop);
    if let Some(rel) = round["relevance"].as_array_mut() {
        rel.remove(drop);
    }
    if drop == 0 {
        round["gt_index"] = serde_json::json!(gt - 1);
    }
    let out: Vec<String> = lines.iter().map(|v| v.to_string()).collect();
    fs::write(&path, out.join("\n")).unwrap();
    match load_corpus(dir.path(), Split::Train, LengthLimits::default()) {
        Err(GogError::Validation(msg)) => assert!(msg.contains("rounds[4].candidates"), "{msg}"),
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn missing_sidecar_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    copy_fixture(dir.path());
    let path = split_file(dir.path(), Split::Train, "deps");
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, text.lines().skip(1).collect::<Vec<_>>().join("\n")).unwrap();
    let err = load_corpus(dir.path(), Split::Train, LengthLimits::default()).unwrap_err();
    assert!(matches!(err, GogError::Load { .. }));
    assert!(err.to_string().contains("train.deps.jsonl"), "{err}");
}

#[test]
fn save_then_load_is_lossless() {
    let toy = generate_toy_corpus(&ToyConfig {
        n_dialogs: 6,
        ..ToyConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_corpus(dir.path(), Split::Train, &toy.dialogs).unwrap();
    let back = load_corpus(dir.path(), Split::Train, LengthLimits::default()).unwrap();
    assert_eq!(back.dialogs, toy.dialogs);
    assert_eq!(back.report.dropped_mentions, 0);
}

#[test]
fn same_seed_writes_identical_bytes() {
    let cfg = ToyConfig {
        n_dialogs: 8,
        seed: 21,
        ..ToyConfig::default()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    save_corpus(a.path(), Split::Train, &generate_toy_corpus(&cfg).unwrap().dialogs).unwrap();
    save_corpus(b.path(), Split::Train, &generate_toy_corpus(&cfg).unwrap().dialogs).unwrap();
    for kind in ["dialogs", "coref", "deps", "regions"] {
        let x = fs::read(split_file(a.path(), Split::Train, kind)).unwrap();
        let y = fs::read(split_file(b.path(), Split::Train, kind)).unwrap();
        assert_eq!(x, y, "{kind}");
    }
}

#[test]
fn coreference_chains_follow_one_entity() {
    let toy = generate_toy_corpus(&ToyConfig::default()).unwrap();
    assert_eq!(toy.dialogs.len(), 50);
    let mut chains = 0;
    for (a, ledger) in toy.dialogs.iter().zip(&toy.ledger) {
        assert_eq!(a.coref.chains.len(), ledger.chain_entities.len());
        for (chain, ents) in a.coref.chains.iter().zip(&ledger.chain_entities) {
            chains += 1;
            assert_eq!(chain.len(), ents.len());
            assert!(ents.windows(2).all(|w| w[0] == w[1]), "{} mixes entities {ents:?}", a.dialog.image_id);
        }
    }
    assert!(chains > 0);
}

#[test]
fn every_question_has_a_single_rooted_tree() {
    let toy = generate_toy_corpus(&ToyConfig::default()).unwrap();
    for a in &toy.dialogs {
        for (parse, round) in a.deps.rounds.iter().zip(&a.dialog.rounds) {
            assert_eq!(parse.heads.len(), round.question.len());
            assert_eq!(parse.heads.iter().filter(|&&h| h == -1).count(), 1);
            parse.validate().unwrap();
        }
    }
}

#[test]
fn vocabulary_matches_word_count() {
    let c = load_corpus(&fixture(), Split::Train, LengthLimits::default()).unwrap();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for a in &c.dialogs {
        let d = &a.dialog;
        let mut seqs: Vec<&Vec<String>> = vec![&d.caption];
        for r in &d.rounds {
            seqs.push(&r.question);
            seqs.push(&r.answer);
        }
        for s in seqs {
            for t in s {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    for min_freq in [1, 5, 40] {
        let v = Vocabulary::build(&c.dialogs, min_freq);
        let kept = counts.values().filter(|&&n| n >= min_freq).count();
        assert_eq!(v.len(), 4 + kept, "min_freq {min_freq}");
        for (tok, &n) in &counts {
            assert_eq!(v.id(tok) == UNK, n < min_freq, "{tok} seen {n} times");
        }
    }
}
