//! Corpus directory reader and writer.
//!
//! A corpus directory holds four line-delimited JSON files per split, one
//! object per dialog, joined on `image_id`:
//!
//! * `{split}.dialogs.jsonl`: `{"image_id", "caption", "rounds": [{"question",
//!   "answer", "candidates": [100 strings], "gt_index", "relevance"?}]}`.
//!   Token sequences are whitespace-separated strings.
//! * `{split}.coref.jsonl`: `{"image_id", "chains": [[{"turn", "start", "end"}]]}`.
//!   Turn 0 is the caption, turn `k >= 1` the question of round `k - 1`;
//!   spans are half-open token ranges.
//! * `{split}.deps.jsonl`: `{"image_id", "rounds": [{"heads", "labels"}]}`,
//!   one parse per question, `-1` marking the root.
//! * `{split}.regions.jsonl`: `{"image_id", "image_size": [w, h],
//!   "regions": [{"bbox": [x1, y1, x2, y2], "feature": [...]}]}`.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::types::{
    AnnotatedDialog, CorefAnnotation, DependencyAnnotation, DependencyParse, DialogInstance, Mention, Region,
    Round, Split,
};
use crate::error::{GogError, Result};

/// Per-kind token caps applied when encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LengthLimits {
    pub caption: usize,
    pub question: usize,
    pub answer: usize,
}

impl Default for LengthLimits {
    fn default() -> Self {
        LengthLimits {
            caption: 40,
            question: 20,
            answer: 20,
        }
    }
}

/// Counts of what loading had to drop or will truncate.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub dialogs: usize,
    pub rounds: usize,
    /// Coreference mentions whose span crosses the truncation point.
    pub dropped_mentions: usize,
    pub truncated_questions: usize,
    pub truncated_candidates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub dialogs: Vec<AnnotatedDialog>,
    pub report: LoadReport,
}

#[derive(Serialize, Deserialize)]
struct RoundRecord {
    question: String,
    answer: String,
    candidates: Vec<String>,
    gt_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    relevance: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct DialogRecord {
    image_id: String,
    caption: String,
    rounds: Vec<RoundRecord>,
}

#[derive(Serialize, Deserialize)]
struct CorefRecord {
    image_id: String,
    chains: Vec<Vec<Mention>>,
}

#[derive(Serialize, Deserialize)]
struct DepsRecord {
    image_id: String,
    rounds: Vec<DependencyParse>,
}

#[derive(Serialize, Deserialize)]
struct RegionsRecord {
    image_id: String,
    image_size: [f64; 2],
    regions: Vec<Region>,
}

pub fn tokenize(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn join(tokens: &[String]) -> String {
    tokens.join(" ")
}

pub fn split_file(dir: &Path, split: Split, kind: &str) -> PathBuf {
    dir.join(format!("{}.{kind}.jsonl", split.name()))
}

fn field_of(msg: &str) -> String {
    msg.split('`').nth(1).unwrap_or("-").to_string()
}

fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| GogError::io(path, e))?;
    let name = path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| {
            let message = e.to_string();
            GogError::Load {
                record: format!("{name} line {}", i + 1),
                field: field_of(&message),
                message,
            }
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn index_by_id<T>(path: &Path, records: Vec<T>, id: impl Fn(&T) -> &str) -> Result<HashMap<String, T>> {
    let mut map = HashMap::new();
    for r in records {
        let key = id(&r).to_string();
        if map.contains_key(&key) {
            return Err(GogError::Load {
                record: format!("{} image {key}", path.display()),
                field: "image_id".into(),
                message: "duplicate image_id".into(),
            });
        }
        map.insert(key, r);
    }
    Ok(map)
}

fn missing(path: &Path, image_id: &str) -> GogError {
    GogError::Load {
        record: format!("{} image {image_id}", path.display()),
        field: "image_id".into(),
        message: "no sidecar record for this dialog".into(),
    }
}

pub fn load_corpus(dir: &Path, split: Split, limits: LengthLimits) -> Result<Corpus> {
    let dialogs_path = split_file(dir, split, "dialogs");
    let coref_path = split_file(dir, split, "coref");
    let deps_path = split_file(dir, split, "deps");
    let regions_path = split_file(dir, split, "regions");
    let dialogs: Vec<DialogRecord> = read_records(&dialogs_path)?;
    let mut coref = index_by_id(&coref_path, read_records::<CorefRecord>(&coref_path)?, |r| &r.image_id)?;
    let mut deps = index_by_id(&deps_path, read_records::<DepsRecord>(&deps_path)?, |r| &r.image_id)?;
    let mut regions = index_by_id(&regions_path, read_records::<RegionsRecord>(&regions_path)?, |r| {
        &r.image_id
    })?;

    let mut report = LoadReport::default();
    let mut out = Vec::with_capacity(dialogs.len());
    for rec in dialogs {
        let id = rec.image_id.clone();
        let reg = regions.remove(&id).ok_or_else(|| missing(&regions_path, &id))?;
        let co = coref.remove(&id).ok_or_else(|| missing(&coref_path, &id))?;
        let dp = deps.remove(&id).ok_or_else(|| missing(&deps_path, &id))?;
        let dialog = DialogInstance {
            image_id: id.clone(),
            image_size: (reg.image_size[0], reg.image_size[1]),
            regions: reg.regions,
            caption: tokenize(&rec.caption),
            rounds: rec
                .rounds
                .into_iter()
                .map(|r| Round {
                    question: tokenize(&r.question),
                    answer: tokenize(&r.answer),
                    candidates: r.candidates.iter().map(|c| tokenize(c)).collect(),
                    gt_index: r.gt_index,
                    relevance: r.relevance,
                })
                .collect(),
        };
        dialog.validate()?;
        let deps_ann = DependencyAnnotation { rounds: dp.rounds };
        validate_deps(&dialog, &deps_ann)?;
        let chains = validate_coref(&dialog, co.chains, limits, &mut report)?;
        report.dialogs += 1;
        report.rounds += dialog.rounds.len();
        for r in &dialog.rounds {
            report.truncated_questions += usize::from(r.question.len() > limits.question);
            report.truncated_candidates += r.candidates.iter().filter(|c| c.len() > limits.answer).count();
        }
        out.push(AnnotatedDialog {
            dialog,
            coref: CorefAnnotation { chains },
            deps: deps_ann,
        });
    }
    Ok(Corpus { dialogs: out, report })
}

fn validate_deps(dialog: &DialogInstance, deps: &DependencyAnnotation) -> Result<()> {
    if deps.rounds.len() != dialog.rounds.len() {
        return Err(GogError::Annotation(format!(
            "dialog {}: {} parses for {} rounds",
            dialog.image_id,
            deps.rounds.len(),
            dialog.rounds.len()
        )));
    }
    for (k, (parse, round)) in deps.rounds.iter().zip(&dialog.rounds).enumerate() {
        if parse.heads.len() != round.question.len() {
            return Err(GogError::Annotation(format!(
                "dialog {} round {k}: parse covers {} tokens, question has {}",
                dialog.image_id,
                parse.heads.len(),
                round.question.len()
            )));
        }
        parse
            .validate()
            .map_err(|e| GogError::Annotation(format!("dialog {} round {k}: {e}", dialog.image_id)))?;
    }
    Ok(())
}

fn validate_coref(
    dialog: &DialogInstance,
    chains: Vec<Vec<Mention>>,
    limits: LengthLimits,
    report: &mut LoadReport,
) -> Result<Vec<Vec<Mention>>> {
    let mut kept = Vec::with_capacity(chains.len());
    for chain in chains {
        let mut c = Vec::with_capacity(chain.len());
        for m in chain {
            let tokens = dialog.coref_turn_tokens(m.turn).ok_or_else(|| {
                GogError::Annotation(format!(
                    "dialog {}: mention refers to turn {} but the dialog has {} rounds",
                    dialog.image_id,
                    m.turn,
                    dialog.rounds.len()
                ))
            })?;
            if m.start >= m.end || m.end > tokens.len() {
                return Err(GogError::Annotation(format!(
                    "dialog {}: span [{}, {}) outside turn {} of length {}",
                    dialog.image_id,
                    m.start,
                    m.end,
                    m.turn,
                    tokens.len()
                )));
            }
            let cap = if m.turn == 0 { limits.caption } else { limits.question };
            if m.end > cap {
                report.dropped_mentions += 1;
                continue;
            }
            c.push(m);
        }
        kept.push(c);
    }
    Ok(kept)
}

fn write_lines<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| GogError::io(path, e))?;
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| GogError::Validation(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| GogError::io(path, e))?;
    }
    Ok(())
}

pub fn save_corpus(dir: &Path, split: Split, dialogs: &[AnnotatedDialog]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| GogError::io(dir, e))?;
    let d: Vec<DialogRecord> = dialogs
        .iter()
        .map(|a| DialogRecord {
            image_id: a.dialog.image_id.clone(),
            caption: join(&a.dialog.caption),
            rounds: a
                .dialog
                .rounds
                .iter()
                .map(|r| RoundRecord {
                    question: join(&r.question),
                    answer: join(&r.answer),
                    candidates: r.candidates.iter().map(|c| join(c)).collect(),
                    gt_index: r.gt_index,
                    relevance: r.relevance.clone(),
                })
                .collect(),
        })
        .collect();
    let c: Vec<CorefRecord> = dialogs
        .iter()
        .map(|a| CorefRecord {
            image_id: a.dialog.image_id.clone(),
            chains: a.coref.chains.clone(),
        })
        .collect();
    let p: Vec<DepsRecord> = dialogs
        .iter()
        .map(|a| DepsRecord {
            image_id: a.dialog.image_id.clone(),
            rounds: a.deps.rounds.clone(),
        })
        .collect();
    let g: Vec<RegionsRecord> = dialogs
        .iter()
        .map(|a| RegionsRecord {
            image_id: a.dialog.image_id.clone(),
            image_size: [a.dialog.image_size.0, a.dialog.image_size.1],
            regions: a.dialog.regions.clone(),
        })
        .collect();
    write_lines(&split_file(dir, split, "dialogs"), &d)?;
    write_lines(&split_file(dir, split, "coref"), &c)?;
    write_lines(&split_file(dir, split, "deps"), &p)?;
    write_lines(&split_file(dir, split, "regions"), &g)
}
