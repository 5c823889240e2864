//! Token vocabulary with fixed special ids.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use super::types::AnnotatedDialog;
use crate::error::{GogError, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SOS: usize = 2;
pub const EOS: usize = 3;
const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<sos>", "<eos>"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
    pub min_freq: usize,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>, min_freq: usize) -> Self {
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, ids, min_freq }
    }

    /// Counts caption, question and answer tokens; keeps tokens seen at least
    /// `min_freq` times, ordered by descending frequency then lexicographically.
    pub fn build(dialogs: &[AnnotatedDialog], min_freq: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for a in dialogs {
            let d = &a.dialog;
            let rounds = d.rounds.iter().flat_map(|r| r.question.iter().chain(&r.answer));
            for t in d.caption.iter().chain(rounds) {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_freq && !SPECIALS.contains(&t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(t, _)| t.to_string()))
            .collect();
        Vocabulary::from_tokens(tokens, min_freq)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// One token per line, in id order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = format!("# min_freq={}\n", self.min_freq);
        for t in &self.tokens {
            text.push_str(t);
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| GogError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| GogError::io(path, e))?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let min_freq = header
            .strip_prefix("# min_freq=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| GogError::Load {
                record: path.display().to_string(),
                field: "min_freq".into(),
                message: "missing header".into(),
            })?;
        let tokens: Vec<String> = lines.map(str::to_string).collect();
        if tokens.len() < 4 || tokens[..4] != SPECIALS.map(String::from) {
            return Err(GogError::Load {
                record: path.display().to_string(),
                field: "specials".into(),
                message: "special tokens must occupy ids 0-3".into(),
            });
        }
        Ok(Vocabulary::from_tokens(tokens, min_freq))
    }
}

/// Pads with [`PAD`] or keeps the prefix so the result has exactly
/// `max_len` ids. Returns the ids and the count of real tokens.
pub fn pad_or_truncate(ids: &[usize], max_len: usize) -> (Vec<usize>, usize) {
    let valid = ids.len().min(max_len);
    let mut out = ids[..valid].to_vec();
    out.resize(max_len, PAD);
    (out, valid)
}
