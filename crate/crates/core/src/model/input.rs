//! Per-round network inputs: token ids, region features and relation graphs.

use super::config::ModelConfig;
use crate::corpus::{AnnotatedDialog, Vocabulary};
use crate::error::{GogError, Result};
use crate::graphs::{build_dialog_graphs, DialogGraphs, SpatialThresholds};
use crate::tensor::Matrix;

/// Everything the network needs to score one round. Token id lists are
/// already truncated to the configured caps and carry no padding.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundInput {
    pub image_id: String,
    pub round: usize,
    pub question: Vec<usize>,
    /// Caption, then question plus answer of each earlier round.
    pub history: Vec<Vec<usize>>,
    /// `μ × d_v` raw region features.
    pub regions: Matrix,
    pub graphs: DialogGraphs,
    pub candidates: Vec<Vec<usize>>,
    pub gt_index: usize,
    pub relevance: Option<Vec<f64>>,
}

impl RoundInput {
    /// Validity mask of the padded question positions.
    pub fn question_mask(&self, question_len: usize) -> Vec<bool> {
        (0..question_len).map(|i| i < self.question.len()).collect()
    }
}

fn capped(vocab: &Vocabulary, tokens: &[String], cap: usize) -> Vec<usize> {
    let mut ids = vocab.encode(tokens);
    ids.truncate(cap);
    ids
}

/// Flattens dialogs into rounds in corpus order.
pub fn prepare_rounds(
    dialogs: &[AnnotatedDialog],
    vocab: &Vocabulary,
    cfg: &ModelConfig,
    thresholds: SpatialThresholds,
) -> Result<Vec<RoundInput>> {
    let mut out = Vec::new();
    for a in dialogs {
        let d = &a.dialog;
        let mut features = Vec::with_capacity(d.regions.len() * cfg.d_v);
        for (i, r) in d.regions.iter().enumerate() {
            if r.feature.len() != cfg.d_v {
                return Err(GogError::dim(
                    "region features",
                    format!("dialog {} region {i} has {} values", d.image_id, r.feature.len()),
                    format!("d_v = {}", cfg.d_v),
                ));
            }
            features.extend_from_slice(&r.feature);
        }
        if d.regions.is_empty() {
            return Err(GogError::Validation(format!("dialog {} has no regions", d.image_id)));
        }
        let regions = Matrix::from_vec(d.regions.len(), cfg.d_v, features)?;
        let mut history = vec![capped(vocab, &d.caption, cfg.caption_len)];
        for (k, r) in d.rounds.iter().enumerate() {
            let question = capped(vocab, &r.question, cfg.question_len);
            out.push(RoundInput {
                image_id: d.image_id.clone(),
                round: k,
                question: question.clone(),
                history: history.clone(),
                regions: regions.clone(),
                graphs: build_dialog_graphs(a, k, cfg.question_len, thresholds)?,
                candidates: r.candidates.iter().map(|c| capped(vocab, c, cfg.answer_len)).collect(),
                gt_index: r.gt_index,
                relevance: r.relevance.clone(),
            });
            let mut turn = question;
            turn.extend(capped(vocab, &r.answer, cfg.answer_len));
            history.push(turn);
        }
    }
    Ok(out)
}
