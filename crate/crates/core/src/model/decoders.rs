//! Candidate scoring: a discriminative dot-product ranker and a generative
//! two-layer recurrent language model.

use std::collections::HashMap;

use super::encoder::embed_batch;
use super::{GogModel, EMBEDDING};
use crate::corpus::{EOS, SOS};
use crate::error::{GogError, Result};
use crate::tensor::{dense, lstm_run, Matrix, ParamStore, Tape, Var};

/// Scores of every candidate and the induced ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScores {
    pub scores: Vec<f64>,
    /// Candidate indices by descending score, ties by ascending index.
    pub ranking: Vec<usize>,
}

impl CandidateScores {
    /// 1-based rank of candidate `index`.
    pub fn rank_of(&self, index: usize) -> usize {
        1 + self.ranking.iter().position(|&i| i == index).expect("ranking is a permutation")
    }
}

pub fn rank_scores(scores: &[f64]) -> CandidateScores {
    let mut ranking: Vec<usize> = (0..scores.len()).collect();
    ranking.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    CandidateScores {
        scores: scores.to_vec(),
        ranking,
    }
}

/// Distinct sequences and, for each input position, its row among them.
pub(crate) fn dedupe<'a>(seqs: impl IntoIterator<Item = &'a [usize]>) -> (Vec<&'a [usize]>, Vec<usize>) {
    let mut seen: HashMap<&[usize], usize> = HashMap::new();
    let mut unique = Vec::new();
    let mut index = Vec::new();
    for s in seqs {
        let next = unique.len();
        let row = *seen.entry(s).or_insert(next);
        if row == next {
            unique.push(s);
        }
        index.push(row);
    }
    (unique, index)
}

/// Last hidden state of the answer encoder for every sequence (`B × d`).
/// The encoder starts from a zero state.
pub fn encode_candidates(tape: &mut Tape, store: &ParamStore, model: &GogModel, seqs: &[&[usize]]) -> Result<Var> {
    let lengths: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
    let inputs = embed_batch(tape, store, seqs)?;
    if inputs.is_empty() {
        return Ok(tape.constant(Matrix::zeros(seqs.len(), model.cfg.hidden)));
    }
    Ok(lstm_run(tape, store, &model.answer_lstm, &inputs, &lengths, None)?.last_hidden)
}

/// Answer-encoder states of a set of distinct candidates shared by several
/// rounds on one tape.
pub struct CandidateBank {
    encodings: Var,
    rows: HashMap<Vec<usize>, usize>,
}

impl CandidateBank {
    pub fn build<'a>(
        tape: &mut Tape,
        store: &ParamStore,
        model: &GogModel,
        candidate_lists: impl IntoIterator<Item = &'a [Vec<usize>]>,
    ) -> Result<Self> {
        let (unique, _) = dedupe(candidate_lists.into_iter().flatten().map(Vec::as_slice));
        let encodings = encode_candidates(tape, store, model, &unique)?;
        let rows = unique.iter().enumerate().map(|(i, s)| (s.to_vec(), i)).collect();
        Ok(CandidateBank { encodings, rows })
    }

    /// `n × d` encodings of `candidates` in order.
    pub fn gather(&self, tape: &mut Tape, candidates: &[Vec<usize>]) -> Result<Var> {
        let index = candidates
            .iter()
            .map(|c| {
                self.rows
                    .get(c)
                    .copied()
                    .ok_or_else(|| GogError::Encoding("candidate missing from the encoded bank".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        tape.gather_rows(self.encodings, &index)
    }
}

/// `1 × n` logits `a_i · J`.
pub fn discriminative_logits(tape: &mut Tape, encodings: Var, joint: Var) -> Result<Var> {
    let t = tape.transpose(encodings);
    tape.matmul(joint, t)
}

/// Cross-entropy of the log-softmax over `logits` at `gt`.
pub fn discriminative_loss(tape: &mut Tape, logits: Var, gt: usize) -> Result<Var> {
    let (_, n) = tape.shape(logits);
    if gt >= n {
        return Err(GogError::Validation(format!("ground truth {gt} outside {n} candidates")));
    }
    let logp = tape.log_softmax(logits);
    let picked = tape.gather(logp, &[gt], 1, 1)?;
    Ok(tape.scale(picked, -1.0))
}

/// Encodes each distinct candidate once and ranks all of them by `a_i · J`.
/// Returns the scores and the `1 × n` logit node.
pub fn discriminative_score(
    tape: &mut Tape,
    store: &ParamStore,
    model: &GogModel,
    joint: Var,
    candidates: &[Vec<usize>],
) -> Result<(CandidateScores, Var)> {
    let bank = CandidateBank::build(tape, store, model, [candidates])?;
    let rows = bank.gather(tape, candidates)?;
    let logits = discriminative_logits(tape, rows, joint)?;
    Ok((rank_scores(tape.value(logits).data()), logits))
}

/// Summed token log-likelihood of every sequence under the decoder seeded
/// by `joint` (`B × 1`). Inputs are `SOS, w_1 … w_n` and targets
/// `w_1 … w_n, EOS`, with teacher forcing.
pub fn generative_log_likelihoods(
    tape: &mut Tape,
    store: &ParamStore,
    model: &GogModel,
    joint: Var,
    seqs: &[&[usize]],
) -> Result<Var> {
    let b = seqs.len();
    let d = model.cfg.hidden;
    let vocab = model.cfg.vocab_size;
    let lengths: Vec<usize> = seqs.iter().map(|s| s.len() + 1).collect();
    let steps = lengths.iter().copied().max().unwrap_or(0);
    if b == 0 {
        return Ok(tape.constant(Matrix::zeros(0, 1)));
    }

    let emb = tape.param(store, EMBEDDING)?;
    let mut inputs = Vec::with_capacity(steps);
    for t in 0..steps {
        let ids: Vec<usize> = seqs
            .iter()
            .map(|s| if t == 0 { SOS } else { s.get(t - 1).copied().unwrap_or(EOS) })
            .collect();
        inputs.push(tape.gather_rows(emb, &ids)?);
    }
    let zero = tape.constant(Matrix::zeros(b, d));
    let mut layer_in = inputs;
    for (k, layer) in model.decoder_lstm.iter().enumerate() {
        let h0 = dense(tape, store, joint, &format!("gen.init{k}"))?;
        let h0 = tape.gather_rows(h0, &vec![0; b])?;
        layer_in = lstm_run(tape, store, layer, &layer_in, &lengths, Some((h0, zero)))?.steps;
    }
    let all = tape.concat_rows(&layer_in)?;
    let logits = dense(tape, store, all, "gen.out")?;
    let logp = tape.log_softmax(logits);
    let pad = tape.constant(Matrix::zeros(1, vocab));
    let ext = tape.concat_rows(&[logp, pad])?;
    let sink = steps * b * vocab;
    let mut index = Vec::with_capacity(b * steps);
    for (r, s) in seqs.iter().enumerate() {
        for t in 0..steps {
            index.push(if t < lengths[r] {
                let target = s.get(t).copied().unwrap_or(EOS);
                (t * b + r) * vocab + target
            } else {
                sink
            });
        }
    }
    let picked = tape.gather(ext, &index, b, steps)?;
    let ones = tape.constant(Matrix::filled(steps, 1, 1.0));
    tape.matmul(picked, ones)
}

/// Ranks candidates by summed log-likelihood. Returns the scores and the
/// `n × 1` score node.
pub fn generative_score(
    tape: &mut Tape,
    store: &ParamStore,
    model: &GogModel,
    joint: Var,
    candidates: &[Vec<usize>],
) -> Result<(CandidateScores, Var)> {
    let (unique, index) = dedupe(candidates.iter().map(Vec::as_slice));
    let ll = generative_log_likelihoods(tape, store, model, joint, &unique)?;
    let rows = tape.gather_rows(ll, &index)?;
    Ok((rank_scores(tape.value(rows).data()), rows))
}

/// Negative log-likelihood of one answer (`1 × 1`).
pub fn generative_loss(
    tape: &mut Tape,
    store: &ParamStore,
    model: &GogModel,
    joint: Var,
    answer: &[usize],
) -> Result<Var> {
    let ll = generative_log_likelihoods(tape, store, model, joint, &[answer])?;
    Ok(tape.scale(ll, -1.0))
}

/// `L_D + L_G`.
pub fn multitask_loss(l_d: f64, l_g: f64) -> Result<f64> {
    if !(l_d.is_finite() && l_g.is_finite()) {
        return Err(GogError::Numerical(format!("non-finite loss part: L_D={l_d}, L_G={l_g}")));
    }
    Ok(l_d + l_g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_break_by_index() {
        let s = rank_scores(&[1.0, 3.0, 3.0, -1.0]);
        assert_eq!(s.ranking, vec![1, 2, 0, 3]);
        assert_eq!(s.rank_of(0), 3);
    }

    #[test]
    fn loss_sum() {
        assert_eq!(multitask_loss(2.0, 3.0).unwrap(), 5.0);
        assert_eq!(multitask_loss(0.0, 0.0).unwrap(), 0.0);
        assert!(matches!(multitask_loss(f64::NAN, 1.0), Err(GogError::Numerical(_))));
    }

    #[test]
    fn dedupe_keeps_first_occurrence_order() {
        let seqs: Vec<Vec<usize>> = vec![vec![4, 5], vec![6], vec![4, 5], vec![]];
        let (u, idx) = dedupe(seqs.iter().map(Vec::as_slice));
        assert_eq!(u, vec![&[4, 5][..], &[6][..], &[][..]]);
        assert_eq!(idx, vec![0, 1, 0, 2]);
    }

    #[test]
    fn uniform_logits_give_ln_100() {
        let mut tape = Tape::new();
        let logits = tape.constant(Matrix::filled(1, 100, 0.37));
        let l = discriminative_loss(&mut tape, logits, 42).unwrap();
        assert!((tape.value(l).get(0, 0) - 100f64.ln()).abs() < 1e-12);
    }
}
