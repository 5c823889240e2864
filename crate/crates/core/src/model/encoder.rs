//! Feature encoding and the history → question → image graph chain.

use std::collections::BTreeMap;

use super::config::{Ablation, Stage};
use super::graph_att::graph_att;
use super::input::RoundInput;
use super::{GogModel, EMBEDDING};
use crate::corpus::PAD;
use crate::error::{GogError, Result};
use crate::graphs::{GraphKind, RelationGraph};
use crate::tensor::{dense, lstm_encode, lstm_run, Matrix, ParamStore, Tape, Var};

/// Encoded inputs of one round.
pub struct EncodedDialog {
    /// `μ × d` projected region features.
    pub v: Var,
    /// `λ × d` per-token question states, zero past the valid length.
    pub q: Var,
    /// `t × d` last states of the history turns.
    pub h: Var,
    pub question_valid: usize,
    pub history_valid: Vec<usize>,
}

/// Activations of the graph chain for one round.
pub struct GoGState {
    pub h: Var,
    pub h_star: Var,
    pub h_hat: Var,
    /// `1 × t` history pooling weights.
    pub h_weights: Var,
    pub q: Var,
    pub q_prime: Var,
    pub q_star: Var,
    pub q_hat: Var,
    /// `1 × λ` question pooling weights, zero at padding.
    pub q_weights: Var,
    pub v: Var,
    pub v_prime: Var,
    pub v_star: Var,
    pub question_mask: Vec<bool>,
    /// Per-head attention maps of each graph that actually ran.
    pub attention: BTreeMap<&'static str, Vec<Var>>,
}

impl GoGState {
    pub fn stage(&self, s: Stage) -> Option<Var> {
        Some(match s {
            Stage::History => self.h,
            Stage::HistoryStar => self.h_star,
            Stage::HistoryPooled => self.h_hat,
            Stage::Question => self.q,
            Stage::QuestionPrime => self.q_prime,
            Stage::QuestionStar => self.q_star,
            Stage::QuestionPooled => self.q_hat,
            Stage::Image => self.v,
            Stage::ImagePrime => self.v_prime,
            Stage::ImageStar => self.v_star,
            Stage::Joint => return None,
        })
    }
}

fn check_ids(ids: &[usize], vocab: usize, what: &str) -> Result<()> {
    match ids.iter().find(|&&i| i >= vocab) {
        Some(&bad) => Err(GogError::Encoding(format!(
            "{what}: token id {bad} is outside the vocabulary of {vocab}"
        ))),
        None => Ok(()),
    }
}

/// Step-major embeddings of a batch of id sequences; rows past a
/// sequence's end hold the padding embedding.
pub(crate) fn embed_batch(tape: &mut Tape, store: &ParamStore, seqs: &[&[usize]]) -> Result<Vec<Var>> {
    let emb = tape.param(store, EMBEDDING)?;
    let steps = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
    (0..steps)
        .map(|t| {
            let ids: Vec<usize> = seqs.iter().map(|s| s.get(t).copied().unwrap_or(PAD)).collect();
            tape.gather_rows(emb, &ids)
        })
        .collect()
}

/// Embeds and encodes question, history turns and regions.
pub fn encode_features(
    tape: &mut Tape,
    store: &ParamStore,
    model: &GogModel,
    input: &RoundInput,
) -> Result<EncodedDialog> {
    let cfg = &model.cfg;
    let d = cfg.hidden;
    check_ids(&input.question, cfg.vocab_size, "question")?;
    for turn in &input.history {
        check_ids(turn, cfg.vocab_size, "history")?;
    }
    let valid = input.question.len().min(cfg.question_len);
    if valid == 0 {
        return Err(GogError::Encoding(format!(
            "dialog {} round {}: question has no tokens",
            input.image_id, input.round
        )));
    }

    let emb = tape.param(store, EMBEDDING)?;
    let q_emb = tape.gather_rows(emb, &input.question[..valid])?;
    let (q_states, _, _) = lstm_encode(tape, store, &model.question_lstm, q_emb)?;
    let q = if valid < cfg.question_len {
        let pad = tape.constant(Matrix::zeros(cfg.question_len - valid, d));
        tape.concat_rows(&[q_states, pad])?
    } else {
        q_states
    };

    let turns: Vec<&[usize]> = input.history.iter().map(Vec::as_slice).collect();
    let lengths: Vec<usize> = turns.iter().map(|t| t.len()).collect();
    let inputs = embed_batch(tape, store, &turns)?;
    let h = if inputs.is_empty() {
        tape.constant(Matrix::zeros(turns.len(), d))
    } else {
        lstm_run(tape, store, &model.history_lstm, &inputs, &lengths, None)?.last_hidden
    };

    let regions = tape.constant(input.regions.clone());
    let v = dense(tape, store, regions, "image.proj")?;
    Ok(EncodedDialog {
        v,
        q,
        h,
        question_valid: valid,
        history_valid: lengths,
    })
}

/// Softmax attention pooling `softmax(tanh(x W2) W1)ᵀ x` over the rows of
/// `x` allowed by `mask`. Returns the `1 × d` pooled row and `1 × n` weights.
pub(crate) fn attention_pool(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    mask: Option<&[bool]>,
    prefix: &str,
) -> Result<(Var, Var)> {
    let w2 = tape.param(store, &format!("{prefix}.w2"))?;
    let w1 = tape.param(store, &format!("{prefix}.w1"))?;
    let z = tape.matmul(x, w2)?;
    let z = tape.tanh(z);
    let logits = tape.matmul(z, w1)?;
    let logits = tape.transpose(logits);
    let weights = tape.masked_softmax(logits, mask)?;
    let pooled = tape.matmul(weights, x)?;
    Ok((pooled, weights))
}

fn broadcast_row(tape: &mut Tape, row: Var, n: usize) -> Result<Var> {
    tape.gather_rows(row, &vec![0; n])
}

/// Graph attention over the history graph.
pub fn history_graph_step(
    tape: &mut Tape,
    store: &ParamStore,
    model: &GogModel,
    h: Var,
    graph: &RelationGraph,
) -> Result<(Var, Vec<Var>)> {
    let out = graph_att(tape, store, h, graph, &model.history_gat)?;
    Ok((out.node_states, out.attention))
}

pub struct AwareStep {
    pub pooled: Var,
    pub weights: Var,
    pub prime: Var,
    pub star: Var,
    pub attention: Vec<Var>,
}

#[allow(clippy::too_many_arguments)]
fn aware_step(
    tape: &mut Tape,
    store: &ParamStore,
    nodes: Var,
    context: Var,
    context_mask: Option<&[bool]>,
    graph: &RelationGraph,
    names: (&str, &str, &super::GraphAttParams),
    concat: bool,
    run_graph: bool,
) -> Result<AwareStep> {
    let (pool, aware, gat) = names;
    let (pooled, weights) = attention_pool(tape, store, context, context_mask, pool)?;
    let prime = if concat {
        let (n, _) = tape.shape(nodes);
        let b = broadcast_row(tape, pooled, n)?;
        let joined = tape.concat_cols(&[nodes, b])?;
        dense(tape, store, joined, aware)?
    } else {
        nodes
    };
    let (star, attention) = if run_graph {
        let out = graph_att(tape, store, prime, graph, gat)?;
        (out.node_states, out.attention)
    } else {
        (prime, Vec::new())
    };
    Ok(AwareStep {
        pooled,
        weights,
        prime,
        star,
        attention,
    })
}

/// Pools `h_star` into `ĥ`, joins it onto every question token, projects
/// back to the model width and runs the question graph.
pub fn history_aware_question_step(
    tape: &mut Tape,
    store: &ParamStore,
    model: &GogModel,
    q: Var,
    h_star: Var,
    graph: &RelationGraph,
) -> Result<AwareStep> {
    let ab = &model.cfg.ablations;
    aware_step(
        tape,
        store,
        q,
        h_star,
        None,
        graph,
        ("history.pool", "question.aware", &model.question_gat),
        !ab.has(Ablation::HistoryAware),
        !ab.has(Ablation::QuestionGraph),
    )
}

/// Pools the valid rows of `q_star` into `q̂`, joins it onto every region,
/// projects back and runs the image graph.
pub fn question_aware_image_step(
    tape: &mut Tape,
    store: &ParamStore,
    model: &GogModel,
    v: Var,
    q_star: Var,
    question_mask: &[bool],
    graph: &RelationGraph,
) -> Result<AwareStep> {
    let ab = &model.cfg.ablations;
    aware_step(
        tape,
        store,
        v,
        q_star,
        Some(question_mask),
        graph,
        ("question.pool", "image.aware", &model.image_gat),
        !ab.has(Ablation::QuestionAware),
        !ab.has(Ablation::ImageGraph),
    )
}

/// Graphs actually used once the relation ablations are applied.
pub fn effective_graphs(model: &GogModel, input: &RoundInput) -> (RelationGraph, RelationGraph, RelationGraph) {
    let ab = &model.cfg.ablations;
    let g = &input.graphs;
    let history = if ab.has(Ablation::CoreferenceRelation) {
        RelationGraph::fully_connected(GraphKind::History, &vec![true; g.history.n], false)
    } else {
        g.history.clone()
    };
    let question = if ab.has(Ablation::DependencyRelation) {
        RelationGraph::fully_connected(GraphKind::Question, &input.question_mask(g.question.n), false)
    } else {
        g.question.clone()
    };
    let image = if ab.has(Ablation::SpatialRelation) {
        RelationGraph::fully_connected(GraphKind::Image, &vec![true; g.image.n], true)
    } else {
        g.image.clone()
    };
    (history, question, image)
}

/// Runs the full chain in the fixed history → question → image order.
pub fn run_gog(tape: &mut Tape, store: &ParamStore, model: &GogModel, input: &RoundInput) -> Result<GoGState> {
    let enc = encode_features(tape, store, model, input)?;
    let (history, question, image) = effective_graphs(model, input);
    let mut attention = BTreeMap::new();

    let h_star = if model.cfg.ablations.has(Ablation::HistoryGraph) {
        enc.h
    } else {
        let (s, a) = history_graph_step(tape, store, model, enc.h, &history)?;
        attention.insert("history", a);
        s
    };
    let qs = history_aware_question_step(tape, store, model, enc.q, h_star, &question)?;
    if !qs.attention.is_empty() {
        attention.insert("question", qs.attention.clone());
    }
    let question_mask = input.question_mask(model.cfg.question_len);
    let vs = question_aware_image_step(tape, store, model, enc.v, qs.star, &question_mask, &image)?;
    if !vs.attention.is_empty() {
        attention.insert("image", vs.attention.clone());
    }
    Ok(GoGState {
        h: enc.h,
        h_star,
        h_hat: qs.pooled,
        h_weights: qs.weights,
        q: enc.q,
        q_prime: qs.prime,
        q_star: qs.star,
        q_hat: vs.pooled,
        q_weights: vs.weights,
        v: enc.v,
        v_prime: vs.prime,
        v_star: vs.star,
        question_mask,
        attention,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Init;

    fn random_pool(d: usize, seed: u64) -> ParamStore {
        let mut s = ParamStore::new(seed);
        s.register("p.w2", d, d, Init::Uniform { fan_in: d }).unwrap();
        s.register("p.w1", d, 1, Init::Uniform { fan_in: d }).unwrap();
        s
    }

    #[test]
    fn single_row_pools_to_itself() {
        let s = random_pool(4, 1);
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::row_vector(&[0.3, -1.2, 2.0, 0.5]));
        let (pooled, w) = attention_pool(&mut tape, &s, x, None, "p").unwrap();
        assert_eq!(tape.value(w).data(), &[1.0]);
        assert_eq!(tape.value(pooled), tape.value(x));
    }

    #[test]
    fn saturated_logit_selects_one_turn() {
        let mut s = ParamStore::new(0);
        s.insert("p.w2", Matrix::identity(2), true);
        s.insert("p.w1", Matrix::col_vector(&[25.0, 0.0]), true);
        let rows = vec![vec![-20.0, 0.3], vec![-20.0, -0.2], vec![20.0, 0.7]];
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::from_rows(&rows));
        let (pooled, _) = attention_pool(&mut tape, &s, x, None, "p").unwrap();
        for (a, b) in tape.value(pooled).data().iter().zip(&rows[2]) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn masked_rows_get_no_weight() {
        let s = random_pool(3, 2);
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.5, 0.1, -1.0], vec![9.0, 9.0, 9.0]]));
        let (pooled, w) = attention_pool(&mut tape, &s, x, Some(&[true, true, false]), "p").unwrap();
        let w = tape.value(w).data().to_vec();
        assert_eq!(w[2], 0.0);
        assert!((w[0] + w[1] - 1.0).abs() < 1e-12);
        let expect = 0.5 * w[1] + w[0];
        assert!((tape.value(pooled).get(0, 0) - expect).abs() < 1e-12);
    }
}
