//! Label-biased multi-head graph attention.
//!
//! For head `h`, scores are `s_ij = (u_i U_h)·(u_j V_h) / √d_k`; each row is
//! softmaxed over the neighbors of `i` after adding the scalar bias of the
//! edge label. Messages `Σ_j α_ij u_j W_h` from all heads are concatenated,
//! projected back to `d_u`, added to `u_i` and passed through ReLU.

use crate::error::{GogError, Result};
use crate::graphs::RelationGraph;
use crate::tensor::{Init, Matrix, ParamStore, Tape, Var};

/// Parameter layout of one graph attention block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphAttParams {
    pub prefix: String,
    pub d_u: usize,
    pub heads: usize,
    pub n_labels: usize,
}

/// Builds the parameter layout; `d_u` must split evenly across heads.
pub fn multi_head_config(prefix: &str, d_u: usize, heads: usize, n_labels: usize) -> Result<GraphAttParams> {
    if heads == 0 || d_u % heads != 0 {
        return Err(GogError::Config(format!(
            "graph attention width {d_u} is not divisible by {heads} heads"
        )));
    }
    Ok(GraphAttParams {
        prefix: prefix.to_string(),
        d_u,
        heads,
        n_labels,
    })
}

impl GraphAttParams {
    pub fn d_k(&self) -> usize {
        self.d_u / self.heads
    }

    pub fn u(&self, h: usize) -> String {
        format!("{}.head{h}.u", self.prefix)
    }
    pub fn v(&self, h: usize) -> String {
        format!("{}.head{h}.v", self.prefix)
    }
    pub fn w(&self, h: usize) -> String {
        format!("{}.head{h}.w", self.prefix)
    }
    pub fn label_bias(&self) -> String {
        format!("{}.label_bias", self.prefix)
    }
    pub fn out(&self) -> String {
        format!("{}.out", self.prefix)
    }

    /// Label biases start at zero so an untrained layer ignores labels.
    pub fn register(&self, store: &mut ParamStore) -> Result<()> {
        let (d, dk) = (self.d_u, self.d_k());
        for h in 0..self.heads {
            store.register(&self.u(h), d, dk, Init::Uniform { fan_in: d })?;
            store.register(&self.v(h), d, dk, Init::Uniform { fan_in: d })?;
            store.register(&self.w(h), d, dk, Init::Uniform { fan_in: d })?;
        }
        store.register(&self.label_bias(), self.n_labels, 1, Init::Zeros)?;
        store.register(&self.out(), d, d, Init::Uniform { fan_in: d })
    }
}

/// Output of [`graph_att`]: node states and one `n × n` weight matrix per head.
pub struct GraphAttOutput {
    pub node_states: Var,
    pub attention: Vec<Var>,
}

fn check_width(tape: &Tape, u: Var, params: &GraphAttParams) -> Result<()> {
    let (_, d) = tape.shape(u);
    if d != params.d_u {
        return Err(GogError::dim(
            "graph_att",
            format!("nodes {}", tape.value(u).shape_str()),
            format!("width {}", params.d_u),
        ));
    }
    Ok(())
}

/// Unmasked `n × n` scores of one head.
pub fn relation_scores(tape: &mut Tape, store: &ParamStore, u: Var, params: &GraphAttParams, head: usize) -> Result<Var> {
    check_width(tape, u, params)?;
    let uw = tape.param(store, &params.u(head))?;
    let vw = tape.param(store, &params.v(head))?;
    let left = tape.matmul(u, uw)?;
    let right = tape.matmul(u, vw)?;
    let right_t = tape.transpose(right);
    let s = tape.matmul(left, right_t)?;
    Ok(tape.scale(s, 1.0 / (params.d_k() as f64).sqrt()))
}

/// Row-wise softmax of `s` plus label biases, restricted to graph neighbors.
pub fn attention_weights(
    tape: &mut Tape,
    store: &ParamStore,
    s: Var,
    graph: &RelationGraph,
    params: &GraphAttParams,
) -> Result<Var> {
    let n = graph.n;
    if tape.shape(s) != (n, n) {
        return Err(GogError::dim(
            "attention_weights",
            format!("scores {}", tape.value(s).shape_str()),
            format!("graph of {n} nodes"),
        ));
    }
    let mut index = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let l = graph.label(i, j).unwrap_or(0);
            if l >= params.n_labels {
                return Err(GogError::Config(format!(
                    "edge ({i}, {j}) has label {l} but `{}` holds {} labels",
                    params.label_bias(),
                    params.n_labels
                )));
            }
            index.push(l);
        }
    }
    let table = tape.param(store, &params.label_bias())?;
    let bias = tape.gather(table, &index, n, n)?;
    let biased = tape.add(s, bias)?;
    tape.masked_softmax(biased, Some(graph.adjacency()))
}

pub fn graph_att(
    tape: &mut Tape,
    store: &ParamStore,
    u: Var,
    graph: &RelationGraph,
    params: &GraphAttParams,
) -> Result<GraphAttOutput> {
    check_width(tape, u, params)?;
    let (n, _) = tape.shape(u);
    if graph.n != n {
        return Err(GogError::dim(
            "graph_att",
            format!("nodes {}", tape.value(u).shape_str()),
            format!("graph of {} nodes", graph.n),
        ));
    }
    // Adjacency indicator applied again on top of the masked softmax.
    let indicator = Matrix::from_vec(
        n,
        n,
        graph.adjacency().iter().map(|&a| if a { 1.0 } else { 0.0 }).collect(),
    )?;
    let indicator = tape.constant(indicator);
    let mut attention = Vec::with_capacity(params.heads);
    let mut messages = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let s = relation_scores(tape, store, u, params, h)?;
        let alpha = attention_weights(tape, store, s, graph, params)?;
        let alpha_r = tape.mul(alpha, indicator)?;
        let w = tape.param(store, &params.w(h))?;
        let values = tape.matmul(u, w)?;
        messages.push(tape.matmul(alpha_r, values)?);
        attention.push(alpha);
    }
    let merged = tape.concat_cols(&messages)?;
    let out = tape.param(store, &params.out())?;
    let projected = tape.matmul(merged, out)?;
    let pre = tape.add(u, projected)?;
    let node_states = tape.relu(pre);
    tape.value(node_states).ensure_finite("graph_att")?;
    Ok(GraphAttOutput { node_states, attention })
}
