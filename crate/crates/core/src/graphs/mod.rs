//! Labeled relation graphs over history turns, question tokens and image regions.
//!
//! Label id 0 is reserved for self-loops and for the unlabeled edges of a
//! fully connected ablation graph. Real relation labels start at 1.

mod build;
pub mod spatial;

use std::fmt::Write as _;

pub use build::{
    build_dialog_graphs, build_history_graph, build_image_graph, build_question_graph, history_graph_for_round,
    DialogGraphs,
};
pub use spatial::{classify_spatial_relation, SpatialRelation, SpatialThresholds};

use crate::corpus::DepLabel;

pub const PLAIN: usize = 0;
pub const COREF: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GraphKind {
    History,
    Question,
    Image,
}

impl GraphKind {
    pub fn name(self) -> &'static str {
        match self {
            GraphKind::History => "history",
            GraphKind::Question => "question",
            GraphKind::Image => "image",
        }
    }

    /// Size of the label set including [`PLAIN`].
    pub fn n_labels(self) -> usize {
        match self {
            GraphKind::History => 2,
            GraphKind::Question => 1 + DepLabel::ALL.len(),
            GraphKind::Image => 1 + SpatialRelation::ALL.len(),
        }
    }

    pub fn label_name(self, id: usize) -> String {
        if id == PLAIN {
            return "plain".into();
        }
        match self {
            GraphKind::History => "coref".into(),
            GraphKind::Question => DepLabel::ALL
                .get(id - 1)
                .map_or_else(|| format!("#{id}"), |l| l.name().to_string()),
            GraphKind::Image => SpatialRelation::ALL
                .get(id - 1)
                .map_or_else(|| format!("#{id}"), |r| r.name().to_string()),
        }
    }
}

/// Square adjacency with one label per present edge, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationGraph {
    pub kind: GraphKind,
    pub n: usize,
    pub directed: bool,
    adjacency: Vec<bool>,
    labels: Vec<usize>,
}

impl RelationGraph {
    /// Self-loops only.
    pub fn identity(kind: GraphKind, n: usize, directed: bool) -> Self {
        let mut g = RelationGraph {
            kind,
            n,
            directed,
            adjacency: vec![false; n * n],
            labels: vec![PLAIN; n * n],
        };
        for i in 0..n {
            g.adjacency[i * n + i] = true;
        }
        g
    }

    /// Every pair of valid nodes joined by a [`PLAIN`] edge; invalid nodes
    /// keep only their self-loop.
    pub fn fully_connected(kind: GraphKind, valid: &[bool], directed: bool) -> Self {
        let n = valid.len();
        let mut g = RelationGraph::identity(kind, n, directed);
        for i in 0..n {
            for j in 0..n {
                if valid[i] && valid[j] {
                    g.adjacency[i * n + j] = true;
                }
            }
        }
        g
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n + j]
    }

    /// Label of edge `(i, j)`, or `None` when absent.
    pub fn label(&self, i: usize, j: usize) -> Option<usize> {
        self.has_edge(i, j).then(|| self.labels[i * self.n + j])
    }

    pub fn set_edge(&mut self, i: usize, j: usize, label: usize) {
        self.adjacency[i * self.n + j] = true;
        self.labels[i * self.n + j] = label;
    }

    pub fn set_undirected_edge(&mut self, i: usize, j: usize, label: usize) {
        self.set_edge(i, j, label);
        self.set_edge(j, i, label);
    }

    pub fn adjacency(&self) -> &[bool] {
        &self.adjacency
    }

    /// Neighbor mask of row `i`.
    pub fn row(&self, i: usize) -> &[bool] {
        &self.adjacency[i * self.n..(i + 1) * self.n]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.has_edge(i, j) == self.has_edge(j, i)))
    }

    /// Present edges `(i, j, label)` with `i != j`, in row-major order.
    pub fn off_diagonal_edges(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j && self.has_edge(i, j) {
                    out.push((i, j, self.labels[i * self.n + j]));
                }
            }
        }
        out
    }

    /// Undirected graphs count each pair once.
    pub fn off_diagonal_count(&self) -> usize {
        let e = self.off_diagonal_edges().len();
        if self.directed {
            e
        } else {
            e / 2
        }
    }

    pub fn is_subgraph_of(&self, other: &RelationGraph) -> bool {
        self.n == other.n && self.adjacency.iter().zip(&other.adjacency).all(|(&a, &b)| !a || b)
    }

    /// Reorders nodes so that new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> RelationGraph {
        let mut g = RelationGraph::identity(self.kind, self.n, self.directed);
        g.adjacency.fill(false);
        for a in 0..self.n {
            for b in 0..self.n {
                if let Some(l) = self.label(perm[a], perm[b]) {
                    g.set_edge(a, b, l);
                }
            }
        }
        g
    }

    /// Plain-text dump: a header line, then one `i j label` line per
    /// off-diagonal edge. Self-loops are implicit.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "graph {} n={} directed={} edges={}\n",
            self.kind.name(),
            self.n,
            self.directed,
            self.off_diagonal_edges().len()
        );
        for (i, j, l) in self.off_diagonal_edges() {
            let _ = writeln!(s, "{i} {j} {}", self.kind.label_name(l));
        }
        s
    }

    /// Graphviz export; `names` labels the nodes when given.
    pub fn to_dot(&self, names: Option<&[String]>) -> String {
        let (kw, arrow) = if self.directed { ("digraph", "->") } else { ("graph", "--") };
        let mut s = format!("{kw} {} {{\n", self.kind.name());
        for i in 0..self.n {
            let name = names.and_then(|n| n.get(i)).cloned().unwrap_or_else(|| i.to_string());
            let _ = writeln!(s, "  n{i} [label=\"{}\"];", name.replace('"', "\\\""));
        }
        for (i, j, l) in self.off_diagonal_edges() {
            if self.directed || i < j {
                let _ = writeln!(s, "  n{i} {arrow} n{j} [label=\"{}\"];", self.kind.label_name(l));
            }
        }
        s.push_str("}\n");
        s
    }
}
