use std::collections::BTreeSet;

use super::spatial::{classify_geom, BoxGeom, SpatialThresholds};
use super::{GraphKind, RelationGraph, COREF};
use crate::corpus::{AnnotatedDialog, BBox, CorefAnnotation, DependencyParse, Mention};
use crate::error::{GogError, Result};

/// Joins every pair of distinct turns that share a chain. No transitive
/// closure across chains.
pub fn build_history_graph(chains: &[Vec<Mention>], t: usize) -> Result<RelationGraph> {
    let mut g = RelationGraph::identity(GraphKind::History, t, false);
    for (c, chain) in chains.iter().enumerate() {
        if let Some(m) = chain.iter().find(|m| m.turn >= t) {
            return Err(GogError::Annotation(format!(
                "chain {c} references turn {} but the history has {t} turns",
                m.turn
            )));
        }
        let turns: Vec<usize> = chain.iter().map(|m| m.turn).collect::<BTreeSet<_>>().into_iter().collect();
        for (k, &a) in turns.iter().enumerate() {
            for &b in &turns[k + 1..] {
                g.set_undirected_edge(a, b, COREF);
            }
        }
    }
    Ok(g)
}

/// History graph seen while answering `round`: turns 0..=round, keeping only
/// mentions that fall inside that window.
pub fn history_graph_for_round(coref: &CorefAnnotation, round: usize) -> Result<RelationGraph> {
    let chains: Vec<Vec<Mention>> = coref
        .chains
        .iter()
        .map(|c| c.iter().filter(|m| m.turn <= round).copied().collect())
        .collect();
    build_history_graph(&chains, round + 1)
}

/// Symmetric tree edges labeled with the dependent's relation over `n`
/// nodes. Tokens at or beyond `n` are treated as truncated; nodes past the
/// parse length are padding and keep only their self-loop.
pub fn build_question_graph(parse: &DependencyParse, n: usize) -> Result<RelationGraph> {
    parse.validate()?;
    let valid = parse.heads.len().min(n);
    let mut g = RelationGraph::identity(GraphKind::Question, n, false);
    for i in 0..valid {
        let h = parse.heads[i];
        if h >= 0 && (h as usize) < valid {
            g.set_undirected_edge(i, h as usize, parse.labels[i].index() + 1);
        }
    }
    Ok(g)
}

/// Directed spatial graph. Each unordered pair is classified once and the
/// reverse edge gets the converse label.
pub fn build_image_graph(boxes: &[BBox], diagonal: f64, thresholds: SpatialThresholds) -> Result<RelationGraph> {
    let geoms = boxes.iter().map(BoxGeom::new).collect::<Result<Vec<_>>>()?;
    let n = boxes.len();
    let mut g = RelationGraph::identity(GraphKind::Image, n, true);
    for i in 0..n {
        for j in i + 1..n {
            if let Some(r) = classify_geom(&geoms[i], &geoms[j], thresholds, diagonal) {
                g.set_edge(i, j, r.label_id());
                g.set_edge(j, i, r.converse().label_id());
            }
        }
    }
    Ok(g)
}

/// The three graphs for one round of a dialog.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogGraphs {
    pub history: RelationGraph,
    pub question: RelationGraph,
    pub image: RelationGraph,
}

/// `question_len` is the padded question length the encoder will use.
pub fn build_dialog_graphs(
    a: &AnnotatedDialog,
    round: usize,
    question_len: usize,
    thresholds: SpatialThresholds,
) -> Result<DialogGraphs> {
    let parse = a.deps.rounds.get(round).ok_or_else(|| {
        GogError::Annotation(format!("dialog {}: no parse for round {round}", a.dialog.image_id))
    })?;
    let boxes: Vec<BBox> = a.dialog.regions.iter().map(|r| r.bbox).collect();
    Ok(DialogGraphs {
        history: history_graph_for_round(&a.coref, round)?,
        question: build_question_graph(parse, question_len)?,
        image: build_image_graph(&boxes, a.dialog.image_diagonal(), thresholds)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DepLabel;
    use crate::graphs::spatial::SpatialRelation;

    fn m(turn: usize) -> Mention {
        Mention { turn, start: 0, end: 1 }
    }

    fn pairs(g: &RelationGraph) -> Vec<(usize, usize)> {
        g.off_diagonal_edges().into_iter().filter(|e| e.0 < e.1).map(|e| (e.0, e.1)).collect()
    }

    #[test]
    fn no_chains_gives_identity() {
        let g = build_history_graph(&[], 4).unwrap();
        assert_eq!(g, RelationGraph::identity(GraphKind::History, 4, false));
    }

    #[test]
    fn chain_closure_within_one_chain() {
        let g = build_history_graph(&[vec![m(0), m(2), m(3)]], 4).unwrap();
        assert_eq!(pairs(&g), vec![(0, 2), (0, 3), (2, 3)]);
        assert!(g.is_symmetric());
    }

    #[test]
    fn no_transitive_edge_across_chains() {
        let g = build_history_graph(&[vec![m(0), m(1)], vec![m(1), m(3)]], 4).unwrap();
        assert_eq!(pairs(&g), vec![(0, 1), (1, 3)]);
    }

    #[test]
    fn chain_past_history_is_an_error() {
        assert!(matches!(
            build_history_graph(&[vec![m(0), m(4)]], 4),
            Err(GogError::Annotation(_))
        ));
    }

    #[test]
    fn round_window_drops_later_mentions() {
        let coref = CorefAnnotation {
            chains: vec![vec![m(0), m(1), m(3)]],
        };
        let g = history_graph_for_round(&coref, 1).unwrap();
        assert_eq!(g.n, 2);
        assert_eq!(pairs(&g), vec![(0, 1)]);
    }

    #[test]
    fn single_token_question() {
        let p = DependencyParse {
            heads: vec![-1],
            labels: vec![DepLabel::Root],
        };
        let g = build_question_graph(&p, 1).unwrap();
        assert_eq!((g.n, g.off_diagonal_count()), (1, 0));
    }

    #[test]
    fn det_and_dobj_arcs_are_symmetric() {
        // "can you see the woman" with see as root
        let p = DependencyParse {
            heads: vec![2, 2, -1, 4, 2],
            labels: vec![DepLabel::Aux, DepLabel::Nsubj, DepLabel::Root, DepLabel::Det, DepLabel::Dobj],
        };
        let g = build_question_graph(&p, 5).unwrap();
        let det = DepLabel::Det.index() + 1;
        assert_eq!((g.label(3, 4), g.label(4, 3)), (Some(det), Some(det)));
        assert_eq!(g.label(4, 2), Some(DepLabel::Dobj.index() + 1));
        assert_eq!(g.off_diagonal_count(), 4);
    }

    #[test]
    fn chain_parse_has_only_tree_edges() {
        let p = DependencyParse {
            heads: vec![1, 2, -1],
            labels: vec![DepLabel::Dep, DepLabel::Dep, DepLabel::Root],
        };
        let g = build_question_graph(&p, 3).unwrap();
        assert_eq!(pairs(&g), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn padding_nodes_are_isolated() {
        let p = DependencyParse {
            heads: vec![1, -1],
            labels: vec![DepLabel::Det, DepLabel::Root],
        };
        let g = build_question_graph(&p, 4).unwrap();
        assert_eq!(g.row(3), &[false, false, false, true]);
        assert_eq!(g.off_diagonal_count(), 1);
    }

    #[test]
    fn cyclic_parse_is_rejected() {
        let p = DependencyParse {
            heads: vec![1, 0],
            labels: vec![DepLabel::Dep; 2],
        };
        assert!(build_question_graph(&p, 2).is_err());
    }

    #[test]
    fn single_region_and_nested_pair() {
        let outer = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let inner = BBox::new(2.0, 2.0, 5.0, 5.0).unwrap();
        let t = SpatialThresholds::default();
        let g1 = build_image_graph(&[outer], 100.0, t).unwrap();
        assert_eq!((g1.n, g1.off_diagonal_count()), (1, 0));
        let g = build_image_graph(&[outer, inner], 100.0, t).unwrap();
        assert_eq!(
            g.off_diagonal_edges(),
            vec![
                (0, 1, SpatialRelation::Cover.label_id()),
                (1, 0, SpatialRelation::Inside.label_id())
            ]
        );
    }
}
