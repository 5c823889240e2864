//! Encoder, fusion and decoder behavior on the shipped fixture, plus
//! scalar oracles for the attention kernels.

use std::path::Path;

use gog::corpus::{load_corpus, DepLabel, DependencyParse, LengthLimits, Split, Vocabulary};
use gog::graphs::{build_question_graph, GraphKind, RelationGraph, SpatialThresholds};
use gog::model::{
    attention_weights, discriminative_logits, discriminative_loss, discriminative_score, fuse, generative_score,
    graph_att, history_graph_step, multi_head_config, prepare_rounds, relation_scores, run_gog, Ablations,
    GogModel, ModelConfig, RoundInput,
};
use gog::tensor::{check_gradients, masked_softmax, Matrix, ParamStore, Tape};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model_for(ablations: &str) -> (GogModel, Vec<RoundInput>) {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/three");
    let corpus = load_corpus(&dir, Split::Train, LengthLimits::default()).unwrap();
    let vocab = Vocabulary::build(&corpus.dialogs, 1);
    let model = GogModel::new(ModelConfig {
        vocab_size: vocab.len(),
        d_word: 8,
        d_v: 16,
        hidden: 8,
        heads: 2,
        caption_len: 40,
        question_len: 6,
        answer_len: 20,
        ablations: ablations.parse::<Ablations>().unwrap(),
    })
    .unwrap();
    let rounds = prepare_rounds(&corpus.dialogs, &vocab, &model.cfg, SpatialThresholds::default()).unwrap();
    (model, rounds)
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn relation_scores_match_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let p = multi_head_config("g", 8, 2, 3).unwrap();
    let mut store = ParamStore::new(42);
    p.register(&mut store).unwrap();
    let u = random_matrix(&mut rng, 4, 8);
    for h in 0..2 {
        let mut tape = Tape::new();
        let uv = tape.constant(u.clone());
        let s = relation_scores(&mut tape, &store, uv, &p, h).unwrap();
        let (uw, vw) = (store.value(&p.u(h)).unwrap(), store.value(&p.v(h)).unwrap());
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = 0.0;
                for k in 0..p.d_k() {
                    let mut a = 0.0;
                    let mut b = 0.0;
                    for c in 0..8 {
                        a += u.get(i, c) * uw.get(c, k);
                        b += u.get(j, c) * vw.get(c, k);
                    }
                    acc += a * b;
                }
                let want = acc / (p.d_k() as f64).sqrt();
                assert!((tape.value(s).get(i, j) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn attention_is_masked_softmax_with_label_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = multi_head_config("g", 4, 1, 5).unwrap();
    let mut store = ParamStore::new(7);
    p.register(&mut store).unwrap();
    let bias = random_matrix(&mut rng, 5, 1);
    store.insert(&p.label_bias(), bias.clone(), true);
    let mut g = RelationGraph::identity(GraphKind::Image, 6, true);
    for _ in 0..12 {
        let (i, j) = (rng.gen_range(0..6), rng.gen_range(0..6));
        if i != j {
            g.set_edge(i, j, rng.gen_range(0..5));
        }
    }
    let s = random_matrix(&mut rng, 6, 6);
    let mut tape = Tape::new();
    let sv = tape.constant(s.clone());
    let a = attention_weights(&mut tape, &store, sv, &g, &p).unwrap();
    for i in 0..6 {
        let row: Vec<f64> = (0..6).map(|j| s.get(i, j) + bias.get(g.label(i, j).unwrap_or(0), 0)).collect();
        let want = masked_softmax(&row, g.row(i));
        for j in 0..6 {
            assert!((tape.value(a).get(i, j) - want[j]).abs() < 1e-15);
        }
    }
}

#[test]
fn self_loop_node_only_sees_itself() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = multi_head_config("g", 4, 2, 1).unwrap();
    let mut store = ParamStore::new(3);
    p.register(&mut store).unwrap();
    let g = RelationGraph::identity(GraphKind::History, 3, false);
    let u = random_matrix(&mut rng, 3, 4);
    let mut tape = Tape::new();
    let uv = tape.constant(u.clone());
    let out = graph_att(&mut tape, &store, uv, &g, &p).unwrap();
    let heads: Vec<Matrix> = (0..2).map(|h| u.matmul(store.value(&p.w(h)).unwrap()).unwrap()).collect();
    for i in 0..3 {
        let mut msg = heads[0].row(i).to_vec();
        msg.extend_from_slice(heads[1].row(i));
        let proj = Matrix::row_vector(&msg).matmul(store.value(&p.out()).unwrap()).unwrap();
        for c in 0..4 {
            let want = (u.get(i, c) + proj.get(0, c)).max(0.0);
            assert!((tape.value(out.node_states).get(i, c) - want).abs() < 1e-14);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn graph_att_is_permutation_equivariant(n in 1usize..9, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = multi_head_config("g", 6, 3, 4).unwrap();
        let mut store = ParamStore::new(seed);
        p.register(&mut store).unwrap();
        store.insert(&p.label_bias(), random_matrix(&mut rng, 4, 1), true);
        let mut g = RelationGraph::identity(GraphKind::Image, n, true);
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.gen_bool(0.5) {
                    g.set_edge(i, j, rng.gen_range(0..4));
                }
            }
        }
        let u = random_matrix(&mut rng, n, 6);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let pu = Matrix::from_rows(&perm.iter().map(|&k| u.row(k).to_vec()).collect::<Vec<_>>());
        let mut tape = Tape::new();
        let (a, b) = (tape.constant(u), tape.constant(pu));
        let base = graph_att(&mut tape, &store, a, &g, &p).unwrap().node_states;
        let moved = graph_att(&mut tape, &store, b, &g.permuted(&perm), &p).unwrap().node_states;
        for (k, &src) in perm.iter().enumerate() {
            for c in 0..6 {
                prop_assert!((tape.value(moved).get(k, c) - tape.value(base).get(src, c)).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn fixture_shapes_at_width_eight() {
    let (model, rounds) = model_for("");
    let store = model.init_store(1).unwrap();
    let r = &rounds[2];
    assert_eq!(r.round, 2);
    let mut tape = Tape::new();
    let s = run_gog(&mut tape, &store, &model, r).unwrap();
    let shape = |v| tape.shape(v);
    assert_eq!(shape(s.v), (5, 8));
    assert_eq!(shape(s.q), (6, 8));
    assert_eq!(shape(s.h), (3, 8));
    assert_eq!((shape(s.h_star), shape(s.q_star), shape(s.v_star)), ((3, 8), (6, 8), (5, 8)));
    assert_eq!((shape(s.h_hat), shape(s.q_hat)), ((1, 8), (1, 8)));
}

#[test]
fn history_step_delegates_to_graph_att() {
    let (model, rounds) = model_for("");
    let store = model.init_store(2).unwrap();
    let r = &rounds[5];
    let mut tape = Tape::new();
    let s = run_gog(&mut tape, &store, &model, r).unwrap();
    let (step, _) = history_graph_step(&mut tape, &store, &model, s.h, &r.graphs.history).unwrap();
    let direct = graph_att(&mut tape, &store, s.h, &r.graphs.history, &model.history_gat).unwrap();
    assert_eq!(tape.value(step), tape.value(direct.node_states));
    assert_eq!(tape.value(step), tape.value(s.h_star));
}

#[test]
fn forward_is_finite_and_repeatable() {
    let (model, rounds) = model_for("");
    let store = model.init_store(3).unwrap();
    for r in &rounds {
        let run = || {
            let mut tape = Tape::new();
            let s = run_gog(&mut tape, &store, &model, r).unwrap();
            let f = fuse(&mut tape, &store, &model, &s).unwrap();
            let weights: Vec<Matrix> = f.pool_weights.iter().map(|&w| tape.value(w).clone()).collect();
            (tape.value(s.v_star).clone(), tape.value(f.joint).clone(), weights)
        };
        let (v1, j1, w1) = run();
        let (v2, j2, _) = run();
        assert!(v1.is_finite() && j1.is_finite());
        assert_eq!((v1, &j1), (v2, &j2));
        assert_eq!(j1.shape(), (1, 8));
        for w in w1 {
            assert!((w.sum() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn first_round_history_is_the_caption() {
    let (model, rounds) = model_for("");
    let store = model.init_store(4).unwrap();
    let r = &rounds[0];
    let mut tape = Tape::new();
    let s = run_gog(&mut tape, &store, &model, r).unwrap();
    assert_eq!(tape.shape(s.h), (1, 8));
    assert_eq!(tape.value(s.h_weights).data(), &[1.0]);
    assert_eq!(tape.value(s.h_hat), tape.value(s.h_star));
}

#[test]
fn one_token_question_pools_to_that_token() {
    let (model, rounds) = model_for("");
    let store = model.init_store(5).unwrap();
    let mut r = rounds[4].clone();
    r.question.truncate(1);
    let parse = DependencyParse {
        heads: vec![-1],
        labels: vec![DepLabel::Root],
    };
    r.graphs.question = build_question_graph(&parse, 6).unwrap();
    let mut tape = Tape::new();
    let s = run_gog(&mut tape, &store, &model, &r).unwrap();
    assert_eq!(tape.value(s.q_hat).row(0), tape.value(s.q_star).row(0));
    assert_eq!(tape.value(s.q_weights).data()[1..], [0.0; 5]);
}

#[test]
fn ablations_bypass_their_stage() {
    let (full, rounds) = model_for("");
    let store = full.init_store(6).unwrap();
    let r = &rounds[7];
    let state = |m: &GogModel| {
        let mut tape = Tape::new();
        let s = run_gog(&mut tape, &store, m, r).unwrap();
        let j = fuse(&mut tape, &store, m, &s).unwrap().joint;
        (tape, s, j)
    };
    let (t, s, _) = state(&model_for("h-graph").0);
    assert_eq!(t.value(s.h_star), t.value(s.h));
    let (t, s, _) = state(&model_for("q-aware").0);
    assert_eq!(t.value(s.v_prime), t.value(s.v));
    let (t, s, _) = state(&model_for("h-aware").0);
    assert_eq!(t.value(s.q_prime), t.value(s.q));
    let (t, s, j) = state(&model_for("h-graph,q-graph,i-graph").0);
    assert_eq!(t.value(s.q_star), t.value(s.q_prime));
    assert_eq!(t.value(s.v_star), t.value(s.v_prime));
    assert!(t.value(j).is_finite());
    assert!(s.attention.is_empty());
}

#[test]
fn zero_pool_scorer_averages_regions() {
    let (model, rounds) = model_for("");
    let mut store = model.init_store(7).unwrap();
    store.insert("fuse.v.pool.w1", Matrix::zeros(8, 1), true);
    let mut tape = Tape::new();
    let s = run_gog(&mut tape, &store, &model, &rounds[3]).unwrap();
    let f = fuse(&mut tape, &store, &model, &s).unwrap();
    assert!(tape.value(f.pool_weights[2]).data().iter().all(|&w| (w - 0.2).abs() < 1e-15));
}

#[test]
fn identical_candidates_tie_in_both_decoders() {
    let (model, rounds) = model_for("");
    let store = model.init_store(8).unwrap();
    let mut r = rounds[1].clone();
    r.candidates[10] = r.candidates[3].clone();
    let mut tape = Tape::new();
    let s = run_gog(&mut tape, &store, &model, &r).unwrap();
    let j = fuse(&mut tape, &store, &model, &s).unwrap().joint;
    let (d, _) = discriminative_score(&mut tape, &store, &model, j, &r.candidates).unwrap();
    let (g, _) = generative_score(&mut tape, &store, &model, j, &r.candidates).unwrap();
    for sc in [d, g] {
        assert_eq!(sc.scores[3], sc.scores[10]);
        assert!(sc.rank_of(3) < sc.rank_of(10));
        assert_eq!(sc.rank_of(10), sc.rank_of(3) + 1);
    }
}

#[test]
fn uniform_decoder_prefers_the_shortest_candidate() {
    let (model, rounds) = model_for("");
    let mut store = model.init_store(9).unwrap();
    let v = model.cfg.vocab_size;
    store.insert("gen.out.w", Matrix::zeros(8, v), true);
    store.insert("gen.out.b", Matrix::zeros(1, v), true);
    let mut r = rounds[0].clone();
    r.candidates[57] = vec![];
    let mut tape = Tape::new();
    let s = run_gog(&mut tape, &store, &model, &r).unwrap();
    let j = fuse(&mut tape, &store, &model, &s).unwrap().joint;
    let (g, _) = generative_score(&mut tape, &store, &model, j, &r.candidates).unwrap();
    let per_token = -(v as f64).ln();
    for (c, &score) in r.candidates.iter().zip(&g.scores) {
        assert!((score - (c.len() + 1) as f64 * per_token).abs() < 1e-9);
    }
    assert_eq!(g.ranking[0], 57);
}

#[test]
fn discriminative_loss_examples() {
    let mut tape = Tape::new();
    let mut enc = Matrix::zeros(100, 4);
    enc.set(42, 2, 1.0);
    for i in 0..100 {
        enc.set(i, 0, 0.5);
    }
    let e = tape.constant(enc);
    let j = tape.constant(Matrix::row_vector(&[0.0, 0.0, 3.0, 0.0]));
    let logits = discriminative_logits(&mut tape, e, j).unwrap();
    assert_eq!(gog::model::rank_scores(tape.value(logits).data()).ranking[0], 42);

    let flat = tape.constant(Matrix::filled(1, 100, 0.7));
    let loss = discriminative_loss(&mut tape, flat, 5).unwrap();
    assert!((tape.value(loss).get(0, 0) - 100f64.ln()).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new(0);
    store.insert("j", random_matrix(&mut rng, 1, 6), true);
    let cands = random_matrix(&mut rng, 100, 6);
    let report = check_gradients(
        |s, t| {
            let j = t.param(s, "j")?;
            let c = t.constant(cands.clone());
            let l = discriminative_logits(t, c, j)?;
            discriminative_loss(t, l, 17)
        },
        &store,
        1e-5,
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}
