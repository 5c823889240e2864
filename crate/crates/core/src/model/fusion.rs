//! Attention-alignment fusion of the three node sets into one joint vector.
//!
//! For each modality `X` the self-attended and the two cross-attended views
//! of `X*` are concatenated, projected, passed through ReLU, added back to
//! `X*` and layer-normalized. An attention pool over the rows gives `X̄`, and
//! `J = [q̄, h̄, v̄] W_J`.

use super::encoder::{attention_pool, GoGState};
use super::{GogModel, MODALITIES};
use crate::error::{GogError, Result};
use crate::tensor::{layer_norm, ParamStore, Tape, Var};

/// Multi-head scaled dot-product attention in which `target` rows query
/// the `source` rows. `prefix.{q,k,v,o}` name the query, key, value and
/// output projections; `source_mask` hides padding rows of the source.
pub fn cross_attend(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    source: Var,
    source_mask: Option<&[bool]>,
    target: Var,
    heads: usize,
) -> Result<Var> {
    let (n_s, d) = tape.shape(source);
    let (n_t, d_t) = tape.shape(target);
    if n_s == 0 || source_mask.is_some_and(|m| !m.iter().any(|&b| b)) {
        return Err(GogError::Config(format!("{prefix}: attention source has no rows")));
    }
    if d != d_t || heads == 0 || d % heads != 0 {
        return Err(GogError::dim(
            "cross_attend",
            format!("source {n_s}x{d}"),
            format!("target {n_t}x{d_t} with {heads} heads"),
        ));
    }
    let p = |m: &str| format!("{prefix}.{m}");
    let wq = tape.param(store, &p("q"))?;
    let wk = tape.param(store, &p("k"))?;
    let wv = tape.param(store, &p("v"))?;
    let wo = tape.param(store, &p("o"))?;
    let queries = tape.matmul(target, wq)?;
    let keys = tape.matmul(source, wk)?;
    let values = tape.matmul(source, wv)?;
    let mask: Option<Vec<bool>> = source_mask.map(|m| m.iter().copied().cycle().take(n_t * n_s).collect());
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(queries, h * dk, dk)?;
        let kh = tape.slice_cols(keys, h * dk, dk)?;
        let vh = tape.slice_cols(values, h * dk, dk)?;
        let kt = tape.transpose(kh);
        let s = tape.matmul(qh, kt)?;
        let s = tape.scale(s, scale);
        let a = tape.masked_softmax(s, mask.as_deref())?;
        outs.push(tape.matmul(a, vh)?);
    }
    let merged = tape.concat_cols(&outs)?;
    tape.matmul(merged, wo)
}

pub struct FusionOutput {
    /// `1 × d` joint representation.
    pub joint: Var,
    /// Row pooling weights of q, h, v in that order.
    pub pool_weights: [Var; 3],
    /// Pooled `1 × d` rows q̄, h̄, v̄.
    pub pooled: [Var; 3],
}

pub fn fuse(tape: &mut Tape, store: &ParamStore, model: &GogModel, state: &GoGState) -> Result<FusionOutput> {
    let nodes = [state.q_star, state.h_star, state.v_star];
    let masks: [Option<&[bool]>; 3] = [Some(&state.question_mask), None, None];
    let heads = model.cfg.heads;
    let mut pooled = Vec::with_capacity(3);
    let mut weights = Vec::with_capacity(3);
    for (x, &name) in MODALITIES.iter().enumerate() {
        // self view first, then the other two in modality order
        let order = std::iter::once(x).chain((0..3).filter(|&s| s != x));
        let mut views = Vec::with_capacity(3);
        for s in order {
            let prefix = format!("fuse.{name}.from_{}", MODALITIES[s]);
            views.push(cross_attend(tape, store, &prefix, nodes[s], masks[s], nodes[x], heads)?);
        }
        let concat = tape.concat_cols(&views)?;
        let proj = tape.param(store, &format!("fuse.{name}.proj"))?;
        let z = tape.matmul(concat, proj)?;
        let z = tape.relu(z);
        let z = tape.add(z, nodes[x])?;
        let ln = format!("fuse.{name}.ln");
        let bar = layer_norm(tape, store, z, &format!("{ln}.gain"), &format!("{ln}.shift"))?;
        let (p, w) = attention_pool(tape, store, bar, masks[x], &format!("fuse.{name}.pool"))?;
        pooled.push(p);
        weights.push(w);
    }
    let cat = tape.concat_cols(&pooled)?;
    let wj = tape.param(store, "fuse.joint")?;
    let joint = tape.matmul(cat, wj)?;
    tape.value(joint).ensure_finite("fuse")?;
    Ok(FusionOutput {
        joint,
        pool_weights: [weights[0], weights[1], weights[2]],
        pooled: [pooled[0], pooled[1], pooled[2]],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Init, Matrix};

    fn store(d: usize, seed: u64) -> ParamStore {
        let mut s = ParamStore::new(seed);
        for m in ["q", "k", "v", "o"] {
            s.register(&format!("x.{m}"), d, d, Init::Uniform { fan_in: d }).unwrap();
        }
        s
    }

    fn rows(values: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&values.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    /// Per-head softmax attention written as explicit loops.
    fn oracle(s: &ParamStore, src: &Matrix, tgt: &Matrix, heads: usize) -> Matrix {
        let w = |m: &str| s.value(&format!("x.{m}")).unwrap().clone();
        let (q, k, v) = (tgt.matmul(&w("q")).unwrap(), src.matmul(&w("k")).unwrap(), src.matmul(&w("v")).unwrap());
        let d = src.cols();
        let dk = d / heads;
        let mut merged = Matrix::zeros(tgt.rows(), d);
        for h in 0..heads {
            for i in 0..tgt.rows() {
                let mut scores = Vec::new();
                for j in 0..src.rows() {
                    let mut dot = 0.0;
                    for c in h * dk..(h + 1) * dk {
                        dot += q.get(i, c) * k.get(j, c);
                    }
                    scores.push(dot / (dk as f64).sqrt());
                }
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|x| (x - m).exp()).sum();
                for (j, sc) in scores.iter().enumerate() {
                    let a = (sc - m).exp() / z;
                    for c in h * dk..(h + 1) * dk {
                        merged.set(i, c, merged.get(i, c) + a * v.get(j, c));
                    }
                }
            }
        }
        merged.matmul(&w("o")).unwrap()
    }

    fn attend(s: &ParamStore, src: &Matrix, tgt: &Matrix, heads: usize) -> Matrix {
        let mut tape = Tape::new();
        let (a, b) = (tape.constant(src.clone()), tape.constant(tgt.clone()));
        let out = cross_attend(&mut tape, s, "x", a, None, b, heads).unwrap();
        tape.value(out).clone()
    }

    #[test]
    fn single_source_row_is_copied() {
        let s = store(4, 3);
        let src = rows(&[&[0.2, -0.4, 1.0, 0.3]]);
        let tgt = rows(&[&[1.0, 0.0, 0.0, 2.0], &[-1.0, 0.5, 0.5, 0.0]]);
        let out = attend(&s, &src, &tgt, 2);
        let expect = src.matmul(s.value("x.v").unwrap()).unwrap().matmul(s.value("x.o").unwrap()).unwrap();
        for i in 0..2 {
            for c in 0..4 {
                assert!((out.get(i, c) - expect.get(0, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_keys_average_the_source() {
        let mut s = store(4, 4);
        s.insert("x.k", Matrix::zeros(4, 4), true);
        let src = rows(&[&[1.0, 2.0, 0.0, -1.0], &[3.0, 0.0, 1.0, 1.0], &[-1.0, 1.0, 2.0, 0.0]]);
        let tgt = rows(&[&[0.5, 0.5, 0.5, 0.5]]);
        let out = attend(&s, &src, &tgt, 2);
        let mean = Matrix::from_rows(&[(0..4).map(|c| (0..3).map(|r| src.get(r, c)).sum::<f64>() / 3.0).collect()]);
        let expect = mean.matmul(s.value("x.v").unwrap()).unwrap().matmul(s.value("x.o").unwrap()).unwrap();
        assert!(out.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn matches_loop_oracle() {
        let s = store(6, 42);
        let src = rows(&[&[0.1, 0.9, -0.3, 0.4, 0.0, 1.2], &[1.0, -1.0, 0.5, 0.2, 0.7, -0.6], &[0.3, 0.3, 0.3, -0.9, 0.1, 0.0]]);
        let tgt = rows(&[&[0.5, -0.2, 0.8, 0.1, -0.4, 0.6], &[-0.7, 0.2, 0.0, 1.1, 0.9, -0.3]]);
        for heads in [1, 2, 3] {
            let out = attend(&s, &src, &tgt, heads);
            assert!(out.max_abs_diff(&oracle(&s, &src, &tgt, heads)) < 1e-12, "heads {heads}");
        }
    }

    #[test]
    fn empty_source_is_config_error() {
        let s = store(2, 0);
        let mut tape = Tape::new();
        let a = tape.constant(rows(&[&[1.0, 0.0]]));
        let err = cross_attend(&mut tape, &s, "x", a, Some(&[false]), a, 1);
        assert!(matches!(err, Err(GogError::Config(_))));
    }
}
