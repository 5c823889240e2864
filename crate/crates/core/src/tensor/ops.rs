//! Differentiable building blocks shared by every model component: affine
//! maps, masked softmax, layer normalization and the gated recurrent encoder.

use super::matrix::Matrix;
use super::params::{Init, ParamStore};
use super::tape::{softmax_row, Tape, Var};
use crate::error::{GogError, Result};

/// Registers a `d_in × d_out` weight and optional `1 × d_out` bias under
/// `{name}.w` / `{name}.b`.
pub fn register_linear(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool) -> Result<()> {
    store.register(&format!("{name}.w"), d_in, d_out, Init::Uniform { fan_in: d_in })?;
    if bias {
        store.register(&format!("{name}.b"), 1, d_out, Init::Uniform { fan_in: d_in })?;
    }
    Ok(())
}

/// `x · W (+ b)`.
pub fn linear(tape: &mut Tape, store: &ParamStore, x: Var, weight: &str, bias: Option<&str>) -> Result<Var> {
    let w = tape.param(store, weight)?;
    let (_, d_in) = tape.shape(x);
    let (w_in, _) = tape.shape(w);
    if d_in != w_in {
        return Err(GogError::dim(
            "linear",
            format!("input {}", tape.value(x).shape_str()),
            format!("weight `{weight}` {}", tape.value(w).shape_str()),
        ));
    }
    let mut y = tape.matmul(x, w)?;
    if let Some(b) = bias {
        let b = tape.param(store, b)?;
        y = tape.add_row(y, b)?;
    }
    tape.value(y).ensure_finite("linear")?;
    Ok(y)
}

/// Shorthand for the `{name}.w` / `{name}.b` pair.
pub fn dense(tape: &mut Tape, store: &ParamStore, x: Var, name: &str) -> Result<Var> {
    let b = format!("{name}.b");
    let bias = store.contains(&b).then_some(b.as_str());
    linear(tape, store, x, &format!("{name}.w"), bias)
}

/// Softmax over the unmasked positions. Masked positions are exactly zero and
/// an all-masked input yields all zeros.
pub fn masked_softmax(scores: &[f64], mask: &[bool]) -> Vec<f64> {
    assert_eq!(scores.len(), mask.len(), "scores and mask lengths differ");
    let mut out = vec![0.0; scores.len()];
    softmax_row(scores, Some(mask), &mut out);
    out
}

pub fn register_layer_norm(store: &mut ParamStore, name: &str, d: usize) -> Result<()> {
    store.register(&format!("{name}.gain"), 1, d, Init::Ones)?;
    store.register(&format!("{name}.shift"), 1, d, Init::Zeros)
}

/// Row-wise layer normalization followed by the learned affine map.
pub fn layer_norm(tape: &mut Tape, store: &ParamStore, x: Var, gain: &str, shift: &str) -> Result<Var> {
    let normed = tape.layer_norm_rows(x)?;
    let g = tape.param(store, gain)?;
    let s = tape.param(store, shift)?;
    let y = tape.mul_row(normed, g)?;
    let y = tape.add_row(y, s)?;
    tape.value(y).ensure_finite("layer_norm")?;
    Ok(y)
}

/// Hidden and cell vectors of a recurrent layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

/// Parameter names of one recurrent layer. Gate blocks are ordered
/// input, forget, candidate, output along the columns.
#[derive(Debug, Clone)]
pub struct LstmLayer {
    pub w_x: String,
    pub w_h: String,
    pub bias: String,
    pub d_in: usize,
    pub d: usize,
}

impl LstmLayer {
    pub fn new(name: &str, d_in: usize, d: usize) -> Self {
        LstmLayer {
            w_x: format!("{name}.wx"),
            w_h: format!("{name}.wh"),
            bias: format!("{name}.b"),
            d_in,
            d,
        }
    }

    pub fn register(&self, store: &mut ParamStore) -> Result<()> {
        store.register(&self.w_x, self.d_in, 4 * self.d, Init::Uniform { fan_in: self.d })?;
        store.register(&self.w_h, self.d, 4 * self.d, Init::Uniform { fan_in: self.d })?;
        store.register(&self.bias, 1, 4 * self.d, Init::Uniform { fan_in: self.d })
    }
}

/// Result of running a layer over a batch of sequences.
pub struct LstmRun {
    /// One `B × d` matrix per step; rows past a sequence's length are zero.
    pub steps: Vec<Var>,
    pub last_hidden: Var,
    pub last_cell: Var,
}

/// Runs a recurrent layer over `inputs` (one `B × d_in` matrix per step).
/// Row `b` is only updated while `step < lengths[b]`, so the reported last
/// state of each row is the state after its final valid token.
pub fn lstm_run(
    tape: &mut Tape,
    store: &ParamStore,
    layer: &LstmLayer,
    inputs: &[Var],
    lengths: &[usize],
    init: Option<(Var, Var)>,
) -> Result<LstmRun> {
    let batch = lengths.len();
    let d = layer.d;
    let wx = tape.param(store, &layer.w_x)?;
    let wh = tape.param(store, &layer.w_h)?;
    let b = tape.param(store, &layer.bias)?;
    let (mut h, mut c) = match init {
        Some(s) => s,
        None => {
            let z = tape.constant(Matrix::zeros(batch, d));
            (z, z)
        }
    };
    let mut steps = Vec::with_capacity(inputs.len());
    for (t, &x) in inputs.iter().enumerate() {
        let (rows, cols) = tape.shape(x);
        if rows != batch || cols != layer.d_in {
            return Err(GogError::dim(
                "lstm_encode",
                format!("step input {rows}x{cols}"),
                format!("expected {batch}x{}", layer.d_in),
            ));
        }
        let zx = tape.matmul(x, wx)?;
        let zh = tape.matmul(h, wh)?;
        let z = tape.add(zx, zh)?;
        let z = tape.add_row(z, b)?;
        let i_g = tape.slice_cols(z, 0, d)?;
        let f_g = tape.slice_cols(z, d, d)?;
        let g_g = tape.slice_cols(z, 2 * d, d)?;
        let o_g = tape.slice_cols(z, 3 * d, d)?;
        let i_g = tape.sigmoid(i_g);
        let f_g = tape.sigmoid(f_g);
        let g_g = tape.tanh(g_g);
        let o_g = tape.sigmoid(o_g);
        let keep = tape.mul(f_g, c)?;
        let write = tape.mul(i_g, g_g)?;
        let c_new = tape.add(keep, write)?;
        let c_act = tape.tanh(c_new);
        let h_new = tape.mul(o_g, c_act)?;
        let active: Vec<bool> = lengths.iter().map(|&l| t < l).collect();
        if active.iter().all(|&a| a) {
            h = h_new;
            c = c_new;
            steps.push(h_new);
        } else {
            h = tape.blend_rows(h_new, h, &active)?;
            c = tape.blend_rows(c_new, c, &active)?;
            steps.push(tape.mask_rows(h_new, &active)?);
        }
    }
    tape.value(h).ensure_finite("lstm_encode")?;
    Ok(LstmRun {
        steps,
        last_hidden: h,
        last_cell: c,
    })
}

/// Encodes a single embedded sequence (`L × d_e`), returning the per-step
/// hidden states (`L × d`) and the final state.
pub fn lstm_encode(
    tape: &mut Tape,
    store: &ParamStore,
    layer: &LstmLayer,
    embeddings: Var,
) -> Result<(Var, Var, Var)> {
    let (len, width) = tape.shape(embeddings);
    if len == 0 {
        return Err(GogError::Config("lstm_encode needs at least one step".into()));
    }
    if width != layer.d_in {
        return Err(GogError::dim(
            "lstm_encode",
            format!("embeddings {len}x{width}"),
            format!("layer input width {}", layer.d_in),
        ));
    }
    let inputs = (0..len)
        .map(|t| tape.slice_rows(embeddings, t, 1))
        .collect::<Result<Vec<_>>>()?;
    let run = lstm_run(tape, store, layer, &inputs, &[len], None)?;
    let per_step = tape.concat_rows(&run.steps)?;
    Ok((per_step, run.last_hidden, run.last_cell))
}

/// Reads a `1 × d` hidden/cell pair off the tape.
pub fn lstm_state(tape: &Tape, hidden: Var, cell: Var) -> LstmState {
    LstmState {
        hidden: tape.value(hidden).data().to_vec(),
        cell: tape.value(cell).data().to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(entries: &[(&str, Matrix)]) -> ParamStore {
        let mut s = ParamStore::new(0);
        for (n, m) in entries {
            s.insert(n, m.clone(), true);
        }
        s
    }

    #[test]
    fn linear_identity_weights() {
        let s = store_with(&[("w", Matrix::identity(2))]);
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_rows(&[vec![1.0, 2.0]]));
        let y = linear(&mut t, &s, x, "w", None).unwrap();
        assert_eq!(t.value(y).to_rows(), vec![vec![1.0, 2.0]]);
    }

    #[test]
    fn linear_zero_input_returns_bias() {
        let s = store_with(&[
            ("w", Matrix::from_rows(&[vec![0.3, -1.0], vec![2.0, 5.0]])),
            ("b", Matrix::row_vector(&[3.0, 4.0])),
        ]);
        let mut t = Tape::new();
        let x = t.constant(Matrix::zeros(1, 2));
        let y = linear(&mut t, &s, x, "w", Some("b")).unwrap();
        assert_eq!(t.value(y).to_rows(), vec![vec![3.0, 4.0]]);
    }

    #[test]
    fn linear_two_rows_hand_dot_products() {
        let s = store_with(&[("w", Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]))]);
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let y = linear(&mut t, &s, x, "w", None).unwrap();
        assert_eq!(t.value(y).to_rows(), vec![vec![3.0, 2.0], vec![7.0, 4.0]]);
    }

    #[test]
    fn linear_shape_error_names_both_shapes() {
        let s = store_with(&[("w", Matrix::zeros(3, 2))]);
        let mut t = Tape::new();
        let x = t.constant(Matrix::zeros(1, 2));
        let msg = linear(&mut t, &s, x, "w", None).unwrap_err().to_string();
        assert!(msg.contains("1x2") && msg.contains("3x2"), "{msg}");
    }

    #[test]
    fn masked_softmax_cases() {
        assert_eq!(
            masked_softmax(&[9.0, -3.0, 0.5, 7.0], &[false, false, true, false]),
            vec![0.0, 0.0, 1.0, 0.0]
        );
        for p in masked_softmax(&[1.5; 4], &[true; 4]) {
            assert!((p - 0.25).abs() < 1e-15);
        }
        let p = masked_softmax(&[0.0, 2f64.ln()], &[true, true]);
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-12 && (p[1] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(masked_softmax(&[1.0, 2.0], &[false, false]), vec![0.0, 0.0]);
    }

    fn ln_row(values: &[f64]) -> Vec<f64> {
        let d = values.len();
        let s = store_with(&[
            ("g", Matrix::filled(1, d, 1.0)),
            ("s", Matrix::zeros(1, d)),
        ]);
        let mut t = Tape::new();
        let x = t.constant(Matrix::row_vector(values));
        let y = layer_norm(&mut t, &s, x, "g", "s").unwrap();
        t.value(y).data().to_vec()
    }

    #[test]
    fn layer_norm_examples() {
        assert_eq!(ln_row(&[5.0; 4]), vec![0.0; 4]);
        let y = ln_row(&[1.0, -1.0]);
        assert!((y[0] - 1.0).abs() < 1e-5 && (y[1] + 1.0).abs() < 1e-5);
        let y = ln_row(&[0.0, 1.0, 2.0, 3.0]);
        for (a, b) in y.iter().zip([-1.3416, -0.4472, 0.4472, 1.3416]) {
            assert!((a - b).abs() < 1e-3, "{y:?}");
        }
    }

    #[test]
    fn layer_norm_rejects_width_one() {
        let s = store_with(&[("g", Matrix::filled(1, 1, 1.0)), ("s", Matrix::zeros(1, 1))]);
        let mut t = Tape::new();
        let x = t.constant(Matrix::row_vector(&[2.0]));
        assert!(layer_norm(&mut t, &s, x, "g", "s").is_err());
    }

    #[test]
    fn lstm_zero_weights_zero_first_hidden() {
        let layer = LstmLayer::new("l", 3, 2);
        let mut s = ParamStore::new(0);
        s.insert(&layer.w_x, Matrix::zeros(3, 8), true);
        s.insert(&layer.w_h, Matrix::zeros(2, 8), true);
        s.insert(&layer.bias, Matrix::zeros(1, 8), true);
        let mut t = Tape::new();
        let e = t.constant(Matrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.3, 0.3, 0.3]]));
        let (steps, h, c) = lstm_encode(&mut t, &s, &layer, e).unwrap();
        assert!(t.value(steps).data().iter().all(|&v| v == 0.0));
        assert_eq!(lstm_state(&t, h, c).hidden, vec![0.0, 0.0]);
    }

    #[test]
    fn lstm_single_step_matches_last_state() {
        let layer = LstmLayer::new("l", 3, 4);
        let mut s = ParamStore::new(5);
        layer.register(&mut s).unwrap();
        let mut t = Tape::new();
        let e = t.constant(Matrix::from_rows(&[vec![0.2, -0.7, 1.1]]));
        let (steps, h, _) = lstm_encode(&mut t, &s, &layer, e).unwrap();
        assert_eq!(t.shape(steps), (1, 4));
        assert_eq!(t.value(steps), t.value(h));
    }

    #[test]
    fn lstm_width_mismatch() {
        let layer = LstmLayer::new("l", 3, 4);
        let mut s = ParamStore::new(5);
        layer.register(&mut s).unwrap();
        let mut t = Tape::new();
        let e = t.constant(Matrix::zeros(2, 5));
        assert!(matches!(
            lstm_encode(&mut t, &s, &layer, e),
            Err(GogError::Dimension { .. })
        ));
    }

    #[test]
    fn padded_rows_keep_their_state() {
        let layer = LstmLayer::new("l", 2, 3);
        let mut s = ParamStore::new(9);
        layer.register(&mut s).unwrap();
        let seq = [vec![0.5, -0.1], vec![0.9, 0.4], vec![-0.3, 0.8]];
        // batch row 0 has the full sequence, row 1 only its first two steps
        let mut t = Tape::new();
        let inputs: Vec<Var> = seq
            .iter()
            .map(|x| t.constant(Matrix::from_rows(&[x.clone(), x.clone()])))
            .collect();
        let run = lstm_run(&mut t, &s, &layer, &inputs, &[3, 2], None).unwrap();
        let mut t2 = Tape::new();
        let short = t2.constant(Matrix::from_rows(&seq[..2]));
        let (_, h_short, _) = lstm_encode(&mut t2, &s, &layer, short).unwrap();
        assert_eq!(t.value(run.last_hidden).row(1), t2.value(h_short).row(0));
        assert!(t.value(run.steps[2]).row(1).iter().all(|&v| v == 0.0));
    }
}
