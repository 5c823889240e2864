//! Matrix-valued reverse-mode differentiation.
//!
//! Every forward kernel appends a node holding its output and the operation
//! that produced it. [`Tape::backward`] walks the nodes in reverse, pushing
//! adjoints to parents, and returns the gradients of every parameter leaf
//! keyed by name. A tape is single-threaded; parallel callers build one tape
//! per work item and reduce the returned [`Gradients`].

use std::collections::HashMap;

use super::matrix::{gemm_nt, gemm_tn, Matrix};
use super::params::{Gradients, ParamStore};
use crate::error::{GogError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    MaskedSoftmax(Var),
    LogSoftmax(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    GatherRows { x: Var, index: Vec<usize> },
    Gather { x: Var, index: Vec<usize> },
    Transpose(Var),
    Sum(Var),
    Blend { new: Var, old: Var, take_new: Vec<bool> },
    MaskRows { x: Var, keep: Vec<bool> },
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A parameter leaf. Repeated requests for the same name share one node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let p = store.get(name)?;
        let v = self.push(p.value.clone(), Op::Leaf, p.trainable);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(GogError::dim(
                op,
                self.value(a).shape_str(),
                self.value(b).shape_str(),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o -= v;
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= v;
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    fn check_row(&self, op: &'static str, a: Var, row: Var) -> Result<()> {
        let (_, c) = self.shape(a);
        if self.shape(row) != (1, c) {
            return Err(GogError::dim(
                op,
                self.value(a).shape_str(),
                self.value(row).shape_str(),
            ));
        }
        Ok(())
    }

    /// `a + 1·row` (row broadcast over every row of `a`).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check_row("add_row", a, row)?;
        let mut out = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r) {
                *o += b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(out, Op::AddRow(a, row), ng))
    }

    /// `a ⊙ 1·row`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check_row("mul_row", a, row)?;
        let mut out = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r) {
                *o *= b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(out, Op::MulRow(a, row), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let ng = self.ng(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        let ng = self.ng(a);
        self.push(out, Op::Relu(a), ng)
    }

    /// Row-wise softmax restricted to `mask` (row-major, same shape as `a`).
    /// Masked entries are exactly zero; fully masked rows are all zero.
    pub fn masked_softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let x = self.value(a);
        if let Some(m) = mask {
            if m.len() != x.data().len() {
                return Err(GogError::dim(
                    "masked_softmax",
                    x.shape_str(),
                    format!("mask of {}", m.len()),
                ));
            }
        }
        let (rows, cols) = x.shape();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let m = mask.map(|m| &m[r * cols..(r + 1) * cols]);
            softmax_row(x.row(r), m, out.row_mut(r));
        }
        let ng = self.ng(a);
        Ok(self.push(out, Op::MaskedSoftmax(a), ng))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (rows, cols) = x.shape();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let row = x.row(r);
            let lse = log_sum_exp(row);
            for (o, v) in out.row_mut(r).iter_mut().zip(row) {
                *o = v - lse;
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::LogSoftmax(a), ng)
    }

    /// Pre-affine row normalization with population variance and
    /// [`LAYER_NORM_EPS`] added before the square root.
    pub fn layer_norm_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (rows, cols) = x.shape();
        if cols < 2 {
            return Err(GogError::Config(format!(
                "layer_norm needs width >= 2, got {cols}"
            )));
        }
        let mut out = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, v) in out.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let ng = self.ng(a);
        Ok(self.push(out, Op::LayerNorm { x: a, inv_std }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.shape(parts[0]).0;
        let mut cols = 0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(GogError::dim(
                    "concat_cols",
                    self.value(parts[0]).shape_str(),
                    self.value(p).shape_str(),
                ));
            }
            cols += self.shape(p).1;
        }
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            let w = v.cols();
            for r in 0..rows {
                out.row_mut(r)[off..off + w].copy_from_slice(v.row(r));
            }
            off += w;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            if self.shape(p).1 != cols {
                return Err(GogError::dim(
                    "concat_rows",
                    self.value(parts[0]).shape_str(),
                    self.value(p).shape_str(),
                ));
            }
            rows += self.shape(p).0;
            data.extend_from_slice(self.value(p).data());
        }
        let out = Matrix::from_vec(rows, cols, data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.cols() {
            return Err(GogError::dim(
                "slice_cols",
                x.shape_str(),
                format!("cols {start}..{}", start + len),
            ));
        }
        let mut out = Matrix::zeros(x.rows(), len);
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        let ng = self.ng(a);
        Ok(self.push(out, Op::SliceCols { x: a, start }, ng))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.rows() {
            return Err(GogError::dim(
                "slice_rows",
                x.shape_str(),
                format!("rows {start}..{}", start + len),
            ));
        }
        let c = x.cols();
        let out = Matrix::from_vec(len, c, x.data()[start * c..(start + len) * c].to_vec())?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::SliceRows { x: a, start }, ng))
    }

    /// Selects (and possibly repeats) rows; embedding lookup and broadcasting.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let c = x.cols();
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            if i >= x.rows() {
                return Err(GogError::dim(
                    "gather_rows",
                    x.shape_str(),
                    format!("row index {i}"),
                ));
            }
            data.extend_from_slice(x.row(i));
        }
        let out = Matrix::from_vec(index.len(), c, data)?;
        let ng = self.ng(a);
        Ok(self.push(
            out,
            Op::GatherRows {
                x: a,
                index: index.to_vec(),
            },
            ng,
        ))
    }

    /// Gathers flat (row-major) elements of `a` into a `rows × cols` matrix.
    pub fn gather(&mut self, a: Var, index: &[usize], rows: usize, cols: usize) -> Result<Var> {
        let x = self.value(a);
        let n = x.data().len();
        if index.len() != rows * cols {
            return Err(GogError::dim(
                "gather",
                format!("{rows}x{cols}"),
                format!("{} indices", index.len()),
            ));
        }
        let mut data = Vec::with_capacity(index.len());
        for &i in index {
            if i >= n {
                return Err(GogError::dim("gather", x.shape_str(), format!("flat index {i}")));
            }
            data.push(x.data()[i]);
        }
        let out = Matrix::from_vec(rows, cols, data)?;
        let ng = self.ng(a);
        Ok(self.push(
            out,
            Op::Gather {
                x: a,
                index: index.to_vec(),
            },
            ng,
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let ng = self.ng(a);
        self.push(out, Op::Transpose(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::filled(1, 1, self.value(a).sum());
        let ng = self.ng(a);
        self.push(out, Op::Sum(a), ng)
    }

    /// Row-wise select: rows with `take_new[r]` come from `new`, others from `old`.
    pub fn blend_rows(&mut self, new: Var, old: Var, take_new: &[bool]) -> Result<Var> {
        self.same_shape("blend_rows", new, old)?;
        let (rows, _) = self.shape(new);
        if take_new.len() != rows {
            return Err(GogError::dim(
                "blend_rows",
                self.value(new).shape_str(),
                format!("mask of {}", take_new.len()),
            ));
        }
        let mut out = self.value(old).clone();
        for (r, &t) in take_new.iter().enumerate() {
            if t {
                out.row_mut(r).copy_from_slice(self.value(new).row(r));
            }
        }
        let ng = self.ng(new) || self.ng(old);
        Ok(self.push(
            out,
            Op::Blend {
                new,
                old,
                take_new: take_new.to_vec(),
            },
            ng,
        ))
    }

    /// Zeroes rows where `keep[r]` is false.
    pub fn mask_rows(&mut self, a: Var, keep: &[bool]) -> Result<Var> {
        let mut out = self.value(a).clone();
        if keep.len() != out.rows() {
            return Err(GogError::dim(
                "mask_rows",
                out.shape_str(),
                format!("mask of {}", keep.len()),
            ));
        }
        for (r, &k) in keep.iter().enumerate() {
            if !k {
                out.row_mut(r).fill(0.0);
            }
        }
        let ng = self.ng(a);
        Ok(self.push(
            out,
            Op::MaskRows {
                x: a,
                keep: keep.to_vec(),
            },
            ng,
        ))
    }

    /// Reverse pass from a scalar (1×1) node. Returns gradients of every
    /// trainable parameter leaf that the loss depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(GogError::dim(
                "backward",
                self.value(loss).shape_str(),
                "1x1 scalar loss",
            ));
        }
        self.value(loss).ensure_finite("loss")?;
        let mut grads: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        let mut out = Gradients::new();
        for (name, v) in &self.params {
            if v.0 <= loss.0 {
                if let Some(g) = grads[v.0].take() {
                    out.insert(name.clone(), g);
                }
            }
        }
        Ok(out)
    }

    fn propagate(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let acc = slot(grads, *a, av.shape());
                    gemm_nt(g, bv, acc);
                }
                if self.ng(*b) {
                    let acc = slot(grads, *b, bv.shape());
                    gemm_tn(av, g, acc);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.ng(v) {
                        slot(grads, v, g.shape()).add_assign(g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.ng(*a) {
                    slot(grads, *a, g.shape()).add_assign(g);
                }
                if self.ng(*b) {
                    let acc = slot(grads, *b, g.shape());
                    for (o, v) in acc.data_mut().iter_mut().zip(g.data()) {
                        *o -= v;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let acc = slot(grads, *a, av.shape());
                    for ((o, gv), x) in acc.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                        *o += gv * x;
                    }
                }
                if self.ng(*b) {
                    let acc = slot(grads, *b, bv.shape());
                    for ((o, gv), x) in acc.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *o += gv * x;
                    }
                }
            }
            Op::AddRow(a, row) => {
                if self.ng(*a) {
                    slot(grads, *a, g.shape()).add_assign(g);
                }
                if self.ng(*row) {
                    let acc = slot(grads, *row, (1, g.cols()));
                    for r in 0..g.rows() {
                        for (o, v) in acc.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::MulRow(a, row) => {
                let (av, rv) = (self.value(*a), self.value(*row));
                if self.ng(*a) {
                    let acc = slot(grads, *a, av.shape());
                    for r in 0..g.rows() {
                        for ((o, gv), s) in acc.row_mut(r).iter_mut().zip(g.row(r)).zip(rv.data()) {
                            *o += gv * s;
                        }
                    }
                }
                if self.ng(*row) {
                    let acc = slot(grads, *row, rv.shape());
                    for r in 0..g.rows() {
                        for ((o, gv), x) in acc.data_mut().iter_mut().zip(g.row(r)).zip(av.row(r)) {
                            *o += gv * x;
                        }
                    }
                }
            }
            Op::Scale(a, s) => {
                let acc = slot(grads, *a, g.shape());
                for (o, gv) in acc.data_mut().iter_mut().zip(g.data()) {
                    *o += gv * s;
                }
            }
            Op::Sigmoid(a) => {
                let acc = slot(grads, *a, g.shape());
                for ((o, gv), yv) in acc.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    *o += gv * yv * (1.0 - yv);
                }
            }
            Op::Tanh(a) => {
                let acc = slot(grads, *a, g.shape());
                for ((o, gv), yv) in acc.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    *o += gv * (1.0 - yv * yv);
                }
            }
            Op::Relu(a) => {
                let acc = slot(grads, *a, g.shape());
                for ((o, gv), yv) in acc.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    if *yv > 0.0 {
                        *o += gv;
                    }
                }
            }
            Op::MaskedSoftmax(a) => {
                let acc = slot(grads, *a, g.shape());
                for r in 0..g.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for ((o, yv), gv) in acc.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o += yv * (gv - dot);
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let acc = slot(grads, *a, g.shape());
                for r in 0..g.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let gsum: f64 = gr.iter().sum();
                    for ((o, yv), gv) in acc.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o += gv - yv.exp() * gsum;
                    }
                }
            }
            Op::LayerNorm { x, inv_std } => {
                let d = g.cols() as f64;
                let acc = slot(grads, *x, g.shape());
                for r in 0..g.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let gsum: f64 = gr.iter().sum();
                    let gdot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    let inv = inv_std[r];
                    for ((o, gv), yv) in acc.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *o += inv / d * (d * gv - gsum - yv * gdot);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if self.ng(p) {
                        let acc = slot(grads, p, (g.rows(), w));
                        for r in 0..g.rows() {
                            for (o, v) in acc.row_mut(r).iter_mut().zip(&g.row(r)[off..off + w]) {
                                *o += v;
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut off = 0;
                for &p in parts {
                    let h = self.shape(p).0;
                    if self.ng(p) {
                        let acc = slot(grads, p, (h, c));
                        for (o, v) in acc.data_mut().iter_mut().zip(&g.data()[off * c..(off + h) * c]) {
                            *o += v;
                        }
                    }
                    off += h;
                }
            }
            Op::SliceCols { x, start } => {
                let shape = self.shape(*x);
                let acc = slot(grads, *x, shape);
                let w = g.cols();
                for r in 0..g.rows() {
                    for (o, v) in acc.row_mut(r)[*start..start + w].iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let shape = self.shape(*x);
                let c = shape.1;
                let acc = slot(grads, *x, shape);
                for (o, v) in acc.data_mut()[start * c..start * c + g.data().len()]
                    .iter_mut()
                    .zip(g.data())
                {
                    *o += v;
                }
            }
            Op::GatherRows { x, index } => {
                let shape = self.shape(*x);
                let acc = slot(grads, *x, shape);
                for (r, &src) in index.iter().enumerate() {
                    for (o, v) in acc.row_mut(src).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
            }
            Op::Gather { x, index } => {
                let shape = self.shape(*x);
                let acc = slot(grads, *x, shape);
                for (&src, v) in index.iter().zip(g.data()) {
                    acc.data_mut()[src] += v;
                }
            }
            Op::Transpose(a) => {
                let shape = self.shape(*a);
                slot(grads, *a, shape).add_assign(&g.transpose());
            }
            Op::Sum(a) => {
                let shape = self.shape(*a);
                let s = g.get(0, 0);
                for o in slot(grads, *a, shape).data_mut() {
                    *o += s;
                }
            }
            Op::Blend { new, old, take_new } => {
                for (target, want) in [(*new, true), (*old, false)] {
                    if !self.ng(target) {
                        continue;
                    }
                    let acc = slot(grads, target, g.shape());
                    for (r, &t) in take_new.iter().enumerate() {
                        if t == want {
                            for (o, v) in acc.row_mut(r).iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                    }
                }
            }
            Op::MaskRows { x, keep } => {
                let acc = slot(grads, *x, g.shape());
                for (r, &k) in keep.iter().enumerate() {
                    if k {
                        for (o, v) in acc.row_mut(r).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Matrix>], v: Var, shape: (usize, usize)) -> &mut Matrix {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_row(x: &[f64], mask: Option<&[bool]>, out: &mut [f64]) {
    let on = |j: usize| mask.map_or(true, |m| m[j]);
    let mut m = f64::NEG_INFINITY;
    for (j, &v) in x.iter().enumerate() {
        if on(j) && v > m {
            m = v;
        }
    }
    if m == f64::NEG_INFINITY {
        out.fill(0.0);
        return;
    }
    let mut z = 0.0;
    for (j, (&v, o)) in x.iter().zip(out.iter_mut()).enumerate() {
        *o = if on(j) { (v - m).exp() } else { 0.0 };
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}
