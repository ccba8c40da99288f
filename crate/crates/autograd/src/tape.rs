//! Tape-based reverse-mode differentiation over 2-D tensors.
//!
//! A [`Tape`] records every operation of one forward pass. Values are
//! computed eagerly when an operation is pushed; [`Tape::backward`] then walks
//! the tape in reverse and accumulates adjoints. The graph is rebuilt for every
//! forward pass, so variable entity counts need no special handling.
//!
//! Parameters are borrowed from a [`ParamSet`] rather than copied onto the
//! tape. A parameter is pushed at most once per tape, so its gradient is the
//! sum over every use.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::AutogradError;
use crate::params::{ParamGrads, ParamId, ParamSet};
use crate::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.idx
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Input,
    Param(ParamId),
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    LeakyRelu(usize, f64),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols(usize, usize),
    SliceRows(usize, usize),
    Transpose(usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    NormalizeRows(usize, f64),
    MeanRows(usize),
    RepeatRows(usize),
    Sum(usize),
    Mean(usize),
    GatherRows(usize, Vec<usize>),
    Pick(usize, usize, usize),
    Minimum(usize, usize),
    Clamp(usize, f64, f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MulRow(..) => "mul_row",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::Transpose(..) => "transpose",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::LogSoftmaxRows(..) => "log_softmax_rows",
            Op::NormalizeRows(..) => "normalize_rows",
            Op::MeanRows(..) => "mean_rows",
            Op::RepeatRows(..) => "repeat_rows",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::GatherRows(..) => "gather_rows",
            Op::Pick(..) => "pick",
            Op::Minimum(..) => "minimum",
            Op::Clamp(..) => "clamp",
        }
    }
}

struct Node {
    /// `None` for parameter nodes; their value lives in the borrowed set.
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// One recorded forward pass.
pub struct Tape<'p> {
    id: u64,
    params: Option<&'p ParamSet>,
    param_nodes: Vec<Option<usize>>,
    nodes: Vec<Node>,
    non_finite: Option<(usize, &'static str)>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    /// A tape without parameters; use [`Tape::input`] for differentiable leaves.
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            params: None,
            param_nodes: Vec::new(),
            nodes: Vec::new(),
            non_finite: None,
        }
    }

    pub fn with_params(params: &'p ParamSet) -> Self {
        let mut tape = Self::new();
        tape.params = Some(params);
        tape.param_nodes = vec![None; params.len()];
        tape
    }

    /// Drops every recorded node. Handles from before the reset become invalid.
    pub fn reset(&mut self) {
        self.id = NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed);
        self.nodes.clear();
        self.non_finite = None;
        for p in &mut self.param_nodes {
            *p = None;
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn owns(&self, v: Var) -> bool {
        v.tape == self.id && v.idx < self.nodes.len()
    }

    fn check(&self, v: Var) -> usize {
        assert!(self.owns(v), "variable does not belong to this tape");
        v.idx
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let idx = self.nodes.len();
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some((idx, op.name()));
        }
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var { tape: self.id, idx }
    }

    fn value_at(&self, idx: usize) -> &Tensor {
        let node = &self.nodes[idx];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(id)) => self.params.expect("param node without parameter set").get(*id),
            _ => unreachable!("node without value"),
        }
    }

    fn rg(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let idx = self.check(v);
        self.value_at(idx)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    /// First node whose forward value was NaN or infinite, if any.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.non_finite
    }

    /// Non-differentiable data.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Differentiable leaf whose gradient can be read back with
    /// [`Gradients::wrt`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, true)
    }

    /// Leaf referring to a parameter of the borrowed [`ParamSet`].
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(idx) = self.param_nodes[id.0] {
            return Var { tape: self.id, idx };
        }
        let params = self.params.expect("tape was created without a parameter set");
        let idx = self.nodes.len();
        if self.non_finite.is_none() && !params.get(id).is_finite() {
            self.non_finite = Some((idx, "param"));
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        self.param_nodes[id.0] = Some(idx);
        Var { tape: self.id, idx }
    }

    /// Looks up a parameter by name. Panics if the name is unknown.
    pub fn param_named(&mut self, name: &str) -> Var {
        let params = self.params.expect("tape was created without a parameter set");
        let id = params.id(name).unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        self.param(id)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ai, bi) = (self.check(a), self.check(b));
        let (va, vb) = (self.value_at(ai), self.value_at(bi));
        assert_eq!(
            va.cols(),
            vb.rows(),
            "matmul shape mismatch: {:?} · {:?}",
            va.shape(),
            vb.shape()
        );
        let mut out = Tensor::zeros(va.rows(), vb.cols());
        matmul_acc(va, vb, &mut out);
        let rg = self.rg(ai) || self.rg(bi);
        self.push(out, Op::MatMul(ai, bi), rg)
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (ai, bi) = (self.check(a), self.check(b));
        let (va, vb) = (self.value_at(ai), self.value_at(bi));
        assert_eq!(va.shape(), vb.shape(), "{} shape mismatch: {:?} vs {:?}", op.name(), va.shape(), vb.shape());
        let data = va.as_slice().iter().zip(vb.as_slice()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_vec(va.rows(), va.cols(), data);
        let rg = self.rg(ai) || self.rg(bi);
        self.push(out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let op = Op::Add(a.idx, b.idx);
        self.zip_with(a, b, op, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let op = Op::Sub(a.idx, b.idx);
        self.zip_with(a, b, op, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let op = Op::Mul(a.idx, b.idx);
        self.zip_with(a, b, op, |x, y| x * y)
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        let op = Op::Minimum(a.idx, b.idx);
        self.zip_with(a, b, op, f64::min)
    }

    fn row_broadcast(&mut self, a: Var, row: Var, mul: bool) -> Var {
        let (ai, ri) = (self.check(a), self.check(row));
        let (va, vr) = (self.value_at(ai), self.value_at(ri));
        assert!(
            vr.rows() == 1 && vr.cols() == va.cols(),
            "row broadcast shape mismatch: {:?} with row {:?}",
            va.shape(),
            vr.shape()
        );
        let mut out = va.clone();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(vr.as_slice()) {
                if mul {
                    *o *= b;
                } else {
                    *o += b;
                }
            }
        }
        let rg = self.rg(ai) || self.rg(ri);
        let op = if mul { Op::MulRow(ai, ri) } else { Op::AddRow(ai, ri) };
        self.push(out, op, rg)
    }

    /// Adds a `1×n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        self.row_broadcast(a, row, false)
    }

    /// Multiplies every row of `a` elementwise by a `1×n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        self.row_broadcast(a, row, true)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let ai = self.check(a);
        let out = self.value_at(ai).map(f);
        let rg = self.rg(ai);
        self.push(out, op, rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::Scale(a.idx, s), |x| x * s)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::AddScalar(a.idx), |x| x + s)
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, Op::LeakyRelu(a.idx, slope), |x| if x >= 0.0 { x } else { slope * x })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a.idx), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a.idx), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a.idx), f64::exp)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a.idx, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Concatenates along the feature (column) axis. All parts share a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let idxs: Vec<usize> = parts.iter().map(|&p| self.check(p)).collect();
        let rows = self.value_at(idxs[0]).rows();
        let cols: usize = idxs.iter().map(|&i| self.value_at(i).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &i in &idxs {
                let v = self.value_at(i);
                assert_eq!(v.rows(), rows, "concat_cols row mismatch");
                out.row_mut(r)[offset..offset + v.cols()].copy_from_slice(v.row(r));
                offset += v.cols();
            }
        }
        for &i in &idxs {
            assert_eq!(self.value_at(i).rows(), rows, "concat_cols row mismatch");
        }
        let rg = idxs.iter().any(|&i| self.rg(i));
        self.push(out, Op::ConcatCols(idxs), rg)
    }

    /// Stacks along the entity (row) axis. All parts share a column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let idxs: Vec<usize> = parts.iter().map(|&p| self.check(p)).collect();
        let cols = self.value_at(idxs[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &i in &idxs {
            let v = self.value_at(i);
            assert_eq!(v.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(v.as_slice());
            rows += v.rows();
        }
        let rg = idxs.iter().any(|&i| self.rg(i));
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(idxs), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ai = self.check(a);
        let va = self.value_at(ai);
        assert!(start + len <= va.cols(), "slice_cols out of range");
        let mut out = Tensor::zeros(va.rows(), len);
        for r in 0..va.rows() {
            out.row_mut(r).copy_from_slice(&va.row(r)[start..start + len]);
        }
        let rg = self.rg(ai);
        self.push(out, Op::SliceCols(ai, start), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ai = self.check(a);
        let va = self.value_at(ai);
        assert!(start + len <= va.rows(), "slice_rows out of range");
        let c = va.cols();
        let out = Tensor::from_vec(len, c, va.as_slice()[start * c..(start + len) * c].to_vec());
        let rg = self.rg(ai);
        self.push(out, Op::SliceRows(ai, start), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let ai = self.check(a);
        let out = self.value_at(ai).transpose();
        let rg = self.rg(ai);
        self.push(out, Op::Transpose(ai), rg)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let ai = self.check(a);
        let mut out = self.value_at(ai).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        let rg = self.rg(ai);
        self.push(out, Op::SoftmaxRows(ai), rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let ai = self.check(a);
        let mut out = self.value_at(ai).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let lse = log_sum_exp(row);
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let rg = self.rg(ai);
        self.push(out, Op::LogSoftmaxRows(ai), rg)
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)` with the
    /// population variance.
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let ai = self.check(a);
        let mut out = self.value_at(ai).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
        }
        let rg = self.rg(ai);
        self.push(out, Op::NormalizeRows(ai, eps), rg)
    }

    /// Column means as a `1×n` row. A zero-row input yields the zero row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let ai = self.check(a);
        let va = self.value_at(ai);
        let mut out = Tensor::zeros(1, va.cols());
        if va.rows() > 0 {
            let inv = 1.0 / va.rows() as f64;
            for r in 0..va.rows() {
                for (o, &v) in out.as_mut_slice().iter_mut().zip(va.row(r)) {
                    *o += v;
                }
            }
            out.scale_in_place(inv);
        }
        let rg = self.rg(ai);
        self.push(out, Op::MeanRows(ai), rg)
    }

    /// Broadcasts a `1×n` row to `count×n`.
    pub fn repeat_rows(&mut self, a: Var, count: usize) -> Var {
        let ai = self.check(a);
        let va = self.value_at(ai);
        assert_eq!(va.rows(), 1, "repeat_rows expects a single row");
        let mut data = Vec::with_capacity(count * va.cols());
        for _ in 0..count {
            data.extend_from_slice(va.as_slice());
        }
        let out = Tensor::from_vec(count, va.cols(), data);
        let rg = self.rg(ai);
        self.push(out, Op::RepeatRows(ai), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let ai = self.check(a);
        let s = self.value_at(ai).sum();
        let rg = self.rg(ai);
        self.push(Tensor::scalar(s), Op::Sum(ai), rg)
    }

    /// Mean over all entries; zero for an empty tensor.
    pub fn mean(&mut self, a: Var) -> Var {
        let ai = self.check(a);
        let va = self.value_at(ai);
        let m = if va.is_empty() { 0.0 } else { va.sum() / va.len() as f64 };
        let rg = self.rg(ai);
        self.push(Tensor::scalar(m), Op::Mean(ai), rg)
    }

    /// Embedding lookup: row `indices[r]` of `table` becomes output row `r`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Var {
        let ti = self.check(table);
        let vt = self.value_at(ti);
        let c = vt.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            assert!(i < vt.rows(), "gather index {i} out of range for table with {} rows", vt.rows());
            data.extend_from_slice(vt.row(i));
        }
        let out = Tensor::from_vec(indices.len(), c, data);
        let rg = self.rg(ti);
        self.push(out, Op::GatherRows(ti, indices.to_vec()), rg)
    }

    /// Single entry `a[row, col]` as a `1×1` node.
    pub fn pick(&mut self, a: Var, row: usize, col: usize) -> Var {
        let ai = self.check(a);
        let v = self.value_at(ai).get(row, col);
        let rg = self.rg(ai);
        self.push(Tensor::scalar(v), Op::Pick(ai, row, col), rg)
    }

    /// Reverse pass from a `1×1` loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutogradError> {
        if !self.owns(loss) {
            return Err(AutogradError::ForeignNode);
        }
        if let Some((node, op)) = self.non_finite {
            return Err(AutogradError::NonFiniteValue { op, node });
        }
        let (r, c) = self.value_at(loss.idx).shape();
        if (r, c) != (1, 1) {
            return Err(AutogradError::NonScalarLoss(r, c));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.idx + 1];
        grads[loss.idx] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.idx).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if !g.is_finite() {
                return Err(AutogradError::NonFiniteValue {
                    op: self.nodes[idx].op.name(),
                    node: idx,
                });
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut param_grads = ParamGrads::new(self.param_nodes.len());
        for (p, node) in self.param_nodes.iter().enumerate() {
            if let Some(n) = node {
                if let Some(g) = grads.get(*n).and_then(Option::as_ref) {
                    *param_grads.slot_mut(ParamId(p)) = Some(g.clone());
                }
            }
        }
        Ok(Gradients {
            tape: self.id,
            nodes: grads,
            params: param_grads,
        })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = self.value_at(idx);
        match &self.nodes[idx].op {
            Op::Constant | Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                if self.rg(a) {
                    let vb = self.value_at(b);
                    let slot = acc_slot(grads, a, self.value_at(a).shape());
                    matmul_bt_acc(g, vb, slot);
                }
                if self.rg(b) {
                    let va = self.value_at(a);
                    let slot = acc_slot(grads, b, self.value_at(b).shape());
                    matmul_at_acc(va, g, slot);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g, 1.0);
                self.acc(grads, *b, g, 1.0);
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g, 1.0);
                self.acc(grads, *b, g, -1.0);
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.rg(a) {
                    let d = hadamard(g, self.value_at(b));
                    self.acc(grads, a, &d, 1.0);
                }
                if self.rg(b) {
                    let d = hadamard(g, self.value_at(a));
                    self.acc(grads, b, &d, 1.0);
                }
            }
            Op::Minimum(a, b) => {
                let (a, b) = (*a, *b);
                let (va, vb) = (self.value_at(a), self.value_at(b));
                let mut da = Tensor::zeros(g.rows(), g.cols());
                let mut db = Tensor::zeros(g.rows(), g.cols());
                for i in 0..g.len() {
                    if va.as_slice()[i] <= vb.as_slice()[i] {
                        da.as_mut_slice()[i] = g.as_slice()[i];
                    } else {
                        db.as_mut_slice()[i] = g.as_slice()[i];
                    }
                }
                self.acc(grads, a, &da, 1.0);
                self.acc(grads, b, &db, 1.0);
            }
            Op::AddRow(a, row) => {
                self.acc(grads, *a, g, 1.0);
                if self.rg(*row) {
                    let d = col_sums(g);
                    self.acc(grads, *row, &d, 1.0);
                }
            }
            Op::MulRow(a, row) => {
                let (a, row) = (*a, *row);
                let vr = self.value_at(row);
                if self.rg(a) {
                    let mut d = g.clone();
                    for r in 0..d.rows() {
                        for (x, &s) in d.row_mut(r).iter_mut().zip(vr.as_slice()) {
                            *x *= s;
                        }
                    }
                    self.acc(grads, a, &d, 1.0);
                }
                if self.rg(row) {
                    let d = col_sums(&hadamard(g, self.value_at(a)));
                    self.acc(grads, row, &d, 1.0);
                }
            }
            Op::Scale(a, s) => self.acc(grads, *a, g, *s),
            Op::AddScalar(a) => self.acc(grads, *a, g, 1.0),
            Op::LeakyRelu(a, slope) => {
                let va = self.value_at(*a);
                let d = zip_map(g, va, |gv, x| if x >= 0.0 { gv } else { slope * gv });
                self.acc(grads, *a, &d, 1.0);
            }
            Op::Sigmoid(a) => {
                let d = zip_map(g, y, |gv, s| gv * s * (1.0 - s));
                self.acc(grads, *a, &d, 1.0);
            }
            Op::Tanh(a) => {
                let d = zip_map(g, y, |gv, t| gv * (1.0 - t * t));
                self.acc(grads, *a, &d, 1.0);
            }
            Op::Exp(a) => {
                let d = hadamard(g, y);
                self.acc(grads, *a, &d, 1.0);
            }
            Op::Clamp(a, lo, hi) => {
                let va = self.value_at(*a);
                let d = zip_map(g, va, |gv, x| if x >= *lo && x <= *hi { gv } else { 0.0 });
                self.acc(grads, *a, &d, 1.0);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = self.value_at(p).shape();
                    if self.rg(p) {
                        let mut d = Tensor::zeros(rows, cols);
                        for r in 0..rows {
                            d.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        self.acc(grads, p, &d, 1.0);
                    }
                    offset += cols;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = self.value_at(p).shape();
                    if self.rg(p) {
                        let d = Tensor::from_vec(rows, cols, g.as_slice()[offset * cols..(offset + rows) * cols].to_vec());
                        self.acc(grads, p, &d, 1.0);
                    }
                    offset += rows;
                }
            }
            Op::SliceCols(a, start) => {
                let a = *a;
                let slot = acc_slot(grads, a, self.value_at(a).shape());
                for r in 0..g.rows() {
                    for (o, &v) in slot.row_mut(r)[*start..*start + g.cols()].iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
            }
            Op::SliceRows(a, start) => {
                let a = *a;
                let slot = acc_slot(grads, a, self.value_at(a).shape());
                let c = g.cols();
                for (o, &v) in slot.as_mut_slice()[start * c..(start + g.rows()) * c].iter_mut().zip(g.as_slice()) {
                    *o += v;
                }
            }
            Op::Transpose(a) => {
                let d = g.transpose();
                self.acc(grads, *a, &d, 1.0);
            }
            Op::SoftmaxRows(a) => {
                let mut d = g.clone();
                for r in 0..d.rows() {
                    let yr = y.row(r);
                    let dot: f64 = g.row(r).iter().zip(yr).map(|(a, b)| a * b).sum();
                    for (x, &s) in d.row_mut(r).iter_mut().zip(yr) {
                        *x = s * (*x - dot);
                    }
                }
                self.acc(grads, *a, &d, 1.0);
            }
            Op::LogSoftmaxRows(a) => {
                let mut d = g.clone();
                for r in 0..d.rows() {
                    let total: f64 = g.row(r).iter().sum();
                    for (x, &ls) in d.row_mut(r).iter_mut().zip(y.row(r)) {
                        *x -= ls.exp() * total;
                    }
                }
                self.acc(grads, *a, &d, 1.0);
            }
            Op::NormalizeRows(a, eps) => {
                let va = self.value_at(*a);
                let mut d = Tensor::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let x = va.row(r);
                    let n = x.len() as f64;
                    let mean = x.iter().sum::<f64>() / n;
                    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let inv = 1.0 / (var + eps).sqrt();
                    let gr = g.row(r);
                    let yr = y.row(r);
                    let g_mean = gr.iter().sum::<f64>() / n;
                    let gy_mean = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                    for ((o, &gv), &yv) in d.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *o = inv * (gv - g_mean - yv * gy_mean);
                    }
                }
                self.acc(grads, *a, &d, 1.0);
            }
            Op::MeanRows(a) => {
                let a = *a;
                let (rows, cols) = self.value_at(a).shape();
                if rows > 0 {
                    let inv = 1.0 / rows as f64;
                    let slot = acc_slot(grads, a, (rows, cols));
                    for r in 0..rows {
                        for (o, &v) in slot.row_mut(r).iter_mut().zip(g.as_slice()) {
                            *o += v * inv;
                        }
                    }
                }
            }
            Op::RepeatRows(a) => {
                let d = col_sums(g);
                self.acc(grads, *a, &d, 1.0);
            }
            Op::Sum(a) => {
                let a = *a;
                let gv = g.item();
                let slot = acc_slot(grads, a, self.value_at(a).shape());
                for o in slot.as_mut_slice() {
                    *o += gv;
                }
            }
            Op::Mean(a) => {
                let a = *a;
                let shape = self.value_at(a).shape();
                let n = shape.0 * shape.1;
                if n > 0 {
                    let gv = g.item() / n as f64;
                    let slot = acc_slot(grads, a, shape);
                    for o in slot.as_mut_slice() {
                        *o += gv;
                    }
                }
            }
            Op::GatherRows(table, indices) => {
                let table = *table;
                let slot = acc_slot(grads, table, self.value_at(table).shape());
                for (r, &i) in indices.iter().enumerate() {
                    for (o, &v) in slot.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
            }
            Op::Pick(a, row, col) => {
                let a = *a;
                let slot = acc_slot(grads, a, self.value_at(a).shape());
                let c = slot.cols();
                slot.as_mut_slice()[row * c + col] += g.item();
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], target: usize, g: &Tensor, scale: f64) {
        if !self.rg(target) {
            return;
        }
        match &mut grads[target] {
            Some(t) => t.add_scaled(g, scale),
            slot @ None => {
                let mut t = g.clone();
                if scale != 1.0 {
                    t.scale_in_place(scale);
                }
                *slot = Some(t);
            }
        }
    }
}

fn acc_slot(grads: &mut [Option<Tensor>], idx: usize, shape: (usize, usize)) -> &mut Tensor {
    grads[idx].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1))
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    zip_map(a, b, |x, y| x * y)
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data)
}

fn col_sums(g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, &v) in out.as_mut_slice().iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Softmax with max subtraction, in place.
pub fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in values.iter_mut() {
        *v /= total;
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    tape: u64,
    nodes: Vec<Option<Tensor>>,
    params: ParamGrads,
}

impl Gradients {
    /// Gradient of the loss with respect to a node of the originating tape.
    /// `None` when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        assert_eq!(v.tape, self.tape, "variable does not belong to the tape these gradients came from");
        self.nodes.get(v.idx).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id)
    }

    pub fn params(&self) -> &ParamGrads {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads {
        self.params
    }
}
