//! Reverse-mode automatic differentiation over small dense matrices.
//!
//! A [`Tape`] borrows a [`ParamSet`], records every operation of one forward
//! pass, and replays them backwards into a [`Grads`] buffer. Tapes are cheap
//! and short-lived: one per training example.

use super::params::{Grads, ParamId, ParamSet};
use super::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Param(ParamId),
    Const,
    MatMul(Var, Var),
    MatMulBT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Gather(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    MeanRows(Var, usize, usize),
    SoftmaxRows(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor,
    },
    Scale(Var, f64),
    Sum(Var),
    /// Output `[h | c]`; `acts` holds `[i | f | g | o | tanh(c)]`.
    LstmCell {
        gates: Var,
        c_prev: Option<Var>,
        acts: Tensor,
    },
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            (None, _) => unreachable!("only parameter nodes borrow their value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// The tape node for a parameter; created once per tape.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op: Op::Const,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols(), bv.rows(), "matmul inner dimensions");
        let mut out = Tensor::zeros(av.rows(), bv.cols());
        tensor::matmul_acc(&mut out, av, bv);
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// `a * b^T`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols(), bv.cols(), "matmul_bt inner dimensions");
        let mut out = Tensor::zeros(av.rows(), bv.rows());
        tensor::matmul_bt_acc(&mut out, av, bv);
        self.push(out, Op::MatMulBT(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b), &[a, b])
    }

    /// Adds the `1 x n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let bias = self.value(b);
        assert_eq!(bias.rows(), 1);
        let mut out = self.value(a).clone();
        assert_eq!(out.cols(), bias.cols());
        for r in 0..out.rows() {
            for (o, &x) in out.row_mut(r).iter_mut().zip(bias.data()) {
                *o += x;
            }
        }
        self.push(out, Op::AddRow(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let bv = self.value(b);
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), bv.shape());
        for (o, &x) in out.data_mut().iter_mut().zip(bv.data()) {
            *o *= x;
        }
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(tensor::sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    /// Rows of `a` selected by `indices` (embedding lookup when `a` is a table).
    pub fn gather(&mut self, a: Var, indices: Vec<usize>) -> Var {
        let av = self.value(a);
        let mut out = Tensor::zeros(indices.len(), av.cols());
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(r).copy_from_slice(av.row(i));
        }
        self.push(out, Op::Gather(a, indices.clone()), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(pv.data());
        }
        let rows = data.len() / cols.max(1);
        self.push(
            Tensor::from_vec(rows, cols, data),
            Op::ConcatRows(parts.to_vec()),
            parts,
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let av = self.value(a);
        let mut out = Tensor::zeros(av.rows(), end - start);
        for r in 0..av.rows() {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..end]);
        }
        self.push(out, Op::SliceCols(a, start, end), &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let av = self.value(a);
        let cols = av.cols();
        let out = Tensor::from_vec(
            end - start,
            cols,
            av.data()[start * cols..end * cols].to_vec(),
        );
        self.push(out, Op::SliceRows(a, start, end), &[a])
    }

    /// Mean of rows `start..end` as a `1 x cols` row.
    pub fn mean_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        assert!(end > start, "mean over an empty row range");
        let av = self.value(a);
        let mut out = Tensor::zeros(1, av.cols());
        for r in start..end {
            for (o, &x) in out.data_mut().iter_mut().zip(av.row(r)) {
                *o += x;
            }
        }
        out.scale_assign(1.0 / (end - start) as f64);
        self.push(out, Op::MeanRows(a, start, end), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Tensor::zeros(av.rows(), av.cols());
        for r in 0..av.rows() {
            tensor::softmax_into(av.row(r), out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(a), &[a])
    }

    /// Mean over rows of `-log softmax(logits[r])[targets[r]]`, as a scalar.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len());
        assert!(!targets.is_empty());
        let mut probs = Tensor::zeros(lv.rows(), lv.cols());
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = lv.row(r);
            total += tensor::log_sum_exp(row) - row[t];
            tensor::softmax_into(row, probs.row_mut(r));
        }
        let out = Tensor::scalar(total / targets.len() as f64);
        self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            },
            &[logits],
        )
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale_assign(factor);
        self.push(out, Op::Scale(a, factor), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Fused LSTM cell on pre-activation `gates = [i | f | g | o]` (`1 x 4h`).
    /// Returns `[h | c]` as one `1 x 2h` row.
    pub fn lstm_cell(&mut self, gates: Var, c_prev: Option<Var>) -> Var {
        let gv = self.value(gates);
        assert_eq!(gv.rows(), 1);
        let h = gv.cols() / 4;
        let pre = gv.data();
        let cp: Option<&[f64]> = c_prev.map(|c| self.value(c).data());
        let mut acts = vec![0.0; 5 * h];
        let mut out = vec![0.0; 2 * h];
        for k in 0..h {
            let i = tensor::sigmoid(pre[k]);
            let f = tensor::sigmoid(pre[h + k]);
            let g = pre[2 * h + k].tanh();
            let o = tensor::sigmoid(pre[3 * h + k]);
            let c = f * cp.map_or(0.0, |c| c[k]) + i * g;
            let tc = c.tanh();
            acts[k] = i;
            acts[h + k] = f;
            acts[2 * h + k] = g;
            acts[3 * h + k] = o;
            acts[4 * h + k] = tc;
            out[k] = o * tc;
            out[h + k] = c;
        }
        let inputs: Vec<Var> = std::iter::once(gates).chain(c_prev).collect();
        let acts = Tensor::row_vector(acts);
        self.push(
            Tensor::row_vector(out),
            Op::LstmCell {
                gates,
                c_prev,
                acts,
            },
            &inputs,
        )
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Grads {
        let mut param_grads = self.params.zero_grads();
        self.backward_into(loss, &mut param_grads);
        param_grads
    }

    pub fn backward_into(&self, loss: Var, param_grads: &mut Grads) {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Param(id) => param_grads.get_mut(*id).add_assign(&g),
                Op::Const => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if let Some(ga) = self.slot(&mut grads, *a) {
                        tensor::matmul_bt_acc(ga, &g, bv);
                    }
                    if let Some(gb) = self.slot(&mut grads, *b) {
                        tensor::matmul_at_acc(gb, av, &g);
                    }
                }
                Op::MatMulBT(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if let Some(ga) = self.slot(&mut grads, *a) {
                        tensor::matmul_acc(ga, &g, bv);
                    }
                    if let Some(gb) = self.slot(&mut grads, *b) {
                        tensor::matmul_at_acc(gb, &g, av);
                    }
                }
                Op::Add(a, b) => {
                    if let Some(ga) = self.slot(&mut grads, *a) {
                        ga.add_assign(&g);
                    }
                    if let Some(gb) = self.slot(&mut grads, *b) {
                        gb.add_assign(&g);
                    }
                }
                Op::AddRow(a, b) => {
                    if let Some(ga) = self.slot(&mut grads, *a) {
                        ga.add_assign(&g);
                    }
                    if let Some(gb) = self.slot(&mut grads, *b) {
                        for r in 0..g.rows() {
                            for (o, &x) in gb.data_mut().iter_mut().zip(g.row(r)) {
                                *o += x;
                            }
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if let Some(ga) = self.slot(&mut grads, *a) {
                        for ((o, &x), &y) in ga.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                            *o += x * y;
                        }
                    }
                    if let Some(gb) = self.slot(&mut grads, *b) {
                        for ((o, &x), &y) in gb.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                            *o += x * y;
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().unwrap();
                    if let Some(ga) = self.slot(&mut grads, *a) {
                        for ((o, &x), &s) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                            *o += x * s * (1.0 - s);
                        }
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().unwrap();
                    if let Some(ga) = self.slot(&mut grads, *a) {
                        for ((o, &x), &t) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                            *o += x * (1.0 - t * t);
                        }
                    }
                }
                Op::Gather(a, indices) => {
                    if let Some(ga) = self.slot(&mut grads, *a) {
                        for (r, &i) in indices.iter().enumerate() {
                            for (o, &x) in ga.row_mut(i).iter_mut().zip(g.row(r)) {
                                *o += x;
                            }
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let width = self.value(p).cols();
                        if let Some(gp) = self.slot(&mut grads, p) {
                            for r in 0..g.rows() {
                                for (o, &x) in gp
                                    .row_mut(r)
                                    .iter_mut()
                                    .zip(&g.row(r)[offset..offset + width])
                                {
                                    *o += x;
                                }
                            }
                        }
                        offset += width;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    let cols = g.cols();
                    for &p in parts {
                        let len = self.value(p).len();
                        if let Some(gp) = self.slot(&mut grads, p) {
                            for (o, &x) in gp
                                .data_mut()
                                .iter_mut()
                                .zip(&g.data()[offset..offset + len])
                            {
                                *o += x;
                            }
                        }
                        offset += len;
                        debug_assert_eq!(len % cols.max(1), 0);
                    }
                }
                Op::SliceCols(a, start, _end) => {
                    if let Some(ga) = self.slot(&mut grads, *a) {
                        for r in 0..g.rows() {
                            for (o, &x) in ga.row_mut(r)[*start..].iter_mut().zip(g.row(r)) {
                                *o += x;
                            }
                        }
                    }
                }
                Op::SliceRows(a, start, _end) => {
                    if let Some(ga) = self.slot(&mut grads, *a) {
                        let cols = g.cols();
                        for (o, &x) in ga.data_mut()[start * cols..].iter_mut().zip(g.data()) {
                            *o += x;
                        }
                    }
                }
                Op::MeanRows(a, start, end) => {
                    if let Some(ga) = self.slot(&mut grads, *a) {
                        let w = 1.0 / (end - start) as f64;
                        for r in *start..*end {
                            for (o, &x) in ga.row_mut(r).iter_mut().zip(g.data()) {
                                *o += w * x;
                            }
                        }
                    }
                }
                Op::SoftmaxRows(a) => {
                    let y = node.value.as_ref().unwrap();
                    if let Some(ga) = self.slot(&mut grads, *a) {
                        for r in 0..y.rows() {
                            let (yr, gr) = (y.row(r), g.row(r));
                            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for ((o, &yy), &gg) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                                *o += yy * (gg - dot);
                            }
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    if let Some(gl) = self.slot(&mut grads, *logits) {
                        let w = g.scalar_value() / targets.len() as f64;
                        for (r, &t) in targets.iter().enumerate() {
                            let row = gl.row_mut(r);
                            for (o, &p) in row.iter_mut().zip(probs.row(r)) {
                                *o += w * p;
                            }
                            row[t] -= w;
                        }
                    }
                }
                Op::Scale(a, factor) => {
                    if let Some(ga) = self.slot(&mut grads, *a) {
                        for (o, &x) in ga.data_mut().iter_mut().zip(g.data()) {
                            *o += factor * x;
                        }
                    }
                }
                Op::Sum(a) => {
                    if let Some(ga) = self.slot(&mut grads, *a) {
                        let s = g.scalar_value();
                        ga.data_mut().iter_mut().for_each(|o| *o += s);
                    }
                }
                Op::LstmCell {
                    gates,
                    c_prev,
                    acts,
                } => {
                    let h = acts.len() / 5;
                    let a = acts.data();
                    let gd = g.data();
                    let cp: Option<&[f64]> = c_prev.map(|c| self.value(c).data());
                    let mut d_gates = vec![0.0; 4 * h];
                    let mut d_cprev = vec![0.0; h];
                    for k in 0..h {
                        let (i, f, gg, o, tc) =
                            (a[k], a[h + k], a[2 * h + k], a[3 * h + k], a[4 * h + k]);
                        let dh = gd[k];
                        let dc = gd[h + k] + dh * o * (1.0 - tc * tc);
                        let d_o = dh * tc;
                        let d_i = dc * gg;
                        let d_g = dc * i;
                        let d_f = dc * cp.map_or(0.0, |c| c[k]);
                        d_cprev[k] = dc * f;
                        d_gates[k] = d_i * i * (1.0 - i);
                        d_gates[h + k] = d_f * f * (1.0 - f);
                        d_gates[2 * h + k] = d_g * (1.0 - gg * gg);
                        d_gates[3 * h + k] = d_o * o * (1.0 - o);
                    }
                    if let Some(gg) = self.slot(&mut grads, *gates) {
                        for (o, x) in gg.data_mut().iter_mut().zip(d_gates) {
                            *o += x;
                        }
                    }
                    if let Some(c) = c_prev {
                        if let Some(gc) = self.slot(&mut grads, *c) {
                            for (o, x) in gc.data_mut().iter_mut().zip(d_cprev) {
                                *o += x;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Gradient accumulator for `v`, or `None` when `v` needs no gradient.
    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut Tensor> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let (rows, cols) = self.shape(v);
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(rows, cols)))
    }
}
