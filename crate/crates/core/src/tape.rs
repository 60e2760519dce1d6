//! Reverse-mode automatic differentiation over a Wengert list.
//!
//! Every operation appends a node holding its output value plus whatever the
//! backward pass needs. Nodes are appended in evaluation order, so walking the
//! list backwards is a valid reverse topological order. A tape is rebuilt for
//! every segment.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gather {
        src: Var,
        index: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    Softmax {
        x: Var,
        scale: f64,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum(Var),
    StopGradient(Var),
    SelectRows {
        keep: Vec<bool>,
        a: Var,
        b: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

const LN_EPS: f64 = 1e-5;

/// A recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if nothing flowed into it.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(&self.shapes[v.0], g.clone()))
    }

    /// Gradient for `v`, zero-filled when `v` did not contribute to the loss.
    pub fn get_or_zero(&self, v: Var) -> Tensor {
        self.get(v).unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Input nodes of `v`, in argument order.
    pub fn inputs(&self, v: Var) -> Vec<Var> {
        match &self.nodes[v.0].op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b)
            | Op::MatMulNt(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::MulConst(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Gelu(a)
            | Op::Sum(a)
            | Op::StopGradient(a) => vec![*a],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Gather { src, .. } => vec![*src],
            Op::ConcatCols(p) | Op::ConcatRows(p) => p.clone(),
            Op::SliceCols { x, .. } | Op::SliceRows { x, .. } | Op::Softmax { x, .. } => vec![*x],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::SelectRows { a, b, .. } => vec![*a, *b],
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A trainable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant input; it never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.value(a).dims2();
        let (k2, n) = self.value(b).dims2();
        assert_eq!(k, k2, "matmul inner dimensions differ");
        let mut out = vec![0.0; m * n];
        tensor::gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(&[m, n], out), Op::MatMul(a, b), rg)
    }

    /// `a * b^T`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.value(a).dims2();
        let (n, k2) = self.value(b).dims2();
        assert_eq!(k, k2, "matmul_nt inner dimensions differ");
        let mut out = vec![0.0; m * n];
        tensor::gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(&[m, n], out), Op::MatMulNt(a, b), rg)
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise shapes differ");
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |p, q| p + q);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |p, q| p - q);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |p, q| p * q);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Mul(a, b), rg)
    }

    /// Adds a length-`n` vector to every row of an `[m, n]` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (_, n) = self.value(a).dims2();
        assert_eq!(self.value(bias).len(), n, "bias length differs from row width");
        let b = self.value(bias).data().to_vec();
        let x = self.value(a);
        let mut data = x.data().to_vec();
        for row in data.chunks_exact_mut(n) {
            for (v, bv) in row.iter_mut().zip(&b) {
                *v += bv;
            }
        }
        let out = Tensor::new(x.shape(), data);
        let rg = self.rg(&[a, bias]);
        self.push(out, Op::AddRow(a, bias), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let x = self.value(a);
        let out = Tensor::new(x.shape(), x.data().iter().map(|v| v * c).collect());
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    /// Elementwise product with a constant mask (used for dropout).
    pub fn mul_const(&mut self, a: Var, mask: Vec<f64>) -> Var {
        let x = self.value(a);
        assert_eq!(mask.len(), x.len());
        let out = Tensor::new(
            x.shape(),
            x.data().iter().zip(&mask).map(|(v, m)| v * m).collect(),
        );
        let rg = self.rg(&[a]);
        self.push(out, Op::MulConst(a, mask), rg)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let x = self.value(a);
        Tensor::new(x.shape(), x.data().iter().map(|&v| f(v)).collect())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map(a, tensor::sigmoid_scalar);
        let rg = self.rg(&[a]);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.map(a, libm::tanh);
        let rg = self.rg(&[a]);
        self.push(out, Op::Tanh(a), rg)
    }

    /// Exact GELU, `x * Phi(x)`.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.map(a, tensor::gelu_scalar);
        let rg = self.rg(&[a]);
        self.push(out, Op::Gelu(a), rg)
    }

    /// Row-wise layer normalisation with a learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let (rows, cols) = self.value(x).dims2();
        assert_eq!(self.value(gain).len(), cols);
        assert_eq!(self.value(bias).len(), cols);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let src = self.value(x).data();
        let mut xhat = vec![0.0; rows * cols];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let s = 1.0 / libm::sqrt(var + LN_EPS);
            rstd[r] = s;
            for c in 0..cols {
                let h = (row[c] - mean) * s;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g[c] + b[c];
            }
        }
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(&[x, gain, bias]);
        self.push(
            Tensor::new(&shape, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        )
    }

    /// `out.flat[i] = src.flat[index[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, src: Var, index: Vec<usize>, shape: &[usize]) -> Var {
        let s = self.value(src).data();
        let data = index.iter().map(|&i| s[i]).collect();
        let out = Tensor::new(shape, data);
        let rg = self.rg(&[src]);
        self.push(out, Op::Gather { src, index }, rg)
    }

    /// Selects rows of a `[V, d]` table.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Var {
        let (v, d) = self.value(table).dims2();
        let mut index = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < v, "token id {id} out of range for table of {v} rows");
            index.extend(id * d..(id + 1) * d);
        }
        self.gather(table, index, &[ids.len(), d])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let (rows, _) = self.value(parts[0]).dims2();
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (r, c) = self.value(p).dims2();
                assert_eq!(r, rows, "concat_cols row counts differ");
                c
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        self.push(Tensor::new(&[rows, total], data), Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (rows, cols) = self.value(x).dims2();
        assert!(start + len <= cols && len > 0);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::new(&[rows, len], data), Op::SliceCols { x, start }, rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let (_, cols) = self.value(parts[0]).dims2();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.value(p).dims2();
            assert_eq!(c, cols, "concat_rows column counts differ");
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let rg = self.rg(parts);
        self.push(Tensor::new(&[rows, cols], data), Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.value(x).slice_rows(start, len);
        let rg = self.rg(&[x]);
        self.push(out, Op::SliceRows { x, start }, rg)
    }

    /// Row-wise softmax of `scale * x` over the positions where `mask` is
    /// true (all positions when `mask` is `None`). Masked positions are
    /// exactly zero.
    pub fn scaled_masked_softmax(&mut self, x: Var, mask: Option<&[bool]>, scale: f64) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2();
        if let Some(m) = mask {
            assert_eq!(m.len(), rows * cols, "mask shape differs from scores");
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let admit = |c: usize| mask.is_none_or(|m| m[r * cols + c]);
            let mut max = f64::NEG_INFINITY;
            for c in 0..cols {
                if admit(c) {
                    max = max.max(scale * src[r * cols + c]);
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::FullyMaskedRow { row: r });
            }
            let mut total = 0.0;
            for c in 0..cols {
                if admit(c) {
                    let e = libm::exp(scale * src[r * cols + c] - max);
                    out[r * cols + c] = e;
                    total += e;
                }
            }
            for v in &mut out[r * cols..(r + 1) * cols] {
                *v /= total;
            }
        }
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(&shape, out), Op::Softmax { x, scale }, rg))
    }

    /// Mean next-token cross-entropy of `[T, V]` logits against `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let (t, v) = self.value(logits).dims2();
        assert_eq!(t, targets.len(), "one target per logit row");
        let src = self.value(logits).data();
        let mut probs = vec![0.0; t * v];
        let mut loss = 0.0;
        for r in 0..t {
            let row = &src[r * v..(r + 1) * v];
            let lse = tensor::log_sum_exp(row);
            assert!(targets[r] < v, "target out of vocabulary");
            loss += lse - row[targets[r]];
            for c in 0..v {
                probs[r * v + c] = libm::exp(row[c] - lse);
            }
        }
        let rg = self.rg(&[logits]);
        self.push(
            Tensor::scalar(loss / t as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(total), Op::Sum(a), rg)
    }

    /// Identity on values; blocks every gradient through this edge.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let out = self.value(a).clone();
        self.push(out, Op::StopGradient(a), false)
    }

    /// Row `r` of the result comes from `a` when `keep[r]`, otherwise from `b`.
    pub fn select_rows(&mut self, keep: Vec<bool>, a: Var, b: Var) -> Var {
        let (rows, cols) = self.value(a).dims2();
        assert_eq!(self.value(b).dims2(), (rows, cols));
        assert_eq!(keep.len(), rows);
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(rows * cols);
        for (r, &k) in keep.iter().enumerate() {
            let src = if k { x } else { y };
            data.extend_from_slice(&src[r * cols..(r + 1) * cols]);
        }
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(&[rows, cols], data), Op::SelectRows { keep, a, b }, rg)
    }

    /// Propagates `d loss` back to every node that requires a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss { len: lv.len() });
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(slot);
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::StopGradient(_) => {}
            &Op::MatMul(a, b) => {
                let (m, k) = self.value(a).dims2();
                let (_, n) = self.value(b).dims2();
                let bv = self.value(b).data();
                let av = self.value(a).data();
                self.acc(grads, a, |ga| tensor::gemm_nt(g, bv, ga, m, n, k));
                self.acc(grads, b, |gb| tensor::gemm_tn(av, g, gb, m, k, n));
            }
            &Op::MatMulNt(a, b) => {
                let (m, k) = self.value(a).dims2();
                let (n, _) = self.value(b).dims2();
                let bv = self.value(b).data();
                let av = self.value(a).data();
                self.acc(grads, a, |ga| tensor::gemm_nn(g, bv, ga, m, n, k));
                self.acc(grads, b, |gb| tensor::gemm_tn(g, av, gb, m, n, k));
            }
            &Op::Add(a, b) => {
                self.acc(grads, a, |ga| axpy(ga, g, 1.0));
                self.acc(grads, b, |gb| axpy(gb, g, 1.0));
            }
            &Op::Sub(a, b) => {
                self.acc(grads, a, |ga| axpy(ga, g, 1.0));
                self.acc(grads, b, |gb| axpy(gb, g, -1.0));
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                self.acc(grads, a, |ga| {
                    for ((x, gi), y) in ga.iter_mut().zip(g).zip(bv) {
                        *x += gi * y;
                    }
                });
                self.acc(grads, b, |gb| {
                    for ((x, gi), y) in gb.iter_mut().zip(g).zip(av) {
                        *x += gi * y;
                    }
                });
            }
            &Op::AddRow(a, bias) => {
                self.acc(grads, a, |ga| axpy(ga, g, 1.0));
                let n = self.value(bias).len();
                self.acc(grads, bias, |gb| {
                    for row in g.chunks_exact(n) {
                        axpy(gb, row, 1.0);
                    }
                });
            }
            &Op::Scale(a, c) => self.acc(grads, a, |ga| axpy(ga, g, c)),
            Op::MulConst(a, mask) => self.acc(grads, *a, |ga| {
                for ((x, gi), m) in ga.iter_mut().zip(g).zip(mask) {
                    *x += gi * m;
                }
            }),
            &Op::Sigmoid(a) => self.acc(grads, a, |ga| {
                for ((x, gi), y) in ga.iter_mut().zip(g).zip(out.data()) {
                    *x += gi * y * (1.0 - y);
                }
            }),
            &Op::Tanh(a) => self.acc(grads, a, |ga| {
                for ((x, gi), y) in ga.iter_mut().zip(g).zip(out.data()) {
                    *x += gi * (1.0 - y * y);
                }
            }),
            &Op::Gelu(a) => {
                let xv = self.value(a).data();
                self.acc(grads, a, |ga| {
                    for ((x, gi), &v) in ga.iter_mut().zip(g).zip(xv) {
                        *x += gi * (tensor::normal_cdf(v) + v * tensor::normal_pdf(v));
                    }
                })
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let cols = self.value(*gain).len();
                let gv = self.value(*gain).data();
                self.acc(grads, *x, |gx| {
                    for (r, s) in rstd.iter().enumerate() {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let hr = &xhat[r * cols..(r + 1) * cols];
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for c in 0..cols {
                            let d = gr[c] * gv[c];
                            mean_d += d;
                            mean_dh += d * hr[c];
                        }
                        mean_d /= cols as f64;
                        mean_dh /= cols as f64;
                        for c in 0..cols {
                            let d = gr[c] * gv[c];
                            gx[r * cols + c] += s * (d - mean_d - hr[c] * mean_dh);
                        }
                    }
                });
                self.acc(grads, *gain, |gg| {
                    for (gr, hr) in g.chunks_exact(cols).zip(xhat.chunks_exact(cols)) {
                        for c in 0..cols {
                            gg[c] += gr[c] * hr[c];
                        }
                    }
                });
                self.acc(grads, *bias, |gb| {
                    for gr in g.chunks_exact(cols) {
                        axpy(gb, gr, 1.0);
                    }
                });
            }
            Op::Gather { src, index } => self.acc(grads, *src, |gs| {
                for (gi, &ix) in g.iter().zip(index) {
                    gs[ix] += gi;
                }
            }),
            Op::ConcatCols(parts) => {
                let (rows, total) = out.dims2();
                let mut offset = 0;
                for &p in parts {
                    let (_, w) = self.value(p).dims2();
                    self.acc(grads, p, |gp| {
                        for r in 0..rows {
                            axpy(
                                &mut gp[r * w..(r + 1) * w],
                                &g[r * total + offset..r * total + offset + w],
                                1.0,
                            );
                        }
                    });
                    offset += w;
                }
            }
            &Op::SliceCols { x, start } => {
                let (rows, len) = out.dims2();
                let (_, cols) = self.value(x).dims2();
                self.acc(grads, x, |gx| {
                    for r in 0..rows {
                        axpy(
                            &mut gx[r * cols + start..r * cols + start + len],
                            &g[r * len..(r + 1) * len],
                            1.0,
                        );
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.acc(grads, p, |gp| axpy(gp, &g[offset..offset + n], 1.0));
                    offset += n;
                }
            }
            &Op::SliceRows { x, start } => {
                let (_, cols) = out.dims2();
                self.acc(grads, x, |gx| {
                    axpy(&mut gx[start * cols..start * cols + g.len()], g, 1.0)
                });
            }
            &Op::Softmax { x, scale } => {
                let (_, cols) = out.dims2();
                self.acc(grads, x, |gx| {
                    for ((gxr, gr), yr) in gx
                        .chunks_exact_mut(cols)
                        .zip(g.chunks_exact(cols))
                        .zip(out.data().chunks_exact(cols))
                    {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            gxr[c] += scale * yr[c] * (gr[c] - dot);
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let v = probs.len() / targets.len();
                let w = g[0] / targets.len() as f64;
                self.acc(grads, *logits, |gl| {
                    for (r, &t) in targets.iter().enumerate() {
                        for c in 0..v {
                            gl[r * v + c] += w * probs[r * v + c];
                        }
                        gl[r * v + t] -= w;
                    }
                });
            }
            &Op::Sum(a) => self.acc(grads, a, |ga| {
                for x in ga.iter_mut() {
                    *x += g[0];
                }
            }),
            Op::SelectRows { keep, a, b } => {
                let cols = out.dims2().1;
                self.acc(grads, *a, |ga| {
                    for (r, &k) in keep.iter().enumerate() {
                        if k {
                            axpy(&mut ga[r * cols..(r + 1) * cols], &g[r * cols..(r + 1) * cols], 1.0);
                        }
                    }
                });
                self.acc(grads, *b, |gb| {
                    for (r, &k) in keep.iter().enumerate() {
                        if !k {
                            axpy(&mut gb[r * cols..(r + 1) * cols], &g[r * cols..(r + 1) * cols], 1.0);
                        }
                    }
                });
            }
        }
    }
}

#[inline]
fn axpy(dst: &mut [f64], src: &[f64], alpha: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}
