//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every operation records its inputs and enough state to replay a local
//! gradient rule. [`Tape::backward`] walks the tape in reverse and accumulates
//! gradients into every node that requires them. Nodes are immutable once
//! recorded; a tape belongs to one logical thread of execution.

use std::cell::RefCell;

use crate::tensor::{Tensor, TensorError};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that minted it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatVec(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Concat(Var, Var, usize),
    Softmax(Var, usize),
    Row(Var, usize),
    StackRows(Vec<Var>),
    Sum(Var),
    Reshape(Var),
    /// Two-class cross-entropy straight from logits; the label picks the
    /// target class index (`true` marks the positive class at index 0).
    CrossEntropyLogits(Var, bool),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` required one.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            data,
            requires_grad,
            op,
        });
        Var(nodes.len() - 1)
    }

    // ── Inputs ─────────────────────────────────────────────────────────

    /// Record a tensor as a tape input, honoring its `requires_grad` flag.
    pub fn leaf(&self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            t.requires_grad,
            Op::Leaf,
        )
    }

    pub fn var(&self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Result<Var, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::InvalidShape {
                op: "var",
                shape,
                reason: format!("shape implies {numel} elements, data has {}", data.len()),
            });
        }
        Ok(self.push(shape, data, requires_grad, Op::Leaf))
    }

    pub fn constant(&self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var, TensorError> {
        self.var(shape, data, false)
    }

    // ── Accessors ──────────────────────────────────────────────────────

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].shape.clone()
    }

    pub fn value(&self, v: Var) -> Vec<f64> {
        self.nodes.borrow()[v.0].data.clone()
    }

    pub fn scalar_value(&self, v: Var) -> Result<f64, TensorError> {
        let nodes = self.nodes.borrow();
        let node = &nodes[v.0];
        if node.data.len() != 1 {
            return Err(TensorError::Contract(format!(
                "scalar_value on tensor of shape {:?}",
                node.shape
            )));
        }
        Ok(node.data[0])
    }

    // ── Matrix ops ─────────────────────────────────────────────────────

    /// `a[m×k] · b[k×n] → [m×n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let nodes = self.nodes.borrow();
        let out = mat_mat(&nodes[a.0].data, &nodes[b.0].data, m, k, n);
        let rg = nodes[a.0].requires_grad || nodes[b.0].requires_grad;
        drop(nodes);
        Ok(self.push(vec![m, n], out, rg, Op::MatMul(a, b)))
    }

    /// `w[m×k] · x[k] → [m]`.
    pub fn matvec(&self, w: Var, x: Var) -> Result<Var, TensorError> {
        let (sw, sx) = (self.shape(w), self.shape(x));
        if sw.len() != 2 || sx.len() != 1 || sw[1] != sx[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matvec",
                lhs: sw,
                rhs: sx,
            });
        }
        let (m, k) = (sw[0], sw[1]);
        let nodes = self.nodes.borrow();
        let wd = &nodes[w.0].data;
        let xd = &nodes[x.0].data;
        let mut out = vec![0.0; m];
        for i in 0..m {
            let row = &wd[i * k..(i + 1) * k];
            out[i] = row.iter().zip(xd).map(|(a, b)| a * b).sum();
        }
        let rg = nodes[w.0].requires_grad || nodes[x.0].requires_grad;
        drop(nodes);
        Ok(self.push(vec![m], out, rg, Op::MatVec(w, x)))
    }

    pub fn transpose(&self, x: Var) -> Result<Var, TensorError> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(TensorError::InvalidShape {
                op: "transpose",
                shape: s,
                reason: "expected a rank-2 tensor".into(),
            });
        }
        let (r, c) = (s[0], s[1]);
        let nodes = self.nodes.borrow();
        let out = transpose_data(&nodes[x.0].data, r, c);
        let rg = nodes[x.0].requires_grad;
        drop(nodes);
        Ok(self.push(vec![c, r], out, rg, Op::Transpose(x)))
    }

    // ── Elementwise ────────────────────────────────────────────────────

    fn binary_same_shape(
        &self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op: op_name,
                lhs: sa,
                rhs: sb,
            });
        }
        let nodes = self.nodes.borrow();
        let out: Vec<f64> = nodes[a.0]
            .data
            .iter()
            .zip(&nodes[b.0].data)
            .map(|(x, y)| f(*x, *y))
            .collect();
        let rg = nodes[a.0].requires_grad || nodes[b.0].requires_grad;
        drop(nodes);
        Ok(self.push(sa, out, rg, op))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn hadamard(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary_same_shape("hadamard", a, b, |x, y| x * y, Op::Hadamard(a, b))
    }

    pub fn scale(&self, x: Var, factor: f64) -> Var {
        let nodes = self.nodes.borrow();
        let node = &nodes[x.0];
        let out: Vec<f64> = node.data.iter().map(|v| v * factor).collect();
        let (shape, rg) = (node.shape.clone(), node.requires_grad);
        drop(nodes);
        self.push(shape, out, rg, Op::Scale(x, factor))
    }

    /// `m[r×c] + broadcast of b[c] over rows`.
    pub fn add_bias(&self, m: Var, b: Var) -> Result<Var, TensorError> {
        let (sm, sb) = (self.shape(m), self.shape(b));
        if sm.len() != 2 || sb.len() != 1 || sm[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: sm,
                rhs: sb,
            });
        }
        let (r, c) = (sm[0], sm[1]);
        let nodes = self.nodes.borrow();
        let md = &nodes[m.0].data;
        let bd = &nodes[b.0].data;
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(md[i * c + j] + bd[j]);
            }
        }
        let rg = nodes[m.0].requires_grad || nodes[b.0].requires_grad;
        drop(nodes);
        Ok(self.push(vec![r, c], out, rg, Op::AddBias(m, b)))
    }

    fn unary(&self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let nodes = self.nodes.borrow();
        let node = &nodes[x.0];
        let out: Vec<f64> = node.data.iter().map(|v| f(*v)).collect();
        let (shape, rg) = (node.shape.clone(), node.requires_grad);
        drop(nodes);
        self.push(shape, out, rg, op)
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    // ── Structure ──────────────────────────────────────────────────────

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat(&self, a: Var, b: Var, axis: usize) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let compatible = sa.len() == sb.len()
            && axis < sa.len()
            && sa
                .iter()
                .zip(&sb)
                .enumerate()
                .all(|(d, (x, y))| d == axis || x == y);
        if !compatible {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: sa,
                rhs: sb,
            });
        }
        let inner: usize = sa[axis + 1..].iter().product();
        let outer: usize = sa[..axis].iter().product();
        let slab_a = sa[axis] * inner;
        let slab_b = sb[axis] * inner;
        let mut shape = sa.clone();
        shape[axis] += sb[axis];
        let nodes = self.nodes.borrow();
        let ad = &nodes[a.0].data;
        let bd = &nodes[b.0].data;
        let mut out = Vec::with_capacity(ad.len() + bd.len());
        for o in 0..outer {
            out.extend_from_slice(&ad[o * slab_a..(o + 1) * slab_a]);
            out.extend_from_slice(&bd[o * slab_b..(o + 1) * slab_b]);
        }
        let rg = nodes[a.0].requires_grad || nodes[b.0].requires_grad;
        drop(nodes);
        Ok(self.push(shape, out, rg, Op::Concat(a, b, axis)))
    }

    /// Numerically stable softmax along `axis`; every lane sums to one.
    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let s = self.shape(x);
        if axis >= s.len() || s[axis] == 0 {
            return Err(TensorError::InvalidShape {
                op: "softmax",
                shape: s,
                reason: format!("axis {axis} is out of range or empty"),
            });
        }
        let nodes = self.nodes.borrow();
        let xd = &nodes[x.0].data;
        if xd.iter().any(|v| v.is_nan()) {
            return Err(TensorError::NonFinite { op: "softmax" });
        }
        let mut out = vec![0.0; xd.len()];
        for_each_lane(&s, axis, |base, stride, len| {
            let mut max = f64::NEG_INFINITY;
            for j in 0..len {
                max = max.max(xd[base + j * stride]);
            }
            let mut total = 0.0;
            for j in 0..len {
                let e = (xd[base + j * stride] - max).exp();
                out[base + j * stride] = e;
                total += e;
            }
            for j in 0..len {
                out[base + j * stride] /= total;
            }
        });
        let rg = nodes[x.0].requires_grad;
        drop(nodes);
        Ok(self.push(s, out, rg, Op::Softmax(x, axis)))
    }

    /// Extract row `index` of a rank-2 tensor as a vector.
    pub fn row(&self, x: Var, index: usize) -> Result<Var, TensorError> {
        let s = self.shape(x);
        if s.len() != 2 || index >= s[0] {
            return Err(TensorError::InvalidShape {
                op: "row",
                shape: s,
                reason: format!("row {index} out of range"),
            });
        }
        let c = s[1];
        let nodes = self.nodes.borrow();
        let out = nodes[x.0].data[index * c..(index + 1) * c].to_vec();
        let rg = nodes[x.0].requires_grad;
        drop(nodes);
        Ok(self.push(vec![c], out, rg, Op::Row(x, index)))
    }

    /// Stack equal-length vectors into a rank-2 tensor, one per row.
    pub fn stack_rows(&self, rows: &[Var]) -> Result<Var, TensorError> {
        if rows.is_empty() {
            return Err(TensorError::Contract("stack_rows of zero rows".into()));
        }
        let width = {
            let s = self.shape(rows[0]);
            if s.len() != 1 {
                return Err(TensorError::InvalidShape {
                    op: "stack_rows",
                    shape: s,
                    reason: "expected rank-1 rows".into(),
                });
            }
            s[0]
        };
        let nodes = self.nodes.borrow();
        let mut out = Vec::with_capacity(rows.len() * width);
        let mut rg = false;
        for &r in rows {
            let node = &nodes[r.0];
            if node.shape != [width] {
                return Err(TensorError::ShapeMismatch {
                    op: "stack_rows",
                    lhs: vec![width],
                    rhs: node.shape.clone(),
                });
            }
            out.extend_from_slice(&node.data);
            rg |= node.requires_grad;
        }
        drop(nodes);
        Ok(self.push(vec![rows.len(), width], out, rg, Op::StackRows(rows.to_vec())))
    }

    pub fn sum(&self, x: Var) -> Var {
        let nodes = self.nodes.borrow();
        let node = &nodes[x.0];
        let total: f64 = node.data.iter().sum();
        let rg = node.requires_grad;
        drop(nodes);
        self.push(vec![1], vec![total], rg, Op::Sum(x))
    }

    pub fn reshape(&self, x: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        let s = self.shape(x);
        let numel: usize = shape.iter().product();
        if numel != s.iter().product::<usize>() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: s,
                rhs: shape,
            });
        }
        let nodes = self.nodes.borrow();
        let out = nodes[x.0].data.clone();
        let rg = nodes[x.0].requires_grad;
        drop(nodes);
        Ok(self.push(shape, out, rg, Op::Reshape(x)))
    }

    /// Cross-entropy over two logits, stable log-sum-exp form.
    ///
    /// Logit order is `[positive, negative]`; `label_positive` selects the
    /// target class. Returns a scalar.
    pub fn cross_entropy_logits(&self, logits: Var, label_positive: bool) -> Result<Var, TensorError> {
        let s = self.shape(logits);
        if s != [2] {
            return Err(TensorError::Contract(format!(
                "cross_entropy_logits expects exactly two logits, got shape {s:?}"
            )));
        }
        let nodes = self.nodes.borrow();
        let d = &nodes[logits.0].data;
        let (l0, l1) = (d[0], d[1]);
        let m = l0.max(l1);
        let lse = m + ((l0 - m).exp() + (l1 - m).exp()).ln();
        let target = if label_positive { l0 } else { l1 };
        let loss = lse - target;
        let rg = nodes[logits.0].requires_grad;
        drop(nodes);
        Ok(self.push(vec![1], vec![loss], rg, Op::CrossEntropyLogits(logits, label_positive)))
    }

    // ── Backward ───────────────────────────────────────────────────────

    /// Reverse sweep from a scalar `loss`. Every node reachable from the
    /// loss with `requires_grad` receives its accumulated gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].data.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(out_grad) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(out_grad);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (m, n) = (node.shape[0], node.shape[1]);
                    let k = nodes[a.0].shape[1];
                    if nodes[a.0].requires_grad {
                        // dA = dZ · Bᵀ
                        let bt = transpose_data(&nodes[b.0].data, k, n);
                        let da = mat_mat(&out_grad, &bt, m, n, k);
                        accumulate(&mut grads, a.0, &da);
                    }
                    if nodes[b.0].requires_grad {
                        // dB = Aᵀ · dZ
                        let at = transpose_data(&nodes[a.0].data, m, k);
                        let db = mat_mat(&at, &out_grad, k, m, n);
                        accumulate(&mut grads, b.0, &db);
                    }
                }
                Op::MatVec(w, x) => {
                    let m = node.shape[0];
                    let k = nodes[x.0].shape[0];
                    if nodes[w.0].requires_grad {
                        let xd = &nodes[x.0].data;
                        let mut dw = vec![0.0; m * k];
                        for i in 0..m {
                            for j in 0..k {
                                dw[i * k + j] = out_grad[i] * xd[j];
                            }
                        }
                        accumulate(&mut grads, w.0, &dw);
                    }
                    if nodes[x.0].requires_grad {
                        let wd = &nodes[w.0].data;
                        let mut dx = vec![0.0; k];
                        for i in 0..m {
                            let g = out_grad[i];
                            for j in 0..k {
                                dx[j] += wd[i * k + j] * g;
                            }
                        }
                        accumulate(&mut grads, x.0, &dx);
                    }
                }
                Op::Transpose(x) => {
                    let (r, c) = (node.shape[0], node.shape[1]);
                    let dx = transpose_data(&out_grad, r, c);
                    accumulate(&mut grads, x.0, &dx);
                }
                Op::Add(a, b) => {
                    if nodes[a.0].requires_grad {
                        accumulate(&mut grads, a.0, &out_grad);
                    }
                    if nodes[b.0].requires_grad {
                        accumulate(&mut grads, b.0, &out_grad);
                    }
                }
                Op::Sub(a, b) => {
                    if nodes[a.0].requires_grad {
                        accumulate(&mut grads, a.0, &out_grad);
                    }
                    if nodes[b.0].requires_grad {
                        let neg: Vec<f64> = out_grad.iter().map(|g| -g).collect();
                        accumulate(&mut grads, b.0, &neg);
                    }
                }
                Op::Hadamard(a, b) => {
                    if nodes[a.0].requires_grad {
                        let da: Vec<f64> = out_grad
                            .iter()
                            .zip(&nodes[b.0].data)
                            .map(|(g, y)| g * y)
                            .collect();
                        accumulate(&mut grads, a.0, &da);
                    }
                    if nodes[b.0].requires_grad {
                        let db: Vec<f64> = out_grad
                            .iter()
                            .zip(&nodes[a.0].data)
                            .map(|(g, x)| g * x)
                            .collect();
                        accumulate(&mut grads, b.0, &db);
                    }
                }
                Op::Scale(x, factor) => {
                    let dx: Vec<f64> = out_grad.iter().map(|g| g * factor).collect();
                    accumulate(&mut grads, x.0, &dx);
                }
                Op::AddBias(m, b) => {
                    let (r, c) = (node.shape[0], node.shape[1]);
                    if nodes[m.0].requires_grad {
                        accumulate(&mut grads, m.0, &out_grad);
                    }
                    if nodes[b.0].requires_grad {
                        let mut db = vec![0.0; c];
                        for i in 0..r {
                            for j in 0..c {
                                db[j] += out_grad[i * c + j];
                            }
                        }
                        accumulate(&mut grads, b.0, &db);
                    }
                }
                Op::Sigmoid(x) => {
                    let dx: Vec<f64> = out_grad
                        .iter()
                        .zip(&node.data)
                        .map(|(g, y)| g * y * (1.0 - y))
                        .collect();
                    accumulate(&mut grads, x.0, &dx);
                }
                Op::Tanh(x) => {
                    let dx: Vec<f64> = out_grad
                        .iter()
                        .zip(&node.data)
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect();
                    accumulate(&mut grads, x.0, &dx);
                }
                Op::Relu(x) => {
                    let dx: Vec<f64> = out_grad
                        .iter()
                        .zip(&nodes[x.0].data)
                        .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, x.0, &dx);
                }
                Op::Concat(a, b, axis) => {
                    let sa = &nodes[a.0].shape;
                    let sb = &nodes[b.0].shape;
                    let inner: usize = sa[axis + 1..].iter().product();
                    let outer: usize = sa[..*axis].iter().product();
                    let slab_a = sa[*axis] * inner;
                    let slab_b = sb[*axis] * inner;
                    let slab = slab_a + slab_b;
                    if nodes[a.0].requires_grad {
                        let mut da = vec![0.0; slab_a * outer];
                        for o in 0..outer {
                            da[o * slab_a..(o + 1) * slab_a]
                                .copy_from_slice(&out_grad[o * slab..o * slab + slab_a]);
                        }
                        accumulate(&mut grads, a.0, &da);
                    }
                    if nodes[b.0].requires_grad {
                        let mut db = vec![0.0; slab_b * outer];
                        for o in 0..outer {
                            db[o * slab_b..(o + 1) * slab_b]
                                .copy_from_slice(&out_grad[o * slab + slab_a..(o + 1) * slab]);
                        }
                        accumulate(&mut grads, b.0, &db);
                    }
                }
                Op::Softmax(x, axis) => {
                    let mut dx = vec![0.0; node.data.len()];
                    for_each_lane(&node.shape, *axis, |base, stride, len| {
                        let mut dot = 0.0;
                        for j in 0..len {
                            let i = base + j * stride;
                            dot += out_grad[i] * node.data[i];
                        }
                        for j in 0..len {
                            let i = base + j * stride;
                            dx[i] = node.data[i] * (out_grad[i] - dot);
                        }
                    });
                    accumulate(&mut grads, x.0, &dx);
                }
                Op::Row(x, index) => {
                    let c = node.shape[0];
                    let total = nodes[x.0].data.len();
                    let mut dx = vec![0.0; total];
                    dx[index * c..(index + 1) * c].copy_from_slice(&out_grad);
                    accumulate(&mut grads, x.0, &dx);
                }
                Op::StackRows(rows) => {
                    let width = node.shape[1];
                    for (r, &row) in rows.iter().enumerate() {
                        if nodes[row.0].requires_grad {
                            accumulate(&mut grads, row.0, &out_grad[r * width..(r + 1) * width]);
                        }
                    }
                }
                Op::Sum(x) => {
                    let dx = vec![out_grad[0]; nodes[x.0].data.len()];
                    accumulate(&mut grads, x.0, &dx);
                }
                Op::Reshape(x) => {
                    accumulate(&mut grads, x.0, &out_grad);
                }
                Op::CrossEntropyLogits(logits, label_positive) => {
                    let d = &nodes[logits.0].data;
                    let m = d[0].max(d[1]);
                    let e0 = (d[0] - m).exp();
                    let e1 = (d[1] - m).exp();
                    let total = e0 + e1;
                    let p0 = e0 / total;
                    let p1 = e1 / total;
                    let (t0, t1) = if *label_positive { (1.0, 0.0) } else { (0.0, 1.0) };
                    let g = out_grad[0];
                    accumulate(&mut grads, logits.0, &[g * (p0 - t0), g * (p1 - t1)]);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], idx: usize, delta: &[f64]) {
    match &mut grads[idx] {
        Some(g) => {
            for (gi, di) in g.iter_mut().zip(delta) {
                *gi += di;
            }
        }
        slot => *slot = Some(delta.to_vec()),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn mat_mat(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += aip * brow[j];
            }
        }
    }
    out
}

fn transpose_data(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

/// Visit every lane along `axis`: calls `f(base, stride, len)` so that the
/// lane's elements live at `base + j * stride` for `j < len`.
fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(usize, usize, usize)) {
    let len = shape[axis];
    let stride: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    for o in 0..outer {
        for i in 0..stride {
            f(o * len * stride + i, stride, len);
        }
    }
}
