//! Wengert-list reverse-mode differentiation over the operations the
//! cross-attention forward pass needs.
//!
//! All operations treat their operands as matrices (see
//! [`Tensor::matrix_dims`]); a vector is a single row.

use super::params::{Gradients, ParamId, ParameterStore};
use super::{gemm, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf(Option<ParamId>),
    MatMul {
        a: Var,
        b: Var,
        transpose_b: bool,
    },
    AddRowBias {
        x: Var,
        bias: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, T),
    LayerNorm {
        x: Var,
        gain: Option<Var>,
        bias: Option<Var>,
        normalized: Vec<T>,
        inv_std: Vec<T>,
    },
    Softmax {
        x: Var,
        scale: T,
    },
    Gather {
        x: Var,
        rows: Vec<usize>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    RowNorms(Var),
    Mean(Var),
    Sum(Var),
    Concat(Vec<Var>),
    Tanh(Var),
    CrossEntropy {
        x: Var,
        target: usize,
        probs: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

/// Records a forward computation so it can be differentiated in reverse.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradient of a scalar with respect to every tracked node of a tape.
#[derive(Debug)]
pub struct NodeGrads<T> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(usize, ParamId)>,
}

impl<T: Real> NodeGrads<T> {
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of the parameter leaves, summed per parameter.
    pub fn params(&self) -> Gradients<T> {
        let mut out = Gradients::default();
        for &(node, id) in &self.params {
            if let Some(g) = &self.grads[node] {
                out.push(id, g.clone());
            }
        }
        out
    }
}

fn shape_err(op: &'static str, left: &[usize], right: &[usize]) -> Error {
    Error::Dimension {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

fn axpy<T: Real>(y: &mut [T], alpha: T, x: &[T]) {
    for (a, b) in y.iter_mut().zip(x) {
        *a += alpha * *b;
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Untracked input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf(None), false)
    }

    /// Tracked input that is not a stored parameter.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf(None), true)
    }

    /// Copies a parameter onto the tape as a tracked leaf.
    pub fn param(&mut self, store: &ParameterStore<T>, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Leaf(Some(id)), true)
    }

    /// Copies a parameter as a constant (inference without gradients).
    pub fn frozen_param(&mut self, store: &ParameterStore<T>, id: ParamId) -> Var {
        self.constant(store.value(id).clone())
    }

    /// `a · b` for `a: m×k`, `b: k×n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.matrix_dims();
        let (br, bc) = bv.matrix_dims();
        let (kb, n) = if transpose_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(shape_err("matmul", av.shape(), bv.shape()));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, av.data(), false, bv.data(), transpose_b, T::zero(), &mut out);
        let value = Tensor::matrix(m, n, out)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::MatMul { a, b, transpose_b }, tracked))
    }

    /// `x · wᵀ + b` applied to every row of `x`; `w` is `n_out×n_in`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul_nt(x, w)?;
        match b {
            Some(b) => self.add_row_bias(y, b),
            None => Ok(y),
        }
    }

    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let (rows, cols) = xv.matrix_dims();
        if bv.len() != cols {
            return Err(shape_err("add_row_bias", xv.shape(), bv.shape()));
        }
        let mut data = xv.data().to_vec();
        for r in 0..rows {
            for (o, b) in data[r * cols..(r + 1) * cols].iter_mut().zip(bv.data()) {
                *o += *b;
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let tracked = self.tracked(x) || self.tracked(bias);
        Ok(self.push(value, Op::AddRowBias { x, bias }, tracked))
    }

    fn elementwise(&self, a: Var, b: Var, sign: T, op: &'static str) -> Result<Tensor<T>> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != bv.len() {
            return Err(shape_err(op, av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| *x + sign * *y).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.elementwise(a, b, T::one(), "add")?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Add(a, b), tracked))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.elementwise(a, b, -T::one(), "sub")?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Sub(a, b), tracked))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| *v * factor).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        let tracked = self.tracked(x);
        self.push(value, Op::Scale(x, factor), tracked)
    }

    /// Row-wise layer normalisation with population variance and optional
    /// affine terms.
    pub fn layer_norm(&mut self, x: Var, gain: Option<Var>, bias: Option<Var>, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.matrix_dims();
        for v in [gain, bias].into_iter().flatten() {
            if self.value(v).len() != cols {
                return Err(shape_err("layer_norm", xv.shape(), self.value(v).shape()));
            }
        }
        let eps = T::of(eps);
        let n = T::of(cols as f64);
        let mut normalized = Vec::with_capacity(rows * cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &xv.data()[r * cols..(r + 1) * cols];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            normalized.extend(row.iter().map(|v| (*v - mean) * inv));
        }
        let mut out = normalized.clone();
        if let Some(g) = gain {
            let g = self.value(g).data();
            for (i, o) in out.iter_mut().enumerate() {
                *o *= g[i % cols];
            }
        }
        if let Some(b) = bias {
            let b = self.value(b).data();
            for (i, o) in out.iter_mut().enumerate() {
                *o += b[i % cols];
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let tracked = self.tracked(x) || gain.is_some_and(|g| self.tracked(g)) || bias.is_some_and(|b| self.tracked(b));
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            tracked,
        ))
    }

    /// Row-wise `softmax(x / scale)` with max subtraction.
    pub fn softmax(&mut self, x: Var, scale: f64) -> Result<Var> {
        if scale.is_nan() || scale <= 0.0 {
            return Err(Error::Argument(format!("softmax scale must be > 0, got {scale}")));
        }
        let xv = self.value(x);
        let (rows, cols) = xv.matrix_dims();
        if cols == 0 {
            return Err(Error::Argument("softmax over an empty row".into()));
        }
        let s = T::of(scale);
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = &xv.data()[r * cols..(r + 1) * cols];
            let max = row.iter().fold(T::neg_infinity(), |m, v| m.max(*v / s));
            let start = out.len();
            out.extend(row.iter().map(|v| (*v / s - max).exp()));
            let total: T = out[start..].iter().copied().sum();
            out[start..].iter_mut().for_each(|v| *v /= total);
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let tracked = self.tracked(x);
        Ok(self.push(value, Op::Softmax { x, scale: s }, tracked))
    }

    /// Output row `i` is the concatenation of input rows
    /// `rows[i*group .. (i+1)*group]`.
    pub fn gather_rows(&mut self, x: Var, rows: Vec<usize>, group: usize) -> Result<Var> {
        let xv = self.value(x);
        let (n_rows, cols) = xv.matrix_dims();
        if group == 0 || !rows.len().is_multiple_of(group) {
            return Err(Error::Argument(format!(
                "gather: {} indices do not form groups of {group}",
                rows.len()
            )));
        }
        if let Some(bad) = rows.iter().find(|r| **r >= n_rows) {
            return Err(Error::Argument(format!(
                "gather: row {bad} out of range for {n_rows} rows"
            )));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in &rows {
            data.extend_from_slice(&xv.data()[r * cols..(r + 1) * cols]);
        }
        let value = Tensor::matrix(rows.len() / group, group * cols, data)?;
        let tracked = self.tracked(x);
        Ok(self.push(value, Op::Gather { x, rows }, tracked))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.matrix_dims();
        if start + len > rows {
            return Err(Error::Argument(format!(
                "slice rows {start}..{} of {rows}",
                start + len
            )));
        }
        let data = xv.data()[start * cols..(start + len) * cols].to_vec();
        let value = Tensor::matrix(len, cols, data)?;
        let tracked = self.tracked(x);
        Ok(self.push(value, Op::SliceRows { x, start }, tracked))
    }

    /// Euclidean norm of every row, as a vector.
    pub fn row_norms(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.matrix_dims();
        let data = (0..rows)
            .map(|r| {
                xv.data()[r * cols..(r + 1) * cols]
                    .iter()
                    .map(|v| *v * *v)
                    .sum::<T>()
                    .sqrt()
            })
            .collect();
        let tracked = self.tracked(x);
        self.push(Tensor::vector(data), Op::RowNorms(x), tracked)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.is_empty() {
            return Err(Error::Argument("mean of an empty tensor".into()));
        }
        let m = xv.data().iter().copied().sum::<T>() / T::of(xv.len() as f64);
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::scalar(m), Op::Mean(x), tracked))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let tracked = self.tracked(x);
        self.push(Tensor::scalar(s), Op::Sum(x), tracked)
    }

    /// Flattens and concatenates into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let data: Vec<T> = parts
            .iter()
            .flat_map(|p| self.value(*p).data().iter().copied())
            .collect();
        let tracked = parts.iter().any(|p| self.tracked(*p));
        self.push(Tensor::vector(data), Op::Concat(parts.to_vec()), tracked)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v.tanh()).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        let tracked = self.tracked(x);
        self.push(value, Op::Tanh(x), tracked)
    }

    /// `-log softmax(-distances)[target]`: negative distances are the logits.
    pub fn cross_entropy_from_distances(&mut self, distances: Var, target: usize) -> Result<Var> {
        let dv = self.value(distances);
        let n = dv.len();
        if n < 2 {
            return Err(Error::Argument(format!("cross-entropy needs >= 2 classes, got {n}")));
        }
        if target >= n {
            return Err(Error::Argument(format!("class {target} out of range for {n} classes")));
        }
        let max = dv.data().iter().fold(T::neg_infinity(), |m, d| m.max(-*d));
        let exps: Vec<T> = dv.data().iter().map(|d| (-*d - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        let probs: Vec<T> = exps.iter().map(|e| *e / total).collect();
        let loss = total.ln() + max + dv.data()[target];
        let tracked = self.tracked(distances);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                x: distances,
                target,
                probs,
            },
            tracked,
        ))
    }

    /// Reverse sweep from a scalar.
    pub fn gradients(&self, loss: Var) -> Result<NodeGrads<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Argument(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut params = Vec::new();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            if let Op::Leaf(Some(id)) = node.op {
                params.push((i, id));
            }
            grads[i] = Some(g);
        }
        Ok(NodeGrads { grads, params })
    }

    /// Accumulates d(loss)/d(parameter) into `store` for every parameter
    /// that reaches `loss`.
    pub fn backward(&self, loss: Var, store: &mut ParameterStore<T>) -> Result<()> {
        let grads = self.gradients(loss)?;
        store.accumulate(&grads.params());
        Ok(())
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        // Lazily allocated gradient slot for a tracked input.
        macro_rules! slot {
            ($v:expr) => {{
                let v: Var = $v;
                if nodes[v.0].tracked {
                    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]))
                } else {
                    None
                }
            }};
        }

        match &node.op {
            Op::Leaf(_) => {}
            Op::MatMul { a, b, transpose_b } => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k) = av.matrix_dims();
                let n = g.len() / m.max(1);
                if let Some(ga) = slot!(*a) {
                    // dA = dC · op(B)ᵀ
                    gemm(m, n, k, g, false, bv.data(), !transpose_b, T::one(), ga);
                }
                if let Some(gb) = slot!(*b) {
                    if *transpose_b {
                        // B is n×k: dB = dCᵀ · A
                        gemm(n, m, k, g, true, av.data(), false, T::one(), gb);
                    } else {
                        // B is k×n: dB = Aᵀ · dC
                        gemm(k, m, n, av.data(), true, g, false, T::one(), gb);
                    }
                }
            }
            Op::AddRowBias { x, bias } => {
                if let Some(gx) = slot!(*x) {
                    axpy(gx, T::one(), g);
                }
                let cols = nodes[bias.0].value.len();
                if let Some(gb) = slot!(*bias) {
                    for row in g.chunks_exact(cols) {
                        axpy(gb, T::one(), row);
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = slot!(*a) {
                    axpy(ga, T::one(), g);
                }
                if let Some(gb) = slot!(*b) {
                    axpy(gb, T::one(), g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = slot!(*a) {
                    axpy(ga, T::one(), g);
                }
                if let Some(gb) = slot!(*b) {
                    axpy(gb, -T::one(), g);
                }
            }
            Op::Scale(x, f) => {
                if let Some(gx) = slot!(*x) {
                    axpy(gx, *f, g);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let cols = nodes[x.0].value.cols();
                if let Some(gain) = gain {
                    if let Some(gg) = slot!(*gain) {
                        for (row_g, row_n) in g.chunks_exact(cols).zip(normalized.chunks_exact(cols)) {
                            for j in 0..cols {
                                gg[j] += row_g[j] * row_n[j];
                            }
                        }
                    }
                }
                if let Some(bias) = bias {
                    if let Some(gb) = slot!(*bias) {
                        for row in g.chunks_exact(cols) {
                            axpy(gb, T::one(), row);
                        }
                    }
                }
                let gain_vals = gain.map(|v| nodes[v.0].value.data().to_vec());
                if let Some(gx) = slot!(*x) {
                    let n = T::of(cols as f64);
                    let mut dn = vec![T::zero(); cols];
                    for (r, inv) in inv_std.iter().enumerate() {
                        let row_g = &g[r * cols..(r + 1) * cols];
                        let row_n = &normalized[r * cols..(r + 1) * cols];
                        for j in 0..cols {
                            dn[j] = match &gain_vals {
                                Some(gv) => row_g[j] * gv[j],
                                None => row_g[j],
                            };
                        }
                        let mean_dn = dn.iter().copied().sum::<T>() / n;
                        let mean_dn_n = dn.iter().zip(row_n).map(|(a, b)| *a * *b).sum::<T>() / n;
                        let out = &mut gx[r * cols..(r + 1) * cols];
                        for j in 0..cols {
                            out[j] += *inv * (dn[j] - mean_dn - row_n[j] * mean_dn_n);
                        }
                    }
                }
            }
            Op::Softmax { x, scale } => {
                if let Some(gx) = slot!(*x) {
                    let y = node.value.data();
                    let cols = node.value.cols();
                    for (r, (row_y, row_g)) in y.chunks_exact(cols).zip(g.chunks_exact(cols)).enumerate() {
                        let dot = row_y.iter().zip(row_g).map(|(a, b)| *a * *b).sum::<T>();
                        let out = &mut gx[r * cols..(r + 1) * cols];
                        for j in 0..cols {
                            out[j] += row_y[j] * (row_g[j] - dot) / *scale;
                        }
                    }
                }
            }
            Op::Gather { x, rows, .. } => {
                if let Some(gx) = slot!(*x) {
                    let cols = nodes[x.0].value.cols();
                    for (src, chunk) in rows.iter().zip(g.chunks_exact(cols)) {
                        axpy(&mut gx[src * cols..(src + 1) * cols], T::one(), chunk);
                    }
                }
            }
            Op::SliceRows { x, start } => {
                if let Some(gx) = slot!(*x) {
                    let cols = nodes[x.0].value.cols();
                    axpy(&mut gx[start * cols..start * cols + g.len()], T::one(), g);
                }
            }
            Op::RowNorms(x) => {
                if let Some(gx) = slot!(*x) {
                    let xv = &nodes[x.0].value;
                    let cols = xv.cols();
                    for (r, (gn, norm)) in g.iter().zip(node.value.data()).enumerate() {
                        if *norm > T::zero() {
                            let f = *gn / *norm;
                            axpy(
                                &mut gx[r * cols..(r + 1) * cols],
                                f,
                                &xv.data()[r * cols..(r + 1) * cols],
                            );
                        }
                    }
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = slot!(*x) {
                    let f = g[0] / T::of(gx.len() as f64);
                    gx.iter_mut().for_each(|v| *v += f);
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = slot!(*x) {
                    let f = g[0];
                    gx.iter_mut().for_each(|v| *v += f);
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = nodes[p.0].value.len();
                    if let Some(gp) = slot!(*p) {
                        axpy(gp, T::one(), &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::Tanh(x) => {
                if let Some(gx) = slot!(*x) {
                    for ((o, y), gi) in gx.iter_mut().zip(node.value.data()).zip(g) {
                        *o += *gi * (T::one() - *y * *y);
                    }
                }
            }
            Op::CrossEntropy { x, target, probs } => {
                if let Some(gx) = slot!(*x) {
                    for (j, p) in probs.iter().enumerate() {
                        let onehot = if j == *target { T::one() } else { T::zero() };
                        gx[j] += g[0] * (onehot - *p);
                    }
                }
            }
        }
    }
}
