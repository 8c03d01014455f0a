//! Reverse-mode automatic differentiation over row-major `f64` matrices.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value, and
//! [`Graph::backward`] walks the tape in reverse accumulating gradients.

use crate::ctc::{ctc_loss, CtcPosterior};
use crate::error::Result;

use super::params::ParamStore;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer does not match {rows}×{cols}");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let data = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `C = op(A)·op(B) + beta·C` with `op(A)` m×k and `op(B)` k×n; `ta`/`tb` read the stored
/// operand transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the strides above address exactly the m×k, k×n and m×n elements of the
    // given slices, whose lengths are checked in debug builds and by every caller.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Sentinel gather index that reads as zero.
pub const ZERO_INDEX: usize = usize::MAX;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Swish(Var),
    Sigmoid(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    Gather { src: Var, index: Vec<usize> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    GroupMean { x: Var, group: usize },
    Sum(Var),
    DepthwiseConv { x: Var, w: Var },
    Ctc { logprobs: Var, grad: Vec<f64> },
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.len(), 1, "not a scalar");
        m.data[0]
    }

    fn push(&mut self, value: Matrix, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Leaf => false,
            Op::Param(_) => true,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    pub fn param(&mut self, store: &ParamStore, name: &str) -> Var {
        let idx = store.index_of(name);
        self.push(store.value(idx).clone(), Op::Param(idx), &[])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(am.cols, bm.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(am.rows, bm.cols);
        gemm(am.rows, am.cols, bm.cols, &am.data, false, &bm.data, false, 0.0, &mut out.data);
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// `a·bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(am.cols, bm.cols, "matmul_t shape mismatch");
        let mut out = Matrix::zeros(am.rows, bm.rows);
        gemm(am.rows, am.cols, bm.rows, &am.data, false, &bm.data, true, 0.0, &mut out.data);
        self.push(out, Op::MatMulT(a, b), &[a, b])
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!((am.rows, am.cols), (bm.rows, bm.cols), "elementwise shape mismatch");
        let data = am.data.iter().zip(&bm.data).map(|(&x, &y)| f(x, y)).collect();
        Matrix::new(am.rows, am.cols, data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Matrix {
        let am = self.value(a);
        Matrix::new(am.rows, am.cols, am.data.iter().map(|&x| f(x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x + y);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    /// Adds the 1×n row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(bias));
        assert_eq!((bm.rows, bm.cols), (1, am.cols), "bias shape mismatch");
        let mut out = am.clone();
        for row in out.data.chunks_mut(am.cols.max(1)) {
            for (o, b) in row.iter_mut().zip(&bm.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, bias), &[a, bias])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x * y);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.map(a, |x| x * s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    pub fn swish(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| x * sigmoid(x));
        self.push(out, Op::Swish(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map(a, sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    /// Row-wise normalization followed by the 1×n affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xm = self.value(x);
        let (rows, cols) = (xm.rows, xm.cols);
        let (g, b) = (&self.value(gamma).data, &self.value(beta).data);
        assert_eq!((g.len(), b.len()), (cols, cols), "layer norm affine shape mismatch");
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let row = xm.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat[r * cols + c] = h;
                out.data[r * cols + c] = h * g[c] + b[c];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    /// Row-wise softmax. Entries of −∞ (masked) get probability 0.
    pub fn softmax(&mut self, a: Var) -> Var {
        let am = self.value(a);
        let mut out = am.clone();
        for row in out.data.chunks_mut(am.cols.max(1)) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        self.push(out, Op::Softmax(a), &[a])
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let am = self.value(a);
        let out = Matrix::new(am.rows, am.cols, crate::math::log_softmax_rows(&am.data, am.cols));
        self.push(out, Op::LogSoftmax(a), &[a])
    }

    /// `out.data[k] = src.data[index[k]]`, or 0 where `index[k] == ZERO_INDEX`.
    pub fn gather(&mut self, src: Var, index: Vec<usize>, rows: usize, cols: usize) -> Var {
        assert_eq!(index.len(), rows * cols, "gather index does not match its shape");
        let s = &self.value(src).data;
        let data = index
            .iter()
            .map(|&i| if i == ZERO_INDEX { 0.0 } else { s[i] })
            .collect();
        self.push(Matrix::new(rows, cols, data), Op::Gather { src, index }, &[src])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xm = self.value(x);
        assert!(start + len <= xm.cols, "column slice out of range");
        let mut data = Vec::with_capacity(xm.rows * len);
        for r in 0..xm.rows {
            data.extend_from_slice(&xm.row(r)[start..start + len]);
        }
        self.push(Matrix::new(xm.rows, len, data), Op::SliceCols { x, start }, &[x])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let pm = self.value(p);
                assert_eq!(pm.rows, rows, "concat row mismatch");
                data.extend_from_slice(pm.row(r));
            }
        }
        self.push(Matrix::new(rows, cols, data), Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Averages each run of `group` consecutive rows.
    pub fn group_mean(&mut self, x: Var, group: usize) -> Var {
        let xm = self.value(x);
        assert!(group > 0 && xm.rows % group == 0, "rows not divisible by group");
        let rows = xm.rows / group;
        let mut out = Matrix::zeros(rows, xm.cols);
        for r in 0..xm.rows {
            let o = r / group;
            for c in 0..xm.cols {
                out.data[o * xm.cols + c] += xm.data[r * xm.cols + c];
            }
        }
        out.data.iter_mut().for_each(|v| *v /= group as f64);
        self.push(out, Op::GroupMean { x, group }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        self.push(Matrix::new(1, 1, vec![s]), Op::Sum(x), &[x])
    }

    /// Per-column ("depthwise") convolution over rows with kernel `w` (K×C), zero padding
    /// of K/2 on both sides.
    pub fn depthwise_conv(&mut self, x: Var, w: Var) -> Var {
        let (xm, wm) = (self.value(x), self.value(w));
        assert_eq!(wm.cols, xm.cols, "depthwise kernel channel mismatch");
        let (t_len, c_len, k_len) = (xm.rows, xm.cols, wm.rows);
        let half = k_len / 2;
        let mut out = Matrix::zeros(t_len, c_len);
        for t in 0..t_len {
            for k in 0..k_len {
                let Some(src) = (t + k).checked_sub(half).filter(|&s| s < t_len) else {
                    continue;
                };
                for c in 0..c_len {
                    out.data[t * c_len + c] += wm.data[k * c_len + c] * xm.data[src * c_len + c];
                }
            }
        }
        self.push(out, Op::DepthwiseConv { x, w }, &[x, w])
    }

    /// CTC negative log-likelihood of `target` under the row-wise log-probabilities
    /// `logprobs`, as a 1×1 node. Unreachable targets give +∞.
    pub fn ctc_nll(&mut self, logprobs: Var, target: &[usize], blank: usize) -> Result<Var> {
        let m = self.value(logprobs);
        let post = CtcPosterior::from_log_probs(m.rows, m.cols, m.data.clone())?;
        let loss = ctc_loss(&post, target, blank)?;
        Ok(self.push(
            Matrix::new(1, 1, vec![loss.nll]),
            Op::Ctc {
                logprobs,
                grad: loss.grad,
            },
            &[logprobs],
        ))
    }

    /// Gradients of the scalar `loss` w.r.t. every node, indexed by node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(node, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                let n = self.nodes[v.0].value.len();
                grads[v.0].get_or_insert_with(|| vec![0.0; n])
            }};
        }
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            &Op::MatMul(a, b) => {
                let (am, bm) = (val(a), val(b));
                if wants(a) {
                    gemm(am.rows, y.cols, am.cols, dy, false, &bm.data, true, 1.0, acc!(a));
                }
                if wants(b) {
                    gemm(am.cols, am.rows, y.cols, &am.data, true, dy, false, 1.0, acc!(b));
                }
            }
            &Op::MatMulT(a, b) => {
                let (am, bm) = (val(a), val(b));
                if wants(a) {
                    gemm(am.rows, bm.rows, am.cols, dy, false, &bm.data, false, 1.0, acc!(a));
                }
                if wants(b) {
                    gemm(bm.rows, am.rows, am.cols, dy, true, &am.data, false, 1.0, acc!(b));
                }
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    if wants(v) {
                        acc!(v).iter_mut().zip(dy).for_each(|(g, d)| *g += d);
                    }
                }
            }
            &Op::AddRow(a, bias) => {
                if wants(a) {
                    acc!(a).iter_mut().zip(dy).for_each(|(g, d)| *g += d);
                }
                if wants(bias) {
                    let cols = y.cols;
                    let gb = acc!(bias);
                    for row in dy.chunks(cols.max(1)) {
                        gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
                    }
                }
            }
            &Op::Mul(a, b) => {
                if wants(a) {
                    let bv = &val(b).data;
                    acc!(a).iter_mut().zip(dy.iter().zip(bv)).for_each(|(g, (d, o))| *g += d * o);
                }
                if wants(b) {
                    let av = &val(a).data;
                    acc!(b).iter_mut().zip(dy.iter().zip(av)).for_each(|(g, (d, o))| *g += d * o);
                }
            }
            &Op::Scale(a, s) => {
                acc!(a).iter_mut().zip(dy).for_each(|(g, d)| *g += d * s);
            }
            &Op::Swish(a) => {
                let x = &val(a).data;
                acc!(a).iter_mut().zip(dy.iter().zip(x)).for_each(|(g, (d, &x))| {
                    let s = sigmoid(x);
                    *g += d * (s + x * s * (1.0 - s));
                });
            }
            &Op::Sigmoid(a) => {
                acc!(a).iter_mut().zip(dy.iter().zip(&y.data)).for_each(|(g, (d, s))| {
                    *g += d * s * (1.0 - s);
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let cols = y.cols;
                let gv = &val(*gamma).data;
                if wants(*gamma) {
                    let gg = acc!(*gamma);
                    for (k, d) in dy.iter().enumerate() {
                        gg[k % cols] += d * xhat[k];
                    }
                }
                if wants(*beta) {
                    let gb = acc!(*beta);
                    for (k, d) in dy.iter().enumerate() {
                        gb[k % cols] += d;
                    }
                }
                if wants(*x) {
                    let gx = acc!(*x);
                    let n = cols as f64;
                    for r in 0..y.rows {
                        let span = r * cols..(r + 1) * cols;
                        let dh: Vec<f64> = dy[span.clone()].iter().zip(gv).map(|(d, g)| d * g).collect();
                        let h = &xhat[span.clone()];
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h: f64 = dh.iter().zip(h).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            gx[r * cols + c] += inv_std[r] / n * (n * dh[c] - sum_dh - h[c] * sum_dh_h);
                        }
                    }
                }
            }
            &Op::Softmax(a) => {
                let cols = y.cols.max(1);
                let ga = acc!(a);
                for ((gr, dr), yr) in ga.chunks_mut(cols).zip(dy.chunks(cols)).zip(y.data.chunks(cols)) {
                    let dot: f64 = dr.iter().zip(yr).map(|(d, p)| d * p).sum();
                    for ((g, d), p) in gr.iter_mut().zip(dr).zip(yr) {
                        *g += p * (d - dot);
                    }
                }
            }
            &Op::LogSoftmax(a) => {
                let cols = y.cols.max(1);
                let ga = acc!(a);
                for ((gr, dr), yr) in ga.chunks_mut(cols).zip(dy.chunks(cols)).zip(y.data.chunks(cols)) {
                    let sum: f64 = dr.iter().sum();
                    for ((g, d), lp) in gr.iter_mut().zip(dr).zip(yr) {
                        *g += d - lp.exp() * sum;
                    }
                }
            }
            Op::Gather { src, index } => {
                let gs = acc!(*src);
                for (&i, d) in index.iter().zip(dy) {
                    if i != ZERO_INDEX {
                        gs[i] += d;
                    }
                }
            }
            &Op::SliceCols { x, start } => {
                let xc = val(x).cols;
                let len = y.cols;
                let gx = acc!(x);
                for r in 0..y.rows {
                    for c in 0..len {
                        gx[r * xc + start + c] += dy[r * len + c];
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = val(p).cols;
                    if wants(p) {
                        let gp = acc!(p);
                        for r in 0..y.rows {
                            for c in 0..pc {
                                gp[r * pc + c] += dy[r * y.cols + offset + c];
                            }
                        }
                    }
                    offset += pc;
                }
            }
            &Op::GroupMean { x, group } => {
                let cols = y.cols;
                let gx = acc!(x);
                let inv = 1.0 / group as f64;
                for (r, row) in gx.chunks_mut(cols.max(1)).enumerate() {
                    let o = r / group;
                    for (c, g) in row.iter_mut().enumerate() {
                        *g += dy[o * cols + c] * inv;
                    }
                }
            }
            &Op::Sum(x) => {
                let d = dy[0];
                acc!(x).iter_mut().for_each(|g| *g += d);
            }
            &Op::DepthwiseConv { x, w } => {
                let (xm, wm) = (val(x), val(w));
                let (t_len, c_len, k_len) = (xm.rows, xm.cols, wm.rows);
                let half = k_len / 2;
                let taps = |t: usize, k: usize| (t + k).checked_sub(half).filter(|&s| s < t_len);
                if wants(x) {
                    let gx = acc!(x);
                    for t in 0..t_len {
                        for k in 0..k_len {
                            if let Some(src) = taps(t, k) {
                                for c in 0..c_len {
                                    gx[src * c_len + c] += wm.data[k * c_len + c] * dy[t * c_len + c];
                                }
                            }
                        }
                    }
                }
                if wants(w) {
                    let gw = acc!(w);
                    for t in 0..t_len {
                        for k in 0..k_len {
                            if let Some(src) = taps(t, k) {
                                for c in 0..c_len {
                                    gw[k * c_len + c] += xm.data[src * c_len + c] * dy[t * c_len + c];
                                }
                            }
                        }
                    }
                }
            }
            Op::Ctc { logprobs, grad } => {
                let d = dy[0];
                acc!(*logprobs).iter_mut().zip(grad).for_each(|(g, v)| *g += d * v);
            }
        }
    }
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

pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn of(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

impl Graph {
    /// Sums the gradients of every parameter node into one buffer per stored parameter.
    pub fn param_grads(&self, grads: &Gradients, store: &ParamStore) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = (0..store.len()).map(|i| vec![0.0; store.value(i).len()]).collect();
        for (node, g) in self.nodes.iter().zip(&grads.grads) {
            if let (Op::Param(idx), Some(g)) = (&node.op, g) {
                out[*idx].iter_mut().zip(g).for_each(|(o, v)| *o += v);
            }
        }
        out
    }
}
