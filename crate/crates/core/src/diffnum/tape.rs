//! Reverse-mode gradient tape.
//!
//! Every primitive evaluates eagerly and appends one node. `backward` walks the
//! nodes in exact reverse order, accumulating gradients into the inputs of each
//! recorded operation.

use super::kernels::{conv_backward, conv_forward, convt_backward, convt_forward, gemm, View, Window};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Exp(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Matmul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Affine { x: Var, w: Var, b: Var },
    ChannelBias { x: Var, b: Var },
    Conv1d { x: Var, w: Var, bias: Option<Var>, win: Window, out_ch: usize },
    ConvTranspose1d { x: Var, w: Var, bias: Option<Var>, win: Window, in_ch: usize },
    Softmax { x: Var, tau: f64 },
    SqDist { z: Var, e: Var },
    GatherRows { table: Var, idx: Vec<usize> },
    StraightThrough(Var),
    Mse(Var, Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Exp(_) => "exp",
            Op::Reshape(_) => "reshape",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Matmul { .. } => "matmul",
            Op::Affine { .. } => "affine",
            Op::ChannelBias { .. } => "channel_bias",
            Op::Conv1d { .. } => "conv1d",
            Op::ConvTranspose1d { .. } => "conv_transpose1d",
            Op::Softmax { .. } => "softmax_temp",
            Op::SqDist { .. } => "sq_dist",
            Op::GatherRows { .. } => "gather_rows",
            Op::StraightThrough(_) => "straight_through",
            Op::Mse(..) => "mse_loss",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of primitive applications.
pub struct Tape {
    nodes: Vec<Node>,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// Finite-value checking defaults to on in debug builds.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Smallest `|x|` over all inputs to ReLU nodes, i.e. how far the recorded
    /// point is from the nearest kink. `None` when the tape has no ReLU.
    pub fn relu_margin(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(self.value(a).data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))),
                _ => None,
            })
            .reduce(f64::min)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Stop-gradient: a constant copy of `v`'s current value.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(op.name(), a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(t, op, &[a, b])
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let ta = self.value(a);
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| f(*x)).collect())?;
        self.push(t, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.map(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape).map_err(|_| {
            Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape(a)),
            )
        })?;
        self.push(t, Op::Reshape(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// `a [m, k] * b [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("cannot multiply {sa:?} by {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut c = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            View::rows(self.value(a).data(), k),
            View::rows(self.value(b).data(), n),
            0.0,
            &mut c,
        );
        self.push(Tensor::new(vec![m, n], c)?, Op::Matmul { a, b, m, k, n }, &[a, b])
    }

    /// `a [m, n] * x [n]`.
    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 1 {
            return Err(Error::shape("matvec", format!("vector operand has shape {sx:?}")));
        }
        let col = self.reshape(x, &[sx[0], 1])?;
        let y = self.matmul(a, col)?;
        let m = self.shape(y)[0];
        self.reshape(y, &[m])
    }

    /// Fully connected layer: `x [n, in] * w[out, in]^T + b [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] {
            return Err(Error::shape(
                "affine",
                format!("input {sx:?} does not match weight {sw:?} (in features)"),
            ));
        }
        if sb != [sw[0]] {
            return Err(Error::shape("affine", format!("bias {sb:?} for {} outputs", sw[0])));
        }
        let (n, fin, fout) = (sx[0], sx[1], sw[0]);
        let mut y = vec![0.0; n * fout];
        for row in y.chunks_exact_mut(fout) {
            row.copy_from_slice(self.value(b).data());
        }
        gemm(
            n,
            fin,
            fout,
            View::rows(self.value(x).data(), fin),
            View::t(self.value(w).data(), fin),
            1.0,
            &mut y,
        );
        self.push(Tensor::new(vec![n, fout], y)?, Op::Affine { x, w, b }, &[x, w, b])
    }

    /// Adds `b[c]` to every position of channel `c` in `x [n, c, l]`.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 || self.shape(b) != [sx[1]] {
            return Err(Error::shape(
                "channel_bias",
                format!("bias {:?} for input {sx:?}", self.shape(b)),
            ));
        }
        let (c, l) = (sx[1], sx[2]);
        let bias = self.value(b).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bias[(i / l) % c])
            .collect();
        self.push(Tensor::new(sx, data)?, Op::ChannelBias { x, b }, &[x, b])
    }

    fn batch_view(&self, op: &'static str, x: Var) -> Result<(usize, usize, usize, bool)> {
        match *self.shape(x) {
            [c, l] => Ok((1, c, l, true)),
            [n, c, l] => Ok((n, c, l, false)),
            ref s => Err(Error::shape(op, format!("input must be [C, L] or [N, C, L], got {s:?}"))),
        }
    }

    /// Cross-correlation with zero padding. `x [C_in, L]` or `[N, C_in, L]`,
    /// `w [C_out, C_in, K]`.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        self.conv1d_bias(x, w, None, stride, padding)
    }

    /// [`Tape::conv1d`] followed by a per-output-channel bias `[C_out]`, in one node.
    pub fn conv1d_bias(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (n, cin, len, unbatched) = self.batch_view("conv1d", x)?;
        let sw = self.shape(w).to_vec();
        if sw.len() != 3 {
            return Err(Error::shape("conv1d", format!("weight must be [C_out, C_in, K], got {sw:?}")));
        }
        if sw[1] != cin {
            return Err(Error::shape(
                "conv1d",
                format!("input channels {cin} but weight expects C_in = {}", sw[1]),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv1d: stride must be >= 1".into()));
        }
        let (cout, taps) = (sw[0], sw[2]);
        if taps > len + 2 * padding {
            return Err(Error::shape(
                "conv1d",
                format!("kernel size K = {taps} exceeds padded length {}", len + 2 * padding),
            ));
        }
        let lout = (len + 2 * padding - taps) / stride + 1;
        let win = Window {
            batch: n,
            channels: cin,
            long: len,
            short: lout,
            taps,
            stride,
            padding,
        };
        let mut data = conv_forward(&win, self.value(x).data(), self.value(w).data(), cout);
        self.apply_bias("conv1d", bias, cout, lout, &mut data)?;
        let shape = if unbatched { vec![cout, lout] } else { vec![n, cout, lout] };
        let inputs: Vec<Var> = [x, w].into_iter().chain(bias).collect();
        self.push(
            Tensor::new(shape, data)?,
            Op::Conv1d { x, w, bias, win, out_ch: cout },
            &inputs,
        )
    }

    /// Transposed convolution (adjoint of [`Tape::conv1d`] in its input).
    /// `x [N, C_in, L]`, `w [C_in, C_out, K]`, output length
    /// `(L - 1) * stride - 2 * padding + K`.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        self.conv_transpose1d_bias(x, w, None, stride, padding)
    }

    /// [`Tape::conv_transpose1d`] followed by a per-output-channel bias, in one node.
    pub fn conv_transpose1d_bias(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (n, cin, len, unbatched) = self.batch_view("conv_transpose1d", x)?;
        let sw = self.shape(w).to_vec();
        if sw.len() != 3 || sw[0] != cin {
            return Err(Error::shape(
                "conv_transpose1d",
                format!("weight {sw:?} does not match input channels C_in = {cin}"),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv_transpose1d: stride must be >= 1".into()));
        }
        let (cout, taps) = (sw[1], sw[2]);
        let full = (len - 1) * stride + taps;
        if full <= 2 * padding {
            return Err(Error::shape("conv_transpose1d", "padding leaves an empty output"));
        }
        let lout = full - 2 * padding;
        let win = Window {
            batch: n,
            channels: cout,
            long: lout,
            short: len,
            taps,
            stride,
            padding,
        };
        let mut data = convt_forward(&win, self.value(x).data(), self.value(w).data(), cin);
        self.apply_bias("conv_transpose1d", bias, cout, lout, &mut data)?;
        let shape = if unbatched { vec![cout, lout] } else { vec![n, cout, lout] };
        let inputs: Vec<Var> = [x, w].into_iter().chain(bias).collect();
        self.push(
            Tensor::new(shape, data)?,
            Op::ConvTranspose1d { x, w, bias, win, in_ch: cin },
            &inputs,
        )
    }

    fn apply_bias(&self, op: &'static str, bias: Option<Var>, c: usize, l: usize, data: &mut [f64]) -> Result<()> {
        let Some(b) = bias else { return Ok(()) };
        if self.shape(b) != [c] {
            return Err(Error::shape(op, format!("bias {:?} for {c} output channels", self.shape(b))));
        }
        let bv = self.value(b).data();
        for (j, row) in data.chunks_exact_mut(l).enumerate() {
            let v = bv[j % c];
            row.iter_mut().for_each(|x| *x += v);
        }
        Ok(())
    }

    /// Softmax of `x / tau` along the last axis, with max subtraction.
    pub fn softmax_temp(&mut self, x: Var, tau: f64) -> Result<Var> {
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument(format!("softmax temperature must be > 0, got {tau}")));
        }
        let t = self.value(x);
        let k = *t.shape().last().unwrap();
        let mut out = t.data().to_vec();
        for row in out.chunks_exact_mut(k) {
            softmax_row(row, tau);
        }
        let t = Tensor::new(t.shape().to_vec(), out)?;
        self.push(t, Op::Softmax { x, tau }, &[x])
    }

    /// Squared Euclidean distance from every row of `z [n, d]` to every row of
    /// `e [k, d]`, giving `[n, k]`.
    pub fn sq_dist(&mut self, z: Var, e: Var) -> Result<Var> {
        let (sz, se) = (self.shape(z), self.shape(e));
        if sz.len() != 2 || se.len() != 2 || sz[1] != se[1] {
            return Err(Error::shape("sq_dist", format!("rows {sz:?} vs codebook {se:?}")));
        }
        let (n, d, k) = (sz[0], sz[1], se[0]);
        let (tz, te) = (self.value(z).data(), self.value(e).data());
        let mut out = vec![0.0; n * k];
        for i in 0..n {
            let zi = &tz[i * d..][..d];
            for j in 0..k {
                let ej = &te[j * d..][..d];
                out[i * k + j] = zi.iter().zip(ej).map(|(a, b)| (a - b) * (a - b)).sum();
            }
        }
        self.push(Tensor::new(vec![n, k], out)?, Op::SqDist { z, e }, &[z, e])
    }

    /// Rows `table[idx[i]]`, giving `[idx.len(), d]`.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let st = self.shape(table);
        if st.len() != 2 {
            return Err(Error::shape("gather_rows", format!("table must be 2-D, got {st:?}")));
        }
        let (k, d) = (st[0], st[1]);
        if let Some(bad) = idx.iter().find(|&&i| i >= k) {
            return Err(Error::shape("gather_rows", format!("index {bad} out of {k} rows")));
        }
        if idx.is_empty() {
            return Err(Error::shape("gather_rows", "no rows requested"));
        }
        let t = self.value(table).data();
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            out.extend_from_slice(&t[i * d..][..d]);
        }
        self.push(
            Tensor::new(vec![idx.len(), d], out)?,
            Op::GatherRows { table, idx: idx.to_vec() },
            &[table],
        )
    }

    /// Forward value `value`, backward identity into `x`.
    pub fn straight_through(&mut self, x: Var, value: Tensor) -> Result<Var> {
        if value.shape() != self.shape(x) {
            return Err(Error::shape(
                "straight_through",
                format!("{:?} vs {:?}", value.shape(), self.shape(x)),
            ));
        }
        self.push(value, Op::StraightThrough(x), &[x])
    }

    /// Mean of `(a - b)^2` over all elements.
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse_loss", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let s: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let v = s / ta.numel() as f64;
        self.push(Tensor::scalar(v), Op::Mse(a, b), &[a, b])
    }

    /// Gradients of `loss` for every leaf that requires them.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.run_backward(loss, false)
    }

    /// Like [`Tape::backward`] but keeps gradients of intermediate values too.
    pub fn backward_retain(&self, loss: Var) -> Result<Gradients> {
        self.run_backward(loss, true)
    }

    fn run_backward(&self, loss: Var, retain: bool) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            let kept = retain.then(|| g.clone());
            self.backward_op(i, g, &mut grads)?;
            if retain {
                grads[i] = kept;
            }
        }
        let mut out: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if i < grads.len() {
                out[i] = grads[i].take();
            }
            if out[i].is_none() && node.requires_grad && matches!(node.op, Op::Leaf) {
                out[i] = Some(vec![0.0; node.value.numel()]);
            }
        }
        Ok(Gradients { grads: out })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_op(&self, i: usize, owned: Vec<f64>, grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[i];
        let g = owned.as_slice();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *b, |d| axpy(d, g, 1.0));
                self.pass(grads, *a, owned, |_, v| v);
            }
            Op::Sub(a, b) => {
                self.acc(grads, *b, |d| axpy(d, g, -1.0));
                self.pass(grads, *a, owned, |_, v| v);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |d| {
                    d.iter_mut().zip(g).zip(vb).for_each(|((d, g), y)| *d += g * y)
                });
                self.acc(grads, *b, |d| {
                    d.iter_mut().zip(g).zip(va).for_each(|((d, g), x)| *d += g * x)
                });
            }
            Op::Scale(a, s) => self.pass(grads, *a, owned, |_, v| v * s),
            Op::Relu(a) => {
                let va = self.value(*a).data();
                self.pass(grads, *a, owned, |j, v| if va[j] > 0.0 { v } else { 0.0 });
            }
            Op::Exp(a) => {
                let y = node.value.data();
                self.acc(grads, *a, |d| {
                    d.iter_mut().zip(g).zip(y).for_each(|((d, g), y)| *d += g * y)
                });
            }
            Op::Reshape(a) | Op::StraightThrough(a) => self.pass(grads, *a, owned, |_, v| v),
            Op::Sum(a) => self.acc(grads, *a, |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => {
                let s = g[0] / self.value(*a).numel() as f64;
                self.acc(grads, *a, |d| d.iter_mut().for_each(|d| *d += s));
            }
            &Op::Matmul { a, b, m, k, n } => {
                if self.needs(a) {
                    let vb = self.value(b).data();
                    self.acc(grads, a, |d| {
                        gemm(m, n, k, View::rows(g, n), View::t(vb, n), 1.0, d)
                    });
                }
                if self.needs(b) {
                    let va = self.value(a).data();
                    self.acc(grads, b, |d| {
                        gemm(k, m, n, View::t(va, k), View::rows(g, n), 1.0, d)
                    });
                }
            }
            &Op::Affine { x, w, b } => {
                let sw = self.shape(w);
                let (fout, fin) = (sw[0], sw[1]);
                let n = self.shape(x)[0];
                if self.needs(x) {
                    let vw = self.value(w).data();
                    self.acc(grads, x, |d| {
                        gemm(n, fout, fin, View::rows(g, fout), View::rows(vw, fin), 1.0, d)
                    });
                }
                if self.needs(w) {
                    let vx = self.value(x).data();
                    self.acc(grads, w, |d| {
                        gemm(fout, n, fin, View::t(g, fout), View::rows(vx, fin), 1.0, d)
                    });
                }
                self.acc(grads, b, |d| {
                    for row in g.chunks_exact(fout) {
                        axpy(d, row, 1.0);
                    }
                });
            }
            &Op::ChannelBias { x, b } => {
                let s = self.shape(x);
                let (c, l) = (s[1], s[2]);
                self.acc(grads, b, |d| {
                    for (j, chunk) in g.chunks_exact(l).enumerate() {
                        d[j % c] += chunk.iter().sum::<f64>();
                    }
                });
                self.pass(grads, x, owned, |_, v| v);
            }
            &Op::Conv1d { x, w, bias, win, out_ch } => {
                self.bias_grad(grads, bias, out_ch, win.short, g);
                let (mut dw, mut dx) = (self.take_grad(grads, w), self.take_grad(grads, x));
                let vals = (self.value(x).data(), self.value(w).data());
                conv_backward(&win, vals, g, out_ch, dw.as_deref_mut(), dx.as_deref_mut());
                grads[w.0] = dw.or(grads[w.0].take());
                grads[x.0] = dx.or(grads[x.0].take());
            }
            &Op::ConvTranspose1d { x, w, bias, win, in_ch } => {
                self.bias_grad(grads, bias, win.channels, win.long, g);
                let (mut dw, mut dx) = (self.take_grad(grads, w), self.take_grad(grads, x));
                let vals = (self.value(x).data(), self.value(w).data());
                convt_backward(&win, vals, g, in_ch, dw.as_deref_mut(), dx.as_deref_mut());
                grads[w.0] = dw.or(grads[w.0].take());
                grads[x.0] = dx.or(grads[x.0].take());
            }
            &Op::Softmax { x, tau } => {
                let y = node.value.data();
                let k = *node.value.shape().last().unwrap();
                self.acc(grads, x, |d| {
                    for ((drow, grow), yrow) in
                        d.chunks_exact_mut(k).zip(g.chunks_exact(k)).zip(y.chunks_exact(k))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((dv, gv), yv) in drow.iter_mut().zip(grow).zip(yrow) {
                            *dv += yv * (gv - dot) / tau;
                        }
                    }
                });
            }
            &Op::SqDist { z, e } => {
                let (tz, te) = (self.value(z).data(), self.value(e).data());
                let (n, d) = (self.shape(z)[0], self.shape(z)[1]);
                let k = self.shape(e)[0];
                if self.needs(z) {
                    self.acc(grads, z, |dz| {
                        for i in 0..n {
                            for j in 0..k {
                                let c = 2.0 * g[i * k + j];
                                if c == 0.0 {
                                    continue;
                                }
                                for t in 0..d {
                                    dz[i * d + t] += c * (tz[i * d + t] - te[j * d + t]);
                                }
                            }
                        }
                    });
                }
                if self.needs(e) {
                    self.acc(grads, e, |de| {
                        for i in 0..n {
                            for j in 0..k {
                                let c = 2.0 * g[i * k + j];
                                if c == 0.0 {
                                    continue;
                                }
                                for t in 0..d {
                                    de[j * d + t] -= c * (tz[i * d + t] - te[j * d + t]);
                                }
                            }
                        }
                    });
                }
            }
            Op::GatherRows { table, idx } => {
                let d = self.shape(*table)[1];
                self.acc(grads, *table, |dt| {
                    for (r, &i) in idx.iter().enumerate() {
                        axpy(&mut dt[i * d..][..d], &g[r * d..][..d], 1.0);
                    }
                });
            }
            &Op::Mse(a, b) => {
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                let s = 2.0 * g[0] / va.len() as f64;
                self.acc(grads, a, |d| {
                    d.iter_mut().zip(va).zip(vb).for_each(|((d, x), y)| *d += s * (x - y))
                });
                self.acc(grads, b, |d| {
                    d.iter_mut().zip(va).zip(vb).for_each(|((d, x), y)| *d -= s * (x - y))
                });
            }
        }
        Ok(())
    }

    /// Adds `f(j, g[j])` into the gradient of `v`, taking over `g`'s buffer when
    /// `v` has no gradient yet.
    fn pass(&self, grads: &mut [Option<Vec<f64>>], v: Var, mut g: Vec<f64>, f: impl Fn(usize, f64) -> f64) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(d) => d.iter_mut().zip(&g).enumerate().for_each(|(j, (d, x))| *d += f(j, *x)),
            slot @ None => {
                g.iter_mut().enumerate().for_each(|(j, x)| *x = f(j, *x));
                *slot = Some(g);
            }
        }
    }

    fn bias_grad(&self, grads: &mut [Option<Vec<f64>>], bias: Option<Var>, c: usize, l: usize, g: &[f64]) {
        if let Some(b) = bias {
            self.acc(grads, b, |d| {
                for (j, row) in g.chunks_exact(l).enumerate() {
                    d[j % c] += row.iter().sum::<f64>();
                }
            });
        }
    }

    /// Removes the gradient buffer of `v` (zero-filled if absent) so two
    /// buffers can be written at once; `None` when `v` needs no gradient.
    fn take_grad(&self, grads: &mut [Option<Vec<f64>>], v: Var) -> Option<Vec<f64>> {
        self.needs(v)
            .then(|| grads[v.0].take().unwrap_or_else(|| vec![0.0; self.nodes[v.0].value.numel()]))
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.needs(v) {
            return;
        }
        let slot = &mut grads[v.0];
        let buf = slot.get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
        f(buf);
    }
}

fn axpy(d: &mut [f64], x: &[f64], a: f64) {
    for (dv, xv) in d.iter_mut().zip(x) {
        *dv += a * xv;
    }
}

/// In-place `softmax(row / tau)`.
pub(crate) fn softmax_row(row: &mut [f64], tau: f64) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = ((*v - max) / tau).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient buffer for `v`, if it was computed.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `v`, zeros if none reached it.
    pub fn wrt(&self, v: Var, tape: &Tape) -> Tensor {
        let shape = tape.shape(v).to_vec();
        match self.get(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

