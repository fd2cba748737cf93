//! Forward implementations and backward rules for every tape operation.

use super::{same_shape, GradError, Node, Op, TapeInner, Tensor};

/// Dot product with four independent accumulators. The fixed summation tree
/// keeps results bit-deterministic while breaking the add latency chain.
#[inline]
pub(crate) fn dot4(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        acc[0] += xa[0] * xb[0];
        acc[1] += xa[1] * xb[1];
        acc[2] += xa[2] * xb[2];
        acc[3] += xa[3] * xb[3];
    }
    let mut tail = 0.0;
    for (xa, xb) in ca.remainder().iter().zip(cb.remainder()) {
        tail += xa * xb;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn is_scalar(shape: &[usize]) -> bool {
    shape.iter().product::<usize>() == 1
}

impl Tensor {
    fn node_data<R>(&self, id: usize, f: impl FnOnce(&Node) -> R) -> R {
        let inner = self.tape.borrow();
        f(&inner.nodes[id])
    }

    fn record(&self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[&Tensor]) -> Tensor {
        let needs_grad = inputs.iter().any(|t| self.node_data(t.id, |n| n.needs_grad));
        self.tape_handle().push_node(Node {
            shape,
            data,
            grad: None,
            requires_grad: false,
            needs_grad,
            op,
        })
    }

    fn check_same_tape(&self, other: &Tensor, op: &'static str) -> Result<(), GradError> {
        if !self.same_tape(other) {
            return Err(GradError::TapeMismatch);
        }
        let _ = op;
        Ok(())
    }

    fn binary_elementwise(
        &self,
        other: &Tensor,
        op_name: &'static str,
        make_op: impl Fn(usize, usize) -> Op,
        eval: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, GradError> {
        self.check_same_tape(other, op_name)?;
        let (a, b) = (self.data(), other.data());
        let (out_shape, data) = if same_shape(&self.shape, &other.shape) {
            (
                self.shape.clone(),
                a.iter().zip(&b).map(|(x, y)| eval(*x, *y)).collect(),
            )
        } else if is_scalar(&other.shape) {
            (self.shape.clone(), a.iter().map(|x| eval(*x, b[0])).collect())
        } else if is_scalar(&self.shape) {
            (other.shape.clone(), b.iter().map(|y| eval(a[0], *y)).collect())
        } else {
            return Err(GradError::ShapeMismatch {
                op: op_name,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        };
        Ok(self.record(out_shape, data, make_op(self.id, other.id), &[self, other]))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, GradError> {
        self.binary_elementwise(other, "add", |a, b| Op::Add { a, b }, |x, y| x + y)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, GradError> {
        self.binary_elementwise(other, "sub", |a, b| Op::Sub { a, b }, |x, y| x - y)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor, GradError> {
        self.binary_elementwise(other, "mul", |a, b| Op::Mul { a, b }, |x, y| x * y)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor, GradError> {
        if self.tape_handle().strict() && other.data().iter().any(|v| *v == 0.0) {
            return Err(GradError::DivisionByZero);
        }
        self.binary_elementwise(other, "div", |a, b| Op::Div { a, b }, |x, y| x / y)
    }

    /// Multiply by a constant; records the constant as a scalar input node.
    pub fn scale(&self, c: f64) -> Tensor {
        let s = self.tape_handle().scalar(c);
        self.mul(&s).expect("scalar broadcast cannot fail")
    }

    /// Add a constant; records the constant as a scalar input node.
    pub fn add_scalar(&self, c: f64) -> Tensor {
        let s = self.tape_handle().scalar(c);
        self.add(&s).expect("scalar broadcast cannot fail")
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, GradError> {
        self.check_same_tape(other, "matmul")?;
        if self.shape.len() != 2 || other.shape.len() != 2 {
            return Err(GradError::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(GradError::InnerDimMismatch(k, k2));
        }
        let a = self.data();
        let b = other.data();
        let mut out = vec![0.0; m * n];
        matmul_into(&a, &b, &mut out, m, k, n);
        Ok(self.record(
            vec![m, n],
            out,
            Op::Matmul {
                a: self.id,
                b: other.id,
                m,
                k,
                n,
            },
            &[self, other],
        ))
    }

    /// Valid (no padding) 1-D cross-correlation.
    ///
    /// `self` is `[C_in, T]`, `kernels` is `[C_out, C_in, K]`, output is
    /// `[C_out, T']` with `T' = (T - K) / stride + 1`.
    pub fn conv1d(&self, kernels: &Tensor, stride: usize) -> Result<Tensor, GradError> {
        self.check_same_tape(kernels, "conv1d")?;
        if self.shape.len() != 2 || kernels.shape.len() != 3 || stride == 0 {
            return Err(GradError::ShapeMismatch {
                op: "conv1d",
                left: self.shape.clone(),
                right: kernels.shape.clone(),
            });
        }
        let (c_in, t_in) = (self.shape[0], self.shape[1]);
        let (c_out, c_in2, ksize) = (kernels.shape[0], kernels.shape[1], kernels.shape[2]);
        if c_in != c_in2 {
            return Err(GradError::ShapeMismatch {
                op: "conv1d",
                left: self.shape.clone(),
                right: kernels.shape.clone(),
            });
        }
        if t_in < ksize {
            return Err(GradError::InputShorterThanKernel {
                input: t_in,
                kernel: ksize,
            });
        }
        let t_out = (t_in - ksize) / stride + 1;
        let x = self.data();
        let w = kernels.data();
        let mut out = vec![0.0; c_out * t_out];
        conv1d_forward(&x, &w, &mut out, c_in, t_in, c_out, ksize, stride, t_out);
        Ok(self.record(
            vec![c_out, t_out],
            out,
            Op::Conv1d {
                signal: self.id,
                kernels: kernels.id,
                stride,
            },
            &[self, kernels],
        ))
    }

    /// Adds a per-channel bias `[C]` to a `[C, T]` activation.
    pub fn add_channel_bias(&self, bias: &Tensor) -> Result<Tensor, GradError> {
        self.check_same_tape(bias, "add_channel_bias")?;
        if self.shape.len() != 2 || bias.shape.len() != 1 || bias.shape[0] != self.shape[0] {
            return Err(GradError::ShapeMismatch {
                op: "add_channel_bias",
                left: self.shape.clone(),
                right: bias.shape.clone(),
            });
        }
        let (c, t) = (self.shape[0], self.shape[1]);
        let x = self.data();
        let b = bias.data();
        let mut out = vec![0.0; c * t];
        for ch in 0..c {
            let bv = b[ch];
            for i in 0..t {
                out[ch * t + i] = x[ch * t + i] + bv;
            }
        }
        Ok(self.record(
            vec![c, t],
            out,
            Op::AddChannelBias {
                x: self.id,
                bias: bias.id,
            },
            &[self, bias],
        ))
    }

    fn unary(&self, op: Op, eval: impl Fn(f64) -> f64) -> Tensor {
        let data = self.data().iter().map(|x| eval(*x)).collect();
        self.record(self.shape.clone(), data, op, &[self])
    }

    pub fn relu(&self) -> Tensor {
        self.unary(Op::Relu { x: self.id }, |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(Op::Tanh { x: self.id }, f64::tanh)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(Op::Exp { x: self.id }, f64::exp)
    }

    /// Elementwise absolute value; the subgradient at 0 is 0.
    pub fn abs(&self) -> Tensor {
        self.unary(Op::Abs { x: self.id }, f64::abs)
    }

    pub fn log(&self) -> Tensor {
        self.unary(Op::Log { x: self.id }, f64::ln)
    }

    /// Elementwise square root; the subgradient at 0 is 0 so that values
    /// pinned at zero stay stationary under norm-style losses.
    pub fn sqrt(&self) -> Result<Tensor, GradError> {
        if let Some(v) = self.data().iter().find(|v| **v < 0.0) {
            return Err(GradError::SqrtOfNegative(*v));
        }
        Ok(self.unary(Op::Sqrt { x: self.id }, f64::sqrt))
    }

    pub fn sum_all(&self) -> Tensor {
        let total = deterministic_sum(&self.data());
        self.record(vec![1], vec![total], Op::SumAll { x: self.id }, &[self])
    }

    pub fn mean_all(&self) -> Tensor {
        let data = self.data();
        let n = data.len().max(1) as f64;
        let total = deterministic_sum(&data) / n;
        self.record(vec![1], vec![total], Op::MeanAll { x: self.id }, &[self])
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Tensor, GradError> {
        self.reduce_axis(axis, false)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor, GradError> {
        self.reduce_axis(axis, true)
    }

    fn reduce_axis(&self, axis: usize, mean: bool) -> Result<Tensor, GradError> {
        let rank = self.shape.len();
        if axis >= rank {
            return Err(GradError::BadAxis { axis, rank });
        }
        let x = self.data();
        let (out_shape, out) = match rank {
            1 => (vec![1], vec![deterministic_sum(&x)]),
            2 => {
                let (r, c) = (self.shape[0], self.shape[1]);
                if axis == 0 {
                    let mut out = vec![0.0; c];
                    for i in 0..r {
                        for j in 0..c {
                            out[j] += x[i * c + j];
                        }
                    }
                    (vec![c], out)
                } else {
                    let mut out = vec![0.0; r];
                    for i in 0..r {
                        out[i] = deterministic_sum(&x[i * c..(i + 1) * c]);
                    }
                    (vec![r], out)
                }
            }
            _ => return Err(GradError::BadAxis { axis, rank }),
        };
        let axis_len = self.shape[axis];
        let out = if mean {
            if axis_len == 0 && self.tape_handle().strict() {
                return Err(GradError::DivisionByZero);
            }
            out.iter().map(|v| v / axis_len as f64).collect()
        } else {
            out
        };
        let op = if mean {
            Op::MeanAxis { x: self.id, axis }
        } else {
            Op::SumAxis { x: self.id, axis }
        };
        Ok(self.record(out_shape, out, op, &[self]))
    }

    /// Cosine similarity of two equal-length vectors, as a scalar node.
    pub fn cosine_similarity(&self, other: &Tensor) -> Result<Tensor, GradError> {
        self.check_same_tape(other, "cosine_similarity")?;
        if self.shape.len() != 1 || !same_shape(&self.shape, &other.shape) {
            return Err(GradError::ShapeMismatch {
                op: "cosine_similarity",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let a = self.data();
        let b = other.data();
        let na = dot4(&a, &a).sqrt();
        let nb = dot4(&b, &b).sqrt();
        if na == 0.0 || nb == 0.0 {
            return Err(GradError::ZeroNorm);
        }
        let rho = dot4(&a, &b) / (na * nb);
        Ok(self.record(
            vec![1],
            vec![rho],
            Op::CosineSim {
                a: self.id,
                b: other.id,
            },
            &[self, other],
        ))
    }

    /// Cyclically repeats a vector up to length `n` (truncating the last copy).
    pub fn tile_to(&self, n: usize) -> Result<Tensor, GradError> {
        if self.shape.len() != 1 || self.shape[0] == 0 || n == 0 {
            return Err(GradError::ShapeMismatch {
                op: "tile_to",
                left: self.shape.clone(),
                right: vec![n],
            });
        }
        let x = self.data();
        let l = x.len();
        let mut out = Vec::with_capacity(n);
        while out.len() + l <= n {
            out.extend_from_slice(&x);
        }
        out.extend_from_slice(&x[..n - out.len()]);
        Ok(self.record(vec![n], out, Op::Tile { x: self.id }, &[self]))
    }

    /// Circular shift: `out[i] = x[(i + shift) mod l]`.
    pub fn roll(&self, shift: i64) -> Result<Tensor, GradError> {
        if self.shape.len() != 1 || self.shape[0] == 0 {
            return Err(GradError::ShapeMismatch {
                op: "roll",
                left: self.shape.clone(),
                right: vec![],
            });
        }
        let x = self.data();
        let l = x.len() as i64;
        let out = (0..l).map(|i| x[(i + shift).rem_euclid(l) as usize]).collect();
        Ok(self.record(
            self.shape.clone(),
            out,
            Op::Roll {
                x: self.id,
                shift,
            },
            &[self],
        ))
    }

    /// Concatenates two vectors.
    pub fn concat(&self, other: &Tensor) -> Result<Tensor, GradError> {
        self.check_same_tape(other, "concat")?;
        if self.shape.len() != 1 || other.shape.len() != 1 {
            return Err(GradError::ShapeMismatch {
                op: "concat",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let mut out = self.data();
        out.extend_from_slice(&other.data());
        let n = out.len();
        Ok(self.record(
            vec![n],
            out,
            Op::Concat {
                a: self.id,
                b: other.id,
            },
            &[self, other],
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor, GradError> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(GradError::BadReshape {
                from: self.shape.clone(),
                to: shape.to_vec(),
            });
        }
        Ok(self.record(
            shape.to_vec(),
            self.data(),
            Op::Reshape { x: self.id },
            &[self],
        ))
    }
}

/// Sum with the same fixed four-accumulator tree as `dot4`.
pub(crate) fn deterministic_sum(v: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut chunks = v.chunks_exact(4);
    for c in &mut chunks {
        acc[0] += c[0];
        acc[1] += c[1];
        acc[2] += c[2];
        acc[3] += c[3];
    }
    let mut tail = 0.0;
    for x in chunks.remainder() {
        tail += x;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in a[i * k..(i + 1) * k].iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                out_row[j] += aik * b_row[j];
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv1d_forward(
    x: &[f64],
    w: &[f64],
    out: &mut [f64],
    c_in: usize,
    t_in: usize,
    c_out: usize,
    ksize: usize,
    stride: usize,
    t_out: usize,
) {
    for oc in 0..c_out {
        let out_row = &mut out[oc * t_out..(oc + 1) * t_out];
        for ci in 0..c_in {
            let wrow = &w[(oc * c_in + ci) * ksize..(oc * c_in + ci + 1) * ksize];
            let xrow = &x[ci * t_in..(ci + 1) * t_in];
            for (t, o) in out_row.iter_mut().enumerate() {
                let base = t * stride;
                *o += dot4(wrow, &xrow[base..base + ksize]);
            }
        }
    }
}

/// Replays backward rules in reverse topological order starting at `root`.
pub(crate) fn run_backward(inner: &mut TapeInner, root: usize) {
    let n = inner.nodes.len();
    let mut marked = vec![false; n];
    // Reachability over nodes that participate in a gradient path.
    let mut stack = vec![root];
    while let Some(id) = stack.pop() {
        if marked[id] || !inner.nodes[id].needs_grad {
            continue;
        }
        marked[id] = true;
        for input in op_inputs(&inner.nodes[id].op) {
            if inner.nodes[input].needs_grad && !marked[input] {
                stack.push(input);
            }
        }
    }
    if !marked[root] {
        // Root does not require grad anywhere below it; nothing to do.
        return;
    }

    let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
    grads[root] = Some(vec![1.0]);

    for id in (0..=root).rev() {
        if !marked[id] {
            continue;
        }
        let grad = match grads[id].take() {
            Some(g) => g,
            None => continue, // marked but never received gradient flow
        };
        backprop_node(inner, id, &grad, &mut grads);
        if inner.nodes[id].requires_grad {
            inner.nodes[id].grad = Some(grad);
        }
    }
}

fn op_inputs(op: &Op) -> Vec<usize> {
    match *op {
        Op::Leaf => vec![],
        Op::Add { a, b }
        | Op::Sub { a, b }
        | Op::Mul { a, b }
        | Op::Div { a, b }
        | Op::Matmul { a, b, .. }
        | Op::CosineSim { a, b }
        | Op::Concat { a, b } => vec![a, b],
        Op::Conv1d {
            signal, kernels, ..
        } => vec![signal, kernels],
        Op::AddChannelBias { x, bias } => vec![x, bias],
        Op::Relu { x }
        | Op::Tanh { x }
        | Op::Exp { x }
        | Op::Abs { x }
        | Op::Log { x }
        | Op::Sqrt { x }
        | Op::SumAll { x }
        | Op::MeanAll { x }
        | Op::SumAxis { x, .. }
        | Op::MeanAxis { x, .. }
        | Op::Tile { x }
        | Op::Roll { x, .. }
        | Op::Reshape { x } => vec![x],
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, len: usize, add: impl FnOnce(&mut [f64])) {
    let slot = grads[id].get_or_insert_with(|| vec![0.0; len]);
    add(slot);
}

fn wants(inner: &TapeInner, id: usize) -> bool {
    inner.nodes[id].needs_grad
}

fn backprop_node(inner: &TapeInner, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &inner.nodes[id];
    match node.op {
        Op::Leaf => {}
        Op::Add { a, b } => {
            binary_linear_back(inner, g, a, b, grads, 1.0, 1.0);
        }
        Op::Sub { a, b } => {
            binary_linear_back(inner, g, a, b, grads, 1.0, -1.0);
        }
        Op::Mul { a, b } => {
            let da = |av: &[f64], bv: &[f64], i: usize, j: usize, gi: f64| {
                let _ = (av, i);
                gi * bv[j]
            };
            let db = |av: &[f64], bv: &[f64], i: usize, j: usize, gi: f64| {
                let _ = (bv, j);
                gi * av[i]
            };
            binary_nonlinear_back(inner, g, a, b, grads, da, db);
        }
        Op::Div { a, b } => {
            let da = |_av: &[f64], bv: &[f64], _i: usize, j: usize, gi: f64| gi / bv[j];
            let db = |av: &[f64], bv: &[f64], i: usize, j: usize, gi: f64| {
                -gi * av[i] / (bv[j] * bv[j])
            };
            binary_nonlinear_back(inner, g, a, b, grads, da, db);
        }
        Op::Matmul { a, b, m, k, n } => {
            if wants(inner, a) {
                // dA = g · Bᵀ
                let bdat = &inner.nodes[b].data;
                accumulate(grads, a, m * k, |da| {
                    for i in 0..m {
                        for kk in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[i * n + j] * bdat[kk * n + j];
                            }
                            da[i * k + kk] += acc;
                        }
                    }
                });
            }
            if wants(inner, b) {
                // dB = Aᵀ · g
                let adat = &inner.nodes[a].data;
                accumulate(grads, b, k * n, |db| {
                    for i in 0..m {
                        for kk in 0..k {
                            let aik = adat[i * k + kk];
                            if aik == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[kk * n + j] += aik * g[i * n + j];
                            }
                        }
                    }
                });
            }
        }
        Op::Conv1d {
            signal,
            kernels,
            stride,
        } => {
            let sig_node = &inner.nodes[signal];
            let ker_node = &inner.nodes[kernels];
            let (c_in, t_in) = (sig_node.shape[0], sig_node.shape[1]);
            let (c_out, ksize) = (ker_node.shape[0], ker_node.shape[2]);
            let t_out = node.shape[1];
            if wants(inner, signal) {
                let w = &ker_node.data;
                accumulate(grads, signal, c_in * t_in, |dx| {
                    for oc in 0..c_out {
                        let grow = &g[oc * t_out..(oc + 1) * t_out];
                        for ci in 0..c_in {
                            let wrow =
                                &w[(oc * c_in + ci) * ksize..(oc * c_in + ci + 1) * ksize];
                            let dxrow = &mut dx[ci * t_in..(ci + 1) * t_in];
                            for (t, &gi) in grow.iter().enumerate() {
                                if gi == 0.0 {
                                    continue;
                                }
                                let base = t * stride;
                                for (k, &wk) in wrow.iter().enumerate() {
                                    dxrow[base + k] += gi * wk;
                                }
                            }
                        }
                    }
                });
            }
            if wants(inner, kernels) {
                let x = &sig_node.data;
                accumulate(grads, kernels, c_out * c_in * ksize, |dw| {
                    for oc in 0..c_out {
                        let grow = &g[oc * t_out..(oc + 1) * t_out];
                        for ci in 0..c_in {
                            let xrow = &x[ci * t_in..(ci + 1) * t_in];
                            let dwrow = &mut dw
                                [(oc * c_in + ci) * ksize..(oc * c_in + ci + 1) * ksize];
                            for (k, dwk) in dwrow.iter_mut().enumerate() {
                                let mut acc = 0.0;
                                for (t, &gi) in grow.iter().enumerate() {
                                    acc += gi * xrow[t * stride + k];
                                }
                                *dwk += acc;
                            }
                        }
                    }
                });
            }
        }
        Op::AddChannelBias { x, bias } => {
            let (c, t) = (node.shape[0], node.shape[1]);
            if wants(inner, x) {
                accumulate(grads, x, c * t, |dx| {
                    for (d, gi) in dx.iter_mut().zip(g) {
                        *d += gi;
                    }
                });
            }
            if wants(inner, bias) {
                accumulate(grads, bias, c, |db| {
                    for ch in 0..c {
                        db[ch] += deterministic_sum(&g[ch * t..(ch + 1) * t]);
                    }
                });
            }
        }
        Op::Relu { x } => {
            unary_back(inner, &node.data, g, x, grads, |xi, _yi, gi| {
                if xi > 0.0 {
                    gi
                } else {
                    0.0
                }
            });
        }
        Op::Tanh { x } => {
            unary_back(inner, &node.data, g, x, grads, |_xi, yi, gi| {
                gi * (1.0 - yi * yi)
            });
        }
        Op::Exp { x } => {
            unary_back(inner, &node.data, g, x, grads, |_xi, yi, gi| gi * yi);
        }
        Op::Abs { x } => {
            unary_back(inner, &node.data, g, x, grads, |xi, _yi, gi| {
                if xi > 0.0 {
                    gi
                } else if xi < 0.0 {
                    -gi
                } else {
                    0.0
                }
            });
        }
        Op::Log { x } => {
            unary_back(inner, &node.data, g, x, grads, |xi, _yi, gi| gi / xi);
        }
        Op::Sqrt { x } => {
            unary_back(inner, &node.data, g, x, grads, |xi, yi, gi| {
                if xi == 0.0 {
                    0.0
                } else {
                    gi * 0.5 / yi
                }
            });
        }
        Op::SumAll { x } => {
            if wants(inner, x) {
                let n = inner.nodes[x].data.len();
                let g0 = g[0];
                accumulate(grads, x, n, |dx| {
                    for d in dx.iter_mut() {
                        *d += g0;
                    }
                });
            }
        }
        Op::MeanAll { x } => {
            if wants(inner, x) {
                let n = inner.nodes[x].data.len();
                let g0 = g[0] / n.max(1) as f64;
                accumulate(grads, x, n, |dx| {
                    for d in dx.iter_mut() {
                        *d += g0;
                    }
                });
            }
        }
        Op::SumAxis { x, axis } | Op::MeanAxis { x, axis } => {
            if wants(inner, x) {
                let xs = &inner.nodes[x].shape;
                let scale = match node.op {
                    Op::MeanAxis { .. } => 1.0 / xs[axis] as f64,
                    _ => 1.0,
                };
                let n = inner.nodes[x].data.len();
                match xs.len() {
                    1 => accumulate(grads, x, n, |dx| {
                        for d in dx.iter_mut() {
                            *d += g[0] * scale;
                        }
                    }),
                    2 => {
                        let (r, c) = (xs[0], xs[1]);
                        accumulate(grads, x, n, |dx| {
                            for i in 0..r {
                                for j in 0..c {
                                    let gi = if axis == 0 { g[j] } else { g[i] };
                                    dx[i * c + j] += gi * scale;
                                }
                            }
                        });
                    }
                    _ => unreachable!("reduce_axis rejects rank > 2"),
                }
            }
        }
        Op::CosineSim { a, b } => {
            let av = &inner.nodes[a].data;
            let bv = &inner.nodes[b].data;
            let na = dot4(av, av).sqrt();
            let nb = dot4(bv, bv).sqrt();
            let rho = node.data[0];
            let g0 = g[0];
            if wants(inner, a) {
                accumulate(grads, a, av.len(), |da| {
                    for i in 0..av.len() {
                        da[i] += g0 * (bv[i] / (na * nb) - rho * av[i] / (na * na));
                    }
                });
            }
            if wants(inner, b) {
                accumulate(grads, b, bv.len(), |db| {
                    for i in 0..bv.len() {
                        db[i] += g0 * (av[i] / (na * nb) - rho * bv[i] / (nb * nb));
                    }
                });
            }
        }
        Op::Tile { x } => {
            if wants(inner, x) {
                let l = inner.nodes[x].data.len();
                accumulate(grads, x, l, |dx| {
                    for (i, gi) in g.iter().enumerate() {
                        dx[i % l] += gi;
                    }
                });
            }
        }
        Op::Roll { x, shift } => {
            if wants(inner, x) {
                let l = inner.nodes[x].data.len();
                accumulate(grads, x, l, |dx| {
                    for (i, gi) in g.iter().enumerate() {
                        dx[(i as i64 + shift).rem_euclid(l as i64) as usize] += gi;
                    }
                });
            }
        }
        Op::Concat { a, b } => {
            let la = inner.nodes[a].data.len();
            let lb = inner.nodes[b].data.len();
            if wants(inner, a) {
                accumulate(grads, a, la, |da| {
                    for i in 0..la {
                        da[i] += g[i];
                    }
                });
            }
            if wants(inner, b) {
                accumulate(grads, b, lb, |db| {
                    for i in 0..lb {
                        db[i] += g[la + i];
                    }
                });
            }
        }
        Op::Reshape { x } => {
            if wants(inner, x) {
                let n = inner.nodes[x].data.len();
                accumulate(grads, x, n, |dx| {
                    for (d, gi) in dx.iter_mut().zip(g) {
                        *d += gi;
                    }
                });
            }
        }
    }
}

/// Backward for add/sub where each side's local derivative is a constant sign.
fn binary_linear_back(
    inner: &TapeInner,
    g: &[f64],
    a: usize,
    b: usize,
    grads: &mut [Option<Vec<f64>>],
    sign_a: f64,
    sign_b: f64,
) {
    for (id, sign) in [(a, sign_a), (b, sign_b)] {
        if !wants(inner, id) {
            continue;
        }
        let n = inner.nodes[id].data.len();
        if n == 1 && g.len() > 1 {
            let total = deterministic_sum(g) * sign;
            accumulate(grads, id, 1, |d| d[0] += total);
        } else {
            accumulate(grads, id, n, |d| {
                for (di, gi) in d.iter_mut().zip(g) {
                    *di += sign * gi;
                }
            });
        }
    }
}

/// Backward for mul/div with scalar-broadcast support. The closures receive
/// (a_data, b_data, a_index, b_index, upstream) for output element `i`.
fn binary_nonlinear_back(
    inner: &TapeInner,
    g: &[f64],
    a: usize,
    b: usize,
    grads: &mut [Option<Vec<f64>>],
    da: impl Fn(&[f64], &[f64], usize, usize, f64) -> f64,
    db: impl Fn(&[f64], &[f64], usize, usize, f64) -> f64,
) {
    let av = &inner.nodes[a].data;
    let bv = &inner.nodes[b].data;
    let (la, lb) = (av.len(), bv.len());
    if wants(inner, a) {
        if la == 1 && g.len() > 1 {
            let mut total = 0.0;
            for (i, &gi) in g.iter().enumerate() {
                total += da(av, bv, 0, if lb == 1 { 0 } else { i }, gi);
            }
            accumulate(grads, a, 1, |d| d[0] += total);
        } else {
            accumulate(grads, a, la, |d| {
                for (i, &gi) in g.iter().enumerate() {
                    d[i] += da(av, bv, i, if lb == 1 { 0 } else { i }, gi);
                }
            });
        }
    }
    if wants(inner, b) {
        if lb == 1 && g.len() > 1 {
            let mut total = 0.0;
            for (i, &gi) in g.iter().enumerate() {
                total += db(av, bv, if la == 1 { 0 } else { i }, 0, gi);
            }
            accumulate(grads, b, 1, |d| d[0] += total);
        } else {
            accumulate(grads, b, lb, |d| {
                for (i, &gi) in g.iter().enumerate() {
                    d[i] += db(av, bv, if la == 1 { 0 } else { i }, i, gi);
                }
            });
        }
    }
}

/// Backward for elementwise unary ops; `local(x_i, y_i, g_i)` returns the
/// contribution to dx_i given the input, output, and upstream gradient.
fn unary_back(
    inner: &TapeInner,
    y: &[f64],
    g: &[f64],
    x: usize,
    grads: &mut [Option<Vec<f64>>],
    local: impl Fn(f64, f64, f64) -> f64,
) {
    if !wants(inner, x) {
        return;
    }
    let xd = &inner.nodes[x].data;
    let n = xd.len();
    accumulate(grads, x, n, |dx| {
        for i in 0..n {
            dx[i] += local(xd[i], y[i], g[i]);
        }
    });
}
