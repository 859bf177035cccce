//! Tape-based reverse-mode differentiation over the operator set the extractor needs.
//!
//! A [`Graph`] records every node in creation order, so the node list is already a
//! topological order and [`Graph::backward`] is a single reverse sweep.
//!
//! Activation layouts: `[B, C, T]` for frame-level maps, `[B, F]` for per-utterance
//! vectors. Ops that work "along channels" (concat, slice) use axis 1 in both.

use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::kernels::{self, ConvDims};
use crate::ops::{self, BnMode, BN_EPS};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel statistics of a train-mode batch norm, for running-average updates.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        dims: ConvDims,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Relu(Var),
    Sigmoid(Var),
    SoftmaxTime(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleChannels {
        x: Var,
        s: Var,
    },
    MeanTime(Var),
    SumTime(Var),
    BroadcastTime(Var),
    RepeatChannels(Var),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    SqrtClamp {
        x: Var,
        eps: f64,
    },
    L2NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    Sum(Var),
    AamLoss {
        cos: Var,
        /// d loss / d cos for every entry, already divided by the batch size.
        dcos: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded forward computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(shape),
        }
    }

    pub fn is_connected(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

/// Outer dimension and per-row inner size for axis-1 concatenation/slicing.
fn axis1(shape: &[usize]) -> (usize, usize, usize) {
    let inner: usize = shape[2..].iter().product();
    (shape[0], shape[1], inner)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
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

    /// Input that needs no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Input whose gradient is wanted (parameters, or inputs under test).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?}", self.shape(a)), self.shape(b)));
        }
        Ok(())
    }

    fn btc(&self, op: &'static str, v: Var) -> Result<(usize, usize, usize)> {
        match *self.shape(v) {
            [b, c, t] => Ok((b, c, t)),
            _ => Err(Error::shape(op, "[B, C, T]", self.shape(v))),
        }
    }

    fn bf(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [b, f] => Ok((b, f)),
            _ => Err(Error::shape(op, "[B, F]", self.shape(v))),
        }
    }

    /// Same-padded dilated convolution on `[B, Cin, T]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, dilation: usize) -> Result<Var> {
        self.btc("conv1d", x)?;
        let dims = ops::conv_dims(
            "conv1d",
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            dilation,
        )?;
        let mut out = vec![0.0; dims.batch * dims.cout * dims.time];
        kernels::conv1d_forward(
            dims,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &mut out,
        );
        let value = Tensor::from_parts(vec![dims.batch, dims.cout, dims.time], out);
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.rg(&[b]));
        Ok(self.push(value, Op::Conv1d { x, w, b, dims }, rg))
    }

    /// `y[B, O] = x[B, F] · W[O, F]^T + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (batch, fin) = self.bf("linear", x)?;
        let [fout, wf] = *self.shape(w) else {
            return Err(Error::shape("linear", "weight [O, F]", self.shape(w)));
        };
        if wf != fin {
            return Err(Error::shape("linear", format!("weight [O, {fin}]"), self.shape(w)));
        }
        if let Some(b) = b {
            if self.shape(b) != [fout] {
                return Err(Error::shape("linear", format!("bias [{fout}]"), self.shape(b)));
            }
        }
        let y = kernels::linear_forward(
            batch,
            fin,
            fout,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.rg(&[b]));
        Ok(self.push(Tensor::from_parts(vec![batch, fout], y), Op::Linear { x, w, b }, rg))
    }

    /// Batch norm over `[B, C, T]` (stats over B and T) or `[B, F]` (stats over B).
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let shape = self.shape(x).to_vec();
        let (b, c, t) = match *shape.as_slice() {
            [b, c, t] => (b, c, t),
            [b, f] => (b, f, 1),
            _ => return Err(Error::shape("batchnorm", "[B, C, T] or [B, F]", &shape)),
        };
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape("batchnorm", format!("gamma/beta [{c}]"), self.shape(gamma)));
        }
        let (mean, var, train) = match mode {
            BnMode::Train => {
                let (m, v) = kernels::channel_moments(self.value(x).data(), b, c, t);
                (m, v, true)
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::InvalidArgument("running statistics length".into()));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let xs = self.value(x).data();
        let (g, be) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xs.len()];
        let mut y = vec![0.0; xs.len()];
        for bi in 0..b {
            for ch in 0..c {
                let r = (bi * c + ch) * t..(bi * c + ch + 1) * t;
                for i in r {
                    xhat[i] = (xs[i] - mean[ch]) * inv_std[ch];
                    y[i] = xhat[i] * g[ch] + be[ch];
                }
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        let v = self.push(
            Tensor::from_parts(shape, y),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            rg,
        );
        Ok((v, train.then_some(BatchStats { mean, var })))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(x).map(f);
        let rg = self.rg(&[x]);
        self.push(value, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, kernels::sigmoid, Op::Sigmoid(x))
    }

    /// `sqrt(max(x, eps))`; the gradient is zero on the clamped side.
    pub fn sqrt_clamp(&mut self, x: Var, eps: f64) -> Var {
        self.unary(x, move |v| v.max(eps).sqrt(), Op::SqrtClamp { x, eps })
    }

    /// Softmax along the time axis of `[B, C, T]`.
    pub fn softmax_time(&mut self, x: Var) -> Result<Var> {
        self.btc("softmax_time", x)?;
        let value = ops::softmax_over_time(self.value(x));
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SoftmaxTime(x), rg))
    }

    fn binary(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(op_name, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_parts(self.shape(a).to_vec(), data);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Sum of several same-shaped nodes.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var> {
        let (&first, rest) = vars
            .split_first()
            .ok_or_else(|| Error::InvalidArgument("add_all of nothing".into()))?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    /// `y[b, c, t] = x[b, c, t] · s[b, c]`.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let (b, c, t) = self.btc("scale_channels", x)?;
        if self.shape(s) != [b, c] {
            return Err(Error::shape("scale_channels", format!("[{b}, {c}]"), self.shape(s)));
        }
        let sv = self.value(s).data();
        let data = self
            .value(x)
            .data()
            .chunks(t)
            .zip(sv)
            .flat_map(|(row, &k)| row.iter().map(move |v| v * k))
            .collect();
        let rg = self.rg(&[x, s]);
        Ok(self.push(Tensor::from_parts(vec![b, c, t], data), Op::ScaleChannels { x, s }, rg))
    }

    fn reduce_time(&mut self, x: Var, mean: bool) -> Result<Var> {
        let (b, c, t) = self.btc("reduce_time", x)?;
        let div = if mean { t as f64 } else { 1.0 };
        let data = self
            .value(x)
            .data()
            .chunks(t)
            .map(|row| row.iter().sum::<f64>() / div)
            .collect();
        let op = if mean { Op::MeanTime(x) } else { Op::SumTime(x) };
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(vec![b, c], data), op, rg))
    }

    /// `[B, C, T] -> [B, C]` mean over frames.
    pub fn mean_time(&mut self, x: Var) -> Result<Var> {
        self.reduce_time(x, true)
    }

    /// `[B, C, T] -> [B, C]` sum over frames.
    pub fn sum_time(&mut self, x: Var) -> Result<Var> {
        self.reduce_time(x, false)
    }

    /// `[B, C] -> [B, C, T]` by repeating every value across `t` frames.
    pub fn broadcast_time(&mut self, x: Var, t: usize) -> Result<Var> {
        let (b, c) = self.bf("broadcast_time", x)?;
        let data = self
            .value(x)
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, t))
            .collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(vec![b, c, t], data), Op::BroadcastTime(x), rg))
    }

    /// `[B, 1, T] -> [B, C, T]` by repeating the single row.
    pub fn repeat_channels(&mut self, x: Var, c: usize) -> Result<Var> {
        let (b, one, t) = self.btc("repeat_channels", x)?;
        if one != 1 {
            return Err(Error::shape("repeat_channels", "[B, 1, T]", self.shape(x)));
        }
        let data = self
            .value(x)
            .data()
            .chunks(t)
            .flat_map(|row| std::iter::repeat_n(row, c).flatten().copied())
            .collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(vec![b, c, t], data), Op::RepeatChannels(x), rg))
    }

    /// Concatenation along axis 1.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let shape0 = self.shape(first).to_vec();
        if shape0.len() < 2 {
            return Err(Error::shape("concat", "rank >= 2", &shape0));
        }
        let (b, _, inner) = axis1(&shape0);
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != shape0.len() || s[0] != b || s[2..] != shape0[2..] {
                return Err(Error::shape("concat", format!("like {shape0:?} off axis 1"), s));
            }
            total += s[1];
        }
        let mut data = Vec::with_capacity(b * total * inner);
        for bi in 0..b {
            for &p in parts {
                let c = self.shape(p)[1];
                data.extend_from_slice(&self.value(p).data()[bi * c * inner..(bi + 1) * c * inner]);
            }
        }
        let mut shape = shape0;
        shape[1] = total;
        let rg = self.rg(parts);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Concat(parts.to_vec()), rg))
    }

    /// Channels `start..start + len` along axis 1.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape0 = self.shape(x).to_vec();
        if shape0.len() < 2 || len == 0 || start + len > shape0[1] {
            return Err(Error::shape("slice", format!("axis 1 >= {}", start + len), &shape0));
        }
        let (b, c, inner) = axis1(&shape0);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(b * len * inner);
        for bi in 0..b {
            let base = bi * c * inner;
            data.extend_from_slice(&src[base + start * inner..base + (start + len) * inner]);
        }
        let mut shape = shape0;
        shape[1] = len;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Slice { x, start }, rg))
    }

    /// Unit-normalizes every row of `[B, F]`; zero rows are rejected.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (_, f) = self.bf("l2_normalize_rows", x)?;
        let mut norms = Vec::new();
        let mut data = Vec::with_capacity(self.value(x).len());
        for row in self.value(x).data().chunks(f) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 || !n.is_finite() {
                return Err(Error::ZeroNorm("l2_normalize_rows"));
            }
            norms.push(n);
            data.extend(row.iter().map(|v| v / n));
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape, data), Op::L2NormalizeRows { x, norms }, rg))
    }

    /// Sum of all entries, as a scalar node.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Mean additive-angular-margin softmax cross-entropy over a batch of cosines.
    ///
    /// `cos` is `[B, S]` of cosines between normalized embeddings and class weights;
    /// the target logit becomes `scale · cos(θ_y + margin)`, others `scale · cos θ_j`.
    pub fn aam_loss(&mut self, cos: Var, labels: &[usize], margin: f64, scale: f64) -> Result<Var> {
        let (b, s) = self.bf("aam_loss", cos)?;
        if labels.len() != b {
            return Err(Error::InvalidArgument(format!("{} labels for batch {b}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= s) {
            return Err(Error::InvalidArgument(format!("label {bad} out of {s} classes")));
        }
        let rows = self.value(cos).data().chunks(s);
        let mut total = 0.0;
        let mut dcos = vec![0.0; b * s];
        for ((row, &y), d) in rows.zip(labels).zip(dcos.chunks_mut(s)) {
            let m = crate::train::loss::aam_row(row, y, margin, scale);
            total += m.loss;
            for j in 0..s {
                d[j] = scale * m.probs[j] / b as f64;
            }
            d[y] = scale * (m.probs[y] - 1.0) * m.target_slope / b as f64;
        }
        let rg = self.rg(&[cos]);
        Ok(self.push(Tensor::scalar(total / b as f64), Op::AamLoss { cos, dcos }, rg))
    }

    /// Hash of every non-smooth switch in the graph: which ReLU inputs are
    /// positive and which variance floors are active. Two evaluations with
    /// equal signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(_) => node.value.data().iter().for_each(|&v| (v > 0.0).hash(&mut h)),
                Op::SqrtClamp { x, eps } => self.nodes[x.0].value.data().iter().for_each(|&v| (v > *eps).hash(&mut h)),
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", "scalar loss", self.shape(loss)));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| g.filter(|_| node.requires_grad))
            .collect();
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, delta: &[f64]) {
        if !self.wants(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.iter_mut().zip(delta).for_each(|(a, d)| *a += d),
            slot @ None => *slot = Some(delta.to_vec()),
        }
    }

    fn accumulate_with(
        &self,
        grads: &mut [Option<Vec<f64>>],
        v: Var,
        f: impl FnOnce(&mut [f64]),
    ) {
        if !self.wants(v) {
            return;
        }
        let len = self.value(v).len();
        f(grads[v.0].get_or_insert_with(|| vec![0.0; len]));
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d { x, w, b, dims } => {
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let mut dx = self.wants(*x).then(|| vec![0.0; xv.len()]);
                let mut dw = self.wants(*w).then(|| vec![0.0; wv.len()]);
                let mut db = b.filter(|b| self.wants(*b)).map(|_| vec![0.0; dims.cout]);
                kernels::conv1d_backward(
                    *dims,
                    xv,
                    wv,
                    g,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(d) = dx {
                    self.accumulate(grads, *x, &d);
                }
                if let Some(d) = dw {
                    self.accumulate(grads, *w, &d);
                }
                if let (Some(b), Some(d)) = (b, db) {
                    self.accumulate(grads, *b, &d);
                }
            }
            Op::Linear { x, w, b } => {
                let (batch, fin) = (self.shape(*x)[0], self.shape(*x)[1]);
                let fout = self.shape(*w)[0];
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let mut dx = self.wants(*x).then(|| vec![0.0; xv.len()]);
                let mut dw = self.wants(*w).then(|| vec![0.0; wv.len()]);
                let mut db = b.filter(|b| self.wants(*b)).map(|_| vec![0.0; fout]);
                kernels::linear_backward(
                    batch,
                    fin,
                    fout,
                    xv,
                    wv,
                    g,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(d) = dx {
                    self.accumulate(grads, *x, &d);
                }
                if let Some(d) = dw {
                    self.accumulate(grads, *w, &d);
                }
                if let (Some(b), Some(d)) = (b, db) {
                    self.accumulate(grads, *b, &d);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let shape = self.shape(*x);
                let (b, c, t) = match *shape {
                    [b, c, t] => (b, c, t),
                    [b, f] => (b, f, 1),
                    _ => unreachable!("checked in forward"),
                };
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut dx = vec![0.0; g.len()];
                let n = (b * t) as f64;
                for ch in 0..c {
                    let idx = || (0..b).flat_map(move |bi| (bi * c + ch) * t..(bi * c + ch + 1) * t);
                    let (mut sum_g, mut sum_gx) = (0.0, 0.0);
                    for i in idx() {
                        sum_g += g[i];
                        sum_gx += g[i] * xhat[i];
                    }
                    dbeta[ch] = sum_g;
                    dgamma[ch] = sum_gx;
                    let k = gam[ch] * inv_std[ch];
                    if *train {
                        for i in idx() {
                            dx[i] = k * (g[i] - sum_g / n - xhat[i] * sum_gx / n);
                        }
                    } else {
                        for i in idx() {
                            dx[i] = k * g[i];
                        }
                    }
                }
                self.accumulate(grads, *x, &dx);
                self.accumulate(grads, *gamma, &dgamma);
                self.accumulate(grads, *beta, &dbeta);
            }
            Op::Relu(x) => {
                let d: Vec<f64> = g.iter().zip(out).map(|(&g, &y)| if y > 0.0 { g } else { 0.0 }).collect();
                self.accumulate(grads, *x, &d);
            }
            Op::Sigmoid(x) => {
                let d: Vec<f64> = g.iter().zip(out).map(|(&g, &y)| g * y * (1.0 - y)).collect();
                self.accumulate(grads, *x, &d);
            }
            Op::SqrtClamp { x, eps } => {
                let xv = self.value(*x).data();
                let d: Vec<f64> = g
                    .iter()
                    .zip(xv)
                    .zip(out)
                    .map(|((&g, &xi), &y)| if xi > *eps { 0.5 * g / y } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, &d);
            }
            Op::SoftmaxTime(x) => {
                let t = *self.shape(*x).last().expect("rank 3");
                let mut d = vec![0.0; g.len()];
                for ((dr, gr), yr) in d.chunks_mut(t).zip(g.chunks(t)).zip(out.chunks(t)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for i in 0..t {
                        dr[i] = yr[i] * (gr[i] - dot);
                    }
                }
                self.accumulate(grads, *x, &d);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g);
                self.accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                self.accumulate(grads, *b, &neg);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let da: Vec<f64> = g.iter().zip(bv).map(|(g, y)| g * y).collect();
                let db: Vec<f64> = g.iter().zip(av).map(|(g, x)| g * x).collect();
                self.accumulate(grads, *a, &da);
                self.accumulate(grads, *b, &db);
            }
            Op::ScaleChannels { x, s } => {
                let t = self.shape(*x)[2];
                let (xv, sv) = (self.value(*x).data(), self.value(*s).data());
                self.accumulate_with(grads, *x, |dx| {
                    for ((d, gr), &k) in dx.chunks_mut(t).zip(g.chunks(t)).zip(sv) {
                        d.iter_mut().zip(gr).for_each(|(d, g)| *d += g * k);
                    }
                });
                self.accumulate_with(grads, *s, |ds| {
                    for ((d, gr), xr) in ds.iter_mut().zip(g.chunks(t)).zip(xv.chunks(t)) {
                        *d += gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
                    }
                });
            }
            Op::MeanTime(x) | Op::SumTime(x) => {
                let t = self.shape(*x)[2];
                let div = if matches!(node.op, Op::MeanTime(_)) { t as f64 } else { 1.0 };
                let d: Vec<f64> = g.iter().flat_map(|&v| std::iter::repeat_n(v / div, t)).collect();
                self.accumulate(grads, *x, &d);
            }
            Op::BroadcastTime(x) => {
                let t = node.value.shape()[2];
                let d: Vec<f64> = g.chunks(t).map(|r| r.iter().sum()).collect();
                self.accumulate(grads, *x, &d);
            }
            Op::RepeatChannels(x) => {
                let [b, c, t] = *node.value.shape() else { unreachable!() };
                let mut d = vec![0.0; b * t];
                for bi in 0..b {
                    for ch in 0..c {
                        let row = &g[(bi * c + ch) * t..(bi * c + ch + 1) * t];
                        d[bi * t..(bi + 1) * t].iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                }
                self.accumulate(grads, *x, &d);
            }
            Op::Concat(parts) => {
                let (b, total, inner) = axis1(node.value.shape());
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p)[1];
                    if self.wants(p) {
                        let mut d = Vec::with_capacity(b * c * inner);
                        for bi in 0..b {
                            let base = (bi * total + offset) * inner;
                            d.extend_from_slice(&g[base..base + c * inner]);
                        }
                        self.accumulate(grads, p, &d);
                    }
                    offset += c;
                }
            }
            Op::Slice { x, start } => {
                let (b, c, inner) = axis1(self.shape(*x));
                let len = node.value.shape()[1];
                self.accumulate_with(grads, *x, |dx| {
                    for bi in 0..b {
                        let dst = &mut dx[(bi * c + start) * inner..(bi * c + start + len) * inner];
                        let src = &g[bi * len * inner..(bi + 1) * len * inner];
                        dst.iter_mut().zip(src).for_each(|(a, v)| *a += v);
                    }
                });
            }
            Op::L2NormalizeRows { x, norms } => {
                let f = self.shape(*x)[1];
                let mut d = vec![0.0; g.len()];
                for (((dr, gr), yr), &n) in d.chunks_mut(f).zip(g.chunks(f)).zip(out.chunks(f)).zip(norms) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for i in 0..f {
                        dr[i] = (gr[i] - yr[i] * dot) / n;
                    }
                }
                self.accumulate(grads, *x, &d);
            }
            Op::Sum(x) => {
                let d = vec![g[0]; self.value(*x).len()];
                self.accumulate(grads, *x, &d);
            }
            Op::AamLoss { cos, dcos } => {
                let d: Vec<f64> = dcos.iter().map(|v| v * g[0]).collect();
                self.accumulate(grads, *cos, &d);
            }
        }
    }
}
