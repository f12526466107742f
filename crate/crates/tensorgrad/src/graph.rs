//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value. Nodes are stored in
//! creation order, which is a topological order of the computation, so the
//! backward pass is a single reverse sweep over the tape.

use std::collections::HashMap;

use crate::error::{shape_err, Result, TensorError};
use crate::kernels::{col2im, gemm, im2col, Window};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Window,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Window,
    },
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    AdaptiveAvgPool(Var),
    Norm {
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Upsample(Var, usize),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Reshape(Var),
    Concat(Vec<Var>),
    Sum(Var),
    Mean(Var),
    L1(Var, Var),
    Mse(Var, Var),
    DotConst(Var, Vec<f64>),
    SpectralNorm {
        w: Var,
        u: Vec<f64>,
        v: Vec<f64>,
        sigma: f64,
    },
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Conv2d { x, w, b, .. } | ConvTranspose2d { x, w, b, .. } | Linear { x, w, b } => {
                let mut p = vec![*x, *w];
                p.extend(b);
                p
            }
            Norm { x, gamma, beta, .. } => {
                let mut p = vec![*x];
                p.extend(gamma);
                p.extend(beta);
                p
            }
            Relu(a)
            | LeakyRelu(a, _)
            | Tanh(a)
            | AdaptiveAvgPool(a)
            | Upsample(a, _)
            | Scale(a, _)
            | Reshape(a)
            | Sum(a)
            | Mean(a)
            | DotConst(a, _) => vec![*a],
            SpectralNorm { w, .. } => vec![*w],
            Add(a, b) | Sub(a, b) | Mul(a, b) | L1(a, b) | Mse(a, b) => vec![*a, *b],
            Concat(parts) => parts.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

#[derive(Debug, Clone, Copy)]
struct ParamBinding {
    leaf: Var,
    output: Var,
}

/// A recorded computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(ParamId, ParamBinding)>,
    param_index: HashMap<ParamId, usize>,
    track_params: bool,
}

impl Graph {
    /// Graph whose parameter leaves collect gradients.
    pub fn new() -> Self {
        Graph {
            track_params: true,
            ..Default::default()
        }
    }

    /// Graph for inference only: parameters enter as constants.
    pub fn inference() -> Self {
        Graph::default()
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

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Leaf => value.requires_grad(),
            op => op.parents().iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Inserts a leaf; it collects a gradient iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf)
    }

    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(true), Op::Leaf)
    }

    /// Binds a stored parameter into this graph, once per graph.
    ///
    /// Parameters registered with spectral normalization are returned already
    /// divided by their current singular-value estimate.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(&i) = self.param_index.get(&id) {
            return Ok(self.params[i].1.output);
        }
        let t = store
            .value(id)
            .clone()
            .with_requires_grad(self.track_params);
        let leaf = self.push(t, Op::Leaf);
        let output = match store.spectral(id) {
            Some(sn) => self.spectral_norm(leaf, &sn.u, &sn.v)?,
            None => leaf,
        };
        self.param_index.insert(id, self.params.len());
        self.params.push((id, ParamBinding { leaf, output }));
        Ok(output)
    }

    /// Adds the gradients held by bound parameter leaves into `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for (id, binding) in &self.params {
            if let Some(g) = self.grad(binding.leaf) {
                store.add_grad(*id, g);
            }
        }
    }

    // ----- convolution -----

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let [n, c, h, wd] = self.value(x).dims4("conv2d")?;
        let [o, ci, kh, kw] = self.value(w).dims4("conv2d")?;
        if ci != c {
            return shape_err(
                "conv2d",
                format!("input has {c} channels, kernel expects {ci}"),
            );
        }
        if stride == 0 || h + 2 * pad < kh || wd + 2 * pad < kw {
            return shape_err(
                "conv2d",
                format!("kernel {kh}x{kw} does not fit {h}x{wd} with pad {pad}"),
            );
        }
        if (h + 2 * pad - kh) % stride != 0 || (wd + 2 * pad - kw) % stride != 0 {
            return shape_err(
                "conv2d",
                format!(
                    "padded size {}x{} not divisible by stride {stride}",
                    h + 2 * pad,
                    wd + 2 * pad
                ),
            );
        }
        self.check_bias("conv2d", b, o)?;
        let geom = Window {
            c,
            h,
            w: wd,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (wd + 2 * pad - kw) / stride + 1,
        };
        let (rows, ncol) = (geom.rows(), geom.cols());
        let mut out = vec![0.0; n * o * ncol];
        let mut cols = vec![0.0; rows * ncol];
        let xd = self.value(x).data();
        let wdata = self.value(w).data();
        for s in 0..n {
            im2col(&xd[s * c * h * wd..(s + 1) * c * h * wd], &geom, &mut cols);
            gemm(
                o,
                rows,
                ncol,
                wdata,
                false,
                &cols,
                false,
                0.0,
                &mut out[s * o * ncol..(s + 1) * o * ncol],
            );
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), n, o, ncol);
        }
        let t = Tensor::new(&[n, o, geom.ho, geom.wo], out)?;
        Ok(self.push(t, Op::Conv2d { x, w, b, geom }))
    }

    /// Transposed convolution; kernel layout is `[in, out, kh, kw]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let [n, c, h, wd] = self.value(x).dims4("conv_transpose2d")?;
        let [ci, o, kh, kw] = self.value(w).dims4("conv_transpose2d")?;
        if ci != c {
            return shape_err(
                "conv_transpose2d",
                format!("input has {c} channels, kernel expects {ci}"),
            );
        }
        if stride == 0
            || h == 0
            || wd == 0
            || (h - 1) * stride + kh <= 2 * pad
            || (wd - 1) * stride + kw <= 2 * pad
        {
            return shape_err("conv_transpose2d", "degenerate output size");
        }
        self.check_bias("conv_transpose2d", b, o)?;
        let (ho, wo) = (
            (h - 1) * stride + kh - 2 * pad,
            (wd - 1) * stride + kw - 2 * pad,
        );
        // The adjoint window maps the output grid back onto the input grid.
        let geom = Window {
            c: o,
            h: ho,
            w: wo,
            kh,
            kw,
            stride,
            pad,
            ho: h,
            wo: wd,
        };
        let (rows, ncol) = (geom.rows(), geom.cols());
        let mut out = vec![0.0; n * o * ho * wo];
        let mut cols = vec![0.0; rows * ncol];
        let xd = self.value(x).data();
        let wdata = self.value(w).data();
        for s in 0..n {
            gemm(
                rows,
                c,
                ncol,
                wdata,
                true,
                &xd[s * c * ncol..(s + 1) * c * ncol],
                false,
                0.0,
                &mut cols,
            );
            col2im(
                &cols,
                &geom,
                &mut out[s * o * ho * wo..(s + 1) * o * ho * wo],
            );
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), n, o, ho * wo);
        }
        let t = Tensor::new(&[n, o, ho, wo], out)?;
        Ok(self.push(t, Op::ConvTranspose2d { x, w, b, geom }))
    }

    fn check_bias(&self, op: &'static str, b: Option<Var>, o: usize) -> Result<()> {
        match b {
            Some(b) if self.shape(b) != [o] => shape_err(
                op,
                format!("bias shape {:?}, expected [{o}]", self.shape(b)),
            ),
            _ => Ok(()),
        }
    }

    // ----- pointwise -----

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = self.value(a);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::new(src.shape(), data).expect("same shape");
        self.push(t, op)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |v| v.max(0.0), Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.map(
            a,
            |v| if v > 0.0 { v } else { slope * v },
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |v| s * v, Op::Scale(a, s))
    }

    fn zip(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return shape_err(op_name, format!("{:?} vs {:?}", ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(ta.shape(), data)?;
        Ok(self.push(t, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self
            .value(a)
            .clone()
            .with_requires_grad(false)
            .reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    /// Concatenates 4-d tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat_channels", "no inputs");
        };
        let [n, _, h, w] = self.value(first).dims4("concat_channels")?;
        let mut chans = Vec::with_capacity(parts.len());
        for &p in parts {
            let [pn, pc, ph, pw] = self.value(p).dims4("concat_channels")?;
            if (pn, ph, pw) != (n, h, w) {
                return shape_err(
                    "concat_channels",
                    format!("{:?} vs {:?}", self.shape(p), self.shape(first)),
                );
            }
            chans.push(pc);
        }
        let ctot: usize = chans.iter().sum();
        let hw = h * w;
        let mut out = Vec::with_capacity(n * ctot * hw);
        for s in 0..n {
            for (&p, &pc) in parts.iter().zip(&chans) {
                out.extend_from_slice(&self.value(p).data()[s * pc * hw..(s + 1) * pc * hw]);
            }
        }
        let t = Tensor::new(&[n, ctot, h, w], out)?;
        Ok(self.push(t, Op::Concat(parts.to_vec())))
    }

    // ----- dense layers -----

    /// `x [n, in] * w^T [in, out] + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, fin) = match self.shape(x) {
            &[n, f] => (n, f),
            s => return shape_err("linear", format!("input must be 2-d, got {s:?}")),
        };
        let fout = match self.shape(w) {
            &[o, i] if i == fin => o,
            s => {
                return shape_err(
                    "linear",
                    format!("weight {s:?} does not accept {fin} features"),
                )
            }
        };
        self.check_bias("linear", b, fout)?;
        let mut out = vec![0.0; n * fout];
        gemm(
            n,
            fin,
            fout,
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            0.0,
            &mut out,
        );
        if let Some(b) = b {
            let bd = self.value(b).data();
            for row in out.chunks_mut(fout) {
                row.iter_mut().zip(bd).for_each(|(v, bb)| *v += bb);
            }
        }
        let t = Tensor::new(&[n, fout], out)?;
        Ok(self.push(t, Op::Linear { x, w, b }))
    }

    // ----- pooling / resampling -----

    /// Adaptive average pooling to a `1 x 1` map per channel, flattened to `[n, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("global_avg_pool")?;
        let hw = (h * w) as f64;
        let out = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|p| p.iter().sum::<f64>() / hw)
            .collect();
        let t = Tensor::new(&[n, c], out)?;
        Ok(self.push(t, Op::AdaptiveAvgPool(x)))
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("upsample_nearest")?;
        if factor == 0 {
            return shape_err("upsample_nearest", "factor must be positive");
        }
        let (ho, wo) = (h * factor, w * factor);
        let xd = self.value(x).data();
        let mut out = vec![0.0; n * c * ho * wo];
        for (plane, dst) in xd.chunks(h * w).zip(out.chunks_mut(ho * wo)) {
            for i in 0..ho {
                for j in 0..wo {
                    dst[i * wo + j] = plane[(i / factor) * w + j / factor];
                }
            }
        }
        let t = Tensor::new(&[n, c, ho, wo], out)?;
        Ok(self.push(t, Op::Upsample(x, factor)))
    }

    // ----- normalization -----

    /// Per-instance, per-channel normalization with population variance.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        self.norm(x, None, None, eps)
    }

    /// Adaptive instance normalization: `gamma * (x - mean) / std + beta`,
    /// with `gamma`, `beta` of shape `[n, c]`.
    pub fn adain(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        self.norm(x, Some(gamma), Some(beta), eps)
    }

    fn norm(&mut self, x: Var, gamma: Option<Var>, beta: Option<Var>, eps: f64) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("instance_norm")?;
        for p in [gamma, beta].into_iter().flatten() {
            if self.shape(p) != [n, c] {
                return shape_err(
                    "adain",
                    format!("affine params {:?}, expected [{n}, {c}]", self.shape(p)),
                );
            }
        }
        let m = h * w;
        let xd = self.value(x).data();
        let mut xhat = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; n * c];
        for (k, (plane, dst)) in xd.chunks(m).zip(xhat.chunks_mut(m)).enumerate() {
            let mean = plane.iter().sum::<f64>() / m as f64;
            let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[k] = is;
            for (d, v) in dst.iter_mut().zip(plane) {
                *d = (v - mean) * is;
            }
        }
        let mut out = xhat.clone();
        if let (Some(g), Some(b)) = (gamma, beta) {
            let (gd, bd) = (self.value(g).data(), self.value(b).data());
            for (k, plane) in out.chunks_mut(m).enumerate() {
                plane.iter_mut().for_each(|v| *v = gd[k] * *v + bd[k]);
            }
        }
        let t = Tensor::new(&[n, c, h, w], out)?;
        Ok(self.push(
            t,
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Divides a weight by `u^T W v`, treating the power-iteration vectors as constants.
    pub fn spectral_norm(&mut self, w: Var, u: &[f64], v: &[f64]) -> Result<Var> {
        let shape = self.shape(w).to_vec();
        let rows = shape.first().copied().unwrap_or(0);
        let cols = Tensor::numel(&shape) / rows.max(1);
        if u.len() != rows || v.len() != cols {
            return shape_err(
                "spectral_norm",
                format!("u/v lengths {}/{} for weight {shape:?}", u.len(), v.len()),
            );
        }
        let sigma = bilinear(u, self.value(w).data(), v);
        let data = self.value(w).data().iter().map(|x| x / sigma).collect();
        let t = Tensor::new(&shape, data)?;
        Ok(self.push(
            t,
            Op::SpectralNorm {
                w,
                u: u.to_vec(),
                v: v.to_vec(),
                sigma,
            },
        ))
    }

    // ----- reductions and losses -----

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Mean absolute difference.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.diff("l1_loss", a, b)?;
        let s = d.iter().map(|v| v.abs()).sum::<f64>() / d.len() as f64;
        Ok(self.push(Tensor::scalar(s), Op::L1(a, b)))
    }

    /// Mean squared difference.
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.diff("mse_loss", a, b)?;
        let s = d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64;
        Ok(self.push(Tensor::scalar(s), Op::Mse(a, b)))
    }

    /// Mean squared difference to a constant target value.
    pub fn mse_to(&mut self, a: Var, target: f64) -> Result<Var> {
        let t = self.constant(Tensor::full(self.shape(a), target));
        self.mse_loss(a, t)
    }

    /// `sum(a * k)` for a constant `k`; seeds a vector-Jacobian product.
    pub fn dot_const(&mut self, a: Var, k: &[f64]) -> Result<Var> {
        if self.value(a).len() != k.len() {
            return shape_err(
                "dot_const",
                format!("{} values vs {}", self.value(a).len(), k.len()),
            );
        }
        let s = self.value(a).data().iter().zip(k).map(|(x, y)| x * y).sum();
        Ok(self.push(Tensor::scalar(s), Op::DotConst(a, k.to_vec())))
    }

    fn diff(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<f64>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return shape_err(op, format!("{:?} vs {:?}", ta.shape(), tb.shape()));
        }
        Ok(ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x - y)
            .collect())
    }

    // ----- backward -----

    /// Clears every gradient on the tape.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Back-propagates from a scalar `loss`.
    ///
    /// Gradients on leaves accumulate across calls; interior gradients are
    /// recomputed from scratch on every call.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss).to_vec();
        if Tensor::numel(&shape) != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        for node in &mut self.nodes {
            if !matches!(node.op, Op::Leaf) {
                node.grad = None;
            }
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        accumulate(&mut self.nodes[loss.0].grad, &[1.0]);
        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) || !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contribs = self.node_vjp(i, &g);
            self.nodes[i].grad = Some(g);
            for (p, d) in contribs {
                accumulate(&mut self.nodes[p.0].grad, &d);
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Vector-Jacobian products of node `i` for each parent needing a gradient.
    fn node_vjp(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let out = node.value.data();
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let n = self.shape(*x)[0];
                let o = self.shape(*w)[0];
                let (rows, ncol) = (geom.rows(), geom.cols());
                let in_sz = geom.c * geom.h * geom.w;
                let xd = self.value(*x).data();
                let wd = self.value(*w).data();
                let mut cols = vec![0.0; rows * ncol];
                if self.wants(*w) {
                    let mut dw = vec![0.0; o * rows];
                    for s in 0..n {
                        im2col(&xd[s * in_sz..(s + 1) * in_sz], geom, &mut cols);
                        gemm(
                            o,
                            ncol,
                            rows,
                            &g[s * o * ncol..(s + 1) * o * ncol],
                            false,
                            &cols,
                            true,
                            1.0,
                            &mut dw,
                        );
                    }
                    res.push((*w, dw));
                }
                if self.wants(*x) {
                    let mut dx = vec![0.0; xd.len()];
                    for s in 0..n {
                        gemm(
                            rows,
                            o,
                            ncol,
                            wd,
                            true,
                            &g[s * o * ncol..(s + 1) * o * ncol],
                            false,
                            0.0,
                            &mut cols,
                        );
                        col2im(&cols, geom, &mut dx[s * in_sz..(s + 1) * in_sz]);
                    }
                    res.push((*x, dx));
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    res.push((b, channel_sums(g, n, o, ncol)));
                }
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let [n, c, _, _] = self.value(*x).dims4("").expect("4-d");
                let o = geom.c;
                let (rows, ncol) = (geom.rows(), geom.cols());
                let out_sz = o * geom.h * geom.w;
                let xd = self.value(*x).data();
                let wd = self.value(*w).data();
                let mut cols = vec![0.0; rows * ncol];
                let mut dx = self.wants(*x).then(|| vec![0.0; xd.len()]);
                let mut dw = self.wants(*w).then(|| vec![0.0; c * rows]);
                for s in 0..n {
                    im2col(&g[s * out_sz..(s + 1) * out_sz], geom, &mut cols);
                    if let Some(dx) = dx.as_mut() {
                        gemm(
                            c,
                            rows,
                            ncol,
                            wd,
                            false,
                            &cols,
                            false,
                            0.0,
                            &mut dx[s * c * ncol..(s + 1) * c * ncol],
                        );
                    }
                    if let Some(dw) = dw.as_mut() {
                        gemm(
                            c,
                            ncol,
                            rows,
                            &xd[s * c * ncol..(s + 1) * c * ncol],
                            false,
                            &cols,
                            true,
                            1.0,
                            dw,
                        );
                    }
                }
                res.extend(dx.map(|d| (*x, d)));
                res.extend(dw.map(|d| (*w, d)));
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    res.push((b, channel_sums(g, n, o, geom.h * geom.w)));
                }
            }
            Op::Relu(a) => {
                let d = g
                    .iter()
                    .zip(out)
                    .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                    .collect();
                res.push((*a, d));
            }
            Op::LeakyRelu(a, slope) => {
                let xd = self.value(*a).data();
                let d = g
                    .iter()
                    .zip(xd)
                    .map(|(g, x)| if *x > 0.0 { *g } else { slope * g })
                    .collect();
                res.push((*a, d));
            }
            Op::Tanh(a) => {
                let d = g.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)).collect();
                res.push((*a, d));
            }
            Op::Scale(a, s) => res.push((*a, g.iter().map(|v| v * s).collect())),
            Op::Add(a, b) => {
                if self.wants(*a) {
                    res.push((*a, g.to_vec()));
                }
                if self.wants(*b) {
                    res.push((*b, g.to_vec()));
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    res.push((*a, g.to_vec()));
                }
                if self.wants(*b) {
                    res.push((*b, g.iter().map(|v| -v).collect()));
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    res.push((*a, g.iter().zip(bd).map(|(g, y)| g * y).collect()));
                }
                if self.wants(*b) {
                    res.push((*b, g.iter().zip(ad).map(|(g, x)| g * x).collect()));
                }
            }
            Op::Reshape(a) => res.push((*a, g.to_vec())),
            Op::Concat(parts) => {
                let [n, ctot, h, w] = node.value.dims4("").expect("4-d");
                let hw = h * w;
                let mut offset = 0;
                for &p in parts {
                    let pc = self.shape(p)[1];
                    if self.wants(p) {
                        let mut d = Vec::with_capacity(n * pc * hw);
                        for s in 0..n {
                            let start = (s * ctot + offset) * hw;
                            d.extend_from_slice(&g[start..start + pc * hw]);
                        }
                        res.push((p, d));
                    }
                    offset += pc;
                }
            }
            Op::Linear { x, w, b } => {
                let (n, fin) = (self.shape(*x)[0], self.shape(*x)[1]);
                let fout = self.shape(*w)[0];
                if self.wants(*x) {
                    let mut dx = vec![0.0; n * fin];
                    gemm(
                        n,
                        fout,
                        fin,
                        g,
                        false,
                        self.value(*w).data(),
                        false,
                        0.0,
                        &mut dx,
                    );
                    res.push((*x, dx));
                }
                if self.wants(*w) {
                    let mut dw = vec![0.0; fout * fin];
                    gemm(
                        fout,
                        n,
                        fin,
                        g,
                        true,
                        self.value(*x).data(),
                        false,
                        0.0,
                        &mut dw,
                    );
                    res.push((*w, dw));
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    let mut db = vec![0.0; fout];
                    for row in g.chunks(fout) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    res.push((b, db));
                }
            }
            Op::AdaptiveAvgPool(x) => {
                let [_, _, h, w] = self.value(*x).dims4("").expect("4-d");
                let hw = h * w;
                let mut d = Vec::with_capacity(g.len() * hw);
                for v in g {
                    d.extend(std::iter::repeat_n(v / hw as f64, hw));
                }
                res.push((*x, d));
            }
            Op::Upsample(x, f) => {
                let [_, _, h, w] = self.value(*x).dims4("").expect("4-d");
                let (ho, wo) = (h * f, w * f);
                let mut d = vec![0.0; self.value(*x).len()];
                for (src, dst) in g.chunks(ho * wo).zip(d.chunks_mut(h * w)) {
                    for i in 0..ho {
                        for j in 0..wo {
                            dst[(i / f) * w + j / f] += src[i * wo + j];
                        }
                    }
                }
                res.push((*x, d));
            }
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let [_, _, h, w] = self.value(*x).dims4("").expect("4-d");
                let m = h * w;
                let gd = gamma.map(|gv| self.value(gv).data());
                if self.wants(*x) {
                    let mut dx = vec![0.0; xhat.len()];
                    for (k, ((gp, xp), dp)) in g
                        .chunks(m)
                        .zip(xhat.chunks(m))
                        .zip(dx.chunks_mut(m))
                        .enumerate()
                    {
                        let scale = gd.map_or(1.0, |gd| gd[k]);
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for (gv, xv) in gp.iter().zip(xp) {
                            mean_d += scale * gv;
                            mean_dx += scale * gv * xv;
                        }
                        mean_d /= m as f64;
                        mean_dx /= m as f64;
                        for ((d, gv), xv) in dp.iter_mut().zip(gp).zip(xp) {
                            *d = inv_std[k] * (scale * gv - mean_d - xv * mean_dx);
                        }
                    }
                    res.push((*x, dx));
                }
                if let Some(gv) = gamma.filter(|v| self.wants(*v)) {
                    let d = g
                        .chunks(m)
                        .zip(xhat.chunks(m))
                        .map(|(gp, xp)| gp.iter().zip(xp).map(|(a, b)| a * b).sum())
                        .collect();
                    res.push((gv, d));
                }
                if let Some(bv) = beta.filter(|v| self.wants(*v)) {
                    res.push((bv, g.chunks(m).map(|gp| gp.iter().sum()).collect()));
                }
            }
            Op::SpectralNorm { w, u, v, sigma } => {
                let wd = self.value(*w).data();
                let cols = v.len();
                let inner: f64 = g.iter().zip(wd).map(|(a, b)| a * b).sum();
                let coef = inner / (sigma * sigma);
                let mut d: Vec<f64> = g.iter().map(|x| x / sigma).collect();
                for (r, ur) in u.iter().enumerate() {
                    for (c, vc) in v.iter().enumerate() {
                        d[r * cols + c] -= coef * ur * vc;
                    }
                }
                res.push((*w, d));
            }
            Op::Sum(a) => res.push((*a, vec![g[0]; self.value(*a).len()])),
            Op::Mean(a) => {
                let n = self.value(*a).len();
                res.push((*a, vec![g[0] / n as f64; n]));
            }
            Op::L1(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let k = g[0] / ad.len() as f64;
                let d: Vec<f64> = ad.iter().zip(bd).map(|(x, y)| k * sign(x - y)).collect();
                if self.wants(*b) {
                    res.push((*b, d.iter().map(|v| -v).collect()));
                }
                if self.wants(*a) {
                    res.push((*a, d));
                }
            }
            Op::Mse(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let k = 2.0 * g[0] / ad.len() as f64;
                let d: Vec<f64> = ad.iter().zip(bd).map(|(x, y)| k * (x - y)).collect();
                if self.wants(*b) {
                    res.push((*b, d.iter().map(|v| -v).collect()));
                }
                if self.wants(*a) {
                    res.push((*a, d));
                }
            }
            Op::DotConst(a, k) => res.push((*a, k.iter().map(|v| v * g[0]).collect())),
        }
        res.retain(|(p, _)| self.wants(*p));
        res
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, d: &[f64]) {
    match slot {
        Some(g) => g.iter_mut().zip(d).for_each(|(a, b)| *a += b),
        None => *slot = Some(d.to_vec()),
    }
}

fn add_channel_bias(out: &mut [f64], bias: &[f64], n: usize, o: usize, plane: usize) {
    for s in 0..n {
        for (ch, b) in bias.iter().enumerate().take(o) {
            let start = (s * o + ch) * plane;
            out[start..start + plane].iter_mut().for_each(|v| *v += b);
        }
    }
}

fn channel_sums(g: &[f64], n: usize, o: usize, plane: usize) -> Vec<f64> {
    let mut db = vec![0.0; o];
    for s in 0..n {
        for (ch, d) in db.iter_mut().enumerate() {
            let start = (s * o + ch) * plane;
            *d += g[start..start + plane].iter().sum::<f64>();
        }
    }
    db
}

/// `u^T W v` for `W` stored row-major with `u.len()` rows.
pub(crate) fn bilinear(u: &[f64], w: &[f64], v: &[f64]) -> f64 {
    w.chunks(v.len())
        .zip(u)
        .map(|(row, ur)| ur * row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}
