//! Operation tape and reverse sweep.
//!
//! Values live on the tape; a [`Var`] is just a node index. Every operator
//! checks shapes eagerly and records how to propagate gradients only when
//! one of its inputs requires them. [`Tape::backward`] consumes the tape.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::conv::{self, Geom};
use super::energy::EdrBasis;
use super::tensor::Tensor;
use crate::error::{invalid, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Running mean/variance of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

enum Op {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        g: Geom,
    },
    /// `g` is the geometry of the correlation this op is the input adjoint of.
    ConvT {
        x: Var,
        w: Var,
        b: Option<Var>,
        g: Geom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Prelu {
        x: Var,
        slope: Var,
    },
    Tanh {
        x: Var,
    },
    BandEnergy {
        x: Var,
        basis: Rc<EdrBasis>,
        re: Vec<f64>,
        im: Vec<f64>,
    },
    Mse {
        a: Var,
        b: Var,
    },
    BceLogit {
        logits: Var,
        target: f64,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        k: f64,
    },
    Sum {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    ConcatChannels {
        a: Var,
        b: Var,
    },
    FitLength {
        x: Var,
    },
}

struct Node {
    value: Rc<Tensor>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Records operations for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

/// Gradients of the leaves that required them.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(&v.0)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.remove(&v.0)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn check_bias(b: Option<&Tensor>, channels: usize) -> Result<()> {
    match b {
        Some(b) if b.shape() != [channels] => Err(Error::Shape(format!(
            "bias shape {:?} does not match {channels} output channels",
            b.shape()
        ))),
        _ => Ok(()),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

type GradSlots = Vec<Option<Vec<f64>>>;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        let op = if requires_grad { op } else { Op::Leaf };
        inner.nodes.push(Node {
            value: Rc::new(value),
            requires_grad,
            op,
        });
        Var(id)
    }

    fn get(&self, v: Var) -> Result<Rc<Tensor>> {
        let inner = self.inner.borrow();
        if inner.consumed {
            return Err(Error::TapeConsumed);
        }
        inner
            .nodes
            .get(v.0)
            .map(|n| Rc::clone(&n.value))
            .ok_or_else(|| invalid!("variable {} is not on this tape", v.0))
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let inner = self.inner.borrow();
        vars.iter().any(|v| inner.nodes[v.0].requires_grad)
    }

    /// Adds an input; set `requires_grad` for parameters whose gradients are
    /// wanted.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> Result<Rc<Tensor>> {
        self.get(v)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.inner
            .borrow()
            .nodes
            .get(v.0)
            .is_some_and(|n| n.requires_grad)
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Strided 1-D cross-correlation. `x: [B, Cin, L]`, `w: [Cout, Cin, K]`,
    /// output length `(L + 2p − K)/s + 1`.
    pub fn conv1d(
        &self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let xv = self.get(x)?;
        let wv = self.get(w)?;
        let bv = bias.map(|b| self.get(b)).transpose()?;
        let (batch, cin, lin) = xv.dims3("conv1d input")?;
        let (cout, wi, k) = wv.dims3("conv1d weight")?;
        if stride == 0 {
            return Err(Error::InvalidConfig("stride must be at least 1".into()));
        }
        if wi != cin || k == 0 || k > lin + 2 * padding {
            return Err(Error::Shape(format!(
                "conv1d: weight {:?} does not fit input {:?} with padding {padding}",
                wv.shape(),
                xv.shape()
            )));
        }
        check_bias(bv.as_deref(), cout)?;
        let g = Geom {
            batch,
            cin,
            cout,
            lin,
            lout: (lin + 2 * padding - k) / stride + 1,
            k,
            stride,
            padding,
        };
        let y = conv::forward(xv.data(), wv.data(), bv.as_ref().map(|b| b.data()), g);
        let out = Tensor::new(vec![batch, cout, g.lout], y)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        let rg = self.needs(&inputs);
        Ok(self.push(out, rg, Op::Conv { x, w, b: bias, g }))
    }

    /// Transposed 1-D convolution. `x: [B, Cin, L]`, `w: [Cin, Cout, K]`,
    /// output length `(L − 1)·s − 2p + K + output_padding`.
    pub fn conv_transpose1d(
        &self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var> {
        let xv = self.get(x)?;
        let wv = self.get(w)?;
        let bv = bias.map(|b| self.get(b)).transpose()?;
        let (batch, cin, l) = xv.dims3("conv_transpose1d input")?;
        let (wi, cout, k) = wv.dims3("conv_transpose1d weight")?;
        if stride == 0 || output_padding >= stride {
            return Err(Error::InvalidConfig(format!(
                "output_padding {output_padding} must be smaller than stride {stride}"
            )));
        }
        let full = (l.max(1) - 1) * stride + k + output_padding;
        if wi != cin || l == 0 || full <= 2 * padding {
            return Err(Error::Shape(format!(
                "conv_transpose1d: weight {:?} does not fit input {:?} with padding {padding}",
                wv.shape(),
                xv.shape()
            )));
        }
        check_bias(bv.as_deref(), cout)?;
        let lout = full - 2 * padding;
        let g = Geom {
            batch,
            cin: cout,
            cout: cin,
            lin: lout,
            lout: l,
            k,
            stride,
            padding,
        };
        let mut y = conv::backward_input(xv.data(), wv.data(), g);
        if let Some(b) = &bv {
            for (idx, v) in y.iter_mut().enumerate() {
                *v += b.data()[(idx / lout) % cout];
            }
        }
        let out = Tensor::new(vec![batch, cout, lout], y)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        let rg = self.needs(&inputs);
        Ok(self.push(out, rg, Op::ConvT { x, w, b: bias, g }))
    }

    /// Per-channel batch normalisation of `[B, C, L]`.
    ///
    /// Train mode normalises with batch statistics (biased variance) and
    /// folds them into `stats` with momentum 0.1, using the unbiased
    /// variance for the running estimate. Eval mode normalises with `stats`.
    pub fn batchnorm1d(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats,
        mode: BnMode,
    ) -> Result<Var> {
        let xv = self.get(x)?;
        let gv = self.get(gamma)?;
        let bv = self.get(beta)?;
        let (batch, c, l) = xv.dims3("batchnorm input")?;
        for (name, t) in [("gamma", &gv), ("beta", &bv)] {
            if t.shape() != [c] {
                return Err(Error::Shape(format!(
                    "batchnorm {name} shape {:?} does not match {c} channels",
                    t.shape()
                )));
            }
        }
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(Error::Shape(format!(
                "batchnorm running stats have {} channels, input has {c}",
                stats.mean.len()
            )));
        }
        let train = mode == BnMode::Train;
        if train && batch < 2 {
            return Err(invalid!(
                "batchnorm in train mode needs a batch of at least 2, got {batch}"
            ));
        }
        let n = (batch * l) as f64;
        let xs = xv.data();
        let rows = |ch: usize| (0..batch).flat_map(move |b| xs[(b * c + ch) * l..][..l].iter());
        let mut mean = vec![0.0; c];
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let (m, var) = if train {
                let m = rows(ch).sum::<f64>() / n;
                let ss: f64 = rows(ch).map(|v| (v - m) * (v - m)).sum();
                stats.mean[ch] = (1.0 - BN_MOMENTUM) * stats.mean[ch] + BN_MOMENTUM * m;
                stats.var[ch] =
                    (1.0 - BN_MOMENTUM) * stats.var[ch] + BN_MOMENTUM * ss / (n - 1.0);
                (m, ss / n)
            } else {
                (stats.mean[ch], stats.var[ch])
            };
            mean[ch] = m;
            inv_std[ch] = 1.0 / (var + BN_EPS).sqrt();
        }
        let mut xhat = vec![0.0; xs.len()];
        let mut y = vec![0.0; xs.len()];
        for (idx, &v) in xs.iter().enumerate() {
            let ch = (idx / l) % c;
            xhat[idx] = (v - mean[ch]) * inv_std[ch];
            y[idx] = gv.data()[ch] * xhat[idx] + bv.data()[ch];
        }
        let out = Tensor::new(xv.shape().to_vec(), y)?;
        let rg = self.needs(&[x, gamma, beta]);
        Ok(self.push(
            out,
            rg,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
        ))
    }

    pub fn leaky_relu(&self, x: Var, slope: f64) -> Result<Var> {
        let xv = self.get(x)?;
        let y = xv
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        let out = Tensor::new(xv.shape().to_vec(), y)?;
        let rg = self.needs(&[x]);
        Ok(self.push(out, rg, Op::LeakyRelu { x, slope }))
    }

    /// Leaky ReLU with a learnable slope per channel. `slope: [C]`.
    pub fn prelu(&self, x: Var, slope: Var) -> Result<Var> {
        let xv = self.get(x)?;
        let av = self.get(slope)?;
        let (_, c, l) = xv.dims3("prelu input")?;
        if av.shape() != [c] {
            return Err(Error::Shape(format!(
                "prelu slope shape {:?} does not match {c} channels",
                av.shape()
            )));
        }
        let y = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if v > 0.0 { v } else { av.data()[(i / l) % c] * v })
            .collect();
        let out = Tensor::new(xv.shape().to_vec(), y)?;
        let rg = self.needs(&[x, slope]);
        Ok(self.push(out, rg, Op::Prelu { x, slope }))
    }

    pub fn tanh(&self, x: Var) -> Result<Var> {
        let xv = self.get(x)?;
        let y = xv.data().iter().map(|v| v.tanh()).collect();
        let out = Tensor::new(xv.shape().to_vec(), y)?;
        let rg = self.needs(&[x]);
        Ok(self.push(out, rg, Op::Tanh { x }))
    }

    /// Energy decay relief of each signal in `x: [B, 1, L]`, returned as
    /// `[B, bands, frames]`.
    pub fn edr(&self, x: Var, basis: &Rc<EdrBasis>) -> Result<Var> {
        let xv = self.get(x)?;
        let (batch, c, l) = xv.dims3("edr input")?;
        if c != 1 || l != basis.signal_len() {
            return Err(Error::Shape(format!(
                "edr basis expects [B, 1, {}], got {:?}",
                basis.signal_len(),
                xv.shape()
            )));
        }
        let (re, im, y) = basis.forward(xv.data(), batch);
        let out = Tensor::new(vec![batch, basis.n_bands(), basis.n_frames()], y)?;
        let rg = self.needs(&[x]);
        Ok(self.push(
            out,
            rg,
            Op::BandEnergy {
                x,
                basis: Rc::clone(basis),
                re,
                im,
            },
        ))
    }

    /// Mean squared difference, a scalar.
    pub fn mse_loss(&self, a: Var, b: Var) -> Result<Var> {
        let av = self.get(a)?;
        let bv = self.get(b)?;
        if av.shape() != bv.shape() || av.numel() == 0 {
            return Err(Error::Shape(format!(
                "mse_loss: shapes {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let s: f64 = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::scalar(s / av.numel() as f64), rg, Op::Mse { a, b }))
    }

    /// Mean binary cross-entropy of logits against a constant target,
    /// computed as `max(l,0) − l·y + ln(1 + e^{−|l|})`.
    pub fn bce_logit_loss(&self, logits: Var, target: f64) -> Result<Var> {
        let lv = self.get(logits)?;
        if lv.numel() == 0 {
            return Err(Error::Shape("bce_logit_loss on an empty tensor".into()));
        }
        let s: f64 = lv
            .data()
            .iter()
            .map(|&l| l.max(0.0) - l * target + (-l.abs()).exp().ln_1p())
            .sum();
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(s / lv.numel() as f64),
            rg,
            Op::BceLogit { logits, target },
        ))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let av = self.get(a)?;
        let bv = self.get(b)?;
        if av.shape() != bv.shape() {
            return Err(Error::Shape(format!(
                "add: shapes {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let y = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(av.shape().to_vec(), y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, rg, Op::Add { a, b }))
    }

    pub fn scale(&self, x: Var, k: f64) -> Result<Var> {
        let xv = self.get(x)?;
        let out = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|v| k * v).collect())?;
        let rg = self.needs(&[x]);
        Ok(self.push(out, rg, Op::Scale { x, k }))
    }

    pub fn sum(&self, x: Var) -> Result<Var> {
        let xv = self.get(x)?;
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::scalar(xv.data().iter().sum()), rg, Op::Sum { x }))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.get(x)?;
        let out = Tensor::new(shape.to_vec(), xv.data().to_vec())?;
        let rg = self.needs(&[x]);
        Ok(self.push(out, rg, Op::Reshape { x }))
    }

    /// Stacks `a: [B, Ca, L]` and `b: [B, Cb, L]` into `[B, Ca + Cb, L]`.
    pub fn concat_channels(&self, a: Var, b: Var) -> Result<Var> {
        let av = self.get(a)?;
        let bv = self.get(b)?;
        let (ba, ca, la) = av.dims3("concat input")?;
        let (bb, cb, lb) = bv.dims3("concat input")?;
        if ba != bb || la != lb {
            return Err(Error::Shape(format!(
                "concat_channels: shapes {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let mut y = Vec::with_capacity(av.numel() + bv.numel());
        for b in 0..ba {
            y.extend_from_slice(&av.data()[b * ca * la..][..ca * la]);
            y.extend_from_slice(&bv.data()[b * cb * lb..][..cb * lb]);
        }
        let out = Tensor::new(vec![ba, ca + cb, la], y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, rg, Op::ConcatChannels { a, b }))
    }

    /// Crops or zero-pads the last axis of `[B, C, L]` to `len`.
    pub fn fit_length(&self, x: Var, len: usize) -> Result<Var> {
        let xv = self.get(x)?;
        let (b, c, l) = xv.dims3("fit_length input")?;
        let n = l.min(len);
        let mut y = vec![0.0; b * c * len];
        for r in 0..b * c {
            y[r * len..][..n].copy_from_slice(&xv.data()[r * l..][..n]);
        }
        let out = Tensor::new(vec![b, c, len], y)?;
        let rg = self.needs(&[x]);
        Ok(self.push(out, rg, Op::FitLength { x }))
    }

    /// Reverse sweep from a one-element `loss`. Returns gradients for every
    /// leaf that requires one and consumes the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = {
            let mut inner = self.inner.borrow_mut();
            if inner.consumed {
                return Err(Error::TapeConsumed);
            }
            let node = inner
                .nodes
                .get(loss.0)
                .ok_or_else(|| invalid!("variable {} is not on this tape", loss.0))?;
            if node.value.numel() != 1 {
                return Err(Error::InvalidInput(format!(
                    "backward needs a scalar loss, got shape {:?}",
                    node.value.shape()
                )));
            }
            inner.consumed = true;
            std::mem::take(&mut inner.nodes)
        };
        let mut out = Gradients::default();
        if !nodes[loss.0].requires_grad {
            return Ok(out);
        }
        let mut grads: GradSlots = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        let acc = |grads: &mut GradSlots, v: Var, g: Vec<f64>| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&g).for_each(|(e, d)| *e += d),
                slot => *slot = Some(g),
            }
        };
        let val = |v: Var| &nodes[v.0].value;
        let wants = |v: Var| nodes[v.0].requires_grad;

        for id in (0..=loss.0).rev() {
            let Some(dy) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => {
                    if node.requires_grad {
                        out.grads
                            .insert(id, Tensor::new(node.value.shape().to_vec(), dy)?);
                    }
                }
                Op::Conv { x, w, b, g } => {
                    if wants(*x) {
                        acc(&mut grads, *x, conv::backward_input(&dy, val(*w).data(), *g));
                    }
                    if wants(*w) {
                        acc(&mut grads, *w, conv::backward_weight(&dy, val(*x).data(), *g));
                    }
                    if let Some(b) = b {
                        acc(&mut grads, *b, conv::channel_sums(&dy, g.batch, g.cout, g.lout));
                    }
                }
                Op::ConvT { x, w, b, g } => {
                    if wants(*x) {
                        acc(&mut grads, *x, conv::forward(&dy, val(*w).data(), None, *g));
                    }
                    if wants(*w) {
                        acc(&mut grads, *w, conv::backward_weight(val(*x).data(), &dy, *g));
                    }
                    if let Some(b) = b {
                        acc(&mut grads, *b, conv::channel_sums(&dy, g.batch, g.cin, g.lin));
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
                    let (batch, c, l) = val(*x).dims3("batchnorm input")?;
                    let gam = val(*gamma).data();
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    for (idx, &d) in dy.iter().enumerate() {
                        let ch = (idx / l) % c;
                        dgamma[ch] += d * xhat[idx];
                        dbeta[ch] += d;
                    }
                    if wants(*x) {
                        let n = (batch * l) as f64;
                        let dx = dy
                            .iter()
                            .enumerate()
                            .map(|(idx, &d)| {
                                let ch = (idx / l) % c;
                                if *train {
                                    // With dxhat = γ·dy: Σdxhat = γ·dβ and Σdxhat·xhat = γ·dγ.
                                    gam[ch] * inv_std[ch] / n
                                        * (n * d - dbeta[ch] - xhat[idx] * dgamma[ch])
                                } else {
                                    d * gam[ch] * inv_std[ch]
                                }
                            })
                            .collect();
                        acc(&mut grads, *x, dx);
                    }
                    acc(&mut grads, *gamma, dgamma);
                    acc(&mut grads, *beta, dbeta);
                }
                Op::LeakyRelu { x, slope } => {
                    let dx = dy
                        .iter()
                        .zip(val(*x).data())
                        .map(|(&d, &v)| if v > 0.0 { d } else { slope * d })
                        .collect();
                    acc(&mut grads, *x, dx);
                }
                Op::Prelu { x, slope } => {
                    let xv = val(*x);
                    let (_, c, l) = xv.dims3("prelu input")?;
                    let a = val(*slope).data();
                    let mut da = vec![0.0; c];
                    let mut dx = vec![0.0; dy.len()];
                    for (idx, (&d, &v)) in dy.iter().zip(xv.data()).enumerate() {
                        let ch = (idx / l) % c;
                        if v > 0.0 {
                            dx[idx] = d;
                        } else {
                            dx[idx] = a[ch] * d;
                            da[ch] += d * v;
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *slope, da);
                }
                Op::Tanh { x } => {
                    let dx = dy
                        .iter()
                        .zip(node.value.data())
                        .map(|(&d, &y)| d * (1.0 - y * y))
                        .collect();
                    acc(&mut grads, *x, dx);
                }
                Op::BandEnergy { x, basis, re, im } => {
                    let batch = val(*x).shape()[0];
                    acc(&mut grads, *x, basis.backward(&dy, re, im, batch));
                }
                Op::Mse { a, b } => {
                    let av = val(*a).data();
                    let bv = val(*b).data();
                    let k = 2.0 * dy[0] / av.len() as f64;
                    let da: Vec<f64> = av.iter().zip(bv).map(|(x, y)| k * (x - y)).collect();
                    if wants(*b) {
                        acc(&mut grads, *b, da.iter().map(|v| -v).collect());
                    }
                    acc(&mut grads, *a, da);
                }
                Op::BceLogit { logits, target } => {
                    let lv = val(*logits).data();
                    let k = dy[0] / lv.len() as f64;
                    let dl = lv.iter().map(|&l| k * (sigmoid(l) - target)).collect();
                    acc(&mut grads, *logits, dl);
                }
                Op::Add { a, b } => {
                    acc(&mut grads, *b, dy.clone());
                    acc(&mut grads, *a, dy);
                }
                Op::Scale { x, k } => {
                    acc(&mut grads, *x, dy.iter().map(|d| k * d).collect());
                }
                Op::Sum { x } => {
                    acc(&mut grads, *x, vec![dy[0]; val(*x).numel()]);
                }
                Op::Reshape { x } => acc(&mut grads, *x, dy),
                Op::ConcatChannels { a, b } => {
                    let (batch, ca, l) = val(*a).dims3("concat input")?;
                    let cb = val(*b).shape()[1];
                    let mut da = Vec::with_capacity(batch * ca * l);
                    let mut db = Vec::with_capacity(batch * cb * l);
                    for chunk in dy.chunks((ca + cb) * l) {
                        da.extend_from_slice(&chunk[..ca * l]);
                        db.extend_from_slice(&chunk[ca * l..]);
                    }
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::FitLength { x } => {
                    let (b, c, l) = val(*x).dims3("fit_length input")?;
                    let len = node.value.shape()[2];
                    let n = l.min(len);
                    let mut dx = vec![0.0; b * c * l];
                    for r in 0..b * c {
                        dx[r * l..][..n].copy_from_slice(&dy[r * len..][..n]);
                    }
                    acc(&mut grads, *x, dx);
                }
            }
        }
        Ok(out)
    }
}
