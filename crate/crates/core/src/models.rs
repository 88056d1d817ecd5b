//! The encoder-decoder RIR estimator and the conditional discriminator.
//!
//! Both networks are plain stacks of [`LayerSpec`]s, so alternative layer
//! schedules are configuration changes. Layer arithmetic is traced and
//! checked when a network is built.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BnMode, Checkpoint, RunningStats, Tape, Tensor, Var};
use crate::dsp::Signal;
use crate::error::{invalid, Error, Result};
use crate::Profile;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const PRELU_INIT: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    ConvTranspose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    None,
    LeakyRelu,
    Prelu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    #[serde(default)]
    pub output_padding: usize,
    pub batchnorm: bool,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn conv(cin: usize, cout: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kind: LayerKind::Conv,
            in_channels: cin,
            out_channels: cout,
            kernel,
            stride,
            padding,
            output_padding: 0,
            batchnorm: false,
            activation: Activation::None,
        }
    }

    pub fn conv_t(cin: usize, cout: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kind: LayerKind::ConvTranspose,
            ..Self::conv(cin, cout, kernel, stride, padding)
        }
    }

    pub fn bn(self) -> Self {
        Self {
            batchnorm: true,
            ..self
        }
    }

    pub fn act(self, activation: Activation) -> Self {
        Self { activation, ..self }
    }

    /// Output length for an input of `len` samples, if the arithmetic works.
    pub fn out_len(&self, len: usize) -> Option<usize> {
        if self.stride == 0 || self.kernel == 0 || len == 0 {
            return None;
        }
        match self.kind {
            LayerKind::Conv => {
                let padded = len + 2 * self.padding;
                (self.kernel <= padded).then(|| (padded - self.kernel) / self.stride + 1)
            }
            LayerKind::ConvTranspose => {
                if self.output_padding >= self.stride {
                    return None;
                }
                ((len - 1) * self.stride + self.kernel + self.output_padding)
                    .checked_sub(2 * self.padding)
                    .filter(|&l| l > 0)
            }
        }
    }

    fn weight_shape(&self) -> [usize; 3] {
        match self.kind {
            LayerKind::Conv => [self.out_channels, self.in_channels, self.kernel],
            LayerKind::ConvTranspose => [self.in_channels, self.out_channels, self.kernel],
        }
    }

    fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv => self.in_channels * self.kernel,
            LayerKind::ConvTranspose => self.in_channels * self.kernel.div_ceil(self.stride),
        }
    }
}

/// Traces `(channels, length)` through `layers`, naming the first layer
/// whose arithmetic fails.
pub fn trace(layers: &[LayerSpec], channels: usize, len: usize) -> Result<Vec<(usize, usize)>> {
    let mut shape = (channels, len);
    let mut out = Vec::with_capacity(layers.len());
    for (i, l) in layers.iter().enumerate() {
        if l.in_channels != shape.0 {
            return Err(Error::InvalidConfig(format!(
                "layer {i} ({:?}) expects {} input channels but receives {}",
                l.kind, l.in_channels, shape.0
            )));
        }
        let len = l.out_len(shape.1).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "layer {i} ({:?}, kernel {}, stride {}, padding {}) cannot take length {}",
                l.kind, l.kernel, l.stride, l.padding, shape.1
            ))
        })?;
        shape = (l.out_channels, len);
        out.push(shape);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub scale: Profile,
    pub input_len: usize,
    pub rir_len: usize,
    pub layers: Vec<LayerSpec>,
}

impl EstimatorConfig {
    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Full => Self::full(),
            Profile::Toy => Self::toy(),
        }
    }

    /// 16 kHz input of one second to a 4096-tap RIR.
    pub fn full() -> Self {
        use Activation::*;
        let dec = |cin, cout| LayerSpec::conv_t(cin, cout, 8, 4, 2).bn().act(Prelu);
        Self {
            scale: Profile::Full,
            input_len: 16_000,
            rir_len: 4096,
            layers: vec![
                LayerSpec::conv(1, 512, 8193, 250, 4096).act(LeakyRelu),
                LayerSpec::conv(512, 1024, 4, 2, 1).bn().act(LeakyRelu),
                LayerSpec::conv(1024, 1024, 4, 2, 1).bn().act(LeakyRelu),
                dec(1024, 512),
                dec(512, 256),
                dec(256, 128),
                dec(128, 64),
                LayerSpec::conv_t(64, 64, 3, 1, 1).bn().act(Prelu),
                LayerSpec::conv_t(64, 1, 3, 1, 1).act(Tanh),
            ],
        }
    }

    /// 8 kHz input of one second to a 256-tap RIR, about 100k parameters.
    pub fn toy() -> Self {
        use Activation::*;
        let up = |cin, cout| LayerSpec::conv_t(cin, cout, 8, 4, 2).bn().act(Prelu);
        let refine = |c| LayerSpec::conv_t(c, c, 3, 1, 1).bn().act(Prelu);
        Self {
            scale: Profile::Toy,
            input_len: 8000,
            rir_len: 256,
            layers: vec![
                LayerSpec::conv(1, 32, 513, 500, 256).act(LeakyRelu),
                LayerSpec::conv(32, 64, 4, 2, 1).bn().act(LeakyRelu),
                LayerSpec::conv(64, 64, 4, 2, 1).bn().act(LeakyRelu),
                up(64, 64),
                up(64, 32),
                refine(32),
                up(32, 16),
                refine(16),
                LayerSpec::conv_t(16, 1, 3, 1, 1).act(Tanh),
            ],
        }
    }

    pub fn first_kernel(&self) -> usize {
        self.layers.first().map_or(0, |l| l.kernel)
    }

    /// Per-layer `(channels, length)` after each layer.
    pub fn trace(&self) -> Result<Vec<(usize, usize)>> {
        trace(&self.layers, 1, self.input_len)
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = self.trace()?;
        match shapes.last() {
            Some(&(1, len)) if len == self.rir_len => Ok(()),
            Some(&(c, len)) => Err(Error::InvalidConfig(format!(
                "estimator ends at {c} channels x {len} samples, expected 1 x {}",
                self.rir_len
            ))),
            None => Err(Error::InvalidConfig("estimator has no layers".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub rir_len: usize,
    /// Leading samples of the reverberant input used as the condition.
    pub condition_len: usize,
    pub layers: Vec<LayerSpec>,
}

impl DiscriminatorConfig {
    pub fn for_profile(profile: Profile) -> Self {
        use Activation::LeakyRelu;
        match profile {
            Profile::Full => {
                let block = |cin, cout| LayerSpec::conv(cin, cout, 8, 4, 2).act(LeakyRelu);
                Self {
                    rir_len: 4096,
                    condition_len: 512,
                    layers: vec![
                        block(2, 32),
                        block(32, 64),
                        block(64, 128),
                        block(128, 256),
                        LayerSpec::conv(256, 1, 16, 1, 0),
                    ],
                }
            }
            Profile::Toy => {
                let block = |cin, cout| LayerSpec::conv(cin, cout, 4, 2, 1).act(LeakyRelu);
                Self {
                    rir_len: 256,
                    condition_len: 512,
                    layers: vec![
                        block(2, 16),
                        block(16, 32),
                        block(32, 64),
                        block(64, 64),
                        LayerSpec::conv(64, 1, 16, 1, 0),
                    ],
                }
            }
        }
    }

    pub fn trace(&self) -> Result<Vec<(usize, usize)>> {
        trace(&self.layers, 2, self.rir_len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.condition_len == 0 {
            return Err(Error::InvalidConfig("condition_len must be positive".into()));
        }
        match self.trace()?.last() {
            Some(&(1, 1)) => Ok(()),
            Some(&(c, len)) => Err(Error::InvalidConfig(format!(
                "discriminator ends at {c} channels x {len} samples, expected a single logit"
            ))),
            None => Err(Error::InvalidConfig("discriminator has no layers".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkConfig {
    Estimator(EstimatorConfig),
    Discriminator(DiscriminatorConfig),
}

impl NetworkConfig {
    fn layers(&self) -> &[LayerSpec] {
        match self {
            NetworkConfig::Estimator(c) => &c.layers,
            NetworkConfig::Discriminator(c) => &c.layers,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            NetworkConfig::Estimator(c) => c.validate(),
            NetworkConfig::Discriminator(c) => c.validate(),
        }
    }
}

/// Indices into [`Network::params`] for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Slots {
    weight: usize,
    bias: usize,
    gamma: Option<usize>,
    beta: Option<usize>,
    prelu: Option<usize>,
}

/// A layer stack with its parameters and batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    slots: Vec<Slots>,
    running: Vec<Option<RunningStats>>,
}

/// Parameters of a [`Network`] placed on a tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Batch-norm running statistics produced by a train-mode forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsUpdate(Vec<Option<RunningStats>>);

fn layout(layers: &[LayerSpec]) -> (Vec<String>, Vec<Vec<usize>>, Vec<Slots>) {
    let mut names = Vec::new();
    let mut shapes = Vec::new();
    let mut slots = Vec::new();
    let mut add = |name: String, shape: Vec<usize>| {
        names.push(name);
        shapes.push(shape);
        names.len() - 1
    };
    for (i, l) in layers.iter().enumerate() {
        let weight = add(format!("layer{i}.weight"), l.weight_shape().to_vec());
        let bias = add(format!("layer{i}.bias"), vec![l.out_channels]);
        let (gamma, beta) = if l.batchnorm {
            (
                Some(add(format!("layer{i}.bn.gamma"), vec![l.out_channels])),
                Some(add(format!("layer{i}.bn.beta"), vec![l.out_channels])),
            )
        } else {
            (None, None)
        };
        let prelu = (l.activation == Activation::Prelu)
            .then(|| add(format!("layer{i}.prelu"), vec![l.out_channels]));
        slots.push(Slots {
            weight,
            bias,
            gamma,
            beta,
            prelu,
        });
    }
    (names, shapes, slots)
}

impl Network {
    fn build(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = config.layers().to_vec();
        let (names, shapes, slots) = layout(&layers);
        let mut params: Vec<Tensor> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
        for (l, s) in layers.iter().zip(&slots) {
            let bound = 1.0 / (l.fan_in() as f64).sqrt();
            for idx in [s.weight, s.bias] {
                for v in params[idx].data_mut() {
                    *v = rng.gen_range(-bound..bound);
                }
            }
            if let Some(g) = s.gamma {
                params[g].data_mut().fill(1.0);
            }
            if let Some(p) = s.prelu {
                params[p].data_mut().fill(PRELU_INIT);
            }
        }
        let running = layers
            .iter()
            .map(|l| l.batchnorm.then(|| RunningStats::new(l.out_channels)))
            .collect();
        Ok(Self {
            config,
            names,
            params,
            slots,
            running,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn running_stats(&self) -> &[Option<RunningStats>] {
        &self.running
    }

    /// Hash of every parameter bit pattern and running statistic.
    pub fn param_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for t in &self.params {
            t.shape().hash(&mut h);
            for v in t.data() {
                v.to_bits().hash(&mut h);
            }
        }
        for s in self.running.iter().flatten() {
            for v in s.mean.iter().chain(&s.var) {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Places the parameters on `tape`, as gradient leaves if `trainable`.
    pub fn bind(&self, tape: &Tape, trainable: bool) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| tape.leaf(p.clone(), trainable))
                .collect(),
        }
    }

    /// Collects gradients in parameter order; missing ones are zero.
    pub fn collect_grads(&self, bound: &Bound, grads: &mut crate::autodiff::Gradients) -> Vec<Tensor> {
        bound
            .vars
            .iter()
            .zip(&self.params)
            .map(|(v, p)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect()
    }

    pub fn apply_stats(&mut self, update: StatsUpdate) {
        self.running = update.0;
    }

    fn run_layers(
        &self,
        tape: &Tape,
        bound: &Bound,
        mut x: Var,
        mode: BnMode,
    ) -> Result<(Var, StatsUpdate)> {
        if bound.vars.len() != self.params.len() {
            return Err(invalid!("parameters bound for a different network"));
        }
        let mut running = self.running.clone();
        let p = |i: usize| bound.vars[i];
        for ((l, s), stats) in self.config.layers().iter().zip(&self.slots).zip(&mut running) {
            x = match l.kind {
                LayerKind::Conv => tape.conv1d(x, p(s.weight), Some(p(s.bias)), l.stride, l.padding)?,
                LayerKind::ConvTranspose => tape.conv_transpose1d(
                    x,
                    p(s.weight),
                    Some(p(s.bias)),
                    l.stride,
                    l.padding,
                    l.output_padding,
                )?,
            };
            if let (Some(g), Some(b), Some(st)) = (s.gamma, s.beta, stats.as_mut()) {
                x = tape.batchnorm1d(x, p(g), p(b), st, mode)?;
            }
            x = match l.activation {
                Activation::None => x,
                Activation::LeakyRelu => tape.leaky_relu(x, LEAKY_SLOPE)?,
                Activation::Prelu => tape.prelu(x, p(s.prelu.expect("prelu slot")))?,
                Activation::Tanh => tape.tanh(x)?,
            };
        }
        Ok((x, StatsUpdate(running)))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut records: Vec<(String, Tensor)> = self
            .names
            .iter()
            .cloned()
            .zip(self.params.iter().cloned())
            .collect();
        for (i, s) in self.running.iter().enumerate() {
            if let Some(s) = s {
                let n = s.mean.len();
                records.push((
                    format!("layer{i}.bn.running_mean"),
                    Tensor::new(vec![n], s.mean.clone()).expect("1-D"),
                ));
                records.push((
                    format!("layer{i}.bn.running_var"),
                    Tensor::new(vec![n], s.var.clone()).expect("1-D"),
                ));
            }
        }
        Checkpoint {
            config: serde_json::to_value(&self.config).expect("configs serialise"),
            records,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: NetworkConfig = serde_json::from_value(ck.config.clone())
            .map_err(|e| Error::InvalidConfig(format!("checkpoint network config: {e}")))?;
        let mut net = Network::build(config, 0)?;
        let fetch = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let t = ck
                .get(name)
                .ok_or_else(|| Error::InvalidConfig(format!("checkpoint lacks {name}")))?;
            if t.shape() != shape {
                return Err(Error::Shape(format!(
                    "checkpoint {name} has shape {:?}, network expects {shape:?}",
                    t.shape()
                )));
            }
            Ok(t.clone())
        };
        for (name, p) in net.names.iter().zip(net.params.iter_mut()) {
            *p = fetch(name, p.shape())?;
        }
        for (i, s) in net.running.iter_mut().enumerate() {
            if let Some(s) = s {
                let n = s.mean.len();
                s.mean = fetch(&format!("layer{i}.bn.running_mean"), &[n])?.into_data();
                s.var = fetch(&format!("layer{i}.bn.running_var"), &[n])?.into_data();
            }
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// The RIR estimator: reverberant speech `[B, 1, input_len]` to RIRs
/// `[B, 1, rir_len]` in (−1, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Estimator {
    pub net: Network,
}

pub fn build_estimator(cfg: &EstimatorConfig, seed: u64) -> Result<Estimator> {
    Ok(Estimator {
        net: Network::build(NetworkConfig::Estimator(cfg.clone()), seed)?,
    })
}

impl Estimator {
    pub fn config(&self) -> &EstimatorConfig {
        match &self.net.config {
            NetworkConfig::Estimator(c) => c,
            NetworkConfig::Discriminator(_) => unreachable!("estimator holds an estimator config"),
        }
    }

    pub fn forward(
        &self,
        tape: &Tape,
        bound: &Bound,
        input: Var,
        mode: BnMode,
    ) -> Result<(Var, StatsUpdate)> {
        let shape = tape.value(input)?.shape().to_vec();
        let cfg = self.config();
        if shape.len() != 3 || shape[1] != 1 || shape[2] != cfg.input_len {
            return Err(invalid!(
                "estimator input must be [B, 1, {}], got {shape:?}",
                cfg.input_len
            ));
        }
        self.net.run_layers(tape, bound, input, mode)
    }

    /// Eval-mode estimates for a batch of equal-length inputs.
    pub fn estimate_batch(&self, inputs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let cfg = self.config();
        let mut data = Vec::with_capacity(inputs.len() * cfg.input_len);
        for x in inputs {
            if x.len() != cfg.input_len {
                return Err(invalid!(
                    "reverberant input has {} samples, estimator expects {}",
                    x.len(),
                    cfg.input_len
                ));
            }
            data.extend_from_slice(x);
        }
        let tape = Tape::new();
        let bound = self.net.bind(&tape, false);
        let x = tape.constant(Tensor::new(vec![inputs.len(), 1, cfg.input_len], data)?);
        let (y, _) = self.forward(&tape, &bound, x, BnMode::Eval)?;
        let y = tape.value(y)?;
        Ok(y.data().chunks(cfg.rir_len).map(<[f64]>::to_vec).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.net.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let net = Network::load(path)?;
        match net.config {
            NetworkConfig::Estimator(_) => Ok(Self { net }),
            NetworkConfig::Discriminator(_) => Err(Error::InvalidConfig(
                "checkpoint holds a discriminator, not an estimator".into(),
            )),
        }
    }
}

/// Eval-mode RIR estimate for one reverberant signal of exactly
/// `input_len` samples.
pub fn estimate(est: &Estimator, reverberant: &Signal) -> Result<Signal> {
    let out = est.estimate_batch(&[reverberant.samples()])?;
    Signal::new(out.into_iter().next().expect("one output"), reverberant.sample_rate())
}

/// Scores (RIR, condition) pairs with one logit each.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub net: Network,
}

pub fn build_discriminator(cfg: &DiscriminatorConfig, seed: u64) -> Result<Discriminator> {
    Ok(Discriminator {
        net: Network::build(NetworkConfig::Discriminator(cfg.clone()), seed)?,
    })
}

impl Discriminator {
    pub fn config(&self) -> &DiscriminatorConfig {
        match &self.net.config {
            NetworkConfig::Discriminator(c) => c,
            NetworkConfig::Estimator(_) => unreachable!("discriminator holds a discriminator config"),
        }
    }

    /// `rir: [B, 1, rir_len]`, `condition: [B, 1, ≥ condition_len]`; returns
    /// logits `[B, 1]`. The condition is cut to its first `condition_len`
    /// samples, then cropped or zero-padded to `rir_len`.
    pub fn forward(&self, tape: &Tape, bound: &Bound, rir: Var, condition: Var) -> Result<Var> {
        let cfg = self.config();
        let rs = tape.value(rir)?.shape().to_vec();
        let cs = tape.value(condition)?.shape().to_vec();
        if rs.len() != 3 || rs[1] != 1 || rs[2] != cfg.rir_len {
            return Err(invalid!("discriminator RIR must be [B, 1, {}], got {rs:?}", cfg.rir_len));
        }
        if cs.len() != 3 || cs[0] != rs[0] || cs[1] != 1 {
            return Err(invalid!("condition must be [{}, 1, L], got {cs:?}", rs[0]));
        }
        if cs[2] < cfg.condition_len {
            return Err(invalid!(
                "condition has {} samples, discriminator needs at least {}",
                cs[2],
                cfg.condition_len
            ));
        }
        let c = tape.fit_length(condition, cfg.condition_len)?;
        let c = tape.fit_length(c, cfg.rir_len)?;
        let x = tape.concat_channels(rir, c)?;
        let (y, _) = self.net.run_layers(tape, bound, x, BnMode::Eval)?;
        tape.reshape(y, &[rs[0], 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| 0.3 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect()
    }

    #[test]
    fn full_trace_matches_symbolic_lengths() {
        let cfg = EstimatorConfig::full();
        let lens: Vec<usize> = cfg.trace().unwrap().iter().map(|s| s.1).collect();
        // (16000 + 8192 − 8193)/250 + 1 = 64, then two halvings, then ×4 per upsampler.
        assert_eq!(lens, [64, 32, 16, 64, 256, 1024, 4096, 4096, 4096]);
        let ch: Vec<usize> = cfg.trace().unwrap().iter().map(|s| s.0).collect();
        assert_eq!(ch, [512, 1024, 1024, 512, 256, 128, 64, 64, 1]);
        assert_eq!(cfg.first_kernel(), 8193);
        DiscriminatorConfig::for_profile(Profile::Full).validate().unwrap();
    }

    #[test]
    fn toy_trace_and_size() {
        let cfg = EstimatorConfig::toy();
        let lens: Vec<usize> = cfg.trace().unwrap().iter().map(|s| s.1).collect();
        assert_eq!(lens, [16, 8, 4, 16, 64, 64, 256, 256, 256]);
        let e = build_estimator(&cfg, 0).unwrap();
        assert!(e.net.n_params() < 500_000, "{}", e.net.n_params());
        DiscriminatorConfig::for_profile(Profile::Toy).validate().unwrap();
    }

    #[test]
    fn bad_arithmetic_names_the_layer() {
        let mut cfg = EstimatorConfig::toy();
        cfg.layers[4].in_channels = 7;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("layer 4"), "{msg}");
        let mut cfg = EstimatorConfig::toy();
        cfg.rir_len = 300;
        assert!(build_estimator(&cfg, 0).is_err());
    }

    #[test]
    fn toy_forward_shape_range_determinism() {
        let cfg = EstimatorConfig::toy();
        let a = build_estimator(&cfg, 5).unwrap();
        let b = build_estimator(&cfg, 5).unwrap();
        assert_eq!(a, b);
        let x1 = noise(8000, 1);
        let x2 = noise(8000, 2);
        let ya = a.estimate_batch(&[&x1, &x2]).unwrap();
        assert_eq!(ya.len(), 2);
        assert_eq!(ya[0].len(), 256);
        assert!(ya.iter().flatten().all(|v| v.is_finite() && v.abs() < 1.0));
        assert_eq!(ya, b.estimate_batch(&[&x1, &x2]).unwrap());
        assert_ne!(build_estimator(&cfg, 6).unwrap(), a);

        let tape = Tape::new();
        let bound = a.net.bind(&tape, true);
        let x = tape.constant(Tensor::new(vec![2, 1, 8000], [x1, x2].concat()).unwrap());
        let (y, _) = a.forward(&tape, &bound, x, BnMode::Train).unwrap();
        assert_eq!(tape.value(y).unwrap().shape(), &[2, 1, 256]);
    }

    #[test]
    fn estimate_checks_length() {
        let e = build_estimator(&EstimatorConfig::toy(), 0).unwrap();
        let s = Signal::new(noise(7999, 0), 8000).unwrap();
        assert!(matches!(estimate(&e, &s), Err(Error::InvalidInput(_))));
        let s = Signal::new(noise(8000, 0), 8000).unwrap();
        let r = estimate(&e, &s).unwrap();
        assert_eq!(r.len(), 256);
        assert_eq!(r, estimate(&e, &s).unwrap());
    }

    #[test]
    fn train_mode_updates_running_stats_only_when_applied() {
        let mut e = build_estimator(&EstimatorConfig::toy(), 0).unwrap();
        let before = e.net.param_hash();
        let tape = Tape::new();
        let bound = e.net.bind(&tape, false);
        let x = tape.constant(Tensor::new(vec![2, 1, 8000], noise(16000, 3)).unwrap());
        let (_, stats) = e.forward(&tape, &bound, x, BnMode::Train).unwrap();
        assert_eq!(e.net.param_hash(), before);
        e.net.apply_stats(stats);
        assert_ne!(e.net.param_hash(), before);
    }

    fn disc_logits(d: &Discriminator, rir: &[f64], cond: &[f64], b: usize) -> Vec<f64> {
        let tape = Tape::new();
        let bound = d.net.bind(&tape, false);
        let r = tape.constant(Tensor::new(vec![b, 1, 256], rir.to_vec()).unwrap());
        let c = tape.constant(Tensor::new(vec![b, 1, cond.len() / b], cond.to_vec()).unwrap());
        let y = d.forward(&tape, &bound, r, c).unwrap();
        let y = tape.value(y).unwrap();
        assert_eq!(y.shape(), &[b, 1]);
        y.data().to_vec()
    }

    #[test]
    fn discriminator_is_per_example() {
        let d = build_discriminator(&DiscriminatorConfig::for_profile(Profile::Toy), 1).unwrap();
        let r = noise(3 * 256, 4);
        let c = noise(3 * 600, 5);
        let y = disc_logits(&d, &r, &c, 3);
        // Reverse the batch.
        let rr: Vec<f64> = r.chunks(256).rev().flatten().copied().collect();
        let cr: Vec<f64> = c.chunks(600).rev().flatten().copied().collect();
        let yr = disc_logits(&d, &rr, &cr, 3);
        let back: Vec<f64> = yr.into_iter().rev().collect();
        assert_eq!(y, back);
    }

    #[test]
    fn discriminator_gradients_reach_both_inputs() {
        let d = build_discriminator(&DiscriminatorConfig::for_profile(Profile::Toy), 2).unwrap();
        let tape = Tape::new();
        let bound = d.net.bind(&tape, true);
        let r = tape.leaf(Tensor::new(vec![2, 1, 256], noise(512, 6)).unwrap(), true);
        let c = tape.leaf(Tensor::new(vec![2, 1, 512], noise(1024, 7)).unwrap(), true);
        let y = d.forward(&tape, &bound, r, c).unwrap();
        let l = tape.bce_logit_loss(y, 1.0).unwrap();
        let g = tape.backward(l).unwrap();
        let nz = |v| g.get(v).unwrap().data().iter().any(|x: &f64| *x != 0.0);
        assert!(nz(r) && nz(c));
    }

    #[test]
    fn short_condition_is_rejected() {
        let d = build_discriminator(&DiscriminatorConfig::for_profile(Profile::Toy), 2).unwrap();
        let tape = Tape::new();
        let bound = d.net.bind(&tape, false);
        let r = tape.constant(Tensor::zeros(&[1, 1, 256]));
        let c = tape.constant(Tensor::zeros(&[1, 1, 511]));
        assert!(matches!(d.forward(&tape, &bound, r, c), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.ckpt");
        let mut e = build_estimator(&EstimatorConfig::toy(), 9).unwrap();
        let tape = Tape::new();
        let bound = e.net.bind(&tape, false);
        let x = tape.constant(Tensor::new(vec![2, 1, 8000], noise(16000, 8)).unwrap());
        let (_, stats) = e.forward(&tape, &bound, x, BnMode::Train).unwrap();
        e.net.apply_stats(stats);
        e.save(&p).unwrap();
        let back = Estimator::load(&p).unwrap();
        assert_eq!(back, e);
        let input = noise(8000, 10);
        let a = e.estimate_batch(&[&input]).unwrap();
        let b = back.estimate_batch(&[&input]).unwrap();
        let bits = |v: &Vec<Vec<f64>>| v[0].iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let d = build_discriminator(&DiscriminatorConfig::for_profile(Profile::Toy), 0).unwrap();
        d.net.save(&p).unwrap();
        assert!(Estimator::load(&p).is_err());
    }
}
