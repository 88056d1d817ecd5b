//! Alternating adversarial training of the estimator against the
//! conditional discriminator, with validation-EDR model selection.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{clip_global_norm, BnMode, EdrBasis, RmsProp, Tape, Tensor, Var};
use crate::dsp::Signal;
use crate::error::{invalid, Error, Result};
use crate::metrics::edr_loss;
use crate::models::{
    build_discriminator, build_estimator, Discriminator, DiscriminatorConfig, Estimator,
    EstimatorConfig,
};
use crate::synth::{Dataset, Split};
use crate::Profile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorLoss {
    /// Minimise `−log D(fake)`.
    NonSaturating,
    /// Minimise `log(1 − D(fake))`.
    Saturating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub scale: Profile,
    pub lambda_edr: f64,
    pub lambda_mse: f64,
    /// Weight of the adversarial term in the estimator loss.
    pub lambda_adv: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_init: f64,
    pub lr_decay: f64,
    pub lr_every: usize,
    pub seed: u64,
    pub generator_loss_form: GeneratorLoss,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_grad_norm: Option<f64>,
}

impl TrainConfig {
    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Full => Self {
                scale: Profile::Full,
                lambda_edr: 1.0,
                lambda_mse: 50.0,
                lambda_adv: 1.0,
                batch_size: 128,
                epochs: 200,
                lr_init: 8e-5,
                lr_decay: 0.7,
                lr_every: 40,
                seed: 0,
                generator_loss_form: GeneratorLoss::NonSaturating,
                clip_grad_norm: None,
            },
            Profile::Toy => Self {
                scale: Profile::Toy,
                batch_size: 16,
                epochs: 60,
                lr_init: 1e-3,
                lr_every: 20,
                ..Self::for_profile(Profile::Full)
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_edr", self.lambda_edr),
            ("lambda_mse", self.lambda_mse),
            ("lambda_adv", self.lambda_adv),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "batch_size must be at least 2 for batch norm, got {}",
                self.batch_size
            )));
        }
        if !(self.lr_init > 0.0) || !(self.lr_decay > 0.0) || self.lr_every == 0 {
            return Err(Error::InvalidConfig(
                "lr_init and lr_decay must be positive and lr_every at least 1".into(),
            ));
        }
        if let Some(c) = self.clip_grad_norm {
            if !(c > 0.0) {
                return Err(Error::InvalidConfig(format!("clip_grad_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }

    /// `lr_init · lr_decay^⌊epoch / lr_every⌋`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr_init * self.lr_decay.powi((epoch / self.lr_every) as i32)
    }
}

/// One mini-batch: reverberant inputs `[B, 1, input_len]` and ground-truth
/// RIRs `[B, 1, rir_len]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub reverberant: Tensor,
    pub rir: Tensor,
}

impl Batch {
    pub fn from_rows(reverberant: &[&[f64]], rirs: &[&[f64]]) -> Result<Self> {
        if reverberant.len() != rirs.len() || reverberant.is_empty() {
            return Err(invalid!(
                "batch needs matching non-empty inputs and RIRs ({} vs {})",
                reverberant.len(),
                rirs.len()
            ));
        }
        let pack = |rows: &[&[f64]]| -> Result<Tensor> {
            let len = rows[0].len();
            if rows.iter().any(|r| r.len() != len) {
                return Err(invalid!("batch rows differ in length"));
            }
            Tensor::new(vec![rows.len(), 1, len], rows.concat())
        };
        Ok(Self {
            reverberant: pack(reverberant)?,
            rir: pack(rirs)?,
        })
    }

    pub fn len(&self) -> usize {
        self.rir.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct StepLosses {
    pub l_edr: f64,
    pub l_mse: f64,
    pub l_cgan: f64,
    /// Discriminator loss as descended: `bce(D(real), 1) + bce(D(fake), 0)`.
    pub l_d: f64,
    /// Weighted estimator objective.
    pub l_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_edr: f64,
    pub l_mse: f64,
    pub l_cgan: f64,
    pub l_d: f64,
    pub val_edr: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrainLog {
    /// Validation EDR loss of the freshly initialised estimator.
    pub initial_val_edr: f64,
    pub records: Vec<EpochRecord>,
}

pub const LOG_HEADER: &str = "epoch,l_edr,l_mse,l_cgan,l_d,val_edr,lr";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch, self.l_edr, self.l_mse, self.l_cgan, self.l_d, self.val_edr, self.lr
        )
    }
}

impl TrainLog {
    /// Earliest epoch with the lowest validation EDR loss.
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records
            .iter()
            .fold(None, |best: Option<&EpochRecord>, r| match best {
                Some(b) if b.val_edr <= r.val_edr => Some(b),
                _ => Some(r),
            })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(LOG_HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }
}

/// Estimator, discriminator and their optimiser states.
pub struct Trainer {
    pub estimator: Estimator,
    pub discriminator: Discriminator,
    pub cfg: TrainConfig,
    opt_e: RmsProp,
    opt_d: RmsProp,
    basis: Rc<EdrBasis>,
}

fn check_finite(what: &str, v: f64, epoch: usize, step: usize) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            epoch,
            step,
            what: format!("{what} is {v}"),
        })
    }
}

impl Trainer {
    pub fn new(est_cfg: &EstimatorConfig, disc_cfg: &DiscriminatorConfig, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if disc_cfg.rir_len != est_cfg.rir_len {
            return Err(Error::InvalidConfig(format!(
                "discriminator expects {}-sample RIRs, estimator produces {}",
                disc_cfg.rir_len, est_cfg.rir_len
            )));
        }
        let estimator = build_estimator(est_cfg, cfg.seed)?;
        let discriminator = build_discriminator(disc_cfg, cfg.seed.wrapping_add(1))?;
        let basis = Rc::new(EdrBasis::new(
            &cfg.scale.stft(),
            &cfg.scale.partition(),
            est_cfg.rir_len,
        )?);
        Ok(Self {
            estimator,
            discriminator,
            opt_e: RmsProp::new(cfg.lr_init),
            opt_d: RmsProp::new(cfg.lr_init),
            cfg,
            basis,
        })
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.opt_e.lr = lr;
        self.opt_d.lr = lr;
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let ec = self.estimator.config();
        let ok = batch.reverberant.shape() == [batch.len(), 1, ec.input_len]
            && batch.rir.shape() == [batch.len(), 1, ec.rir_len];
        if !ok {
            return Err(invalid!(
                "batch shapes {:?}/{:?} do not match estimator [B, 1, {}] -> [B, 1, {}]",
                batch.reverberant.shape(),
                batch.rir.shape(),
                ec.input_len,
                ec.rir_len
            ));
        }
        Ok(())
    }

    fn clip(&self, grads: &mut [Tensor]) {
        if let Some(c) = self.cfg.clip_grad_norm {
            clip_global_norm(grads, c);
        }
    }

    /// One discriminator update on real and (detached) fake pairs. Returns
    /// the descended loss.
    pub fn discriminator_step(&mut self, batch: &Batch) -> Result<f64> {
        self.check_batch(batch)?;
        let tape = Tape::new();
        let eb = self.estimator.net.bind(&tape, false);
        let db = self.discriminator.net.bind(&tape, true);
        let x = tape.constant(batch.reverberant.clone());
        let real = tape.constant(batch.rir.clone());
        // No estimator parameter is a gradient leaf, so `fake` is detached.
        let (fake, _) = self.estimator.forward(&tape, &eb, x, BnMode::Train)?;
        let lr = self.discriminator.forward(&tape, &db, real, x)?;
        let lf = self.discriminator.forward(&tape, &db, fake, x)?;
        let a = tape.bce_logit_loss(lr, 1.0)?;
        let b = tape.bce_logit_loss(lf, 0.0)?;
        let loss = tape.add(a, b)?;
        let value = tape.value(loss)?.item().expect("scalar");
        let mut g = tape.backward(loss)?;
        let mut grads = self.discriminator.net.collect_grads(&db, &mut g);
        if value.is_finite() {
            self.clip(&mut grads);
            self.opt_d.step(self.discriminator.net.params_mut(), &grads)?;
        }
        Ok(value)
    }

    fn generator_losses(
        &self,
        tape: &Tape,
        fake: Var,
        x: Var,
        batch: &Batch,
        db: &crate::models::Bound,
    ) -> Result<(Var, StepLosses)> {
        let truth = tape.constant(batch.rir.clone());
        let e_fake = tape.edr(fake, &self.basis)?;
        let e_true = tape.edr(truth, &self.basis)?;
        let l_edr = tape.mse_loss(e_fake, e_true)?;
        let l_mse = tape.mse_loss(fake, truth)?;
        let logits = self.discriminator.forward(tape, db, fake, x)?;
        let l_cgan = match self.cfg.generator_loss_form {
            GeneratorLoss::NonSaturating => tape.bce_logit_loss(logits, 1.0)?,
            GeneratorLoss::Saturating => {
                let l = tape.bce_logit_loss(logits, 0.0)?;
                tape.scale(l, -1.0)?
            }
        };
        let a = tape.scale(l_cgan, self.cfg.lambda_adv)?;
        let b = tape.scale(l_edr, self.cfg.lambda_edr)?;
        let c = tape.scale(l_mse, self.cfg.lambda_mse)?;
        let ab = tape.add(a, b)?;
        let total = tape.add(ab, c)?;
        let v = |var| -> Result<f64> { Ok(tape.value(var)?.item().expect("scalar")) };
        Ok((
            total,
            StepLosses {
                l_edr: v(l_edr)?,
                l_mse: v(l_mse)?,
                l_cgan: v(l_cgan)?,
                l_d: 0.0,
                l_total: v(total)?,
            },
        ))
    }

    /// One estimator update against the current (frozen) discriminator.
    pub fn estimator_step(&mut self, batch: &Batch) -> Result<StepLosses> {
        self.check_batch(batch)?;
        let tape = Tape::new();
        let eb = self.estimator.net.bind(&tape, true);
        let db = self.discriminator.net.bind(&tape, false);
        let x = tape.constant(batch.reverberant.clone());
        let (fake, stats) = self.estimator.forward(&tape, &eb, x, BnMode::Train)?;
        let (total, losses) = self.generator_losses(&tape, fake, x, batch, &db)?;
        let mut g = tape.backward(total)?;
        let mut grads = self.estimator.net.collect_grads(&eb, &mut g);
        if losses.l_total.is_finite() {
            self.clip(&mut grads);
            self.opt_e.step(self.estimator.net.params_mut(), &grads)?;
            self.estimator.net.apply_stats(stats);
        }
        Ok(losses)
    }

    /// Discriminator update followed by estimator update.
    pub fn train_step(&mut self, batch: &Batch, epoch: usize, step: usize) -> Result<StepLosses> {
        let l_d = self.discriminator_step(batch)?;
        check_finite("discriminator loss", l_d, epoch, step)?;
        let mut l = self.estimator_step(batch)?;
        l.l_d = l_d;
        for (what, v) in [
            ("EDR loss", l.l_edr),
            ("MSE loss", l.l_mse),
            ("adversarial loss", l.l_cgan),
            ("estimator loss", l.l_total),
        ] {
            check_finite(what, v, epoch, step)?;
        }
        Ok(l)
    }

    /// Mean EDR loss of eval-mode estimates against the truth.
    pub fn validation_edr(&self, data: &Examples) -> Result<f64> {
        mean_edr_loss(&self.estimator, data, self.cfg.batch_size, &self.cfg.scale)
    }
}

/// Mean EDR loss of `est` over `data`.
pub fn mean_edr_loss(est: &Estimator, data: &Examples, chunk: usize, profile: &Profile) -> Result<f64> {
    if data.is_empty() {
        return Err(invalid!("no examples to validate on"));
    }
    let stft = profile.stft();
    let partition = profile.partition();
    let mut total = 0.0;
    for (inputs, rirs) in data.inputs.chunks(chunk.max(1)).zip(data.rirs.chunks(chunk.max(1))) {
        let rows: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
        let est_rirs = est.estimate_batch(&rows)?;
        for (e, t) in est_rirs.into_iter().zip(rirs) {
            let e = Signal::new(e, data.sample_rate)?;
            let t = Signal::new(t.clone(), data.sample_rate)?;
            total += edr_loss(&e, &t, &stft, &partition)?.total;
        }
    }
    Ok(total / data.len() as f64)
}

/// Examples of one split held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Examples {
    pub sample_rate: u32,
    pub inputs: Vec<Vec<f64>>,
    pub rirs: Vec<Vec<f64>>,
}

impl Examples {
    pub fn load(dataset: &Dataset, split: Split) -> Result<Self> {
        let mut inputs = Vec::new();
        let mut rirs = Vec::new();
        for e in dataset.entries(split) {
            let (rev, rir) = dataset.load_pair(e)?;
            inputs.push(rev.into_samples());
            rirs.push(rir.into_samples());
        }
        Ok(Self {
            sample_rate: dataset.manifest.sample_rate,
            inputs,
            rirs,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn batch(&self, idx: &[usize]) -> Result<Batch> {
        let x: Vec<&[f64]> = idx.iter().map(|&i| self.inputs[i].as_slice()).collect();
        let r: Vec<&[f64]> = idx.iter().map(|&i| self.rirs[i].as_slice()).collect();
        Batch::from_rows(&x, &r)
    }

    fn check(&self, est: &EstimatorConfig, split: Split) -> Result<()> {
        if self.is_empty() {
            return Err(invalid!("the {split} split is empty"));
        }
        if let Some(x) = self.inputs.iter().find(|x| x.len() != est.input_len) {
            return Err(invalid!(
                "{split} example has {} samples, estimator expects {}",
                x.len(),
                est.input_len
            ));
        }
        if let Some(r) = self.rirs.iter().find(|r| r.len() != est.rir_len) {
            return Err(invalid!(
                "{split} RIR has {} samples, estimator expects {}",
                r.len(),
                est.rir_len
            ));
        }
        Ok(())
    }
}

/// Shuffled mini-batch index lists for one epoch. A trailing batch too small
/// for batch norm is dropped.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Result of a training run.
pub struct TrainOutcome {
    pub best: Estimator,
    pub last: Estimator,
    pub discriminator: Discriminator,
    pub log: TrainLog,
    pub best_epoch: usize,
    pub best_val_edr: f64,
}

#[derive(Serialize)]
struct RunEcho<'a> {
    train: &'a TrainConfig,
    estimator: &'a EstimatorConfig,
    discriminator: &'a DiscriminatorConfig,
}

#[derive(Serialize)]
struct Summary {
    best_epoch: usize,
    best_val_edr: f64,
    initial_val_edr: f64,
    epochs: usize,
}

struct RunDir {
    root: PathBuf,
    log: BufWriter<File>,
}

impl RunDir {
    fn create(root: &Path, echo: &RunEcho) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let cfg_path = root.join("config.json");
        let mut json = serde_json::to_string_pretty(echo).expect("configs serialise");
        json.push('\n');
        std::fs::write(&cfg_path, json).map_err(|e| Error::io(&cfg_path, e))?;
        let log_path = root.join("log.csv");
        let f = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
        let mut log = BufWriter::new(f);
        writeln!(log, "{LOG_HEADER}")
            .and_then(|_| log.flush())
            .map_err(|e| Error::io(&log_path, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            log,
        })
    }

    fn append(&mut self, r: &EpochRecord) -> Result<()> {
        writeln!(self.log, "{}", r.csv_row())
            .and_then(|_| self.log.flush())
            .map_err(|e| Error::io(self.root.join("log.csv"), e))
    }
}

/// Trains on the dataset's train split and selects the checkpoint with the
/// lowest validation EDR loss. If `run_dir` is given, the config echo,
/// `log.csv` (flushed every epoch), `best.ckpt`, `last.ckpt` and
/// `summary.json` are written there.
pub fn train(
    dataset: &Dataset,
    est_cfg: &EstimatorConfig,
    disc_cfg: &DiscriminatorConfig,
    cfg: &TrainConfig,
    run_dir: Option<&Path>,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    est_cfg.validate()?;
    disc_cfg.validate()?;
    if dataset.manifest.sample_rate != cfg.scale.sample_rate() {
        return Err(invalid!(
            "dataset is {} Hz but the {} profile expects {} Hz",
            dataset.manifest.sample_rate,
            cfg.scale,
            cfg.scale.sample_rate()
        ));
    }
    let train_set = Examples::load(dataset, Split::Train)?;
    let val_set = Examples::load(dataset, Split::Val)?;
    train_set.check(est_cfg, Split::Train)?;
    val_set.check(est_cfg, Split::Val)?;
    if train_set.len() < 2 {
        return Err(invalid!("the train split needs at least 2 examples for batch norm"));
    }
    train_examples(&train_set, &val_set, est_cfg, disc_cfg, cfg, run_dir, &mut progress)
}

/// [`train`] on examples already in memory.
pub fn train_examples(
    train_set: &Examples,
    val_set: &Examples,
    est_cfg: &EstimatorConfig,
    disc_cfg: &DiscriminatorConfig,
    cfg: &TrainConfig,
    run_dir: Option<&Path>,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    train_set.check(est_cfg, Split::Train)?;
    val_set.check(est_cfg, Split::Val)?;
    let mut trainer = Trainer::new(est_cfg, disc_cfg, cfg.clone())?;
    let mut run = run_dir
        .map(|d| {
            RunDir::create(
                d,
                &RunEcho {
                    train: cfg,
                    estimator: est_cfg,
                    discriminator: disc_cfg,
                },
            )
        })
        .transpose()?;

    let mut log = TrainLog {
        initial_val_edr: trainer.validation_edr(val_set)?,
        records: Vec::new(),
    };
    let mut best: Option<(Estimator, usize, f64)> = None;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        trainer.set_lr(lr);
        let batches = epoch_batches(train_set.len(), cfg.batch_size, cfg.seed, epoch);
        let mut sum = StepLosses::default();
        for (step, idx) in batches.iter().enumerate() {
            let batch = train_set.batch(idx)?;
            let l = trainer.train_step(&batch, epoch, step)?;
            sum.l_edr += l.l_edr;
            sum.l_mse += l.l_mse;
            sum.l_cgan += l.l_cgan;
            sum.l_d += l.l_d;
        }
        let n = batches.len().max(1) as f64;
        let val_edr = trainer.validation_edr(val_set)?;
        let rec = EpochRecord {
            epoch,
            l_edr: sum.l_edr / n,
            l_mse: sum.l_mse / n,
            l_cgan: sum.l_cgan / n,
            l_d: sum.l_d / n,
            val_edr,
            lr,
        };
        if let Some(run) = run.as_mut() {
            run.append(&rec)?;
        }
        check_finite("validation EDR loss", val_edr, epoch, batches.len())?;
        progress(&rec);
        log.records.push(rec);
        if best.as_ref().is_none_or(|b| val_edr < b.2) {
            best = Some((trainer.estimator.clone(), epoch, val_edr));
        }
    }
    let (best_est, best_epoch, best_val_edr) = match best {
        Some(b) => b,
        None => (trainer.estimator.clone(), 0, log.initial_val_edr),
    };
    if let Some(run) = &run {
        best_est.save(run.root.join("best.ckpt"))?;
        trainer.estimator.save(run.root.join("last.ckpt"))?;
        let p = run.root.join("summary.json");
        let mut json = serde_json::to_string_pretty(&Summary {
            best_epoch,
            best_val_edr,
            initial_val_edr: log.initial_val_edr,
            epochs: log.records.len(),
        })
        .expect("summary serialises");
        json.push('\n');
        std::fs::write(&p, json).map_err(|e| Error::io(&p, e))?;
    }
    Ok(TrainOutcome {
        best: best_est,
        last: trainer.estimator,
        discriminator: trainer.discriminator,
        log,
        best_epoch,
        best_val_edr,
    })
}
