//! The `rirlab` command line.
//!
//! Every subcommand returns [`Error`]; [`main`] maps it onto the exit-code
//! contract (2 validation, 3 I/O, 4 divergence).

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::evaluation::{evaluate, Method};
use crate::metrics::{edr, ReportOptions};
use crate::models::{estimate, DiscriminatorConfig, Estimator, EstimatorConfig};
use crate::synth::{
    build_dataset, read_wav, write_wav, CleanSource, Dataset, DatasetSpec, Split, WavFormat,
};
use crate::training::{train, TrainConfig};
use crate::Profile;

#[derive(Debug, Parser)]
#[command(name = "rirlab", version, about = "Blind room impulse response estimation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesise a dataset of (reverberant speech, RIR) pairs.
    Synth(SynthArgs),
    /// Train the estimator on a dataset's train split.
    Train(TrainArgs),
    /// Estimate the RIR of one reverberant WAV file.
    Estimate(EstimateArgs),
    /// Score a method on a dataset split and write the metric tables.
    Evaluate(EvaluateArgs),
    /// Export EDR curves and waveforms of one example as CSV.
    PlotData(PlotDataArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value = "full")]
    pub profile: Profile,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory of mono clean-speech WAVs; synthetic speech if omitted.
    #[arg(long)]
    pub clean_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the profile matching the dataset's sample rate.
    #[arg(long)]
    pub profile: Option<Profile>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training config override, e.g. `--set lambda_mse=0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Checked against the checkpoint if given.
    #[arg(long)]
    pub profile: Option<Profile>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// `model:CKPT`, `baseline` or `identity`.
    #[arg(long)]
    pub method: Method,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub profile: Option<Profile>,
    /// Peak-normalise both RIRs before computing MSE.
    #[arg(long)]
    pub peak_normalize_mse: bool,
}

#[derive(Debug, Args)]
pub struct PlotDataArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Index into the split, in manifest order.
    #[arg(long)]
    pub example: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name) and runs the subcommand,
/// writing progress to `out`. Returns the process exit code.
pub fn main<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Estimate(a) => cmd_estimate(a, out),
        Command::Evaluate(a) => cmd_evaluate(a, out),
        Command::PlotData(a) => cmd_plot_data(a, out),
    }
}

fn say(out: &mut dyn Write, msg: std::fmt::Arguments) -> Result<()> {
    out.write_fmt(msg)
        .and_then(|_| out.write_all(b"\n"))
        .map_err(|e| Error::io("<stdout>", e))
}

fn cmd_synth(a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    let source = match &a.clean_dir {
        Some(d) => {
            if !d.is_dir() {
                return Err(invalid!("clean directory {} does not exist", d.display()));
            }
            CleanSource::from_dir(d)?
        }
        None => CleanSource::Synthetic,
    };
    let spec = DatasetSpec::for_profile(a.profile, a.n, a.seed);
    let m = build_dataset(&spec, &source, &a.out)?;
    say(out, format_args!("wrote {}", a.out.join("manifest.json").display()))?;
    say(
        out,
        format_args!(
            "train {}  val {}  test {}",
            m.count(Split::Train),
            m.count(Split::Val),
            m.count(Split::Test)
        ),
    )
}

/// The profile whose sample rate matches the dataset, or a check that the
/// requested one does.
fn dataset_profile(ds: &Dataset, requested: Option<Profile>) -> Result<Profile> {
    let sr = ds.manifest.sample_rate;
    match requested {
        Some(p) if p.sample_rate() == sr => Ok(p),
        Some(p) => Err(invalid!(
            "dataset is {sr} Hz but the {p} profile expects {} Hz",
            p.sample_rate()
        )),
        None => [Profile::Full, Profile::Toy]
            .into_iter()
            .find(|p| p.sample_rate() == sr)
            .ok_or_else(|| invalid!("no profile runs at the dataset's {sr} Hz")),
    }
}

/// Applies `key=value` overrides to a serialisable config. Values are read
/// as JSON where possible and as bare strings otherwise.
pub fn apply_overrides<T: Serialize + DeserializeOwned>(cfg: &T, overrides: &[String]) -> Result<T> {
    let mut v = serde_json::to_value(cfg).expect("configs serialise");
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| invalid!("override {o:?} is not KEY=VALUE"))?;
        let obj = v.as_object_mut().expect("configs are objects");
        if !obj.contains_key(key.trim()) {
            let keys: Vec<_> = obj.keys().map(String::as_str).collect();
            return Err(invalid!("unknown config key {key:?} (known: {})", keys.join(", ")));
        }
        obj[key.trim()] = serde_json::from_str(raw.trim())
            .unwrap_or_else(|_| serde_json::Value::String(raw.trim().to_string()));
    }
    serde_json::from_value(v).map_err(|e| Error::InvalidConfig(e.to_string()))
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let ds = Dataset::open(&a.manifest)?;
    let profile = dataset_profile(&ds, a.profile)?;
    let mut cfg = TrainConfig::for_profile(profile);
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let cfg = apply_overrides(&cfg, &a.overrides)?;
    if cfg.scale != profile {
        return Err(Error::InvalidConfig("scale cannot be overridden; use --profile".into()));
    }
    let quiet = a.quiet;
    let mut progress_err = None;
    let outcome = train(
        &ds,
        &EstimatorConfig::for_profile(profile),
        &DiscriminatorConfig::for_profile(profile),
        &cfg,
        Some(&a.out),
        |r| {
            if !quiet && progress_err.is_none() {
                progress_err = writeln!(
                    out,
                    "epoch {:>3}  l_edr {:.4e}  l_mse {:.4e}  l_cgan {:.3}  l_d {:.3}  val_edr {:.4e}",
                    r.epoch, r.l_edr, r.l_mse, r.l_cgan, r.l_d, r.val_edr
                )
                .err();
            }
        },
    )?;
    if let Some(e) = progress_err {
        return Err(Error::io("<stdout>", e));
    }
    say(
        out,
        format_args!(
            "best epoch {} with validation EDR loss {:.6e}",
            outcome.best_epoch, outcome.best_val_edr
        ),
    )?;
    say(out, format_args!("run directory {}", a.out.display()))
}

fn cmd_estimate(a: EstimateArgs, out: &mut dyn Write) -> Result<()> {
    let est = Estimator::load(&a.ckpt)?;
    let cfg = est.config();
    let sr = cfg.scale.sample_rate();
    if let Some(p) = a.profile.filter(|&p| p != cfg.scale) {
        return Err(invalid!("checkpoint was trained for the {} profile, not {p}", cfg.scale));
    }
    let input = read_wav(&a.input)?;
    if input.sample_rate() != sr {
        return Err(invalid!(
            "{} is {} Hz; expected {sr} Hz",
            a.input.display(),
            input.sample_rate()
        ));
    }
    let rir = estimate(&est, &input.fit_to(cfg.input_len))?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_wav(&a.out, &rir, WavFormat::Float32)?;
    say(
        out,
        format_args!("wrote {} ({} samples at {sr} Hz)", a.out.display(), rir.len()),
    )
}

fn cmd_evaluate(a: EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let ds = Dataset::open(&a.manifest)?;
    let profile = dataset_profile(&ds, a.profile)?;
    let opts = ReportOptions {
        peak_normalize_mse: a.peak_normalize_mse,
    };
    let ev = evaluate(&ds, a.split, &a.method, profile, opts)?;
    ev.save(&a.out)?;
    say(
        out,
        format_args!(
            "{} on {} ({} examples): mean EDR loss {:.6e}, ERE MAE {:.3} dB, DRR MAE {:.3} dB, MSE {:.6e}",
            ev.method,
            ev.split,
            ev.rows.len(),
            ev.mean_edr_loss(),
            ev.mean_ere_mae(),
            ev.report.drr_mae,
            ev.report.mse
        ),
    )?;
    say(
        out,
        format_args!(
            "wrote {} and {}",
            a.out.display(),
            crate::evaluation::examples_path(&a.out).display()
        ),
    )
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn cmd_plot_data(a: PlotDataArgs, out: &mut dyn Write) -> Result<()> {
    let ds = Dataset::open(&a.manifest)?;
    let entries: Vec<_> = ds.entries(a.split).collect();
    let entry = entries.get(a.example).ok_or_else(|| {
        invalid!(
            "example {} is out of range: the {} split has {} examples",
            a.example,
            a.split,
            entries.len()
        )
    })?;
    let est = Estimator::load(&a.ckpt)?;
    let profile = dataset_profile(&ds, Some(est.config().scale))?;
    let (rev, truth) = ds.load_pair(entry)?;
    let estimated = estimate(&est, &rev.fit_to(est.config().input_len))?;
    let stft = profile.stft();
    let partition = profile.partition();
    let e_truth = edr(&truth, &stft, &partition)?;
    let e_est = edr(&estimated, &stft, &partition)?;

    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut files = Vec::new();
    for (b, &centre) in partition.centers.iter().enumerate() {
        let path = a.out.join(format!("edr_{}.csv", centre.round() as u64));
        let (t_db, e_db) = (e_truth.band_db(b), e_est.band_db(b));
        let mut w = create(&path)?;
        writeln!(w, "time_s,edr_db_truth,edr_db_estimated")
            .and_then(|_| {
                for ((t, x), y) in e_truth.frame_times.iter().zip(&t_db).zip(&e_db) {
                    writeln!(w, "{t},{x},{y}")?;
                }
                w.flush()
            })
            .map_err(|e| Error::io(&path, e))?;
        files.push(path);
    }
    let path = a.out.join("waveform.csv");
    let sr = truth.sample_rate() as f64;
    let mut w = create(&path)?;
    writeln!(w, "time_s,truth,estimated")
        .and_then(|_| {
            for (i, (x, y)) in truth.samples().iter().zip(estimated.samples()).enumerate() {
                writeln!(w, "{},{x},{y}", i as f64 / sr)?;
            }
            w.flush()
        })
        .map_err(|e| Error::io(&path, e))?;
    files.push(path);
    say(
        out,
        format_args!(
            "wrote {} files for {} to {}",
            files.len(),
            entry.reverberant,
            a.out.display()
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_round_trip() {
        let cfg = TrainConfig::for_profile(Profile::Toy);
        let c = apply_overrides(
            &cfg,
            &[
                "lambda_mse=0".into(),
                "epochs=3".into(),
                "generator_loss_form=saturating".into(),
                "clip_grad_norm=5.0".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.lambda_mse, 0.0);
        assert_eq!(c.epochs, 3);
        assert_eq!(c.generator_loss_form, crate::training::GeneratorLoss::Saturating);
        assert_eq!(c.clip_grad_norm, Some(5.0));
        assert_eq!(c.batch_size, cfg.batch_size);
    }

    #[test]
    fn bad_overrides() {
        let cfg = TrainConfig::for_profile(Profile::Toy);
        for o in ["lambda", "nope=1", "epochs=-1", "epochs=many"] {
            let e = apply_overrides(&cfg, &[o.into()]).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{o}");
        }
    }

    #[test]
    fn parse_errors_exit_2() {
        let mut sink = Vec::new();
        assert_eq!(main(["rirlab", "frobnicate"], &mut sink), 2);
        assert_eq!(main(["rirlab", "synth", "--n", "x", "--out", "o"], &mut sink), 2);
        assert_eq!(main(["rirlab", "synth", "--n", "2", "--out", "o", "--profile", "huge"], &mut sink), 2);
        assert_eq!(
            main(["rirlab", "evaluate", "--manifest", "m", "--method", "oracle", "--out", "o"], &mut sink),
            2
        );
    }
}
