//! Trains the toy-profile estimator on a small synthetic dataset and compares
//! it with two trivial predictors on the held-out split.
//!
//!     cargo run --release --example train_toy -- [n_examples] [epochs]

use std::time::Instant;

use rirlab::dsp::Signal;
use rirlab::evaluation::mean_edr_ere;
use rirlab::models::{estimate, DiscriminatorConfig, EstimatorConfig};
use rirlab::synth::{build_dataset, CleanSource, Dataset, DatasetSpec, Split};
use rirlab::training::{train, TrainConfig};
use rirlab::Profile;

fn main() -> rirlab::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(250);
    let profile = Profile::Toy;
    let mut cfg = TrainConfig::for_profile(profile);
    if let Some(e) = args.next().and_then(|a| a.parse().ok()) {
        cfg.epochs = e;
    }

    let dir = tempfile::tempdir().expect("temp dir");
    build_dataset(
        &DatasetSpec::for_profile(profile, n, 7),
        &CleanSource::Synthetic,
        dir.path(),
    )?;
    let ds = Dataset::open(dir.path())?;

    let t0 = Instant::now();
    let out = train(
        &ds,
        &EstimatorConfig::for_profile(profile),
        &DiscriminatorConfig::for_profile(profile),
        &cfg,
        None,
        |r| {
            println!(
                "epoch {:3}  edr {:.4e}  mse {:.4e}  cgan {:.3}  d {:.3}  val_edr {:.4e}",
                r.epoch, r.l_edr, r.l_mse, r.l_cgan, r.l_d, r.val_edr
            )
        },
    )?;
    println!(
        "trained in {:.1?}; initial val EDR {:.4e}, best {:.4e} at epoch {}",
        t0.elapsed(),
        out.log.initial_val_edr,
        out.best_val_edr,
        out.best_epoch
    );

    let sr = ds.manifest.sample_rate;
    let load = |split| -> rirlab::error::Result<Vec<(Signal, Signal)>> {
        ds.entries(split).map(|e| ds.load_pair(e)).collect()
    };
    let train_pairs = load(Split::Train)?;
    let test_pairs = load(Split::Test)?;
    let rir_len = test_pairs[0].1.len();
    let mut mean = vec![0.0; rir_len];
    for (_, rir) in &train_pairs {
        for (m, v) in mean.iter_mut().zip(rir.samples()) {
            *m += v / train_pairs.len() as f64;
        }
    }
    let mean = Signal::new(mean, sr)?;
    let zeros = Signal::new(vec![0.0; rir_len], sr)?;

    let pairs = |f: &dyn Fn(&Signal) -> rirlab::error::Result<Signal>| {
        test_pairs
            .iter()
            .map(|(rev, truth)| Ok((f(rev)?, truth.clone())))
            .collect::<rirlab::error::Result<Vec<_>>>()
    };
    for (label, est) in [
        ("model", pairs(&|rev| estimate(&out.best, rev))?),
        ("zeros", pairs(&|_| Ok(zeros.clone()))?),
        ("mean RIR", pairs(&|_| Ok(mean.clone()))?),
    ] {
        let (edr, ere) = mean_edr_ere(&est, profile)?;
        println!("{label:>10}: EDR loss {edr:.4e}  ERE MAE {ere:.2} dB");
    }
    Ok(())
}
