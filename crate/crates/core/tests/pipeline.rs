use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rirlab::dsp::Signal;
use rirlab::evaluation::{evaluate, oracle_baseline, Method};
use rirlab::metrics::{edr, mse};
use rirlab::models::{DiscriminatorConfig, Estimator, EstimatorConfig};
use rirlab::synth::{
    build_dataset, make_example, synth_rir, synthetic_speech, CleanSource, Dataset, DatasetSpec,
    RirParams, Split,
};
use rirlab::training::{train, TrainConfig};
use rirlab::Profile;

#[test]
fn synth_train_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    build_dataset(&DatasetSpec::for_profile(Profile::Toy, 24, 1), &CleanSource::Synthetic, &data).unwrap();
    let ds = Dataset::open(&data).unwrap();
    ds.check_files().unwrap();

    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        ..TrainConfig::for_profile(Profile::Toy)
    };
    let run = dir.path().join("run");
    let mut seen = Vec::new();
    let out = train(
        &ds,
        &EstimatorConfig::for_profile(Profile::Toy),
        &DiscriminatorConfig::for_profile(Profile::Toy),
        &cfg,
        Some(&run),
        |r| seen.push(r.epoch),
    )
    .unwrap();
    assert_eq!(seen, [0, 1]);
    assert!(out.best_val_edr.is_finite());
    assert_eq!(out.best_val_edr, out.log.records[out.best_epoch].val_edr);

    let best = Estimator::load(run.join("best.ckpt")).unwrap();
    assert_eq!(best.net.param_hash(), out.best.net.param_hash());

    let ev = evaluate(&ds, Split::Test, &Method::Model(run.join("best.ckpt")), Profile::Toy, Default::default())
        .unwrap();
    assert_eq!(ev.rows.len(), ds.manifest.count(Split::Test));
    assert!(ev.rows.iter().all(|r| r.edr_loss.is_finite() && r.mse.is_finite()));
}

#[test]
fn corrupt_checkpoint_is_an_io_class_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ckpt");
    let est = rirlab::models::build_estimator(&EstimatorConfig::for_profile(Profile::Toy), 3).unwrap();
    est.save(&path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() / 2);
    std::fs::write(&path, &bytes).unwrap();
    assert_eq!(Estimator::load(&path).unwrap_err().exit_code(), 3);
}

fn pair(t60: f64, drr_db: f64, refl: usize, seed: u64) -> (Signal, Signal, Signal) {
    let p = Profile::Toy;
    let sr = p.sample_rate();
    let rir = synth_rir(
        &RirParams {
            t60,
            drr_target: drr_db,
            n_early_reflections: refl,
            direct_delay: 8,
            rir_len: p.rir_len(),
            seed,
        },
        sr,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clean = synthetic_speech(p.example_len() + 1 - p.rir_len(), sr, &mut rng);
    clean.resize(p.example_len(), 0.0);
    let clean = Signal::new(clean, sr).unwrap();
    let (rev, rir) = make_example(&clean, &rir, p.example_len()).unwrap();
    (clean, rev, rir)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn baseline_recovers_any_synthetic_rir(
        t60 in 0.1f64..0.6,
        drr_db in 0.0f64..10.0,
        refl in 0usize..8,
        seed in any::<u64>(),
    ) {
        let (clean, rev, rir) = pair(t60, drr_db, refl, seed);
        let got = oracle_baseline(&rev, &clean, rir.len()).unwrap();
        prop_assert!(mse(&got, &rir).unwrap() < 1e-12);
    }

    #[test]
    fn synthetic_rir_edr_is_monotone(
        t60 in 0.1f64..0.6,
        drr_db in 0.0f64..10.0,
        refl in 0usize..8,
        seed in any::<u64>(),
    ) {
        let (_, _, rir) = pair(t60, drr_db, refl, seed);
        let m = edr(&rir, &Profile::Toy.stft(), &Profile::Toy.partition()).unwrap();
        for row in &m.values {
            prop_assert!(row.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
