//! Builds a small toy dataset on disk and reads one example back.
//!
//!     cargo run --example synth_dataset -- [out_dir]

use rirlab::metrics::drr;
use rirlab::synth::{build_dataset, CleanSource, Dataset, DatasetSpec, Split};
use rirlab::Profile;

fn main() -> rirlab::error::Result<()> {
    let tmp = tempfile::tempdir().expect("temp dir");
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| tmp.path().to_path_buf());
    let spec = DatasetSpec::for_profile(Profile::Toy, 20, 42);
    let m = build_dataset(&spec, &CleanSource::Synthetic, &out)?;
    println!(
        "{} examples at {} Hz: train {}, val {}, test {}",
        m.entries.len(),
        m.sample_rate,
        m.count(Split::Train),
        m.count(Split::Val),
        m.count(Split::Test)
    );

    let ds = Dataset::open(&out)?;
    for e in ds.entries(Split::Test) {
        let (rev, rir) = ds.load_pair(e)?;
        println!(
            "{}: {} samples, T60 {:.3} s, target DRR {:.2} dB / measured {:.2} dB",
            e.reverberant,
            rev.len(),
            e.params.t60,
            e.params.drr_target,
            drr(&rir)?
        );
    }
    Ok(())
}
