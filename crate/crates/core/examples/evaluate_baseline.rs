//! Scores the identity self-check and the oracle spectral-division baseline
//! on a fresh toy dataset and prints the report CSV.

use rirlab::evaluation::{evaluate, Method};
use rirlab::synth::{build_dataset, CleanSource, Dataset, DatasetSpec, Split};
use rirlab::Profile;

fn main() -> rirlab::error::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    build_dataset(
        &DatasetSpec::for_profile(Profile::Toy, 30, 9),
        &CleanSource::Synthetic,
        dir.path(),
    )?;
    let ds = Dataset::open(dir.path())?;
    for method in [Method::Identity, Method::Baseline] {
        let ev = evaluate(&ds, Split::Test, &method, Profile::Toy, Default::default())?;
        let mut csv = Vec::new();
        ev.write_report(&mut csv).expect("write to memory");
        println!("{}", String::from_utf8_lossy(&csv));
        for r in &ev.rows {
            println!("  {}: EDR loss {:.2e}, MSE {:.2e}", r.name, r.edr_loss, r.mse);
        }
        println!();
    }
    Ok(())
}
