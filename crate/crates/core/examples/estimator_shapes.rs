//! Layer-by-layer shapes and parameter counts of the estimator and
//! discriminator for both profiles, plus one inference pass.

use rirlab::dsp::Signal;
use rirlab::models::{build_discriminator, build_estimator, estimate, DiscriminatorConfig, EstimatorConfig};
use rirlab::Profile;

fn main() -> rirlab::error::Result<()> {
    for profile in [Profile::Toy, Profile::Full] {
        let cfg = EstimatorConfig::for_profile(profile);
        let est = build_estimator(&cfg, 0)?;
        println!("{profile} estimator: {} parameters", est.net.n_params());
        println!("  input  [1, {}]", cfg.input_len);
        for (i, (c, l)) in cfg.trace()?.into_iter().enumerate() {
            println!("  layer {i:<2} [{c}, {l}]");
        }
        let d = DiscriminatorConfig::for_profile(profile);
        let disc = build_discriminator(&d, 1)?;
        let shapes: Vec<String> = d.trace()?.iter().map(|(c, l)| format!("[{c}, {l}]")).collect();
        println!("{profile} discriminator: {} parameters, {}", disc.net.n_params(), shapes.join(" -> "));

        if profile == Profile::Toy {
            let x: Vec<f64> = (0..cfg.input_len).map(|i| (i as f64 * 0.05).sin() * 0.5).collect();
            let rir = estimate(&est, &Signal::new(x, profile.sample_rate())?)?;
            let peak = rir.peak().map_or(0.0, |p| p.1);
            println!("untrained estimate: {} samples, peak |h| {peak:.3}", rir.len());
        }
    }
    Ok(())
}
