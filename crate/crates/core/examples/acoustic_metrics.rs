//! EDR, ERE, DRR and Schroeder T60 of synthetic RIRs with known parameters.

use rirlab::dsp::Signal;
use rirlab::metrics::{band_ere, drr, edr, edr_loss, ere, schroeder_t60};
use rirlab::synth::{synth_rir, RirParams};
use rirlab::Profile;

fn main() -> rirlab::error::Result<()> {
    let profile = Profile::Full;
    let (cfg, bands) = (profile.stft(), profile.partition());
    let sr = profile.sample_rate();

    println!("{:>6} {:>8} {:>8} {:>8}", "T60", "T60 est", "DRR", "ERE");
    let mut rirs = Vec::new();
    for (i, t60) in [0.2, 0.4, 0.8].into_iter().enumerate() {
        let rir = synth_rir(
            &RirParams {
                t60,
                drr_target: 3.0,
                n_early_reflections: 8,
                direct_delay: 32,
                rir_len: 3 * sr as usize / 2,
                seed: i as u64,
            },
            sr,
        )?;
        println!(
            "{t60:>6.2} {:>8.3} {:>8.2} {:>8.2}",
            schroeder_t60(&rir)?,
            drr(&rir)?,
            ere(&rir)
        );
        rirs.push(rir.fit_to(profile.rir_len()));
    }

    let m = edr(&rirs[1], &cfg, &bands)?;
    println!("EDR of the 0.4 s RIR, first frames (dB):");
    for (b, c) in bands.centers.iter().enumerate() {
        let row: Vec<String> = m.band_db(b).iter().take(6).map(|v| format!("{v:7.1}")).collect();
        println!("  {c:>6.0} Hz {}", row.join(""));
    }
    println!("per-band ERE (dB): {:.1?}", band_ere(&rirs[1], &cfg, &bands)?);

    let loss = edr_loss(&rirs[0], &rirs[2], &cfg, &bands)?;
    println!("EDR loss 0.2 s vs 0.8 s: {:.4e}", loss.total);
    let impulse = Signal::impulse(profile.rir_len(), 0, 1.0, sr)?;
    println!("unit impulse: ERE {} dB, DRR {} dB", ere(&impulse), drr(&impulse)?);
    Ok(())
}
