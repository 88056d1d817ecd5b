//! STFT, octave band partition and spectral-division deconvolution on a
//! synthetic pair.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rirlab::dsp::{fft_convolve, octave_bands, spectral_deconvolve, stft, Signal};
use rirlab::synth::{synth_rir, synthetic_speech, RirParams};
use rirlab::Profile;

fn main() -> rirlab::error::Result<()> {
    let profile = Profile::Toy;
    let sr = profile.sample_rate();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let clean = Signal::new(synthetic_speech(4000, sr, &mut rng), sr)?;
    let rir = synth_rir(
        &RirParams {
            t60: 0.3,
            drr_target: 4.0,
            n_early_reflections: 4,
            direct_delay: 8,
            rir_len: profile.rir_len(),
            seed: 3,
        },
        sr,
    )?;

    let cfg = profile.stft();
    let spec = stft(&clean, &cfg)?;
    println!("{} frames x {} bins ({}-point window, hop {})", spec.n_frames, spec.n_bins, cfg.window_size, cfg.hop);

    let bands = octave_bands(sr, cfg.window_size, &profile.band_centers())?;
    for (c, r) in bands.centers.iter().zip(&bands.bin_ranges) {
        println!("  band {c:>6.0} Hz: bins {r:?}");
    }
    for m in &bands.merged {
        println!("  {} Hz has no bins, merged into {} Hz", m.from_hz, m.into_hz);
    }

    let reverberant = fft_convolve(&clean, &rir)?;
    let recovered = spectral_deconvolve(&reverberant, &clean, 1e-12, rir.len())?;
    let err = recovered
        .samples()
        .iter()
        .zip(rir.samples())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("deconvolution max abs error: {err:.2e}");
    Ok(())
}
