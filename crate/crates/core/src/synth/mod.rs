//! Synthetic RIRs and reverberant-speech examples.
//!
//! RIRs are built as a direct impulse, a handful of sparse early reflections
//! and an exponentially decaying Gaussian tail whose level is solved for so
//! the requested direct-to-reverberant ratio holds.

mod dataset;
mod wav;

pub use dataset::{
    build_dataset, split_counts, CleanSource, Dataset, DatasetManifest, DatasetSpec, EntryParams,
    ManifestEntry, ParamRanges, Split,
};
pub use wav::{read_wav, write_wav, WavFormat};

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp::{fft_convolve, Signal};
use crate::error::{invalid, Result};
use crate::metrics::{direct_half_window, drr, EARLY_MS};

/// Peak level of reverberant examples.
pub const REVERBERANT_PEAK: f64 = 0.95;

/// `ln(1000)`: amplitude decay constant giving -60 dB after one T60.
const DECAY_60DB: f64 = 6.908;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RirParams {
    /// Seconds; the generator is tuned for 0.05..=1.0.
    pub t60: f64,
    pub drr_target: f64,
    /// 0..=32.
    pub n_early_reflections: usize,
    pub direct_delay: usize,
    pub rir_len: usize,
    pub seed: u64,
}

impl RirParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t60 > 0.0) || !self.t60.is_finite() {
            return Err(invalid!("t60 must be positive, got {}", self.t60));
        }
        if !self.drr_target.is_finite() {
            return Err(invalid!("drr_target must be finite"));
        }
        if self.n_early_reflections > 32 {
            return Err(invalid!(
                "at most 32 early reflections, got {}",
                self.n_early_reflections
            ));
        }
        if self.rir_len <= self.direct_delay {
            return Err(invalid!(
                "rir_len {} must exceed direct_delay {}",
                self.rir_len,
                self.direct_delay
            ));
        }
        Ok(())
    }
}

fn envelope(lag: usize, sample_rate: u32, t60: f64) -> f64 {
    (-DECAY_60DB * lag as f64 / sample_rate as f64 / t60).exp()
}

/// Generates a peak-normalised RIR. Output is a pure function of `params`
/// and `sample_rate`.
pub fn synth_rir(params: &RirParams, sample_rate: u32) -> Result<Signal> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let d = params.direct_delay;
    let len = params.rir_len;

    let mut rest = vec![0.0; len];
    for (n, v) in rest.iter_mut().enumerate().skip(d + 1) {
        let g: f64 = StandardNormal.sample(&mut rng);
        *v = g * envelope(n - d, sample_rate, params.t60);
    }
    let early_end = (d + sample_rate as usize * EARLY_MS / 1000).min(len - 1);
    if early_end > d {
        for _ in 0..params.n_early_reflections {
            let pos = rng.gen_range(d + 1..=early_end);
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let amp = rng.gen_range(2.0..5.0) * envelope(pos - d, sample_rate, params.t60);
            rest[pos] += sign * amp;
        }
    }

    // Energies of the reverberant part inside/outside the direct window.
    let hw = direct_half_window(sample_rate);
    let lo = d.saturating_sub(hw);
    let hi = (d + hw + 1).min(len);
    let inside: f64 = rest[lo..hi].iter().map(|x| x * x).sum();
    let outside: f64 = rest[..lo].iter().chain(&rest[hi..]).map(|x| x * x).sum();
    let ratio = 10f64.powf(params.drr_target / 10.0);
    // DRR = (1 + s²·inside) / (s²·outside)  =>  s² = 1 / (ratio·outside - inside).
    let denom = ratio * outside - inside;
    if !(denom > 0.0) {
        return Err(invalid!(
            "DRR target {} dB is infeasible for this RIR (tail would need negative energy)",
            params.drr_target
        ));
    }
    let s = denom.recip().sqrt();
    let mut rir: Vec<f64> = rest.iter().map(|x| s * x).collect();
    rir[d] += 1.0;
    let rir = Signal::new(rir, sample_rate)?.peak_normalized(1.0)?;

    let measured = drr(&rir)?;
    if (measured - params.drr_target).abs() > 1.0 {
        return Err(invalid!(
            "DRR target {} dB is infeasible: reverberant part exceeds the direct peak (measured {measured:.2} dB)",
            params.drr_target
        ));
    }
    Ok(rir)
}

/// Speech-like excitation: 3–8 amplitude-modulated harmonic tones plus white
/// noise at 10% of the tonal RMS.
pub fn synthetic_speech<R: Rng>(len: usize, sample_rate: u32, rng: &mut R) -> Vec<f64> {
    let sr = sample_rate as f64;
    let n_tones = rng.gen_range(3..=8);
    let mut out = vec![0.0; len];
    for _ in 0..n_tones {
        let f0 = rng.gen_range(90.0..(sr / 8.0).min(900.0));
        let level = rng.gen_range(0.5..1.0);
        let fm = rng.gen_range(2.0..7.0);
        let am_phase = rng.gen_range(0.0..2.0 * PI);
        let phases: [f64; 3] = [
            rng.gen_range(0.0..2.0 * PI),
            rng.gen_range(0.0..2.0 * PI),
            rng.gen_range(0.0..2.0 * PI),
        ];
        for (i, v) in out.iter_mut().enumerate() {
            let t = i as f64 / sr;
            let am = 0.5 * (1.0 + (2.0 * PI * fm * t + am_phase).sin());
            let mut tone = 0.0;
            for (h, ph) in phases.iter().enumerate() {
                let f = f0 * (h + 1) as f64;
                if f < sr / 2.0 {
                    tone += (2.0 * PI * f * t + ph).sin() / (h + 1) as f64;
                }
            }
            *v += level * am * tone;
        }
    }
    let rms = (out.iter().map(|x| x * x).sum::<f64>() / len.max(1) as f64).sqrt();
    for v in &mut out {
        let g: f64 = StandardNormal.sample(rng);
        *v += 0.1 * rms * g;
    }
    out
}

/// Convolves `clean` with `rir`, truncates to `example_len` and
/// peak-normalises the result to [`REVERBERANT_PEAK`].
pub fn make_example(clean: &Signal, rir: &Signal, example_len: usize) -> Result<(Signal, Signal)> {
    if clean.len() < example_len {
        return Err(invalid!(
            "clean signal has {} samples, example needs {example_len}",
            clean.len()
        ));
    }
    let full = fft_convolve(clean, rir)?;
    let reverberant = full.fit_to(example_len).peak_normalized(REVERBERANT_PEAK)?;
    Ok((reverberant, rir.clone()))
}
