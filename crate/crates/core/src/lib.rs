//! Blind room impulse response (RIR) estimation toolkit.
//!
//! The crate is organised bottom-up:
//!
//! - [`dsp`]: STFT, octave-band partitioning, FFT convolution and regularised
//!   spectral-division deconvolution.
//! - [`metrics`]: energy decay relief (EDR), EDR loss, early reflection energy,
//!   direct-to-reverberant ratio, MSE, Schroeder T60 and aggregate reports.
//! - [`synth`]: synthetic RIRs, reverberant-speech examples, WAV I/O and
//!   dataset manifests.
//! - [`autodiff`]: a closed-world reverse-mode engine with exactly the
//!   operators the estimator, discriminator and losses need, plus RMSprop and
//!   the checkpoint format.
//! - [`models`]: the encoder-decoder estimator and the conditional
//!   discriminator.
//! - [`training`]: alternating adversarial training with validation-EDR
//!   model selection.
//! - [`evaluation`]: per-split scoring of model estimates, the oracle
//!   spectral-division baseline and the identity self-check.
//! - [`cli`]: the `rirlab` command line.
//!
//! Runnable walkthroughs for each layer live in `examples/`.

pub mod autodiff;
pub mod cli;
pub mod dsp;
pub mod error;
pub mod evaluation;
pub mod metrics;
pub mod models;
pub mod synth;
pub mod training;

pub use dsp::{BandPartition, Signal, StftConfig, Window};
pub use error::{Error, Result};
pub use metrics::{EdrMatrix, MetricReport};

/// Parameter presets: `full` mirrors the 16 kHz / 4096-tap setting, `toy` is
/// an 8 kHz / 256-tap setting that trains in minutes on a CPU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Full,
    Toy,
}

impl Profile {
    pub fn sample_rate(self) -> u32 {
        match self {
            Profile::Full => 16_000,
            Profile::Toy => 8_000,
        }
    }

    /// Length of one reverberant example (one second).
    pub fn example_len(self) -> usize {
        self.sample_rate() as usize
    }

    pub fn rir_len(self) -> usize {
        match self {
            Profile::Full => 4096,
            Profile::Toy => 256,
        }
    }

    pub fn stft(self) -> StftConfig {
        match self {
            Profile::Full => StftConfig::new(256, 128, Window::Hann),
            Profile::Toy => StftConfig::new(64, 32, Window::Hann),
        }
        .expect("preset STFT configs are valid")
    }

    /// Octave-band centres used for EDR/ERE reporting. The toy profile stops
    /// at 2 kHz because 4 kHz is its Nyquist frequency.
    pub fn band_centers(self) -> Vec<f64> {
        let all = [16.0, 32.0, 63.0, 125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0];
        let nyquist = self.sample_rate() as f64 / 2.0;
        all.into_iter().filter(|&c| c < nyquist).collect()
    }

    pub fn partition(self) -> BandPartition {
        dsp::octave_bands(
            self.sample_rate(),
            self.stft().window_size,
            &self.band_centers(),
        )
        .expect("preset band layout is valid")
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Profile::Full),
            "toy" => Ok(Profile::Toy),
            other => Err(Error::InvalidInput(format!(
                "unknown profile {other:?} (expected full or toy)"
            ))),
        }
    }
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Profile::Full => "full",
            Profile::Toy => "toy",
        })
    }
}
