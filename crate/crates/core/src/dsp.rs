//! Deterministic signal-processing kernels.
//!
//! Everything here is a pure function of its inputs. FFT plans are created per
//! call; the signals involved are short enough that planning is negligible.

use std::f64::consts::{PI, SQRT_2};
use std::ops::Range;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A mono, finite, real-valued waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(invalid!("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(invalid!("sample {i} is not finite"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    /// Unit impulse of amplitude `amp` at `index`.
    pub fn impulse(len: usize, index: usize, amp: f64, sample_rate: u32) -> Result<Self> {
        if index >= len {
            return Err(invalid!("impulse index {index} outside length {len}"));
        }
        let mut s = vec![0.0; len];
        s[index] = amp;
        Self::new(s, sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum()
    }

    /// Index and absolute value of the largest-magnitude sample (first on ties).
    pub fn peak(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, x) in self.samples.iter().enumerate() {
            let a = x.abs();
            if best.is_none_or(|(_, b)| a > b) {
                best = Some((i, a));
            }
        }
        best
    }

    /// Scales the signal so its largest magnitude equals `target`.
    pub fn peak_normalized(&self, target: f64) -> Result<Signal> {
        let peak = self.peak().map_or(0.0, |(_, p)| p);
        if peak == 0.0 {
            return Err(invalid!("cannot peak-normalize a silent signal"));
        }
        let g = target / peak;
        Signal::new(self.samples.iter().map(|x| x * g).collect(), self.sample_rate)
    }

    /// Truncates or zero-pads to exactly `len` samples.
    pub fn fit_to(&self, len: usize) -> Signal {
        let mut s = self.samples.clone();
        s.resize(len, 0.0);
        Signal {
            samples: s,
            sample_rate: self.sample_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Rectangular,
    Hann,
}

impl Window {
    /// Periodic window coefficients of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_size: usize,
    pub hop: usize,
    pub window: Window,
}

impl StftConfig {
    pub fn new(window_size: usize, hop: usize, window: Window) -> Result<Self> {
        let cfg = Self {
            window_size,
            hop,
            window,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.window_size.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "window size {} is not a power of two",
                self.window_size
            )));
        }
        if self.hop == 0 || self.hop > self.window_size {
            return Err(Error::InvalidConfig(format!(
                "hop {} must lie in 1..={}",
                self.hop, self.window_size
            )));
        }
        Ok(())
    }

    /// One-sided bin count.
    pub fn n_bins(&self) -> usize {
        self.window_size / 2 + 1
    }

    /// Number of full frames that fit in `len` samples (no padding).
    pub fn n_frames(&self, len: usize) -> usize {
        if len < self.window_size {
            0
        } else {
            (len - self.window_size) / self.hop + 1
        }
    }

    /// Centre time of frame `t`, in seconds.
    pub fn frame_center(&self, t: usize, sample_rate: u32) -> f64 {
        (t * self.hop) as f64 / sample_rate as f64
            + self.window_size as f64 / (2.0 * sample_rate as f64)
    }
}

/// Row-major `[frames × bins]` complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub n_frames: usize,
    pub n_bins: usize,
    pub data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn get(&self, t: usize, k: usize) -> Complex64 {
        self.data[t * self.n_bins + k]
    }
}

/// One-sided short-time Fourier transform without edge padding.
pub fn stft(signal: &Signal, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    let n = cfg.window_size;
    if signal.len() < n {
        return Err(invalid!(
            "signal of {} samples is shorter than one {n}-sample window",
            signal.len()
        ));
    }
    let n_frames = cfg.n_frames(signal.len());
    let n_bins = cfg.n_bins();
    let window = cfg.window.coefficients(n);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut data = Vec::with_capacity(n_frames * n_bins);
    for t in 0..n_frames {
        let start = t * cfg.hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(signal.samples[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..n_bins]);
    }
    Ok(Spectrogram {
        n_frames,
        n_bins,
        data,
    })
}

/// An empty octave band that was folded into a neighbour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandMerge {
    pub from_hz: f64,
    pub into_hz: f64,
}

/// Assignment of one-sided FFT bins to octave bands.
///
/// Only non-empty bands are kept; empty nominal bands are recorded in
/// `merged` together with the band that absorbed them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPartition {
    pub centers: Vec<f64>,
    pub bin_ranges: Vec<Range<usize>>,
    pub merged: Vec<BandMerge>,
    pub sample_rate: u32,
    pub fft_size: usize,
}

impl BandPartition {
    pub fn n_bands(&self) -> usize {
        self.centers.len()
    }

    /// Number of leading bins covered by the partition.
    pub fn covered_bins(&self) -> usize {
        self.bin_ranges.last().map_or(0, |r| r.end)
    }

    pub fn band_of(&self, bin: usize) -> Option<usize> {
        self.bin_ranges.iter().position(|r| r.contains(&bin))
    }
}

/// Groups the one-sided bins of a `fft_size`-point transform into octave
/// bands around `centers`.
///
/// Neighbouring bands meet at the geometric mean of their centres (which is
/// `c·√2` for exact octaves); the lowest band also owns everything down to DC
/// and the top band ends at `c_top·√2`. Bins above that edge are unassigned.
pub fn octave_bands(sample_rate: u32, fft_size: usize, centers: &[f64]) -> Result<BandPartition> {
    if centers.is_empty() {
        return Err(invalid!("at least one band centre is required"));
    }
    if fft_size < 2 {
        return Err(invalid!("fft size {fft_size} too small"));
    }
    if centers[0] <= 0.0 || centers.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid!("band centres must be positive and strictly increasing"));
    }
    let nyquist = sample_rate as f64 / 2.0;
    let top = *centers.last().unwrap();
    if top >= nyquist {
        return Err(invalid!(
            "band centre {top} Hz is not below the Nyquist frequency {nyquist} Hz"
        ));
    }

    let mut upper: Vec<f64> = centers.windows(2).map(|w| (w[0] * w[1]).sqrt()).collect();
    upper.push(top * SQRT_2);

    let n_bins = fft_size / 2 + 1;
    let bin_hz = sample_rate as f64 / fft_size as f64;
    let mut raw: Vec<Range<usize>> = Vec::with_capacity(centers.len());
    let mut k = 0;
    for &edge in &upper {
        let start = k;
        while k < n_bins && (k as f64) * bin_hz < edge {
            k += 1;
        }
        raw.push(start..k);
    }

    let mut out_centers = Vec::new();
    let mut out_ranges: Vec<Range<usize>> = Vec::new();
    let mut merged = Vec::new();
    let mut pending: Vec<f64> = Vec::new();
    for (c, r) in centers.iter().zip(raw) {
        if r.is_empty() {
            pending.push(*c);
            continue;
        }
        merged.extend(pending.drain(..).map(|from_hz| BandMerge {
            from_hz,
            into_hz: *c,
        }));
        out_centers.push(*c);
        out_ranges.push(r);
    }
    // Empty bands above the last non-empty one fold downward.
    let Some(&last) = out_centers.last() else {
        return Err(invalid!(
            "no FFT bin falls inside any band at {sample_rate} Hz / {fft_size} points"
        ));
    };
    merged.extend(pending.into_iter().map(|from_hz| BandMerge {
        from_hz,
        into_hz: last,
    }));

    Ok(BandPartition {
        centers: out_centers,
        bin_ranges: out_ranges,
        merged,
        sample_rate,
        fft_size,
    })
}

fn check_rates(a: &Signal, b: &Signal) -> Result<()> {
    if a.sample_rate != b.sample_rate {
        return Err(invalid!(
            "sample rate mismatch: {} Hz vs {} Hz",
            a.sample_rate,
            b.sample_rate
        ));
    }
    Ok(())
}

fn forward_padded(x: &[f64], n: usize, planner: &mut FftPlanner<f64>) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    planner.plan_fft_forward(n).process(&mut buf);
    buf
}

fn inverse_real(mut spec: Vec<Complex64>, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = spec.len();
    planner.plan_fft_inverse(n).process(&mut spec);
    let scale = 1.0 / n as f64;
    spec.into_iter().map(|c| c.re * scale).collect()
}

/// Full linear convolution of two sample sequences via zero-padded FFT.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fa = forward_padded(a, n, &mut planner);
    let fb = forward_padded(b, n, &mut planner);
    let prod = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();
    let mut out = inverse_real(prod, &mut planner);
    out.truncate(out_len);
    out
}

/// Reverberant signal `clean * rir`, full length `len(clean) + len(rir) - 1`.
pub fn fft_convolve(clean: &Signal, rir: &Signal) -> Result<Signal> {
    check_rates(clean, rir)?;
    if clean.is_empty() || rir.is_empty() {
        return Err(invalid!("convolution inputs must be non-empty"));
    }
    Signal::new(convolve(&clean.samples, &rir.samples), clean.sample_rate)
}

/// Recovers an impulse response from a reverberant/clean pair by
/// Tikhonov-regularised spectral division
/// `F(y)·conj(F(x)) / (|F(x)|² + eps)`, returning the first `out_len` taps.
pub fn spectral_deconvolve(
    reverberant: &Signal,
    clean: &Signal,
    eps: f64,
    out_len: usize,
) -> Result<Signal> {
    check_rates(reverberant, clean)?;
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(invalid!("regularisation eps must be finite and >= 0, got {eps}"));
    }
    if reverberant.is_empty() || clean.is_empty() {
        return Err(invalid!("deconvolution inputs must be non-empty"));
    }
    let n = reverberant.len().max(clean.len()).next_power_of_two();
    if out_len > n {
        return Err(invalid!("out_len {out_len} exceeds padded FFT length {n}"));
    }
    let mut planner = FftPlanner::new();
    let fy = forward_padded(&reverberant.samples, n, &mut planner);
    let fx = forward_padded(&clean.samples, n, &mut planner);
    let mut ratio = Vec::with_capacity(n);
    for (k, (y, x)) in fy.iter().zip(&fx).enumerate() {
        let denom = x.norm_sqr() + eps;
        if denom == 0.0 {
            return Err(Error::DivideByZero(format!(
                "clean spectrum bin {k} has zero magnitude and eps = 0"
            )));
        }
        ratio.push(y * x.conj() / denom);
    }
    let mut h = inverse_real(ratio, &mut planner);
    h.truncate(out_len);
    Signal::new(h, reverberant.sample_rate)
}
