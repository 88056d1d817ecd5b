//! Differentiable energy decay relief.
//!
//! The STFT is expressed as two real matrices (window folded into the cosine
//! and sine bases) so the band energies and their gradient stay in plain
//! `f64` arithmetic. Only the bins covered by the band partition are kept.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::dsp::{BandPartition, StftConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct EdrBasis {
    window_size: usize,
    hop: usize,
    signal_len: usize,
    n_frames: usize,
    /// `[bins][window_size]`: `w[n]·cos(2πkn/N)` and `−w[n]·sin(2πkn/N)`.
    cos: Vec<f64>,
    sin: Vec<f64>,
    band_of_bin: Vec<usize>,
    n_bands: usize,
}

impl EdrBasis {
    pub fn new(cfg: &StftConfig, partition: &BandPartition, signal_len: usize) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.window_size;
        if partition.fft_size != n {
            return Err(Error::InvalidConfig(format!(
                "band partition built for {}-point FFT but STFT window is {n}",
                partition.fft_size
            )));
        }
        if signal_len < n {
            return Err(Error::InvalidConfig(format!(
                "signal length {signal_len} is shorter than the {n}-sample window"
            )));
        }
        let n_bins = partition.covered_bins();
        let mut band_of_bin = vec![0; n_bins];
        for (band, r) in partition.bin_ranges.iter().enumerate() {
            for k in r.clone() {
                band_of_bin[k] = band;
            }
        }
        let win = cfg.window.coefficients(n);
        let mut cos = vec![0.0; n_bins * n];
        let mut sin = vec![0.0; n_bins * n];
        for k in 0..n_bins {
            for (i, w) in win.iter().enumerate() {
                // Reduce kn mod N first to keep the phase argument small.
                let phase = 2.0 * PI * ((k * i) % n) as f64 / n as f64;
                cos[k * n + i] = w * phase.cos();
                sin[k * n + i] = -w * phase.sin();
            }
        }
        Ok(Self {
            window_size: n,
            hop: cfg.hop,
            signal_len,
            n_frames: cfg.n_frames(signal_len),
            cos,
            sin,
            band_of_bin,
            n_bands: partition.n_bands(),
        })
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bands(&self) -> usize {
        self.n_bands
    }

    fn n_bins(&self) -> usize {
        self.band_of_bin.len()
    }

    /// Returns the real and imaginary STFT parts (`[B][frames][bins]`) and
    /// the EDR (`[B][bands][frames]`).
    pub(crate) fn forward(&self, x: &[f64], batch: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (nb, nt, nk, n) = (self.n_bands, self.n_frames, self.n_bins(), self.window_size);
        let mut re = vec![0.0; batch * nt * nk];
        let mut im = vec![0.0; batch * nt * nk];
        let mut edr = vec![0.0; batch * nb * nt];
        re.par_chunks_mut(nt * nk)
            .zip(im.par_chunks_mut(nt * nk))
            .zip(edr.par_chunks_mut(nb * nt))
            .enumerate()
            .for_each(|(b, ((re, im), edr))| {
                let sig = &x[b * self.signal_len..][..self.signal_len];
                for t in 0..nt {
                    let frame = &sig[t * self.hop..][..n];
                    for k in 0..nk {
                        let c = &self.cos[k * n..][..n];
                        let s = &self.sin[k * n..][..n];
                        let r: f64 = frame.iter().zip(c).map(|(a, b)| a * b).sum();
                        let i: f64 = frame.iter().zip(s).map(|(a, b)| a * b).sum();
                        re[t * nk + k] = r;
                        im[t * nk + k] = i;
                        edr[self.band_of_bin[k] * nt + t] += r * r + i * i;
                    }
                }
                for row in edr.chunks_mut(nt) {
                    let mut acc = 0.0;
                    for v in row.iter_mut().rev() {
                        acc += *v;
                        *v = acc;
                    }
                }
            });
        (re, im, edr)
    }

    pub(crate) fn backward(&self, dedr: &[f64], re: &[f64], im: &[f64], batch: usize) -> Vec<f64> {
        let (nb, nt, nk, n) = (self.n_bands, self.n_frames, self.n_bins(), self.window_size);
        let mut dx = vec![0.0; batch * self.signal_len];
        dx.par_chunks_mut(self.signal_len)
            .enumerate()
            .for_each(|(b, dx)| {
                // The suffix sum's adjoint is a prefix sum.
                let mut de = dedr[b * nb * nt..][..nb * nt].to_vec();
                for row in de.chunks_mut(nt) {
                    let mut acc = 0.0;
                    for v in row.iter_mut() {
                        acc += *v;
                        *v = acc;
                    }
                }
                for t in 0..nt {
                    let out = &mut dx[t * self.hop..][..n];
                    for k in 0..nk {
                        let g = 2.0 * de[self.band_of_bin[k] * nt + t];
                        let (r, i) = (g * re[(b * nt + t) * nk + k], g * im[(b * nt + t) * nk + k]);
                        let c = &self.cos[k * n..][..n];
                        let s = &self.sin[k * n..][..n];
                        for ((o, cv), sv) in out.iter_mut().zip(c).zip(s) {
                            *o += r * cv + i * sv;
                        }
                    }
                }
            });
        dx
    }
}
