//! Room-acoustic metrics and losses on impulse responses.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::dsp::{stft, BandMerge, BandPartition, Signal, StftConfig};
use crate::error::{invalid, Error, Result};

/// Energy floor applied before every logarithm (bounds dB values at -120).
pub const ENERGY_FLOOR: f64 = 1e-12;

/// Early/late boundary for ERE, in milliseconds.
pub const EARLY_MS: usize = 80;

/// Half-width of the direct-sound window used by [`drr`], in seconds.
pub const DIRECT_HALF_WINDOW_S: f64 = 0.0025;

pub fn to_db(energy: f64) -> f64 {
    10.0 * energy.max(ENERGY_FLOOR).log10()
}

/// Energy decay relief: remaining energy per (band, frame).
#[derive(Debug, Clone, PartialEq)]
pub struct EdrMatrix {
    /// `[bands][frames]`, non-increasing along frames.
    pub values: Vec<Vec<f64>>,
    pub partition: BandPartition,
    /// Frame centre times in seconds.
    pub frame_times: Vec<f64>,
}

impl EdrMatrix {
    pub fn n_bands(&self) -> usize {
        self.values.len()
    }

    pub fn n_frames(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// Row `band` in dB, floored at -120 dB.
    pub fn band_db(&self, band: usize) -> Vec<f64> {
        self.values[band].iter().map(|&v| to_db(v)).collect()
    }
}

fn check_partition(cfg: &StftConfig, partition: &BandPartition, sample_rate: u32) -> Result<()> {
    if partition.fft_size != cfg.window_size {
        return Err(Error::InvalidConfig(format!(
            "band partition built for {}-point FFT but STFT window is {}",
            partition.fft_size, cfg.window_size
        )));
    }
    if partition.sample_rate != sample_rate {
        return Err(Error::InvalidConfig(format!(
            "band partition built for {} Hz but signal is {} Hz",
            partition.sample_rate, sample_rate
        )));
    }
    Ok(())
}

/// Per-frame band energies `Σ_{k∈b} |H(t,k)|²`, laid out `[bands][frames]`.
pub fn band_frame_energies(
    rir: &Signal,
    cfg: &StftConfig,
    partition: &BandPartition,
) -> Result<Vec<Vec<f64>>> {
    check_partition(cfg, partition, rir.sample_rate())?;
    let spec = stft(rir, cfg)?;
    Ok(partition
        .bin_ranges
        .iter()
        .map(|bins| {
            (0..spec.n_frames)
                .map(|t| spec.frame(t)[bins.clone()].iter().map(|c| c.norm_sqr()).sum())
                .collect()
        })
        .collect())
}

pub fn edr(rir: &Signal, cfg: &StftConfig, partition: &BandPartition) -> Result<EdrMatrix> {
    let energies = band_frame_energies(rir, cfg, partition)?;
    let values = energies
        .into_iter()
        .map(|mut row| {
            let mut acc = 0.0;
            for v in row.iter_mut().rev() {
                acc += *v;
                *v = acc;
            }
            row
        })
        .collect::<Vec<_>>();
    let n_frames = values.first().map_or(0, Vec::len);
    Ok(EdrMatrix {
        values,
        partition: partition.clone(),
        frame_times: (0..n_frames)
            .map(|t| cfg.frame_center(t, rir.sample_rate()))
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdrLoss {
    /// Mean over bands and frames of the squared EDR difference.
    pub total: f64,
    /// Mean over frames, one entry per band.
    pub per_band: Vec<f64>,
}

fn check_pair(a: &Signal, b: &Signal) -> Result<()> {
    if a.len() != b.len() {
        return Err(invalid!("length mismatch: {} vs {} samples", a.len(), b.len()));
    }
    if a.sample_rate() != b.sample_rate() {
        return Err(invalid!(
            "sample rate mismatch: {} Hz vs {} Hz",
            a.sample_rate(),
            b.sample_rate()
        ));
    }
    Ok(())
}

/// Squared-error distance between two EDRs, averaged over bands and frames.
pub fn edr_loss(
    estimated: &Signal,
    truth: &Signal,
    cfg: &StftConfig,
    partition: &BandPartition,
) -> Result<EdrLoss> {
    check_pair(estimated, truth)?;
    let a = edr(estimated, cfg, partition)?;
    let b = edr(truth, cfg, partition)?;
    Ok(edr_distance(&a, &b))
}

pub(crate) fn edr_distance(a: &EdrMatrix, b: &EdrMatrix) -> EdrLoss {
    let mut sum = 0.0;
    let mut count = 0usize;
    let per_band = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(ra, rb)| {
            let s: f64 = ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)).sum();
            sum += s;
            count += ra.len();
            s / ra.len() as f64
        })
        .collect();
    EdrLoss {
        total: sum / count as f64,
        per_band,
    }
}

fn early_len(sample_rate: u32) -> usize {
    sample_rate as usize * EARLY_MS / 1000
}

/// Early reflection energy: `10·log10(Σ_{t≤80 ms} rir²)` in dB.
pub fn ere(rir: &Signal) -> f64 {
    let end = (early_len(rir.sample_rate()) + 1).min(rir.len());
    to_db(rir.samples()[..end].iter().map(|x| x * x).sum())
}

/// Per-band early energy in dB: band-restricted STFT energy summed over the
/// frames whose centres fall within the first 80 ms.
pub fn band_ere(rir: &Signal, cfg: &StftConfig, partition: &BandPartition) -> Result<Vec<f64>> {
    let energies = band_frame_energies(rir, cfg, partition)?;
    let limit = early_len(rir.sample_rate());
    let n_early = (0..energies.first().map_or(0, Vec::len))
        .take_while(|t| t * cfg.hop + cfg.window_size / 2 <= limit)
        .count();
    Ok(energies
        .iter()
        .map(|row| to_db(row[..n_early].iter().sum()))
        .collect())
}

/// Half-width of the direct-sound window in samples.
pub fn direct_half_window(sample_rate: u32) -> usize {
    (sample_rate as f64 * DIRECT_HALF_WINDOW_S).round() as usize
}

/// Direct-to-reverberant ratio in dB. The direct part is a ±2.5 ms window
/// around the absolute peak; everything else counts as reverberant.
pub fn drr(rir: &Signal) -> Result<f64> {
    let (peak, amp) = rir
        .peak()
        .ok_or_else(|| invalid!("DRR of an empty signal"))?;
    if amp == 0.0 {
        return Err(invalid!("DRR of an all-zero signal"));
    }
    let hw = direct_half_window(rir.sample_rate());
    let lo = peak.saturating_sub(hw);
    let hi = (peak + hw + 1).min(rir.len());
    let s = rir.samples();
    let direct: f64 = s[lo..hi].iter().map(|x| x * x).sum();
    let rest: f64 = s[..lo].iter().chain(&s[hi..]).map(|x| x * x).sum();
    Ok(10.0 * (direct / rest.max(ENERGY_FLOOR)).log10())
}

/// Mean squared sample error.
pub fn mse(estimated: &Signal, truth: &Signal) -> Result<f64> {
    check_pair(estimated, truth)?;
    Ok(raw_mse(estimated.samples(), truth.samples()))
}

fn raw_mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (y - x) * (y - x)).sum::<f64>() / a.len().max(1) as f64
}

/// [`mse`] with optional peak normalisation of both signals to unit peak.
/// Silent signals are left untouched when normalising.
pub fn mse_with(estimated: &Signal, truth: &Signal, peak_normalize: bool) -> Result<f64> {
    if !peak_normalize {
        return mse(estimated, truth);
    }
    check_pair(estimated, truth)?;
    let norm = |s: &Signal| s.peak_normalized(1.0).unwrap_or_else(|_| s.clone());
    Ok(raw_mse(norm(estimated).samples(), norm(truth).samples()))
}

/// Reverberation time from Schroeder backward integration: a least-squares
/// line through the -5 dB .. -25 dB part of the decay curve, extrapolated
/// to -60 dB.
pub fn schroeder_t60(rir: &Signal) -> Result<f64> {
    let s = rir.samples();
    let mut edc = vec![0.0; s.len()];
    let mut acc = 0.0;
    for (e, x) in edc.iter_mut().zip(s).rev() {
        acc += x * x;
        *e = acc;
    }
    let total = edc.first().copied().unwrap_or(0.0);
    if total <= 0.0 {
        return Err(invalid!("T60 of a signal with no energy"));
    }
    let db: Vec<f64> = edc.iter().map(|&e| 10.0 * (e / total).log10()).collect();
    let start = db.iter().position(|&v| v <= -5.0);
    let end = db.iter().position(|&v| v <= -25.0);
    let (Some(start), Some(end)) = (start, end) else {
        return Err(Error::EstimationFailed(
            "decay curve never spans -5 dB to -25 dB".into(),
        ));
    };
    // Points must be finite; a curve that jumps straight to silence has none.
    let pts: Vec<(f64, f64)> = (start..=end)
        .filter(|&i| db[i].is_finite())
        .map(|i| (i as f64 / rir.sample_rate() as f64, db[i]))
        .collect();
    if pts.len() < 3 {
        return Err(Error::EstimationFailed(format!(
            "decay segment has {} points, need at least 3",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(Error::EstimationFailed("decay slope is not negative".into()));
    }
    // 3 × time to fall 20 dB on the fitted line.
    Ok(3.0 * (-20.0 / slope))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReportOptions {
    /// Peak-normalise both RIRs before computing MSE.
    pub peak_normalize_mse: bool,
}

/// Metrics for one (estimated, truth) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairMetrics {
    pub edr_loss: f64,
    pub per_band_edr_loss: Vec<f64>,
    pub band_ere_estimated: Vec<f64>,
    pub band_ere_truth: Vec<f64>,
    pub drr_estimated: f64,
    pub drr_truth: f64,
    pub mse: f64,
}

pub fn pair_metrics(
    estimated: &Signal,
    truth: &Signal,
    cfg: &StftConfig,
    partition: &BandPartition,
    opts: ReportOptions,
) -> Result<PairMetrics> {
    let loss = edr_loss(estimated, truth, cfg, partition)?;
    Ok(PairMetrics {
        edr_loss: loss.total,
        per_band_edr_loss: loss.per_band,
        band_ere_estimated: band_ere(estimated, cfg, partition)?,
        band_ere_truth: band_ere(truth, cfg, partition)?,
        drr_estimated: drr(estimated)?,
        drr_truth: drr(truth)?,
        mse: mse_with(estimated, truth, opts.peak_normalize_mse)?,
    })
}

/// Aggregate metrics over a set of RIR pairs, in the shape of the
/// per-band loss tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub centers: Vec<f64>,
    pub merged: Vec<BandMerge>,
    /// `log10` of the across-pair mean EDR loss, per band.
    pub per_band_log_edr_loss: Vec<f64>,
    /// Mean absolute per-band ERE error in dB.
    pub per_band_ere_mae: Vec<f64>,
    pub drr_mae: f64,
    pub mse: f64,
    pub n_pairs: usize,
}

impl MetricReport {
    pub fn from_pairs(metrics: &[PairMetrics], partition: &BandPartition) -> Result<Self> {
        if metrics.is_empty() {
            return Err(invalid!("metric report needs at least one pair"));
        }
        let n = metrics.len() as f64;
        let bands = partition.n_bands();
        let mut edr_mean = vec![0.0; bands];
        let mut ere_mae = vec![0.0; bands];
        let mut drr_mae = 0.0;
        let mut mse = 0.0;
        for m in metrics {
            for b in 0..bands {
                edr_mean[b] += m.per_band_edr_loss[b] / n;
                ere_mae[b] += (m.band_ere_estimated[b] - m.band_ere_truth[b]).abs() / n;
            }
            drr_mae += (m.drr_estimated - m.drr_truth).abs() / n;
            mse += m.mse / n;
        }
        Ok(Self {
            centers: partition.centers.clone(),
            merged: partition.merged.clone(),
            per_band_log_edr_loss: edr_mean
                .into_iter()
                .map(|v| v.max(ENERGY_FLOOR).log10())
                .collect(),
            per_band_ere_mae: ere_mae,
            drr_mae,
            mse,
            n_pairs: metrics.len(),
        })
    }

    /// Writes the report table.
    ///
    /// Layout: `#`-prefixed annotation lines (the caller's `notes`, then any
    /// merged bands), the header `center_hz,log_edr_loss,ere_mae_db`, one row
    /// per band, then a `drr_mae_db,mse` header and its single summary row.
    pub fn write_csv<W: Write>(&self, mut w: W, notes: &[String]) -> std::io::Result<()> {
        for note in notes {
            writeln!(w, "# {note}")?;
        }
        for m in &self.merged {
            writeln!(w, "# merged band: {} Hz -> {} Hz", m.from_hz, m.into_hz)?;
        }
        writeln!(w, "# n_pairs: {}", self.n_pairs)?;
        writeln!(w, "center_hz,log_edr_loss,ere_mae_db")?;
        for ((c, l), e) in self
            .centers
            .iter()
            .zip(&self.per_band_log_edr_loss)
            .zip(&self.per_band_ere_mae)
        {
            writeln!(w, "{c},{l},{e}")?;
        }
        writeln!(w, "drr_mae_db,mse")?;
        writeln!(w, "{},{}", self.drr_mae, self.mse)?;
        Ok(())
    }
}

/// Evaluates every pair (in parallel) and aggregates in input order.
pub fn metric_report(
    pairs: &[(Signal, Signal)],
    cfg: &StftConfig,
    partition: &BandPartition,
    opts: ReportOptions,
) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(invalid!("metric report needs at least one pair"));
    }
    let metrics = pairs
        .par_iter()
        .map(|(e, t)| pair_metrics(e, t, cfg, partition, opts))
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_pairs(&metrics, partition)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{octave_bands, Window};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64, sr: u32) -> Signal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Signal::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), sr).unwrap()
    }

    fn toy() -> (StftConfig, BandPartition) {
        let cfg = StftConfig::new(64, 32, Window::Hann).unwrap();
        let p = octave_bands(8000, 64, &[125.0, 250.0, 500.0, 1000.0, 2000.0]).unwrap();
        (cfg, p)
    }

    #[test]
    fn edr_of_impulse_rectangular() {
        let cfg = StftConfig::new(64, 32, Window::Rectangular).unwrap();
        let p = octave_bands(8000, 64, &[16.0, 125.0, 250.0, 500.0, 1000.0, 2000.0]).unwrap();
        let e = edr(&Signal::impulse(256, 0, 1.0, 8000).unwrap(), &cfg, &p).unwrap();
        // Rectangular window: every bin of frame 0 has |H|² = 1.
        let total: f64 = e.values.iter().map(|r| r[0]).sum();
        assert!((total - p.covered_bins() as f64).abs() < 1e-12);
        // Only frame 0 contains sample 0.
        for row in &e.values {
            assert!(row[1..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn edr_rows_match_naive_suffix_sum() {
        let cfg = StftConfig::new(64, 16, Window::Hann).unwrap();
        let p = octave_bands(8000, 64, &[16.0, 125.0, 250.0, 500.0, 1000.0, 2000.0]).unwrap();
        let x = noise(512, 3, 8000);
        let e = edr(&x, &cfg, &p).unwrap();
        let spec = stft(&x, &cfg).unwrap();
        for (b, bins) in p.bin_ranges.iter().enumerate() {
            for t0 in [0, 5, spec.n_frames - 1] {
                let mut naive = 0.0;
                for t in t0..spec.n_frames {
                    for k in bins.clone() {
                        naive += spec.get(t, k).norm_sqr();
                    }
                }
                assert!((e.values[b][t0] - naive).abs() <= 1e-12 * naive.max(1.0));
            }
        }
        assert_eq!(e.frame_times.len(), spec.n_frames);
        assert!((e.frame_times[0] - 32.0 / 8000.0).abs() < 1e-15);
    }

    #[test]
    fn edr_partition_mismatch() {
        let cfg = StftConfig::new(128, 32, Window::Hann).unwrap();
        let (_, p) = toy();
        let err = edr(&noise(512, 1, 8000), &cfg, &p).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn edr_loss_basic_properties() {
        let (cfg, p) = toy();
        let a = noise(256, 1, 8000);
        let b = noise(256, 2, 8000);
        assert_eq!(edr_loss(&a, &a, &cfg, &p).unwrap().total, 0.0);
        let ab = edr_loss(&a, &b, &cfg, &p).unwrap();
        let ba = edr_loss(&b, &a, &cfg, &p).unwrap();
        assert_eq!(ab, ba);
        assert!(ab.total > 0.0);

        let scale = |s: &Signal| {
            Signal::new(s.samples().iter().map(|x| 2.0 * x).collect(), 8000).unwrap()
        };
        let scaled = edr_loss(&scale(&a), &scale(&b), &cfg, &p).unwrap();
        assert!((scaled.total / ab.total - 16.0).abs() < 1e-10);
    }

    #[test]
    fn edr_loss_against_zero_matches_double_loop() {
        let (cfg, p) = toy();
        let truth = noise(256, 5, 8000);
        let zero = Signal::zeros(256, 8000).unwrap();
        let loss = edr_loss(&zero, &truth, &cfg, &p).unwrap();
        let e = edr(&truth, &cfg, &p).unwrap();
        let mut acc = 0.0;
        let mut n = 0;
        for b in 0..e.n_bands() {
            for t in 0..e.n_frames() {
                acc += e.values[b][t] * e.values[b][t];
                n += 1;
            }
        }
        assert!((loss.total - acc / n as f64).abs() <= 1e-12 * loss.total);
        assert_eq!(loss.per_band.len(), p.n_bands());
    }

    #[test]
    fn edr_loss_length_mismatch() {
        let (cfg, p) = toy();
        let err = edr_loss(&noise(256, 1, 8000), &noise(300, 1, 8000), &cfg, &p).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn ere_values() {
        assert_eq!(ere(&Signal::impulse(100, 0, 1.0, 16000).unwrap()), 0.0);
        let half = ere(&Signal::impulse(100, 0, 0.5, 16000).unwrap());
        assert!((half - 10.0 * 0.25f64.log10()).abs() < 1e-12);
        assert!((half + 6.0206).abs() < 1e-4);
        // 90 ms at 16 kHz is sample 1440, outside the early window.
        let late = Signal::impulse(2000, 1440, 1.0, 16000).unwrap();
        assert!((ere(&late) + 120.0).abs() < 1e-9);
        // Sample 1280 (exactly 80 ms) is still early.
        assert_eq!(ere(&Signal::impulse(2000, 1280, 1.0, 16000).unwrap()), 0.0);
    }

    #[test]
    fn ere_ignores_late_samples() {
        let mut s = noise(3000, 9, 16000).into_samples();
        let before = ere(&Signal::new(s.clone(), 16000).unwrap());
        for v in &mut s[1281..] {
            *v *= -3.0;
        }
        assert_eq!(before, ere(&Signal::new(s, 16000).unwrap()));
    }

    #[test]
    fn drr_values() {
        let mut s = vec![0.0; 2000];
        s[0] = 1.0;
        s[800] = 0.5; // 50 ms at 16 kHz
        let d = drr(&Signal::new(s, 16000).unwrap()).unwrap();
        assert!((d - 10.0 * 4f64.log10()).abs() < 1e-12);
        let single = drr(&Signal::impulse(100, 3, 1.0, 16000).unwrap()).unwrap();
        assert!((single - 120.0).abs() < 1e-9);
        assert!(drr(&Signal::zeros(10, 16000).unwrap()).is_err());
    }

    #[test]
    fn drr_matches_partition_oracle() {
        for seed in 0..10 {
            let x = noise(1000, seed, 8000);
            let s = x.samples();
            let peak = (0..s.len())
                .max_by(|&a, &b| s[a].abs().partial_cmp(&s[b].abs()).unwrap().then(b.cmp(&a)))
                .unwrap();
            let (mut direct, mut rest) = (0.0, 0.0);
            for (i, v) in s.iter().enumerate() {
                if (i as i64 - peak as i64).abs() <= 20 {
                    direct += v * v;
                } else {
                    rest += v * v;
                }
            }
            let oracle = 10.0 * (direct / rest).log10();
            assert!((drr(&x).unwrap() - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn drr_scale_invariant() {
        let x = noise(1000, 4, 8000);
        let y = Signal::new(x.samples().iter().map(|v| v * 7.5).collect(), 8000).unwrap();
        assert!((drr(&x).unwrap() - drr(&y).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn mse_values() {
        let a = noise(100, 1, 8000);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let b = Signal::new(a.samples().iter().map(|v| v + 0.01).collect(), 8000).unwrap();
        assert!((mse(&b, &a).unwrap() - 1e-4).abs() < 1e-15);
        let c = noise(100, 2, 8000);
        let naive: f64 = (0..100)
            .map(|i| (a.samples()[i] - c.samples()[i]).powi(2))
            .sum::<f64>()
            / 100.0;
        assert!((mse(&a, &c).unwrap() - naive).abs() < 1e-15);
        assert!(mse(&a, &noise(99, 1, 8000)).is_err());
        let half = Signal::new(a.samples().iter().map(|v| v * 0.5).collect(), 8000).unwrap();
        assert!(mse_with(&half, &a, true).unwrap() < 1e-30);
    }

    fn exp_decay(t60: f64, sr: u32, len: usize) -> Signal {
        Signal::new(
            (0..len)
                .map(|i| (-6.908 * i as f64 / sr as f64 / t60).exp())
                .collect(),
            sr,
        )
        .unwrap()
    }

    #[test]
    fn t60_of_exponential_decay() {
        for t60 in [0.1, 0.2, 0.4] {
            let est = schroeder_t60(&exp_decay(t60, 16000, 16000)).unwrap();
            assert!((est - t60).abs() / t60 < 0.05, "{t60}: {est}");
        }
        let scaled = Signal::new(
            exp_decay(0.2, 16000, 8000).samples().iter().map(|v| v * 10.0).collect(),
            16000,
        )
        .unwrap();
        let a = schroeder_t60(&exp_decay(0.2, 16000, 8000)).unwrap();
        let b = schroeder_t60(&scaled).unwrap();
        assert!((a - b).abs() < 1e-9 * a);
    }

    #[test]
    fn t60_of_impulse_fails() {
        let err = schroeder_t60(&Signal::impulse(1000, 0, 1.0, 16000).unwrap()).unwrap_err();
        assert!(matches!(err, Error::EstimationFailed(_)));
    }

    #[test]
    fn report_on_identical_pair() {
        let (cfg, p) = toy();
        let x = noise(256, 11, 8000);
        let r = metric_report(&[(x.clone(), x)], &cfg, &p, ReportOptions::default()).unwrap();
        assert!(r.per_band_log_edr_loss.iter().all(|&v| v == -12.0));
        assert!(r.per_band_ere_mae.iter().all(|&v| v == 0.0));
        assert_eq!(r.drr_mae, 0.0);
        assert_eq!(r.mse, 0.0);
        assert_eq!(r.n_pairs, 1);
    }

    #[test]
    fn report_means_over_pairs() {
        let (cfg, p) = toy();
        let pairs = vec![
            (noise(256, 1, 8000), noise(256, 2, 8000)),
            (noise(256, 3, 8000), noise(256, 4, 8000)),
        ];
        let r = metric_report(&pairs, &cfg, &p, ReportOptions::default()).unwrap();
        let m0 = mse(&pairs[0].0, &pairs[0].1).unwrap();
        let m1 = mse(&pairs[1].0, &pairs[1].1).unwrap();
        assert!((r.mse - (m0 + m1) / 2.0).abs() < 1e-15);
        assert!(metric_report(&[], &cfg, &p, ReportOptions::default()).is_err());
    }

    #[test]
    fn report_csv_layout() {
        let (cfg, p) = toy();
        let x = noise(256, 1, 8000);
        let r = metric_report(&[(x.clone(), x)], &cfg, &p, ReportOptions::default()).unwrap();
        let mut out = Vec::new();
        r.write_csv(&mut out, &["method: identity".into()]).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# method: identity");
        assert!(lines.contains(&"center_hz,log_edr_loss,ere_mae_db"));
        assert!(lines.contains(&"125,-12,0"));
        assert_eq!(lines[lines.len() - 2], "drr_mae_db,mse");
        assert_eq!(lines[lines.len() - 1], "0,0");
        assert!(!text.contains('\r'));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn edr_rows_non_increasing(xs in prop::collection::vec(-1.0f64..1.0, 64..400)) {
                let (cfg, p) = toy();
                let e = edr(&Signal::new(xs, 8000).unwrap(), &cfg, &p).unwrap();
                for row in &e.values {
                    prop_assert!(row.iter().all(|&v| v >= 0.0));
                    prop_assert!(row.windows(2).all(|w| w[1] <= w[0]));
                }
            }

            #[test]
            fn edr_loss_symmetric_nonnegative(
                a in prop::collection::vec(-1.0f64..1.0, 128),
                b in prop::collection::vec(-1.0f64..1.0, 128),
            ) {
                let (cfg, p) = toy();
                let a = Signal::new(a, 8000).unwrap();
                let b = Signal::new(b, 8000).unwrap();
                let ab = edr_loss(&a, &b, &cfg, &p).unwrap();
                prop_assert_eq!(&ab, &edr_loss(&b, &a, &cfg, &p).unwrap());
                prop_assert!(ab.total >= 0.0);
            }
        }
    }
}
