//! Scoring estimated RIRs on a dataset split.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::dsp::{spectral_deconvolve, Signal};
use crate::error::{invalid, Error, Result};
use crate::metrics::{band_ere, edr_loss, pair_metrics, MetricReport, PairMetrics, ReportOptions};
use crate::models::Estimator;
use crate::synth::{Dataset, Split};
use crate::Profile;

/// Regulariser for the oracle baseline's spectral division.
pub const BASELINE_EPS: f64 = 1e-12;

/// How estimated RIRs are produced.
#[derive(Debug, Clone)]
pub enum Method {
    /// Inference with a trained estimator checkpoint.
    Model(PathBuf),
    /// Spectral division against the known clean source ("oracle baseline").
    Baseline,
    /// The ground truth itself; a harness self-check.
    Identity,
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Model(p) => format!("model:{}", p.display()),
            Method::Baseline => "oracle baseline (spectral division)".into(),
            Method::Identity => "identity (ground truth)".into(),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    /// Parses `baseline`, `identity` or `model:<checkpoint>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Method::Baseline),
            "identity" => Ok(Method::Identity),
            _ => match s.strip_prefix("model:") {
                Some(p) if !p.is_empty() => Ok(Method::Model(PathBuf::from(p))),
                _ => Err(invalid!(
                    "unknown method {s:?} (expected model:CKPT, baseline or identity)"
                )),
            },
        }
    }
}

/// Recovers the RIR by spectral division and peak-normalises it to 1,
/// undoing the reverberant example's level normalisation.
pub fn oracle_baseline(reverberant: &Signal, clean: &Signal, rir_len: usize) -> Result<Signal> {
    spectral_deconvolve(reverberant, clean, BASELINE_EPS, rir_len)?.peak_normalized(1.0)
}

/// Per-example metrics, in manifest order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExampleRow {
    pub name: String,
    pub edr_loss: f64,
    pub ere_mae_db: f64,
    pub drr_estimated_db: f64,
    pub drr_truth_db: f64,
    pub mse: f64,
}

impl ExampleRow {
    fn new(name: String, m: &PairMetrics) -> Self {
        let n = m.band_ere_truth.len().max(1) as f64;
        Self {
            name,
            edr_loss: m.edr_loss,
            ere_mae_db: m
                .band_ere_estimated
                .iter()
                .zip(&m.band_ere_truth)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / n,
            drr_estimated_db: m.drr_estimated,
            drr_truth_db: m.drr_truth,
            mse: m.mse,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub method: String,
    pub split: Split,
    pub report: MetricReport,
    pub rows: Vec<ExampleRow>,
}

/// `report.csv` -> `report_examples.csv`.
pub fn examples_path(report: &Path) -> PathBuf {
    let stem = report
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    report.with_file_name(format!("{stem}_examples.csv"))
}

impl Evaluation {
    pub fn mean_edr_loss(&self) -> f64 {
        self.rows.iter().map(|r| r.edr_loss).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_ere_mae(&self) -> f64 {
        self.rows.iter().map(|r| r.ere_mae_db).sum::<f64>() / self.rows.len() as f64
    }

    pub fn write_report<W: Write>(&self, w: W) -> std::io::Result<()> {
        self.report.write_csv(
            w,
            &[format!("method: {}", self.method), format!("split: {}", self.split)],
        )
    }

    pub fn write_examples<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "name,edr_loss,ere_mae_db,drr_estimated_db,drr_truth_db,mse")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.name, r.edr_loss, r.ere_mae_db, r.drr_estimated_db, r.drr_truth_db, r.mse
            )?;
        }
        Ok(())
    }

    /// Writes the report to `path` and the per-example table next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let write = |p: &Path, f: &dyn Fn(BufWriter<File>) -> std::io::Result<()>| {
            let file = File::create(p).map_err(|e| Error::io(p, e))?;
            f(BufWriter::new(file)).map_err(|e| Error::io(p, e))
        };
        write(path, &|w| self.write_report(w))?;
        write(&examples_path(path), &|w| self.write_examples(w))
    }
}

/// Estimated and true RIR for every entry of `split`, in manifest order.
pub fn estimate_split(
    dataset: &Dataset,
    split: Split,
    method: &Method,
) -> Result<Vec<(String, Signal, Signal)>> {
    let entries: Vec<_> = dataset.entries(split).collect();
    if entries.is_empty() {
        return Err(invalid!("the {split} split is empty"));
    }
    let model = match method {
        Method::Model(p) => Some(Estimator::load(p)?),
        _ => None,
    };
    if let Some(m) = &model {
        if m.config().input_len != dataset.manifest.example_len {
            return Err(invalid!(
                "checkpoint expects {}-sample inputs, dataset has {}",
                m.config().input_len,
                dataset.manifest.example_len
            ));
        }
    }
    entries
        .par_iter()
        .map(|e| {
            let name = Path::new(&e.reverberant)
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| e.reverberant.clone());
            let (rev, truth) = dataset.load_pair(e)?;
            let est = match method {
                Method::Identity => truth.clone(),
                Method::Baseline => {
                    oracle_baseline(&rev, &dataset.load_clean(e)?, truth.len())?
                }
                Method::Model(_) => {
                    let m = model.as_ref().expect("model loaded");
                    if m.config().rir_len != truth.len() {
                        return Err(invalid!(
                            "checkpoint produces {}-sample RIRs, dataset has {}",
                            m.config().rir_len,
                            truth.len()
                        ));
                    }
                    crate::models::estimate(m, &rev)?
                }
            };
            Ok((name, est, truth))
        })
        .collect()
}

/// Scores `method` on one split of `dataset` with the profile's STFT and
/// band layout.
pub fn evaluate(
    dataset: &Dataset,
    split: Split,
    method: &Method,
    profile: Profile,
    opts: ReportOptions,
) -> Result<Evaluation> {
    if dataset.manifest.sample_rate != profile.sample_rate() {
        return Err(invalid!(
            "dataset is {} Hz but the {profile} profile expects {} Hz",
            dataset.manifest.sample_rate,
            profile.sample_rate()
        ));
    }
    let estimates = estimate_split(dataset, split, method)?;
    score(method.label(), split, &estimates, profile, opts)
}

/// Scores already-estimated `(name, estimated, truth)` triples.
pub fn score(
    method: String,
    split: Split,
    estimates: &[(String, Signal, Signal)],
    profile: Profile,
    opts: ReportOptions,
) -> Result<Evaluation> {
    let stft = profile.stft();
    let partition = profile.partition();
    let metrics = estimates
        .par_iter()
        .map(|(_, e, t)| pair_metrics(e, t, &stft, &partition, opts))
        .collect::<Result<Vec<_>>>()?;
    let report = MetricReport::from_pairs(&metrics, &partition)?;
    let rows = estimates
        .iter()
        .zip(&metrics)
        .map(|((name, _, _), m)| ExampleRow::new(name.clone(), m))
        .collect();
    Ok(Evaluation {
        method,
        split,
        report,
        rows,
    })
}

/// Mean EDR loss and mean per-band ERE MAE (dB) over `(estimated, truth)`
/// pairs. Unlike [`score`] this skips DRR, so an all-zero estimate is fine.
pub fn mean_edr_ere(pairs: &[(Signal, Signal)], profile: Profile) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(invalid!("no pairs to score"));
    }
    let stft = profile.stft();
    let partition = profile.partition();
    let per = pairs
        .par_iter()
        .map(|(e, t)| {
            let loss = edr_loss(e, t, &stft, &partition)?.total;
            let be = band_ere(e, &stft, &partition)?;
            let bt = band_ere(t, &stft, &partition)?;
            let mae = be.iter().zip(&bt).map(|(a, b)| (a - b).abs()).sum::<f64>() / bt.len() as f64;
            Ok((loss, mae))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per.len() as f64;
    Ok((
        per.iter().map(|p| p.0).sum::<f64>() / n,
        per.iter().map(|p| p.1).sum::<f64>() / n,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ENERGY_FLOOR;
    use crate::synth::{build_dataset, CleanSource, DatasetSpec};

    fn toy_dataset(dir: &Path) -> Dataset {
        let spec = DatasetSpec::for_profile(Profile::Toy, 10, 11);
        build_dataset(&spec, &CleanSource::Synthetic, dir).unwrap();
        Dataset::open(dir).unwrap()
    }

    #[test]
    fn method_parsing() {
        assert!(matches!("baseline".parse(), Ok(Method::Baseline)));
        assert!(matches!("identity".parse(), Ok(Method::Identity)));
        assert!(matches!("model:a.ckpt".parse(), Ok(Method::Model(p)) if p == Path::new("a.ckpt")));
        assert!("model:".parse::<Method>().is_err());
        assert!("oracle".parse::<Method>().is_err());
    }

    #[test]
    fn identity_and_baseline() {
        let dir = tempfile::tempdir().unwrap();
        let ds = toy_dataset(dir.path());
        let ev = evaluate(&ds, Split::Test, &Method::Identity, Profile::Toy, Default::default())
            .unwrap();
        let floor = ENERGY_FLOOR.log10();
        assert!(ev.report.per_band_log_edr_loss.iter().all(|&v| v == floor));
        assert!(ev.report.per_band_ere_mae.iter().all(|&v| v == 0.0));
        assert_eq!((ev.report.drr_mae, ev.report.mse), (0.0, 0.0));

        let ev = evaluate(&ds, Split::Train, &Method::Baseline, Profile::Toy, Default::default())
            .unwrap();
        assert!(ev.report.mse < 1e-6, "{}", ev.report.mse);
        assert_eq!(ev.rows.len(), 8);
        assert_eq!(ev.rows[0].name, "ex_00000.wav");
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let ds = toy_dataset(&dir.path().join("ds"));
        let ev = evaluate(&ds, Split::Val, &Method::Identity, Profile::Toy, Default::default())
            .unwrap();
        let out = dir.path().join("out/report.csv");
        ev.save(&out).unwrap();
        let report = std::fs::read_to_string(&out).unwrap();
        assert!(report.contains("\ncenter_hz,log_edr_loss,ere_mae_db\n"));
        assert!(report.starts_with("# method: identity"));
        let rows = std::fs::read_to_string(dir.path().join("out/report_examples.csv")).unwrap();
        assert_eq!(rows.lines().count(), 2);
    }

    #[test]
    fn edr_ere_scores_agree_with_full_report() {
        let dir = tempfile::tempdir().unwrap();
        let ds = toy_dataset(dir.path());
        let pairs: Vec<_> = ds.entries(Split::Train).map(|e| ds.load_pair(e).unwrap()).collect();
        let shifted: Vec<_> = pairs
            .iter()
            .map(|(_, t)| {
                let mut s = t.samples().to_vec();
                s.rotate_right(3);
                (Signal::new(s, t.sample_rate()).unwrap(), t.clone())
            })
            .collect();
        let named: Vec<_> = shifted
            .iter()
            .map(|(e, t)| (String::new(), e.clone(), t.clone()))
            .collect();
        let ev = score("x".into(), Split::Train, &named, Profile::Toy, Default::default()).unwrap();
        let (edr, ere) = mean_edr_ere(&shifted, Profile::Toy).unwrap();
        assert!((edr - ev.mean_edr_loss()).abs() <= 1e-12 * edr.abs().max(1.0));
        assert!((ere - ev.mean_ere_mae()).abs() <= 1e-9);

        let zeros: Vec<_> = pairs
            .iter()
            .map(|(_, t)| (Signal::new(vec![0.0; t.len()], t.sample_rate()).unwrap(), t.clone()))
            .collect();
        let (edr, ere) = mean_edr_ere(&zeros, Profile::Toy).unwrap();
        assert!(edr > 0.0 && ere > 0.0);
    }

    #[test]
    fn profile_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = toy_dataset(dir.path());
        let err = evaluate(&ds, Split::Test, &Method::Identity, Profile::Full, Default::default())
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
