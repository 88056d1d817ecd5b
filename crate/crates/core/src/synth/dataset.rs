//! Reverberant-speech datasets on disk.
//!
//! Layout under the output directory:
//!
//! ```text
//! manifest.json
//! reverberant/ex_00000.wav   model input
//! rir/ex_00000.wav           ground-truth RIR
//! clean/ex_00000.wav         dry excitation (for the oracle baseline)
//! ```
//!
//! Manifest paths are relative to the manifest's directory. The clean file
//! of an entry sits under `clean/` with the same file name as its
//! reverberant file.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{make_example, synth_rir, synthetic_speech, write_wav, RirParams, WavFormat};
use crate::dsp::Signal;
use crate::error::{invalid, Error, Result};
use crate::Profile;

const MAX_ATTEMPTS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(invalid!("unknown split {other:?}")),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// The subset of [`RirParams`] recorded per manifest entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryParams {
    pub t60: f64,
    pub drr_target: f64,
    pub n_early_reflections: usize,
    pub direct_delay: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub reverberant: String,
    pub rir: String,
    pub split: Split,
    pub params: EntryParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub sample_rate: u32,
    pub example_len: usize,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serialises");
        s.push('\n');
        s
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }
}

/// Inclusive sampling ranges for [`RirParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub t60: (f64, f64),
    pub drr_db: (f64, f64),
    pub n_early_reflections: (usize, usize),
    pub direct_delay: (usize, usize),
}

impl ParamRanges {
    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Full => Self {
                t60: (0.15, 0.8),
                drr_db: (0.0, 10.0),
                n_early_reflections: (4, 32),
                direct_delay: (32, 32),
            },
            Profile::Toy => Self {
                t60: (0.1, 0.6),
                drr_db: (0.0, 10.0),
                n_early_reflections: (0, 8),
                direct_delay: (8, 8),
            },
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.t60.0 > 0.0
            && self.t60.0 <= self.t60.1
            && self.drr_db.0 <= self.drr_db.1
            && self.n_early_reflections.0 <= self.n_early_reflections.1
            && self.n_early_reflections.1 <= 32
            && self.direct_delay.0 <= self.direct_delay.1;
        if ok {
            Ok(())
        } else {
            Err(invalid!("invalid parameter ranges {self:?}"))
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R, rir_len: usize) -> RirParams {
        fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
            if lo == hi {
                lo
            } else {
                rng.gen_range(lo..=hi)
            }
        }
        RirParams {
            t60: uniform(rng, self.t60),
            drr_target: uniform(rng, self.drr_db),
            n_early_reflections: rng
                .gen_range(self.n_early_reflections.0..=self.n_early_reflections.1),
            direct_delay: rng.gen_range(self.direct_delay.0..=self.direct_delay.1),
            rir_len,
            seed: rng.gen(),
        }
    }
}

/// Everything `build_dataset` needs apart from the clean source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub sample_rate: u32,
    pub example_len: usize,
    pub rir_len: usize,
    pub n_examples: usize,
    pub ranges: ParamRanges,
    /// Train / validation / test fractions.
    pub splits: [f64; 3],
    pub seed: u64,
}

impl DatasetSpec {
    pub fn for_profile(profile: Profile, n_examples: usize, seed: u64) -> Self {
        Self {
            sample_rate: profile.sample_rate(),
            example_len: profile.example_len(),
            rir_len: profile.rir_len(),
            n_examples,
            ranges: ParamRanges::for_profile(profile),
            splits: [0.8, 0.1, 0.1],
            seed,
        }
    }

    /// Length of the active part of each clean segment. The remaining
    /// `rir_len - 1` samples are silent, so the reverberant decay of the
    /// utterance fits inside the example and truncation loses nothing.
    pub fn speech_len(&self) -> usize {
        self.example_len + 1 - self.rir_len
    }
}

/// Where dry excitation comes from.
#[derive(Debug, Clone)]
pub enum CleanSource {
    Synthetic,
    Recordings(Vec<(PathBuf, Signal)>),
}

impl CleanSource {
    /// Loads every `.wav` file in `dir` (sorted by name).
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .is_some_and(|x| x.eq_ignore_ascii_case("wav"))
            })
            .collect();
        if paths.is_empty() {
            return Err(invalid!(
                "clean directory {} contains no .wav files",
                dir.display()
            ));
        }
        paths.sort();
        let recs = paths
            .into_iter()
            .map(|p| super::read_wav(&p).map(|s| (p, s)))
            .collect::<Result<Vec<_>>>()?;
        Ok(CleanSource::Recordings(recs))
    }

    fn check(&self, spec: &DatasetSpec) -> Result<()> {
        if let CleanSource::Recordings(recs) = self {
            for (p, s) in recs {
                if s.sample_rate() != spec.sample_rate {
                    return Err(invalid!(
                        "{} is {} Hz, expected {} Hz",
                        p.display(),
                        s.sample_rate(),
                        spec.sample_rate
                    ));
                }
            }
            if !recs.iter().any(|(_, s)| s.len() >= spec.speech_len()) {
                return Err(invalid!(
                    "no clean recording has the {} samples an example needs",
                    spec.speech_len()
                ));
            }
        }
        Ok(())
    }

    fn segment<R: Rng>(&self, len: usize, sample_rate: u32, rng: &mut R) -> Vec<f64> {
        match self {
            CleanSource::Synthetic => synthetic_speech(len, sample_rate, rng),
            CleanSource::Recordings(recs) => {
                let usable: Vec<&Signal> =
                    recs.iter().map(|(_, s)| s).filter(|s| s.len() >= len).collect();
                let src = usable[rng.gen_range(0..usable.len())];
                let off = rng.gen_range(0..=src.len() - len);
                src.samples()[off..off + len].to_vec()
            }
        }
    }
}

/// Split sizes by the largest-remainder rule (ties go to the earlier split).
pub fn split_counts(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(*f >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(invalid!("split fractions {fractions:?} must be >= 0 and sum to 1"));
    }
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, q) in counts.iter_mut().zip(&quotas) {
        *c = q.floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for i in order.into_iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    Ok(counts)
}

struct Generated {
    params: RirParams,
    clean: Signal,
    reverberant: Signal,
    rir: Signal,
}

fn generate(spec: &DatasetSpec, source: &CleanSource, index: usize) -> Result<Generated> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let mut last_err = None;
    for _ in 0..MAX_ATTEMPTS {
        let params = spec.ranges.sample(&mut rng, spec.rir_len);
        let rir = match synth_rir(&params, spec.sample_rate) {
            Ok(r) => r,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        let mut dry = source.segment(spec.speech_len(), spec.sample_rate, &mut rng);
        dry.resize(spec.example_len, 0.0);
        let clean = Signal::new(dry, spec.sample_rate)?;
        match make_example(&clean, &rir, spec.example_len) {
            Ok((reverberant, rir)) => {
                return Ok(Generated {
                    params,
                    clean,
                    reverberant,
                    rir,
                })
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| invalid!("example {index} could not be generated")))
}

/// Synthesises `spec.n_examples` reverberant/RIR pairs into `out_dir` and
/// writes `manifest.json`. Output is a pure function of `(spec, source)`;
/// examples are generated in parallel from per-index RNG streams.
pub fn build_dataset(
    spec: &DatasetSpec,
    source: &CleanSource,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    let out = out_dir.as_ref();
    if spec.n_examples < 3 {
        return Err(invalid!("need at least 3 examples, got {}", spec.n_examples));
    }
    if spec.example_len <= spec.rir_len {
        return Err(invalid!(
            "example_len {} must exceed rir_len {}",
            spec.example_len,
            spec.rir_len
        ));
    }
    spec.ranges.validate()?;
    source.check(spec)?;
    let counts = split_counts(spec.n_examples, spec.splits)?;

    for sub in ["reverberant", "rir", "clean"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }

    let entries = (0..spec.n_examples)
        .into_par_iter()
        .map(|i| {
            let g = generate(spec, source, i)?;
            let name = format!("ex_{i:05}.wav");
            let reverberant = format!("reverberant/{name}");
            let rir = format!("rir/{name}");
            write_wav(out.join(&reverberant), &g.reverberant, WavFormat::Float32)?;
            write_wav(out.join(&rir), &g.rir, WavFormat::Float32)?;
            write_wav(out.join("clean").join(&name), &g.clean, WavFormat::Float32)?;
            let split = if i < counts[0] {
                Split::Train
            } else if i < counts[0] + counts[1] {
                Split::Val
            } else {
                Split::Test
            };
            Ok(ManifestEntry {
                reverberant,
                rir,
                split,
                params: EntryParams {
                    t60: g.params.t60,
                    drr_target: g.params.drr_target,
                    n_early_reflections: g.params.n_early_reflections,
                    direct_delay: g.params.direct_delay,
                    seed: g.params.seed,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = DatasetManifest {
        sample_rate: spec.sample_rate,
        example_len: spec.example_len,
        seed: spec.seed,
        entries,
    };
    let path = out.join("manifest.json");
    fs::write(&path, manifest.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// A manifest plus the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
}

impl Dataset {
    /// Opens a manifest file, or `manifest.json` inside a directory.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let mut path = path.as_ref().to_path_buf();
        if path.is_dir() {
            path = path.join("manifest.json");
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::malformed(&path, e.to_string()))?;
        let mut seen = std::collections::HashSet::new();
        for e in &manifest.entries {
            if !seen.insert(&e.reverberant) {
                return Err(Error::malformed(
                    &path,
                    format!("{} listed more than once", e.reverberant),
                ));
            }
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { manifest, root })
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.manifest.entries.iter().filter(move |e| e.split == split)
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn clean_path(&self, entry: &ManifestEntry) -> PathBuf {
        let name = Path::new(&entry.reverberant)
            .file_name()
            .map(|n| n.to_os_string())
            .unwrap_or_default();
        self.root.join("clean").join(name)
    }

    fn read(&self, path: &Path) -> Result<Signal> {
        let s = super::read_wav(path)?;
        if s.sample_rate() != self.manifest.sample_rate {
            return Err(Error::malformed(
                path,
                format!(
                    "sample rate {} Hz differs from manifest {} Hz",
                    s.sample_rate(),
                    self.manifest.sample_rate
                ),
            ));
        }
        Ok(s)
    }

    /// `(reverberant, rir)` for one entry.
    pub fn load_pair(&self, entry: &ManifestEntry) -> Result<(Signal, Signal)> {
        Ok((
            self.read(&self.resolve(&entry.reverberant))?,
            self.read(&self.resolve(&entry.rir))?,
        ))
    }

    pub fn load_clean(&self, entry: &ManifestEntry) -> Result<Signal> {
        self.read(&self.clean_path(entry))
    }

    /// Checks that every referenced file exists.
    pub fn check_files(&self) -> Result<()> {
        for e in &self.manifest.entries {
            for p in [
                self.resolve(&e.reverberant),
                self.resolve(&e.rir),
                self.clean_path(e),
            ] {
                if !p.is_file() {
                    return Err(Error::io(
                        &p,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "missing dataset file"),
                    ));
                }
            }
        }
        Ok(())
    }
}
