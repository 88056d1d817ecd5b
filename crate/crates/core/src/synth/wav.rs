use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::dsp::Signal;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

fn hound_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::Unsupported => {
            Error::UnsupportedFormat(format!("{}: unsupported WAV codec", path.display()))
        }
        other => Error::malformed(path, other.to_string()),
    }
}

/// Reads a mono PCM16 or float32 WAV file.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Signal> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| hound_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {} channels, only mono is supported",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| hound_err(path, e))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| hound_err(path, e))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: {bits}-bit {fmt:?} samples (need 16-bit PCM or 32-bit float)",
                path.display()
            )))
        }
    };
    Signal::new(samples, spec.sample_rate).map_err(|e| Error::malformed(path, e.to_string()))
}

/// Writes a mono WAV file. PCM16 clips to [-1, 1).
pub fn write_wav(path: impl AsRef<Path>, signal: &Signal, format: WavFormat) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate(),
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => SampleFormat::Int,
            WavFormat::Float32 => SampleFormat::Float,
        },
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| hound_err(path, e))?;
    for &x in signal.samples() {
        let r = match format {
            WavFormat::Pcm16 => {
                w.write_sample((x * 32768.0).round().clamp(-32768.0, 32767.0) as i16)
            }
            WavFormat::Float32 => w.write_sample(x as f32),
        };
        r.map_err(|e| hound_err(path, e))?;
    }
    w.finalize().map_err(|e| hound_err(path, e))
}
