//! Mono WAV loading and the synthetic speech-band test source.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Band of the synthetic source in Hz.
pub const SPEECH_BAND: (f64, f64) = (220.0, 3400.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("signal", "no samples"));
        }
        if sample_rate == 0 {
            return Err(Error::invalid("signal", "sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(
                "signal",
                format!("non-finite sample at index {i}"),
            ));
        }
        Ok(Signal {
            samples,
            sample_rate,
        })
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
}

/// Reads a mono PCM16 or float32 WAV file. The file's rate must equal
/// `expected_rate`; nothing is resampled.
pub fn load_wav(path: impl AsRef<Path>, expected_rate: u32) -> Result<Signal> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path)
        .map_err(|e| Error::Wav(e).context(path.display().to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedWav(format!(
            "{} has {} channels; downmix to mono first",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_rate != expected_rate {
        return Err(Error::SampleRateMismatch {
            expected: expected_rate,
            actual: spec.sample_rate,
        });
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| (v as f64).clamp(-1.0, 1.0)))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::UnsupportedWav(format!(
                "{bits}-bit {} samples (expected 16-bit integer or 32-bit float)",
                match fmt {
                    hound::SampleFormat::Int => "integer",
                    hound::SampleFormat::Float => "float",
                }
            )))
        }
    };
    Signal::new(samples, spec.sample_rate)
}

/// Writes a mono 16-bit WAV. Samples are clipped to [-1, 1].
pub fn write_wav(path: impl AsRef<Path>, signal: &Signal) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in &signal.samples {
        let v = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0);
        writer.write_sample(v as i16)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Band-limited (220 Hz - 3.4 kHz) noise under a syllable-like envelope of
/// bursts and pauses, peak-normalized to 1.
pub fn synth_speechband(duration_s: f64, sample_rate: u32, seed: u64) -> Result<Signal> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(Error::invalid("duration", "must be positive"));
    }
    let n = (duration_s * sample_rate as f64).round() as usize;
    if n == 0 {
        return Err(Error::invalid("duration", "shorter than one sample"));
    }
    let fs = sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let envelope = syllable_envelope(n, fs, &mut rng);
    let mut buf: Vec<Complex<f64>> = envelope
        .iter()
        .map(|e| Complex::new(e * rng.sample::<f64, _>(StandardNormal), 0.0))
        .collect();

    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let (lo, hi) = SPEECH_BAND;
    for (k, bin) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * fs / n as f64;
        if f < lo || f > hi {
            *bin = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);

    let mut samples: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        samples.iter_mut().for_each(|s| *s /= peak);
    }
    Signal::new(samples, sample_rate)
}

fn syllable_envelope(n: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    const FLOOR: f64 = 0.03;
    let mut env = vec![FLOOR; n];
    let mut pos = (rng.random_range(0.0..0.05) * fs) as usize;
    while pos < n {
        let len = (rng.random_range(0.08..0.25) * fs) as usize;
        let amp: f64 = rng.random_range(0.3..1.0);
        for i in 0..len.min(n - pos) {
            let shape = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos());
            env[pos + i] = FLOOR + amp * shape;
        }
        pos += len + (rng.random_range(0.03..0.15) * fs) as usize;
    }
    env
}
