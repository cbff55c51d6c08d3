//! GCC-PHAT features: framing, per-pair phase-transform correlation, energy
//! based frame weights, and the weighted sum over frames.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::room::CaptureSet;

/// Floor on the cross-spectrum magnitude in the phase transform.
pub const PHAT_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Window {
    #[default]
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; len],
            Window::Hann if len < 2 => vec![1.0; len],
            Window::Hann => (0..len)
                .map(|n| {
                    0.5 * (1.0
                        - (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos())
                })
                .collect(),
        }
    }
}

/// Which integer lags make up a pair's block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LagMode {
    /// `-L/2 ..= L/2 - 1`
    #[default]
    Centered,
    /// `0 ..= L - 1`
    Leading,
}

impl LagMode {
    pub fn lags(self, count: usize) -> Vec<i64> {
        let start = match self {
            LagMode::Centered => -((count / 2) as i64),
            LagMode::Leading => 0,
        };
        (0..count as i64).map(|i| start + i).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub frame_len: usize,
    pub overlap: f64,
    pub window: Window,
}

impl Default for FrameSpec {
    /// 64 ms frames at 8 kHz with 62.5 % overlap (hop 192).
    fn default() -> Self {
        FrameSpec {
            frame_len: 512,
            overlap: 0.625,
            window: Window::Hann,
        }
    }
}

impl FrameSpec {
    pub fn new(frame_len: usize, overlap: f64, window: Window) -> Result<Self> {
        let spec = FrameSpec {
            frame_len,
            overlap,
            window,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_len < 2 {
            return Err(Error::invalid("frame spec", "frame length must be >= 2"));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::invalid("frame spec", "overlap must be in [0, 1)"));
        }
        let hop = self.frame_len as f64 * (1.0 - self.overlap);
        if (hop - hop.round()).abs() > 1e-9 || hop.round() < 1.0 {
            return Err(Error::invalid(
                "frame spec",
                format!(
                    "hop {hop} (frame {} x (1 - {})) is not a positive integer",
                    self.frame_len, self.overlap
                ),
            ));
        }
        Ok(())
    }

    pub fn hop(&self) -> usize {
        (self.frame_len as f64 * (1.0 - self.overlap)).round() as usize
    }

    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            1 + (len - self.frame_len) / self.hop()
        }
    }
}

/// Full feature extraction settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub frame: FrameSpec,
    /// Exponent of the frame weighting.
    pub gamma: f64,
    pub lags_per_pair: usize,
    pub lag_mode: LagMode,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            frame: FrameSpec::default(),
            gamma: 2.0,
            lags_per_pair: 16,
            lag_mode: LagMode::Centered,
        }
    }
}

impl FeatureSpec {
    pub fn validate(&self) -> Result<()> {
        self.frame.validate()?;
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::invalid("feature spec", "gamma must be positive"));
        }
        if self.lags_per_pair == 0 || self.lags_per_pair >= self.frame.frame_len {
            return Err(Error::invalid(
                "feature spec",
                "lags per pair must be in [1, frame length)",
            ));
        }
        Ok(())
    }

    pub fn dimension(&self, mics: usize) -> usize {
        pair_order(mics).len() * self.lags_per_pair
    }
}

/// Microphone pairs in lexicographic order: (0,1), (0,2), ..., (M-2, M-1).
pub fn pair_order(mics: usize) -> Vec<(usize, usize)> {
    (0..mics)
        .flat_map(|a| (a + 1..mics).map(move |b| (a, b)))
        .collect()
}

/// Splits `x` into windowed frames; a trailing partial frame is dropped.
pub fn frame_signal(x: &[f64], spec: &FrameSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    if x.len() < spec.frame_len {
        return Err(Error::invalid(
            "signal",
            format!("{} samples is shorter than one frame ({})", x.len(), spec.frame_len),
        ));
    }
    let window = spec.window.coefficients(spec.frame_len);
    let hop = spec.hop();
    Ok((0..spec.frame_count(x.len()))
        .map(|f| {
            x[f * hop..f * hop + spec.frame_len]
                .iter()
                .zip(&window)
                .map(|(s, w)| s * w)
                .collect()
        })
        .collect())
}

/// FFT plans for GCC-PHAT on frames of one length. The transform size is
/// the next power of two at or above twice the frame length, so the
/// correlation is linear rather than circular.
pub struct GccEngine {
    frame_len: usize,
    size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl GccEngine {
    pub fn new(frame_len: usize) -> Self {
        let size = (2 * frame_len).next_power_of_two();
        let mut planner = FftPlanner::new();
        GccEngine {
            frame_len,
            size,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        }
    }

    pub fn fft_size(&self) -> usize {
        self.size
    }

    /// Zero-padded spectrum, or `None` for an all-zero frame.
    fn spectrum(&self, frame: &[f64]) -> Option<Vec<Complex<f64>>> {
        if frame.iter().all(|v| *v == 0.0) {
            return None;
        }
        let mut buf: Vec<Complex<f64>> = frame.iter().map(|&v| Complex::new(v, 0.0)).collect();
        buf.resize(self.size, Complex::new(0.0, 0.0));
        self.forward.process(&mut buf);
        Some(buf)
    }

    /// `r[k] = sum_n a[n] b[n + k]` under the phase transform, sampled at
    /// `lags`.
    fn phat_lags(
        &self,
        a: &[Complex<f64>],
        b: &[Complex<f64>],
        lags: &[i64],
        scratch: &mut Vec<Complex<f64>>,
        out: &mut [f64],
    ) {
        scratch.clear();
        scratch.extend(a.iter().zip(b).map(|(x, y)| {
            let c = x.conj() * y;
            c / c.norm().max(PHAT_EPSILON)
        }));
        self.inverse.process(scratch);
        let n = self.size as i64;
        let scale = 1.0 / self.size as f64;
        for (o, &k) in out.iter_mut().zip(lags) {
            *o = scratch[k.rem_euclid(n) as usize].re * scale;
        }
    }

    /// Phase-transform cross correlation of two equal-length frames.
    pub fn gcc_pair(&self, frame_a: &[f64], frame_b: &[f64], lags: &[i64]) -> Result<Vec<f64>> {
        if frame_a.len() != frame_b.len() {
            return Err(Error::DimensionMismatch {
                expected: frame_a.len(),
                actual: frame_b.len(),
            });
        }
        if frame_a.len() != self.frame_len {
            return Err(Error::DimensionMismatch {
                expected: self.frame_len,
                actual: frame_a.len(),
            });
        }
        let mut out = vec![0.0; lags.len()];
        if let (Some(sa), Some(sb)) = (self.spectrum(frame_a), self.spectrum(frame_b)) {
            self.phat_lags(&sa, &sb, lags, &mut Vec::with_capacity(self.size), &mut out);
        }
        Ok(out)
    }
}

/// GCC-PHAT of two frames at `lags_per_pair` lags chosen by `mode`.
pub fn gcc_pair(
    frame_a: &[f64],
    frame_b: &[f64],
    lags_per_pair: usize,
    mode: LagMode,
) -> Result<Vec<f64>> {
    GccEngine::new(frame_a.len()).gcc_pair(frame_a, frame_b, &mode.lags(lags_per_pair))
}

/// Frame weights `w_f = sum_l |g_f,l|^gamma / sum_f sum_l |g_f,l|^gamma`.
/// Falls back to uniform weights when every frame is silent.
pub fn frame_weights(per_frame: &[Vec<f64>], gamma: f64) -> Vec<f64> {
    let energy: Vec<f64> = per_frame
        .iter()
        .map(|g| g.iter().map(|v| v.abs().powf(gamma)).sum())
        .collect();
    let total: f64 = energy.iter().sum();
    if total > 0.0 && total.is_finite() {
        energy.iter().map(|e| e / total).collect()
    } else {
        vec![1.0 / per_frame.len() as f64; per_frame.len()]
    }
}

/// Concatenated per-pair GCC blocks describing one capture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GccFeature {
    pub values: Vec<f64>,
    pub pair_count: usize,
    pub lags_per_pair: usize,
}

impl GccFeature {
    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn block(&self, pair: usize) -> &[f64] {
        &self.values[pair * self.lags_per_pair..(pair + 1) * self.lags_per_pair]
    }
}

/// Computes the weighted GCC feature of a capture: for every microphone pair
/// the per-frame lag vectors are weighted by frame energy and summed.
pub fn gcc_feature(capture: &CaptureSet, spec: &FeatureSpec) -> Result<GccFeature> {
    spec.validate()?;
    let m = capture.num_channels();
    if m < 2 {
        return Err(Error::invalid(
            "capture",
            format!("need at least 2 channels, got {m}"),
        ));
    }
    let len = capture.len();
    if capture.channels.iter().any(|c| c.len() != len) {
        return Err(Error::invalid("capture", "channels of unequal length"));
    }

    let frames: Vec<Vec<Vec<f64>>> = capture
        .channels
        .iter()
        .map(|c| frame_signal(c, &spec.frame))
        .collect::<Result<_>>()?;
    let n_frames = frames[0].len();
    let pairs = pair_order(m);
    let lags = spec.lag_mode.lags(spec.lags_per_pair);
    let engine = GccEngine::new(spec.frame.frame_len);

    // per_pair[p][f] = lag vector of pair p in frame f
    let mut per_pair = vec![vec![vec![0.0; lags.len()]; n_frames]; pairs.len()];
    let mut scratch = Vec::with_capacity(engine.fft_size());
    for f in 0..n_frames {
        let spectra: Vec<Option<Vec<Complex<f64>>>> =
            frames.iter().map(|ch| engine.spectrum(&ch[f])).collect();
        for (p, &(a, b)) in pairs.iter().enumerate() {
            if let (Some(sa), Some(sb)) = (&spectra[a], &spectra[b]) {
                engine.phat_lags(sa, sb, &lags, &mut scratch, &mut per_pair[p][f]);
            }
        }
    }

    let mut values = Vec::with_capacity(pairs.len() * lags.len());
    for frames_of_pair in &per_pair {
        let weights = frame_weights(frames_of_pair, spec.gamma);
        let mut block = vec![0.0; lags.len()];
        for (w, g) in weights.iter().zip(frames_of_pair) {
            for (b, v) in block.iter_mut().zip(g) {
                *b += w * v;
            }
        }
        values.extend(block);
    }
    Ok(GccFeature {
        values,
        pair_count: pairs.len(),
        lags_per_pair: lags.len(),
    })
}
