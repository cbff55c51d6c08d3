//! Image-source room impulse responses and multichannel capture synthesis.
//!
//! Walls share one frequency-independent energy absorption coefficient
//! `alpha`; every reflection scales the pressure amplitude by
//! `sqrt(1 - alpha)`. Reverberant responses pass through a 100 Hz
//! high-pass before use.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::Signal;
use crate::error::{Error, Result};
use crate::geometry::{distance, MicArray, RoomSpec, Vec3};

/// Half width, in samples, of the windowed-sinc fractional delay kernel.
const SINC_HALF_WIDTH: usize = 8;
/// Sparse RIRs with at most this many non-zero taps are convolved directly.
const SPARSE_TAPS: usize = 64;
/// Cutoff of the high-pass applied to reverberant responses.
pub const RIR_HIGHPASS_HZ: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    /// Each arrival lands on the nearest sample.
    #[default]
    Nearest,
    /// Hann-windowed sinc fractional delay.
    Sinc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcousticEnv {
    /// Reverberation time in seconds; 0 means anechoic.
    pub t60: f64,
    /// Wall absorption; derived from `t60` when absent.
    pub absorption: Option<f64>,
    /// Per-channel SNR in dB. `f64::INFINITY` disables noise.
    pub snr_db: f64,
    pub noise_seed: u64,
    pub interpolation: Interpolation,
    /// Upper bound on the total reflection order of an image.
    pub max_order: Option<u32>,
}

impl Default for AcousticEnv {
    fn default() -> Self {
        AcousticEnv {
            t60: 0.0,
            absorption: None,
            snr_db: f64::INFINITY,
            noise_seed: 0,
            interpolation: Interpolation::Nearest,
            max_order: None,
        }
    }
}

impl AcousticEnv {
    pub fn new(t60: f64, snr_db: f64) -> Self {
        AcousticEnv {
            t60,
            snr_db,
            ..Default::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.noise_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t60.is_finite() && self.t60 >= 0.0) {
            return Err(Error::invalid("environment", "T60 must be >= 0"));
        }
        if let Some(a) = self.absorption {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::invalid(
                    "environment",
                    format!("absorption {a} outside (0, 1]"),
                ));
            }
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::invalid("environment", "SNR must be a number"));
        }
        Ok(())
    }

    /// Absorption used for reflections, `None` when the response is
    /// anechoic.
    pub fn effective_absorption(&self, room: &RoomSpec) -> Result<Option<f64>> {
        self.validate()?;
        if self.t60 == 0.0 {
            return Ok(None);
        }
        match self.absorption {
            Some(a) => Ok(Some(a)),
            None => absorption_from_t60(room, self.t60).map(Some),
        }
    }
}

/// Uniform wall absorption whose image-source response decays by 60 dB in
/// `t60`, as measured by Schroeder integration.
///
/// Along direction `u` an image path of length `r` crosses
/// `r * g(u)` walls with `g(u) = sum |u_i| / L_i`, so the late energy is
/// `mean_u (1 - alpha)^(c t g(u))`. Eyring's formula replaces `g` by its
/// mean `S / 4V`; the lattice tail is dominated by directions with small
/// `g`, which decay more slowly, so the decay is fitted on the directional
/// average instead (see [`lattice_decay_length`]).
pub fn absorption_from_t60(room: &RoomSpec, t60: f64) -> Result<f64> {
    if !(t60.is_finite() && t60 > 0.0) {
        return Err(Error::invalid(
            "T60",
            "absorption is only defined for T60 > 0",
        ));
    }
    let k = lattice_decay_length(room.dims) / (room.sound_speed * t60);
    Ok((1.0 - (-k).exp()).clamp(f64::MIN_POSITIVE, 1.0))
}

/// Eyring absorption `1 - exp(-24 ln(10) V / (c S T60))`, which assumes a
/// diffuse field.
pub fn eyring_absorption(room: &RoomSpec, t60: f64) -> Result<f64> {
    if !(t60.is_finite() && t60 > 0.0) {
        return Err(Error::invalid(
            "T60",
            "absorption is only defined for T60 > 0",
        ));
    }
    let rate = 24.0 * std::f64::consts::LN_10 * room.volume()
        / (room.sound_speed * room.surface_area() * t60);
    Ok((1.0 - (-rate).exp()).clamp(f64::MIN_POSITIVE, 1.0))
}

const DECAY_DIRECTIONS: usize = 48;
const DECAY_STEPS: usize = 400;

/// Schroeder T60 of the curve `mean_u exp(-g(u) x) / g(u)` in units of `x`
/// (metres times `-ln(1 - alpha)`), fitted over -5 dB to -25 dB.
///
/// Directions are midpoints of an equal-area grid on one octant. Results
/// are cached per room shape.
pub fn lattice_decay_length(dims: Vec3) -> f64 {
    use std::sync::Mutex;
    static CACHE: Mutex<Vec<([u64; 3], f64)>> = Mutex::new(Vec::new());
    let key = dims.map(f64::to_bits);
    if let Some(&(_, v)) = CACHE.lock().unwrap().iter().find(|(k, _)| *k == key) {
        return v;
    }

    let n = DECAY_DIRECTIONS;
    let mut g = Vec::with_capacity(n * n);
    for i in 0..n {
        let z = (i as f64 + 0.5) / n as f64;
        let rho = (1.0 - z * z).sqrt();
        for j in 0..n {
            let phi = (j as f64 + 0.5) / n as f64 * std::f64::consts::FRAC_PI_2;
            g.push(rho * phi.cos() / dims[0] + rho * phi.sin() / dims[1] + z / dims[2]);
        }
    }
    let g_min = g.iter().copied().fold(f64::INFINITY, f64::min);
    let x_max = 40.0 * std::f64::consts::LN_10 / 10.0 / g_min;
    let dx = x_max / DECAY_STEPS as f64;
    let edc = |x: f64| g.iter().map(|&gi| (-gi * x).exp() / gi).sum::<f64>();
    let e0 = edc(0.0);
    let (mut sx, mut sy, mut sxx, mut sxy, mut m) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for s in 0..=DECAY_STEPS {
        let x = s as f64 * dx;
        let db = 10.0 * (edc(x) / e0).log10();
        if (-25.0..=-5.0).contains(&db) {
            sx += x;
            sy += db;
            sxx += x * x;
            sxy += x * db;
            m += 1.0;
        }
    }
    let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    let v = -60.0 / slope;
    CACHE.lock().unwrap().push((key, v));
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rir {
    pub taps: Vec<f64>,
    pub sample_rate: u32,
}

/// One image-source contribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    /// Propagation delay in (fractional) samples.
    pub delay: f64,
    pub amplitude: f64,
    pub order: u32,
}

fn check_endpoints(room: &RoomSpec, source: Vec3, mic: Vec3) -> Result<f64> {
    room.validate()?;
    if !room.contains(source) {
        return Err(Error::OutsideRoom(source).context("source"));
    }
    if !room.contains(mic) {
        return Err(Error::OutsideRoom(mic).context("microphone"));
    }
    let d = distance(source, mic);
    if d < 1e-9 {
        return Err(Error::CoincidentSourceMic);
    }
    Ok(d)
}

/// Length in samples of the response for this environment.
fn rir_len(room: &RoomSpec, env: &AcousticEnv, direct: f64) -> usize {
    let fs = room.sample_rate as f64;
    let pad = match env.interpolation {
        Interpolation::Nearest => 0,
        Interpolation::Sinc => SINC_HALF_WIDTH,
    };
    let direct_end = (direct * fs / room.sound_speed).round() as usize + 1 + pad;
    let reverb_end = (env.t60 * fs).ceil() as usize;
    direct_end.max(reverb_end)
}

/// Enumerates image sources whose arrival falls inside the response window.
pub fn image_sources(
    room: &RoomSpec,
    env: &AcousticEnv,
    source: Vec3,
    mic: Vec3,
) -> Result<Vec<Arrival>> {
    let direct = check_endpoints(room, source, mic)?;
    let fs = room.sample_rate as f64;
    let c = room.sound_speed;
    let to_samples = fs / c;
    let gain = |d: f64| 1.0 / (4.0 * std::f64::consts::PI * d);

    let Some(alpha) = env.effective_absorption(room)? else {
        return Ok(vec![Arrival {
            delay: direct * to_samples,
            amplitude: gain(direct),
            order: 0,
        }]);
    };
    let beta = (1.0 - alpha).sqrt();
    let len = rir_len(room, env, direct);
    let r_max = len as f64 / to_samples;
    let max_order = env.max_order.unwrap_or(u32::MAX);

    // Per-axis offsets (image coordinate minus mic coordinate) with their
    // reflection counts; image = (1 - 2u) * s + 2 l L.
    let axis_terms: Vec<Vec<(f64, u32)>> = (0..3)
        .map(|a| {
            let l_max = (r_max / (2.0 * room.dims[a])).ceil() as i64 + 1;
            let mut terms = Vec::new();
            for l in -l_max..=l_max {
                for u in 0..2i64 {
                    let img = (1 - 2 * u) as f64 * source[a] + 2.0 * l as f64 * room.dims[a];
                    let off = img - mic[a];
                    let refl = ((l - u).abs() + l.abs()) as u32;
                    if off.abs() <= r_max && refl <= max_order {
                        terms.push((off, refl));
                    }
                }
            }
            terms
        })
        .collect();

    let r2 = r_max * r_max;
    let mut out = Vec::new();
    for &(dx, ox) in &axis_terms[0] {
        let dx2 = dx * dx;
        for &(dy, oy) in &axis_terms[1] {
            let dxy2 = dx2 + dy * dy;
            if dxy2 > r2 || ox + oy > max_order {
                continue;
            }
            for &(dz, oz) in &axis_terms[2] {
                let d2 = dxy2 + dz * dz;
                let order = ox + oy + oz;
                if d2 > r2 || order > max_order {
                    continue;
                }
                let d = d2.sqrt();
                let delay = d * to_samples;
                if delay.round() as usize >= len {
                    continue;
                }
                out.push(Arrival {
                    delay,
                    amplitude: beta.powi(order as i32) * gain(d),
                    order,
                });
            }
        }
    }
    Ok(out)
}

/// Image-source impulse response from `source` to `mic`.
pub fn compute_rir(room: &RoomSpec, env: &AcousticEnv, source: Vec3, mic: Vec3) -> Result<Rir> {
    let arrivals = image_sources(room, env, source, mic)?;
    let len = rir_len(room, env, distance(source, mic));
    let mut taps = render_arrivals(&arrivals, len, env.interpolation);
    if env.t60 > 0.0 {
        highpass(&mut taps, room.sample_rate, RIR_HIGHPASS_HZ);
    }
    Ok(Rir {
        taps,
        sample_rate: room.sample_rate,
    })
}

fn render_arrivals(arrivals: &[Arrival], len: usize, interpolation: Interpolation) -> Vec<f64> {
    let mut taps = vec![0.0; len];
    for a in arrivals {
        match interpolation {
            Interpolation::Nearest => {
                let i = a.delay.round() as usize;
                if i < len {
                    taps[i] += a.amplitude;
                }
            }
            Interpolation::Sinc => add_windowed_sinc(&mut taps, a.delay, a.amplitude),
        }
    }
    taps
}

/// Two-pole high-pass of Allen and Berkley, applied in place. All image
/// amplitudes are positive, so without it the dense tail accumulates a DC
/// offset that dominates the tap energy and stretches the measured decay.
pub fn highpass(taps: &mut [f64], sample_rate: u32, cutoff_hz: f64) {
    let w = 2.0 * std::f64::consts::PI * cutoff_hz / sample_rate as f64;
    let r1 = (-w).exp();
    let b1 = 2.0 * r1 * w.cos();
    let b2 = -r1 * r1;
    let a1 = -(1.0 + r1);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    for t in taps.iter_mut() {
        let x = *t;
        let y = x + a1 * x1 + r1 * x2 + b1 * y1 + b2 * y2;
        (x2, x1, y2, y1) = (x1, x, y1, y);
        *t = y;
    }
}

/// Adds `amplitude * sinc(i - delay) * hann(i - delay)` over the taps
/// within `SINC_HALF_WIDTH` of the delay.
///
/// With `x = n - f` for integer `n`, `sin(pi x) = -(-1)^n sin(pi f)`, and the
/// window cosine advances by a fixed angle per tap, so each arrival costs
/// three trigonometric calls.
fn add_windowed_sinc(taps: &mut [f64], delay: f64, amplitude: f64) {
    use std::f64::consts::PI;
    let w = SINC_HALF_WIDTH as i64;
    let center = delay.round() as i64;
    let frac = delay - center as f64;
    let lo = (center - w).max(0);
    let hi = (center + w).min(taps.len() as i64 - 1);
    if lo > hi {
        return;
    }
    let sin_frac = (PI * frac).sin();
    let step = PI / (w + 1) as f64;
    let (step_sin, step_cos) = step.sin_cos();
    let (mut s, mut c) = ((lo - center) as f64 * step - frac * step).sin_cos();
    let mut numer = if (lo - center) % 2 == 0 { -sin_frac } else { sin_frac } * amplitude / PI;
    let half = 0.5 * amplitude;
    for (k, tap) in taps[lo as usize..=hi as usize].iter_mut().enumerate() {
        let x = (lo - center + k as i64) as f64 - frac;
        *tap += if x.abs() < 1e-12 {
            half * (1.0 + c)
        } else {
            numer / x * 0.5 * (1.0 + c)
        };
        numer = -numer;
        (s, c) = (s * step_cos + c * step_sin, c * step_cos - s * step_sin);
    }
}

/// Aligned, equal-length microphone signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureSet {
    pub channels: Vec<Vec<f64>>,
    pub sample_rate: u32,
}

impl CaptureSet {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::invalid("capture", "no channels"));
        }
        let n = channels[0].len();
        if let Some(c) = channels.iter().find(|c| c.len() != n) {
            return Err(Error::invalid(
                "capture",
                format!("channel lengths differ ({n} vs {})", c.len()),
            ));
        }
        Ok(CaptureSet {
            channels,
            sample_rate,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Convolves the source with each RIR and adds white Gaussian noise at the
/// environment's SNR. Noise is independent per channel and fully determined
/// by `env.noise_seed`.
pub fn simulate_capture(signal: &Signal, rirs: &[Rir], env: &AcousticEnv) -> Result<CaptureSet> {
    env.validate()?;
    if signal.is_empty() {
        return Err(Error::invalid("signal", "empty source signal"));
    }
    if rirs.is_empty() {
        return Err(Error::invalid("capture", "no impulse responses"));
    }
    if let Some(r) = rirs.iter().find(|r| r.sample_rate != signal.sample_rate) {
        return Err(Error::SampleRateMismatch {
            expected: signal.sample_rate,
            actual: r.sample_rate,
        });
    }
    let max_rir = rirs.iter().map(|r| r.taps.len()).max().unwrap_or(1).max(1);
    let out_len = signal.len() + max_rir - 1;

    let mut channels = Convolver::new(&signal.samples, out_len).apply_all(rirs);

    if env.snr_db.is_finite() {
        for (ch, x) in channels.iter_mut().enumerate() {
            add_noise(x, env.snr_db, env.noise_seed, ch as u64);
        }
    }
    CaptureSet::new(channels, signal.sample_rate)
}

fn add_noise(x: &mut [f64], snr_db: f64, seed: u64, stream: u64) {
    let n = x.len() as f64;
    let p_signal = x.iter().map(|v| v * v).sum::<f64>() / n;
    if p_signal == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let noise: Vec<f64> = (0..x.len())
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let p_noise = noise.iter().map(|v| v * v).sum::<f64>() / n;
    let scale = (p_signal / 10f64.powf(snr_db / 10.0) / p_noise).sqrt();
    for (v, w) in x.iter_mut().zip(noise) {
        *v += scale * w;
    }
}

/// Linear convolution of one source against several filters, sharing the
/// source spectrum.
struct Convolver<'a> {
    signal: &'a [f64],
    out_len: usize,
    spectrum: Option<(usize, Vec<Complex<f64>>)>,
    planner: FftPlanner<f64>,
}

impl<'a> Convolver<'a> {
    fn new(signal: &'a [f64], out_len: usize) -> Self {
        Convolver {
            signal,
            out_len,
            spectrum: None,
            planner: FftPlanner::new(),
        }
    }

    fn apply_all(&mut self, rirs: &[Rir]) -> Vec<Vec<f64>> {
        rirs.iter().map(|r| self.apply(&r.taps)).collect()
    }

    fn apply(&mut self, taps: &[f64]) -> Vec<f64> {
        let nonzero = taps.iter().filter(|t| **t != 0.0).count();
        if nonzero <= SPARSE_TAPS {
            let mut out = vec![0.0; self.out_len];
            for (k, &h) in taps.iter().enumerate().filter(|(_, h)| **h != 0.0) {
                for (o, &s) in out[k..].iter_mut().zip(self.signal) {
                    *o += h * s;
                }
            }
            return out;
        }
        let n = self.out_len.next_power_of_two();
        if self.spectrum.as_ref().map(|(m, _)| *m) != Some(n) {
            let mut buf = to_complex(self.signal, n);
            self.planner.plan_fft_forward(n).process(&mut buf);
            self.spectrum = Some((n, buf));
        }
        let (_, sig) = self.spectrum.as_ref().expect("spectrum computed above");
        let mut buf = to_complex(taps, n);
        self.planner.plan_fft_forward(n).process(&mut buf);
        for (b, s) in buf.iter_mut().zip(sig) {
            *b *= s;
        }
        self.planner.plan_fft_inverse(n).process(&mut buf);
        let scale = 1.0 / n as f64;
        buf[..self.out_len].iter().map(|c| c.re * scale).collect()
    }
}

fn to_complex(x: &[f64], n: usize) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(n, Complex::new(0.0, 0.0));
    buf
}

/// Computes the RIRs from `source` to every microphone and simulates the
/// capture.
pub fn capture_source(
    room: &RoomSpec,
    array: &MicArray,
    env: &AcousticEnv,
    source: Vec3,
    signal: &Signal,
) -> Result<CaptureSet> {
    let rirs = array
        .positions()
        .iter()
        .map(|&m| compute_rir(room, env, source, m))
        .collect::<Result<Vec<_>>>()?;
    simulate_capture(signal, &rirs, env)
}
