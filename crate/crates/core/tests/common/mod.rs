//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

/// Reverberation time from the Schroeder backward-integrated energy decay,
/// by a least-squares line through the -5 dB to -25 dB span, extrapolated
/// to 60 dB.
pub fn schroeder_t60(taps: &[f64], sample_rate: u32) -> f64 {
    let mut edc = vec![0.0; taps.len()];
    let mut acc = 0.0;
    for i in (0..taps.len()).rev() {
        acc += taps[i] * taps[i];
        edc[i] = acc;
    }
    let total = edc[0];
    let (mut sx, mut sy, mut sxx, mut sxy, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, e) in edc.iter().enumerate() {
        let db = 10.0 * (e / total).log10();
        if (-25.0..=-5.0).contains(&db) {
            let t = i as f64 / sample_rate as f64;
            sx += t;
            sy += db;
            sxx += t * t;
            sxy += t * db;
            n += 1.0;
        }
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    -60.0 / slope
}

/// Zero-padded DFT evaluated term by term.
pub fn naive_dft(x: &[f64], n: usize, inverse: bool) -> Vec<(f64, f64)> {
    let sign = if inverse { 1.0 } else { -1.0 };
    (0..n)
        .map(|k| {
            let mut re = 0.0;
            let mut im = 0.0;
            for (t, &v) in x.iter().enumerate() {
                let ang = sign * 2.0 * PI * (k * t % n) as f64 / n as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            (re, im)
        })
        .collect()
}

/// Phase-transform correlation of two frames via direct DFT sums, sampled
/// at `lags` (negative lags wrap to the end of the buffer).
pub fn naive_gcc_phat(a: &[f64], b: &[f64], lags: &[i64]) -> Vec<f64> {
    let n = (2 * a.len()).next_power_of_two();
    let fa = naive_dft(a, n, false);
    let fb = naive_dft(b, n, false);
    let cross: Vec<(f64, f64)> = fa
        .iter()
        .zip(&fb)
        .map(|(&(ar, ai), &(br, bi))| {
            // conj(A) * B
            let re = ar * br + ai * bi;
            let im = ar * bi - ai * br;
            let mag = (re * re + im * im).sqrt().max(1e-12);
            (re / mag, im / mag)
        })
        .collect();
    lags.iter()
        .map(|&k| {
            let idx = k.rem_euclid(n as i64) as usize;
            let mut acc = 0.0;
            for (f, &(re, im)) in cross.iter().enumerate() {
                let ang = 2.0 * PI * (f * idx % n) as f64 / n as f64;
                acc += re * ang.cos() - im * ang.sin();
            }
            acc / n as f64
        })
        .collect()
}

/// Plain cross correlation `r[k] = sum_n a[n] b[n + k]`.
pub fn naive_xcorr(a: &[f64], b: &[f64], k: i64) -> f64 {
    let mut acc = 0.0;
    for (n, &av) in a.iter().enumerate() {
        let j = n as i64 + k;
        if j >= 0 && (j as usize) < b.len() {
            acc += av * b[j as usize];
        }
    }
    acc
}

/// Per-cluster mean Gaussian kernel, then softmax, written out directly.
pub fn naive_pnn_probs(centers: &[Vec<f64>], labels: &[usize], k: usize, sigma: f64, g: &[f64]) -> Vec<f64> {
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (c, &l) in centers.iter().zip(labels) {
        let mut d2 = 0.0;
        for i in 0..g.len() {
            d2 += (g[i] - c[i]) * (g[i] - c[i]);
        }
        sums[l] += (-d2 / (2.0 * sigma * sigma)).exp();
        counts[l] += 1;
    }
    let raw: Vec<f64> = (0..k)
        .map(|i| if counts[i] == 0 { 0.0 } else { sums[i] / counts[i] as f64 })
        .collect();
    let denom: f64 = raw.iter().map(|r| r.exp()).sum();
    raw.iter().map(|r| r.exp() / denom).collect()
}

/// Mean signal power over mean noise power, in dB.
pub fn measured_snr_db(clean: &[f64], noisy: &[f64]) -> f64 {
    let ps: f64 = clean.iter().map(|v| v * v).sum();
    let pn: f64 = clean.iter().zip(noisy).map(|(c, n)| (n - c).powi(2)).sum();
    10.0 * (ps / pn).log10()
}
