//! Localization error, DOA error statistics and SRDE success rates.
//!
//! # CSV schema
//!
//! Summary (`report.csv`), one row per (environment, metric):
//!
//! | column        | meaning                                       |
//! |---------------|-----------------------------------------------|
//! | `source`      | source clip name                              |
//! | `k`           | cluster count                                 |
//! | `train_t60`   | training T60 (s)                              |
//! | `train_snr_db`| training SNR (dB, `inf` = noise off)          |
//! | `test_t60`    | test T60 (s)                                  |
//! | `test_snr_db` | test SNR (dB)                                 |
//! | `metric`      | `phi_mean`, `phi_std`, `theta_mean`, `theta_std`, `srde10`, `srde20`, `srde30`, `eps_mean`, `bound_violations`, `positions` |
//! | `value`       | metric value (SRDE as a fraction)             |
//! | `percent`     | SRDE as a percentage rounded to 0.1, else empty |
//!
//! Outcomes (`outcomes.csv`), one row per test position:
//! `index,truth_x,truth_y,truth_z,truth_theta,truth_phi,est_x,est_y,est_z,est_theta,est_phi,eps,phi_err,theta_err,same_cluster`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{distance, wrap_degrees, ClusterGrid, Doa, Vec3};

pub const SRDE_ANGLES: [f64; 3] = [10.0, 20.0, 30.0];

pub fn localization_error(truth: Vec3, estimate: Vec3) -> f64 {
    distance(truth, estimate)
}

/// `(phi_err, theta_err)` in degrees. Azimuth error is zero when the truth
/// sits on a pole.
pub fn doa_error(truth: &Doa, estimate: &Doa) -> (f64, f64) {
    let theta_err = (truth.elevation - estimate.elevation).abs();
    let phi_err = if truth.is_pole() {
        0.0
    } else {
        wrap_degrees(truth.azimuth - estimate.azimuth).abs()
    };
    (phi_err, theta_err)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub truth: Vec3,
    pub truth_doa: Doa,
    pub estimate: Vec3,
    pub estimate_doa: Doa,
    pub eps: f64,
    pub phi_err: f64,
    pub theta_err: f64,
    pub same_cluster: bool,
}

impl TestOutcome {
    pub fn new(
        truth: Vec3,
        truth_doa: Doa,
        estimate: Vec3,
        estimate_doa: Doa,
        grid: &ClusterGrid,
    ) -> Result<Self> {
        let (phi_err, theta_err) = doa_error(&truth_doa, &estimate_doa);
        Ok(TestOutcome {
            truth,
            truth_doa,
            estimate,
            estimate_doa,
            eps: localization_error(truth, estimate),
            phi_err,
            theta_err,
            same_cluster: grid.cluster_of(truth)? == grid.cluster_of(estimate)?,
        })
    }
}

/// Fraction of outcomes with both angular errors at most `alpha` degrees.
pub fn srde(outcomes: &[TestOutcome], alpha: f64) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::invalid("outcomes", "SRDE of an empty set"));
    }
    let hits = outcomes
        .iter()
        .filter(|o| o.phi_err <= alpha && o.theta_err <= alpha)
        .count();
    Ok(hits as f64 / outcomes.len() as f64)
}

/// False only when truth and estimate share a cluster yet lie further
/// apart than the cluster diagonal.
pub fn bound_check(truth: Vec3, estimate: Vec3, grid: &ClusterGrid) -> Result<bool> {
    if grid.cluster_of(truth)? != grid.cluster_of(estimate)? {
        return Ok(true);
    }
    Ok(localization_error(truth, estimate) <= grid.diagonal() + 1e-12)
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Labels identifying one evaluated environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvTags {
    pub source: String,
    pub k: usize,
    pub train_t60: f64,
    pub train_snr_db: f64,
    pub test_t60: f64,
    pub test_snr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrdeEntry {
    pub alpha: f64,
    pub fraction: f64,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tags: EnvTags,
    pub positions: usize,
    pub phi_mean: f64,
    pub phi_std: f64,
    pub theta_mean: f64,
    pub theta_std: f64,
    pub srde: Vec<SrdeEntry>,
    pub eps_mean: f64,
    pub bound_violations: usize,
    pub outcomes: Vec<TestOutcome>,
}

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

impl Report {
    pub fn from_outcomes(tags: EnvTags, outcomes: Vec<TestOutcome>, grid: &ClusterGrid) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::invalid("outcomes", "cannot report on zero tests"));
        }
        let (phi_mean, phi_std) = mean_std(outcomes.iter().map(|o| o.phi_err));
        let (theta_mean, theta_std) = mean_std(outcomes.iter().map(|o| o.theta_err));
        let srde = SRDE_ANGLES
            .iter()
            .map(|&alpha| {
                let fraction = srde(&outcomes, alpha)?;
                Ok(SrdeEntry {
                    alpha,
                    fraction,
                    percent: round1(100.0 * fraction),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut bound_violations = 0;
        for o in &outcomes {
            if !bound_check(o.truth, o.estimate, grid)? {
                bound_violations += 1;
            }
        }
        Ok(Report {
            tags,
            positions: outcomes.len(),
            phi_mean,
            phi_std,
            theta_mean,
            theta_std,
            srde,
            eps_mean: outcomes.iter().map(|o| o.eps).sum::<f64>() / outcomes.len() as f64,
            bound_violations,
            outcomes,
        })
    }

    pub fn srde_at(&self, alpha: f64) -> Option<f64> {
        self.srde.iter().find(|e| e.alpha == alpha).map(|e| e.fraction)
    }

    /// `(metric, value, percent)` rows of the summary.
    pub fn metric_rows(&self) -> Vec<(String, f64, Option<f64>)> {
        let mut rows = vec![
            ("phi_mean".to_string(), self.phi_mean, None),
            ("phi_std".to_string(), self.phi_std, None),
            ("theta_mean".to_string(), self.theta_mean, None),
            ("theta_std".to_string(), self.theta_std, None),
        ];
        for e in &self.srde {
            rows.push((format!("srde{}", e.alpha as u32), e.fraction, Some(e.percent)));
        }
        rows.push(("eps_mean".to_string(), self.eps_mean, None));
        rows.push(("bound_violations".to_string(), self.bound_violations as f64, None));
        rows.push(("positions".to_string(), self.positions as f64, None));
        rows
    }

    pub fn write_summary_csv(reports: &[Report], w: impl Write) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record([
            "source",
            "k",
            "train_t60",
            "train_snr_db",
            "test_t60",
            "test_snr_db",
            "metric",
            "value",
            "percent",
        ])?;
        for r in reports {
            let t = &r.tags;
            for (metric, value, percent) in r.metric_rows() {
                csv.write_record([
                    t.source.clone(),
                    t.k.to_string(),
                    t.train_t60.to_string(),
                    t.train_snr_db.to_string(),
                    t.test_t60.to_string(),
                    t.test_snr_db.to_string(),
                    metric,
                    value.to_string(),
                    percent.map(|p| format!("{p:.1}")).unwrap_or_default(),
                ])?;
            }
        }
        csv.flush()?;
        Ok(())
    }

    pub fn write_outcomes_csv(&self, w: impl Write) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record([
            "index",
            "truth_x",
            "truth_y",
            "truth_z",
            "truth_theta",
            "truth_phi",
            "est_x",
            "est_y",
            "est_z",
            "est_theta",
            "est_phi",
            "eps",
            "phi_err",
            "theta_err",
            "same_cluster",
        ])?;
        for (i, o) in self.outcomes.iter().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(o.truth.iter().map(f64::to_string));
            row.push(o.truth_doa.elevation.to_string());
            row.push(o.truth_doa.azimuth.to_string());
            row.extend(o.estimate.iter().map(f64::to_string));
            row.push(o.estimate_doa.elevation.to_string());
            row.push(o.estimate_doa.azimuth.to_string());
            row.push(o.eps.to_string());
            row.push(o.phi_err.to_string());
            row.push(o.theta_err.to_string());
            row.push(o.same_cluster.to_string());
            csv.write_record(&row)?;
        }
        csv.flush()?;
        Ok(())
    }
}
