//! Weighted location decision: turns cluster probabilities into a
//! continuous position.
//!
//! 1. take the most probable clusters until their probability mass would
//!    exceed `thr` (at most `zeta_max`, at least one);
//! 2. preliminary position = probability-weighted mean of their centers,
//!    with probabilities renormalized over the selection;
//! 3. reweight clusters by inverse distance of their centers to the
//!    preliminary position (exponent `lambda`);
//! 4. inside each cluster, weight the 8 vertexes by inverse distance to the
//!    preliminary position (exponent `rho`);
//! 5. final position = cluster-weighted mean of vertex-weighted means.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::gcc_feature;
use crate::geometry::{cartesian_to_doa, distance, ClusterGrid, Doa, Vec3};
use crate::pnn::{ClusterProbs, PnnModel};
use crate::room::CaptureSet;

/// Sample points per cluster (its vertexes).
pub const SAMPLE_POINTS: usize = 8;

/// Reference cluster count for the default threshold.
const REFERENCE_K: f64 = 4096.0;
const REFERENCE_THR: f64 = 0.004;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WldmConfig {
    /// Probability-mass threshold. `None` scales 0.004 at K = 4096 to other
    /// grids as `16 / K`.
    pub thr: Option<f64>,
    pub zeta_max: usize,
    pub lambda: f64,
    pub rho: f64,
    pub dist_floor: f64,
}

impl Default for WldmConfig {
    fn default() -> Self {
        WldmConfig {
            thr: None,
            zeta_max: 15,
            lambda: 0.25,
            rho: 0.25,
            dist_floor: 1e-6,
        }
    }
}

impl WldmConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.thr {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::invalid("wldm", format!("thr {t} outside (0, 1]")));
            }
        }
        if self.zeta_max < 1 {
            return Err(Error::invalid("wldm", "zeta_max must be >= 1"));
        }
        for (name, v) in [("lambda", self.lambda), ("rho", self.rho)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid("wldm", format!("{name} {v} outside (0, 1)")));
            }
        }
        if !(self.dist_floor > 0.0) {
            return Err(Error::invalid("wldm", "distance floor must be positive"));
        }
        Ok(())
    }

    pub fn threshold(&self, k: usize) -> f64 {
        self.thr
            .unwrap_or_else(|| (REFERENCE_THR * REFERENCE_K / k as f64).min(1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectedCluster {
    pub cluster: usize,
    pub prob: f64,
    /// Inverse-distance weight; zero until computed.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub position: Vec3,
    pub doa: Doa,
    pub selected: Vec<SelectedCluster>,
    pub preliminary: Vec3,
}

/// Clusters in descending probability (ties to the lower index), stopping
/// before the one that would push the running sum above the threshold.
pub fn select_clusters(probs: &ClusterProbs, cfg: &WldmConfig) -> Vec<SelectedCluster> {
    let p = &probs.probs;
    let thr = cfg.threshold(p.len());
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    let mut out = Vec::new();
    let mut sum = 0.0;
    for &c in order.iter().take(cfg.zeta_max) {
        if !out.is_empty() && sum + p[c] > thr {
            break;
        }
        sum += p[c];
        out.push(SelectedCluster {
            cluster: c,
            prob: p[c],
            weight: 0.0,
        });
    }
    out
}

/// Probability-weighted mean of the selected cluster centers.
pub fn preliminary_estimate(selected: &[SelectedCluster], grid: &ClusterGrid) -> Result<Vec3> {
    if selected.is_empty() {
        return Err(Error::invalid("selection", "no clusters selected"));
    }
    let total: f64 = selected.iter().map(|s| s.prob).sum();
    let uniform = !(total > 0.0 && total.is_finite());
    let mut ps = [0.0; 3];
    for s in selected {
        let w = if uniform {
            1.0 / selected.len() as f64
        } else {
            s.prob / total
        };
        let c = grid.center_of(s.cluster)?;
        for a in 0..3 {
            ps[a] += w * c[a];
        }
    }
    Ok(ps)
}

/// Normalized `(1 / max(l, floor))^exponent` weights.
pub fn inverse_distance_weights(distances: &[f64], exponent: f64, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = distances
        .iter()
        .map(|l| l.max(floor).recip().powf(exponent))
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|r| r / total).collect()
}

/// Cluster weights from the distances between cluster centers and `ps`.
pub fn cluster_weights(
    selected: &[SelectedCluster],
    ps: Vec3,
    grid: &ClusterGrid,
    cfg: &WldmConfig,
) -> Result<Vec<f64>> {
    let d = selected
        .iter()
        .map(|s| grid.center_of(s.cluster).map(|c| distance(c, ps)))
        .collect::<Result<Vec<_>>>()?;
    Ok(inverse_distance_weights(&d, cfg.lambda, cfg.dist_floor))
}

/// Weights of the cluster's 8 vertexes from their distances to `ps`, in
/// [`ClusterGrid::vertexes_of`] order.
pub fn sample_point_weights(
    cluster: usize,
    ps: Vec3,
    grid: &ClusterGrid,
    cfg: &WldmConfig,
) -> Result<[f64; SAMPLE_POINTS]> {
    let d = grid.vertexes_of(cluster)?.map(|v| distance(v, ps));
    let w = inverse_distance_weights(&d, cfg.rho, cfg.dist_floor);
    Ok(std::array::from_fn(|t| w[t]))
}

/// Final position `sum_a w_a sum_t w_at v_at` and its DOA.
pub fn finalize(
    selected: &[SelectedCluster],
    cluster_w: &[f64],
    vertex_w: &[[f64; SAMPLE_POINTS]],
    preliminary: Vec3,
    grid: &ClusterGrid,
    array_center: Vec3,
) -> Result<LocalizationResult> {
    if selected.is_empty() || selected.len() != cluster_w.len() || selected.len() != vertex_w.len()
    {
        return Err(Error::invalid(
            "wldm",
            "selection and weight lists must be non-empty and equally long",
        ));
    }
    let mut position = [0.0; 3];
    for ((s, wa), wt) in selected.iter().zip(cluster_w).zip(vertex_w) {
        let verts = grid.vertexes_of(s.cluster)?;
        for (v, w) in verts.iter().zip(wt) {
            for a in 0..3 {
                position[a] += wa * w * v[a];
            }
        }
    }
    let doa = cartesian_to_doa(position, array_center)?;
    Ok(LocalizationResult {
        position,
        doa,
        selected: selected
            .iter()
            .zip(cluster_w)
            .map(|(s, &w)| SelectedCluster { weight: w, ..*s })
            .collect(),
        preliminary,
    })
}

/// Runs selection and both weighting stages on a probability vector.
pub fn locate_from_probs(
    probs: &ClusterProbs,
    grid: &ClusterGrid,
    array_center: Vec3,
    cfg: &WldmConfig,
) -> Result<LocalizationResult> {
    cfg.validate()?;
    if probs.probs.len() != grid.k() {
        return Err(Error::DimensionMismatch {
            expected: grid.k(),
            actual: probs.probs.len(),
        });
    }
    let selected = select_clusters(probs, cfg);
    let ps = preliminary_estimate(&selected, grid)?;
    let wa = cluster_weights(&selected, ps, grid, cfg)?;
    let wt = selected
        .iter()
        .map(|s| sample_point_weights(s.cluster, ps, grid, cfg))
        .collect::<Result<Vec<_>>>()?;
    finalize(&selected, &wa, &wt, ps, grid, array_center)
}

fn array_center(model: &PnnModel) -> Vec3 {
    let mics = &model.header().mic_positions;
    let mut c = [0.0; 3];
    for m in mics {
        for a in 0..3 {
            c[a] += m[a] / mics.len() as f64;
        }
    }
    c
}

/// Full localization of one capture against a trained model.
pub fn localize(model: &PnnModel, capture: &CaptureSet, cfg: &WldmConfig) -> Result<LocalizationResult> {
    let h = model.header();
    if capture.num_channels() != h.mic_positions.len() {
        return Err(Error::ModelMismatch {
            field: "microphone count",
            model: h.mic_positions.len().to_string(),
            input: capture.num_channels().to_string(),
        });
    }
    if capture.sample_rate != h.room.sample_rate {
        return Err(Error::ModelMismatch {
            field: "sample rate",
            model: h.room.sample_rate.to_string(),
            input: capture.sample_rate.to_string(),
        });
    }
    let g = gcc_feature(capture, &h.feature)?;
    let probs = model.cluster_probabilities(&g.values)?;
    locate_from_probs(&probs, model.grid(), array_center(model), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_cluster_grid, RoomSpec};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn grid() -> ClusterGrid {
        make_cluster_grid(&RoomSpec::meeting_room(), [0.25; 3]).unwrap()
    }

    fn sel(cluster: usize, prob: f64) -> SelectedCluster {
        SelectedCluster {
            cluster,
            prob,
            weight: 0.0,
        }
    }

    #[test]
    fn uniform_selection_counts() {
        let probs = ClusterProbs {
            probs: vec![1.0 / 4096.0; 4096],
            softmax: true,
        };
        let uncapped = WldmConfig {
            thr: Some(0.004),
            zeta_max: usize::MAX,
            ..Default::default()
        };
        let s = select_clusters(&probs, &uncapped);
        assert_eq!(s.len(), 16);
        assert_eq!(s.iter().map(|c| c.cluster).collect::<Vec<_>>(), (0..16).collect::<Vec<_>>());
        assert_eq!(select_clusters(&probs, &WldmConfig::default()).len(), 15);
        assert_eq!(WldmConfig::default().threshold(4096), 0.004);
        assert_abs_diff_eq!(WldmConfig::default().threshold(512), 0.032, epsilon = 1e-15);
    }

    #[test]
    fn dominant_cluster_is_taken_alone() {
        let mut p = vec![0.1 / 4095.0; 4096];
        p[77] = 0.9;
        let s = select_clusters(&ClusterProbs { probs: p, softmax: true }, &WldmConfig::default());
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].cluster, 77);
    }

    #[test]
    fn preliminary_examples() {
        let g = grid();
        let c = |i| g.center_of(i).unwrap();
        assert_eq!(preliminary_estimate(&[sel(5, 0.001)], &g).unwrap(), c(5));
        let mid = preliminary_estimate(&[sel(0, 0.002), sel(1, 0.002)], &g).unwrap();
        assert_abs_diff_eq!(mid[0], 0.25, epsilon = 1e-15);
        let three = preliminary_estimate(&[sel(0, 0.002), sel(20, 0.001), sel(300, 0.001)], &g)
            .unwrap();
        for a in 0..3 {
            assert_abs_diff_eq!(
                three[a],
                0.5 * c(0)[a] + 0.25 * c(20)[a] + 0.25 * c(300)[a],
                epsilon = 1e-15
            );
        }
        assert!(preliminary_estimate(&[], &g).is_err());
    }

    #[test]
    fn inverse_distance_examples() {
        let w = inverse_distance_weights(&[0.1, 0.4], 0.25, 1e-6);
        let q = 4f64.powf(0.25);
        assert_abs_diff_eq!(w[0], q / (q + 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 1.0 / (q + 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(w[0], 0.5858, epsilon = 1e-4);
        let eq = inverse_distance_weights(&[0.3; 5], 0.25, 1e-6);
        assert!(eq.iter().all(|v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn vertex_weights() {
        let g = grid();
        let cfg = WldmConfig::default();
        let center = g.center_of(100).unwrap();
        for w in sample_point_weights(100, center, &g, &cfg).unwrap() {
            assert_abs_diff_eq!(w, 0.125, epsilon = 1e-15);
        }
        let v = g.vertexes_of(100).unwrap();
        let w = sample_point_weights(100, v[3], &g, &cfg).unwrap();
        let best = w.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(best, 3);
    }

    #[test]
    fn single_cluster_finalizes_to_its_center() {
        let g = grid();
        let cfg = WldmConfig::default();
        let probs = {
            let mut p = vec![0.0; g.k()];
            p[1234] = 1.0;
            ClusterProbs { probs: p, softmax: true }
        };
        let r = locate_from_probs(&probs, &g, [2.0; 3], &cfg).unwrap();
        let c = g.center_of(1234).unwrap();
        for a in 0..3 {
            assert_abs_diff_eq!(r.position[a], c[a], epsilon = 1e-12);
        }
        assert_eq!(r.selected.len(), 1);
        assert_abs_diff_eq!(r.selected[0].weight, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn adjacent_pair_lands_on_shared_face() {
        let g = grid();
        let cfg = WldmConfig::default();
        // cells 0 and 1 share the face x = 0.25
        let s = [sel(0, 0.5), sel(1, 0.5)];
        let ps = preliminary_estimate(&s, &g).unwrap();
        assert_abs_diff_eq!(ps[0], 0.25, epsilon = 1e-15);
        let wa = cluster_weights(&s, ps, &g, &cfg).unwrap();
        let wt: Vec<_> = s
            .iter()
            .map(|c| sample_point_weights(c.cluster, ps, &g, &cfg).unwrap())
            .collect();
        let r = finalize(&s, &wa, &wt, ps, &g, [2.0; 3]).unwrap();
        assert_abs_diff_eq!(r.position[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(r.position[1], 0.125, epsilon = 1e-12);
        assert_abs_diff_eq!(r.position[2], 0.125, epsilon = 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(WldmConfig::default().validate().is_ok());
        for bad in [
            WldmConfig { lambda: 1.0, ..Default::default() },
            WldmConfig { rho: 0.0, ..Default::default() },
            WldmConfig { zeta_max: 0, ..Default::default() },
            WldmConfig { thr: Some(0.0), ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    proptest! {
        #[test]
        fn weights_are_scale_invariant(d in prop::collection::vec(0.01f64..5.0, 1..20), e in 0.05f64..0.95) {
            let a = inverse_distance_weights(&d, e, 1e-9);
            let scaled: Vec<f64> = d.iter().map(|v| v * 10.0).collect();
            let b = inverse_distance_weights(&scaled, e, 1e-9);
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn selection_is_monotone(seed in 0u64..500, t1 in 0.001f64..0.2, t2 in 0.001f64..0.2, z in 1usize..20) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let raw: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..3.0)).collect();
            let probs = ClusterProbs { probs: crate::pnn::softmax(&raw), softmax: true };
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            let base = WldmConfig { thr: Some(lo), zeta_max: z, ..Default::default() };
            let n_lo = select_clusters(&probs, &base).len();
            let n_hi = select_clusters(&probs, &WldmConfig { thr: Some(hi), ..base }).len();
            prop_assert!(n_hi >= n_lo);
            let fewer = select_clusters(&probs, &WldmConfig { zeta_max: (z / 2).max(1), ..base }).len();
            prop_assert!(fewer <= n_lo);
            let first = select_clusters(&probs, &base)[0].cluster;
            let argmax = probs.probs.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0))).unwrap().0;
            prop_assert_eq!(first, argmax);
        }
    }
}
