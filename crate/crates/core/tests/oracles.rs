mod common;

use approx::assert_abs_diff_eq;
use gcaloc::features::{gcc_pair, GccEngine, GccFeature, LagMode};
use gcaloc::geometry::{make_cluster_grid, RoomSpec};
use gcaloc::pnn::{self, ModelMeta};
use gcaloc::features::FeatureSpec;
use gcaloc::wldm::{
    cluster_weights, finalize, inverse_distance_weights, preliminary_estimate, sample_point_weights,
    select_clusters, SelectedCluster, WldmConfig,
};
use gcaloc::pnn::ClusterProbs;
use proptest::prelude::*;

fn frame() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 8..=128)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gcc_fft_matches_direct_dft(a in frame(), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = (0..a.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lags: Vec<i64> = (-(a.len() as i64) + 1..a.len() as i64).collect();
        let fast = GccEngine::new(a.len()).gcc_pair(&a, &b, &lags).unwrap();
        let slow = common::naive_gcc_phat(&a, &b, &lags);
        for (f, s) in fast.iter().zip(&slow) {
            prop_assert!((f - s).abs() < 1e-9, "{f} vs {s}");
        }
    }
}

#[test]
fn gcc_lag_sign_matches_plain_correlation() {
    // b is a delayed by 5 samples: r[k] = sum a[n] b[n + k] peaks at +5
    let a: Vec<f64> = (0..64).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect();
    let mut b = vec![0.0; 64];
    b[5..].copy_from_slice(&a[..59]);
    let plain: Vec<f64> = (-8..8).map(|k| common::naive_xcorr(&a, &b, k)).collect();
    let phat = gcc_pair(&a, &b, 16, LagMode::Centered).unwrap();
    let argmax = |v: &[f64]| {
        v.iter()
            .enumerate()
            .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
            .unwrap()
            .0 as i64
            - 8
    };
    assert_eq!(argmax(&plain), 5);
    assert_eq!(argmax(&phat), 5);
}

fn toy_meta(k: usize) -> (gcaloc::ClusterGrid, ModelMeta) {
    let room = RoomSpec::new([k as f64, 1.0, 1.0], 343.0, 8000).unwrap();
    let grid = make_cluster_grid(&room, [1.0; 3]).unwrap();
    let meta = ModelMeta {
        room,
        mic_positions: vec![[0.2, 0.5, 0.5], [0.8, 0.5, 0.5]],
        feature: FeatureSpec {
            lags_per_pair: 2,
            ..Default::default()
        },
    };
    (grid, meta)
}

fn feature(v: &[f64]) -> GccFeature {
    GccFeature {
        values: v.to_vec(),
        pair_count: 1,
        lags_per_pair: 2,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pnn_probs_match_direct_evaluation(
        k in 1usize..=3,
        points in prop::collection::vec((prop::array::uniform2(-3.0f64..3.0), 0usize..3), 1..=50),
        query in prop::array::uniform2(-3.0f64..3.0),
        sigma in 0.3f64..6.0,
    ) {
        let centers: Vec<Vec<f64>> = points.iter().map(|(p, _)| p.to_vec()).collect();
        let labels: Vec<usize> = points.iter().map(|(_, l)| l % k).collect();
        let (grid, meta) = toy_meta(k);
        let feats: Vec<GccFeature> = centers.iter().map(|c| feature(c)).collect();
        let model = pnn::train(&feats, &labels, sigma, &grid, meta).unwrap();
        let got = model.cluster_probabilities(&query).unwrap();
        let want = common::naive_pnn_probs(&centers, &labels, k, sigma, &query);
        for (g, w) in got.probs.iter().zip(&want) {
            prop_assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }
}

fn sel(cluster: usize, prob: f64) -> SelectedCluster {
    SelectedCluster {
        cluster,
        prob,
        weight: 0.0,
    }
}

#[test]
fn wldm_hand_computed_chain() {
    // 4 m room, 1 m clusters; three clusters along x at lattice (0,0,0),
    // (1,0,0), (2,0,0) with probabilities in ratio 2:1:1.
    let room = RoomSpec::meeting_room();
    let grid = make_cluster_grid(&room, [1.0; 3]).unwrap();
    let cfg = WldmConfig::default();
    let selected = vec![sel(0, 0.5), sel(1, 0.25), sel(2, 0.25)];

    // preliminary: 0.5 * 0.5 + 0.25 * 1.5 + 0.25 * 2.5 = 1.25 on x
    let ps = preliminary_estimate(&selected, &grid).unwrap();
    assert_abs_diff_eq!(ps[0], 1.25, epsilon = 1e-12);
    assert_abs_diff_eq!(ps[1], 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(ps[2], 0.5, epsilon = 1e-12);

    // cluster weights: distances 0.75, 0.25, 1.25 to the centers
    let d = [0.75f64, 0.25, 1.25];
    let raw: Vec<f64> = d.iter().map(|x| x.powf(-0.25)).collect();
    let total: f64 = raw.iter().sum();
    let wa = cluster_weights(&selected, ps, &grid, &cfg).unwrap();
    for (w, r) in wa.iter().zip(&raw) {
        assert_abs_diff_eq!(*w, r / total, epsilon = 1e-12);
    }
    assert_abs_diff_eq!(wa.iter().sum::<f64>(), 1.0, epsilon = 1e-12);

    // vertex weights of the middle cluster, spanning [1, 2] x [0, 1] x [0, 1]
    let wt = sample_point_weights(1, ps, &grid, &cfg).unwrap();
    let mut expect = [0.0; 8];
    for (t, e) in expect.iter_mut().enumerate() {
        let v = [1.0 + (t & 1) as f64, ((t >> 1) & 1) as f64, ((t >> 2) & 1) as f64];
        let dist = ((v[0] - ps[0]).powi(2) + (v[1] - ps[1]).powi(2) + (v[2] - ps[2]).powi(2)).sqrt();
        *e = dist.powf(-0.25);
    }
    let s: f64 = expect.iter().sum();
    for (w, e) in wt.iter().zip(&expect) {
        assert_abs_diff_eq!(*w, e / s, epsilon = 1e-12);
    }

    // final position: sum_a w_a sum_t w_at v_at
    let wts: Vec<[f64; 8]> = (0..3)
        .map(|c| sample_point_weights(c, ps, &grid, &cfg).unwrap())
        .collect();
    let r = finalize(&selected, &wa, &wts, ps, &grid, room.centroid()).unwrap();
    let mut want = [0.0; 3];
    for (a, s) in selected.iter().enumerate() {
        let verts = grid.vertexes_of(s.cluster).unwrap();
        for t in 0..8 {
            for axis in 0..3 {
                want[axis] += wa[a] * wts[a][t] * verts[t][axis];
            }
        }
    }
    for axis in 0..3 {
        assert_abs_diff_eq!(r.position[axis], want[axis], epsilon = 1e-12);
    }
}

#[test]
fn inverse_distance_two_point_example() {
    // distances 1 and 4 at exponent 0.25: 1 : 4^-0.25 = 1 : 0.7071
    let w = inverse_distance_weights(&[1.0, 4.0], 0.25, 1e-6);
    assert_abs_diff_eq!(w[0], 1.0 / (1.0 + 0.5f64.sqrt()), epsilon = 1e-12);
    assert_abs_diff_eq!(w[1], 0.5f64.sqrt() / (1.0 + 0.5f64.sqrt()), epsilon = 1e-12);
}

#[test]
fn uniform_selection_at_reference_scale() {
    let probs = ClusterProbs {
        probs: vec![1.0 / 4096.0; 4096],
        softmax: true,
    };
    let uncapped = WldmConfig {
        thr: Some(0.004),
        zeta_max: usize::MAX,
        ..Default::default()
    };
    assert_eq!(select_clusters(&probs, &uncapped).len(), 16);
    assert_eq!(select_clusters(&probs, &WldmConfig::default()).len(), 15);
}
