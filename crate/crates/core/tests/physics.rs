mod common;

use gcaloc::audio::synth_speechband;
use gcaloc::features::{gcc_feature, FeatureSpec};
use gcaloc::geometry::{distance, MicArray, RoomSpec};
use gcaloc::room::{capture_source, compute_rir, simulate_capture, AcousticEnv, Interpolation, Rir};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn schroeder_decay_matches_target() {
    let room = RoomSpec::meeting_room();
    for t60 in [0.1, 0.2, 0.4, 0.6] {
        let env = AcousticEnv::new(t60, f64::INFINITY);
        let rir = compute_rir(&room, &env, [1.3, 2.9, 1.7], [2.2, 2.0, 2.0]).unwrap();
        let est = common::schroeder_t60(&rir.taps, room.sample_rate);
        let rel = (est - t60).abs() / t60;
        assert!(rel <= 0.2, "T60 {t60}: estimated {est:.3} ({:.1}% off)", 100.0 * rel);
    }
}

#[test]
fn anechoic_gcc_peaks_at_geometric_delay() {
    let room = RoomSpec::meeting_room();
    let array = MicArray::six_mic_cross(&room).unwrap();
    let signal = synth_speechband(0.5, room.sample_rate, 3).unwrap();
    let spec = FeatureSpec::default();
    let half = (spec.lags_per_pair / 2) as i64;
    let env = AcousticEnv::default();
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut checked = 0;
    while checked < 50 {
        let p = [
            rng.random_range(0.2..3.8),
            rng.random_range(0.2..3.8),
            rng.random_range(0.2..3.8),
        ];
        if array.positions().iter().any(|m| distance(*m, p) < 0.3) {
            continue;
        }
        let capture = capture_source(&room, &array, &env, p, &signal).unwrap();
        let g = gcc_feature(&capture, &spec).unwrap();
        for (k, (a, b)) in gcaloc::features::pair_order(array.len()).into_iter().enumerate() {
            let ma = array.positions()[a];
            let mb = array.positions()[b];
            let delay = (distance(p, mb) - distance(p, ma)) * room.sample_rate as f64 / room.sound_speed;
            // the centered window spans -8..=7; skip delays at its edge
            if delay.abs() > (half - 2) as f64 {
                continue;
            }
            let block = g.block(k);
            let peak = block
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
                .unwrap()
                .0 as i64
                - half;
            assert!(
                (peak as f64 - delay.round()).abs() <= 1.0,
                "source {p:?} pair ({a},{b}): peak {peak}, delay {delay:.2}"
            );
        }
        checked += 1;
    }
}

#[test]
fn capture_snr_hits_target() {
    let room = RoomSpec::meeting_room();
    let signal = synth_speechband(1.0, room.sample_rate, 8).unwrap();
    let rir = Rir {
        taps: vec![0.0, 0.0, 0.7, 0.1],
        sample_rate: room.sample_rate,
    };
    let clean = simulate_capture(&signal, std::slice::from_ref(&rir), &AcousticEnv::default()).unwrap();
    for snr in [-10.0, -5.0, 0.0, 10.0] {
        let env = AcousticEnv::new(0.0, snr).with_seed(4);
        let noisy = simulate_capture(&signal, std::slice::from_ref(&rir), &env).unwrap();
        let got = common::measured_snr_db(&clean.channels[0], &noisy.channels[0]);
        assert!((got - snr).abs() <= 0.1, "target {snr}, measured {got}");
    }
}

#[test]
fn sinc_and_nearest_agree_on_energy() {
    let room = RoomSpec::meeting_room();
    let base = AcousticEnv::new(0.2, f64::INFINITY);
    let sinc = AcousticEnv {
        interpolation: Interpolation::Sinc,
        ..base
    };
    let a = compute_rir(&room, &base, [1.0, 1.0, 1.0], [2.2, 2.0, 2.0]).unwrap();
    let b = compute_rir(&room, &sinc, [1.0, 1.0, 1.0], [2.2, 2.0, 2.0]).unwrap();
    let ea: f64 = a.taps.iter().map(|v| v * v).sum();
    let eb: f64 = b.taps.iter().map(|v| v * v).sum();
    assert!((ea - eb).abs() / ea < 0.1, "{ea} vs {eb}");
    let ta = common::schroeder_t60(&a.taps, room.sample_rate);
    let tb = common::schroeder_t60(&b.taps, room.sample_rate);
    assert!((ta - tb).abs() / ta < 0.1);
}
