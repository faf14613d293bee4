use firefit_core::detection::{
    data_log_likelihood, detect_prob, ignition_field, kernel_weights, pixel_fire_prob, sample_detections,
    DetectionConfig, DetectionFlag, DetectionRecord, IgnitionCandidate,
};
use firefit_core::grid::{Grid, ScalarField};
use firefit_core::spread::RosModel;
use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Untruncated kernel average of the detection probability over every node.
fn full_grid_prob(t: &ScalarField, rec: &DetectionRecord, cfg: &DetectionConfig) -> (f64, f64) {
    let g = t.grid();
    let (mut num, mut den, mut tail) = (0.0, 0.0, 0.0);
    for k in 0..g.len() {
        let (x, y) = g.coords(k);
        let d2 = (x - rec.x).powi(2) + (y - rec.y).powi(2);
        let w = (-d2 / (cfg.sigma * cfg.sigma)).exp();
        let arrival = t.values()[k];
        let proxy = if rec.t < arrival { 0.0 } else { (-(rec.t - arrival) / cfg.tau).exp() };
        num += w * detect_prob(proxy, cfg);
        den += w;
        if d2 > (3.0 * cfg.sigma).powi(2) {
            tail += w;
        }
    }
    (num / den, tail / den)
}

fn record(x: f64, y: f64, t: f64, flag: DetectionFlag) -> DetectionRecord {
    DetectionRecord { x, y, t, flag, half_width: 375.0 }
}

#[test]
fn half_plane_probability_matches_full_grid_sum() {
    let cfg = DetectionConfig::default();
    let g = Grid::new(41, 41, 100.0, 100.0, 0.0, 0.0).unwrap();
    let t = ScalarField::from_fn(g, |x, _| if x < 1950.0 { 0.0 } else { 1e9 });
    let rec = record(1950.0, 2000.0, 0.0, DetectionFlag::Fire);
    let p = pixel_fire_prob(&t, &rec, &cfg).unwrap();
    let (full, tail) = full_grid_prob(&t, &rec, &cfg);
    let mean = 0.5 * (detect_prob(1.0, &cfg) + detect_prob(0.0, &cfg));
    assert!((p - mean).abs() < 1e-12, "{p} vs {mean}");
    assert!((p - full).abs() <= (cfg.p_max - cfg.p_false) * tail, "{p} vs {full}");
    assert!((full - mean).abs() < 1e-4);
}

#[test]
fn truncation_error_is_bounded_by_the_tail_mass() {
    let cfg = DetectionConfig::default();
    let g = Grid::new(61, 61, 100.0, 100.0, 0.0, 0.0).unwrap();
    let ros = RosModel::uniform(g, 0.5).unwrap();
    let t = ignition_field(&ros, &IgnitionCandidate { x: 2950.0, y: 3020.0, t: 0.0 }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let rec = record(
            rng.random_range(1500.0..4500.0),
            rng.random_range(1500.0..4500.0),
            rng.random_range(0.0..7200.0),
            DetectionFlag::Fire,
        );
        let kernel = kernel_weights(&g, rec.x, rec.y, cfg.sigma).unwrap();
        assert!((kernel.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-12);
        let p = pixel_fire_prob(&t, &rec, &cfg).unwrap();
        let (full, tail) = full_grid_prob(&t, &rec, &cfg);
        // continuous tail of exp(-r^2/s^2) beyond 3s is e^-9
        assert!(tail < 1.5 * (-9.0f64).exp(), "tail {tail}");
        assert!((p - full).abs() <= (cfg.p_max - cfg.p_false) * tail + 1e-15, "{p} vs {full}");
    }
}

#[test]
fn true_field_usually_beats_a_shifted_one() {
    // cells match the 375 m sensor resolution, so two cells is 1.5 sigma
    let cfg = DetectionConfig::default();
    let g = Grid::new(41, 41, 375.0, 375.0, 0.0, 0.0).unwrap();
    let ros = RosModel::uniform(g, 0.5).unwrap();
    let truth = ignition_field(&ros, &IgnitionCandidate { x: 7500.0, y: 7500.0, t: 0.0 }).unwrap();
    let shifted = ignition_field(&ros, &IgnitionCandidate { x: 8250.0, y: 7500.0, t: 0.0 }).unwrap();
    let mut wins = 0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let obs: Vec<(f64, f64, f64)> = (0..200)
            .map(|_| (rng.random_range(2500.0..12500.0), rng.random_range(2500.0..12500.0), rng.random_range(0.0..15000.0)))
            .collect();
        let recs = sample_detections(&truth, &obs, 375.0, &cfg, &mut rng).unwrap();
        let a = data_log_likelihood(&truth, &recs, &cfg).unwrap();
        let b = data_log_likelihood(&shifted, &recs, &cfg).unwrap();
        wins += usize::from(a > b);
    }
    assert!(wins >= 90, "{wins} of 100");
}

#[test]
fn flipping_a_record_to_fire_helps_iff_fire_is_likely() {
    let cfg = DetectionConfig::default();
    let g = Grid::new(41, 41, 100.0, 100.0, 0.0, 0.0).unwrap();
    let ros = RosModel::uniform(g, 0.5).unwrap();
    let t = ignition_field(&ros, &IgnitionCandidate { x: 2000.0, y: 2000.0, t: 0.0 }).unwrap();
    let base = vec![
        record(2000.0, 2000.0, 600.0, DetectionFlag::NoFire),
        record(2600.0, 2000.0, 1500.0, DetectionFlag::NoFire),
        record(3400.0, 2000.0, 1000.0, DetectionFlag::NoFire),
        record(1000.0, 1000.0, 9000.0, DetectionFlag::NoFire),
    ];
    let ll0 = data_log_likelihood(&t, &base, &cfg).unwrap();
    let (mut up, mut down) = (0, 0);
    for i in 0..base.len() {
        let p = pixel_fire_prob(&t, &base[i], &cfg).unwrap();
        let mut flipped = base.clone();
        flipped[i].flag = DetectionFlag::Fire;
        let ll = data_log_likelihood(&t, &flipped, &cfg).unwrap();
        assert_eq!(ll > ll0, p > 0.5, "record {i}: p = {p}");
        if p > 0.5 { up += 1 } else { down += 1 }
    }
    assert!(up > 0 && down > 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn translating_field_and_record_together_keeps_the_probability(
        sx in -700.0f64..700.0,
        sy in -700.0f64..700.0,
        rx in 2000.0f64..4000.0,
        ry in 2000.0f64..4000.0,
        t_obs in 0.0f64..8000.0,
    ) {
        let cfg = DetectionConfig::default();
        let a = Grid::new(61, 61, 100.0, 100.0, 0.0, 0.0).unwrap();
        let b = Grid::new(61, 61, 100.0, 100.0, sx, sy).unwrap();
        let f = |x: f64, y: f64| (x - 3000.0).hypot(y - 2900.0) / 0.5;
        let ta = ScalarField::from_fn(a, f);
        let tb = ScalarField::new(b, ta.values().to_vec()).unwrap();
        let pa = pixel_fire_prob(&ta, &record(rx, ry, t_obs, DetectionFlag::Fire), &cfg).unwrap();
        let pb = pixel_fire_prob(&tb, &record(rx + sx, ry + sy, t_obs, DetectionFlag::Fire), &cfg).unwrap();
        prop_assert!((pa - pb).abs() < 1e-9, "{} vs {}", pa, pb);
    }
}
