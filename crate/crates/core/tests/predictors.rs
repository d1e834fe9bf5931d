use crowdnav_core::math::Vec2;
use crowdnav_core::predict::{
    builtin, predict_cvm, predict_linear, predict_multimodal, ObservedTracks, PredictionSet, PredictorConfig,
    SamplerConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DT: f64 = 0.25;

fn tracks_strategy(k: usize) -> impl Strategy<Value = Vec<Vec<Vec2>>> {
    prop::collection::vec(
        prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64).prop_map(|(x, y)| Vec2::new(x, y)), k),
        1..5,
    )
}

fn close(a: &PredictionSet, b: &PredictionSet, shift: Vec2, tol: f64) -> bool {
    (0..a.num_pedestrians()).all(|i| {
        (0..a.num_samples()).all(|s| {
            (0..a.horizon()).all(|h| (a.position(i, s, h) + shift).distance(b.position(i, s, h)) <= tol)
        })
    })
}

proptest! {
    #[test]
    fn predictors_are_translation_equivariant(raw in tracks_strategy(8), ux in -20.0..20.0f64, uy in -20.0..20.0f64, seed in 0u64..1000) {
        let u = Vec2::new(ux, uy);
        let t = ObservedTracks::new(DT, raw).unwrap();
        let moved = t.translated(u);
        prop_assert!(close(&predict_cvm(&t, 8), &predict_cvm(&moved, 8), u, 1e-9));
        prop_assert!(close(&predict_linear(&t, 8), &predict_linear(&moved, 8), u, 1e-9));
        let cfg = SamplerConfig { repulsion_strength: 0.5, ..SamplerConfig::default() };
        let a = predict_multimodal(&t, 8, 5, seed, &cfg).unwrap();
        let b = predict_multimodal(&moved, 8, 5, seed, &cfg).unwrap();
        prop_assert!(close(&a, &b, u, 1e-9));
    }

    #[test]
    fn linear_equals_cvm_on_uniform_tracks(starts in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, -1.5..1.5f64, -1.5..1.5f64), 1..5)) {
        let raw: Vec<Vec<Vec2>> = starts
            .iter()
            .map(|&(x, y, vx, vy)| (0..8).map(|j| Vec2::new(x, y) + Vec2::new(vx, vy) * (j as f64 * DT)).collect())
            .collect();
        let t = ObservedTracks::new(DT, raw).unwrap();
        prop_assert!(close(&predict_cvm(&t, 8), &predict_linear(&t, 8), Vec2::ZERO, 1e-9));
    }

    #[test]
    fn multimodal_is_reproducible(raw in tracks_strategy(2), seed in any::<u64>()) {
        let t = ObservedTracks::new(DT, raw).unwrap();
        let cfg = SamplerConfig { repulsion_strength: 1.0, ..SamplerConfig::default() };
        let a = predict_multimodal(&t, 8, 7, seed, &cfg).unwrap();
        let b = predict_multimodal(&t, 8, 7, seed, &cfg).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn cvm_extrapolates_last_displacement() {
    let t = ObservedTracks::new(DT, vec![vec![Vec2::new(0.0, 0.0), Vec2::new(0.25, 0.0)]]).unwrap();
    let p = predict_cvm(&t, 3);
    assert_eq!(p.trajectory(0, 0), &[Vec2::new(0.5, 0.0), Vec2::new(0.75, 0.0), Vec2::new(1.0, 0.0)]);
}

#[test]
fn cvm_on_curved_track_matches_two_point_formula() {
    // Points on a circle of radius 2 traversed at 1 m/s.
    let arc = |t: f64| Vec2::new(2.0 * (t / 2.0).cos(), 2.0 * (t / 2.0).sin());
    let track: Vec<Vec2> = (0..8).map(|j| arc(j as f64 * DT)).collect();
    let t = ObservedTracks::new(DT, vec![track.clone()]).unwrap();
    let p = predict_cvm(&t, 8);
    let v = (track[7] - track[6]) / DT;
    let mut last_err = 0.0;
    for h in 0..8 {
        let expected = track[7] + v * ((h + 1) as f64 * DT);
        assert!(p.position(0, 0, h).distance(expected) <= 1e-12);
        let err = p.position(0, 0, h).distance(arc((8 + h) as f64 * DT - DT));
        assert!(err > last_err);
        last_err = err;
    }
}

#[test]
fn stationary_tracks_stay_put() {
    let still = vec![Vec2::new(1.0, -2.0); 8];
    let t = ObservedTracks::new(DT, vec![still]).unwrap();
    for p in [predict_cvm(&t, 8), predict_linear(&t, 8)] {
        assert!(p.trajectory(0, 0).iter().all(|q| *q == Vec2::new(1.0, -2.0)));
    }
}

#[test]
fn linear_fit_solves_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let (x0, vx) = (rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0));
        let xs: Vec<f64> = (0..8).map(|j| x0 + vx * j as f64 * DT + rng.random_range(-0.05..0.05)).collect();
        // Solve [n, St; St, Stt] [a; b] = [Sx; Stx] directly.
        let ts: Vec<f64> = (0..8).map(|j| j as f64 * DT).collect();
        let n = 8.0;
        let st: f64 = ts.iter().sum();
        let stt: f64 = ts.iter().map(|t| t * t).sum();
        let sx: f64 = xs.iter().sum();
        let stx: f64 = ts.iter().zip(&xs).map(|(t, x)| t * x).sum();
        let det = n * stt - st * st;
        let a = (stt * sx - st * stx) / det;
        let b = (n * stx - st * sx) / det;

        let track: Vec<Vec2> = xs.iter().map(|&x| Vec2::new(x, 0.0)).collect();
        let p = predict_linear(&ObservedTracks::new(DT, vec![track]).unwrap(), 8);
        for h in 0..8 {
            let t = (8 + h) as f64 * DT;
            assert!((p.position(0, 0, h).x - (a + b * t)).abs() <= 1e-9);
        }
    }
}

#[test]
fn one_sample_is_cvm() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let raw: Vec<Vec<Vec2>> = (0..4)
        .map(|_| (0..2).map(|_| Vec2::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0))).collect())
        .collect();
    let t = ObservedTracks::new(DT, raw).unwrap();
    let cfg = SamplerConfig { repulsion_strength: 1.0, ..SamplerConfig::default() };
    assert_eq!(predict_multimodal(&t, 8, 1, 9, &cfg).unwrap(), predict_cvm(&t, 8));
    let mut boxed = builtin(&PredictorConfig::multimodal(1)).unwrap();
    assert_eq!(boxed.predict(&t, 8, 9).unwrap(), predict_cvm(&t, 8));
}

#[test]
fn zero_noise_collapses_samples() {
    let t = ObservedTracks::new(DT, vec![vec![Vec2::new(0.0, 0.0), Vec2::new(0.2, 0.1)], vec![Vec2::new(3.0, 0.0), Vec2::new(2.8, 0.0)]]).unwrap();
    let cfg = SamplerConfig { heading_std: 0.0, speed_std: 0.0, ..SamplerConfig::default() };
    let p = predict_multimodal(&t, 8, 12, 4, &cfg).unwrap();
    for i in 0..2 {
        for s in 1..12 {
            assert_eq!(p.trajectory(i, s), p.trajectory(i, 0));
        }
    }
}

#[test]
fn heading_spread_matches_configuration() {
    let sigma = 0.3;
    let cfg = SamplerConfig { heading_std: sigma, speed_std: 0.0, ..SamplerConfig::default() };
    let t = ObservedTracks::new(DT, vec![vec![Vec2::new(0.0, 0.0), Vec2::new(0.25, 0.0)]]).unwrap();
    let mut angles = Vec::new();
    let mut seed = 0;
    while angles.len() < 10_000 {
        let p = predict_multimodal(&t, 1, 20, seed, &cfg).unwrap();
        for s in 1..20 {
            let d = p.position(0, s, 0) - Vec2::new(0.25, 0.0);
            angles.push(d.y.atan2(d.x));
        }
        seed += 1;
    }
    let mean = angles.iter().sum::<f64>() / angles.len() as f64;
    let var = angles.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (angles.len() - 1) as f64;
    let std = var.sqrt();
    assert!((std - sigma).abs() <= 0.15 * sigma, "std {std}");
}

#[test]
fn short_tracks_are_rejected() {
    assert!(ObservedTracks::new(DT, vec![vec![Vec2::ZERO]]).is_err());
}
