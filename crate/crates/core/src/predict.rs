//! Pedestrian trajectory predictors.
//!
//! A predictor maps the recent observed tracks of every pedestrian to `m`
//! candidate futures of `H` positions each. The constant-velocity and
//! least-squares predictors return a single future; the multimodal sampler
//! perturbs the constant-velocity future to produce `m` of them. Out of
//! process predictors implement [`Predictor`] elsewhere.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::math::Vec2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PredictError {
    #[error("tracks must have at least two observations, got {0}")]
    TooShort(usize),
    #[error("all tracks must have the same length")]
    Ragged,
    #[error("observation period must be positive")]
    BadPeriod,
    #[error("sample count must be at least one")]
    NoSamples,
    #[error("predictor timed out")]
    Timeout,
    #[error("malformed predictor response: {0}")]
    Malformed(String),
    #[error("prediction shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    #[error("predictor transport failed: {0}")]
    Transport(String),
}

/// Recent positions of every pedestrian sampled every `dt` seconds,
/// oldest first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedTracks {
    dt: f64,
    tracks: Vec<Vec<Vec2>>,
}

impl ObservedTracks {
    /// Validates that every track has the same length `k >= 2`.
    ///
    /// Zero pedestrians is allowed.
    pub fn new(dt: f64, tracks: Vec<Vec<Vec2>>) -> Result<Self, PredictError> {
        if !(dt > 0.0) {
            return Err(PredictError::BadPeriod);
        }
        if let Some(first) = tracks.first() {
            let k = first.len();
            if tracks.iter().any(|t| t.len() != k) {
                return Err(PredictError::Ragged);
            }
            if k < 2 {
                return Err(PredictError::TooShort(k));
            }
        }
        Ok(ObservedTracks { dt, tracks })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn num_pedestrians(&self) -> usize {
        self.tracks.len()
    }

    /// Observations per track; 0 when there are no pedestrians.
    pub fn observation_len(&self) -> usize {
        self.tracks.first().map_or(0, Vec::len)
    }

    pub fn track(&self, i: usize) -> &[Vec2] {
        &self.tracks[i]
    }

    pub fn tracks(&self) -> &[Vec<Vec2>] {
        &self.tracks
    }

    pub fn last_position(&self, i: usize) -> Vec2 {
        *self.tracks[i].last().expect("nonempty track")
    }

    /// Every observed position shifted by `u`.
    pub fn translated(&self, u: Vec2) -> Self {
        ObservedTracks {
            dt: self.dt,
            tracks: self.tracks.iter().map(|t| t.iter().map(|p| *p + u).collect()).collect(),
        }
    }

    /// The last `k` observations of every track.
    pub fn suffix(&self, k: usize) -> Self {
        ObservedTracks {
            dt: self.dt,
            tracks: self.tracks.iter().map(|t| t[t.len().saturating_sub(k)..].to_vec()).collect(),
        }
    }
}

/// `m` candidate futures of `horizon` positions per pedestrian.
///
/// Stored pedestrian-major, then sample, then time step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    dt: f64,
    pedestrians: usize,
    samples: usize,
    horizon: usize,
    points: Vec<Vec2>,
    weights: Vec<f64>,
}

impl PredictionSet {
    /// `trajectories[i][s]` is sample `s` of pedestrian `i`; weights are uniform.
    pub fn from_nested(
        dt: f64,
        samples: usize,
        horizon: usize,
        trajectories: &[Vec<Vec<Vec2>>],
    ) -> Result<Self, PredictError> {
        if samples == 0 {
            return Err(PredictError::NoSamples);
        }
        let mut points = Vec::with_capacity(trajectories.len() * samples * horizon);
        for (i, per_ped) in trajectories.iter().enumerate() {
            if per_ped.len() != samples {
                return Err(PredictError::Shape {
                    expected: alloc::format!("{samples} samples"),
                    got: alloc::format!("{} samples for pedestrian {i}", per_ped.len()),
                });
            }
            for (s, traj) in per_ped.iter().enumerate() {
                if traj.len() != horizon {
                    return Err(PredictError::Shape {
                        expected: alloc::format!("{horizon} points"),
                        got: alloc::format!("{} points for pedestrian {i} sample {s}", traj.len()),
                    });
                }
                if traj.iter().any(|p| !p.is_finite()) {
                    return Err(PredictError::Malformed(alloc::format!(
                        "non-finite point for pedestrian {i} sample {s}"
                    )));
                }
                points.extend_from_slice(traj);
            }
        }
        Ok(PredictionSet {
            dt,
            pedestrians: trajectories.len(),
            samples,
            horizon,
            points,
            weights: alloc::vec![1.0 / samples as f64; samples],
        })
    }

    /// Replaces the sample weights; they are normalised to sum to one.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self, PredictError> {
        let total: f64 = weights.iter().sum();
        if weights.len() != self.samples || !(total > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(PredictError::Malformed("invalid sample weights".into()));
        }
        self.weights = weights.into_iter().map(|w| w / total).collect();
        Ok(self)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn num_pedestrians(&self) -> usize {
        self.pedestrians
    }

    pub fn num_samples(&self) -> usize {
        self.samples
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn trajectory(&self, ped: usize, sample: usize) -> &[Vec2] {
        let start = (ped * self.samples + sample) * self.horizon;
        &self.points[start..start + self.horizon]
    }

    #[inline]
    pub fn position(&self, ped: usize, sample: usize, step: usize) -> Vec2 {
        self.points[(ped * self.samples + sample) * self.horizon + step]
    }

    /// Nested `[pedestrian][sample][step]` copy.
    pub fn to_nested(&self) -> Vec<Vec<Vec<Vec2>>> {
        (0..self.pedestrians)
            .map(|i| (0..self.samples).map(|s| self.trajectory(i, s).to_vec()).collect())
            .collect()
    }
}

/// Something that turns observed tracks into a [`PredictionSet`].
pub trait Predictor {
    /// `seed` makes stochastic predictors reproducible per call.
    fn predict(&mut self, tracks: &ObservedTracks, horizon: usize, seed: u64) -> Result<PredictionSet, PredictError>;
}

fn cvm_velocity(track: &[Vec2], dt: f64) -> Vec2 {
    let n = track.len();
    (track[n - 1] - track[n - 2]) / dt
}

fn extrapolate(from: Vec2, velocity: Vec2, dt: f64, horizon: usize) -> Vec<Vec2> {
    (1..=horizon).map(|h| from + velocity * (h as f64 * dt)).collect()
}

/// Constant-velocity model: the last displacement repeats.
pub fn predict_cvm(tracks: &ObservedTracks, horizon: usize) -> PredictionSet {
    let dt = tracks.dt;
    let trajectories: Vec<Vec<Vec<Vec2>>> = tracks
        .tracks
        .iter()
        .map(|t| alloc::vec![extrapolate(*t.last().unwrap(), cvm_velocity(t, dt), dt, horizon)])
        .collect();
    PredictionSet::from_nested(dt, 1, horizon, &trajectories).expect("well-formed by construction")
}

/// Least-squares line through `values` at times `0, dt, 2dt, ...`;
/// returns `(value at the mean time, slope, mean time)`.
pub fn fit_line(values: &[f64], dt: f64) -> (f64, f64, f64) {
    let k = values.len() as f64;
    let t_mean = dt * (k - 1.0) / 2.0;
    let v_mean = values.iter().sum::<f64>() / k;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (i, v) in values.iter().enumerate() {
        let dtm = i as f64 * dt - t_mean;
        sxx += dtm * dtm;
        sxy += dtm * (v - v_mean);
    }
    (v_mean, sxy / sxx, t_mean)
}

/// Per-coordinate least-squares line over every observation, extrapolated.
pub fn predict_linear(tracks: &ObservedTracks, horizon: usize) -> PredictionSet {
    let dt = tracks.dt;
    let trajectories: Vec<Vec<Vec<Vec2>>> = tracks
        .tracks
        .iter()
        .map(|t| {
            let xs: Vec<f64> = t.iter().map(|p| p.x).collect();
            let ys: Vec<f64> = t.iter().map(|p| p.y).collect();
            let (mx, sx, tm) = fit_line(&xs, dt);
            let (my, sy, _) = fit_line(&ys, dt);
            let t_last = (t.len() - 1) as f64 * dt;
            let traj = (1..=horizon)
                .map(|h| {
                    let tau = t_last + h as f64 * dt - tm;
                    Vec2::new(mx + sx * tau, my + sy * tau)
                })
                .collect();
            alloc::vec![traj]
        })
        .collect();
    PredictionSet::from_nested(dt, 1, horizon, &trajectories).expect("well-formed by construction")
}

/// Noise model of the multimodal sampler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Heading perturbation standard deviation, rad.
    pub heading_std: f64,
    /// Speed perturbation standard deviation, m/s.
    pub speed_std: f64,
    /// Strength in `[0, 1]` of the pairwise push-apart; 0 disables it.
    pub repulsion_strength: f64,
    /// Center distance below which two sampled pedestrians are pushed apart.
    pub repulsion_distance: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { heading_std: 0.25, speed_std: 0.15, repulsion_strength: 0.0, repulsion_distance: 0.6 }
    }
}

/// Stochastic multimodal predictor.
///
/// Sample 0 is always the constant-velocity future. Every other sample
/// rotates and rescales the constant-velocity velocity by Gaussian noise
/// and, if enabled, pushes apart pedestrians whose sampled positions come
/// closer than `repulsion_distance`.
pub fn predict_multimodal(
    tracks: &ObservedTracks,
    horizon: usize,
    samples: usize,
    seed: u64,
    cfg: &SamplerConfig,
) -> Result<PredictionSet, PredictError> {
    if samples == 0 {
        return Err(PredictError::NoSamples);
    }
    let dt = tracks.dt;
    let n = tracks.num_pedestrians();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heading_noise = Normal::new(0.0, cfg.heading_std.max(0.0)).expect("finite std");
    let speed_noise = Normal::new(0.0, cfg.speed_std.max(0.0)).expect("finite std");

    let origins: Vec<Vec2> = (0..n).map(|i| tracks.last_position(i)).collect();
    let base: Vec<Vec2> = tracks.tracks.iter().map(|t| cvm_velocity(t, dt)).collect();

    // [sample][ped][step]
    let mut all: Vec<Vec<Vec<Vec2>>> = Vec::with_capacity(samples);
    all.push((0..n).map(|i| extrapolate(origins[i], base[i], dt, horizon)).collect());
    for _ in 1..samples {
        let velocities: Vec<Vec2> = base
            .iter()
            .map(|v| {
                let speed = v.norm();
                let d_heading = heading_noise.sample(&mut rng);
                let d_speed = speed_noise.sample(&mut rng);
                let heading = if speed > 1e-9 {
                    v.angle()
                } else {
                    rng.random::<f64>() * 2.0 * PI
                };
                if d_heading == 0.0 && d_speed == 0.0 {
                    return *v;
                }
                Vec2::from_polar((speed + d_speed).max(0.0), heading + d_heading)
            })
            .collect();
        // Positions are origin + v t plus an accumulated repulsion offset, so
        // zero noise reproduces the anchor exactly.
        let mut offsets = alloc::vec![Vec2::ZERO; n];
        let mut positions = origins.clone();
        let mut sample: Vec<Vec<Vec2>> = (0..n).map(|_| Vec::with_capacity(horizon)).collect();
        for h in 1..=horizon {
            let t = h as f64 * dt;
            for i in 0..n {
                positions[i] = origins[i] + velocities[i] * t + offsets[i];
            }
            if cfg.repulsion_strength > 0.0 {
                repel(&mut positions, cfg.repulsion_distance, cfg.repulsion_strength);
                for i in 0..n {
                    offsets[i] = positions[i] - (origins[i] + velocities[i] * t);
                }
            }
            for (traj, p) in sample.iter_mut().zip(&positions) {
                traj.push(*p);
            }
        }
        all.push(sample);
    }

    let nested: Vec<Vec<Vec<Vec2>>> = (0..n)
        .map(|i| all.iter().map(|s| s[i].clone()).collect())
        .collect();
    PredictionSet::from_nested(dt, samples, horizon, &nested)
}

fn repel(positions: &mut [Vec2], min_dist: f64, strength: f64) {
    let n = positions.len();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = positions[j] - positions[i];
            let dist = d.norm();
            if dist < min_dist && dist > 0.0 {
                let push = d / dist * ((min_dist - dist) * 0.5 * strength.min(1.0));
                positions[i] -= push;
                positions[j] += push;
            }
        }
    }
}

/// Which built-in predictor to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Cvm,
    Linear,
    Multimodal,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub kind: PredictorKind,
    /// Observed positions per track (`k`).
    pub observation_len: usize,
    /// Predicted positions per trajectory (`H`).
    pub horizon: usize,
    /// Trajectories per pedestrian (`m`); only the sampler and external
    /// predictors use it.
    pub num_samples: usize,
    pub sampler: SamplerConfig,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            kind: PredictorKind::Multimodal,
            observation_len: 8,
            horizon: 8,
            num_samples: 20,
            sampler: SamplerConfig::default(),
        }
    }
}

impl PredictorConfig {
    pub fn cvm() -> Self {
        PredictorConfig { kind: PredictorKind::Cvm, num_samples: 1, ..Default::default() }
    }

    pub fn linear() -> Self {
        PredictorConfig { kind: PredictorKind::Linear, num_samples: 1, ..Default::default() }
    }

    pub fn multimodal(samples: usize) -> Self {
        PredictorConfig { kind: PredictorKind::Multimodal, num_samples: samples, ..Default::default() }
    }
}

/// Constant-velocity predictor; uses only the last two observations.
#[derive(Clone, Copy, Debug, Default)]
pub struct Cvm;

impl Predictor for Cvm {
    fn predict(&mut self, tracks: &ObservedTracks, horizon: usize, _seed: u64) -> Result<PredictionSet, PredictError> {
        Ok(predict_cvm(tracks, horizon))
    }
}

/// Least-squares predictor over the last `observation_len` points.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub observation_len: usize,
}

impl Predictor for Linear {
    fn predict(&mut self, tracks: &ObservedTracks, horizon: usize, _seed: u64) -> Result<PredictionSet, PredictError> {
        Ok(predict_linear(&tracks.suffix(self.observation_len), horizon))
    }
}

#[derive(Clone, Debug)]
pub struct Multimodal {
    pub samples: usize,
    pub sampler: SamplerConfig,
}

impl Predictor for Multimodal {
    fn predict(&mut self, tracks: &ObservedTracks, horizon: usize, seed: u64) -> Result<PredictionSet, PredictError> {
        predict_multimodal(tracks, horizon, self.samples, seed, &self.sampler)
    }
}

impl<P: Predictor + ?Sized> Predictor for &mut P {
    fn predict(&mut self, tracks: &ObservedTracks, horizon: usize, seed: u64) -> Result<PredictionSet, PredictError> {
        (**self).predict(tracks, horizon, seed)
    }
}

impl<P: Predictor + ?Sized> Predictor for alloc::boxed::Box<P> {
    fn predict(&mut self, tracks: &ObservedTracks, horizon: usize, seed: u64) -> Result<PredictionSet, PredictError> {
        (**self).predict(tracks, horizon, seed)
    }
}

/// Built-in predictor for `cfg`; `None` for [`PredictorKind::External`].
pub fn builtin(cfg: &PredictorConfig) -> Option<alloc::boxed::Box<dyn Predictor + Send>> {
    match cfg.kind {
        PredictorKind::Cvm => Some(alloc::boxed::Box::new(Cvm)),
        PredictorKind::Linear => Some(alloc::boxed::Box::new(Linear { observation_len: cfg.observation_len })),
        PredictorKind::Multimodal => Some(alloc::boxed::Box::new(Multimodal {
            samples: cfg.num_samples,
            sampler: cfg.sampler.clone(),
        })),
        PredictorKind::External => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn straight(k: usize) -> ObservedTracks {
        let t = (0..k).map(|i| Vec2::new(0.25 * i as f64, 0.0)).collect::<Vec<_>>();
        ObservedTracks::new(0.25, vec![t]).unwrap()
    }

    #[test]
    fn cvm_extrapolates_last_step() {
        let tr = ObservedTracks::new(0.25, vec![vec![Vec2::new(0.0, 0.0), Vec2::new(0.25, 0.0)]]).unwrap();
        let p = predict_cvm(&tr, 3);
        assert_eq!(p.trajectory(0, 0), &[Vec2::new(0.5, 0.0), Vec2::new(0.75, 0.0), Vec2::new(1.0, 0.0)]);
    }

    #[test]
    fn stationary_track_stays_put() {
        let tr = ObservedTracks::new(0.25, vec![vec![Vec2::new(1.0, 2.0); 8]]).unwrap();
        for p in [predict_cvm(&tr, 8), predict_linear(&tr, 8)] {
            assert!(p.trajectory(0, 0).iter().all(|q| *q == Vec2::new(1.0, 2.0)));
        }
    }

    #[test]
    fn linear_matches_cvm_on_uniform_motion() {
        let tr = straight(8);
        let a = predict_cvm(&tr, 8);
        let b = predict_linear(&tr, 8);
        for h in 0..8 {
            assert!(a.position(0, 0, h).distance(b.position(0, 0, h)) < 1e-12);
        }
    }

    #[test]
    fn malformed_tracks_rejected() {
        assert_eq!(ObservedTracks::new(0.25, vec![vec![Vec2::ZERO]]), Err(PredictError::TooShort(1)));
        assert_eq!(
            ObservedTracks::new(0.25, vec![vec![Vec2::ZERO; 2], vec![Vec2::ZERO; 3]]),
            Err(PredictError::Ragged)
        );
        assert_eq!(ObservedTracks::new(0.0, vec![]), Err(PredictError::BadPeriod));
    }

    #[test]
    fn single_sample_is_cvm() {
        let tr = straight(8);
        let m = predict_multimodal(&tr, 8, 1, 5, &SamplerConfig::default()).unwrap();
        assert_eq!(m.to_nested(), predict_cvm(&tr, 8).to_nested());
    }

    #[test]
    fn zero_noise_collapses_samples() {
        let tr = straight(8);
        let cfg = SamplerConfig { heading_std: 0.0, speed_std: 0.0, ..SamplerConfig::default() };
        let m = predict_multimodal(&tr, 8, 6, 5, &cfg).unwrap();
        for s in 1..6 {
            assert_eq!(m.trajectory(0, s), m.trajectory(0, 0));
        }
        assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn repulsion_separates_crossing_samples() {
        let a: Vec<Vec2> = vec![Vec2::new(-1.0, 0.0), Vec2::new(-0.75, 0.0)];
        let b: Vec<Vec2> = vec![Vec2::new(1.0, 0.1), Vec2::new(0.75, 0.1)];
        let tr = ObservedTracks::new(0.25, vec![a, b]).unwrap();
        let cfg = SamplerConfig { heading_std: 0.0, speed_std: 0.0, repulsion_strength: 1.0, repulsion_distance: 0.6 };
        let m = predict_multimodal(&tr, 8, 2, 1, &cfg).unwrap();
        for h in 0..8 {
            assert!(m.position(0, 1, h).distance(m.position(1, 1, h)) >= 0.6 - 1e-9);
        }
        // The anchor is left untouched.
        assert_eq!(m.trajectory(0, 0), predict_cvm(&tr, 8).trajectory(0, 0));
    }
}
