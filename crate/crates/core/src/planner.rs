//! Value-based action selection over sampled pedestrian futures, with a
//! kinematic filter and a local refinement grid around the first choice.

use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::math::{self, exp, pow, wrap_angle, Vec2};
use crate::predict::{ObservedTracks, PredictError, PredictionSet, Predictor};
use crate::state::{
    min_separation, propagate, to_ego, Action, JointState, KinematicLimits, PedestrianState, SweptDisc, VehicleState,
};
use crate::value::ValueFunction;

/// How the values of the prediction samples combine into one score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Worst case.
    Min,
    Mean,
    /// Mean under the prediction weights.
    WeightedMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    /// Discount per second at unit preferred speed.
    pub gamma: f64,
    /// Velocity-change allowance of the smoothness term, m/s.
    pub threshold: f64,
    /// Separation below which the discomfort penalty applies, m.
    pub discomfort_distance: f64,
    /// Speed step of the refinement grid, m/s.
    pub eps_speed: f64,
    /// Heading step of the refinement grid, degrees.
    pub eps_heading_deg: f64,
    /// Half-width of the refinement grid in steps.
    pub n: usize,
    pub aggregation: Aggregation,
    /// Kinematic filter and refinement on or off.
    pub kce: bool,
    /// Maximum acceleration, m/s².
    pub a_max: f64,
    /// Maximum heading change per step, degrees.
    pub max_turn_deg: f64,
    pub speed_samples: usize,
    pub heading_samples: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            gamma: 0.9,
            threshold: 0.1,
            discomfort_distance: 0.2,
            eps_speed: 0.1,
            eps_heading_deg: 6.0,
            n: 2,
            aggregation: Aggregation::Min,
            kce: true,
            a_max: 6.4,
            max_turn_deg: 120.0,
            speed_samples: 5,
            heading_samples: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("invalid planner configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error("predictions cover {have} steps, {need} needed")]
    ShortHorizon { have: usize, need: usize },
    #[error("predictions describe {got} pedestrians, the state has {expected}")]
    PedestrianCount { expected: usize, got: usize },
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(PlanError::InvalidConfig("gamma must lie in (0, 1)"));
        }
        if !(self.eps_speed > 0.0 && self.eps_heading_deg > 0.0) {
            return Err(PlanError::InvalidConfig("grid steps must be positive"));
        }
        if self.n == 0 {
            return Err(PlanError::InvalidConfig("n must be at least 1"));
        }
        if !(self.a_max > 0.0 && self.max_turn_deg > 0.0) {
            return Err(PlanError::InvalidConfig("kinematic limits must be positive"));
        }
        if self.speed_samples == 0 || self.heading_samples == 0 {
            return Err(PlanError::InvalidConfig("action grid must be nonempty"));
        }
        if !(self.threshold.is_finite() && self.discomfort_distance >= 0.0) {
            return Err(PlanError::InvalidConfig("reward parameters must be finite"));
        }
        Ok(())
    }

    pub fn eps_heading(&self) -> f64 {
        self.eps_heading_deg.to_radians()
    }

    pub fn limits(&self, dt: f64) -> KinematicLimits {
        KinematicLimits::from_acceleration(self.a_max, self.max_turn_deg.to_radians(), dt)
    }

    /// Discount for one step of `dt` seconds at preferred speed `v_pref`.
    pub fn discount(&self, dt: f64, v_pref: f64) -> f64 {
        pow(self.gamma, dt * v_pref)
    }
}

/// Smoothness term: `threshold - |v(a_t) - v(a_prev)|`.
pub fn f_delta(a_t: &Action, a_prev: &Action, threshold: f64) -> f64 {
    threshold - (a_t.velocity() - a_prev.velocity()).norm()
}

/// Step reward; the cases are checked in order collision, discomfort, goal.
pub fn reward(d_min: f64, reached_goal: bool, a_t: &Action, a_prev: &Action, cfg: &PlannerConfig) -> f64 {
    if d_min < 0.0 {
        -0.25 + f_delta(a_t, a_prev, cfg.threshold)
    } else if d_min < cfg.discomfort_distance {
        -0.1 - d_min / 2.0 + f_delta(a_t, a_prev, cfg.threshold)
    } else if reached_goal {
        1.0 + f_delta(a_t, a_prev, cfg.threshold)
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Initial,
    Expanded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionSpace {
    pub actions: Vec<Action>,
    pub provenance: Provenance,
}

const SAME_TOL: f64 = 1e-9;

fn same_action(a: &Action, b: &Action) -> bool {
    if a.speed <= SAME_TOL && b.speed <= SAME_TOL {
        return true;
    }
    math::abs(a.speed - b.speed) <= SAME_TOL && a.heading_change(b) <= SAME_TOL
}

impl ActionSpace {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn contains(&self, a: &Action) -> bool {
        self.actions.iter().any(|b| same_action(a, b))
    }

    /// Rotates every heading by `angle`.
    pub fn rotated(mut self, angle: f64) -> Self {
        for a in self.actions.iter_mut() {
            *a = Action::new(a.speed, a.heading + angle);
        }
        self
    }

    /// Zero-speed actions take `heading`, then duplicates are dropped
    /// keeping the first occurrence.
    pub fn canonical(self, heading: f64) -> Self {
        let mut out: Vec<Action> = Vec::with_capacity(self.actions.len());
        for a in self.actions {
            let a = if a.speed <= 0.0 { Action::stop(heading) } else { a };
            if !out.iter().any(|b| same_action(&a, b)) {
                out.push(a);
            }
        }
        ActionSpace { actions: out, provenance: self.provenance }
    }
}

/// Stop plus `speed_samples` exponentially spaced speeds up to `v_pref`
/// times `heading_samples` headings evenly spaced from 0.
pub fn build_initial_space(v_pref: f64, cfg: &PlannerConfig) -> ActionSpace {
    let s = cfg.speed_samples;
    let e = core::f64::consts::E;
    let mut speeds: Vec<f64> = (0..s).map(|i| (exp((i + 1) as f64 / s as f64) - 1.0) / (e - 1.0) * v_pref).collect();
    if let Some(last) = speeds.last_mut() {
        *last = v_pref;
    }
    let h = cfg.heading_samples;
    let mut actions = Vec::with_capacity(s * h + 1);
    actions.push(Action::stop(0.0));
    for j in 0..h {
        let heading = 2.0 * PI * j as f64 / h as f64;
        for &speed in &speeds {
            actions.push(Action::new(speed, heading));
        }
    }
    ActionSpace { actions, provenance: Provenance::Initial }
}

/// Keeps the actions reachable from `prev` within `limits`.
pub fn kinematic_filter(space: &ActionSpace, prev: &Action, limits: &KinematicLimits) -> ActionSpace {
    ActionSpace {
        actions: space.actions.iter().copied().filter(|a| limits.admits(prev, a)).collect(),
        provenance: space.provenance,
    }
}

/// Grid of `(speed ± i·eps_speed, heading ± j·eps_heading)` for
/// `i, j ≤ n` around `center`, speeds clipped to `[0, v_pref]`, filtered
/// against `prev` when `limits` is given, deduplicated. The center always
/// comes first.
pub fn expand_space(
    center: &Action,
    eps_speed: f64,
    eps_heading: f64,
    n: usize,
    prev: &Action,
    limits: Option<&KinematicLimits>,
    v_pref: f64,
) -> ActionSpace {
    let n = n as i64;
    let mut actions: Vec<Action> = Vec::with_capacity(((2 * n + 1) * (2 * n + 1)) as usize);
    actions.push(*center);
    for i in -n..=n {
        let speed = (center.speed + i as f64 * eps_speed).clamp(0.0, v_pref);
        for j in -n..=n {
            let a = if speed <= 0.0 {
                Action::stop(prev.heading)
            } else {
                Action::new(speed, center.heading + j as f64 * eps_heading)
            };
            if let Some(l) = limits {
                if !l.admits(prev, &a) {
                    continue;
                }
            }
            if !actions.iter().any(|b| same_action(&a, b)) {
                actions.push(a);
            }
        }
    }
    ActionSpace { actions, provenance: Provenance::Expanded }
}

/// Pedestrian motion over one step under a single prediction sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleScene {
    pub from: Vec<Vec2>,
    pub to: Vec<Vec2>,
}

/// Everything needed to score actions for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenes {
    pub dt: f64,
    pub radii: Vec<f64>,
    pub samples: Vec<SampleScene>,
    pub weights: Vec<f64>,
}

impl Scenes {
    /// Scenes for predicted step `offset`: pedestrians move from predicted
    /// point `offset - 1` (their current position when `offset` is 0) to
    /// point `offset`.
    pub fn from_predictions(
        preds: &PredictionSet,
        current: &[PedestrianState],
        offset: usize,
    ) -> Result<Scenes, PlanError> {
        if preds.num_pedestrians() != current.len() {
            return Err(PlanError::PedestrianCount { expected: current.len(), got: preds.num_pedestrians() });
        }
        if preds.horizon() <= offset {
            return Err(PlanError::ShortHorizon { have: preds.horizon(), need: offset + 1 });
        }
        let n = current.len();
        let samples = (0..preds.num_samples())
            .map(|s| SampleScene {
                from: (0..n)
                    .map(|i| if offset == 0 { current[i].position } else { preds.position(i, s, offset - 1) })
                    .collect(),
                to: (0..n).map(|i| preds.position(i, s, offset)).collect(),
            })
            .collect();
        Ok(Scenes {
            dt: preds.dt(),
            radii: current.iter().map(|p| p.radius).collect(),
            samples,
            weights: preds.weights().to_vec(),
        })
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }
}

/// Scores `action` taken from `vehicle` after `prev` against every sample
/// and aggregates.
pub fn score_action(
    action: &Action,
    vehicle: &VehicleState,
    prev: &Action,
    scenes: &Scenes,
    value_fn: &dyn ValueFunction,
    cfg: &PlannerConfig,
) -> f64 {
    let dt = scenes.dt;
    let next = propagate(vehicle, action, dt);
    let sweep = SweptDisc::new(vehicle.position, next.position, vehicle.radius);
    let reached = next.goal_distance() < next.radius;
    let discount = cfg.discount(dt, vehicle.v_pref);
    let inv_dt = 1.0 / dt;
    let mut peds: Vec<PedestrianState> = Vec::with_capacity(scenes.radii.len());
    let per_sample = scenes.samples.iter().map(|scene| {
        let mut d_min = f64::INFINITY;
        peds.clear();
        for ((from, to), r) in scene.from.iter().zip(&scene.to).zip(&scenes.radii) {
            d_min = d_min.min(min_separation(&sweep, &SweptDisc::new(*from, *to, *r)));
            peds.push(PedestrianState { position: *to, velocity: (*to - *from) * inv_dt, radius: *r });
        }
        let r = reward(d_min, reached, action, prev, cfg);
        r + discount * value_fn.value(&to_ego(&next, &peds))
    });
    match cfg.aggregation {
        Aggregation::Min => per_sample.fold(f64::INFINITY, f64::min),
        Aggregation::Mean => {
            let values: Vec<f64> = per_sample.collect();
            values.iter().sum::<f64>() / values.len() as f64
        }
        Aggregation::WeightedMean => {
            let values: Vec<f64> = per_sample.collect();
            values.iter().zip(&scenes.weights).map(|(v, w)| v * w).sum()
        }
    }
}

/// Aggregated one-step value of `action` from `s_prev` under `preds`.
///
/// The previous action is read off the vehicle's current velocity.
pub fn evaluate_action(
    action: &Action,
    preds: &PredictionSet,
    s_prev: &JointState,
    value_fn: &dyn ValueFunction,
    cfg: &PlannerConfig,
) -> Result<f64, PlanError> {
    let scenes = Scenes::from_predictions(preds, &s_prev.pedestrians, 0)?;
    let prev = s_prev.vehicle.current_action();
    Ok(score_action(action, &s_prev.vehicle, &prev, &scenes, value_fn, cfg))
}

/// A scored choice.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Choice {
    pub action: Action,
    pub value: f64,
    pub index: usize,
}

/// Whether `a` beats `b`: higher value, then higher speed, then smaller
/// heading change from `prev`; otherwise the earlier action stays.
fn beats(a: (&Action, f64), b: (&Action, f64), prev: &Action) -> bool {
    if a.1 != b.1 {
        return a.1 > b.1;
    }
    if a.0.speed != b.0.speed {
        return a.0.speed > b.0.speed;
    }
    a.0.heading_change(prev) < b.0.heading_change(prev)
}

/// Argmax over `actions` with the deterministic tie-break.
pub fn argmax(actions: &[Action], values: &[f64], prev: &Action) -> Option<Choice> {
    let mut best: Option<Choice> = None;
    for (index, (a, &v)) in actions.iter().zip(values).enumerate() {
        match best {
            Some(b) if !beats((a, v), (&b.action, b.value), prev) => {}
            _ => best = Some(Choice { action: *a, value: v, index }),
        }
    }
    best
}

fn select(
    space: &ActionSpace,
    vehicle: &VehicleState,
    prev: &Action,
    scenes: &Scenes,
    value_fn: &dyn ValueFunction,
    cfg: &PlannerConfig,
) -> Option<Choice> {
    let values: Vec<f64> = space
        .actions
        .iter()
        .map(|a| score_action(a, vehicle, prev, scenes, value_fn, cfg))
        .collect();
    argmax(&space.actions, &values, prev)
}

/// First-pass argmax over `space`.
pub fn select_initial(
    space: &ActionSpace,
    vehicle: &VehicleState,
    prev: &Action,
    scenes: &Scenes,
    value_fn: &dyn ValueFunction,
    cfg: &PlannerConfig,
) -> Option<Choice> {
    select(space, vehicle, prev, scenes, value_fn, cfg)
}

/// Result of one planning step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanOutcome {
    pub action: Action,
    pub value: f64,
    pub initial: Action,
    pub initial_value: f64,
    /// Candidates scored in the second pass.
    pub expanded: usize,
}

/// First-pass candidates: `initial` rotated onto the goal axis and, with
/// KCE on, restricted to what `prev` can reach.
pub fn candidate_space(
    vehicle: &VehicleState,
    prev: &Action,
    initial: &ActionSpace,
    cfg: &PlannerConfig,
    dt: f64,
) -> ActionSpace {
    let to_goal = vehicle.goal - vehicle.position;
    let axis = if to_goal.norm_sq() > 0.0 { to_goal.angle() } else { vehicle.heading };
    let mut space = initial.clone().rotated(axis).canonical(prev.heading);
    if cfg.kce {
        // Holding the previous command is always admissible.
        if !space.contains(prev) {
            space.actions.push(*prev);
        }
        space = kinematic_filter(&space, prev, &cfg.limits(dt));
    }
    space
}

/// Plans one step against prepared scenes.
///
/// `initial` holds goal-relative headings; it is rotated into the world
/// frame here.
pub fn plan_on_scenes(
    vehicle: &VehicleState,
    prev: &Action,
    scenes: &Scenes,
    initial: &ActionSpace,
    value_fn: &dyn ValueFunction,
    cfg: &PlannerConfig,
) -> PlanOutcome {
    let space = candidate_space(vehicle, prev, initial, cfg, scenes.dt);
    let limits = cfg.limits(scenes.dt);
    let first = select_initial(&space, vehicle, prev, scenes, value_fn, cfg).expect("action space is never empty");
    if !cfg.kce {
        return PlanOutcome {
            action: first.action,
            value: first.value,
            initial: first.action,
            initial_value: first.value,
            expanded: 0,
        };
    }
    let expanded = expand_space(&first.action, cfg.eps_speed, cfg.eps_heading(), cfg.n, prev, Some(&limits), vehicle.v_pref);
    let second = select(&expanded, vehicle, prev, scenes, value_fn, cfg).expect("expanded space holds its center");
    assert!(second.value >= first.value, "refinement lowered the value");
    PlanOutcome {
        action: second.action,
        value: second.value,
        initial: first.action,
        initial_value: first.value,
        expanded: expanded.len(),
    }
}

/// Predict, filter, choose, refine.
#[allow(clippy::too_many_arguments)]
pub fn plan_step(
    state: &JointState,
    tracks: &ObservedTracks,
    prev: &Action,
    value_fn: &dyn ValueFunction,
    predictor: &mut dyn Predictor,
    horizon: usize,
    seed: u64,
    cfg: &PlannerConfig,
) -> Result<PlanOutcome, PlanError> {
    let preds = predictor.predict(tracks, horizon.max(1), seed)?;
    let scenes = Scenes::from_predictions(&preds, &state.pedestrians, 0)?;
    let initial = build_initial_space(state.vehicle.v_pref, cfg);
    Ok(plan_on_scenes(&state.vehicle, prev, &scenes, &initial, value_fn, cfg))
}

/// Plans `steps` consecutive actions from one observation, advancing the
/// vehicle by its own plan and the pedestrians along the prediction samples.
#[allow(clippy::too_many_arguments)]
pub fn plan_sequence(
    state: &JointState,
    tracks: &ObservedTracks,
    prev: &Action,
    value_fn: &dyn ValueFunction,
    predictor: &mut dyn Predictor,
    horizon: usize,
    steps: usize,
    seed: u64,
    cfg: &PlannerConfig,
) -> Result<Vec<PlanOutcome>, PlanError> {
    let preds = predictor.predict(tracks, horizon.max(steps), seed)?;
    let initial = build_initial_space(state.vehicle.v_pref, cfg);
    let mut vehicle = state.vehicle;
    let mut prev = *prev;
    let mut out = Vec::with_capacity(steps);
    for j in 0..steps {
        let scenes = Scenes::from_predictions(&preds, &state.pedestrians, j)?;
        let outcome = plan_on_scenes(&vehicle, &prev, &scenes, &initial, value_fn, cfg);
        vehicle = propagate(&vehicle, &outcome.action, scenes.dt);
        prev = outcome.action;
        out.push(outcome);
    }
    Ok(out)
}

/// Wraps an angle difference for reporting.
pub fn heading_delta(a: &Action, b: &Action) -> f64 {
    wrap_angle(a.heading - b.heading)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::Constant;
    use alloc::vec;

    fn cfg0() -> PlannerConfig {
        PlannerConfig { threshold: 0.0, ..PlannerConfig::default() }
    }

    #[test]
    fn reward_cases() {
        let a = Action::new(1.0, 0.3);
        let c = cfg0();
        assert!((reward(-0.01, false, &a, &a, &c) - -0.25).abs() <= 1e-12);
        assert!((reward(0.1, false, &a, &a, &c) - -0.15).abs() <= 1e-12);
        assert!((reward(1.0, true, &a, &a, &c) - 1.0).abs() <= 1e-12);
        assert_eq!(reward(1.0, false, &a, &a, &PlannerConfig::default()), 0.0);
    }

    #[test]
    fn f_delta_values() {
        let a = Action::new(1.0, 0.0);
        assert_eq!(f_delta(&a, &a, 0.1), 0.1);
        let b = Action::new(0.7, 0.0);
        assert!((f_delta(&a, &b, 0.1) - -0.2).abs() <= 1e-12);
        assert_eq!(f_delta(&a, &b, 0.1), f_delta(&b, &a, 0.1));
    }

    #[test]
    fn initial_space_shape() {
        let s = build_initial_space(1.3, &PlannerConfig::default());
        assert_eq!(s.len(), 81);
        let max = s.actions.iter().map(|a| a.speed).fold(0.0, f64::max);
        assert_eq!(max, 1.3);
        assert!(s.actions.iter().any(|a| a.speed == 0.0));
        assert!(s.actions.iter().all(|a| a.speed >= 0.0 && a.speed <= 1.3));
    }

    #[test]
    fn filter_examples() {
        let limits = PlannerConfig::default().limits(0.25);
        let prev = Action::new(1.0, 0.0);
        let space = ActionSpace {
            actions: vec![Action::new(1.0, 130f64.to_radians()), Action::new(0.0, 0.0), prev],
            provenance: Provenance::Initial,
        };
        let kept = kinematic_filter(&space, &prev, &limits);
        assert_eq!(kept.actions, vec![Action::new(0.0, 0.0), prev]);
        let all = kinematic_filter(&space, &prev, &KinematicLimits::unbounded());
        assert_eq!(all, space);
    }

    #[test]
    fn expansion_grid() {
        let center = Action::new(0.5, 10f64.to_radians());
        let e = expand_space(&center, 0.05, 5f64.to_radians(), 2, &center, None, 1.0);
        assert_eq!(e.len(), 25);
        assert_eq!(e.actions[0], center);
        let lone = expand_space(&center, 0.05, 0.1, 0, &center, None, 1.0);
        assert_eq!(lone.actions, vec![center]);
        let top = Action::new(1.0, 0.0);
        let e = expand_space(&top, 0.1, 0.1, 2, &top, None, 1.0);
        assert!(e.actions.iter().all(|a| a.speed <= 1.0));
        assert_eq!(e.len(), 15);
    }

    #[test]
    fn constant_value_prefers_fast_and_straight() {
        let vehicle = VehicleState::at_rest(Vec2::new(0.0, -4.0), Vec2::new(0.0, 4.0), 0.3, 1.0);
        let prev = vehicle.current_action();
        let scenes = Scenes { dt: 0.25, radii: vec![], samples: vec![SampleScene { from: vec![], to: vec![] }], weights: vec![1.0] };
        let cfg = PlannerConfig { kce: false, ..PlannerConfig::default() };
        let out = plan_on_scenes(&vehicle, &prev, &scenes, &build_initial_space(1.0, &cfg), &Constant(0.0), &cfg);
        assert_eq!(out.action.speed, 1.0);
        assert!(out.action.heading_change(&prev) < 1e-12);
    }
}
