//! Circle-crossing crowd simulator with ORCA pedestrians.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::math::Vec2;
use crate::orca::{self, OrcaAgent, OrcaParams, OrcaSolution};
use crate::predict::ObservedTracks;
use crate::state::{
    min_separation, propagate, Action, JointState, PedestrianState, SweptDisc, VehicleState,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("could not place agent {agent} without overlap after {attempts} attempts")]
    Overcrowded { agent: usize, attempts: usize },
    #[error("scenario needs at least one pedestrian")]
    NoPedestrians,
    #[error("episode already terminated")]
    Terminated,
    #[error("invalid simulator configuration: {0}")]
    InvalidConfig(&'static str),
}

/// What a pedestrian does once it reaches its goal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalPolicy {
    Stand,
    /// Pick a fresh goal on the circle.
    Resample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Control period, seconds.
    pub dt: f64,
    /// Episode time limit, seconds.
    pub time_limit: f64,
    pub circle_radius: f64,
    /// Standard deviation of the start and goal perturbations, meters.
    pub position_std: f64,
    /// Extra spacing enforced between placed starts (and between goals).
    pub placement_clearance: f64,
    pub max_placement_attempts: usize,
    pub vehicle_radius: f64,
    pub vehicle_v_pref: f64,
    /// Whether pedestrians react to the vehicle.
    pub vehicle_visible: bool,
    pub goal_policy: GoalPolicy,
    /// Radius reported to the vehicle for every pedestrian; the true radius
    /// when absent.
    pub observed_radius: Option<f64>,
    pub orca: OrcaParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.25,
            time_limit: 25.0,
            circle_radius: 4.0,
            position_std: 0.5,
            placement_clearance: 0.2,
            max_placement_attempts: 1000,
            vehicle_radius: 0.3,
            vehicle_v_pref: 1.0,
            vehicle_visible: false,
            goal_policy: GoalPolicy::Stand,
            observed_radius: None,
            orca: OrcaParams::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0) {
            return Err(SimError::InvalidConfig("dt must be positive"));
        }
        if !(self.time_limit > 0.0) {
            return Err(SimError::InvalidConfig("time_limit must be positive"));
        }
        if !(self.vehicle_radius > 0.0 && self.vehicle_v_pref > 0.0) {
            return Err(SimError::InvalidConfig("vehicle radius and v_pref must be positive"));
        }
        if !(self.position_std >= 0.0 && self.circle_radius > 0.0) {
            return Err(SimError::InvalidConfig("circle geometry must be non-negative"));
        }
        if !self.orca.is_valid() {
            return Err(SimError::InvalidConfig("invalid ORCA parameters"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PedestrianSpec {
    pub start: Vec2,
    pub goal: Vec2,
    pub radius: f64,
    pub v_pref: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleSpec {
    pub start: Vec2,
    pub goal: Vec2,
    pub radius: f64,
    pub v_pref: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub circle_radius: f64,
    pub vehicle: VehicleSpec,
    pub pedestrians: Vec<PedestrianSpec>,
    pub vehicle_visible: bool,
}

impl Scenario {
    /// FNV-1a over the bit patterns of every field.
    pub fn fingerprint(&self) -> u64 {
        let mut h = crate::Fnv1a::new();
        h.write_u64(self.seed);
        h.write_f64(self.circle_radius);
        for v in [self.vehicle.start, self.vehicle.goal] {
            h.write_f64(v.x);
            h.write_f64(v.y);
        }
        h.write_f64(self.vehicle.radius);
        h.write_f64(self.vehicle.v_pref);
        h.write_u64(self.pedestrians.len() as u64);
        for p in &self.pedestrians {
            for v in [p.start, p.goal] {
                h.write_f64(v.x);
                h.write_f64(v.y);
            }
            h.write_f64(p.radius);
            h.write_f64(p.v_pref);
        }
        h.write_u64(self.vehicle_visible as u64);
        h.finish()
    }
}

/// Gaussian offset with norm at most three standard deviations.
fn truncated_offset(rng: &mut ChaCha8Rng, std: f64) -> Vec2 {
    if std <= 0.0 {
        return Vec2::ZERO;
    }
    let normal = Normal::new(0.0, std).expect("finite std");
    loop {
        let v = Vec2::new(normal.sample(rng), normal.sample(rng));
        if v.norm() <= 3.0 * std {
            return v;
        }
    }
}

fn clipped_normal(rng: &mut ChaCha8Rng, mean: f64, std: f64, lo: f64, hi: f64) -> f64 {
    if std <= 0.0 {
        return mean.clamp(lo, hi);
    }
    Normal::new(mean, std).expect("finite std").sample(rng).clamp(lo, hi)
}

/// Builds a perturbed circle-crossing scenario.
///
/// The vehicle crosses from the bottom of the circle to the top; every
/// pedestrian starts at a random point on the circle and heads for the
/// antipodal point. Starts (and goals) that would overlap an already placed
/// agent are resampled.
pub fn generate_scenario(n_pedestrians: usize, seed: u64, cfg: &SimConfig) -> Result<Scenario, SimError> {
    if n_pedestrians == 0 {
        return Err(SimError::NoPedestrians);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = cfg.circle_radius;
    let vehicle = VehicleSpec {
        start: Vec2::new(0.0, -r) + truncated_offset(&mut rng, cfg.position_std),
        goal: Vec2::new(0.0, r) + truncated_offset(&mut rng, cfg.position_std),
        radius: cfg.vehicle_radius,
        v_pref: cfg.vehicle_v_pref,
    };
    let o = &cfg.orca;
    let mut pedestrians: Vec<PedestrianSpec> = Vec::with_capacity(n_pedestrians);
    for agent in 0..n_pedestrians {
        let radius = clipped_normal(&mut rng, o.radius_mean, o.radius_std, 0.2, 0.4);
        let v_pref = clipped_normal(&mut rng, o.v_pref_mean, o.v_pref_std, 0.5, 1.5);
        let mut placed = None;
        for _ in 0..cfg.max_placement_attempts {
            let angle = rng.random::<f64>() * 2.0 * PI;
            let on_circle = Vec2::from_polar(r, angle);
            let start = on_circle + truncated_offset(&mut rng, cfg.position_std);
            let goal = -on_circle + truncated_offset(&mut rng, cfg.position_std);
            let clear = |a: Vec2, b: Vec2, rb: f64| a.distance(b) >= radius + rb + cfg.placement_clearance;
            let ok = clear(start, vehicle.start, vehicle.radius)
                && clear(goal, vehicle.goal, vehicle.radius)
                && pedestrians.iter().all(|p| clear(start, p.start, p.radius) && clear(goal, p.goal, p.radius));
            if ok {
                placed = Some(PedestrianSpec { start, goal, radius, v_pref });
                break;
            }
        }
        match placed {
            Some(p) => pedestrians.push(p),
            None => return Err(SimError::Overcrowded { agent, attempts: cfg.max_placement_attempts }),
        }
    }
    Ok(Scenario {
        seed,
        circle_radius: r,
        vehicle,
        pedestrians,
        vehicle_visible: cfg.vehicle_visible,
    })
}

/// Ground-truth pedestrian.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Pedestrian {
    position: Vec2,
    velocity: Vec2,
    radius: f64,
    v_pref: f64,
    goal: Vec2,
}

/// Outcome of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    /// Observation after the step.
    pub state: JointState,
    /// Minimum vehicle-pedestrian separation during the step.
    pub d_min: f64,
    /// Minimum pedestrian-pedestrian separation during the step.
    pub pedestrian_d_min: f64,
    pub reached_goal: bool,
    pub collided: bool,
    pub timed_out: bool,
}

impl Transition {
    pub fn is_terminal(&self) -> bool {
        self.reached_goal || self.collided || self.timed_out
    }
}

/// One running episode.
#[derive(Clone, Debug)]
pub struct Env {
    cfg: SimConfig,
    scenario: Scenario,
    vehicle: VehicleState,
    pedestrians: Vec<Pedestrian>,
    t: f64,
    steps: usize,
    /// Pedestrian positions per tick, oldest first.
    history: Vec<Vec<Vec2>>,
    rng: ChaCha8Rng,
    terminated: bool,
    last_orca: Vec<OrcaSolution>,
}

impl Env {
    pub fn new(scenario: Scenario, cfg: SimConfig) -> Self {
        let v = &scenario.vehicle;
        let vehicle = VehicleState::at_rest(v.start, v.goal, v.radius, v.v_pref);
        let pedestrians: Vec<Pedestrian> = scenario
            .pedestrians
            .iter()
            .map(|p| Pedestrian {
                position: p.start,
                velocity: Vec2::ZERO,
                radius: p.radius,
                v_pref: p.v_pref,
                goal: p.goal,
            })
            .collect();
        let history = alloc::vec![pedestrians.iter().map(|p| p.position).collect()];
        // Separate stream so goal resampling does not alias scenario draws.
        let rng = ChaCha8Rng::seed_from_u64(scenario.seed ^ 0x9e37_79b9_7f4a_7c15);
        Env {
            cfg,
            scenario,
            vehicle,
            pedestrians,
            t: 0.0,
            steps: 0,
            history,
            rng,
            terminated: false,
            last_orca: Vec::new(),
        }
    }

    pub fn from_seed(n_pedestrians: usize, seed: u64, cfg: &SimConfig) -> Result<Self, SimError> {
        Ok(Env::new(generate_scenario(n_pedestrians, seed, cfg)?, cfg.clone()))
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn dt(&self) -> f64 {
        self.cfg.dt
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    pub fn vehicle(&self) -> &VehicleState {
        &self.vehicle
    }

    /// Ground-truth pedestrian goals.
    pub fn pedestrian_goals(&self) -> Vec<Vec2> {
        self.pedestrians.iter().map(|p| p.goal).collect()
    }

    /// ORCA solutions from the most recent step, one per pedestrian.
    pub fn last_orca(&self) -> &[OrcaSolution] {
        &self.last_orca
    }

    pub fn observe(&self) -> JointState {
        JointState {
            vehicle: self.vehicle,
            pedestrians: self
                .pedestrians
                .iter()
                .map(|p| PedestrianState {
                    position: p.position,
                    velocity: p.velocity,
                    radius: self.cfg.observed_radius.unwrap_or(p.radius),
                })
                .collect(),
            t: self.t,
        }
    }

    /// The last `k` observed positions of every pedestrian, padded at the
    /// front with the earliest observation.
    pub fn tracks(&self, k: usize) -> ObservedTracks {
        let k = k.max(2);
        let tracks = (0..self.pedestrians.len())
            .map(|i| {
                let have = self.history.len();
                (0..k)
                    .map(|j| {
                        let idx = (have + j).saturating_sub(k);
                        self.history[idx][i]
                    })
                    .collect()
            })
            .collect();
        ObservedTracks::new(self.cfg.dt, tracks).expect("history tracks are well formed")
    }

    fn orca_agents(&self) -> Vec<OrcaAgent> {
        let dt = self.cfg.dt;
        self.pedestrians
            .iter()
            .map(|p| OrcaAgent {
                position: p.position,
                velocity: p.velocity,
                radius: p.radius,
                max_speed: p.v_pref,
                pref_velocity: orca::preferred_velocity(p.position, p.goal, p.v_pref, dt),
            })
            .collect()
    }

    /// Advances pedestrians one ORCA step and the vehicle by `action`.
    pub fn step(&mut self, action: &Action) -> Result<Transition, SimError> {
        if self.terminated {
            return Err(SimError::Terminated);
        }
        let dt = self.cfg.dt;
        let params = &self.cfg.orca;

        let mut agents = self.orca_agents();
        let n = agents.len();
        if self.cfg.vehicle_visible {
            agents.push(OrcaAgent {
                position: self.vehicle.position,
                velocity: self.vehicle.velocity,
                radius: self.vehicle.radius,
                max_speed: self.vehicle.v_pref,
                pref_velocity: Vec2::ZERO,
            });
        }
        let solutions: Vec<OrcaSolution> = (0..n)
            .map(|i| {
                let idx = orca::select_neighbors(
                    &agents[i],
                    agents.iter().enumerate().filter(|(j, _)| *j != i),
                    params,
                );
                let neighbors: Vec<&OrcaAgent> = idx.iter().map(|&j| &agents[j]).collect();
                orca::compute_velocity(&agents[i], &neighbors, params, dt, 0.5)
            })
            .collect();

        let next_vehicle = propagate(&self.vehicle, action, dt);
        let vehicle_sweep = SweptDisc::new(self.vehicle.position, next_vehicle.position, self.vehicle.radius);

        let mut sweeps = Vec::with_capacity(n);
        let mut d_min = f64::INFINITY;
        for (p, sol) in self.pedestrians.iter_mut().zip(&solutions) {
            let next = p.position + sol.velocity * dt;
            let sweep = SweptDisc::new(p.position, next, p.radius);
            d_min = d_min.min(min_separation(&vehicle_sweep, &sweep));
            sweeps.push(sweep);
            p.position = next;
            p.velocity = sol.velocity;
        }
        let mut pedestrian_d_min = f64::INFINITY;
        for i in 0..n {
            for j in (i + 1)..n {
                pedestrian_d_min = pedestrian_d_min.min(min_separation(&sweeps[i], &sweeps[j]));
            }
        }
        if self.cfg.goal_policy == GoalPolicy::Resample {
            let r = self.cfg.circle_radius;
            for p in self.pedestrians.iter_mut() {
                if p.position.distance(p.goal) < p.radius {
                    let angle = self.rng.random::<f64>() * 2.0 * PI;
                    p.goal = Vec2::from_polar(r, angle);
                }
            }
        }

        self.vehicle = next_vehicle;
        self.steps += 1;
        self.t = self.steps as f64 * dt;
        self.history.push(self.pedestrians.iter().map(|p| p.position).collect());
        self.last_orca = solutions;

        let collided = d_min < 0.0;
        let reached_goal = !collided && self.vehicle.goal_distance() < self.vehicle.radius;
        let timed_out = !collided && !reached_goal && self.t >= self.cfg.time_limit - 1e-9;
        self.terminated = collided || reached_goal || timed_out;

        Ok(Transition {
            state: self.observe(),
            d_min,
            pedestrian_d_min,
            reached_goal,
            collided,
            timed_out,
        })
    }
}

/// Drives the vehicle with ORCA, treating every observed pedestrian as a
/// reciprocating agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrcaVehicle {
    pub params: OrcaParams,
    /// Share of the avoidance the vehicle takes on.
    pub responsibility: f64,
}

impl Default for OrcaVehicle {
    fn default() -> Self {
        OrcaVehicle { params: OrcaParams::default(), responsibility: 0.5 }
    }
}

impl OrcaVehicle {
    pub fn act(&self, js: &JointState, dt: f64) -> Action {
        let v = &js.vehicle;
        let me = OrcaAgent {
            position: v.position,
            velocity: v.velocity,
            radius: v.radius,
            max_speed: v.v_pref,
            pref_velocity: orca::preferred_velocity(v.position, v.goal, v.v_pref, dt),
        };
        let others: Vec<OrcaAgent> = js
            .pedestrians
            .iter()
            .map(|p| OrcaAgent {
                position: p.position,
                velocity: p.velocity,
                radius: p.radius,
                max_speed: p.velocity.norm(),
                pref_velocity: p.velocity,
            })
            .collect();
        let idx = orca::select_neighbors(&me, others.iter().enumerate(), &self.params);
        let neighbors: Vec<&OrcaAgent> = idx.iter().map(|&j| &others[j]).collect();
        let sol = orca::compute_velocity(&me, &neighbors, &self.params, dt, self.responsibility);
        let mut action = Action::from_velocity(sol.velocity);
        if action.speed > v.v_pref {
            action.speed = v.v_pref;
        }
        if action.speed == 0.0 {
            action.heading = v.heading;
        }
        action
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_is_deterministic() {
        let cfg = SimConfig::default();
        let a = generate_scenario(5, 42, &cfg).unwrap();
        let b = generate_scenario(5, 42, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = generate_scenario(5, 43, &cfg).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn unperturbed_single_pedestrian_is_antipodal() {
        let cfg = SimConfig { position_std: 0.0, ..SimConfig::default() };
        let s = generate_scenario(1, 7, &cfg).unwrap();
        let p = s.pedestrians[0];
        assert!((p.start.distance(p.goal) - 8.0).abs() < 1e-12);
        assert!((p.start + p.goal).norm() < 1e-12);
        assert!((p.start.norm() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn overcrowded_circle_fails() {
        let cfg = SimConfig { circle_radius: 1.0, position_std: 0.0, max_placement_attempts: 50, ..SimConfig::default() };
        assert!(matches!(generate_scenario(30, 1, &cfg), Err(SimError::Overcrowded { .. })));
        assert_eq!(generate_scenario(0, 1, &cfg), Err(SimError::NoPedestrians));
    }

    #[test]
    fn reaching_goal_terminates() {
        let cfg = SimConfig::default();
        let mut s = generate_scenario(1, 3, &cfg).unwrap();
        s.vehicle.start = s.vehicle.goal - Vec2::new(0.0, 0.35);
        s.pedestrians[0].start = Vec2::new(10.0, 10.0);
        s.pedestrians[0].goal = Vec2::new(10.0, 10.0);
        let mut env = Env::new(s, cfg);
        let tr = env.step(&Action::new(1.0, core::f64::consts::FRAC_PI_2)).unwrap();
        assert!(tr.reached_goal && !tr.collided);
        assert_eq!(env.step(&Action::new(0.0, 0.0)), Err(SimError::Terminated));
    }

    #[test]
    fn driving_through_pedestrian_collides() {
        let cfg = SimConfig::default();
        let mut s = generate_scenario(1, 3, &cfg).unwrap();
        s.vehicle.start = Vec2::new(0.0, 0.0);
        s.vehicle.goal = Vec2::new(0.0, 5.0);
        s.pedestrians[0].start = Vec2::new(0.0, 0.8);
        s.pedestrians[0].goal = Vec2::new(0.0, 0.8);
        let mut env = Env::new(s, cfg);
        let mut collided = false;
        for _ in 0..4 {
            let tr = env.step(&Action::new(1.0, core::f64::consts::FRAC_PI_2)).unwrap();
            if tr.collided {
                assert!(tr.d_min < 0.0);
                collided = true;
                break;
            }
        }
        assert!(collided);
    }

    #[test]
    fn tracks_pad_with_earliest() {
        let cfg = SimConfig::default();
        let mut env = Env::from_seed(2, 11, &cfg).unwrap();
        let t0 = env.tracks(8);
        assert_eq!(t0.observation_len(), 8);
        assert!(t0.track(0).iter().all(|p| *p == t0.track(0)[0]));
        env.step(&Action::new(0.0, 0.0)).unwrap();
        let t1 = env.tracks(8);
        assert_eq!(t1.track(1)[6], t0.track(1)[7]);
        assert_ne!(t1.track(1)[7], t1.track(1)[6]);
    }
}
