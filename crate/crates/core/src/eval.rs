//! Episode runner, metrics and paired comparisons.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::{ceil, Vec2};
use crate::planner::{self, reward, PlannerConfig};
use crate::predict::{self, ObservedTracks, PredictError, Predictor, PredictorConfig, PredictorKind};
use crate::sim::{generate_scenario, Env, OrcaVehicle, PedestrianSpec, Scenario, SimConfig, SimError, VehicleSpec};
use crate::state::{Action, JointState};
use crate::value::{AnalyticValue, ValueFunction, ValueNet};

pub const LOG_SCHEMA_VERSION: u32 = 1;

/// Actions planned per observation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanningMode {
    Replan,
    /// Plan this many steps from one observation and execute them all.
    OpenLoop(usize),
}

impl PlanningMode {
    pub fn steps(&self) -> usize {
        match self {
            PlanningMode::Replan => 1,
            PlanningMode::OpenLoop(k) => (*k).max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("seed sets differ between the compared runs")]
    SeedMismatch,
    #[error("seed {0} ran different scenarios in the compared runs")]
    ScenarioMismatch(u64),
    #[error("num_cases must be at least 1")]
    NoCases,
    #[error("a value network is required for this policy")]
    MissingNetwork,
    #[error("predictor kind {0:?} has no built-in implementation")]
    NoBuiltinPredictor(PredictorKind),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// What a policy sees before acting.
#[derive(Clone, Debug)]
pub struct Observation {
    pub state: JointState,
    pub tracks: ObservedTracks,
    pub prev_action: Action,
    pub step: usize,
    pub episode_seed: u64,
    pub dt: f64,
}

pub trait VehiclePolicy {
    /// Observed positions per track the policy needs.
    fn observation_len(&self) -> usize {
        2
    }

    /// One or more actions to execute in order.
    fn plan(&mut self, obs: &Observation) -> Result<Vec<Action>, PredictError>;
}

/// ORCA-driven vehicle.
#[derive(Clone, Debug, Default)]
pub struct OrcaPolicy(pub OrcaVehicle);

impl VehiclePolicy for OrcaPolicy {
    fn plan(&mut self, obs: &Observation) -> Result<Vec<Action>, PredictError> {
        Ok(alloc::vec![self.0.act(&obs.state, obs.dt)])
    }
}

/// Drives straight at the goal at preferred speed, ignoring everyone.
#[derive(Clone, Copy, Debug, Default)]
pub struct StraightPolicy;

impl VehiclePolicy for StraightPolicy {
    fn plan(&mut self, obs: &Observation) -> Result<Vec<Action>, PredictError> {
        let v = &obs.state.vehicle;
        let to_goal = v.goal - v.position;
        let speed = v.v_pref.min(to_goal.norm() / obs.dt);
        Ok(alloc::vec![Action::new(speed, to_goal.angle())])
    }
}

/// Mixes the episode seed and step into a prediction seed.
pub fn step_seed(episode_seed: u64, step: usize) -> u64 {
    let mut z = episode_seed ^ (step as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Value-based planner with a predictor.
pub struct PlannerPolicy<'a> {
    pub cfg: PlannerConfig,
    pub value: &'a dyn ValueFunction,
    pub predictor: Box<dyn Predictor + 'a>,
    pub observation_len: usize,
    pub horizon: usize,
    pub mode: PlanningMode,
}

impl VehiclePolicy for PlannerPolicy<'_> {
    fn observation_len(&self) -> usize {
        self.observation_len
    }

    fn plan(&mut self, obs: &Observation) -> Result<Vec<Action>, PredictError> {
        let seed = step_seed(obs.episode_seed, obs.step);
        let steps = self.mode.steps();
        let result = if steps == 1 {
            planner::plan_step(
                &obs.state,
                &obs.tracks,
                &obs.prev_action,
                self.value,
                &mut self.predictor,
                self.horizon,
                seed,
                &self.cfg,
            )
            .map(|o| alloc::vec![o])
        } else {
            planner::plan_sequence(
                &obs.state,
                &obs.tracks,
                &obs.prev_action,
                self.value,
                &mut self.predictor,
                self.horizon,
                steps,
                seed,
                &self.cfg,
            )
        };
        match result {
            Ok(outcomes) => Ok(outcomes.into_iter().map(|o| o.action).collect()),
            Err(planner::PlanError::Predict(e)) => Err(e),
            Err(e) => Err(PredictError::Malformed(e.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Collision,
    Timeout,
    /// The policy failed, for instance an external predictor timed out.
    Aborted { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub position: Vec2,
    pub velocity: Vec2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Time at the end of the step.
    pub t: f64,
    pub action: Action,
    pub vehicle: AgentSnapshot,
    pub pedestrians: Vec<AgentSnapshot>,
    pub reward: f64,
    /// `None` without pedestrians.
    pub d_min: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub schema_version: u32,
    pub seed: u64,
    pub scenario_hash: u64,
    pub dt: f64,
    pub vehicle: VehicleSpec,
    pub pedestrians: Vec<PedestrianSpec>,
    pub initial_vehicle: AgentSnapshot,
    pub initial_pedestrians: Vec<AgentSnapshot>,
    pub steps: Vec<StepRecord>,
    pub outcome: Outcome,
    /// Simulated seconds at the end of the episode.
    pub time: f64,
}

fn snapshots(js: &JointState) -> Vec<AgentSnapshot> {
    js.pedestrians.iter().map(|p| AgentSnapshot { position: p.position, velocity: p.velocity }).collect()
}

/// Runs `env` to termination under `policy`. Rewards are logged with the
/// reward parameters of `reward_cfg`.
pub fn run_episode(mut env: Env, policy: &mut dyn VehiclePolicy, reward_cfg: &PlannerConfig) -> EpisodeLog {
    let scenario = env.scenario().clone();
    let dt = env.dt();
    let js0 = env.observe();
    let mut log = EpisodeLog {
        schema_version: LOG_SCHEMA_VERSION,
        seed: scenario.seed,
        scenario_hash: scenario.fingerprint(),
        dt,
        vehicle: scenario.vehicle,
        pedestrians: scenario.pedestrians.clone(),
        initial_vehicle: AgentSnapshot { position: js0.vehicle.position, velocity: js0.vehicle.velocity },
        initial_pedestrians: snapshots(&js0),
        steps: Vec::new(),
        outcome: Outcome::Timeout,
        time: 0.0,
    };
    let mut prev = env.vehicle().current_action();
    'episode: while !env.is_terminated() {
        let obs = Observation {
            state: env.observe(),
            tracks: env.tracks(policy.observation_len()),
            prev_action: prev,
            step: env.steps(),
            episode_seed: scenario.seed,
            dt,
        };
        let actions = match policy.plan(&obs) {
            Ok(a) if !a.is_empty() => a,
            Ok(_) => {
                log.outcome = Outcome::Aborted { reason: "policy returned no action".to_string() };
                break;
            }
            Err(e) => {
                log.outcome = Outcome::Aborted { reason: e.to_string() };
                break;
            }
        };
        for action in actions {
            let tr = env.step(&action).expect("episode is running");
            let r = reward(tr.d_min, tr.reached_goal, &action, &prev, reward_cfg);
            log.steps.push(StepRecord {
                t: tr.state.t,
                action,
                vehicle: AgentSnapshot { position: tr.state.vehicle.position, velocity: tr.state.vehicle.velocity },
                pedestrians: snapshots(&tr.state),
                reward: r,
                d_min: if tr.d_min.is_finite() { Some(tr.d_min) } else { None },
            });
            prev = action;
            if tr.is_terminal() {
                log.outcome = if tr.collided {
                    Outcome::Collision
                } else if tr.reached_goal {
                    Outcome::Success
                } else {
                    Outcome::Timeout
                };
                break 'episode;
            }
        }
    }
    log.time = env.time();
    log
}

/// Steps an empty scenario needs to cover `distance` at `v_pref`.
pub fn straight_line_steps(distance: f64, v_pref: f64, dt: f64) -> usize {
    ceil(distance / (v_pref * dt)) as usize
}

/// Per-episode figures derived from a log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub scenario_hash: u64,
    pub outcome: Outcome,
    pub time: f64,
    pub steps: usize,
    /// Largest `|v_t - v_{t-1}| / dt`.
    pub max_acceleration: f64,
    pub path_length: f64,
    /// Smallest separation over the episode; `None` without pedestrians.
    pub min_separation: Option<f64>,
}

impl EpisodeSummary {
    pub fn from_log(log: &EpisodeLog) -> Self {
        let mut prev_v = log.initial_vehicle.velocity;
        let mut prev_p = log.initial_vehicle.position;
        let mut max_acc: f64 = 0.0;
        let mut path = 0.0;
        let mut min_sep: Option<f64> = None;
        for s in &log.steps {
            max_acc = max_acc.max((s.vehicle.velocity - prev_v).norm() / log.dt);
            path += (s.vehicle.position - prev_p).norm();
            prev_v = s.vehicle.velocity;
            prev_p = s.vehicle.position;
            if let Some(d) = s.d_min {
                min_sep = Some(min_sep.map_or(d, |m: f64| m.min(d)));
            }
        }
        EpisodeSummary {
            seed: log.seed,
            scenario_hash: log.scenario_hash,
            outcome: log.outcome.clone(),
            time: log.time,
            steps: log.steps.len(),
            max_acceleration: max_acc,
            path_length: path,
            min_separation: min_sep,
        }
    }

    pub fn success(&self) -> bool {
        self.outcome == Outcome::Success
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub episodes: usize,
    pub success_rate: f64,
    pub collision_rate: f64,
    /// Timeouts and aborted episodes.
    pub timeout_rate: f64,
    pub aborted: usize,
    /// Mean time to goal over successful episodes.
    pub mean_time: Option<f64>,
    /// Largest acceleration over every step of every episode.
    pub max_acceleration: f64,
    /// Mean of the per-episode maxima.
    pub mean_max_acceleration: f64,
}

impl Metrics {
    pub fn from_summaries(summaries: &[EpisodeSummary]) -> Self {
        let n = summaries.len();
        let count = |f: &dyn Fn(&Outcome) -> bool| summaries.iter().filter(|s| f(&s.outcome)).count();
        let success = count(&|o| *o == Outcome::Success);
        let collision = count(&|o| *o == Outcome::Collision);
        let aborted = count(&|o| matches!(o, Outcome::Aborted { .. }));
        let denom = n.max(1) as f64;
        let times: Vec<f64> = summaries.iter().filter(|s| s.success()).map(|s| s.time).collect();
        Metrics {
            episodes: n,
            success_rate: success as f64 / denom,
            collision_rate: collision as f64 / denom,
            timeout_rate: (n - success - collision) as f64 / denom,
            aborted,
            mean_time: if times.is_empty() { None } else { Some(times.iter().sum::<f64>() / times.len() as f64) },
            max_acceleration: summaries.iter().map(|s| s.max_acceleration).fold(0.0, f64::max),
            mean_max_acceleration: summaries.iter().map(|s| s.max_acceleration).sum::<f64>() / denom,
        }
    }

    pub fn from_logs(logs: &[EpisodeLog]) -> Self {
        let s: Vec<EpisodeSummary> = logs.iter().map(EpisodeSummary::from_log).collect();
        Metrics::from_summaries(&s)
    }
}

/// Where the planner gets its state values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueSource {
    Analytic,
    Network,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Planner,
    Orca,
    Straight,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub n_pedestrians: usize,
    pub num_cases: usize,
    pub base_seed: u64,
    pub policy: PolicyKind,
    pub value: ValueSource,
    pub mode: PlanningMode,
    /// Safety margin of the ORCA-driven vehicle, meters.
    pub orca_safety_margin: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_pedestrians: 5,
            num_cases: 100,
            base_seed: 0,
            policy: PolicyKind::Planner,
            value: ValueSource::Network,
            mode: PlanningMode::Replan,
            orca_safety_margin: 0.01,
        }
    }
}

/// Builds a fresh policy for every episode.
pub trait PolicyFactory {
    fn make(&self, scenario: &Scenario) -> Result<Box<dyn VehiclePolicy + '_>, EvalError>;
}

/// Policies backed by built-in predictors.
pub struct StandardPolicies<'a> {
    pub experiment: ExperimentConfig,
    pub planner: PlannerConfig,
    pub predictor: PredictorConfig,
    pub network: Option<&'a ValueNet>,
    pub analytic: AnalyticValue,
}

impl StandardPolicies<'_> {
    pub fn value(&self) -> Result<&dyn ValueFunction, EvalError> {
        match self.experiment.value {
            ValueSource::Analytic => Ok(&self.analytic),
            ValueSource::Network => self.network.map(|n| n as &dyn ValueFunction).ok_or(EvalError::MissingNetwork),
        }
    }

    /// Wraps any predictor into a planner policy configured from `self`.
    pub fn planner_with<'b>(&'b self, predictor: Box<dyn Predictor + 'b>) -> Result<Box<dyn VehiclePolicy + 'b>, EvalError> {
        Ok(Box::new(PlannerPolicy {
            cfg: self.planner.clone(),
            value: self.value()?,
            predictor,
            observation_len: self.predictor.observation_len,
            horizon: self.predictor.horizon,
            mode: self.experiment.mode,
        }))
    }
}

impl PolicyFactory for StandardPolicies<'_> {
    fn make(&self, _scenario: &Scenario) -> Result<Box<dyn VehiclePolicy + '_>, EvalError> {
        match self.experiment.policy {
            PolicyKind::Orca => {
                let mut v = OrcaVehicle::default();
                v.params.safety_margin = self.experiment.orca_safety_margin;
                Ok(Box::new(OrcaPolicy(v)))
            }
            PolicyKind::Straight => Ok(Box::new(StraightPolicy)),
            PolicyKind::Planner => {
                let p = predict::builtin(&self.predictor).ok_or(EvalError::NoBuiltinPredictor(self.predictor.kind))?;
                self.planner_with(p)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResult {
    pub metrics: Metrics,
    pub episodes: Vec<EpisodeSummary>,
    pub logs: Vec<EpisodeLog>,
}

/// Seed of case `index`.
pub fn case_seed(exp: &ExperimentConfig, index: usize) -> u64 {
    exp.base_seed + index as u64
}

/// Runs one case: generate the scenario, build a policy, run it.
pub fn run_case(
    exp: &ExperimentConfig,
    sim: &SimConfig,
    factory: &dyn PolicyFactory,
    reward_cfg: &PlannerConfig,
    index: usize,
) -> Result<EpisodeLog, EvalError> {
    let seed = case_seed(exp, index);
    let scenario = generate_scenario(exp.n_pedestrians, seed, sim)?;
    let mut policy = factory.make(&scenario)?;
    Ok(run_episode(Env::new(scenario, sim.clone()), policy.as_mut(), reward_cfg))
}

/// Runs every case in order and aggregates.
pub fn monte_carlo(
    exp: &ExperimentConfig,
    sim: &SimConfig,
    factory: &dyn PolicyFactory,
    reward_cfg: &PlannerConfig,
) -> Result<MonteCarloResult, EvalError> {
    if exp.num_cases == 0 {
        return Err(EvalError::NoCases);
    }
    let mut logs = Vec::with_capacity(exp.num_cases);
    for i in 0..exp.num_cases {
        logs.push(run_case(exp, sim, factory, reward_cfg, i)?);
    }
    Ok(aggregate(logs))
}

/// Metrics and summaries of finished logs.
pub fn aggregate(logs: Vec<EpisodeLog>) -> MonteCarloResult {
    let episodes: Vec<EpisodeSummary> = logs.iter().map(EpisodeSummary::from_log).collect();
    MonteCarloResult { metrics: Metrics::from_summaries(&episodes), episodes, logs }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignCount {
    pub negative: usize,
    pub zero: usize,
    pub positive: usize,
}

impl SignCount {
    fn add(&mut self, d: f64) {
        if d < 0.0 {
            self.negative += 1;
        } else if d > 0.0 {
            self.positive += 1;
        } else {
            self.zero += 1;
        }
    }
}

/// Per-seed differences `b - a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedRow {
    pub seed: u64,
    pub scenario_hash: u64,
    pub a_success: bool,
    pub b_success: bool,
    pub a_max_acceleration: f64,
    pub b_max_acceleration: f64,
    pub delta_max_acceleration: f64,
    pub a_time: f64,
    pub b_time: f64,
    /// Only when both runs succeeded.
    pub delta_time: Option<f64>,
    pub delta_success: i8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<PairedRow>,
    pub a: Metrics,
    pub b: Metrics,
    /// Mean of per-seed `(b - a) / a` over seeds with `a > 0`.
    pub mean_relative_max_acceleration: f64,
    /// Mean of per-seed `(b - a) / a` over seeds where both succeeded.
    pub mean_relative_time: Option<f64>,
    /// `(B - A) / A` of the run-level mean per-episode maximum acceleration.
    pub aggregate_relative_max_acceleration: f64,
    pub success_rate_delta: f64,
    pub max_acceleration_signs: SignCount,
    pub time_signs: SignCount,
    pub success_signs: SignCount,
}

/// Pairs two runs seed by seed.
pub fn ablation_compare(a: &[EpisodeSummary], b: &[EpisodeSummary]) -> Result<ComparisonReport, EvalError> {
    let mut a_sorted: Vec<&EpisodeSummary> = a.iter().collect();
    let mut b_sorted: Vec<&EpisodeSummary> = b.iter().collect();
    a_sorted.sort_by_key(|s| s.seed);
    b_sorted.sort_by_key(|s| s.seed);
    if a_sorted.len() != b_sorted.len() || a_sorted.iter().zip(&b_sorted).any(|(x, y)| x.seed != y.seed) {
        return Err(EvalError::SeedMismatch);
    }
    let mut rows = Vec::with_capacity(a_sorted.len());
    let mut acc_signs = SignCount::default();
    let mut time_signs = SignCount::default();
    let mut success_signs = SignCount::default();
    let mut rel_acc = Vec::new();
    let mut rel_time = Vec::new();
    for (x, y) in a_sorted.iter().zip(&b_sorted) {
        if x.scenario_hash != y.scenario_hash {
            return Err(EvalError::ScenarioMismatch(x.seed));
        }
        let d_acc = y.max_acceleration - x.max_acceleration;
        acc_signs.add(d_acc);
        if x.max_acceleration > 0.0 {
            rel_acc.push(d_acc / x.max_acceleration);
        }
        let delta_time = if x.success() && y.success() {
            let d = y.time - x.time;
            time_signs.add(d);
            rel_time.push(d / x.time);
            Some(d)
        } else {
            None
        };
        let delta_success = y.success() as i8 - x.success() as i8;
        success_signs.add(delta_success as f64);
        rows.push(PairedRow {
            seed: x.seed,
            scenario_hash: x.scenario_hash,
            a_success: x.success(),
            b_success: y.success(),
            a_max_acceleration: x.max_acceleration,
            b_max_acceleration: y.max_acceleration,
            delta_max_acceleration: d_acc,
            a_time: x.time,
            b_time: y.time,
            delta_time,
            delta_success,
        });
    }
    let ma = Metrics::from_summaries(a);
    let mb = Metrics::from_summaries(b);
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    Ok(ComparisonReport {
        rows,
        mean_relative_max_acceleration: mean(&rel_acc),
        mean_relative_time: if rel_time.is_empty() { None } else { Some(mean(&rel_time)) },
        aggregate_relative_max_acceleration: if ma.mean_max_acceleration > 0.0 {
            (mb.mean_max_acceleration - ma.mean_max_acceleration) / ma.mean_max_acceleration
        } else {
            0.0
        },
        success_rate_delta: mb.success_rate - ma.success_rate,
        a: ma,
        b: mb,
        max_acceleration_signs: acc_signs,
        time_signs,
        success_signs,
    })
}
