//! Imitation on ORCA demonstrations, then temporal-difference learning.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::planner::{self, build_initial_space, reward, PlannerConfig, Scenes};
use crate::predict::predict_cvm;
use crate::sim::{Env, OrcaVehicle, SimError};
use crate::state::{to_ego_frame, Action, EgoJointState};
use crate::value::net::ValueNet;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("replay buffer capacity must be positive")]
    ZeroCapacity,
    #[error("need at least one episode")]
    NoEpisodes,
    #[error("batch size must be positive")]
    ZeroBatch,
    #[error("no training samples were collected")]
    NoSamples,
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub n_pedestrians: usize,
    pub il_episodes: usize,
    pub il_epochs: usize,
    pub il_learning_rate: f64,
    pub rl_episodes: usize,
    pub rl_learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Minibatch updates after every RL episode.
    pub updates_per_episode: usize,
    pub buffer_capacity: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Episodes over which epsilon decays linearly.
    pub epsilon_decay_episodes: usize,
    /// Episodes between target-network refreshes.
    pub target_update_interval: usize,
    /// Extra clearance the demonstrating ORCA vehicle keeps, meters.
    pub demo_safety_margin: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            n_pedestrians: 5,
            il_episodes: 200,
            il_epochs: 50,
            il_learning_rate: 0.01,
            rl_episodes: 2000,
            rl_learning_rate: 0.001,
            momentum: 0.9,
            batch_size: 100,
            updates_per_episode: 50,
            buffer_capacity: 100_000,
            epsilon_start: 0.5,
            epsilon_end: 0.1,
            epsilon_decay_episodes: 1000,
            target_update_interval: 50,
            demo_safety_margin: 0.15,
        }
    }
}

impl TrainConfig {
    /// Linearly decayed exploration rate for `episode`.
    pub fn epsilon(&self, episode: usize) -> f64 {
        if self.epsilon_decay_episodes == 0 || episode >= self.epsilon_decay_episodes {
            return self.epsilon_end;
        }
        let f = episode as f64 / self.epsilon_decay_episodes as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * f
    }
}

/// Training scenario seeds live far above evaluation seeds.
pub const TRAINING_SEED_BASE: u64 = 1 << 40;

/// Scenario seed of imitation episode `i`.
pub fn il_seed(cfg: &TrainConfig, i: usize) -> u64 {
    TRAINING_SEED_BASE + (cfg.seed << 24) + i as u64
}

/// Scenario seed of RL episode `i`.
pub fn rl_seed(cfg: &TrainConfig, i: usize) -> u64 {
    TRAINING_SEED_BASE + (cfg.seed << 24) + (1 << 23) + i as u64
}

/// Bounded FIFO of `(state, target)` pairs.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<(EgoJointState, f64)>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self, TrainError> {
        if capacity == 0 {
            return Err(TrainError::ZeroCapacity);
        }
        Ok(ReplayBuffer { capacity, items: Vec::new(), cursor: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends, overwriting the oldest entry once full.
    pub fn push(&mut self, state: EgoJointState, target: f64) {
        if self.items.len() < self.capacity {
            self.items.push((state, target));
        } else {
            self.items[self.cursor] = (state, target);
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn items(&self) -> &[(EgoJointState, f64)] {
        &self.items
    }

    /// `size` entries drawn uniformly with replacement.
    pub fn sample<'a>(&'a self, rng: &mut ChaCha8Rng, size: usize) -> Vec<(&'a EgoJointState, f64)> {
        (0..size)
            .map(|_| {
                let (s, y) = &self.items[rng.random_range(0..self.items.len())];
                (s, *y)
            })
            .collect()
    }
}

/// Stochastic gradient descent with momentum.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Option<ValueNet>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Sgd { learning_rate, momentum, velocity: None }
    }

    pub fn step(&mut self, net: &mut ValueNet, grad: &ValueNet) {
        let velocity = self.velocity.get_or_insert_with(|| net.zeros_like());
        let (lr, mu) = (self.learning_rate, self.momentum);
        for ((p, v), g) in net.slices_mut().into_iter().zip(velocity.slices_mut()).zip(grad.slices()) {
            for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = mu * *v + g;
                *p -= lr * *v;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeEnd {
    Success,
    Collision,
    Timeout,
}

/// What a training run did.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean minibatch loss of every imitation epoch.
    pub il_epoch_losses: Vec<f64>,
    pub il_samples: usize,
    /// Mean minibatch loss after every RL episode.
    pub rl_losses: Vec<f64>,
    pub rl_outcomes: Vec<EpisodeEnd>,
}

fn end_of(collided: bool, reached: bool) -> EpisodeEnd {
    if collided {
        EpisodeEnd::Collision
    } else if reached {
        EpisodeEnd::Success
    } else {
        EpisodeEnd::Timeout
    }
}

/// Runs one ORCA-driven demonstration and returns its states labelled with
/// discounted returns. Timed-out episodes yield nothing.
pub fn demonstration(
    env: &mut Env,
    driver: &OrcaVehicle,
    planner_cfg: &PlannerConfig,
) -> Result<(Vec<(EgoJointState, f64)>, EpisodeEnd), TrainError> {
    let dt = env.dt();
    let mut states = Vec::new();
    let mut rewards = Vec::new();
    let mut prev = env.vehicle().current_action();
    let mut end = EpisodeEnd::Timeout;
    while !env.is_terminated() {
        let js = env.observe();
        let action = driver.act(&js, dt);
        let tr = env.step(&action)?;
        states.push(to_ego_frame(&js));
        rewards.push(reward(tr.d_min, tr.reached_goal, &action, &prev, planner_cfg));
        prev = action;
        if tr.is_terminal() {
            end = end_of(tr.collided, tr.reached_goal);
        }
    }
    if end == EpisodeEnd::Timeout {
        return Ok((Vec::new(), end));
    }
    let discount = planner_cfg.discount(dt, env.vehicle().v_pref);
    let mut ret = 0.0;
    let mut labelled: Vec<(EgoJointState, f64)> = Vec::with_capacity(states.len());
    for (s, r) in states.into_iter().zip(rewards).rev() {
        ret = r + discount * ret;
        labelled.push((s, ret));
    }
    labelled.reverse();
    Ok((labelled, end))
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Regresses `net` onto discounted returns of ORCA demonstrations.
///
/// `env_factory` builds the environment for a scenario seed.
pub fn train_imitation(
    env_factory: &mut dyn FnMut(u64) -> Result<Env, SimError>,
    net: &mut ValueNet,
    cfg: &TrainConfig,
    planner_cfg: &PlannerConfig,
    report: &mut TrainReport,
) -> Result<ReplayBuffer, TrainError> {
    if cfg.il_episodes == 0 {
        return Err(TrainError::NoEpisodes);
    }
    if cfg.batch_size == 0 {
        return Err(TrainError::ZeroBatch);
    }
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity)?;
    let mut driver = OrcaVehicle::default();
    driver.params.safety_margin = cfg.demo_safety_margin;
    for i in 0..cfg.il_episodes {
        let mut env = env_factory(il_seed(cfg, i))?;
        let (samples, _) = demonstration(&mut env, &driver, planner_cfg)?;
        for (s, y) in samples {
            buffer.push(s, y);
        }
    }
    if buffer.is_empty() {
        return Err(TrainError::NoSamples);
    }
    report.il_samples = buffer.len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x11);
    let mut opt = Sgd::new(cfg.il_learning_rate, cfg.momentum);
    for _ in 0..cfg.il_epochs {
        let order = shuffled(buffer.len(), &mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = chunk.iter().map(|&i| {
                let (s, y) = &buffer.items()[i];
                (s, *y)
            });
            let (loss, grad) = net.gradient(batch);
            opt.step(net, &grad);
            total += loss;
            batches += 1;
        }
        report.il_epoch_losses.push(total / batches as f64);
    }
    Ok(buffer)
}

/// TD target: `r` at terminal states, else `r + discount * V_target(next)`.
pub fn td_target(reward: f64, discount: f64, next_value: Option<f64>) -> f64 {
    match next_value {
        Some(v) => reward + discount * v,
        None => reward,
    }
}

/// Epsilon-greedy TD learning. Both greedy and random choices come from
/// the first-pass candidate space (kinematically filtered when KCE is on);
/// greedy ones use one-step constant-velocity lookahead.
///
/// `buffer` usually comes from [`train_imitation`] and keeps receiving
/// fresh transitions.
pub fn train_rl(
    env_factory: &mut dyn FnMut(u64) -> Result<Env, SimError>,
    net: &mut ValueNet,
    buffer: &mut ReplayBuffer,
    cfg: &TrainConfig,
    planner_cfg: &PlannerConfig,
    report: &mut TrainReport,
    mut progress: Option<&mut dyn FnMut(usize, &TrainReport, &ValueNet)>,
) -> Result<(), TrainError> {
    if cfg.batch_size == 0 {
        return Err(TrainError::ZeroBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x22);
    let mut opt = Sgd::new(cfg.rl_learning_rate, cfg.momentum);
    let mut target = net.clone();
    for episode in 0..cfg.rl_episodes {
        let mut env = env_factory(rl_seed(cfg, episode))?;
        let dt = env.dt();
        let v_pref = env.vehicle().v_pref;
        let discount = planner_cfg.discount(dt, v_pref);
        let initial = build_initial_space(v_pref, planner_cfg);
        let epsilon = cfg.epsilon(episode);
        let mut prev = env.vehicle().current_action();
        let mut end = EpisodeEnd::Timeout;
        while !env.is_terminated() {
            let js = env.observe();
            let tracks = env.tracks(2);
            let space = planner::candidate_space(&js.vehicle, &prev, &initial, planner_cfg, dt);
            let action = if rng.random::<f64>() < epsilon {
                space.actions[rng.random_range(0..space.len())]
            } else {
                let preds = predict_cvm(&tracks, 1);
                let scenes = Scenes::from_predictions(&preds, &js.pedestrians, 0)
                    .expect("prediction matches observation");
                planner::select_initial(&space, &js.vehicle, &prev, &scenes, &*net, planner_cfg)
                    .expect("candidate space is never empty")
                    .action
            };
            let tr = env.step(&action)?;
            let r = reward(tr.d_min, tr.reached_goal, &action, &prev, planner_cfg);
            // Running out of time ends the bootstrap chain too.
            let next_value = if tr.is_terminal() { None } else { Some(target.forward(&to_ego_frame(&tr.state))) };
            buffer.push(to_ego_frame(&js), td_target(r, discount, next_value));
            prev = action;
            if tr.is_terminal() {
                end = end_of(tr.collided, tr.reached_goal);
            }
        }
        report.rl_outcomes.push(end);

        let mut total = 0.0;
        for _ in 0..cfg.updates_per_episode {
            let batch = buffer.sample(&mut rng, cfg.batch_size.min(buffer.len()));
            let (loss, grad) = net.gradient(batch);
            opt.step(net, &grad);
            total += loss;
        }
        report.rl_losses.push(total / cfg.updates_per_episode.max(1) as f64);
        if cfg.target_update_interval > 0 && (episode + 1) % cfg.target_update_interval == 0 {
            target = net.clone();
        }
        if let Some(f) = progress.as_mut() {
            f(episode, report, net);
        }
    }
    Ok(())
}

/// Fraction of successes among `outcomes`.
pub fn success_rate(outcomes: &[EpisodeEnd]) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    outcomes.iter().filter(|o| **o == EpisodeEnd::Success).count() as f64 / outcomes.len() as f64
}

/// Prev-action bookkeeping used by rollouts: the action at rest facing the goal.
pub fn initial_action(env: &Env) -> Action {
    env.vehicle().current_action()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::SimConfig;
    use crate::value::net::NetConfig;

    #[test]
    fn zero_capacity_rejected() {
        assert_eq!(ReplayBuffer::new(0).unwrap_err(), TrainError::ZeroCapacity);
    }

    #[test]
    fn buffer_evicts_oldest() {
        let mut b = ReplayBuffer::new(2).unwrap();
        let s = crate::state::to_ego(
            &crate::state::VehicleState::at_rest(Default::default(), crate::math::Vec2::new(1.0, 0.0), 0.3, 1.0),
            &[],
        );
        b.push(s.clone(), 1.0);
        b.push(s.clone(), 2.0);
        b.push(s, 3.0);
        let ys: Vec<f64> = b.items().iter().map(|(_, y)| *y).collect();
        assert_eq!(ys, alloc::vec![3.0, 2.0]);
        assert_eq!(b.len(), 2);
    }

    #[test]
    fn td_targets() {
        assert_eq!(td_target(1.0, 0.9, None), 1.0);
        assert_eq!(td_target(-0.2, 0.0, Some(5.0)), -0.2);
        assert_eq!(td_target(0.0, 0.5, Some(2.0)), 1.0);
    }

    #[test]
    fn epsilon_schedule() {
        let c = TrainConfig { epsilon_start: 0.5, epsilon_end: 0.1, epsilon_decay_episodes: 4, ..TrainConfig::default() };
        assert_eq!(c.epsilon(0), 0.5);
        assert!((c.epsilon(2) - 0.3).abs() < 1e-12);
        assert_eq!(c.epsilon(9), 0.1);
    }

    #[test]
    fn demonstrations_label_discounted_returns() {
        let sim = SimConfig::default();
        let mut env = Env::from_seed(3, 7, &sim).unwrap();
        let pc = PlannerConfig::default();
        let (samples, end) = demonstration(&mut env, &OrcaVehicle::default(), &pc).unwrap();
        if end == EpisodeEnd::Timeout {
            assert!(samples.is_empty());
            return;
        }
        let d = pc.discount(sim.dt, sim.vehicle_v_pref);
        for w in samples.windows(2) {
            // Only the final reward is nonzero unless the vehicle brushed a pedestrian.
            if w[1].1 != 0.0 && w[0].1 != 0.0 {
                assert!((w[0].1 - d * w[1].1).abs() < 0.25);
            }
        }
        let _ = NetConfig::default();
    }
}
