//! Optimal reciprocal collision avoidance.
//!
//! Each agent builds one half-plane of admissible velocities per neighbour
//! and picks the admissible velocity closest to its preferred velocity with
//! a small incremental 2D linear program. When the half-planes have an empty
//! intersection the 3D program minimises the largest violation instead.
//! The line construction and both programs follow the RVO2 reference
//! library.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::{sqrt, Vec2};

const EPSILON: f64 = 1e-10;

/// Simulation parameters shared by every ORCA-driven pedestrian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrcaParams {
    /// Look-ahead of the velocity obstacles, seconds.
    pub time_horizon: f64,
    /// Agents farther than this are ignored, meters.
    pub neighbor_dist: f64,
    pub max_neighbors: usize,
    /// Extra clearance added to every radius inside the avoidance geometry.
    pub safety_margin: f64,
    pub v_pref_mean: f64,
    pub v_pref_std: f64,
    pub radius_mean: f64,
    pub radius_std: f64,
}

impl Default for OrcaParams {
    fn default() -> Self {
        OrcaParams {
            time_horizon: 5.0,
            neighbor_dist: 10.0,
            max_neighbors: 10,
            safety_margin: 0.01,
            v_pref_mean: 1.0,
            v_pref_std: 0.1,
            radius_mean: 0.3,
            radius_std: 0.02,
        }
    }
}

impl OrcaParams {
    pub fn is_valid(&self) -> bool {
        self.time_horizon > 0.0
            && self.neighbor_dist > 0.0
            && self.v_pref_std >= 0.0
            && self.radius_std >= 0.0
            && self.safety_margin >= 0.0
    }
}

/// A directed line; admissible velocities lie on its left.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Line {
    pub point: Vec2,
    pub direction: Vec2,
}

impl Line {
    /// Positive when `v` is outside the half-plane, by that distance.
    #[inline]
    pub fn violation(&self, v: Vec2) -> f64 {
        self.direction.det(self.point - v)
    }
}

/// An agent as seen by the avoidance step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrcaAgent {
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
    pub max_speed: f64,
    pub pref_velocity: Vec2,
}

/// Result of one agent's avoidance step.
#[derive(Clone, Debug)]
pub struct OrcaSolution {
    pub velocity: Vec2,
    pub lines: Vec<Line>,
    /// False when the 2D program was infeasible and the least-violation
    /// fallback chose the velocity.
    pub feasible: bool,
}

/// Goal-directed velocity of magnitude `v_pref`, shortened so the agent
/// does not overshoot the goal within one step.
pub fn preferred_velocity(position: Vec2, goal: Vec2, v_pref: f64, dt: f64) -> Vec2 {
    let to_goal = goal - position;
    let dist = to_goal.norm();
    if dist <= 0.0 {
        return Vec2::ZERO;
    }
    to_goal * (v_pref.min(dist / dt) / dist)
}

/// Half-plane induced on `agent` by `other`; `responsibility` is the
/// share of the avoidance `agent` takes on (0.5 for reciprocal agents).
pub fn neighbor_line(
    agent: &OrcaAgent,
    other: &OrcaAgent,
    params: &OrcaParams,
    dt: f64,
    responsibility: f64,
) -> Line {
    let rel_pos = other.position - agent.position;
    let rel_vel = agent.velocity - other.velocity;
    let dist_sq = rel_pos.norm_sq();
    let combined = agent.radius + other.radius + 2.0 * params.safety_margin;
    let combined_sq = combined * combined;

    let (direction, u) = if dist_sq > combined_sq {
        let inv_tau = 1.0 / params.time_horizon;
        let w = rel_vel - rel_pos * inv_tau;
        let w_len_sq = w.norm_sq();
        let dot1 = w.dot(rel_pos);
        if dot1 < 0.0 && dot1 * dot1 > combined_sq * w_len_sq {
            // Project on the cut-off circle.
            let w_len = sqrt(w_len_sq);
            let unit_w = w / w_len;
            (Vec2::new(unit_w.y, -unit_w.x), unit_w * (combined * inv_tau - w_len))
        } else {
            // Project on the nearer leg of the cone.
            let leg = sqrt(dist_sq - combined_sq);
            let direction = if rel_pos.det(w) > 0.0 {
                Vec2::new(rel_pos.x * leg - rel_pos.y * combined, rel_pos.x * combined + rel_pos.y * leg)
                    / dist_sq
            } else {
                -Vec2::new(rel_pos.x * leg + rel_pos.y * combined, -rel_pos.x * combined + rel_pos.y * leg)
                    / dist_sq
            };
            (direction, direction * rel_vel.dot(direction) - rel_vel)
        }
    } else {
        // Already overlapping: separate within one step.
        let inv_dt = 1.0 / dt;
        let w = rel_vel - rel_pos * inv_dt;
        let w_len = w.norm();
        let unit_w = if w_len > 0.0 {
            w / w_len
        } else {
            let away = -rel_pos.normalize_or_zero();
            if away == Vec2::ZERO { Vec2::new(1.0, 0.0) } else { away }
        };
        (Vec2::new(unit_w.y, -unit_w.x), unit_w * (combined * inv_dt - w_len))
    };

    Line { point: agent.velocity + u * responsibility, direction }
}

/// Optimises along line `line_no` subject to the lines before it.
fn linear_program1(
    lines: &[Line],
    line_no: usize,
    radius: f64,
    opt_velocity: Vec2,
    direction_opt: bool,
    result: &mut Vec2,
) -> bool {
    let line = lines[line_no];
    let dot = line.point.dot(line.direction);
    let discriminant = dot * dot + radius * radius - line.point.norm_sq();
    if discriminant < 0.0 {
        // The speed disc misses this line entirely.
        return false;
    }
    let sqrt_disc = sqrt(discriminant);
    let mut t_left = -dot - sqrt_disc;
    let mut t_right = -dot + sqrt_disc;

    for other in &lines[..line_no] {
        let denominator = line.direction.det(other.direction);
        let numerator = other.direction.det(line.point - other.point);
        if denominator.abs() <= EPSILON {
            if numerator < 0.0 {
                return false;
            }
            continue;
        }
        let t = numerator / denominator;
        if denominator >= 0.0 {
            t_right = t_right.min(t);
        } else {
            t_left = t_left.max(t);
        }
        if t_left > t_right {
            return false;
        }
    }

    let t = if direction_opt {
        if opt_velocity.dot(line.direction) > 0.0 { t_right } else { t_left }
    } else {
        line.direction.dot(opt_velocity - line.point).clamp(t_left, t_right)
    };
    *result = line.point + line.direction * t;
    true
}

/// Returns the index of the first line that could not be satisfied, or
/// `lines.len()` on success.
fn linear_program2(
    lines: &[Line],
    radius: f64,
    opt_velocity: Vec2,
    direction_opt: bool,
    result: &mut Vec2,
) -> usize {
    *result = if direction_opt {
        opt_velocity * radius
    } else if opt_velocity.norm_sq() > radius * radius {
        opt_velocity.normalize_or_zero() * radius
    } else {
        opt_velocity
    };

    for i in 0..lines.len() {
        if lines[i].violation(*result) > 0.0 {
            let saved = *result;
            if !linear_program1(lines, i, radius, opt_velocity, direction_opt, result) {
                *result = saved;
                return i;
            }
        }
    }
    lines.len()
}

/// Minimises the maximum violation over `lines[begin..]`.
fn linear_program3(lines: &[Line], begin: usize, radius: f64, result: &mut Vec2) {
    let mut distance = 0.0;
    let mut projected = Vec::with_capacity(lines.len());
    for i in begin..lines.len() {
        if lines[i].violation(*result) > distance {
            projected.clear();
            for j in 0..i {
                let det = lines[i].direction.det(lines[j].direction);
                let point = if det.abs() <= EPSILON {
                    if lines[i].direction.dot(lines[j].direction) > 0.0 {
                        continue;
                    }
                    (lines[i].point + lines[j].point) * 0.5
                } else {
                    lines[i].point
                        + lines[i].direction
                            * (lines[j].direction.det(lines[i].point - lines[j].point) / det)
                };
                let direction = (lines[j].direction - lines[i].direction).normalize_or_zero();
                projected.push(Line { point, direction });
            }
            let saved = *result;
            if linear_program2(&projected, radius, lines[i].direction.perp(), true, result)
                < projected.len()
            {
                // Numerical round-off; keep the previous answer.
                *result = saved;
            }
            distance = lines[i].violation(*result);
        }
    }
}

/// Velocity for `agent` given its half-plane constraints.
pub fn solve(lines: Vec<Line>, max_speed: f64, pref_velocity: Vec2) -> OrcaSolution {
    let mut velocity = Vec2::ZERO;
    let fail = linear_program2(&lines, max_speed, pref_velocity, false, &mut velocity);
    let feasible = fail == lines.len();
    if !feasible {
        linear_program3(&lines, fail, max_speed, &mut velocity);
    }
    OrcaSolution { velocity, lines, feasible }
}

/// Indices of the neighbours `agent` reacts to: within `neighbor_dist`,
/// closest first, at most `max_neighbors`.
pub fn select_neighbors<'a, I>(agent: &OrcaAgent, candidates: I, params: &OrcaParams) -> Vec<usize>
where
    I: IntoIterator<Item = (usize, &'a OrcaAgent)>,
{
    let range_sq = params.neighbor_dist * params.neighbor_dist;
    let mut found: Vec<(f64, usize)> = candidates
        .into_iter()
        .map(|(i, other)| ((other.position - agent.position).norm_sq(), i))
        .filter(|(d, _)| *d < range_sq)
        .collect();
    found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    found.truncate(params.max_neighbors);
    found.into_iter().map(|(_, i)| i).collect()
}

/// Avoidance step for one agent against an explicit neighbour list.
pub fn compute_velocity(
    agent: &OrcaAgent,
    neighbors: &[&OrcaAgent],
    params: &OrcaParams,
    dt: f64,
    responsibility: f64,
) -> OrcaSolution {
    let lines = neighbors
        .iter()
        .map(|other| neighbor_line(agent, other, params, dt, responsibility))
        .collect();
    solve(lines, agent.max_speed, agent.pref_velocity)
}

/// New velocities for every agent, each avoiding all others reciprocally.
pub fn orca_velocities(agents: &[OrcaAgent], params: &OrcaParams, dt: f64) -> Vec<OrcaSolution> {
    agents
        .iter()
        .enumerate()
        .map(|(i, agent)| {
            let idx = select_neighbors(
                agent,
                agents.iter().enumerate().filter(|(j, _)| *j != i),
                params,
            );
            let neighbors: Vec<&OrcaAgent> = idx.iter().map(|&j| &agents[j]).collect();
            compute_velocity(agent, &neighbors, params, dt, 0.5)
        })
        .collect()
}
