//! State-value functions: the attention network, its training loops and a
//! closed-form baseline.

use serde::{Deserialize, Serialize};

use crate::state::EgoJointState;

pub mod net;
pub mod train;

pub use net::{NetConfig, NetError, ValueNet};
pub use train::{ReplayBuffer, Sgd, TrainConfig, TrainError, TrainReport};

/// Anything that scores a vehicle-centric joint state.
pub trait ValueFunction {
    fn value(&self, ego: &EgoJointState) -> f64;
}

impl<V: ValueFunction + ?Sized> ValueFunction for &V {
    fn value(&self, ego: &EgoJointState) -> f64 {
        (**self).value(ego)
    }
}

/// Same value everywhere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Constant(pub f64);

impl ValueFunction for Constant {
    fn value(&self, _ego: &EgoJointState) -> f64 {
        self.0
    }
}

/// Adds a fixed offset to another value function.
#[derive(Clone, Copy, Debug)]
pub struct Shifted<V>(pub V, pub f64);

impl<V: ValueFunction> ValueFunction for Shifted<V> {
    fn value(&self, ego: &EgoJointState) -> f64 {
        self.0.value(ego) + self.1
    }
}

/// Training-free value: time to goal at preferred speed plus a quadratic
/// penalty on pedestrians closer than `proximity_range` (surface gap).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticValue {
    pub goal_weight: f64,
    pub proximity_weight: f64,
    pub proximity_range: f64,
}

impl Default for AnalyticValue {
    fn default() -> Self {
        AnalyticValue { goal_weight: 0.1, proximity_weight: 1.0, proximity_range: 0.5 }
    }
}

impl AnalyticValue {
    /// Bound on `|dV/dposition|` for `n` pedestrians.
    pub fn lipschitz(&self, v_pref: f64, n: usize) -> f64 {
        self.goal_weight / v_pref + 2.0 * self.proximity_weight * self.proximity_range * n as f64
    }
}

impl ValueFunction for AnalyticValue {
    fn value(&self, ego: &EgoJointState) -> f64 {
        let v = &ego.vehicle;
        let mut penalty = 0.0;
        for p in &ego.pedestrians {
            let gap = p.distance - p.radius - v.radius;
            let short = self.proximity_range - gap;
            if short > 0.0 {
                penalty += short * short;
            }
        }
        -self.goal_weight * v.goal_distance / v.v_pref - self.proximity_weight * penalty
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec2;
    use crate::state::{to_ego, PedestrianState, VehicleState};

    fn ego(p: Vec2, ped: Option<Vec2>) -> EgoJointState {
        let v = VehicleState::at_rest(p, Vec2::new(0.0, 4.0), 0.3, 1.0);
        let peds: alloc::vec::Vec<PedestrianState> =
            ped.into_iter().map(|q| PedestrianState { position: q, velocity: Vec2::ZERO, radius: 0.3 }).collect();
        to_ego(&v, &peds)
    }

    #[test]
    fn nearer_goal_scores_higher() {
        let f = AnalyticValue::default();
        assert!(f.value(&ego(Vec2::new(0.0, 1.0), None)) > f.value(&ego(Vec2::new(0.0, 0.0), None)));
        assert_eq!(f.value(&ego(Vec2::new(0.0, 4.0), None)), 0.0);
    }

    #[test]
    fn close_pedestrian_penalised() {
        let f = AnalyticValue::default();
        let far = f.value(&ego(Vec2::ZERO, Some(Vec2::new(3.0, 0.0))));
        let near = f.value(&ego(Vec2::ZERO, Some(Vec2::new(0.8, 0.0))));
        assert!(near < far);
        assert_eq!(far, f.value(&ego(Vec2::ZERO, None)));
    }
}
