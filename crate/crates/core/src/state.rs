//! Agent states, actions, kinematic propagation and swept-disc separation.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::{self, wrap_angle, Vec2};

/// Full observable state of the controlled vehicle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
    pub goal: Vec2,
    pub v_pref: f64,
    /// World-frame heading in radians.
    pub heading: f64,
}

impl VehicleState {
    /// A vehicle at rest at `position`, facing its goal.
    pub fn at_rest(position: Vec2, goal: Vec2, radius: f64, v_pref: f64) -> Self {
        let to_goal = goal - position;
        let heading = if to_goal.norm_sq() > 0.0 { to_goal.angle() } else { 0.0 };
        VehicleState { position, velocity: Vec2::ZERO, radius, goal, v_pref, heading }
    }

    pub fn goal_distance(&self) -> f64 {
        self.position.distance(self.goal)
    }

    /// Current velocity expressed as the last commanded `(speed, heading)`.
    pub fn current_action(&self) -> Action {
        Action::new(self.velocity.norm(), self.heading)
    }
}

/// What the vehicle observes about a pedestrian.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PedestrianState {
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub vehicle: VehicleState,
    pub pedestrians: Vec<PedestrianState>,
    pub t: f64,
}

/// A commanded velocity as `(speed, heading)`; the heading is world-frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub speed: f64,
    pub heading: f64,
}

impl Action {
    pub fn new(speed: f64, heading: f64) -> Self {
        Action { speed, heading: wrap_angle(heading) }
    }

    /// Zero-speed action that keeps `heading`.
    pub fn stop(heading: f64) -> Self {
        Action::new(0.0, heading)
    }

    /// Converts a Cartesian velocity; a zero vector maps to heading 0.
    pub fn from_velocity(v: Vec2) -> Self {
        let speed = v.norm();
        let heading = if speed > 0.0 { v.angle() } else { 0.0 };
        Action { speed, heading }
    }

    #[inline]
    pub fn velocity(&self) -> Vec2 {
        Vec2::from_polar(self.speed, self.heading)
    }

    /// Absolute wrapped heading difference to `other`.
    pub fn heading_change(&self, other: &Action) -> f64 {
        math::abs(wrap_angle(self.heading - other.heading))
    }
}

/// Per-step bounds on the change of the commanded velocity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KinematicLimits {
    /// Largest speed change per step, m/s.
    pub dv_max: f64,
    /// Largest heading change per step, rad.
    pub dtheta_max: f64,
    /// Maximum acceleration, m/s².
    pub a_max: f64,
}

impl KinematicLimits {
    /// Limits from a maximum acceleration and turn per step; `dv_max = a_max * dt`.
    pub fn from_acceleration(a_max: f64, dtheta_max: f64, dt: f64) -> Self {
        KinematicLimits { dv_max: a_max * dt, dtheta_max, a_max }
    }

    pub fn unbounded() -> Self {
        KinematicLimits { dv_max: f64::INFINITY, dtheta_max: f64::INFINITY, a_max: f64::INFINITY }
    }

    pub fn is_valid(&self) -> bool {
        self.dv_max > 0.0 && self.dtheta_max > 0.0 && self.a_max > 0.0
    }

    /// Whether stepping from `prev` to `next` respects every bound.
    ///
    /// Speed and heading are bounded componentwise; the Cartesian velocity
    /// change is bounded by `dv_max` as well so the realised acceleration
    /// never exceeds `a_max`.
    pub fn admits(&self, prev: &Action, next: &Action) -> bool {
        if math::abs(next.speed - prev.speed) > self.dv_max {
            return false;
        }
        if next.heading_change(prev) > self.dtheta_max {
            return false;
        }
        !((next.velocity() - prev.velocity()).norm() > self.dv_max)
    }
}

/// Moves the vehicle for `dt` seconds at the commanded velocity.
///
/// The commanded velocity is reached instantly.
pub fn propagate(state: &VehicleState, action: &Action, dt: f64) -> VehicleState {
    debug_assert!(dt > 0.0);
    let velocity = action.velocity();
    VehicleState {
        position: state.position + velocity * dt,
        velocity,
        heading: action.heading,
        ..*state
    }
}

/// A disc moving linearly from `from` to `to` over one interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweptDisc {
    pub from: Vec2,
    pub to: Vec2,
    pub radius: f64,
}

impl SweptDisc {
    pub fn new(from: Vec2, to: Vec2, radius: f64) -> Self {
        SweptDisc { from, to, radius }
    }

    pub fn stationary(at: Vec2, radius: f64) -> Self {
        SweptDisc { from: at, to: at, radius }
    }
}

/// Smallest surface-to-surface distance between two discs moving linearly
/// over the same interval. Negative iff they overlap at some instant.
pub fn min_separation(a: &SweptDisc, b: &SweptDisc) -> f64 {
    let p0 = b.from - a.from;
    let d = (b.to - b.from) - (a.to - a.from);
    let dd = d.norm_sq();
    let tau = if dd > 0.0 { (-p0.dot(d) / dd).clamp(0.0, 1.0) } else { 0.0 };
    (p0 + d * tau).norm() - a.radius - b.radius
}

/// Vehicle part of the vehicle-centric state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoVehicle {
    pub goal_distance: f64,
    pub v_pref: f64,
    pub velocity: Vec2,
    pub radius: f64,
    /// Heading relative to the goal direction.
    pub heading: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoPedestrian {
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
    /// Center distance to the vehicle.
    pub distance: f64,
}

/// Joint state in the vehicle frame: vehicle at the origin, goal on +x.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoJointState {
    pub vehicle: EgoVehicle,
    pub pedestrians: Vec<EgoPedestrian>,
}

pub const VEHICLE_FEATURES: usize = 6;
pub const PEDESTRIAN_FEATURES: usize = 7;
/// Width of one vehicle-pedestrian pair feature row.
pub const PAIR_FEATURES: usize = VEHICLE_FEATURES + PEDESTRIAN_FEATURES;

impl EgoJointState {
    pub fn vehicle_features(&self) -> [f64; VEHICLE_FEATURES] {
        let v = &self.vehicle;
        [v.goal_distance, v.v_pref, v.velocity.x, v.velocity.y, v.radius, v.heading]
    }

    pub fn pair_features(&self, i: usize) -> [f64; PAIR_FEATURES] {
        let s = self.vehicle_features();
        let p = &self.pedestrians[i];
        [
            s[0],
            s[1],
            s[2],
            s[3],
            s[4],
            s[5],
            p.position.x,
            p.position.y,
            p.velocity.x,
            p.velocity.y,
            p.radius,
            p.distance,
            p.radius + self.vehicle.radius,
        ]
    }
}

/// Expresses `vehicle` and `pedestrians` in the vehicle frame.
///
/// When the vehicle sits exactly on its goal the frame axis is its heading.
pub fn to_ego(vehicle: &VehicleState, pedestrians: &[PedestrianState]) -> EgoJointState {
    let to_goal = vehicle.goal - vehicle.position;
    let axis = if to_goal.norm_sq() > 0.0 { to_goal.angle() } else { vehicle.heading };
    let (c, s) = (math::cos(-axis), math::sin(-axis));
    let origin = vehicle.position;
    let ego_vehicle = EgoVehicle {
        goal_distance: to_goal.norm(),
        v_pref: vehicle.v_pref,
        velocity: vehicle.velocity.rotate_cs(c, s),
        radius: vehicle.radius,
        heading: wrap_angle(vehicle.heading - axis),
    };
    let pedestrians = pedestrians
        .iter()
        .map(|p| {
            let rel = p.position - origin;
            EgoPedestrian {
                position: rel.rotate_cs(c, s),
                velocity: p.velocity.rotate_cs(c, s),
                radius: p.radius,
                distance: rel.norm(),
            }
        })
        .collect();
    EgoJointState { vehicle: ego_vehicle, pedestrians }
}

pub fn to_ego_frame(js: &JointState) -> EgoJointState {
    to_ego(&js.vehicle, &js.pedestrians)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::{FRAC_PI_2, PI};

    fn vehicle_at(p: Vec2) -> VehicleState {
        VehicleState::at_rest(p, Vec2::new(0.0, 4.0), 0.3, 1.0)
    }

    #[test]
    fn propagate_straight() {
        let s = propagate(&vehicle_at(Vec2::ZERO), &Action::new(1.0, 0.0), 0.25);
        assert_eq!(s.position, Vec2::new(0.25, 0.0));
        assert_eq!(s.velocity, Vec2::new(1.0, 0.0));
    }

    #[test]
    fn propagate_zero_speed_keeps_position() {
        let start = vehicle_at(Vec2::new(1.0, -2.0));
        let s = propagate(&start, &Action::new(0.0, 2.1), 0.25);
        assert_eq!(s.position, start.position);
        assert_eq!(s.goal, start.goal);
        assert_eq!(s.radius, start.radius);
        assert_eq!(s.v_pref, start.v_pref);
    }

    #[test]
    fn propagate_quarter_turn_matches_fine_integration() {
        let start = vehicle_at(Vec2::new(1.0, 1.0));
        let a = Action::new(1.0, FRAC_PI_2);
        let s = propagate(&start, &a, 0.5);
        assert!((s.position.x - 1.0).abs() < 1e-15);
        assert!((s.position.y - 1.5).abs() < 1e-15);
        // Euler integration with many tiny steps of the same velocity.
        let mut p = start.position;
        let v = a.velocity();
        for _ in 0..10_000 {
            p += v * (0.5 / 10_000.0);
        }
        assert!(p.distance(s.position) < 1e-10);
    }

    #[test]
    fn min_separation_static_cases() {
        let a = SweptDisc::stationary(Vec2::ZERO, 0.3);
        let b = SweptDisc::stationary(Vec2::new(0.5, 0.0), 0.3);
        assert!((min_separation(&a, &b) + 0.1).abs() < 1e-15);
        let c = SweptDisc::stationary(Vec2::new(1.0, 0.0), 0.3);
        assert!((min_separation(&a, &c) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn min_separation_crossing_matches_sampling() {
        let a = SweptDisc::new(Vec2::new(-1.0, 0.0), Vec2::new(1.0, 0.0), 0.3);
        let b = SweptDisc::new(Vec2::new(0.2, -1.1), Vec2::new(0.2, 0.9), 0.25);
        let mut best = f64::INFINITY;
        for k in 0..=1000 {
            let tau = k as f64 / 1000.0;
            let pa = a.from + (a.to - a.from) * tau;
            let pb = b.from + (b.to - b.from) * tau;
            best = best.min(pa.distance(pb) - a.radius - b.radius);
        }
        assert!((min_separation(&a, &b) - best).abs() < 1e-6);
    }

    #[test]
    fn action_views_convert() {
        let a = Action::new(0.7, -2.0);
        let b = Action::from_velocity(a.velocity());
        assert!((a.speed - b.speed).abs() < 1e-12);
        assert!((a.heading - b.heading).abs() < 1e-12);
        assert!((Action::new(1.0, 3.0 * PI).heading - PI).abs() < 1e-12);
    }

    #[test]
    fn ego_frame_goal_aligned_is_translation() {
        let v = VehicleState::at_rest(Vec2::new(2.0, 3.0), Vec2::new(6.0, 3.0), 0.3, 1.0);
        let peds = [PedestrianState { position: Vec2::new(3.0, 4.0), velocity: Vec2::new(0.5, -0.1), radius: 0.3 }];
        let ego = to_ego(&v, &peds);
        assert_eq!(ego.vehicle.goal_distance, 4.0);
        assert_eq!(ego.pedestrians[0].position, Vec2::new(1.0, 1.0));
        assert_eq!(ego.pedestrians[0].velocity, Vec2::new(0.5, -0.1));
        assert_eq!(ego.vehicle.heading, 0.0);
    }

    #[test]
    fn ego_frame_at_goal_uses_heading() {
        let mut v = VehicleState::at_rest(Vec2::new(1.0, 1.0), Vec2::new(1.0, 1.0), 0.3, 1.0);
        v.heading = FRAC_PI_2;
        let peds = [PedestrianState { position: Vec2::new(1.0, 2.0), velocity: Vec2::ZERO, radius: 0.3 }];
        let ego = to_ego(&v, &peds);
        assert!(ego.pedestrians[0].position.distance(Vec2::new(1.0, 0.0)) < 1e-12);
        assert_eq!(ego.vehicle.goal_distance, 0.0);
    }

    #[test]
    fn limits_reject_sharp_turn() {
        let lim = KinematicLimits::from_acceleration(6.4, 120f64.to_radians(), 0.25);
        let prev = Action::new(1.0, 0.0);
        assert!(!lim.admits(&prev, &Action::new(1.0, 130f64.to_radians())));
        assert!(lim.admits(&prev, &Action::new(0.0, 0.0)));
        assert!(KinematicLimits::unbounded().admits(&prev, &Action::new(1.0, PI)));
    }
}
