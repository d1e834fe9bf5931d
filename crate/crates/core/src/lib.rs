//! Crowd navigation: an ORCA crowd simulator, pedestrian trajectory
//! predictors, an attention-based state-value network, a kinematically
//! constrained value planner and a Monte Carlo evaluation harness.
//!
//! The crate is `no_std` with `alloc`; all floating-point functions go
//! through `libm` so results do not depend on the platform math library.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod eval;
pub mod math;
pub mod orca;
pub mod planner;
pub mod predict;
pub mod sim;
pub mod state;
pub mod value;

pub use math::Vec2;
pub use state::{Action, EgoJointState, JointState, KinematicLimits, PedestrianState, VehicleState};

/// 64-bit FNV-1a hasher over explicit byte streams.
#[derive(Clone, Copy, Debug)]
pub struct Fnv1a(u64);

impl Fnv1a {
    pub fn new() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= *b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    pub fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    pub fn write_f64(&mut self, v: f64) {
        self.write_u64(v.to_bits());
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Fnv1a::new()
    }
}
