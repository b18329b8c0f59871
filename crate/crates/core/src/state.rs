use serde::{Deserialize, Serialize};

use crate::math::{half_axis, Quat, Vec3};
use crate::topology::RodSpec;

/// Kinematic state of one rod: center of mass, linear velocity, orientation
/// and world-frame angular velocity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RodState {
    pub p: Vec3,
    pub v: Vec3,
    pub q: Quat,
    pub omega: Vec3,
}

impl RodState {
    pub fn at_rest(p: Vec3, q: Quat) -> Self {
        Self {
            p,
            v: Vec3::zeros(),
            q,
            omega: Vec3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.v.iter()).chain(self.omega.iter()).all(|c| c.is_finite())
            && self.q.coords.iter().all(|c| c.is_finite())
    }

    /// Largest absolute component across `p`, `v` and `ω`.
    pub fn max_abs(&self) -> f64 {
        self.p
            .iter()
            .chain(self.v.iter())
            .chain(self.omega.iter())
            .fold(0.0_f64, |m, c| m.max(c.abs()))
    }

    /// `(p, v, q, ω)` flattened in that order with `q` as `(w, x, y, z)`.
    pub fn to_array(&self) -> [f64; 13] {
        [
            self.p.x, self.p.y, self.p.z, self.v.x, self.v.y, self.v.z, self.q.w, self.q.i, self.q.j,
            self.q.k, self.omega.x, self.omega.y, self.omega.z,
        ]
    }
}

/// World-frame vector from the center of mass to the `+` end.
pub fn rod_axis_world(state: &RodState, spec: &RodSpec) -> Vec3 {
    half_axis(&state.q, spec.half_length)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemState {
    pub rods: Vec<RodState>,
    pub t: f64,
}

impl SystemState {
    pub fn new(rods: Vec<RodState>) -> Self {
        Self { rods, t: 0.0 }
    }
}

/// External force applied at `arm` (world frame, relative to the center of
/// mass). Zero when absent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub force: Vec3,
    pub arm: Vec3,
}

impl ControlInput {
    pub fn is_zero(&self) -> bool {
        self.force == Vec3::zeros()
    }
}

/// Time-ordered states plus the controls applied between consecutive states.
///
/// `controls[k]` holds the raw per-rod inputs applied while stepping from
/// `states[k]` to `states[k + 1]`; an empty vector means no control.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub config_ref: String,
    pub dt: f64,
    pub states: Vec<SystemState>,
    pub controls: Vec<Vec<ControlInput>>,
}

impl Trajectory {
    pub fn new(config_ref: impl Into<String>, dt: f64, initial: SystemState) -> Self {
        Self {
            config_ref: config_ref.into(),
            dt,
            states: vec![initial],
            controls: Vec::new(),
        }
    }

    pub fn n_steps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn initial(&self) -> &SystemState {
        &self.states[0]
    }

    /// Control applied to `rod` at `step`, zero when none was recorded.
    pub fn control(&self, step: usize, rod: usize) -> ControlInput {
        self.controls
            .get(step)
            .and_then(|c| c.get(rod))
            .copied()
            .unwrap_or_default()
    }

    /// Steps at which at least one rod received a nonzero control force.
    pub fn control_events(&self) -> usize {
        self.controls
            .iter()
            .filter(|c| c.iter().any(|u| !u.is_zero()))
            .count()
    }

    pub fn has_controls(&self) -> bool {
        self.control_events() > 0
    }
}
