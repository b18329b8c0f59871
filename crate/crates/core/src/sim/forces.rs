use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::params::EngineParams;
use crate::state::{rod_axis_world, RodState, SystemState};
use crate::topology::{AttachmentRef, End, RodSpec, SystemConfig};

/// Endpoints closer than this have no usable spring direction.
pub const DEGENERATE_LENGTH: f64 = 1e-9;

/// Positions and velocities of both rod ends.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EndpointKinematics {
    pub p_plus: Vec3,
    pub v_plus: Vec3,
    pub p_minus: Vec3,
    pub v_minus: Vec3,
}

impl EndpointKinematics {
    pub fn at(&self, end: End) -> (Vec3, Vec3) {
        match end {
            End::Plus => (self.p_plus, self.v_plus),
            End::Minus => (self.p_minus, self.v_minus),
        }
    }
}

/// `p± = p ± r`, `v± = v ± ω × r` with `r` the world half-axis.
pub fn endpoint_kinematics(state: &RodState, spec: &RodSpec) -> EndpointKinematics {
    let r = rod_axis_world(state, spec);
    let spin = state.omega.cross(&r);
    EndpointKinematics {
        p_plus: state.p + r,
        v_plus: state.v + spin,
        p_minus: state.p - r,
        v_minus: state.v - spin,
    }
}

/// Relative position and velocity of a spring's `b` end with respect to its
/// `a` end.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpringObservation {
    pub dp: Vec3,
    pub dv: Vec3,
}

impl SpringObservation {
    pub fn new(dp: Vec3, dv: Vec3) -> Result<Self> {
        let length = dp.norm();
        if !(length >= DEGENERATE_LENGTH) {
            return Err(Error::DegenerateSpring {
                spring: None,
                length,
            });
        }
        Ok(Self { dp, dv })
    }

    pub fn length(&self) -> f64 {
        self.dp.norm()
    }

    pub fn direction(&self) -> Vec3 {
        self.dp / self.length()
    }

    /// Rate of change of the spring length.
    pub fn length_rate(&self) -> f64 {
        self.dv.dot(&self.direction())
    }

    /// Projection onto the spring axis.
    pub fn reduce(&self, rest_length: f64) -> ReducedSpring {
        let direction = self.direction();
        ReducedSpring {
            extension: self.length() - rest_length,
            rate: self.dv.dot(&direction),
            direction,
        }
    }
}

/// One-dimensional spring state: signed extension, extension rate and the
/// unit axis from `a` to `b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReducedSpring {
    pub extension: f64,
    pub rate: f64,
    pub direction: Vec3,
}

impl ReducedSpring {
    /// Signed tension `K·(ℓ - ℓ_rest) + c·ℓ̇`; positive when pulling the ends
    /// together.
    pub fn tension(&self, stiffness: f64, damping: f64) -> f64 {
        stiffness * self.extension + damping * self.rate
    }

    /// Force on the `a` end. The `b` end receives the negation.
    pub fn force_on_a(&self, stiffness: f64, damping: f64) -> Vec3 {
        self.direction * self.tension(stiffness, damping)
    }
}

pub fn spring_observation(p_a: Vec3, v_a: Vec3, p_b: Vec3, v_b: Vec3) -> Result<SpringObservation> {
    SpringObservation::new(p_b - p_a, v_b - v_a)
}

/// Force on endpoint `a`, computed along the spring axis.
pub fn spring_force(obs: &SpringObservation, stiffness: f64, damping: f64, rest_length: f64) -> Vec3 {
    obs.reduce(rest_length).force_on_a(stiffness, damping)
}

/// Force on endpoint `b` from the vector form `-K Δp̂ - c Δv̂`, where
/// `Δp̂ = Δp - ℓ_rest·u` and `Δv̂ = (Δv·u) u`.
pub fn spring_force_projected(obs: &SpringObservation, stiffness: f64, damping: f64, rest_length: f64) -> Vec3 {
    let u = obs.direction();
    let dp_hat = obs.dp - u * rest_length;
    let dv_hat = u * obs.dv.dot(&u);
    -dp_hat * stiffness - dv_hat * damping
}

fn attachment_kinematics(at: AttachmentRef, ends: &[EndpointKinematics], anchors: &[Vec3]) -> (Vec3, Vec3) {
    match at {
        AttachmentRef::RodEnd { rod, end } => ends[rod].at(end),
        AttachmentRef::Anchor { anchor } => (anchors[anchor], Vec3::zeros()),
    }
}

/// Observations of every spring, in topology order.
pub fn observe_springs(config: &SystemConfig, state: &SystemState) -> Result<Vec<SpringObservation>> {
    let ends: Vec<EndpointKinematics> = state
        .rods
        .iter()
        .zip(config.rods())
        .map(|(s, spec)| endpoint_kinematics(s, spec))
        .collect();
    let anchors = config.topology.anchors();
    config
        .springs()
        .iter()
        .enumerate()
        .map(|(id, s)| {
            let (pa, va) = attachment_kinematics(s.a, &ends, anchors);
            let (pb, vb) = attachment_kinematics(s.b, &ends, anchors);
            spring_observation(pa, va, pb, vb).map_err(|e| match e {
                Error::DegenerateSpring { length, .. } => Error::DegenerateSpring {
                    spring: Some(id),
                    length,
                },
                other => other,
            })
        })
        .collect()
}

/// Reduced (1D) form of every spring, in topology order.
pub fn reduce_springs(config: &SystemConfig, state: &SystemState) -> Result<Vec<ReducedSpring>> {
    Ok(observe_springs(config, state)?
        .iter()
        .zip(config.springs())
        .map(|(o, s)| o.reduce(s.rest_length))
        .collect())
}

/// Aggregate spring force on each end of one rod.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EndForces {
    pub plus: Vec3,
    pub minus: Vec3,
}

/// Sum the spring forces incident to every rod end.
pub fn aggregate_endpoint_forces(
    config: &SystemConfig,
    reduced: &[ReducedSpring],
    params: &EngineParams,
) -> Vec<EndForces> {
    let on_a: Vec<Vec3> = reduced
        .iter()
        .zip(&params.springs)
        .map(|(r, p)| r.force_on_a(p.stiffness, p.damping))
        .collect();
    config
        .topology
        .incidence()
        .iter()
        .map(|inc| {
            let sum = |end: End| {
                inc.at(end)
                    .iter()
                    .fold(Vec3::zeros(), |acc, i| acc + on_a[i.spring] * i.sign)
            };
            EndForces {
                plus: sum(End::Plus),
                minus: sum(End::Minus),
            }
        })
        .collect()
}
