//! Scenario presets: the single-rod element and the six-strut icosahedron.

use std::f64::consts::FRAC_PI_2;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::math::{Quat, Vec3};
use crate::state::{RodState, SystemState};
use crate::topology::{AttachmentRef, End, RodSpec, SpringSpec, SystemConfig, TopologyGraph};

pub const DEFAULT_DT: f64 = 0.002;

pub const SIMPLE_STIFFNESS: f64 = 100.0;
pub const SIMPLE_DAMPING: f64 = 10.0;
pub const SIMPLE_MASS: f64 = 10.0;
pub const SIMPLE_HALF_LENGTH: f64 = 1.0;
pub const SIMPLE_RADIUS: f64 = 0.05;
pub const SIMPLE_REST_LENGTHS: [f64; 2] = [1.0, 1.414];

pub const ICOSA_STRUT_LENGTH: f64 = 1.04;
pub const ICOSA_REST_LENGTH: f64 = 0.637;
pub const ICOSA_RADIUS: f64 = 0.02;
pub const ICOSA_STIFFNESS: f64 = 100.0;
pub const ICOSA_DAMPING: f64 = 10.0;
pub const ICOSA_MASS: f64 = 10.0;
pub const GRAVITY: f64 = -9.81;

/// A configuration together with its equilibrium pose.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: SystemConfig,
    pub rest: SystemState,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimpleOptions {
    pub stiffness: f64,
    pub damping: f64,
    pub mass: f64,
    pub anchors: [Vec3; 2],
    pub dt: f64,
}

impl Default for SimpleOptions {
    fn default() -> Self {
        Self {
            stiffness: SIMPLE_STIFFNESS,
            damping: SIMPLE_DAMPING,
            mass: SIMPLE_MASS,
            anchors: [Vec3::new(-2.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 1.0)],
            dt: DEFAULT_DT,
        }
    }
}

/// Orientation taking the local `+z` axis onto world `+x`.
fn along_x() -> Quat {
    Quat::from_axis_angle(&Vec3::y_axis(), FRAC_PI_2)
}

/// Orientation taking the local `+z` axis onto world `+y`.
fn along_y() -> Quat {
    Quat::from_axis_angle(&Vec3::x_axis(), -FRAC_PI_2)
}

/// One 2 m rod lying along `x`, its `-` end tied to anchor 0 and its `+` end
/// tied to anchor 1. No gravity.
pub fn simple() -> Scenario {
    simple_with(SimpleOptions::default()).expect("default simple preset is valid")
}

pub fn simple_with(opts: SimpleOptions) -> Result<Scenario> {
    let rod = RodSpec::solid_cylinder(SIMPLE_HALF_LENGTH, SIMPLE_RADIUS, opts.mass);
    let springs = vec![
        SpringSpec {
            stiffness: opts.stiffness,
            damping: opts.damping,
            rest_length: SIMPLE_REST_LENGTHS[0],
            a: AttachmentRef::Anchor { anchor: 0 },
            b: AttachmentRef::RodEnd { rod: 0, end: End::Minus },
        },
        SpringSpec {
            stiffness: opts.stiffness,
            damping: opts.damping,
            rest_length: SIMPLE_REST_LENGTHS[1],
            a: AttachmentRef::RodEnd { rod: 0, end: End::Plus },
            b: AttachmentRef::Anchor { anchor: 1 },
        },
    ];
    let topology = TopologyGraph::new(vec![rod], springs, opts.anchors.to_vec())?;
    let config = SystemConfig::new("simple", Vec3::zeros(), opts.dt, topology)?;
    let rest = SystemState::new(vec![RodState::at_rest(Vec3::zeros(), along_x())]);
    Ok(Scenario { config, rest })
}

/// Strut centers and orientations of the expanded-octahedron icosahedron:
/// three pairs of parallel struts along `z`, `x` and `y`, with parallel
/// partners separated by half a strut length.
fn icosa_pose() -> Vec<RodState> {
    let a = ICOSA_STRUT_LENGTH / 2.0;
    let b = a / 2.0;
    let id = Quat::identity();
    vec![
        RodState::at_rest(Vec3::new(0.0, b, 0.0), id),
        RodState::at_rest(Vec3::new(0.0, -b, 0.0), id),
        RodState::at_rest(Vec3::new(0.0, 0.0, b), along_x()),
        RodState::at_rest(Vec3::new(0.0, 0.0, -b), along_x()),
        RodState::at_rest(Vec3::new(b, 0.0, 0.0), along_y()),
        RodState::at_rest(Vec3::new(-b, 0.0, 0.0), along_y()),
    ]
}

/// The 24 cables: every pair of strut ends at the cable distance
/// `b·√6` (the icosahedron edges minus the six joining parallel partners).
fn icosa_cables(pose: &[RodState]) -> Vec<(AttachmentRef, AttachmentRef)> {
    let a = ICOSA_STRUT_LENGTH / 2.0;
    let cable = a / 2.0 * 6f64.sqrt();
    let ends: Vec<(usize, End, Vec3)> = pose
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            let r = s.q * Vec3::new(0.0, 0.0, a);
            [(i, End::Plus, s.p + r), (i, End::Minus, s.p - r)]
        })
        .collect();
    let mut cables = Vec::new();
    for (i, (ra, ea, pa)) in ends.iter().enumerate() {
        for (rb, eb, pb) in &ends[i + 1..] {
            if ra != rb && ((pa - pb).norm() - cable).abs() < 1e-9 {
                cables.push((
                    AttachmentRef::RodEnd { rod: *ra, end: *ea },
                    AttachmentRef::RodEnd { rod: *rb, end: *eb },
                ));
            }
        }
    }
    cables
}

fn icosa_from_values(name: &str, masses: &[f64], stiffness: &[f64], damping: &[f64]) -> Result<Scenario> {
    let pose = icosa_pose();
    let cables = icosa_cables(&pose);
    debug_assert_eq!(cables.len(), 24);
    let rods = masses
        .iter()
        .map(|&m| RodSpec::solid_cylinder(ICOSA_STRUT_LENGTH / 2.0, ICOSA_RADIUS, m))
        .collect();
    let springs = cables
        .into_iter()
        .enumerate()
        .map(|(i, (a, b))| SpringSpec {
            stiffness: stiffness[i],
            damping: damping[i],
            rest_length: ICOSA_REST_LENGTH,
            a,
            b,
        })
        .collect();
    let topology = TopologyGraph::new(rods, springs, Vec::new())?;
    let config = SystemConfig::new(name, Vec3::new(0.0, 0.0, GRAVITY), DEFAULT_DT, topology)?;
    Ok(Scenario {
        config,
        rest: SystemState::new(pose),
    })
}

/// Six rods, 24 cables, every element with the nominal values.
pub fn icosa_uniform() -> Scenario {
    icosa_from_values(
        "icosa_uniform",
        &[ICOSA_MASS; 6],
        &[ICOSA_STIFFNESS; 24],
        &[ICOSA_DAMPING; 24],
    )
    .expect("uniform icosahedron is valid")
}

/// Icosahedron with every rod mass, cable stiffness and cable damping
/// perturbed by `N(0, (sigma_frac · nominal)²)` (54 values). Non-positive
/// draws are redrawn. Rod inertia follows the perturbed mass.
pub fn icosa_nonuniform(seed: u64, sigma_frac: f64) -> Result<Scenario> {
    if !(sigma_frac.is_finite() && sigma_frac >= 0.0) {
        return Err(Error::InvalidConfig(format!("sigma must be >= 0, got {sigma_frac}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut draw = |nominal: f64| loop {
        let v = nominal * (1.0 + sigma_frac * noise.sample(&mut rng));
        if v > 0.0 {
            break v;
        }
    };
    let masses: Vec<f64> = (0..6).map(|_| draw(ICOSA_MASS)).collect();
    let stiffness: Vec<f64> = (0..24).map(|_| draw(ICOSA_STIFFNESS)).collect();
    let damping: Vec<f64> = (0..24).map(|_| draw(ICOSA_DAMPING)).collect();
    icosa_from_values("icosa_nonuniform", &masses, &stiffness, &damping)
}

/// Resolve a preset by name. `icosa_nonuniform` uses `seed` and `sigma`.
pub fn by_name(name: &str, seed: u64, sigma: f64) -> Result<Scenario> {
    match name {
        "simple" => Ok(simple()),
        "icosa_uniform" => Ok(icosa_uniform()),
        "icosa_nonuniform" => icosa_nonuniform(seed, sigma),
        other => Err(Error::InvalidConfig(format!("unknown preset `{other}`"))),
    }
}

pub const PRESET_NAMES: [&str; 3] = ["simple", "icosa_uniform", "icosa_nonuniform"];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::endpoint_kinematics;

    #[test]
    fn icosahedron_incidence() {
        let s = icosa_uniform();
        assert_eq!(s.config.rods().len(), 6);
        assert_eq!(s.config.springs().len(), 24);
        for inc in s.config.topology.incidence() {
            assert_eq!(inc.at(End::Plus).len(), 4);
            assert_eq!(inc.at(End::Minus).len(), 4);
            assert_eq!(inc.springs().len(), 8);
        }
    }

    #[test]
    fn icosahedron_geometry() {
        let s = icosa_uniform();
        for (st, spec) in s.rest.rods.iter().zip(s.config.rods()) {
            let e = endpoint_kinematics(st, spec);
            assert!(((e.p_plus - e.p_minus).norm() - 1.04).abs() < 1e-12);
        }
        // cable length sits within a tenth of a millimetre of the rest length
        let cable = 0.26 * 6f64.sqrt();
        assert!((cable - ICOSA_REST_LENGTH).abs() < 2e-4);
    }

    #[test]
    fn simple_initial_spring_lengths() {
        let s = simple();
        let e = endpoint_kinematics(&s.rest.rods[0], &s.config.rods()[0]);
        let a = s.config.topology.anchors();
        assert!(((e.p_minus - a[0]).norm() - 1.0).abs() < 1e-12);
        assert!(((a[1] - e.p_plus).norm() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn nonuniform_is_seeded_and_positive() {
        let a = icosa_nonuniform(3, 0.2).unwrap();
        let b = icosa_nonuniform(3, 0.2).unwrap();
        let c = icosa_nonuniform(4, 0.2).unwrap();
        assert_eq!(a.config, b.config);
        assert_ne!(a.config, c.config);
        let p = crate::params::EngineParams::from_config(&a.config);
        assert_eq!(p.core_values().len(), 54);
        p.check_positive().unwrap();
    }
}
