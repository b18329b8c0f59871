use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::params::EngineParams;
use crate::sim::{aggregate_endpoint_forces, integrate_semi_implicit, reduce_springs, rod_acceleration};
use crate::state::{rod_axis_world, ControlInput, SystemState, Trajectory};
use crate::topology::SystemConfig;

/// Any state component above this magnitude aborts a rollout.
pub const BLOWUP_LIMIT: f64 = 1e6;

/// Maps a system state and raw controls to per-rod `(a, α)`.
pub trait AccelerationModel: Sync {
    fn accelerations(
        &self,
        config: &SystemConfig,
        state: &SystemState,
        controls: &[ControlInput],
    ) -> Result<Vec<(Vec3, Vec3)>>;
}

impl AccelerationModel for EngineParams {
    fn accelerations(
        &self,
        config: &SystemConfig,
        state: &SystemState,
        controls: &[ControlInput],
    ) -> Result<Vec<(Vec3, Vec3)>> {
        let reduced = reduce_springs(config, state)?;
        let forces = aggregate_endpoint_forces(config, &reduced, self);
        Ok(state
            .rods
            .iter()
            .enumerate()
            .map(|(i, rs)| {
                let raw = controls.get(i).copied().unwrap_or_default();
                let scaled = ControlInput {
                    force: raw.force * self.control_scale,
                    arm: raw.arm,
                };
                let r = rod_axis_world(rs, &config.rods()[i]);
                rod_acceleration(&forces[i], &scaled, &r, &rs.q, &self.rods[i], &config.gravity)
            })
            .collect())
    }
}

/// One step of a generic acceleration model followed by integration.
pub fn step_with(
    model: &dyn AccelerationModel,
    config: &SystemConfig,
    state: &SystemState,
    controls: &[ControlInput],
) -> Result<SystemState> {
    let acc = model.accelerations(config, state, controls)?;
    Ok(SystemState {
        rods: state
            .rods
            .iter()
            .zip(&acc)
            .map(|(s, (a, alpha))| integrate_semi_implicit(s, a, alpha, config.dt))
            .collect(),
        t: state.t + config.dt,
    })
}

/// One engine step: observe springs, generate forces, accelerate, integrate.
pub fn step(
    state: &SystemState,
    config: &SystemConfig,
    params: &EngineParams,
    controls: &[ControlInput],
) -> Result<SystemState> {
    step_with(params, config, state, controls)
}

/// A random force on a random rod every `period` steps, applied at a random
/// end of that rod.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PerturbationSchedule {
    pub period: usize,
    pub magnitude: f64,
    pub seed: u64,
}

impl PerturbationSchedule {
    pub const DEFAULT_PERIOD: usize = 100;
    pub const DEFAULT_MAGNITUDE: f64 = 10.0;

    pub fn new(seed: u64) -> Self {
        Self {
            period: Self::DEFAULT_PERIOD,
            magnitude: Self::DEFAULT_MAGNITUDE,
            seed,
        }
    }
}

/// Source of controls during a rollout.
#[derive(Clone, Copy, Debug)]
pub enum Controls<'a> {
    None,
    /// `schedule[k]` is applied at step `k`; missing entries mean zero.
    Recorded(&'a [Vec<ControlInput>]),
    Perturb(PerturbationSchedule),
}

fn perturbation(
    rng: &mut ChaCha8Rng,
    schedule: &PerturbationSchedule,
    state: &SystemState,
    config: &SystemConfig,
) -> Vec<ControlInput> {
    let n = state.rods.len();
    let target = rng.random_range(0..n);
    let dir = loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let norm = v.norm();
        if norm > 1e-12 {
            break v / norm;
        }
    };
    let r = rod_axis_world(&state.rods[target], &config.rods()[target]);
    let arm = if rng.random_bool(0.5) { r } else { -r };
    let mut out = vec![ControlInput::default(); n];
    out[target] = ControlInput {
        force: dir * schedule.magnitude,
        arm,
    };
    out
}

fn guard(state: &SystemState, step: usize) -> Result<()> {
    for (rod, s) in state.rods.iter().enumerate() {
        let m = s.max_abs();
        if !s.is_finite() || m > BLOWUP_LIMIT {
            return Err(Error::BlowUp {
                step,
                rod,
                value: if m.is_finite() { m } else { f64::INFINITY },
            });
        }
    }
    Ok(())
}

/// Roll a generic acceleration model forward `n_steps` steps.
pub fn rollout_with(
    model: &dyn AccelerationModel,
    initial: &SystemState,
    config: &SystemConfig,
    n_steps: usize,
    controls: Controls<'_>,
) -> Result<Trajectory> {
    if n_steps == 0 {
        return Err(Error::InvalidConfig("rollout needs at least one step".into()));
    }
    let mut rng = match controls {
        Controls::Perturb(s) => Some(ChaCha8Rng::seed_from_u64(s.seed)),
        _ => None,
    };
    let mut traj = Trajectory::new(config.digest(), config.dt, initial.clone());
    traj.states.reserve(n_steps);
    traj.controls.reserve(n_steps);
    let mut state = initial.clone();
    for k in 0..n_steps {
        let u = match controls {
            Controls::None => Vec::new(),
            Controls::Recorded(rec) => rec.get(k).cloned().unwrap_or_default(),
            Controls::Perturb(s) => {
                if s.period > 0 && k % s.period == 0 {
                    perturbation(rng.as_mut().expect("seeded"), &s, &state, config)
                } else {
                    Vec::new()
                }
            }
        };
        state = step_with(model, config, &state, &u)?;
        guard(&state, k + 1)?;
        traj.states.push(state.clone());
        traj.controls.push(u);
    }
    Ok(traj)
}

/// Ground-truth rollout with explicit parameters.
pub fn rollout(
    initial: &SystemState,
    config: &SystemConfig,
    params: &EngineParams,
    n_steps: usize,
    controls: Controls<'_>,
) -> Result<Trajectory> {
    params.check_shape(config)?;
    rollout_with(params, initial, config, n_steps, controls)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::sim::{endpoint_kinematics, observe_springs, spring_force};

    #[test]
    fn zero_gravity_rest_is_fixed_point() {
        // springs exactly at rest length
        let s = presets::simple();
        let mut params = EngineParams::from_config(&s.config);
        let a = s.config.topology.anchors();
        let e = endpoint_kinematics(&s.rest.rods[0], &s.config.rods()[0]);
        let rest: Vec<f64> = vec![(e.p_minus - a[0]).norm(), (a[1] - e.p_plus).norm()];
        let springs = s
            .config
            .springs()
            .iter()
            .zip(&rest)
            .map(|(sp, r)| crate::topology::SpringSpec { rest_length: *r, ..sp.clone() })
            .collect();
        let topo = s.config.topology.with_values(s.config.rods().to_vec(), springs).unwrap();
        let cfg = SystemConfig::new("exact", Vec3::zeros(), 0.002, topo).unwrap();
        params.control_scale = 1.0;
        let next = step(&s.rest, &cfg, &params, &[]).unwrap();
        assert_eq!(next.rods, s.rest.rods);
    }

    #[test]
    fn one_step_matches_hand_composition() {
        let s = presets::simple();
        let params = EngineParams::from_config(&s.config);
        let mut st = s.rest.clone();
        st.rods[0].p = Vec3::new(0.05, -0.03, 0.02);
        st.rods[0].v = Vec3::new(0.1, 0.2, -0.1);
        st.rods[0].omega = Vec3::new(0.0, 0.3, 0.1);
        let next = step(&st, &s.config, &params, &[]).unwrap();

        let spec = &s.config.rods()[0];
        let obs = observe_springs(&s.config, &st).unwrap();
        let f0 = spring_force(&obs[0], 100.0, 10.0, s.config.springs()[0].rest_length);
        let f1 = spring_force(&obs[1], 100.0, 10.0, s.config.springs()[1].rest_length);
        // spring 0: rod minus end is `b`; spring 1: rod plus end is `a`
        let plus = f1;
        let minus = -f0;
        let r = rod_axis_world(&st.rods[0], spec);
        let a = (plus + minus) / spec.mass;
        let tau = r.cross(&(plus - minus));
        let alpha = crate::sim::angular_from_torque(&st.rods[0].q, &params.rods[0], &tau);
        let expect = crate::sim::integrate_semi_implicit(&st.rods[0], &a, &alpha, 0.002);
        assert!((next.rods[0].p - expect.p).amax() < 1e-15);
        assert!((next.rods[0].v - expect.v).amax() < 1e-15);
        assert!((next.rods[0].omega - expect.omega).amax() < 1e-15);
    }

    #[test]
    fn single_step_rollout_equals_step() {
        let s = presets::icosa_uniform();
        let params = EngineParams::from_config(&s.config);
        let t = rollout(&s.rest, &s.config, &params, 1, Controls::None).unwrap();
        assert_eq!(t.states.len(), 2);
        assert_eq!(t.states[1], step(&s.rest, &s.config, &params, &[]).unwrap());
    }

    #[test]
    fn perturbation_events_and_determinism() {
        let s = presets::icosa_uniform();
        let params = EngineParams::from_config(&s.config);
        let sched = PerturbationSchedule::new(9);
        let a = rollout(&s.rest, &s.config, &params, 4000, Controls::Perturb(sched)).unwrap();
        let b = rollout(&s.rest, &s.config, &params, 4000, Controls::Perturb(sched)).unwrap();
        assert_eq!(a.control_events(), 40);
        for (k, c) in a.controls.iter().enumerate() {
            assert_eq!(!c.is_empty(), k % 100 == 0);
        }
        assert_eq!(a, b);
    }

    #[test]
    fn blow_up_is_reported() {
        let s = presets::simple();
        let mut params = EngineParams::from_config(&s.config);
        params.springs.iter_mut().for_each(|p| p.damping = 1e5);
        params.rods.iter_mut().for_each(|r| r.mass = 0.1);
        let mut st = s.rest.clone();
        st.rods[0].v = Vec3::new(0.3, 0.1, 0.0);
        let cfg = s.config.with_dt(0.01).unwrap();
        let err = rollout(&st, &cfg, &params, 500, Controls::None).unwrap_err();
        assert!(matches!(err, Error::BlowUp { .. }));
    }
}
