//! Invariant checks shared by the property tests and the acceptance run.
//! Each returns the measured error so callers pick the tolerance.

#![allow(dead_code)]

use rodspring::ident::{build_features, fit_closed_form, fit_iterative, loss_and_gradient, FitConfig, ParamLayout};
use rodspring::koopman::{fit_koopman, koopman_rollout, KoopmanOptions};
use rodspring::math::rotation_matrix;
use rodspring::presets::{self, Scenario};
use rodspring::sim::{
    angular_from_torque, observe_springs, rollout, sample_dataset, spring_force, spring_force_projected,
    spring_observation, transitions, Controls, DatasetSpec, InitDistribution,
};
use rodspring::{EngineParams, Quat, RodParams, SpringSpec, SystemConfig, SystemState, Tying, Vec3};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Icosahedron without gravity or damping.
pub fn floating_undamped() -> Scenario {
    let sc = presets::icosa_uniform();
    let springs: Vec<SpringSpec> = sc
        .config
        .springs()
        .iter()
        .map(|s| SpringSpec { damping: 0.0, ..s.clone() })
        .collect();
    let topo = sc.config.topology.with_values(sc.config.rods().to_vec(), springs).unwrap();
    let config = SystemConfig::new("floating", Vec3::zeros(), sc.config.dt, topo).unwrap();
    Scenario { config, rest: sc.rest }
}

pub fn jittered(sc: &Scenario, seed: u64) -> SystemState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    InitDistribution::default().sample(&sc.rest, &sc.config, &mut rng)
}

fn momentum(config: &SystemConfig, s: &SystemState) -> Vec3 {
    s.rods.iter().zip(config.rods()).map(|(r, spec)| r.v * spec.mass).sum()
}

fn energy(config: &SystemConfig, s: &SystemState) -> f64 {
    let kinetic: f64 = s
        .rods
        .iter()
        .zip(config.rods())
        .map(|(r, spec)| {
            let rot = rotation_matrix(&r.q);
            let local = rot.transpose() * r.omega;
            let spin = spec.i11 * (local.x.powi(2) + local.y.powi(2)) + spec.i33 * local.z.powi(2);
            0.5 * spec.mass * r.v.norm_squared() + 0.5 * spin
        })
        .sum();
    let elastic: f64 = observe_springs(config, s)
        .unwrap()
        .iter()
        .zip(config.springs())
        .map(|(o, spec)| 0.5 * spec.stiffness * (o.length() - spec.rest_length).powi(2))
        .sum();
    let gravity: f64 = s
        .rods
        .iter()
        .zip(config.rods())
        .map(|(r, spec)| -spec.mass * config.gravity.dot(&r.p))
        .sum();
    kinetic + elastic + gravity
}

/// Change of total linear momentum over `n` floating steps.
pub fn momentum_drift(seed: u64, n: usize) -> f64 {
    let sc = floating_undamped();
    let params = EngineParams::from_config(&sc.config);
    let t = rollout(&jittered(&sc, seed), &sc.config, &params, n, Controls::None).unwrap();
    let p0 = momentum(&sc.config, &t.states[0]);
    (momentum(&sc.config, t.states.last().unwrap()) - p0).norm()
}

/// Worst relative energy deviation over `n` undamped steps.
pub fn energy_error(seed: u64, n: usize) -> f64 {
    let sc = floating_undamped();
    let params = EngineParams::from_config(&sc.config);
    let t = rollout(&jittered(&sc, seed), &sc.config, &params, n, Controls::None).unwrap();
    let e0 = energy(&sc.config, &t.states[0]);
    t.states
        .iter()
        .map(|s| ((energy(&sc.config, s) - e0) / e0).abs())
        .fold(0.0, f64::max)
}

/// Worst deviation of a quaternion norm from one.
pub fn quaternion_norm_error(seed: u64, n: usize) -> f64 {
    let sc = presets::icosa_uniform();
    let params = EngineParams::from_config(&sc.config);
    let t = rollout(&jittered(&sc, seed), &sc.config, &params, n, Controls::None).unwrap();
    t.states
        .iter()
        .flat_map(|s| s.rods.iter().map(|r| (r.q.quaternion().norm() - 1.0).abs()))
        .fold(0.0, f64::max)
}

fn rotate_state(rot: &Quat, s: &SystemState) -> SystemState {
    let mut out = s.clone();
    for r in &mut out.rods {
        r.p = rot * r.p;
        r.v = rot * r.v;
        r.q = rot * r.q;
        r.omega = rot * r.omega;
    }
    out
}

/// Largest state difference between rotating then rolling out and
/// rolling out then rotating.
pub fn equivariance_error(sc: &Scenario, rot: Quat, seed: u64, steps: usize) -> f64 {
    let params = EngineParams::from_config(&sc.config);
    let anchors: Vec<Vec3> = sc.config.topology.anchors().iter().map(|a| rot * a).collect();
    let topo = sc.config.topology.with_anchors(anchors).unwrap();
    let turned = SystemConfig::new("turned", rot * sc.config.gravity, sc.config.dt, topo).unwrap();
    let s0 = jittered(sc, seed);
    let a = rollout(&s0, &sc.config, &params, steps, Controls::None).unwrap();
    let b = rollout(&rotate_state(&rot, &s0), &turned, &params, steps, Controls::None).unwrap();
    let (x, y) = (a.states.last().unwrap(), b.states.last().unwrap());
    x.rods
        .iter()
        .zip(&y.rods)
        .map(|(r, t)| {
            let dq = (rot * r.q).angle_to(&t.q);
            ((rot * r.p) - t.p)
                .amax()
                .max(((rot * r.v) - t.v).amax())
                .max(((rot * r.omega) - t.omega).amax())
                .max(dq)
        })
        .fold(0.0, f64::max)
}

/// Mismatch between the scalar and the projected spring force, relative to
/// the force size. `None` for degenerate springs.
pub fn force_path_mismatch(pa: Vec3, va: Vec3, pb: Vec3, vb: Vec3, k: f64, c: f64, rest: f64) -> Option<f64> {
    let obs = spring_observation(pa, va, pb, vb).ok()?;
    if obs.length() <= 1e-3 {
        return None;
    }
    let on_a = spring_force(&obs, k, c, rest);
    let on_b = spring_force_projected(&obs, k, c, rest);
    Some((on_a + on_b).amax() / (1.0 + on_a.amax()))
}

/// Difference between the full inverse-inertia response to a torque
/// perpendicular to the rod and `tau / I11`, relative to the torque size.
pub fn torque_identity_error(rot: Quat, t: [f64; 2], i11: f64, i33: f64) -> f64 {
    let rod = RodParams { mass: 1.0, i11, i33 };
    let rm = rotation_matrix(&rot);
    let tau = rm * Vec3::new(t[0], t[1], 0.0);
    let alpha = angular_from_torque(&rot, &rod, &tau);
    (alpha - tau / i11).amax() / (1.0 + tau.amax() / i11)
}

pub fn simple_batch(n_traj: usize, n_steps: usize, seed: u64) -> (Scenario, rodspring::ident::TransitionBatch) {
    let sc = presets::simple();
    let truth = EngineParams::from_config(&sc.config);
    let data = sample_dataset(&sc.config, &sc.rest, &truth, &DatasetSpec::new(n_traj, 0, 0, n_steps, seed)).unwrap();
    let batch = build_features(transitions(&data.train), &sc.config).unwrap();
    (sc, batch)
}

/// Worst gap between analytic and central-difference gradients, relative
/// to the largest gradient component.
pub fn gradient_error(w: &[f64], seed: u64) -> f64 {
    let (sc, batch) = simple_batch(2, 50, seed);
    let layout = ParamLayout::new(&sc.config, Tying::Single, false);
    let items: Vec<usize> = (0..batch.len()).collect();
    let (_, g) = loss_and_gradient(&batch, &layout, w, Some(&items));
    // Smaller steps drown in the rounding of O(1) state values.
    let h = 1e-4;
    let scale = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    (0..w.len())
        .map(|j| {
            let (mut up, mut dn) = (w.to_vec(), w.to_vec());
            up[j] += h;
            dn[j] -= h;
            let fd = (loss_and_gradient(&batch, &layout, &up, Some(&items)).0
                - loss_and_gradient(&batch, &layout, &dn, Some(&items)).0)
                / (2.0 * h);
            (fd - g[j]).abs() / scale
        })
        .fold(0.0, f64::max)
}

/// Worst relative gap between closed-form and iterative ratio estimates.
pub fn closed_vs_iterative_gap() -> f64 {
    let (sc, batch) = simple_batch(20, 1000, 11);
    let layout = ParamLayout::new(&sc.config, Tying::Single, false);
    let closed = fit_closed_form(&batch, &layout).unwrap().estimates;
    let iter = fit_iterative(&batch, &layout, &FitConfig::default()).unwrap().estimates;
    closed
        .named()
        .into_iter()
        .map(|(name, c)| (iter.get(&name).unwrap() - c).abs() / c.abs())
        .fold(0.0, f64::max)
}

/// Koopman fit residual on the simple preset and the largest position
/// error when replaying a training trajectory.
pub fn koopman_span() -> (f64, f64) {
    let sc = presets::simple();
    let truth = EngineParams::from_config(&sc.config);
    let data = sample_dataset(&sc.config, &sc.rest, &truth, &DatasetSpec::new(10, 0, 0, 300, 5)).unwrap();
    let batch = build_features(transitions(&data.train), &sc.config).unwrap();
    let fit = fit_koopman(&batch, &sc.config, &KoopmanOptions::default()).unwrap();
    let reference = &data.train[3];
    let predicted = koopman_rollout(&fit.model, reference.initial(), &sc.config, 100).unwrap();
    let replay = predicted
        .states
        .iter()
        .zip(&reference.states)
        .map(|(a, b)| (a.rods[0].p - b.rods[0].p).amax())
        .fold(0.0, f64::max);
    (fit.max_residual_rms(), replay)
}

pub fn rotation(axis: [f64; 3], angle: f64) -> Option<Quat> {
    let axis = Vec3::from(axis);
    (axis.norm() > 1e-3).then(|| Quat::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle))
}
