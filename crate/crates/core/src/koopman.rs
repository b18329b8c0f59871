//! Koopman-style baseline: a linear map from a quadratic lift of per-rod
//! spring observations to accelerations, integrated like the engine.
//!
//! Base variables per rod, in order: the world half-axis `r`, the aggregate
//! elongation vectors `Δp₁, Δp₂` and projected relative velocities
//! `Δv₁, Δv₂` of the `+` and `-` ends. Each end sums, over its springs,
//! `(ℓ - rest)·n` and `ℓ̇·n` with `n` pointing from the far attachment to
//! the rod end, so the spring force on the end is `-KΔp - cΔv`.
//!
//! The lift is `[1, z₀…z₁₄, zᵢzⱼ for i ≤ j]`, 136 features. Targets are
//! `(a - g, α)`; gravity is added back at rollout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ident::{TransitionBatch, TransitionSample};
use crate::linalg::QrAccumulator;
use crate::math::Vec3;
use crate::sim::{reduce_springs, rollout_with, AccelerationModel, Controls};
use crate::state::{rod_axis_world, ControlInput, SystemState, Trajectory};
use crate::topology::{End, SystemConfig};

pub const BASE_VARIABLES: usize = 15;

/// Number of monomials of degree at most 2 in `n` variables.
pub const fn feature_count(n: usize) -> usize {
    1 + n + n * (n + 1) / 2
}

pub const FEATURES: usize = feature_count(BASE_VARIABLES);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KoopmanBasisSpec {
    pub max_degree: usize,
    pub base_variables: Vec<String>,
    pub features: usize,
}

impl Default for KoopmanBasisSpec {
    fn default() -> Self {
        let mut names = Vec::with_capacity(BASE_VARIABLES);
        for group in ["r", "dp1", "dp2", "dv1", "dv2"] {
            for axis in ["x", "y", "z"] {
                names.push(format!("{group}_{axis}"));
            }
        }
        Self {
            max_degree: 2,
            base_variables: names,
            features: FEATURES,
        }
    }
}

/// The 15 base variables of one rod.
pub fn base_variables(config: &SystemConfig, sample: &TransitionSample, rod: usize) -> [f64; BASE_VARIABLES] {
    let inc = &config.topology.incidence()[rod];
    let mut dp = [Vec3::zeros(); 2];
    let mut dv = [Vec3::zeros(); 2];
    for (k, end) in [End::Plus, End::Minus].into_iter().enumerate() {
        for i in inc.at(end) {
            let s = &sample.springs[i.spring];
            // direction runs a→b; the far attachment lies along σ·direction
            dp[k] -= s.direction * (i.sign * s.extension);
            dv[k] -= s.direction * (i.sign * s.rate);
        }
    }
    let r = sample.rods[rod].lever;
    let mut z = [0.0; BASE_VARIABLES];
    for (j, v) in [r, dp[0], dp[1], dv[0], dv[1]].iter().enumerate() {
        z[3 * j..3 * j + 3].copy_from_slice(v.as_slice());
    }
    z
}

/// Quadratic lift in the documented order.
pub fn lift(z: &[f64]) -> Vec<f64> {
    let n = z.len();
    let mut out = Vec::with_capacity(feature_count(n));
    out.push(1.0);
    out.extend_from_slice(z);
    for i in 0..n {
        for j in i..n {
            out.push(z[i] * z[j]);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KoopmanOptions {
    /// One operator per rod instead of one shared by all rods.
    pub per_rod: bool,
    /// Tikhonov damping; `None` reports rank deficiency instead.
    pub ridge: Option<f64>,
    /// Singular values below `rtol · σ_max` are dropped from the solve.
    pub rtol: f64,
}

impl Default for KoopmanOptions {
    fn default() -> Self {
        Self {
            per_rod: true,
            ridge: None,
            rtol: 1e-10,
        }
    }
}

impl KoopmanOptions {
    pub const RIDGE: f64 = 1e-8;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KoopmanModel {
    pub basis: KoopmanBasisSpec,
    pub per_rod: bool,
    /// One `6 × 136` row-major matrix per rod, or a single shared one.
    /// Rows are `a_x, a_y, a_z, α_x, α_y, α_z`.
    pub weights: Vec<Vec<f64>>,
}

impl KoopmanModel {
    pub fn zeros(n_rods: usize, per_rod: bool) -> Self {
        let count = if per_rod { n_rods } else { 1 };
        Self {
            basis: KoopmanBasisSpec::default(),
            per_rod,
            weights: vec![vec![0.0; 6 * FEATURES]; count],
        }
    }

    fn matrix(&self, rod: usize) -> &[f64] {
        &self.weights[if self.per_rod { rod } else { 0 }]
    }

    /// `(a - g, α)` for one lifted feature vector.
    pub fn predict(&self, rod: usize, phi: &[f64]) -> (Vec3, Vec3) {
        let w = self.matrix(rod);
        let mut out = [0.0; 6];
        for (k, o) in out.iter_mut().enumerate() {
            *o = w[k * FEATURES..(k + 1) * FEATURES].iter().zip(phi).map(|(a, b)| a * b).sum();
        }
        (Vec3::new(out[0], out[1], out[2]), Vec3::new(out[3], out[4], out[5]))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("koopman model: {e}")))?;
        if model.basis.features != FEATURES || model.weights.iter().any(|w| w.len() != 6 * FEATURES) {
            return Err(Error::InvalidConfig("koopman model has the wrong shape".into()));
        }
        Ok(model)
    }
}

impl AccelerationModel for KoopmanModel {
    fn accelerations(
        &self,
        config: &SystemConfig,
        state: &SystemState,
        _controls: &[ControlInput],
    ) -> Result<Vec<(Vec3, Vec3)>> {
        let springs = reduce_springs(config, state)?;
        let rods = state
            .rods
            .iter()
            .enumerate()
            .map(|(i, rs)| crate::ident::RodSample {
                lever: rod_axis_world(rs, &config.rods()[i]),
                control: ControlInput::default(),
                now: *rs,
                next: *rs,
            })
            .collect();
        let sample = TransitionSample { springs, rods };
        Ok((0..state.rods.len())
            .map(|r| {
                let (a, alpha) = self.predict(r, &lift(&base_variables(config, &sample, r)));
                (a + config.gravity, alpha)
            })
            .collect())
    }
}

#[derive(Clone, Debug)]
pub struct KoopmanFit {
    pub model: KoopmanModel,
    /// Rows, numerical rank and per-output RMS residual of each operator.
    pub rows: Vec<usize>,
    pub rank: Vec<usize>,
    pub residual_rms: Vec<Vec<f64>>,
}

impl KoopmanFit {
    pub fn max_residual_rms(&self) -> f64 {
        self.residual_rms.iter().flatten().fold(0.0, |m, &x| m.max(x))
    }
}

/// Least-squares fit of the lifted features to `(a - g, α)`.
///
/// The lift has exact linear dependencies (for instance `Σ rᵢ²` is the
/// constant squared half-length), so the solve is minimum-norm over the
/// numerically nonzero singular values. Fewer rows than features is
/// reported as [`Error::RankDeficient`] unless ridge damping is enabled.
pub fn fit_koopman(batch: &TransitionBatch, config: &SystemConfig, opts: &KoopmanOptions) -> Result<KoopmanFit> {
    let n_rods = config.rods().len();
    let n_ops = if opts.per_rod { n_rods } else { 1 };
    let mut accs: Vec<QrAccumulator> = (0..n_ops).map(|_| QrAccumulator::new(FEATURES, 6)).collect();
    for sample in &batch.samples {
        for rod in 0..n_rods {
            let phi = lift(&base_variables(config, sample, rod));
            let rs = &sample.rods[rod];
            let a = rs.linear_acceleration(batch.dt) - batch.gravity;
            let w = rs.angular_acceleration(batch.dt);
            let target = [a.x, a.y, a.z, w.x, w.y, w.z];
            accs[if opts.per_rod { rod } else { 0 }].push_row(&phi, &target);
        }
    }
    let mut model = KoopmanModel::zeros(n_rods, opts.per_rod);
    let mut fit_rows = Vec::new();
    let mut rank = Vec::new();
    let mut residual_rms = Vec::new();
    for (k, mut acc) in accs.into_iter().enumerate() {
        let rows = acc.rows();
        if rows < FEATURES && opts.ridge.is_none() {
            return Err(Error::RankDeficient {
                rank: rows,
                unknowns: FEATURES,
                null_space: vec![format!("operator {k}: {rows} rows for {FEATURES} features")],
            });
        }
        if let Some(lambda) = opts.ridge {
            acc.add_ridge(lambda);
        }
        let sol = acc.solve_min_norm(opts.rtol)?;
        let w = &mut model.weights[k];
        for out in 0..6 {
            for f in 0..FEATURES {
                w[out * FEATURES + f] = sol.coefficients[(f, out)];
            }
        }
        fit_rows.push(rows);
        rank.push(sol.rank);
        residual_rms.push(sol.residual_rms);
    }
    Ok(KoopmanFit {
        model,
        rows: fit_rows,
        rank,
        residual_rms,
    })
}

/// Lift, predict, integrate.
pub fn koopman_rollout(
    model: &KoopmanModel,
    initial: &SystemState,
    config: &SystemConfig,
    n_steps: usize,
) -> Result<Trajectory> {
    rollout_with(model, initial, config, n_steps, Controls::None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ident::build_features;
    use crate::params::EngineParams;
    use crate::presets;
    use crate::sim::{sample_dataset, transitions, DatasetSpec};

    #[test]
    fn feature_count_is_136() {
        assert_eq!(FEATURES, 136);
        assert_eq!(lift(&[0.0; BASE_VARIABLES]).len(), 136);
    }

    #[test]
    fn zero_input_lifts_to_unit_vector() {
        let phi = lift(&[0.0; BASE_VARIABLES]);
        assert_eq!(phi[0], 1.0);
        assert!(phi[1..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn lift_contains_lever_products() {
        let z: Vec<f64> = (0..BASE_VARIABLES).map(|i| (i + 2) as f64).collect();
        let phi = lift(&z);
        for i in 0..3 {
            for j in 3..BASE_VARIABLES {
                assert!(phi.contains(&(z[i] * z[j])));
            }
        }
    }

    #[test]
    fn zero_model_is_ballistic() {
        let sc = presets::icosa_uniform();
        let model = KoopmanModel::zeros(6, true);
        let mut s0 = sc.rest.clone();
        s0.rods[2].v = Vec3::new(0.3, 0.0, 0.0);
        let traj = koopman_rollout(&model, &s0, &sc.config, 50).unwrap();
        let dt = sc.config.dt;
        let last = &traj.states[50].rods[2];
        let v = Vec3::new(0.3, 0.0, -9.81 * 50.0 * dt);
        assert!((last.v - v).norm() < 1e-12);
        assert_eq!(last.omega, Vec3::zeros());
    }

    #[test]
    fn simple_dynamics_lie_in_span() {
        let sc = presets::simple();
        let truth = EngineParams::from_config(&sc.config);
        let data = sample_dataset(&sc.config, &sc.rest, &truth, &DatasetSpec::new(3, 0, 0, 300, 2)).unwrap();
        let batch = build_features(transitions(&data.train), &sc.config).unwrap();
        let fit = fit_koopman(&batch, &sc.config, &KoopmanOptions::default()).unwrap();
        assert!(fit.max_residual_rms() < 1e-6, "{}", fit.max_residual_rms());
        let s0 = &data.train[0].states[0];
        let a = koopman_rollout(&fit.model, s0, &sc.config, 100).unwrap();
        for (x, y) in a.states[100].rods.iter().zip(&data.train[0].states[100].rods) {
            assert!((x.p - y.p).norm() < 1e-6);
        }
    }

    #[test]
    fn too_few_rows_is_rank_deficient() {
        let sc = presets::simple();
        let truth = EngineParams::from_config(&sc.config);
        let data = sample_dataset(&sc.config, &sc.rest, &truth, &DatasetSpec::new(1, 0, 0, 50, 2)).unwrap();
        let batch = build_features(transitions(&data.train), &sc.config).unwrap();
        assert!(matches!(
            fit_koopman(&batch, &sc.config, &KoopmanOptions::default()),
            Err(Error::RankDeficient { .. })
        ));
        let opts = KoopmanOptions { ridge: Some(KoopmanOptions::RIDGE), ..Default::default() };
        assert!(fit_koopman(&batch, &sc.config, &opts).is_ok());
    }

    #[test]
    fn model_json_round_trip() {
        let mut m = KoopmanModel::zeros(2, true);
        m.weights[1][7] = 0.25;
        assert_eq!(KoopmanModel::from_json(&m.to_json()).unwrap(), m);
    }
}
