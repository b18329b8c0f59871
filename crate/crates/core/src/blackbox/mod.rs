//! Black-box baselines: fit simulator parameters by matching whole
//! trajectories, with no access to the engine's structure.

mod cma;
mod local;

pub use cma::{cma_es, CmaConfig, Termination};
pub use local::{local_search, LocalConfig, LocalStatus};

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{EngineParams, RodParams, SpringParams};
use crate::sim::{rollout, Controls};
use crate::state::{RodState, Trajectory};
use crate::topology::{cylinder_inertia_factors, SystemConfig};

/// Loss returned when a candidate blows up or degenerates.
pub const PENALTY: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub init: Vec<f64>,
}

impl SearchSpace {
    pub const LOWER: f64 = 0.1;
    pub const UPPER: f64 = 1000.0;
    pub const INIT: f64 = 1.0;

    pub fn uniform(names: &[&str]) -> Self {
        let n = names.len();
        Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            lower: vec![Self::LOWER; n],
            upper: vec![Self::UPPER; n],
            init: vec![Self::INIT; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if n == 0 || self.lower.len() != n || self.upper.len() != n || self.init.len() != n {
            return Err(Error::InvalidConfig("search space dimensions disagree".into()));
        }
        for i in 0..n {
            if !(self.lower[i] > 0.0 && self.lower[i] < self.upper[i]) {
                return Err(Error::InvalidConfig(format!("bad bounds for {}", self.names[i])));
            }
            if !(self.lower[i]..=self.upper[i]).contains(&self.init[i]) {
                return Err(Error::InvalidConfig(format!("initial {} outside bounds", self.names[i])));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (lo, hi))| v >= lo && v <= hi)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

/// One optimizer iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iter: usize,
    pub best_loss: f64,
    pub params: Vec<f64>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerResult {
    pub names: Vec<String>,
    pub best: Vec<f64>,
    pub best_loss: f64,
    pub evaluations: usize,
    pub history: Vec<HistoryRow>,
    /// Why the run stopped.
    pub status: String,
}

impl OptimizerResult {
    pub fn seconds_per_iteration(&self) -> f64 {
        let n = self.history.len().max(1) as f64;
        self.history.iter().map(|r| r.wall_seconds).sum::<f64>() / n
    }

    /// `iter,best_loss,<names…>,wall_seconds`.
    pub fn write_history_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let header = std::iter::once("iter".to_string())
            .chain(std::iter::once("best_loss".to_string()))
            .chain(self.names.iter().cloned())
            .chain(std::iter::once("wall_seconds".to_string()))
            .collect::<Vec<_>>()
            .join(",");
        let mut body = header + "\n";
        for r in &self.history {
            body.push_str(&format!("{},{:e}", r.iter, r.best_loss));
            for p in &r.params {
                body.push_str(&format!(",{p:e}"));
            }
            body.push_str(&format!(",{:e}\n", r.wall_seconds));
        }
        w.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Squared distance between two rod states over p, v, q (sign aligned), ω.
pub fn state_sq_error(a: &RodState, b: &RodState) -> f64 {
    let qa = a.q.quaternion().coords;
    let qb = b.q.quaternion().coords;
    let dq = (qa - qb).norm_squared().min((qa + qb).norm_squared());
    (a.p - b.p).norm_squared() + (a.v - b.v).norm_squared() + dq + (a.omega - b.omega).norm_squared()
}

/// Mean squared state difference after re-simulating every reference
/// trajectory from its initial state with `params`.
pub fn trajectory_loss(params: &EngineParams, reference: &[Trajectory], config: &SystemConfig) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for r in reference {
        let Ok(pred) = rollout(r.initial(), config, params, r.n_steps(), Controls::Recorded(&r.controls)) else {
            return PENALTY;
        };
        for (x, y) in pred.states.iter().zip(&r.states) {
            for (a, b) in x.rods.iter().zip(&y.rods) {
                total += state_sq_error(a, b);
                count += 13;
            }
        }
    }
    if count == 0 || !total.is_finite() {
        return PENALTY;
    }
    (total / count as f64).min(PENALTY)
}

/// Which parameters the optimizer searches over.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// `(K, c)` with every rod's mass fixed.
    KnownMass { mass: f64 },
    /// `(K, c, M)`.
    FreeMass,
}

/// A trajectory-matching problem with tied spring and rod parameters.
/// Inertias follow the mass through the rod geometry.
#[derive(Clone, Debug)]
pub struct BlackboxProblem {
    pub config: SystemConfig,
    pub reference: Vec<Trajectory>,
    pub task: Task,
}

impl BlackboxProblem {
    pub fn space(&self) -> SearchSpace {
        match self.task {
            Task::KnownMass { .. } => SearchSpace::uniform(&["K", "c"]),
            Task::FreeMass => SearchSpace::uniform(&["K", "c", "M"]),
        }
    }

    pub fn params(&self, x: &[f64]) -> EngineParams {
        let mass = match self.task {
            Task::KnownMass { mass } => mass,
            Task::FreeMass => x[2],
        };
        EngineParams {
            springs: vec![SpringParams { stiffness: x[0], damping: x[1] }; self.config.springs().len()],
            rods: self
                .config
                .rods()
                .iter()
                .map(|r| {
                    let (f11, f33) = cylinder_inertia_factors(r.half_length, r.radius);
                    RodParams { mass, i11: mass * f11, i33: mass * f33 }
                })
                .collect(),
            control_scale: 1.0,
        }
    }

    pub fn loss(&self, x: &[f64]) -> f64 {
        trajectory_loss(&self.params(x), &self.reference, &self.config)
    }
}

/// Two runs with loss below `max_loss` whose parameters differ by more than
/// `min_spread` (relative, in the first coordinate) while their `K/M` and
/// `c/M` agree within `ratio_tol`. Expects `(K, c, M)` vectors.
pub fn degeneracy_witness(
    runs: &[(Vec<f64>, f64)],
    max_loss: f64,
    min_spread: f64,
    ratio_tol: f64,
) -> Option<(usize, usize)> {
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            let (a, la) = &runs[i];
            let (b, lb) = &runs[j];
            if *la >= max_loss || *lb >= max_loss || rel(a[0], b[0]) <= min_spread {
                continue;
            }
            if rel(a[0] / a[2], b[0] / b[2]) < ratio_tol && rel(a[1] / a[2], b[1] / b[2]) < ratio_tol {
                return Some((i, j));
            }
        }
    }
    None
}
