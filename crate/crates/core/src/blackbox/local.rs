//! Projected BFGS with central finite-difference gradients and Armijo
//! backtracking along the projected path.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::blackbox::{HistoryRow, OptimizerResult, SearchSpace};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalConfig {
    pub max_iterations: usize,
    /// Absolute finite-difference step.
    pub fd_step: f64,
    /// Central instead of forward differences.
    pub central: bool,
    /// Stop when the projected gradient's max-norm drops below this.
    pub gtol: f64,
    /// Stop when `(f_k - f_{k+1}) / max(|f_k|, |f_{k+1}|, 1)` drops below this.
    pub ftol: f64,
}

/// The customary L-BFGS-B defaults: forward differences with step `1e-8`,
/// `pgtol = 1e-5`, `ftol = 1e7 · ε_machine`.
impl Default for LocalConfig {
    fn default() -> Self {
        Self {
            max_iterations: 15000,
            fd_step: 1e-8,
            central: false,
            gtol: 1e-5,
            ftol: 1e7 * f64::EPSILON,
        }
    }
}

impl LocalConfig {
    /// Central differences and tolerances near machine precision.
    pub fn tight() -> Self {
        Self {
            max_iterations: 500,
            fd_step: 1e-6,
            central: true,
            gtol: 1e-12,
            ftol: 1e-15,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalStatus {
    GradientTolerance,
    LossTolerance,
    LineSearchFailed,
    MaxIterations,
}

impl LocalStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::GradientTolerance => "gradient_tolerance",
            Self::LossTolerance => "loss_tolerance",
            Self::LineSearchFailed => "line_search_failed",
            Self::MaxIterations => "max_iterations",
        }
    }
}

fn gradient(loss: &dyn Fn(&[f64]) -> f64, x: &[f64], fx: f64, space: &SearchSpace, cfg: &LocalConfig) -> (DVector<f64>, usize) {
    let n = x.len();
    let mut g = DVector::zeros(n);
    let mut evals = 0;
    let mut probe = x.to_vec();
    for i in 0..n {
        let h = cfg.fd_step;
        let (lo, hi) = (space.lower[i], space.upper[i]);
        g[i] = if cfg.central && x[i] - h >= lo && x[i] + h <= hi {
            probe[i] = x[i] + h;
            let fp = loss(&probe);
            probe[i] = x[i] - h;
            let fm = loss(&probe);
            evals += 2;
            (fp - fm) / (2.0 * h)
        } else if x[i] + h <= hi {
            probe[i] = x[i] + h;
            evals += 1;
            (loss(&probe) - fx) / h
        } else {
            probe[i] = x[i] - h;
            evals += 1;
            (fx - loss(&probe)) / h
        };
        probe[i] = x[i];
    }
    (g, evals)
}

/// Zero the gradient components that point out of the box at active bounds.
fn projected(g: &DVector<f64>, x: &[f64], space: &SearchSpace) -> DVector<f64> {
    DVector::from_fn(g.len(), |i, _| {
        let at_lo = x[i] <= space.lower[i] && g[i] > 0.0;
        let at_hi = x[i] >= space.upper[i] && g[i] < 0.0;
        if at_lo || at_hi {
            0.0
        } else {
            g[i]
        }
    })
}

/// Minimize `loss` from `init` inside `space`.
pub fn local_search(
    loss: &dyn Fn(&[f64]) -> f64,
    space: &SearchSpace,
    init: &[f64],
    cfg: &LocalConfig,
) -> Result<OptimizerResult> {
    space.validate()?;
    let n = space.dim();
    let mut x = init.to_vec();
    space.clamp(&mut x);
    let mut fx = loss(&x);
    let mut evaluations = 1;
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let (mut g, e) = gradient(loss, &x, fx, space, cfg);
    evaluations += e;
    let mut history = Vec::new();
    let mut status = LocalStatus::MaxIterations;
    for iter in 0..cfg.max_iterations {
        let start = Instant::now();
        let pg = projected(&g, &x, space);
        if pg.amax() < cfg.gtol {
            status = LocalStatus::GradientTolerance;
            break;
        }
        let mut dir = -(&h_inv * &pg);
        if dir.dot(&pg) >= 0.0 {
            h_inv = DMatrix::identity(n, n);
            dir = -pg.clone();
        }
        // scale the first step so it moves at most 10% of the box
        let span = space.lower.iter().zip(&space.upper).map(|(l, h)| h - l).fold(0.0, f64::max);
        let mut t = (0.1 * span / dir.amax()).min(1.0);
        if iter > 0 {
            t = 1.0;
        }
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + t * d).collect();
            space.clamp(&mut trial);
            let ft = loss(&trial);
            evaluations += 1;
            let step: f64 = trial.iter().zip(&x).zip(pg.iter()).map(|((a, b), gi)| (a - b) * gi).sum();
            if ft <= fx + 1e-4 * step && ft < fx {
                accepted = Some((trial, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            status = LocalStatus::LineSearchFailed;
            break;
        };
        let (g_new, e) = gradient(loss, &x_new, f_new, space, cfg);
        evaluations += e;
        let s = DVector::from_iterator(n, x_new.iter().zip(&x).map(|(a, b)| a - b));
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(n, n);
            let left = &eye - &s * y.transpose() * rho;
            let right = &eye - &y * s.transpose() * rho;
            h_inv = left * &h_inv * right + &s * s.transpose() * rho;
        }
        let decrease = fx - f_new;
        x = x_new;
        g = g_new;
        let f_old = fx;
        fx = f_new;
        history.push(HistoryRow {
            iter,
            best_loss: fx,
            params: x.clone(),
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        if decrease <= cfg.ftol * f_old.abs().max(fx.abs()).max(1.0) {
            status = LocalStatus::LossTolerance;
            break;
        }
    }
    Ok(OptimizerResult {
        names: space.names.clone(),
        best: x,
        best_loss: fx,
        evaluations,
        history,
        status: status.as_str().into(),
    })
}
