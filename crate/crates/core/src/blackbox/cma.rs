//! (μ/μ_w, λ) CMA-ES with rank-one and rank-μ covariance updates and
//! cumulative step-size adaptation.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blackbox::{HistoryRow, OptimizerResult, SearchSpace};
use crate::error::Result;

/// When to stop before `max_iterations`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "tol", rename_all = "snake_case")]
pub enum Termination {
    /// Largest coordinate standard deviation `σ·√max Cᵢᵢ` below `tol`,
    /// in parameter units.
    StepSize(f64),
    /// Range of the current generation's losses together with the best
    /// losses of the last `10 + ⌈30n/λ⌉` generations below `tol`.
    LossRange(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmaConfig {
    /// `None` selects `4 + ⌊3 ln n⌋`.
    pub population: Option<usize>,
    /// `None` selects `0.3 · (hi - lo)` of the widest coordinate.
    pub sigma0: Option<f64>,
    pub termination: Termination,
    pub max_iterations: usize,
    pub seed: u64,
    /// Resampling attempts per candidate before clamping into the box.
    pub max_resamples: usize,
}

impl Default for CmaConfig {
    fn default() -> Self {
        Self {
            population: None,
            sigma0: None,
            termination: Termination::StepSize(1.0),
            max_iterations: 200,
            seed: 0,
            max_resamples: 1000,
        }
    }
}

impl CmaConfig {
    pub fn lambda(&self, n: usize) -> usize {
        self.population
            .unwrap_or(4 + (3.0 * (n as f64).ln()).floor() as usize)
            .max(4)
    }
}

/// Minimize `loss` over `space`. Deterministic for a given seed.
pub fn cma_es(loss: &(dyn Fn(&[f64]) -> f64 + Sync), space: &SearchSpace, cfg: &CmaConfig) -> Result<OptimizerResult> {
    space.validate()?;
    let n = space.dim();
    let nf = n as f64;
    let lambda = cfg.lambda(n);
    let mu = lambda / 2;
    let raw: Vec<f64> = (0..mu).map(|i| (mu as f64 + 0.5).ln() - ((i + 1) as f64).ln()).collect();
    let wsum: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / wsum).collect();
    let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

    let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
    let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
    let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
    let c1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
    let c_mu = (1.0 - c1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
    let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
    let hist_len = 10 + (30.0 * nf / lambda as f64).ceil() as usize;

    let widest = space.lower.iter().zip(&space.upper).map(|(l, h)| h - l).fold(0.0, f64::max);
    let mut sigma = cfg.sigma0.unwrap_or(0.3 * widest);
    let mut mean = DVector::from_column_slice(&space.init);
    let mut cov = DMatrix::<f64>::identity(n, n);
    let mut p_sigma = DVector::<f64>::zeros(n);
    let mut p_c = DVector::<f64>::zeros(n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut best = space.init.clone();
    let mut best_loss = loss(&best);
    let mut evaluations = 1;
    let mut history = Vec::new();
    let mut recent_best: Vec<f64> = Vec::new();
    let mut status = "max_iterations".to_string();

    for iter in 0..cfg.max_iterations {
        let start = Instant::now();
        let eig = cov.clone().symmetric_eigen();
        let d: DVector<f64> = eig.eigenvalues.map(|e| e.max(1e-300).sqrt());
        let b = eig.eigenvectors;
        let bd = &b * DMatrix::from_diagonal(&d);
        let inv_sqrt = &b * DMatrix::from_diagonal(&d.map(|x| 1.0 / x)) * b.transpose();

        let mut ys = Vec::with_capacity(lambda);
        let mut xs = Vec::with_capacity(lambda);
        for _ in 0..lambda {
            let mut attempt = 0;
            loop {
                let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
                let y = &bd * z;
                let mut x: Vec<f64> = (&mean + &y * sigma).iter().copied().collect();
                attempt += 1;
                if space.contains(&x) || attempt >= cfg.max_resamples {
                    space.clamp(&mut x);
                    let y = (DVector::from_column_slice(&x) - &mean) / sigma;
                    ys.push(y);
                    xs.push(x);
                    break;
                }
            }
        }
        let f: Vec<f64> = xs.par_iter().map(|x| loss(x)).collect();
        evaluations += lambda;
        let mut order: Vec<usize> = (0..lambda).collect();
        order.sort_by(|&a, &b| f[a].total_cmp(&f[b]));
        if f[order[0]] < best_loss {
            best_loss = f[order[0]];
            best = xs[order[0]].clone();
        }

        let y_w = order[..mu]
            .iter()
            .zip(&weights)
            .fold(DVector::zeros(n), |acc, (&k, w)| acc + &ys[k] * *w);
        mean += &y_w * sigma;
        p_sigma = &p_sigma * (1.0 - c_sigma) + (&inv_sqrt * &y_w) * (c_sigma * (2.0 - c_sigma) * mu_eff).sqrt();
        let gen = (iter + 1) as f64;
        let norm_ps = p_sigma.norm();
        let h_sigma = norm_ps / (1.0 - (1.0 - c_sigma).powf(2.0 * gen)).sqrt() < (1.4 + 2.0 / (nf + 1.0)) * chi_n;
        let hs = if h_sigma { 1.0 } else { 0.0 };
        p_c = &p_c * (1.0 - c_c) + &y_w * (hs * (c_c * (2.0 - c_c) * mu_eff).sqrt());
        let rank_mu = order[..mu]
            .iter()
            .zip(&weights)
            .fold(DMatrix::zeros(n, n), |acc, (&k, w)| acc + &ys[k] * ys[k].transpose() * *w);
        cov = &cov * (1.0 - c1 - c_mu)
            + (&p_c * p_c.transpose() + &cov * ((1.0 - hs) * c_c * (2.0 - c_c))) * c1
            + rank_mu * c_mu;
        cov = (&cov + cov.transpose()) * 0.5;
        sigma *= ((c_sigma / d_sigma) * (norm_ps / chi_n - 1.0)).exp();

        history.push(HistoryRow {
            iter,
            best_loss,
            params: best.clone(),
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        recent_best.push(f[order[0]]);
        let stop = match cfg.termination {
            Termination::StepSize(tol) => {
                let max_sd = sigma * cov.diagonal().iter().fold(0.0f64, |m, &c| m.max(c)).sqrt();
                max_sd < tol
            }
            Termination::LossRange(tol) => {
                recent_best.len() >= hist_len && {
                    let tail = recent_best[recent_best.len() - hist_len..].iter().chain(f.iter());
                    let (lo, hi) = tail.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
                    hi - lo < tol
                }
            }
        };
        if stop {
            status = "tolerance".into();
            break;
        }
    }
    Ok(OptimizerResult {
        names: space.names.clone(),
        best,
        best_loss,
        evaluations,
        history,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_converges() {
        let target = [3.0, 40.0];
        let loss = |x: &[f64]| (x[0] - target[0]).powi(2) + (x[1] - target[1]).powi(2);
        let space = SearchSpace::uniform(&["a", "b"]);
        let cfg = CmaConfig {
            termination: Termination::StepSize(1e-6),
            seed: 4,
            ..CmaConfig::default()
        };
        let res = cma_es(&loss, &space, &cfg).unwrap();
        assert!(res.history.len() <= 200);
        assert!(res.best_loss < 1e-6, "{}", res.best_loss);
    }

    #[test]
    fn incumbent_is_monotone_and_seeded() {
        let loss = |x: &[f64]| (x[0] - 7.0).abs() + (x[1] - 0.5).powi(2);
        let space = SearchSpace::uniform(&["a", "b"]);
        let cfg = CmaConfig { seed: 9, max_iterations: 40, ..CmaConfig::default() };
        let a = cma_es(&loss, &space, &cfg).unwrap();
        let b = cma_es(&loss, &space, &cfg).unwrap();
        assert_eq!(a.best, b.best);
        assert!(a.history.windows(2).all(|w| w[1].best_loss <= w[0].best_loss));
        assert!(a.history.iter().all(|r| space.contains(&r.params)));
    }

    #[test]
    fn default_population() {
        assert_eq!(CmaConfig::default().lambda(2), 6);
        assert_eq!(CmaConfig::default().lambda(3), 7);
        assert_eq!(CmaConfig::default().lambda(1), 4);
    }
}
