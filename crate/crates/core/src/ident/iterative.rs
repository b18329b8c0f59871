//! Minibatch Adam on the one-step next-state error.
//!
//! The model acceleration is affine in the parameters, so the gradient of
//! the squared state error is the chain rule through one semi-implicit
//! Euler step, written out by hand.

use std::time::Instant;

use nalgebra::Vector4;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ident::closed_form::RatioEstimates;
use crate::ident::features::{ParamLayout, TransitionBatch};
use crate::math::{omega_product_jacobian, Vec3};
use crate::state::RodState;

/// State components compared by the loss: p, v, q, ω.
pub const STATE_DIM: f64 = 13.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// The learning rate is multiplied by `decay_factor` every `decay_every` epochs.
    pub decay_every: usize,
    pub decay_factor: f64,
    pub batch_size: usize,
    /// Initial value of every parameter.
    pub init: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    /// Kept tiny: one-step state errors scale with `dt²`, so gradients near
    /// the optimum are far below the usual `1e-8`.
    pub eps: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.1,
            decay_every: 3,
            decay_factor: 0.5,
            batch_size: 32,
            init: 1.0,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-14,
        }
    }
}

impl FitConfig {
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let k = epoch.checked_div(self.decay_every).unwrap_or(0);
        self.learning_rate * self.decay_factor.powi(k as i32)
    }
}

/// One rod of one transition, seen as an affine function of the parameters.
pub(crate) struct Item<'a> {
    pub now: &'a RodState,
    pub next: &'a RodState,
    pub lin_offset: Vec3,
    pub ang_offset: Vec3,
}

pub(crate) trait AffineSteps: Sync {
    fn n_params(&self) -> usize;
    fn n_items(&self) -> usize;
    fn dt(&self) -> f64;
    /// Fill `(parameter, column)` pairs for the linear and angular acceleration.
    fn item(&self, idx: usize, lin: &mut Vec<(usize, Vec3)>, ang: &mut Vec<(usize, Vec3)>) -> Item<'_>;
}

struct LayoutSteps<'a> {
    batch: &'a TransitionBatch,
    layout: &'a ParamLayout,
    n_rods: usize,
}

impl AffineSteps for LayoutSteps<'_> {
    fn n_params(&self) -> usize {
        self.layout.n_params
    }

    fn n_items(&self) -> usize {
        self.batch.len() * self.n_rods
    }

    fn dt(&self) -> f64 {
        self.batch.dt
    }

    fn item(&self, idx: usize, lin: &mut Vec<(usize, Vec3)>, ang: &mut Vec<(usize, Vec3)>) -> Item<'_> {
        let (s, r) = (idx / self.n_rods, idx % self.n_rods);
        let sample = &self.batch.samples[s];
        self.layout.indexed_columns(sample, r, lin, ang);
        Item {
            now: &sample.rods[r].now,
            next: &sample.rods[r].next,
            lin_offset: self.batch.gravity,
            ang_offset: Vec3::zeros(),
        }
    }
}

fn layout_steps<'a>(batch: &'a TransitionBatch, layout: &'a ParamLayout) -> LayoutSteps<'a> {
    LayoutSteps {
        batch,
        layout,
        n_rods: batch.n_rods(),
    }
}

/// Squared next-state error of one item and, optionally, its gradient.
fn item_loss(
    model: &dyn AffineSteps,
    idx: usize,
    w: &[f64],
    lin: &mut Vec<(usize, Vec3)>,
    ang: &mut Vec<(usize, Vec3)>,
    grad: Option<&mut [f64]>,
) -> f64 {
    let dt = model.dt();
    let it = model.item(idx, lin, ang);
    let a = lin.iter().fold(it.lin_offset, |acc, (i, x)| acc + x * w[*i]);
    let alpha = ang.iter().fold(it.ang_offset, |acc, (i, x)| acc + x * w[*i]);
    let v = it.now.v + a * dt;
    let p = it.now.p + v * dt;
    let omega = it.now.omega + alpha * dt;
    let q0 = it.now.q.quaternion();
    let omega_map = omega_product_jacobian(q0);
    let x4 = Vector4::new(q0.w, q0.i, q0.j, q0.k) + omega_map * omega * (0.5 * dt);
    let norm = x4.norm();
    let qhat = x4 / norm;
    let qn = it.next.q.quaternion();
    let eq = qhat - Vector4::new(qn.w, qn.i, qn.j, qn.k);
    let ep = p - it.next.p;
    let ev = v - it.next.v;
    let ew = omega - it.next.omega;
    let loss = (ep.norm_squared() + ev.norm_squared() + ew.norm_squared() + eq.norm_squared()) / STATE_DIM;
    if let Some(g) = grad {
        let k = 2.0 / STATE_DIM;
        let d_a = (ev * dt + ep * (dt * dt)) * k;
        // (E - q̂q̂ᵀ)/|x| applied to eq
        let projected = (eq - qhat * qhat.dot(&eq)) / norm;
        let d_q = omega_map.transpose() * projected * (0.5 * dt);
        let d_alpha = (ew + d_q) * (dt * k);
        for (i, x) in lin.iter() {
            g[*i] += d_a.dot(x);
        }
        for (i, x) in ang.iter() {
            g[*i] += d_alpha.dot(x);
        }
    }
    loss
}

fn mean_loss_grad(model: &dyn AffineSteps, w: &[f64], items: &[usize], with_grad: bool) -> (f64, Vec<f64>) {
    let mut lin = Vec::new();
    let mut ang = Vec::new();
    let mut grad = vec![0.0; if with_grad { model.n_params() } else { 0 }];
    let mut total = 0.0;
    for &idx in items {
        let g = if with_grad { Some(grad.as_mut_slice()) } else { None };
        total += item_loss(model, idx, w, &mut lin, &mut ang, g);
    }
    let n = items.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    (total / n, grad)
}

fn full_loss(model: &dyn AffineSteps, w: &[f64]) -> f64 {
    use rayon::prelude::*;
    let n = model.n_items();
    let chunks: Vec<usize> = (0..n).step_by(4096).collect();
    let total: f64 = chunks
        .par_iter()
        .map(|&start| {
            let items: Vec<usize> = (start..(start + 4096).min(n)).collect();
            mean_loss_grad(model, w, &items, false).0 * items.len() as f64
        })
        .sum();
    total / n.max(1) as f64
}

/// Parameter trajectory and per-epoch diagnostics of an Adam run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamTrace {
    pub params: Vec<f64>,
    /// Mean minibatch loss of each epoch.
    pub loss_curve: Vec<f64>,
    /// Parameters after each epoch.
    pub history: Vec<Vec<f64>>,
    pub epoch_seconds: Vec<f64>,
}

/// Every item's states and columns in one contiguous buffer, so shuffled
/// minibatches do not chase pointers through the batch.
struct PackedSteps {
    n_params: usize,
    dt: f64,
    items: Vec<(RodState, RodState, Vec3, Vec3, usize, usize)>,
    cols: Vec<(usize, Vec3)>,
    starts: Vec<usize>,
}

impl PackedSteps {
    fn pack(model: &dyn AffineSteps) -> Self {
        let n = model.n_items();
        let mut lin = Vec::new();
        let mut ang = Vec::new();
        let mut packed = Self {
            n_params: model.n_params(),
            dt: model.dt(),
            items: Vec::with_capacity(n),
            cols: Vec::new(),
            starts: Vec::with_capacity(n),
        };
        for idx in 0..n {
            let it = model.item(idx, &mut lin, &mut ang);
            packed.starts.push(packed.cols.len());
            packed
                .items
                .push((*it.now, *it.next, it.lin_offset, it.ang_offset, lin.len(), ang.len()));
            packed.cols.extend_from_slice(&lin);
            packed.cols.extend_from_slice(&ang);
        }
        packed
    }
}

impl AffineSteps for PackedSteps {
    fn n_params(&self) -> usize {
        self.n_params
    }

    fn n_items(&self) -> usize {
        self.items.len()
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn item(&self, idx: usize, lin: &mut Vec<(usize, Vec3)>, ang: &mut Vec<(usize, Vec3)>) -> Item<'_> {
        let (now, next, lo, ao, nl, na) = &self.items[idx];
        let start = self.starts[idx];
        lin.clear();
        ang.clear();
        lin.extend_from_slice(&self.cols[start..start + nl]);
        ang.extend_from_slice(&self.cols[start + nl..start + nl + na]);
        Item {
            now,
            next,
            lin_offset: *lo,
            ang_offset: *ao,
        }
    }
}

pub(crate) fn adam(source: &dyn AffineSteps, cfg: &FitConfig, init: Vec<f64>) -> Result<AdamTrace> {
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    let packed = PackedSteps::pack(source);
    let model: &dyn AffineSteps = &packed;
    let n = model.n_params();
    let mut w = init;
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut t = 0i32;
    let mut order: Vec<usize> = (0..model.n_items()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = AdamTrace {
        params: Vec::new(),
        loss_curve: Vec::new(),
        history: Vec::new(),
        epoch_seconds: Vec::new(),
    };
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (loss, grad) = mean_loss_grad(model, &w, chunk, true);
            epoch_loss += loss * chunk.len() as f64;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite { epoch });
            }
            t += 1;
            let c1 = 1.0 - cfg.beta1.powi(t);
            let c2 = 1.0 - cfg.beta2.powi(t);
            for i in 0..n {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                w[i] -= lr * mh / (vh.sqrt() + cfg.eps);
            }
        }
        trace.loss_curve.push(epoch_loss / order.len().max(1) as f64);
        trace.history.push(w.clone());
        trace.epoch_seconds.push(start.elapsed().as_secs_f64());
    }
    trace.params = w;
    Ok(trace)
}

/// Mean next-state loss and its gradient over the given `(sample · n_rods + rod)`
/// items, or over every item when `items` is `None`.
pub fn loss_and_gradient(
    batch: &TransitionBatch,
    layout: &ParamLayout,
    w: &[f64],
    items: Option<&[usize]>,
) -> (f64, Vec<f64>) {
    let model = layout_steps(batch, layout);
    match items {
        Some(items) => mean_loss_grad(&model, w, items, true),
        None => {
            let all: Vec<usize> = (0..model.n_items()).collect();
            mean_loss_grad(&model, w, &all, true)
        }
    }
}

pub fn next_state_loss(batch: &TransitionBatch, layout: &ParamLayout, w: &[f64]) -> f64 {
    full_loss(&layout_steps(batch, layout), w)
}

#[derive(Clone, Debug)]
pub struct IterativeFit {
    pub estimates: RatioEstimates,
    pub trace: AdamTrace,
}

/// Fit all ratios jointly by minibatch Adam from `cfg.init`.
pub fn fit_iterative(batch: &TransitionBatch, layout: &ParamLayout, cfg: &FitConfig) -> Result<IterativeFit> {
    if batch.is_empty() {
        return Err(Error::InsufficientData { rows: 0, unknowns: layout.n_params });
    }
    let model = layout_steps(batch, layout);
    let trace = adam(&model, cfg, vec![cfg.init; layout.n_params])?;
    Ok(IterativeFit {
        estimates: RatioEstimates {
            layout: layout.clone(),
            values: trace.params.clone(),
        },
        trace,
    })
}
