//! Fitting the control-force multiplier `h` with everything else frozen.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ident::features::TransitionBatch;
use crate::ident::iterative::{adam, AffineSteps, FitConfig, Item};
use crate::math::Vec3;
use crate::params::EngineParams;
use crate::sim::{aggregate_endpoint_forces, angular_from_torque, rod_acceleration};
use crate::state::ControlInput;
use crate::topology::SystemConfig;

struct ControlItem {
    sample: usize,
    rod: usize,
    lin_offset: Vec3,
    ang_offset: Vec3,
    lin: Vec3,
    ang: Vec3,
}

struct ControlSteps<'a> {
    batch: &'a TransitionBatch,
    items: Vec<ControlItem>,
}

impl AffineSteps for ControlSteps<'_> {
    fn n_params(&self) -> usize {
        1
    }

    fn n_items(&self) -> usize {
        self.items.len()
    }

    fn dt(&self) -> f64 {
        self.batch.dt
    }

    fn item(&self, idx: usize, lin: &mut Vec<(usize, Vec3)>, ang: &mut Vec<(usize, Vec3)>) -> Item<'_> {
        let it = &self.items[idx];
        lin.clear();
        ang.clear();
        lin.push((0, it.lin));
        ang.push((0, it.ang));
        let rs = &self.batch.samples[it.sample].rods[it.rod];
        Item {
            now: &rs.now,
            next: &rs.next,
            lin_offset: it.lin_offset,
            ang_offset: it.ang_offset,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ControlFit {
    /// Final iterate of the Adam run.
    pub h: f64,
    /// One-parameter least squares on the acceleration residuals.
    pub closed_form: f64,
    /// `h` after each epoch.
    pub trace: Vec<f64>,
    pub loss_curve: Vec<f64>,
    /// Rod-transitions that carried a control force.
    pub items: usize,
    /// Variance of `h` over the last five epochs.
    pub tail_variance: f64,
}

/// Fit `h` on the transitions that carry control, with `frozen` supplying
/// every other parameter.
pub fn tune_control_scalar(
    batch: &TransitionBatch,
    config: &SystemConfig,
    frozen: &EngineParams,
    cfg: &FitConfig,
) -> Result<ControlFit> {
    frozen.check_shape(config)?;
    let zero = EngineParams { control_scale: 0.0, ..frozen.clone() };
    let mut items = Vec::new();
    for (s, sample) in batch.samples.iter().enumerate() {
        if sample.rods.iter().all(|r| r.control.is_zero()) {
            continue;
        }
        let forces = aggregate_endpoint_forces(config, &sample.springs, &zero);
        for (r, rs) in sample.rods.iter().enumerate() {
            if rs.control.is_zero() {
                continue;
            }
            let rod = &zero.rods[r];
            let (lin_offset, ang_offset) = rod_acceleration(
                &forces[r],
                &ControlInput::default(),
                &rs.lever,
                &rs.now.q,
                rod,
                &batch.gravity,
            );
            items.push(ControlItem {
                sample: s,
                rod: r,
                lin_offset,
                ang_offset,
                lin: rs.control.force / rod.mass,
                ang: angular_from_torque(&rs.now.q, rod, &rs.control.arm.cross(&rs.control.force)),
            });
        }
    }
    if items.is_empty() {
        return Err(Error::NoControlData);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for it in &items {
        let rs = &batch.samples[it.sample].rods[it.rod];
        let ya = rs.linear_acceleration(batch.dt) - it.lin_offset;
        let yw = rs.angular_acceleration(batch.dt) - it.ang_offset;
        num += it.lin.dot(&ya) + it.ang.dot(&yw);
        den += it.lin.norm_squared() + it.ang.norm_squared();
    }
    let closed_form = num / den;
    let n_items = items.len();
    let steps = ControlSteps { batch, items };
    let trace = adam(&steps, cfg, vec![cfg.init])?;
    let history: Vec<f64> = trace.history.iter().map(|w| w[0]).collect();
    let tail = &history[history.len().saturating_sub(5)..];
    let mean = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    let tail_variance = tail.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / tail.len().max(1) as f64;
    Ok(ControlFit {
        h: trace.params[0],
        closed_form,
        trace: history,
        loss_curve: trace.loss_curve,
        items: n_items,
        tail_variance,
    })
}
