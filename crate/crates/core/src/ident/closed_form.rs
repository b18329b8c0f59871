//! Ordinary least squares on the stacked acceleration rows.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ident::features::{ParamLayout, TransitionBatch, TransitionSample};
use crate::linalg::QrAccumulator;
use crate::math::Vec3;
use crate::params::{EngineParams, Tying};
use crate::sim::{reduce_springs, AccelerationModel};
use crate::state::{rod_axis_world, ControlInput, SystemState};
use crate::topology::SystemConfig;

/// Identified parameter ratios in the order of [`ParamLayout::names`].
#[derive(Clone, Debug, PartialEq)]
pub struct RatioEstimates {
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RatioFile {
    tying: Tying,
    control: bool,
    names: Vec<String>,
    values: Vec<f64>,
}

impl RatioEstimates {
    pub fn names(&self) -> Vec<String> {
        self.layout.names()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names().iter().position(|n| n == name).map(|i| self.values[i])
    }

    pub fn named(&self) -> Vec<(String, f64)> {
        self.names().into_iter().zip(self.values.iter().copied()).collect()
    }

    /// Ratios implied by a full parameter set. Tied entries average the
    /// members of their group.
    pub fn from_params(layout: &ParamLayout, params: &EngineParams) -> Self {
        let mut values = Vec::with_capacity(layout.n_params);
        let mean = |xs: &mut dyn Iterator<Item = f64>| {
            let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
            s / n as f64
        };
        for g in &layout.groups {
            let m = mean(&mut g.rods.iter().map(|&r| params.rods[r].mass));
            let i = mean(&mut g.rods.iter().map(|&r| params.rods[r].i11));
            for den in [m, i] {
                for set in &g.spring_sets {
                    values.push(mean(&mut set.iter().map(|&s| params.springs[s].stiffness)) / den);
                    values.push(mean(&mut set.iter().map(|&s| params.springs[s].damping)) / den);
                }
                if g.control {
                    values.push(params.control_scale / den);
                }
            }
        }
        Self { layout: layout.clone(), values }
    }

    /// Fails with [`Error::NonPositive`] on the first non-positive ratio.
    pub fn check_positive(&self) -> Result<()> {
        for (name, v) in self.named() {
            if !(v > 0.0) {
                return Err(Error::NonPositive { name, value: v });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = RatioFile {
            tying: self.layout.tying,
            control: self.layout.groups.iter().any(|g| g.control),
            names: self.names(),
            values: self.values.clone(),
        };
        serde_json::to_string_pretty(&file).expect("ratios serialize")
    }

    pub fn from_json(text: &str, config: &SystemConfig) -> Result<Self> {
        let file: RatioFile =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("ratio file: {e}")))?;
        let layout = ParamLayout::new(config, file.tying, file.control);
        if layout.names() != file.names {
            return Err(Error::InvalidConfig("ratio file does not match the topology".into()));
        }
        Ok(Self { layout, values: file.values })
    }
}

/// A rollout model driven directly by identified ratios.
pub struct RatioModel<'a> {
    pub estimates: &'a RatioEstimates,
}

impl AccelerationModel for RatioModel<'_> {
    fn accelerations(
        &self,
        config: &SystemConfig,
        state: &SystemState,
        controls: &[ControlInput],
    ) -> Result<Vec<(Vec3, Vec3)>> {
        let springs = reduce_springs(config, state)?;
        let rods = state
            .rods
            .iter()
            .enumerate()
            .map(|(i, rs)| crate::ident::RodSample {
                lever: rod_axis_world(rs, &config.rods()[i]),
                control: controls.get(i).copied().unwrap_or_default(),
                now: *rs,
                next: *rs,
            })
            .collect();
        let sample = TransitionSample { springs, rods };
        Ok((0..state.rods.len())
            .map(|r| self.estimates.layout.predict(&self.estimates.values, &sample, r, &config.gravity))
            .collect())
    }
}

/// Result of the closed-form fit.
#[derive(Clone, Debug)]
pub struct ClosedFormFit {
    pub estimates: RatioEstimates,
    /// Rows used by each group's linear and angular systems.
    pub rows: Vec<(usize, usize)>,
    /// RMS residual of each group's linear and angular systems.
    pub residual_rms: Vec<(f64, f64)>,
    pub seconds: f64,
}

fn push_rows(acc: &mut QrAccumulator, cols: &[Vec3], target: &Vec3) {
    let mut row = vec![0.0; cols.len()];
    for k in 0..3 {
        for (x, c) in row.iter_mut().zip(cols) {
            *x = c[k];
        }
        if row.iter().any(|x| *x != 0.0) {
            acc.push_row(&row, &[target[k]]);
        }
    }
}

fn rms(v: &[f64]) -> f64 {
    v.first().copied().unwrap_or(0.0)
}

/// Solve each group's linear and angular systems independently.
pub fn fit_closed_form(batch: &TransitionBatch, layout: &ParamLayout) -> Result<ClosedFormFit> {
    let start = Instant::now();
    if batch.is_empty() {
        return Err(Error::InsufficientData { rows: 0, unknowns: layout.n_params });
    }
    let names = layout.names();
    let solved = layout
        .groups
        .par_iter()
        .map(|g| {
            let n = g.block_len();
            let mut lin_acc = QrAccumulator::new(n, 1);
            let mut ang_acc = QrAccumulator::new(n, 1);
            let mut lin = Vec::new();
            let mut ang = Vec::new();
            for sample in &batch.samples {
                for &r in &g.rods {
                    layout.columns(sample, r, &mut lin, &mut ang);
                    let (ta, tw) = layout.targets(batch, sample, r);
                    push_rows(&mut lin_acc, &lin, &ta);
                    push_rows(&mut ang_acc, &ang, &tw);
                }
            }
            let rows = (lin_acc.rows(), ang_acc.rows());
            let l = lin_acc.solve(&names[g.linear_range()])?;
            let a = ang_acc.solve(&names[g.angular_range()])?;
            Ok((l, a, rows))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut values = vec![0.0; layout.n_params];
    let mut rows = Vec::new();
    let mut residual_rms = Vec::new();
    for (g, (l, a, r)) in layout.groups.iter().zip(solved) {
        values[g.linear_range()].copy_from_slice(&l.column(0));
        values[g.angular_range()].copy_from_slice(&a.column(0));
        rows.push(r);
        residual_rms.push((rms(&l.residual_rms), rms(&a.residual_rms)));
    }
    Ok(ClosedFormFit {
        estimates: RatioEstimates { layout: layout.clone(), values },
        rows,
        residual_rms,
        seconds: start.elapsed().as_secs_f64(),
    })
}
