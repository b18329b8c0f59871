//! Regression features for the linear force/acceleration model.
//!
//! For rod `r` with half-axis `ρ` and incident spring `s` (extension `e_s`,
//! rate `ė_s`, unit axis `u_s`, attachment sign `σ`), the recorded
//! accelerations satisfy
//!
//! ```text
//! a - g = Σ_s (K_s/M_r)·σ e_s u_s + (c_s/M_r)·σ ė_s u_s + (h/M_r)·f_u
//! α     = Σ_s (K_s/I_r)·ε ρ×(σ e_s u_s) + (c_s/I_r)·ε ρ×(σ ė_s u_s) + (h/I_r)·ρ_u×f_u
//! ```
//!
//! with `ε = ±1` for the `±` end. The world-frame angular rows rely on the
//! torque being perpendicular to the rod axis, so `R I⁻¹ Rᵀ τ = τ / I11`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::params::Tying;
use crate::sim::{reduce_springs, ReducedSpring, TransitionRef};
use crate::state::{rod_axis_world, ControlInput, RodState};
use crate::topology::{End, SystemConfig};

/// Per-rod data of one transition.
#[derive(Clone, Debug, PartialEq)]
pub struct RodSample {
    /// World-frame half-axis at `S_t`.
    pub lever: Vec3,
    /// Raw recorded control.
    pub control: ControlInput,
    pub now: RodState,
    pub next: RodState,
}

impl RodSample {
    /// `(v_{t+1} - v_t) / dt`, the exact inverse of the velocity update.
    pub fn linear_acceleration(&self, dt: f64) -> Vec3 {
        (self.next.v - self.now.v) / dt
    }

    pub fn angular_acceleration(&self, dt: f64) -> Vec3 {
        (self.next.omega - self.now.omega) / dt
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransitionSample {
    pub springs: Vec<ReducedSpring>,
    pub rods: Vec<RodSample>,
}

/// Reduced observations and targets for a set of transitions.
#[derive(Clone, Debug)]
pub struct TransitionBatch {
    pub dt: f64,
    pub gravity: Vec3,
    pub samples: Vec<TransitionSample>,
}

impl TransitionBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_rods(&self) -> usize {
        self.samples.first().map_or(0, |s| s.rods.len())
    }

    pub fn has_controls(&self) -> bool {
        self.samples.iter().any(|s| s.rods.iter().any(|r| !r.control.is_zero()))
    }
}

/// Reduce every transition against the topology.
pub fn build_features<'a>(
    transitions: impl IntoIterator<Item = TransitionRef<'a>>,
    config: &SystemConfig,
) -> Result<TransitionBatch> {
    let refs: Vec<TransitionRef<'a>> = transitions.into_iter().collect();
    let n_rods = config.rods().len();
    let samples = refs
        .par_iter()
        .map(|t| {
            if t.before.rods.len() != n_rods || t.after.rods.len() != n_rods {
                return Err(Error::InvalidConfig(format!(
                    "transition has {} rods, topology has {n_rods}",
                    t.before.rods.len()
                )));
            }
            let springs = reduce_springs(config, t.before)?;
            let rods = (0..n_rods)
                .map(|i| RodSample {
                    lever: rod_axis_world(&t.before.rods[i], &config.rods()[i]),
                    control: t.controls.get(i).copied().unwrap_or_default(),
                    now: t.before.rods[i],
                    next: t.after.rods[i],
                })
                .collect();
            Ok(TransitionSample { springs, rods })
        })
        .collect::<Result<Vec<_>>>()?;
    let batch = TransitionBatch {
        dt: config.dt,
        gravity: config.gravity,
        samples,
    };
    for s in &batch.samples {
        for r in &s.rods {
            let a = r.linear_acceleration(batch.dt);
            let w = r.angular_acceleration(batch.dt);
            if !(a.iter().chain(w.iter()).all(|c| c.is_finite())) {
                return Err(Error::InvalidConfig("non-finite acceleration target".into()));
            }
        }
    }
    Ok(batch)
}

/// One regression group: rods sharing a mass/inertia unknown and the spring
/// sets sharing a stiffness/damping unknown.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ParamGroup {
    pub rods: Vec<usize>,
    pub spring_sets: Vec<Vec<usize>>,
    pub control: bool,
    /// Index of this group's first parameter in the flat vector.
    pub offset: usize,
}

impl ParamGroup {
    /// Unknowns of the linear block: `(K, c)` per spring set, then `h`.
    pub fn block_len(&self) -> usize {
        2 * self.spring_sets.len() + usize::from(self.control)
    }

    pub fn linear_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.block_len()
    }

    pub fn angular_range(&self) -> std::ops::Range<usize> {
        self.offset + self.block_len()..self.offset + 2 * self.block_len()
    }
}

/// Layout of the flat ratio-parameter vector.
///
/// Each group contributes a linear block `[K₀/M, c₀/M, K₁/M, c₁/M, …, h/M]`
/// followed by an angular block with `I11` in place of `M`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ParamLayout {
    pub tying: Tying,
    pub groups: Vec<ParamGroup>,
    pub n_params: usize,
    /// Per rod: `(spring, σ, ε, set)` for every incident spring end.
    #[serde(skip)]
    incident: Vec<Vec<(usize, f64, f64, usize)>>,
    #[serde(skip)]
    group_of_rod: Vec<usize>,
}

impl ParamLayout {
    pub fn new(config: &SystemConfig, tying: Tying, control: bool) -> Self {
        let n_rods = config.rods().len();
        let incidence = config.topology.incidence();
        let mut groups = match tying {
            Tying::Single => vec![ParamGroup {
                rods: (0..n_rods).collect(),
                spring_sets: vec![(0..config.springs().len()).collect()],
                control,
                offset: 0,
            }],
            Tying::Multiple => incidence
                .iter()
                .enumerate()
                .map(|(r, inc)| ParamGroup {
                    rods: vec![r],
                    spring_sets: inc.springs().into_iter().map(|s| vec![s]).collect(),
                    control,
                    offset: 0,
                })
                .collect(),
        };
        let mut offset = 0;
        for g in &mut groups {
            g.offset = offset;
            offset += 2 * g.block_len();
        }
        let mut group_of_rod = vec![0; n_rods];
        let mut incident = vec![Vec::new(); n_rods];
        for (gi, g) in groups.iter().enumerate() {
            for &r in &g.rods {
                group_of_rod[r] = gi;
                for end in [End::Plus, End::Minus] {
                    for inc in incidence[r].at(end) {
                        let set = g
                            .spring_sets
                            .iter()
                            .position(|s| s.contains(&inc.spring))
                            .expect("incident spring belongs to a set");
                        incident[r].push((inc.spring, inc.sign, end.sign(), set));
                    }
                }
            }
        }
        Self {
            tying,
            groups,
            n_params: offset,
            incident,
            group_of_rod,
        }
    }

    pub fn group_of(&self, rod: usize) -> &ParamGroup {
        &self.groups[self.group_of_rod[rod]]
    }

    /// Human-readable name of every parameter.
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.n_params);
        for g in &self.groups {
            for den in ["M", "I11"] {
                let rod = match self.tying {
                    Tying::Single => den.to_string(),
                    Tying::Multiple => format!("{den}[{}]", g.rods[0]),
                };
                for set in &g.spring_sets {
                    let (k, c) = match self.tying {
                        Tying::Single => ("K".to_string(), "c".to_string()),
                        Tying::Multiple => (format!("K[{}]", set[0]), format!("c[{}]", set[0])),
                    };
                    out.push(format!("{k}/{rod}"));
                    out.push(format!("{c}/{rod}"));
                }
                if g.control {
                    out.push(format!("h/{rod}"));
                }
            }
        }
        out
    }

    /// Columns of the linear and angular rows for one rod of one sample.
    /// Both buffers are resized to the group's block length.
    pub fn columns(&self, sample: &TransitionSample, rod: usize, lin: &mut Vec<Vec3>, ang: &mut Vec<Vec3>) {
        let g = self.group_of(rod);
        let n = g.block_len();
        lin.clear();
        lin.resize(n, Vec3::zeros());
        ang.clear();
        ang.resize(n, Vec3::zeros());
        let rs = &sample.rods[rod];
        for &(spring, sigma, eps, set) in &self.incident[rod] {
            let red = &sample.springs[spring];
            let k_dir = red.direction * (sigma * red.extension);
            let c_dir = red.direction * (sigma * red.rate);
            lin[2 * set] += k_dir;
            lin[2 * set + 1] += c_dir;
            ang[2 * set] += rs.lever.cross(&k_dir) * eps;
            ang[2 * set + 1] += rs.lever.cross(&c_dir) * eps;
        }
        if g.control {
            lin[n - 1] = rs.control.force;
            ang[n - 1] = rs.control.arm.cross(&rs.control.force);
        }
    }

    /// Linear and angular targets `(a - g, α)`.
    pub fn targets(&self, batch: &TransitionBatch, sample: &TransitionSample, rod: usize) -> (Vec3, Vec3) {
        let rs = &sample.rods[rod];
        (
            rs.linear_acceleration(batch.dt) - batch.gravity,
            rs.angular_acceleration(batch.dt),
        )
    }

    /// Like [`Self::columns`] but tagged with flat parameter indices.
    pub fn indexed_columns(
        &self,
        sample: &TransitionSample,
        rod: usize,
        lin: &mut Vec<(usize, Vec3)>,
        ang: &mut Vec<(usize, Vec3)>,
    ) {
        let g = self.group_of(rod);
        let n = g.block_len();
        let (l0, a0) = (g.linear_range().start, g.angular_range().start);
        lin.clear();
        ang.clear();
        lin.extend((0..n).map(|j| (l0 + j, Vec3::zeros())));
        ang.extend((0..n).map(|j| (a0 + j, Vec3::zeros())));
        let rs = &sample.rods[rod];
        for &(spring, sigma, eps, set) in &self.incident[rod] {
            let red = &sample.springs[spring];
            let k_dir = red.direction * (sigma * red.extension);
            let c_dir = red.direction * (sigma * red.rate);
            lin[2 * set].1 += k_dir;
            lin[2 * set + 1].1 += c_dir;
            ang[2 * set].1 += rs.lever.cross(&k_dir) * eps;
            ang[2 * set + 1].1 += rs.lever.cross(&c_dir) * eps;
        }
        if g.control {
            lin[n - 1].1 = rs.control.force;
            ang[n - 1].1 = rs.control.arm.cross(&rs.control.force);
        }
    }

    /// `(a, α)` predicted by a flat ratio vector, gravity included.
    pub fn predict(&self, w: &[f64], sample: &TransitionSample, rod: usize, gravity: &Vec3) -> (Vec3, Vec3) {
        let mut lin = Vec::new();
        let mut ang = Vec::new();
        self.columns(sample, rod, &mut lin, &mut ang);
        let g = self.group_of(rod);
        let wl = &w[g.linear_range()];
        let wa = &w[g.angular_range()];
        let a = lin.iter().zip(wl).fold(*gravity, |acc, (x, c)| acc + x * *c);
        let alpha = ang.iter().zip(wa).fold(Vec3::zeros(), |acc, (x, c)| acc + x * *c);
        (a, alpha)
    }

    /// Number of unknowns multiplying each rod's linear rows.
    pub fn linear_unknowns_per_rod(&self, rod: usize) -> usize {
        self.group_of(rod).block_len()
    }
}
