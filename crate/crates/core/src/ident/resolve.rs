//! Recovering absolute parameters from ratios given one known scale.
//!
//! Every ratio `X/Y` is one linear equation `log X - log Y = log(X/Y)`.
//! Ratios alone fix all parameters up to a common factor; an anchor pins it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ident::closed_form::RatioEstimates;
use crate::linalg::QrAccumulator;
use crate::params::{EngineParams, RodParams, SpringParams, Tying};
use crate::topology::{cylinder_inertia_factors, SystemConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Anchor {
    /// Every rod has this mass.
    Mass(f64),
    RodMasses(Vec<f64>),
    /// Sum of all rod masses.
    TotalMass(f64),
    /// Every rod has this transverse inertia.
    Inertia(f64),
    ControlScale(f64),
}

#[derive(Clone, Debug)]
pub struct Resolved {
    /// `None` when no anchor was given.
    pub params: Option<EngineParams>,
    pub scale_identifiable: bool,
    pub ratios: RatioEstimates,
}

const ANCHOR_WEIGHT: f64 = 1e3;

struct Vars {
    n_springs: usize,
    n_rods: usize,
    tying: Tying,
}

impl Vars {
    fn k(&self, s: usize) -> usize {
        match self.tying {
            Tying::Single => 0,
            Tying::Multiple => s,
        }
    }
    fn c(&self, s: usize) -> usize {
        match self.tying {
            Tying::Single => 1,
            Tying::Multiple => self.n_springs + s,
        }
    }
    fn m(&self, r: usize) -> usize {
        match self.tying {
            Tying::Single => 2,
            Tying::Multiple => 2 * self.n_springs + r,
        }
    }
    fn i(&self, r: usize) -> usize {
        match self.tying {
            Tying::Single => 3,
            Tying::Multiple => 2 * self.n_springs + self.n_rods + r,
        }
    }
    fn h(&self) -> usize {
        match self.tying {
            Tying::Single => 4,
            Tying::Multiple => 2 * self.n_springs + 2 * self.n_rods,
        }
    }
    fn len(&self, control: bool) -> usize {
        self.h() + usize::from(control)
    }
    fn names(&self, control: bool) -> Vec<String> {
        let mut out = vec![String::new(); self.len(control)];
        for s in 0..self.n_springs {
            out[self.k(s)] = format!("log K[{s}]");
            out[self.c(s)] = format!("log c[{s}]");
        }
        for r in 0..self.n_rods {
            out[self.m(r)] = format!("log M[{r}]");
            out[self.i(r)] = format!("log I11[{r}]");
        }
        if control {
            out[self.h()] = "log h".into();
        }
        out
    }
}

/// Absolute parameters consistent with `ratios` and `anchor`.
///
/// `I33` is not observable from torques perpendicular to the rod and is
/// taken from the rod geometry relative to the fitted `I11`.
pub fn resolve_absolute_params(
    ratios: &RatioEstimates,
    config: &SystemConfig,
    anchor: Option<&Anchor>,
) -> Result<Resolved> {
    ratios.check_positive()?;
    let Some(anchor) = anchor else {
        return Ok(Resolved {
            params: None,
            scale_identifiable: false,
            ratios: ratios.clone(),
        });
    };
    let layout = &ratios.layout;
    let control = layout.groups.iter().any(|g| g.control);
    let vars = Vars {
        n_springs: config.springs().len(),
        n_rods: config.rods().len(),
        tying: layout.tying,
    };
    let n = vars.len(control);
    let mut acc = QrAccumulator::new(n, 1);
    let mut row = vec![0.0; n];
    let mut push = |acc: &mut QrAccumulator, entries: &[(usize, f64)], rhs: f64| {
        row.iter_mut().for_each(|x| *x = 0.0);
        for &(i, x) in entries {
            row[i] += x;
        }
        acc.push_row(&row, &[rhs]);
    };
    let mut k = 0;
    for g in &layout.groups {
        for angular in [false, true] {
            let den = if angular { vars.i(g.rods[0]) } else { vars.m(g.rods[0]) };
            for set in &g.spring_sets {
                let s = set[0];
                push(&mut acc, &[(vars.k(s), 1.0), (den, -1.0)], ratios.values[k].ln());
                push(&mut acc, &[(vars.c(s), 1.0), (den, -1.0)], ratios.values[k + 1].ln());
                k += 2;
            }
            if g.control {
                push(&mut acc, &[(vars.h(), 1.0), (den, -1.0)], ratios.values[k].ln());
                k += 1;
            }
        }
    }
    let w = ANCHOR_WEIGHT;
    let rods: Vec<usize> = match layout.tying {
        Tying::Single => vec![0],
        Tying::Multiple => (0..vars.n_rods).collect(),
    };
    let positive = |name: &str, v: f64| {
        if v > 0.0 {
            Ok(v.ln())
        } else {
            Err(Error::NonPositive { name: name.into(), value: v })
        }
    };
    match anchor {
        Anchor::Mass(m) => {
            let lm = positive("mass anchor", *m)?;
            for &r in &rods {
                push(&mut acc, &[(vars.m(r), w)], w * lm);
            }
        }
        Anchor::RodMasses(ms) => {
            if ms.len() != vars.n_rods {
                return Err(Error::InvalidConfig(format!("{} rod masses for {} rods", ms.len(), vars.n_rods)));
            }
            for &r in &rods {
                let lm = positive("mass anchor", ms[r])?;
                push(&mut acc, &[(vars.m(r), w)], w * lm);
            }
        }
        Anchor::TotalMass(_) => push(&mut acc, &[(vars.m(0), w)], 0.0),
        Anchor::Inertia(i) => {
            let li = positive("inertia anchor", *i)?;
            for &r in &rods {
                push(&mut acc, &[(vars.i(r), w)], w * li);
            }
        }
        Anchor::ControlScale(h) => {
            if !control {
                return Err(Error::InvalidConfig("control-scale anchor needs a control column".into()));
            }
            let lh = positive("control-scale anchor", *h)?;
            push(&mut acc, &[(vars.h(), w)], w * lh);
        }
    }
    let sol = acc.solve(&vars.names(control))?;
    let mut logs = sol.column(0);
    if let Anchor::TotalMass(total) = anchor {
        let lt = positive("total-mass anchor", *total)?;
        let sum: f64 = (0..vars.n_rods).map(|r| logs[vars.m(r)].exp()).sum();
        let shift = lt - sum.ln();
        logs.iter_mut().for_each(|x| *x += shift);
    }
    let springs = (0..vars.n_springs)
        .map(|s| SpringParams {
            stiffness: logs[vars.k(s)].exp(),
            damping: logs[vars.c(s)].exp(),
        })
        .collect();
    let rods = config
        .rods()
        .iter()
        .enumerate()
        .map(|(r, spec)| {
            let i11 = logs[vars.i(r)].exp();
            let (f11, f33) = cylinder_inertia_factors(spec.half_length, spec.radius);
            RodParams {
                mass: logs[vars.m(r)].exp(),
                i11,
                i33: i11 * f33 / f11,
            }
        })
        .collect();
    let params = EngineParams {
        springs,
        rods,
        control_scale: if control { logs[vars.h()].exp() } else { 1.0 },
    };
    params.check_positive()?;
    Ok(Resolved {
        params: Some(params),
        scale_identifiable: true,
        ratios: ratios.clone(),
    })
}
