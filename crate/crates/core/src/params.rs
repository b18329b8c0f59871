//! Physical parameters consumed by the force and acceleration models.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::SystemConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tying {
    /// One `(K, c)` shared by every spring and one `(M, I11)` by every rod.
    Single,
    /// Individual values per spring and per rod.
    Multiple,
}

impl std::str::FromStr for Tying {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Tying::Single),
            "multiple" => Ok(Tying::Multiple),
            other => Err(Error::InvalidConfig(format!("unknown tying `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpringParams {
    pub stiffness: f64,
    pub damping: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RodParams {
    pub mass: f64,
    pub i11: f64,
    pub i33: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineParams {
    pub springs: Vec<SpringParams>,
    pub rods: Vec<RodParams>,
    /// Multiplier `h` on recorded control forces.
    pub control_scale: f64,
}

impl EngineParams {
    /// Ground-truth values stored in a configuration, with `h = 1`.
    pub fn from_config(config: &SystemConfig) -> Self {
        Self {
            springs: config
                .springs()
                .iter()
                .map(|s| SpringParams {
                    stiffness: s.stiffness,
                    damping: s.damping,
                })
                .collect(),
            rods: config
                .rods()
                .iter()
                .map(|r| RodParams {
                    mass: r.mass,
                    i11: r.i11,
                    i33: r.i33,
                })
                .collect(),
            control_scale: 1.0,
        }
    }

    pub fn with_control_scale(mut self, h: f64) -> Self {
        self.control_scale = h;
        self
    }

    pub fn check_shape(&self, config: &SystemConfig) -> Result<()> {
        if self.springs.len() != config.springs().len() || self.rods.len() != config.rods().len() {
            return Err(Error::InvalidConfig(format!(
                "parameter set has {} springs / {} rods, topology has {} / {}",
                self.springs.len(),
                self.rods.len(),
                config.springs().len(),
                config.rods().len()
            )));
        }
        Ok(())
    }

    /// Fails on the first non-positive physical entry.
    pub fn check_positive(&self) -> Result<()> {
        for (name, value) in self.named_values() {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::NonPositive { name, value });
            }
        }
        Ok(())
    }

    /// Named physical values: `K[s]`, `c[s]`, `M[r]`, `I11[r]`, `h`.
    pub fn named_values(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for (i, s) in self.springs.iter().enumerate() {
            out.insert(format!("K[{i}]"), s.stiffness);
            out.insert(format!("c[{i}]"), s.damping);
        }
        for (i, r) in self.rods.iter().enumerate() {
            out.insert(format!("M[{i}]"), r.mass);
            out.insert(format!("I11[{i}]"), r.i11);
        }
        out.insert("h".into(), self.control_scale);
        out
    }

    /// The 2·springs + rods values compared in success checks (`K`, `c`, `M`).
    pub fn core_values(&self) -> BTreeMap<String, f64> {
        self.named_values()
            .into_iter()
            .filter(|(k, _)| k.starts_with("K[") || k.starts_with("c[") || k.starts_with("M["))
            .collect()
    }
}
