//! Rods, springs, anchors and the incidence graph connecting them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;

/// Largest accepted integration step.
pub const MAX_DT: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum End {
    Plus,
    Minus,
}

impl End {
    /// +1 for the `+` end (at `p + r`), -1 for the `-` end.
    pub fn sign(self) -> f64 {
        match self {
            End::Plus => 1.0,
            End::Minus => -1.0,
        }
    }

    pub fn index(self) -> usize {
        match self {
            End::Plus => 0,
            End::Minus => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttachmentRef {
    RodEnd { rod: usize, end: End },
    Anchor { anchor: usize },
}

/// A rigid rod whose local axis is `+z`. Inertia is `diag(i11, i11, i33)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RodSpecRepr", into = "RodSpecRepr")]
pub struct RodSpec {
    pub half_length: f64,
    pub radius: f64,
    pub mass: f64,
    pub i11: f64,
    pub i33: f64,
}

impl RodSpec {
    /// Solid cylinder of height `2 * half_length`.
    pub fn solid_cylinder(half_length: f64, radius: f64, mass: f64) -> Self {
        let (f11, f33) = cylinder_inertia_factors(half_length, radius);
        Self {
            half_length,
            radius,
            mass,
            i11: mass * f11,
            i33: mass * f33,
        }
    }

    fn check(&self) -> Result<()> {
        let ok = [self.half_length, self.radius, self.mass, self.i11, self.i33]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "rod needs positive finite half_length, radius, mass and inertia, got {self:?}"
            )))
        }
    }
}

/// `(I11 / M, I33 / M)` of a solid cylinder with height `2 * half_length`.
pub fn cylinder_inertia_factors(half_length: f64, radius: f64) -> (f64, f64) {
    let height = 2.0 * half_length;
    (
        height * height / 12.0 + radius * radius / 4.0,
        radius * radius / 2.0,
    )
}

#[derive(Serialize, Deserialize)]
struct RodSpecRepr {
    half_length: f64,
    radius: f64,
    mass: f64,
    inertia: [f64; 3],
}

impl TryFrom<RodSpecRepr> for RodSpec {
    type Error = String;

    fn try_from(r: RodSpecRepr) -> std::result::Result<Self, String> {
        if r.inertia[0] != r.inertia[1] {
            return Err(format!(
                "rod inertia must be [I11, I11, I33], got {:?}",
                r.inertia
            ));
        }
        Ok(RodSpec {
            half_length: r.half_length,
            radius: r.radius,
            mass: r.mass,
            i11: r.inertia[0],
            i33: r.inertia[2],
        })
    }
}

impl From<RodSpec> for RodSpecRepr {
    fn from(r: RodSpec) -> Self {
        RodSpecRepr {
            half_length: r.half_length,
            radius: r.radius,
            mass: r.mass,
            inertia: [r.i11, r.i11, r.i33],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpringSpec {
    pub stiffness: f64,
    pub damping: f64,
    pub rest_length: f64,
    pub a: AttachmentRef,
    pub b: AttachmentRef,
}

/// A spring touching a rod end. `sign` is +1 when the rod end is the spring's
/// `a` attachment and -1 when it is `b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Incident {
    pub spring: usize,
    pub sign: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RodIncidence {
    /// Indexed by [`End::index`].
    pub ends: [Vec<Incident>; 2],
}

impl RodIncidence {
    pub fn at(&self, end: End) -> &[Incident] {
        &self.ends[end.index()]
    }

    /// Distinct springs touching this rod, in ascending order.
    pub fn springs(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.ends.iter().flatten().map(|i| i.spring).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// Bipartite graph between spring vertices and rod-end/anchor vertices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologyRepr", into = "TopologyRepr")]
pub struct TopologyGraph {
    rods: Vec<RodSpec>,
    springs: Vec<SpringSpec>,
    anchors: Vec<Vec3>,
    incidence: Vec<RodIncidence>,
}

#[derive(Serialize, Deserialize)]
struct TopologyRepr {
    rods: Vec<RodSpec>,
    springs: Vec<SpringSpec>,
    #[serde(default)]
    anchors: Vec<[f64; 3]>,
}

impl TryFrom<TopologyRepr> for TopologyGraph {
    type Error = Error;

    fn try_from(r: TopologyRepr) -> Result<Self> {
        TopologyGraph::new(
            r.rods,
            r.springs,
            r.anchors.into_iter().map(Vec3::from).collect(),
        )
    }
}

impl From<TopologyGraph> for TopologyRepr {
    fn from(t: TopologyGraph) -> Self {
        TopologyRepr {
            rods: t.rods,
            springs: t.springs,
            anchors: t.anchors.iter().map(|a| [a.x, a.y, a.z]).collect(),
        }
    }
}

impl TopologyGraph {
    pub fn new(rods: Vec<RodSpec>, springs: Vec<SpringSpec>, anchors: Vec<Vec3>) -> Result<Self> {
        for rod in &rods {
            rod.check()?;
        }
        if anchors.iter().any(|a| !a.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidConfig("anchor coordinates must be finite".into()));
        }
        let mut incidence = vec![RodIncidence::default(); rods.len()];
        for (id, s) in springs.iter().enumerate() {
            if !(s.stiffness.is_finite() && s.stiffness > 0.0) {
                return Err(Error::InvalidConfig(format!("spring {id}: stiffness must be > 0")));
            }
            if !(s.damping.is_finite() && s.damping >= 0.0) {
                return Err(Error::InvalidConfig(format!("spring {id}: damping must be >= 0")));
            }
            if !(s.rest_length.is_finite() && s.rest_length > 0.0) {
                return Err(Error::InvalidConfig(format!("spring {id}: rest length must be > 0")));
            }
            if s.a == s.b {
                return Err(Error::InvalidConfig(format!(
                    "spring {id}: both attachments are the same point"
                )));
            }
            for (side, at, sign) in [("a", s.a, 1.0), ("b", s.b, -1.0)] {
                match at {
                    AttachmentRef::RodEnd { rod, end } => {
                        let Some(inc) = incidence.get_mut(rod) else {
                            return Err(Error::DanglingAttachment {
                                spring: id,
                                side,
                                what: format!("rod {rod}"),
                            });
                        };
                        inc.ends[end.index()].push(Incident { spring: id, sign });
                    }
                    AttachmentRef::Anchor { anchor } => {
                        if anchor >= anchors.len() {
                            return Err(Error::DanglingAttachment {
                                spring: id,
                                side,
                                what: format!("anchor {anchor}"),
                            });
                        }
                    }
                }
            }
        }
        Ok(Self {
            rods,
            springs,
            anchors,
            incidence,
        })
    }

    pub fn rods(&self) -> &[RodSpec] {
        &self.rods
    }

    pub fn springs(&self) -> &[SpringSpec] {
        &self.springs
    }

    pub fn anchors(&self) -> &[Vec3] {
        &self.anchors
    }

    pub fn incidence(&self) -> &[RodIncidence] {
        &self.incidence
    }

    /// Copy with rod and spring physical values replaced.
    pub fn with_values(&self, rods: Vec<RodSpec>, springs: Vec<SpringSpec>) -> Result<Self> {
        if rods.len() != self.rods.len() || springs.len() != self.springs.len() {
            return Err(Error::InvalidConfig("element count changed".into()));
        }
        TopologyGraph::new(rods, springs, self.anchors.clone())
    }

    /// Copy with anchors replaced (same count).
    pub fn with_anchors(&self, anchors: Vec<Vec3>) -> Result<Self> {
        if anchors.len() != self.anchors.len() {
            return Err(Error::InvalidConfig("anchor count changed".into()));
        }
        TopologyGraph::new(self.rods.clone(), self.springs.clone(), anchors)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConfigRepr", into = "ConfigRepr")]
pub struct SystemConfig {
    pub name: String,
    pub gravity: Vec3,
    pub dt: f64,
    pub topology: TopologyGraph,
}

#[derive(Serialize, Deserialize)]
struct ConfigRepr {
    name: String,
    gravity: [f64; 3],
    dt: f64,
    #[serde(flatten)]
    topology: TopologyRepr,
}

impl TryFrom<ConfigRepr> for SystemConfig {
    type Error = Error;

    fn try_from(r: ConfigRepr) -> Result<Self> {
        SystemConfig::new(r.name, Vec3::from(r.gravity), r.dt, r.topology.try_into()?)
    }
}

impl From<SystemConfig> for ConfigRepr {
    fn from(c: SystemConfig) -> Self {
        ConfigRepr {
            name: c.name,
            gravity: [c.gravity.x, c.gravity.y, c.gravity.z],
            dt: c.dt,
            topology: c.topology.into(),
        }
    }
}

impl SystemConfig {
    pub fn new(name: impl Into<String>, gravity: Vec3, dt: f64, topology: TopologyGraph) -> Result<Self> {
        let cfg = Self {
            name: name.into(),
            gravity,
            dt,
            topology,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0 && self.dt <= MAX_DT) {
            return Err(Error::InvalidConfig(format!(
                "dt must lie in (0, {MAX_DT}], got {}",
                self.dt
            )));
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(Error::InvalidConfig("gravity must be finite".into()));
        }
        Ok(())
    }

    pub fn rods(&self) -> &[RodSpec] {
        self.topology.rods()
    }

    pub fn springs(&self) -> &[SpringSpec] {
        self.topology.springs()
    }

    pub fn with_dt(&self, dt: f64) -> Result<Self> {
        SystemConfig::new(self.name.clone(), self.gravity, dt, self.topology.clone())
    }

    pub fn with_gravity(&self, gravity: Vec3) -> Result<Self> {
        SystemConfig::new(self.name.clone(), gravity, self.dt, self.topology.clone())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Stable 64-bit FNV-1a digest of the compact JSON form.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf29ce484222325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rod() -> RodSpec {
        RodSpec::solid_cylinder(1.0, 0.05, 10.0)
    }

    fn spring(a: AttachmentRef, b: AttachmentRef) -> SpringSpec {
        SpringSpec {
            stiffness: 100.0,
            damping: 10.0,
            rest_length: 1.0,
            a,
            b,
        }
    }

    #[test]
    fn dangling_rod_reference_is_rejected() {
        let err = TopologyGraph::new(
            vec![rod()],
            vec![spring(
                AttachmentRef::RodEnd { rod: 3, end: End::Plus },
                AttachmentRef::Anchor { anchor: 0 },
            )],
            vec![Vec3::zeros()],
        )
        .unwrap_err();
        assert!(matches!(err, Error::DanglingAttachment { spring: 0, side: "a", .. }));
    }

    #[test]
    fn dangling_anchor_is_rejected() {
        let err = TopologyGraph::new(
            vec![rod()],
            vec![spring(
                AttachmentRef::RodEnd { rod: 0, end: End::Plus },
                AttachmentRef::Anchor { anchor: 1 },
            )],
            vec![Vec3::zeros()],
        )
        .unwrap_err();
        assert!(matches!(err, Error::DanglingAttachment { side: "b", .. }));
    }

    #[test]
    fn same_point_twice_is_rejected() {
        let at = AttachmentRef::RodEnd { rod: 0, end: End::Minus };
        assert!(TopologyGraph::new(vec![rod()], vec![spring(at, at)], vec![]).is_err());
    }

    #[test]
    fn dt_guard() {
        let t = TopologyGraph::new(vec![rod()], vec![], vec![]).unwrap();
        assert!(SystemConfig::new("x", Vec3::zeros(), 0.02, t.clone()).is_err());
        assert!(SystemConfig::new("x", Vec3::zeros(), 0.0, t.clone()).is_err());
        assert!(SystemConfig::new("x", Vec3::zeros(), 0.002, t).is_ok());
    }

    #[test]
    fn cylinder_inertia() {
        let r = RodSpec::solid_cylinder(1.0, 0.1, 10.0);
        assert!((r.i11 - 10.0 * (4.0 / 12.0 + 0.01 / 4.0)).abs() < 1e-12);
        assert!((r.i33 - 10.0 * 0.01 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn json_layout() {
        let t = TopologyGraph::new(
            vec![rod()],
            vec![spring(
                AttachmentRef::RodEnd { rod: 0, end: End::Plus },
                AttachmentRef::Anchor { anchor: 0 },
            )],
            vec![Vec3::new(1.0, 2.0, 3.0)],
        )
        .unwrap();
        let cfg = SystemConfig::new("demo", Vec3::new(0.0, 0.0, -9.81), 0.002, t).unwrap();
        let v: serde_json::Value = serde_json::to_value(&cfg).unwrap();
        assert_eq!(v["gravity"], serde_json::json!([0.0, 0.0, -9.81]));
        assert_eq!(v["anchors"], serde_json::json!([[1.0, 2.0, 3.0]]));
        assert_eq!(v["springs"][0]["a"], serde_json::json!({"rod": 0, "end": "plus"}));
        assert_eq!(v["springs"][0]["b"], serde_json::json!({"anchor": 0}));
        assert_eq!(v["rods"][0]["inertia"][0], v["rods"][0]["inertia"][1]);
        let back: SystemConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
    }
}
