//! Dataset directories and configuration files.
//!
//! A dataset directory holds `config.json`, `manifest.json` and, per split,
//! `<split>_states.csv` (one row per rod per state) and a sparse
//! `<split>_controls.csv` listing only steps that carry a control force.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{quat_from_array, quat_to_array, Vec3};
use crate::params::EngineParams;
use crate::sim::{Dataset, DatasetSpec};
use crate::state::{ControlInput, RodState, SystemState, Trajectory};
use crate::topology::SystemConfig;

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFiles {
    pub states: String,
    pub controls: String,
    pub trajectories: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_digest: String,
    pub spec: DatasetSpec,
    pub splits: BTreeMap<String, SplitFiles>,
    /// Parameters that generated the data, when known.
    pub truth: Option<EngineParams>,
    /// Free-form provenance such as the preset name.
    #[serde(default)]
    pub source: BTreeMap<String, String>,
}

#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub config: SystemConfig,
    pub manifest: Manifest,
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

impl LoadedDataset {
    pub fn split(&self, name: &str) -> Result<&[Trajectory]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::InvalidConfig(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct StateRow {
    traj: usize,
    t: usize,
    rod: usize,
    px: f64,
    py: f64,
    pz: f64,
    vx: f64,
    vy: f64,
    vz: f64,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
    wx: f64,
    wy: f64,
    wz: f64,
}

#[derive(Serialize, Deserialize)]
struct ControlRow {
    traj: usize,
    step: usize,
    rod: usize,
    fux: f64,
    fuy: f64,
    fuz: f64,
    rux: f64,
    ruy: f64,
    ruz: f64,
}

/// Unit quaternions are taken as written so round trips are bit-exact.
fn read_quat(c: [f64; 4]) -> crate::math::Quat {
    let q = nalgebra::Quaternion::new(c[0], c[1], c[2], c[3]);
    if (q.norm() - 1.0).abs() < 1e-12 {
        nalgebra::UnitQuaternion::new_unchecked(q)
    } else {
        quat_from_array(c)
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    write_text(path, &(text + "\n"))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::json(path, e))
}

pub fn read_config(path: &Path) -> Result<SystemConfig> {
    read_json(path)
}

pub fn write_config(path: &Path, config: &SystemConfig) -> Result<()> {
    write_text(path, &(config.to_json() + "\n"))
}

/// Write trajectories as state and control CSVs.
pub fn write_trajectories(states_path: &Path, controls_path: &Path, trajs: &[Trajectory]) -> Result<()> {
    let mut sw = csv::Writer::from_path(states_path).map_err(|e| Error::csv(states_path, e))?;
    let mut cw = csv::Writer::from_path(controls_path).map_err(|e| Error::csv(controls_path, e))?;
    for (traj, tr) in trajs.iter().enumerate() {
        for (t, state) in tr.states.iter().enumerate() {
            for (rod, r) in state.rods.iter().enumerate() {
                let q = quat_to_array(&r.q);
                sw.serialize(StateRow {
                    traj,
                    t,
                    rod,
                    px: r.p.x,
                    py: r.p.y,
                    pz: r.p.z,
                    vx: r.v.x,
                    vy: r.v.y,
                    vz: r.v.z,
                    qw: q[0],
                    qx: q[1],
                    qy: q[2],
                    qz: q[3],
                    wx: r.omega.x,
                    wy: r.omega.y,
                    wz: r.omega.z,
                })
                .map_err(|e| Error::csv(states_path, e))?;
            }
        }
        for (step, controls) in tr.controls.iter().enumerate() {
            for (rod, u) in controls.iter().enumerate() {
                if u.is_zero() {
                    continue;
                }
                cw.serialize(ControlRow {
                    traj,
                    step,
                    rod,
                    fux: u.force.x,
                    fuy: u.force.y,
                    fuz: u.force.z,
                    rux: u.arm.x,
                    ruy: u.arm.y,
                    ruz: u.arm.z,
                })
                .map_err(|e| Error::csv(controls_path, e))?;
            }
        }
    }
    if trajs.iter().all(|t| t.control_events() == 0) {
        cw.write_record(["traj", "step", "rod", "fux", "fuy", "fuz", "rux", "ruy", "ruz"])
            .map_err(|e| Error::csv(controls_path, e))?;
    }
    sw.flush().map_err(|e| Error::io(states_path, e))?;
    cw.flush().map_err(|e| Error::io(controls_path, e))
}

/// Read trajectories written by [`write_trajectories`].
pub fn read_trajectories(
    states_path: &Path,
    controls_path: &Path,
    config: &SystemConfig,
    config_ref: &str,
) -> Result<Vec<Trajectory>> {
    let n_rods = config.rods().len();
    let malformed = |path: &Path, detail: String| Error::Malformed {
        path: path.to_path_buf(),
        detail,
    };
    let mut trajs: Vec<Trajectory> = Vec::new();
    let mut rdr = csv::Reader::from_path(states_path).map_err(|e| Error::csv(states_path, e))?;
    for row in rdr.deserialize::<StateRow>() {
        let row = row.map_err(|e| Error::csv(states_path, e))?;
        if row.traj > trajs.len() || row.rod >= n_rods {
            return Err(malformed(states_path, format!("unexpected traj {} rod {}", row.traj, row.rod)));
        }
        if row.traj == trajs.len() {
            trajs.push(Trajectory {
                config_ref: config_ref.to_string(),
                dt: config.dt,
                states: Vec::new(),
                controls: Vec::new(),
            });
        }
        let tr = &mut trajs[row.traj];
        if row.rod == 0 {
            if row.t != tr.states.len() {
                return Err(malformed(states_path, format!("traj {} skips to t={}", row.traj, row.t)));
            }
            tr.states.push(SystemState {
                rods: Vec::with_capacity(n_rods),
                t: row.t as f64 * config.dt,
            });
        }
        let expected_t = tr.states.len().wrapping_sub(1);
        let state = tr
            .states
            .last_mut()
            .filter(|s| s.rods.len() == row.rod && row.t == expected_t)
            .ok_or_else(|| malformed(states_path, format!("rows out of order at traj {} t {}", row.traj, row.t)))?;
        state.rods.push(RodState {
            p: Vec3::new(row.px, row.py, row.pz),
            v: Vec3::new(row.vx, row.vy, row.vz),
            q: read_quat([row.qw, row.qx, row.qy, row.qz]),
            omega: Vec3::new(row.wx, row.wy, row.wz),
        });
    }
    for (i, tr) in trajs.iter_mut().enumerate() {
        if tr.states.iter().any(|s| s.rods.len() != n_rods) {
            return Err(malformed(states_path, format!("traj {i} has incomplete states")));
        }
        tr.controls = vec![Vec::new(); tr.states.len().saturating_sub(1)];
    }
    let mut rdr = csv::Reader::from_path(controls_path).map_err(|e| Error::csv(controls_path, e))?;
    for row in rdr.deserialize::<ControlRow>() {
        let row = row.map_err(|e| Error::csv(controls_path, e))?;
        let tr = trajs
            .get_mut(row.traj)
            .ok_or_else(|| malformed(controls_path, format!("unknown traj {}", row.traj)))?;
        if row.step >= tr.controls.len() || row.rod >= n_rods {
            return Err(malformed(controls_path, format!("step {} rod {} out of range", row.step, row.rod)));
        }
        let slot = &mut tr.controls[row.step];
        if slot.is_empty() {
            *slot = vec![ControlInput::default(); n_rods];
        }
        slot[row.rod] = ControlInput {
            force: Vec3::new(row.fux, row.fuy, row.fuz),
            arm: Vec3::new(row.rux, row.ruy, row.ruz),
        };
    }
    Ok(trajs)
}

/// Write a dataset directory and return its manifest.
pub fn write_dataset(
    dir: &Path,
    config: &SystemConfig,
    data: &Dataset,
    truth: Option<&EngineParams>,
    source: BTreeMap<String, String>,
) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_config(&dir.join("config.json"), config)?;
    let mut splits = BTreeMap::new();
    for (name, trajs) in SPLITS.iter().zip([&data.train, &data.val, &data.test]) {
        let files = SplitFiles {
            states: format!("{name}_states.csv"),
            controls: format!("{name}_controls.csv"),
            trajectories: trajs.len(),
        };
        write_trajectories(&dir.join(&files.states), &dir.join(&files.controls), trajs)?;
        splits.insert(name.to_string(), files);
    }
    let manifest = Manifest {
        config_digest: data.config_digest.clone(),
        spec: data.spec.clone(),
        splits,
        truth: truth.cloned(),
        source,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Load a dataset directory, checking the configuration digest.
pub fn read_dataset(dir: &Path) -> Result<LoadedDataset> {
    let config = read_config(&dir.join("config.json"))?;
    let manifest_path = dir.join("manifest.json");
    let manifest: Manifest = read_json(&manifest_path)?;
    if manifest.config_digest != config.digest() {
        return Err(Error::Malformed {
            path: manifest_path,
            detail: "config digest does not match config.json".into(),
        });
    }
    let mut out = LoadedDataset {
        config,
        manifest,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for name in SPLITS {
        let Some(files) = out.manifest.splits.get(name).cloned() else {
            continue;
        };
        let trajs = read_trajectories(
            &dir.join(&files.states),
            &dir.join(&files.controls),
            &out.config,
            &out.manifest.config_digest,
        )?;
        match name {
            "train" => out.train = trajs,
            "val" => out.val = trajs,
            _ => out.test = trajs,
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::sim::{sample_dataset, PerturbationSchedule};

    #[test]
    fn dataset_round_trip_is_exact() {
        let sc = presets::icosa_uniform();
        let truth = EngineParams::from_config(&sc.config);
        let mut spec = DatasetSpec::new(2, 1, 1, 120, 7);
        spec.perturbation = Some(PerturbationSchedule::new(3));
        let data = sample_dataset(&sc.config, &sc.rest, &truth, &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &sc.config, &data, Some(&truth), BTreeMap::new()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.config, sc.config);
        assert_eq!(back.manifest.truth.as_ref(), Some(&truth));
        for (a, b) in back.train.iter().chain(&back.test).zip(data.train.iter().chain(&data.test)) {
            assert_eq!(a.states.len(), b.states.len());
            for (x, y) in a.states.iter().zip(&b.states) {
                assert_eq!(x.rods, y.rods);
            }
            for step in 0..b.n_steps() {
                for rod in 0..6 {
                    assert_eq!(a.control(step, rod), b.control(step, rod));
                }
            }
        }
    }

    #[test]
    fn tampered_config_is_rejected() {
        let sc = presets::simple();
        let truth = EngineParams::from_config(&sc.config);
        let data = sample_dataset(&sc.config, &sc.rest, &truth, &DatasetSpec::new(1, 0, 0, 5, 1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &sc.config, &data, None, BTreeMap::new()).unwrap();
        let other = sc.config.with_dt(0.001).unwrap();
        write_config(&dir.path().join("config.json"), &other).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Malformed { .. })));
    }
}
