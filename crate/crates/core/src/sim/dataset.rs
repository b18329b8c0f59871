use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::params::EngineParams;
use crate::sim::{rollout, Controls, PerturbationSchedule};
use crate::state::{rod_axis_world, ControlInput, SystemState, Trajectory};
use crate::topology::SystemConfig;

/// Uniform jitter around an equilibrium pose.
///
/// Positions get `U(-position, position)` per axis, linear velocities
/// `U(-velocity, velocity)`, and angular velocities `U(-angular, angular)`
/// projected perpendicular to the rod axis.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct InitDistribution {
    pub position: f64,
    pub velocity: f64,
    pub angular: f64,
}

impl Default for InitDistribution {
    fn default() -> Self {
        Self {
            position: 0.1,
            velocity: 0.5,
            angular: 0.5,
        }
    }
}

impl InitDistribution {
    pub fn sample(&self, rest: &SystemState, config: &SystemConfig, rng: &mut impl Rng) -> SystemState {
        let mut uniform = |half: f64| {
            if half > 0.0 {
                Vec3::new(
                    rng.random_range(-half..half),
                    rng.random_range(-half..half),
                    rng.random_range(-half..half),
                )
            } else {
                Vec3::zeros()
            }
        };
        let rods = rest
            .rods
            .iter()
            .zip(config.rods())
            .map(|(r, spec)| {
                let mut s = *r;
                s.p += uniform(self.position);
                s.v += uniform(self.velocity);
                let axis = rod_axis_world(&s, spec).normalize();
                let w = uniform(self.angular);
                s.omega += w - axis * w.dot(&axis);
                s
            })
            .collect();
        SystemState { rods, t: rest.t }
    }
}

/// SplitMix64 of `(seed, index)`: the per-trajectory RNG stream, so results
/// do not depend on scheduling.
pub fn trajectory_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Simulate the trajectory with global index `index` of a seeded family.
#[allow(clippy::too_many_arguments)]
pub fn sample_trajectory(
    config: &SystemConfig,
    rest: &SystemState,
    params: &EngineParams,
    n_steps: usize,
    init: &InitDistribution,
    seed: u64,
    index: usize,
    perturbation: Option<PerturbationSchedule>,
) -> Result<Trajectory> {
    let stream = trajectory_seed(seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let initial = init.sample(rest, config, &mut rng);
    let controls = match perturbation {
        Some(p) => Controls::Perturb(PerturbationSchedule {
            seed: trajectory_seed(p.seed, index as u64),
            ..p
        }),
        None => Controls::None,
    };
    rollout(&initial, config, params, n_steps, controls)
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub n_steps: usize,
    pub init: InitDistribution,
    pub seed: u64,
    pub perturbation: Option<PerturbationSchedule>,
}

impl DatasetSpec {
    pub fn new(train: usize, val: usize, test: usize, n_steps: usize, seed: u64) -> Self {
        Self {
            train,
            val,
            test,
            n_steps,
            init: InitDistribution::default(),
            seed,
            perturbation: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub config_digest: String,
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

/// Simulate train, validation and test trajectories. Trajectory `i` of the
/// concatenated splits uses stream `trajectory_seed(seed, i)`.
pub fn sample_dataset(
    config: &SystemConfig,
    rest: &SystemState,
    params: &EngineParams,
    spec: &DatasetSpec,
) -> Result<Dataset> {
    if spec.train == 0 || spec.n_steps == 0 {
        return Err(Error::InvalidConfig("dataset needs at least one training trajectory and one step".into()));
    }
    let total = spec.train + spec.val + spec.test;
    let mut all: Vec<Trajectory> = (0..total)
        .into_par_iter()
        .map(|i| {
            sample_trajectory(config, rest, params, spec.n_steps, &spec.init, spec.seed, i, spec.perturbation)
        })
        .collect::<Result<_>>()?;
    let test = all.split_off(spec.train + spec.val);
    let val = all.split_off(spec.train);
    Ok(Dataset {
        spec: spec.clone(),
        config_digest: config.digest(),
        train: all,
        val,
        test,
    })
}

/// Borrowed `(S_t, S_{t+1}, u_t)` triple.
#[derive(Clone, Copy, Debug)]
pub struct TransitionRef<'a> {
    pub before: &'a SystemState,
    pub after: &'a SystemState,
    pub controls: &'a [ControlInput],
}

#[derive(Clone, Debug, PartialEq)]
pub struct OwnedTransition {
    pub before: SystemState,
    pub after: SystemState,
    pub controls: Vec<ControlInput>,
}

impl OwnedTransition {
    pub fn view(&self) -> TransitionRef<'_> {
        TransitionRef {
            before: &self.before,
            after: &self.after,
            controls: &self.controls,
        }
    }
}

pub fn transitions(trajs: &[Trajectory]) -> impl Iterator<Item = TransitionRef<'_>> + '_ {
    trajs.iter().flat_map(|t| {
        t.states.windows(2).enumerate().map(move |(k, w)| TransitionRef {
            before: &w[0],
            after: &w[1],
            controls: t.controls.get(k).map(Vec::as_slice).unwrap_or(&[]),
        })
    })
}

pub fn total_transitions(trajs: &[Trajectory]) -> usize {
    trajs.iter().map(Trajectory::n_steps).sum()
}

/// `floor(total · fraction)`, at least one.
pub fn subset_count(total: usize, fraction: f64) -> usize {
    ((total as f64 * fraction).floor() as usize).clamp(1, total.max(1))
}

/// Uniformly chosen subset (without replacement) of a fraction of all
/// transitions, in pool order.
pub fn select_transitions(trajs: &[Trajectory], fraction: f64, seed: u64) -> Result<Vec<TransitionRef<'_>>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let all: Vec<TransitionRef<'_>> = transitions(trajs).collect();
    if fraction == 1.0 {
        return Ok(all);
    }
    let count = subset_count(all.len(), fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, all.len(), count).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| all[i]).collect())
}

/// A seeded trajectory family used as a transition pool without holding it
/// in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolSpec {
    pub n_traj: usize,
    pub n_steps: usize,
    pub init: InitDistribution,
    pub seed: u64,
    pub perturbation: Option<PerturbationSchedule>,
}

impl PoolSpec {
    pub fn total(&self) -> usize {
        self.n_traj * self.n_steps
    }
}

/// Draw `count` transitions uniformly from the pool, simulating only the
/// trajectories that contribute. Identical to selecting from
/// [`sample_dataset`]'s training split with the same seed.
pub fn sample_transition_subset(
    config: &SystemConfig,
    rest: &SystemState,
    params: &EngineParams,
    pool: &PoolSpec,
    count: usize,
    subset_seed: u64,
) -> Result<Vec<OwnedTransition>> {
    let total = pool.total();
    if count == 0 || count > total {
        return Err(Error::InvalidConfig(format!("cannot draw {count} of {total} transitions")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(subset_seed);
    let mut by_traj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in index::sample(&mut rng, total, count).into_iter() {
        by_traj.entry(i / pool.n_steps).or_default().push(i % pool.n_steps);
    }
    let groups: Vec<(usize, Vec<usize>)> = by_traj.into_iter().collect();
    let chunks: Vec<Vec<OwnedTransition>> = groups
        .into_par_iter()
        .map(|(traj, mut steps)| {
            steps.sort_unstable();
            let t = sample_trajectory(
                config,
                rest,
                params,
                pool.n_steps,
                &pool.init,
                pool.seed,
                traj,
                pool.perturbation,
            )?;
            Ok(steps
                .into_iter()
                .map(|k| OwnedTransition {
                    before: t.states[k].clone(),
                    after: t.states[k + 1].clone(),
                    controls: t.controls[k].clone(),
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn split_sizes_and_determinism() {
        let s = presets::simple();
        let p = EngineParams::from_config(&s.config);
        let spec = DatasetSpec::new(5, 2, 1, 20, 7);
        let a = sample_dataset(&s.config, &s.rest, &p, &spec).unwrap();
        let b = sample_dataset(&s.config, &s.rest, &p, &spec).unwrap();
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (5, 2, 1));
        assert!(a.train.iter().all(|t| t.states.len() == 21));
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_ne!(a.train[0].states[0], a.train[1].states[0]);
    }

    #[test]
    fn subset_counts() {
        assert_eq!(subset_count(736_167, 0.0001), 73);
        assert_eq!(subset_count(736_167, 0.1), 73_616);
        assert_eq!(subset_count(10, 0.0001), 1);
        // protocol sizes: 1000 × 2000 training transitions
        assert_eq!(subset_count(1000 * 2000, 1.0), 2_000_000);
    }

    #[test]
    fn pool_subset_matches_materialized_split() {
        let s = presets::icosa_uniform();
        let p = EngineParams::from_config(&s.config);
        let spec = DatasetSpec::new(4, 0, 0, 30, 5);
        let ds = sample_dataset(&s.config, &s.rest, &p, &spec).unwrap();
        let pool = PoolSpec {
            n_traj: 4,
            n_steps: 30,
            init: spec.init,
            seed: 5,
            perturbation: None,
        };
        let sub = sample_transition_subset(&s.config, &s.rest, &p, &pool, 7, 3).unwrap();
        assert_eq!(sub.len(), 7);
        let all: Vec<TransitionRef<'_>> = transitions(&ds.train).collect();
        for t in &sub {
            assert!(all.iter().any(|r| r.before == &t.before && r.after == &t.after));
        }
    }

    #[test]
    fn initial_spin_is_perpendicular_to_axis() {
        let s = presets::icosa_uniform();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let st = InitDistribution::default().sample(&s.rest, &s.config, &mut rng);
        for (r, spec) in st.rods.iter().zip(s.config.rods()) {
            assert!(r.omega.dot(&rod_axis_world(r, spec)).abs() < 1e-12);
        }
    }
}
