use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::blackbox::Task;
use crate::error::{Error, Result};
use crate::eval::metrics::{compare_rollouts, ErrorCurve};
use crate::eval::report::{RunRecord, SuccessReport};
use crate::ident::{build_features, tune_control_scalar, Anchor, FitConfig, ParamLayout, RatioEstimates, TransitionBatch};
use crate::koopman::KoopmanOptions;
use crate::params::{EngineParams, Tying};
use crate::presets::{self, Scenario};
use crate::sim::{
    rollout_with, sample_dataset, sample_trajectory, sample_transition_subset, subset_count, transitions,
    trajectory_seed, AccelerationModel, Controls, DatasetSpec, InitDistribution, PerturbationSchedule, PoolSpec,
};
use crate::state::Trajectory;
use crate::strategy::{Identification, IdentifyRequest, MethodOptions, Registry};

pub const PROTOCOLS: [&str; 6] = [
    "simple_ratio",
    "simple_known_M",
    "icosa_uniform",
    "icosa_nonuniform",
    "data_efficiency",
    "generalization",
];

/// Index offset of the held-out evaluation trajectories within a seed's
/// trajectory family.
const TEST_STREAM: usize = 1 << 32;

/// Which parameters a run is scored on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Score {
    /// `K/M` and `c/M` of a tied fit.
    Ratio,
    /// Every `K[s]` and `c[s]`.
    Springs,
    /// Every `K[s]`, `c[s]` and `M[r]`.
    Core,
}

impl Score {
    /// `ratio` or `absolute`.
    pub fn kind(self) -> &'static str {
        match self {
            Score::Ratio => "ratio",
            Score::Springs | Score::Core => "absolute",
        }
    }

    fn truth(self, truth: &EngineParams, layout: &ParamLayout) -> BTreeMap<String, f64> {
        match self {
            Score::Ratio => RatioEstimates::from_params(layout, truth)
                .named()
                .into_iter()
                .filter(|(k, _)| k == "K/M" || k == "c/M")
                .collect(),
            Score::Springs => truth
                .core_values()
                .into_iter()
                .filter(|(k, _)| !k.starts_with("M["))
                .collect(),
            Score::Core => truth.core_values(),
        }
    }

    fn estimates(self, fit: &Identification) -> BTreeMap<String, f64> {
        match self {
            Score::Ratio => fit.ratios.clone(),
            Score::Springs | Score::Core => fit.absolute.as_ref().map(|p| p.named_values()).unwrap_or_default(),
        }
    }
}

/// Where absolute scale comes from for the ratio-based methods.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorSource {
    /// The true mass of rod 0, applied to every rod.
    Mass,
    /// The true total mass.
    TotalMass,
}

impl AnchorSource {
    fn anchor(self, truth: &EngineParams) -> Anchor {
        match self {
            AnchorSource::Mass => Anchor::Mass(truth.rods[0].mass),
            AnchorSource::TotalMass => Anchor::TotalMass(truth.rods.iter().map(|r| r.mass).sum()),
        }
    }
}

/// Every knob of a protocol. Each protocol starts from its own defaults;
/// overrides are JSON objects merged over them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSettings {
    pub preset: String,
    /// Relative spread of the non-uniform preset.
    pub sigma: f64,
    pub train_traj: usize,
    pub n_steps: usize,
    /// Held-out trajectories for the error curves; zero skips rollouts.
    pub test_traj: usize,
    pub horizon: usize,
    pub init: InitDistribution,
    /// Method names, optionally suffixed `:single` or `:multiple`.
    pub methods: Vec<String>,
    pub options: MethodOptions,
    pub anchor: Option<AnchorSource>,
    /// Black-box methods search `(K, c)` with the true mass fixed.
    pub known_mass: bool,
    pub score: Score,
    /// Training trajectories used as the black-box reference.
    pub blackbox_traj: usize,
    /// Iteration budget for the black-box methods; `None` keeps their own.
    pub blackbox_iterations: Option<usize>,
    pub fractions: Vec<f64>,
    pub pool_traj: usize,
    pub pool_steps: usize,
    pub h_values: Vec<f64>,
    pub forced_traj: usize,
    pub forced_steps: usize,
    pub horizons: Vec<usize>,
    pub perturbation_period: usize,
    pub perturbation_magnitude: f64,
    pub control_fit: FitConfig,
}

impl ProtocolSettings {
    fn base(preset: &str) -> Self {
        Self {
            preset: preset.into(),
            sigma: 0.2,
            train_traj: 100,
            n_steps: 2000,
            test_traj: 1,
            horizon: 2000,
            init: InitDistribution::default(),
            methods: Vec::new(),
            options: MethodOptions::default(),
            anchor: None,
            known_mass: false,
            score: Score::Core,
            blackbox_traj: 1,
            blackbox_iterations: None,
            fractions: Vec::new(),
            pool_traj: 0,
            pool_steps: 0,
            h_values: Vec::new(),
            forced_traj: 0,
            forced_steps: 0,
            horizons: Vec::new(),
            perturbation_period: PerturbationSchedule::DEFAULT_PERIOD,
            perturbation_magnitude: PerturbationSchedule::DEFAULT_MAGNITUDE,
            control_fit: FitConfig::default(),
        }
    }

    pub fn defaults(protocol: &str) -> Result<Self> {
        let methods = |m: &[&str]| m.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let all = methods(&["ident-closed", "ident-iterative", "cma", "local-search"]);
        Ok(match protocol {
            "simple_ratio" => Self {
                methods: all,
                score: Score::Ratio,
                blackbox_iterations: Some(30),
                ..Self::base("simple")
            },
            "simple_known_M" => Self {
                methods: all,
                anchor: Some(AnchorSource::Mass),
                known_mass: true,
                score: Score::Springs,
                ..Self::base("simple")
            },
            "icosa_uniform" => Self {
                train_traj: 50,
                n_steps: 500,
                methods: methods(&["ident-closed", "koopman"]),
                anchor: Some(AnchorSource::Mass),
                // identical rods share one operator
                options: MethodOptions {
                    koopman: KoopmanOptions { per_rod: false, ..KoopmanOptions::default() },
                    ..MethodOptions::default()
                },
                ..Self::base("icosa_uniform")
            },
            "icosa_nonuniform" => Self {
                train_traj: 50,
                n_steps: 500,
                methods: methods(&["ident-closed:single", "ident-closed:multiple", "koopman"]),
                anchor: Some(AnchorSource::TotalMass),
                ..Self::base("icosa_nonuniform")
            },
            "data_efficiency" => Self {
                train_traj: 0,
                n_steps: 0,
                methods: methods(&["ident-closed:multiple", "koopman"]),
                anchor: Some(AnchorSource::TotalMass),
                fractions: vec![0.1, 0.01, 0.001, 0.0001],
                pool_traj: 1000,
                pool_steps: 736,
                ..Self::base("icosa_nonuniform")
            },
            "generalization" => Self {
                train_traj: 50,
                n_steps: 500,
                test_traj: 0,
                methods: methods(&["ident-closed:multiple"]),
                anchor: Some(AnchorSource::TotalMass),
                h_values: vec![1.0, 2.5],
                forced_traj: 20,
                forced_steps: 2000,
                horizons: vec![4000, 20000],
                ..Self::base("icosa_nonuniform")
            },
            other => return Err(Error::UnknownProtocol(other.into())),
        })
    }

    /// Defaults of `protocol` with `overrides` merged in key by key.
    pub fn resolve(protocol: &str, overrides: Option<&Value>) -> Result<Self> {
        let defaults = Self::defaults(protocol)?;
        let Some(over) = overrides else { return Ok(defaults) };
        let mut merged = serde_json::to_value(&defaults).expect("settings serialize");
        merge(&mut merged, over);
        serde_json::from_value(merged).map_err(|e| Error::InvalidConfig(format!("protocol overrides: {e}")))
    }

    fn perturbation(&self, seed: u64) -> PerturbationSchedule {
        PerturbationSchedule {
            period: self.perturbation_period,
            magnitude: self.perturbation_magnitude,
            seed,
        }
    }
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// Splits `ident-closed:multiple` into the registry name and a tying.
pub fn parse_method(label: &str) -> Result<(&str, Option<Tying>)> {
    match label.split_once(':') {
        Some((name, tying)) => Ok((name, Some(tying.parse()?))),
        None => Ok((label, None)),
    }
}

/// Accumulated rollout error of one method on one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutMetric {
    pub label: String,
    pub steps: usize,
    /// `None` when the rollout or the fit failed.
    pub accumulated_pos_mse: Option<f64>,
    pub accumulated_quat_mse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub runs: Vec<RunRecord>,
    pub metrics: Vec<RolloutMetric>,
    #[serde(skip)]
    pub curves: Vec<ErrorCurve>,
    /// Method diagnostics keyed by run label, without wall-clock fields.
    pub fit_report: Value,
}

impl SeedResult {
    pub fn metric(&self, label: &str) -> Option<&RolloutMetric> {
        self.metrics.iter().find(|m| m.label == label)
    }

    pub fn run(&self, method: &str) -> Option<&RunRecord> {
        self.runs.iter().find(|r| r.method == method)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    pub protocol: String,
    pub settings: ProtocolSettings,
    pub seeds: Vec<SeedResult>,
    pub reports: Vec<SuccessReport>,
}

impl ProtocolResult {
    pub fn report(&self, method: &str) -> Option<&SuccessReport> {
        self.reports.iter().find(|r| r.method == method)
    }
}

/// Drops wall-clock entries so reports are reproducible byte for byte.
pub fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.retain(|k, _| !matches!(k.as_str(), "wall_seconds" | "epoch_seconds" | "seconds"));
            map.values_mut().for_each(strip_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

/// Per-step mean of the error curves against several references.
fn rollout_curve(
    model: &dyn AccelerationModel,
    scenario: &Scenario,
    references: &[Trajectory],
    label: &str,
) -> Result<ErrorCurve> {
    let mut total: Option<ErrorCurve> = None;
    for reference in references {
        let predicted = rollout_with(
            model,
            reference.initial(),
            &scenario.config,
            reference.n_steps(),
            Controls::Recorded(&reference.controls),
        )?;
        let c = compare_rollouts(&predicted, reference, label)?;
        match total.as_mut() {
            None => total = Some(c),
            Some(t) => {
                t.pos_mse.iter_mut().zip(&c.pos_mse).for_each(|(a, b)| *a += b);
                t.quat_mse.iter_mut().zip(&c.quat_mse).for_each(|(a, b)| *a += b);
            }
        }
    }
    let mut curve = total.ok_or_else(|| Error::InvalidConfig("no reference trajectories".into()))?;
    let n = references.len() as f64;
    curve.pos_mse.iter_mut().chain(curve.quat_mse.iter_mut()).for_each(|x| *x /= n);
    Ok(curve)
}

struct SeedBuilder {
    result: SeedResult,
    fit_report: serde_json::Map<String, Value>,
}

impl SeedBuilder {
    fn new(seed: u64) -> Self {
        Self {
            result: SeedResult {
                seed,
                runs: Vec::new(),
                metrics: Vec::new(),
                curves: Vec::new(),
                fit_report: Value::Null,
            },
            fit_report: serde_json::Map::new(),
        }
    }

    fn rollout(&mut self, label: &str, model: Result<&dyn AccelerationModel>, scenario: &Scenario, refs: &[Trajectory]) {
        let steps = refs.first().map_or(0, Trajectory::n_steps);
        let curve = model.and_then(|m| rollout_curve(m, scenario, refs, label));
        let metric = match &curve {
            Ok(c) => RolloutMetric {
                label: label.into(),
                steps,
                accumulated_pos_mse: Some(c.final_accumulated_pos()),
                accumulated_quat_mse: Some(c.final_accumulated_quat()),
                error: None,
            },
            Err(e) => RolloutMetric {
                label: label.into(),
                steps,
                accumulated_pos_mse: None,
                accumulated_quat_mse: None,
                error: Some(e.to_string()),
            },
        };
        self.result.metrics.push(metric);
        if let Ok(c) = curve {
            self.result.curves.push(c);
        }
    }

    fn diagnostics(&mut self, label: &str, mut report: Value) {
        strip_timing(&mut report);
        self.fit_report.insert(label.into(), report);
    }

    fn finish(mut self) -> SeedResult {
        if !self.fit_report.is_empty() {
            self.result.fit_report = Value::Object(self.fit_report);
        }
        self.result
    }
}

struct Context<'a> {
    settings: &'a ProtocolSettings,
    registry: &'a Registry,
    seed: u64,
    scenario: Scenario,
    truth: EngineParams,
}

impl Context<'_> {
    fn options(&self, tying: Option<Tying>, name: &str) -> MethodOptions {
        let mut o = self.settings.options.clone();
        if let Some(t) = tying {
            o.tying = t;
        }
        o.anchor = self.settings.anchor.map(|a| a.anchor(&self.truth));
        if self.settings.known_mass {
            o.task = Task::KnownMass { mass: self.truth.rods[0].mass };
        }
        o.fit.seed = self.seed;
        o.cma.seed = self.seed;
        if let Some(n) = self.settings.blackbox_iterations {
            if name == "cma" || name == "local-search" {
                o.cma.max_iterations = n;
                o.local.max_iterations = n;
            }
        }
        o
    }

    fn test_set(&self, horizon: usize, truth: &EngineParams, perturbation: bool) -> Result<Vec<Trajectory>> {
        (0..self.settings.test_traj)
            .map(|i| {
                let index = TEST_STREAM + i;
                sample_trajectory(
                    &self.scenario.config,
                    &self.scenario.rest,
                    truth,
                    horizon,
                    &self.settings.init,
                    self.seed,
                    index,
                    perturbation.then(|| self.settings.perturbation(trajectory_seed(self.seed, index as u64))),
                )
            })
            .collect()
    }

    /// Fit one method, score it, and roll it out against `tests`.
    fn fit_and_score(
        &self,
        out: &mut SeedBuilder,
        label: &str,
        method: &str,
        batch: Option<&TransitionBatch>,
        reference: &[Trajectory],
        tests: &[Trajectory],
    ) -> Result<Option<Identification>> {
        let (name, tying) = parse_method(method)?;
        let identifier = self.registry.get(name)?;
        let options = self.options(tying, name);
        let request = IdentifyRequest {
            config: &self.scenario.config,
            batch,
            reference,
            options: &options,
        };
        let layout = ParamLayout::new(&self.scenario.config, Tying::Single, false);
        let truth = self.settings.score.truth(&self.truth, &layout);
        let fit = identifier.identify(&request);
        match &fit {
            Ok(f) => {
                if name != "koopman" {
                    let est = self.settings.score.estimates(f);
                    out.result
                        .runs
                        .push(RunRecord::evaluate(self.seed, label, &est, &truth, f.iterations, f.sec_per_itr));
                }
                out.diagnostics(label, f.report.clone());
            }
            Err(e) => {
                if name != "koopman" {
                    out.result.runs.push(RunRecord::failed(self.seed, label, &truth, e.to_string()));
                }
                out.diagnostics(label, json!({ "error": e.to_string() }));
            }
        }
        if !tests.is_empty() {
            let boxed = fit.as_ref().map(|f| f.model.acceleration_model());
            let model = match &boxed {
                Ok(b) => Ok(b.as_ref()),
                Err(e) => Err(Error::InvalidConfig(format!("fit failed: {e}"))),
            };
            out.rollout(label, model, &self.scenario, tests);
        }
        Ok(fit.ok())
    }
}

fn needs_batch(methods: &[String]) -> bool {
    methods
        .iter()
        .any(|m| m.starts_with("ident") || m.starts_with("koopman"))
}

fn fit_compare(ctx: &Context<'_>) -> Result<SeedResult> {
    let s = ctx.settings;
    let mut out = SeedBuilder::new(ctx.seed);
    let mut spec = DatasetSpec::new(s.train_traj, 0, 0, s.n_steps, ctx.seed);
    spec.init = s.init;
    let data = sample_dataset(&ctx.scenario.config, &ctx.scenario.rest, &ctx.truth, &spec)?;
    let batch = if needs_batch(&s.methods) {
        Some(build_features(transitions(&data.train), &ctx.scenario.config)?)
    } else {
        None
    };
    let reference = &data.train[..s.blackbox_traj.min(data.train.len())];
    let tests = ctx.test_set(s.horizon, &ctx.truth, false)?;
    for method in &s.methods {
        ctx.fit_and_score(&mut out, method, method, batch.as_ref(), reference, &tests)?;
    }
    Ok(out.finish())
}

pub fn fraction_label(method: &str, fraction: f64) -> String {
    format!("{method}@{fraction}")
}

fn data_efficiency(ctx: &Context<'_>) -> Result<SeedResult> {
    let s = ctx.settings;
    let mut out = SeedBuilder::new(ctx.seed);
    let pool = PoolSpec {
        n_traj: s.pool_traj,
        n_steps: s.pool_steps,
        init: s.init,
        seed: ctx.seed,
        perturbation: None,
    };
    let tests = ctx.test_set(s.horizon, &ctx.truth, false)?;
    for &fraction in &s.fractions {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!("fraction must lie in (0, 1], got {fraction}")));
        }
        let count = subset_count(pool.total(), fraction);
        let subset_seed = trajectory_seed(ctx.seed, fraction.to_bits());
        let owned = sample_transition_subset(
            &ctx.scenario.config,
            &ctx.scenario.rest,
            &ctx.truth,
            &pool,
            count,
            subset_seed,
        )?;
        let batch = build_features(owned.iter().map(|t| t.view()), &ctx.scenario.config)?;
        drop(owned);
        for method in &s.methods {
            let label = fraction_label(method, fraction);
            ctx.fit_and_score(&mut out, &label, method, Some(&batch), &[], &tests)?;
        }
    }
    Ok(out.finish())
}

pub fn horizon_label(h: f64, steps: usize) -> String {
    format!("h={h},steps={steps}")
}

fn generalization(ctx: &Context<'_>) -> Result<SeedResult> {
    let s = ctx.settings;
    let method = s
        .methods
        .first()
        .ok_or_else(|| Error::InvalidConfig("generalization needs one method".into()))?;
    let mut out = SeedBuilder::new(ctx.seed);
    let mut spec = DatasetSpec::new(s.train_traj, 0, 0, s.n_steps, ctx.seed);
    spec.init = s.init;
    let data = sample_dataset(&ctx.scenario.config, &ctx.scenario.rest, &ctx.truth, &spec)?;
    let batch = build_features(transitions(&data.train), &ctx.scenario.config)?;
    let fit = ctx
        .fit_and_score(&mut out, method, method, Some(&batch), &data.train[..1], &[])?
        .ok_or_else(|| Error::InvalidConfig(format!("{method} failed on the unforced data")))?;
    let frozen = fit
        .absolute
        .ok_or_else(|| Error::InvalidConfig(format!("{method} gives no absolute parameters; set an anchor")))?;

    for (k, &h) in s.h_values.iter().enumerate() {
        let truth_h = ctx.truth.clone().with_control_scale(h);
        let forced_seed = trajectory_seed(ctx.seed, 1000 + k as u64);
        let mut fspec = DatasetSpec::new(s.forced_traj, 0, 0, s.forced_steps, forced_seed);
        fspec.init = s.init;
        fspec.perturbation = Some(s.perturbation(forced_seed));
        let forced = sample_dataset(&ctx.scenario.config, &ctx.scenario.rest, &truth_h, &fspec)?;
        let fbatch = build_features(transitions(&forced.train), &ctx.scenario.config)?;
        let start = Instant::now();
        let tuned = tune_control_scalar(&fbatch, &ctx.scenario.config, &frozen, &s.control_fit);
        let seconds = start.elapsed().as_secs_f64();
        let label = format!("h-tuning@{h}");
        let truth_map = BTreeMap::from([("h".to_string(), h)]);
        let tuned = match tuned {
            Ok(t) => t,
            Err(e) => {
                out.result.runs.push(RunRecord::failed(ctx.seed, &label, &truth_map, e.to_string()));
                continue;
            }
        };
        let est = BTreeMap::from([("h".to_string(), tuned.h)]);
        let epochs = tuned.trace.len();
        out.result.runs.push(RunRecord::evaluate(
            ctx.seed,
            &label,
            &est,
            &truth_map,
            epochs,
            seconds / epochs.max(1) as f64,
        ));
        out.diagnostics(&label, serde_json::to_value(&tuned).expect("control fit serializes"));
        let fitted = frozen.clone().with_control_scale(tuned.h);
        for &steps in &s.horizons {
            let index = TEST_STREAM + k;
            let reference = sample_trajectory(
                &ctx.scenario.config,
                &ctx.scenario.rest,
                &truth_h,
                steps,
                &s.init,
                forced_seed,
                index,
                Some(s.perturbation(trajectory_seed(forced_seed, index as u64))),
            )?;
            out.rollout(&horizon_label(h, steps), Ok(&fitted), &ctx.scenario, &[reference]);
        }
    }
    Ok(out.finish())
}

/// Run a named protocol for every seed and aggregate per method.
pub fn run_protocol(name: &str, seeds: &[u64], overrides: Option<&Value>) -> Result<ProtocolResult> {
    let settings = ProtocolSettings::resolve(name, overrides)?;
    run_with_settings(name, seeds, settings)
}

pub fn run_with_settings(name: &str, seeds: &[u64], settings: ProtocolSettings) -> Result<ProtocolResult> {
    if !PROTOCOLS.contains(&name) {
        return Err(Error::UnknownProtocol(name.into()));
    }
    let registry = Registry::builtin();
    for m in &settings.methods {
        registry.get(parse_method(m)?.0)?;
    }
    let mut results = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let scenario = presets::by_name(&settings.preset, seed, settings.sigma)?;
        let truth = EngineParams::from_config(&scenario.config);
        let ctx = Context {
            settings: &settings,
            registry: &registry,
            seed,
            scenario,
            truth,
        };
        let r = match name {
            "data_efficiency" => data_efficiency(&ctx),
            "generalization" => generalization(&ctx),
            _ => fit_compare(&ctx),
        };
        results.push(r.map_err(|e| Error::Protocol {
            protocol: name.into(),
            seed,
            source: Box::new(e),
        })?);
    }
    let mut labels: Vec<String> = Vec::new();
    for r in results.iter().flat_map(|s| &s.runs) {
        if !labels.contains(&r.method) {
            labels.push(r.method.clone());
        }
    }
    let reports = labels
        .iter()
        .map(|label| {
            let runs = results
                .iter()
                .flat_map(|s| s.runs.iter().filter(|r| &r.method == label).cloned())
                .collect();
            let kind = if label.starts_with("h-tuning") { "absolute" } else { settings.score.kind() };
            SuccessReport::from_runs(label, kind, runs)
        })
        .collect();
    Ok(ProtocolResult {
        protocol: name.into(),
        settings,
        seeds: results,
        reports,
    })
}
