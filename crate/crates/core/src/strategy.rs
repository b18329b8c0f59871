//! Identification methods behind one trait, selected by name at runtime.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::blackbox::{cma_es, local_search, BlackboxProblem, CmaConfig, LocalConfig, OptimizerResult, Task};
use crate::error::{Error, Result};
use crate::ident::{
    fit_closed_form, fit_iterative, resolve_absolute_params, Anchor, FitConfig, ParamLayout, RatioEstimates,
    RatioModel, TransitionBatch,
};
use crate::koopman::{fit_koopman, KoopmanModel, KoopmanOptions};
use crate::params::{EngineParams, Tying};
use crate::sim::AccelerationModel;
use crate::state::Trajectory;
use crate::topology::SystemConfig;

/// Knobs shared by every method; each method reads the ones it needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodOptions {
    pub tying: Tying,
    pub anchor: Option<Anchor>,
    pub fit: FitConfig,
    pub koopman: KoopmanOptions,
    pub cma: CmaConfig,
    pub local: LocalConfig,
    pub task: Task,
}

impl Default for MethodOptions {
    fn default() -> Self {
        Self {
            tying: Tying::Single,
            anchor: None,
            fit: FitConfig::default(),
            koopman: KoopmanOptions::default(),
            cma: CmaConfig::default(),
            local: LocalConfig::default(),
            task: Task::FreeMass,
        }
    }
}

pub struct IdentifyRequest<'a> {
    pub config: &'a SystemConfig,
    /// Reduced transitions, for the regression methods.
    pub batch: Option<&'a TransitionBatch>,
    /// Whole trajectories, for the trajectory-matching methods.
    pub reference: &'a [Trajectory],
    pub options: &'a MethodOptions,
}

impl IdentifyRequest<'_> {
    fn batch(&self, method: &str) -> Result<&TransitionBatch> {
        self.batch
            .ok_or_else(|| Error::InvalidConfig(format!("{method} needs transition data")))
    }
}

#[derive(Clone, Debug)]
pub enum FittedModel {
    Ratios(RatioEstimates),
    Engine(EngineParams),
    Koopman(KoopmanModel),
}

impl FittedModel {
    pub fn acceleration_model(&self) -> Box<dyn AccelerationModel + '_> {
        match self {
            FittedModel::Ratios(r) => Box::new(RatioModel { estimates: r }),
            FittedModel::Engine(p) => Box::new(p.clone()),
            FittedModel::Koopman(k) => Box::new(k.clone()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            FittedModel::Ratios(_) => "ratios",
            FittedModel::Engine(_) => "engine",
            FittedModel::Koopman(_) => "koopman",
        }
    }

    /// `{"kind": …, "model": …}`, readable by [`FittedModel::from_json`].
    pub fn to_json(&self) -> serde_json::Value {
        let model = match self {
            FittedModel::Ratios(r) => serde_json::from_str(&r.to_json()).expect("valid json"),
            FittedModel::Engine(p) => serde_json::to_value(p).expect("params serialize"),
            FittedModel::Koopman(k) => serde_json::to_value(k).expect("model serializes"),
        };
        json!({ "kind": self.kind(), "model": model })
    }

    pub fn from_json(value: &serde_json::Value, config: &SystemConfig) -> Result<Self> {
        let model = value
            .get("model")
            .ok_or_else(|| Error::InvalidConfig("model file lacks `model`".into()))?;
        let text = model.to_string();
        let fitted = match value.get("kind").and_then(|k| k.as_str()) {
            Some("ratios") => FittedModel::Ratios(RatioEstimates::from_json(&text, config)?),
            Some("engine") => FittedModel::Engine(
                serde_json::from_value(model.clone())
                    .map_err(|e| Error::InvalidConfig(format!("engine parameters: {e}")))?,
            ),
            Some("koopman") => FittedModel::Koopman(KoopmanModel::from_json(&text)?),
            other => return Err(Error::InvalidConfig(format!("unknown model kind {other:?}"))),
        };
        if let FittedModel::Engine(p) = &fitted {
            p.check_shape(config)?;
        }
        Ok(fitted)
    }
}

#[derive(Clone, Debug)]
pub struct Identification {
    pub method: String,
    /// Model used for rollouts.
    pub model: FittedModel,
    /// Named ratio estimates such as `K/M`, when the method yields them.
    pub ratios: BTreeMap<String, f64>,
    /// Absolute parameters, when an anchor or the method fixes the scale.
    pub absolute: Option<EngineParams>,
    pub iterations: usize,
    pub seconds: f64,
    pub sec_per_itr: f64,
    /// Method-specific diagnostics.
    pub report: serde_json::Value,
}

pub trait Identifier: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    fn identify(&self, request: &IdentifyRequest<'_>) -> Result<Identification>;
}

fn ratio_identification(
    method: &str,
    request: &IdentifyRequest<'_>,
    estimates: RatioEstimates,
    iterations: usize,
    seconds: f64,
    report: serde_json::Value,
) -> Result<Identification> {
    let resolved = resolve_absolute_params(&estimates, request.config, request.options.anchor.as_ref())?;
    // The dynamics depend on the ratios alone; reconciling them with an
    // anchor only adds round-off to rollouts.
    Ok(Identification {
        method: method.into(),
        model: FittedModel::Ratios(estimates.clone()),
        ratios: estimates.named().into_iter().collect(),
        absolute: resolved.params,
        iterations,
        seconds,
        sec_per_itr: seconds / iterations.max(1) as f64,
        report: json!({
            "scale_identifiable": resolved.scale_identifiable,
            "diagnostics": report,
        }),
    })
}

struct ClosedForm;

impl Identifier for ClosedForm {
    fn name(&self) -> &'static str {
        "ident-closed"
    }

    fn description(&self) -> &'static str {
        "least squares on the reduced acceleration rows"
    }

    fn identify(&self, request: &IdentifyRequest<'_>) -> Result<Identification> {
        let batch = request.batch(self.name())?;
        let layout = ParamLayout::new(request.config, request.options.tying, batch.has_controls());
        let fit = fit_closed_form(batch, &layout)?;
        let report = json!({ "rows": fit.rows, "residual_rms": fit.residual_rms });
        ratio_identification(self.name(), request, fit.estimates, 1, fit.seconds, report)
    }
}

struct Iterative;

impl Identifier for Iterative {
    fn name(&self) -> &'static str {
        "ident-iterative"
    }

    fn description(&self) -> &'static str {
        "minibatch Adam on the one-step state error"
    }

    fn identify(&self, request: &IdentifyRequest<'_>) -> Result<Identification> {
        let batch = request.batch(self.name())?;
        let layout = ParamLayout::new(request.config, request.options.tying, batch.has_controls());
        let start = Instant::now();
        let fit = fit_iterative(batch, &layout, &request.options.fit)?;
        let seconds = start.elapsed().as_secs_f64();
        let epochs = fit.trace.loss_curve.len();
        let report = json!({ "loss_curve": fit.trace.loss_curve, "epoch_seconds": fit.trace.epoch_seconds });
        ratio_identification(self.name(), request, fit.estimates, epochs, seconds, report)
    }
}

struct Koopman;

impl Identifier for Koopman {
    fn name(&self) -> &'static str {
        "koopman"
    }

    fn description(&self) -> &'static str {
        "quadratic-lift linear operator onto accelerations"
    }

    fn identify(&self, request: &IdentifyRequest<'_>) -> Result<Identification> {
        let batch = request.batch(self.name())?;
        let start = Instant::now();
        let fit = fit_koopman(batch, request.config, &request.options.koopman)?;
        let seconds = start.elapsed().as_secs_f64();
        Ok(Identification {
            method: self.name().into(),
            report: json!({
                "rows": fit.rows,
                "rank": fit.rank,
                "max_residual_rms": fit.max_residual_rms(),
            }),
            model: FittedModel::Koopman(fit.model),
            ratios: BTreeMap::new(),
            absolute: None,
            iterations: 1,
            seconds,
            sec_per_itr: seconds,
        })
    }
}

fn blackbox_identification(method: &str, problem: &BlackboxProblem, result: OptimizerResult) -> Identification {
    let params = problem.params(&result.best);
    let layout = ParamLayout::new(&problem.config, Tying::Single, false);
    let ratios = RatioEstimates::from_params(&layout, &params);
    Identification {
        method: method.into(),
        model: FittedModel::Engine(params.clone()),
        ratios: ratios.named().into_iter().collect(),
        absolute: Some(params),
        iterations: result.history.len(),
        seconds: result.history.iter().map(|r| r.wall_seconds).sum(),
        sec_per_itr: result.seconds_per_iteration(),
        report: serde_json::to_value(&result).expect("result serializes"),
    }
}

fn problem(request: &IdentifyRequest<'_>, method: &str) -> Result<BlackboxProblem> {
    if request.reference.is_empty() {
        return Err(Error::InvalidConfig(format!("{method} needs reference trajectories")));
    }
    Ok(BlackboxProblem {
        config: request.config.clone(),
        reference: request.reference.to_vec(),
        task: request.options.task,
    })
}

struct Cma;

impl Identifier for Cma {
    fn name(&self) -> &'static str {
        "cma"
    }

    fn description(&self) -> &'static str {
        "CMA-ES on the trajectory-matching loss"
    }

    fn identify(&self, request: &IdentifyRequest<'_>) -> Result<Identification> {
        let problem = problem(request, self.name())?;
        let loss = |x: &[f64]| problem.loss(x);
        let result = cma_es(&loss, &problem.space(), &request.options.cma)?;
        Ok(blackbox_identification(self.name(), &problem, result))
    }
}

struct Local;

impl Identifier for Local {
    fn name(&self) -> &'static str {
        "local-search"
    }

    fn description(&self) -> &'static str {
        "projected BFGS with finite-difference gradients on the trajectory-matching loss"
    }

    fn identify(&self, request: &IdentifyRequest<'_>) -> Result<Identification> {
        let problem = problem(request, self.name())?;
        let loss = |x: &[f64]| problem.loss(x);
        let space = problem.space();
        let result = local_search(&loss, &space, &space.init, &request.options.local)?;
        Ok(blackbox_identification(self.name(), &problem, result))
    }
}

pub struct Registry {
    entries: Vec<Box<dyn Identifier>>,
}

impl Registry {
    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    /// Every method shipped with the crate.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(ClosedForm));
        r.register(Box::new(Iterative));
        r.register(Box::new(Koopman));
        r.register(Box::new(Cma));
        r.register(Box::new(Local));
        r
    }

    /// Adds a method, replacing any existing one of the same name.
    pub fn register(&mut self, method: Box<dyn Identifier>) {
        self.entries.retain(|e| e.name() != method.name());
        self.entries.push(method);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Identifier> {
        self.entries
            .iter()
            .find(|e| e.name() == name)
            .map(|e| e.as_ref())
            .ok_or_else(|| Error::UnknownStrategy(name.into()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name()).collect()
    }
}
