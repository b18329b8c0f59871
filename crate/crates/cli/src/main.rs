//! `rodspring`: simulate spring-rod systems, identify their parameters and
//! run the evaluation protocols.
//!
//! Exit codes: 0 success, 1 I/O or data-format failure, 2 invalid
//! configuration or arguments (including unknown protocols and methods),
//! 3 simulation blow-up, 4 rank-deficient or insufficient data.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use rodspring::eval::{self, file_stem, ProtocolResult, SuccessReport};
use rodspring::ident::{build_features, Anchor};
use rodspring::io::{self, LoadedDataset};
use rodspring::presets::{self, Scenario};
use rodspring::sim::{
    rollout_with, sample_dataset, select_transitions, total_transitions, Controls, DatasetSpec,
    PerturbationSchedule,
};
use rodspring::strategy::{FittedModel, IdentifyRequest, MethodOptions, Registry};
use rodspring::blackbox::Task;
use rodspring::{EngineParams, Error, Tying};

/// `println!` that ends the process quietly when stdout is closed early.
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write;
        if let Err(e) = writeln!(std::io::stdout(), $($t)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
        }
    }};
}

#[derive(Parser)]
#[command(name = "rodspring", version, about = "Spring-rod simulation and system identification")]
struct Cli {
    /// Worker threads for data generation and fitting (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset and write it as CSV plus a manifest.
    Simulate(SimulateArgs),
    /// Fit one identification method to a dataset.
    Identify(IdentifyArgs),
    /// Roll a fitted model forward and compare it with a recorded trajectory.
    Rollout(RolloutArgs),
    /// Run a named evaluation protocol and write its report.
    Protocol(ProtocolArgs),
    /// Re-render plots and the summary table of a protocol report.
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// simple, icosa_uniform or icosa_nonuniform; also supplies the equilibrium pose.
    #[arg(long, default_value = "simple")]
    preset: String,
    /// System configuration JSON replacing the preset's parameters. It must
    /// share the preset's topology.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Relative spread of the non-uniform preset.
    #[arg(long, default_value_t = 0.2)]
    sigma: f64,
    #[arg(long = "traj", default_value_t = 10)]
    n_traj: usize,
    #[arg(long, default_value_t = 0)]
    val: usize,
    #[arg(long, default_value_t = 0)]
    test: usize,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, env = "RODSPRING_SEED", default_value_t = 0)]
    seed: u64,
    /// Apply a random force every `--perturb-period` steps.
    #[arg(long)]
    perturb: bool,
    #[arg(long, default_value_t = PerturbationSchedule::DEFAULT_PERIOD)]
    perturb_period: usize,
    #[arg(long, default_value_t = PerturbationSchedule::DEFAULT_MAGNITUDE)]
    perturb_magnitude: f64,
    /// Ground-truth control multiplier `h`.
    #[arg(long, default_value_t = 1.0)]
    control_scale: f64,
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

#[derive(Args)]
struct IdentifyArgs {
    /// Dataset directory written by `simulate`.
    #[arg(long)]
    data: PathBuf,
    /// ident-closed, ident-iterative, koopman, cma or local-search.
    #[arg(long, default_value = "ident-closed")]
    method: String,
    /// single or multiple [default: single].
    #[arg(long)]
    tying: Option<Tying>,
    /// Fraction of the training transitions to use, in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    fraction: f64,
    #[arg(long, env = "RODSPRING_SEED", default_value_t = 0)]
    seed: u64,
    /// Known mass of every rod: anchors the ratios, and fixes `M` for the black-box methods.
    #[arg(long, conflicts_with = "total_mass")]
    mass: Option<f64>,
    /// Known total mass, anchoring the ratios.
    #[arg(long)]
    total_mass: Option<f64>,
    /// Reference trajectories for the black-box methods.
    #[arg(long, default_value_t = 1)]
    reference: usize,
    /// Koopman: one operator shared by all rods.
    #[arg(long)]
    shared: bool,
    /// Koopman: Tikhonov damping instead of failing on rank deficiency.
    #[arg(long)]
    ridge: Option<f64>,
    /// JSON file with method options, overridden by the flags above.
    #[arg(long)]
    options: Option<PathBuf>,
    #[arg(long, default_value = "fit")]
    out: PathBuf,
}

#[derive(Args)]
struct RolloutArgs {
    #[arg(long)]
    data: PathBuf,
    /// `model.json` written by `identify`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Steps to roll; defaults to the recorded length.
    #[arg(long)]
    horizon: Option<usize>,
    /// Multiplier on recorded controls for engine models.
    #[arg(long)]
    control_scale: Option<f64>,
    #[arg(long, default_value = "rollout")]
    out: PathBuf,
}

#[derive(Args)]
struct ProtocolArgs {
    name: String,
    /// `a..b` (end exclusive), `a..=b`, or a comma-separated list.
    #[arg(long, default_value = "0")]
    seeds: String,
    /// JSON object (inline or a file path) merged over the protocol defaults.
    #[arg(long)]
    overrides: Option<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// A protocol directory, such as `out/simple_ratio`.
    dir: PathBuf,
    /// Linear instead of logarithmic y axes.
    #[arg(long)]
    linear: bool,
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CliResult<T = ()> = Result<T, Failure>;

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Core(e) => match e.root() {
                Error::InvalidConfig(_)
                | Error::DanglingAttachment { .. }
                | Error::DegenerateSpring { .. }
                | Error::UnknownStrategy(_)
                | Error::UnknownProtocol(_)
                | Error::NonPositive { .. }
                | Error::HorizonMismatch { .. } => 2,
                Error::BlowUp { .. } | Error::NonFinite { .. } => 3,
                Error::RankDeficient { .. } | Error::InsufficientData { .. } | Error::NoControlData => 4,
                _ => 1,
            },
        }
    }

    fn hint(&self) -> Option<&'static str> {
        match self {
            Failure::Core(e) => match e.root() {
                Error::RankDeficient { .. } => Some(
                    "hint: use more or more varied transitions (raise --fraction), tie parameters with --tying single, or pass --ridge for koopman",
                ),
                Error::InsufficientData { .. } => {
                    Some("hint: the selected transitions carry no excitation; simulate longer or raise --fraction")
                }
                Error::NoControlData => Some("hint: simulate with --perturb to record control forces"),
                Error::BlowUp { .. } => Some("hint: reduce the time step or check the parameters for instability"),
                _ => None,
            },
            Failure::Usage(_) => None,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Identify(a) => identify(a),
        Command::Rollout(a) => rollout(a),
        Command::Protocol(a) => protocol(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Core(e) => eprintln!("error: {e}"),
                Failure::Usage(m) => eprintln!("error: {m}"),
            }
            if let Some(h) = f.hint() {
                eprintln!("{h}");
            }
            ExitCode::from(f.code())
        }
    }
}

/// Prints the effective configuration and stores it beside the outputs.
fn echo(out: &Path, effective: &Value) -> CliResult {
    let text = serde_json::to_string_pretty(effective).expect("json");
    out!("effective config:\n{text}");
    io::write_text(&out.join("effective_config.json"), &(text + "\n"))?;
    Ok(())
}

fn scenario(preset: &str, seed: u64, sigma: f64) -> CliResult<Scenario> {
    Ok(presets::by_name(preset, seed, sigma)?)
}

fn simulate(a: SimulateArgs) -> CliResult {
    let mut sc = scenario(&a.preset, a.seed, a.sigma)?;
    let mut source_name = a.preset.clone();
    if let Some(path) = &a.config {
        let config = io::read_config(path)?;
        if config.rods().len() != sc.config.rods().len() || config.springs().len() != sc.config.springs().len() {
            return Err(Failure::Usage(format!("{} does not share the topology of preset {}", path.display(), a.preset)));
        }
        sc.config = config;
        source_name = path.display().to_string();
    }
    let truth = EngineParams::from_config(&sc.config).with_control_scale(a.control_scale);
    let mut spec = DatasetSpec::new(a.n_traj, a.val, a.test, a.steps, a.seed);
    if a.perturb {
        spec.perturbation = Some(PerturbationSchedule {
            period: a.perturb_period,
            magnitude: a.perturb_magnitude,
            seed: a.seed,
        });
    }
    let core = truth.core_values();
    echo(
        &a.out,
        &json!({
            "command": "simulate",
            "source": source_name,
            "sigma": a.sigma,
            "dataset": spec,
            "dt": sc.config.dt,
            "gravity": [sc.config.gravity.x, sc.config.gravity.y, sc.config.gravity.z],
            "control_scale": a.control_scale,
            "parameter_count": core.len(),
            "parameters": core,
        }),
    )?;
    let data = sample_dataset(&sc.config, &sc.rest, &truth, &spec)?;
    let source = BTreeMap::from([("preset".to_string(), source_name), ("sigma".to_string(), a.sigma.to_string())]);
    let manifest = io::write_dataset(&a.out, &sc.config, &data, Some(&truth), source)?;
    out!(
        "wrote {} train / {} val / {} test trajectories of {} states to {}",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        a.steps + 1,
        a.out.display()
    );
    out!("config digest {}", manifest.config_digest);
    Ok(())
}

fn method_options(a: &IdentifyArgs) -> CliResult<MethodOptions> {
    let mut o: MethodOptions = match &a.options {
        Some(p) => io::read_json(p)?,
        None => MethodOptions::default(),
    };
    if let Some(t) = a.tying {
        o.tying = t;
    }
    o.fit.seed = a.seed;
    o.cma.seed = a.seed;
    if let Some(m) = a.mass {
        o.anchor = Some(Anchor::Mass(m));
        o.task = Task::KnownMass { mass: m };
    }
    if let Some(m) = a.total_mass {
        o.anchor = Some(Anchor::TotalMass(m));
    }
    if a.shared {
        o.koopman.per_rod = false;
    }
    if a.ridge.is_some() {
        o.koopman.ridge = a.ridge;
    }
    Ok(o)
}

fn rel(e: f64, t: f64) -> f64 {
    (e - t).abs() / t.abs().max(f64::MIN_POSITIVE)
}

/// Threshold on the RMS acceleration residual above which a Koopman fit is
/// flagged as unreliable.
const KOOPMAN_RESIDUAL_WARNING: f64 = 1e-3;

fn identify(a: IdentifyArgs) -> CliResult {
    if !(a.fraction > 0.0 && a.fraction <= 1.0) {
        return Err(Failure::Usage(format!("--fraction must lie in (0, 1], got {}", a.fraction)));
    }
    let registry = Registry::builtin();
    let method = registry.get(&a.method)?;
    let data: LoadedDataset = io::read_dataset(&a.data)?;
    let options = method_options(&a)?;
    let pool = total_transitions(&data.train);
    let selected = select_transitions(&data.train, a.fraction, a.seed)?;
    echo(
        &a.out,
        &json!({
            "command": "identify",
            "data": a.data,
            "method": a.method,
            "fraction": a.fraction,
            "seed": a.seed,
            "transitions": selected.len(),
            "pool": pool,
            "reference_trajectories": a.reference,
            "options": options,
        }),
    )?;
    let batch = build_features(selected, &data.config)?;
    let reference = &data.train[..a.reference.min(data.train.len())];
    let request = IdentifyRequest {
        config: &data.config,
        batch: Some(&batch),
        reference,
        options: &options,
    };
    let fit = method.identify(&request)?;

    out!("\n{} on {} transitions ({} s, {:.3e} s/itr)", fit.method, batch.len(), fmt(fit.seconds), fit.sec_per_itr);
    let truth = data.manifest.truth.as_ref();
    if !fit.ratios.is_empty() {
        let truth_ratios = truth.map(|t| {
            let layout = rodspring::ident::ParamLayout::new(&data.config, options.tying, batch.has_controls());
            rodspring::ident::RatioEstimates::from_params(&layout, t)
                .named()
                .into_iter()
                .collect::<BTreeMap<_, _>>()
        });
        print_table("ratio", &fit.ratios, truth_ratios.as_ref());
    }
    if let Some(p) = &fit.absolute {
        let core = p.named_values();
        print_table("parameter", &core, truth.map(|t| t.named_values()).as_ref());
    }
    if fit.method == "koopman" {
        let r = fit.report.get("max_residual_rms").and_then(Value::as_f64).unwrap_or(f64::NAN);
        if !(r <= KOOPMAN_RESIDUAL_WARNING) {
            eprintln!("warning: koopman acceleration residual {r:.3e} exceeds {KOOPMAN_RESIDUAL_WARNING:e}; the lift does not span the data");
        }
    }
    let mut report = fit.report.clone();
    if let Some(obj) = report.as_object_mut() {
        obj.insert("method".into(), json!(fit.method));
        obj.insert("iterations".into(), json!(fit.iterations));
        obj.insert("sec_per_itr".into(), json!(fit.sec_per_itr));
        obj.insert("ratios".into(), json!(fit.ratios));
        obj.insert("absolute".into(), json!(fit.absolute));
    } else {
        report = json!({ "method": fit.method, "diagnostics": report, "ratios": fit.ratios, "absolute": fit.absolute });
    }
    io::write_json(&a.out.join("fit_report.json"), &report)?;
    let model = match &fit.absolute {
        Some(p) => FittedModel::Engine(p.clone()),
        None => fit.model.clone(),
    };
    io::write_json(&a.out.join("model.json"), &model.to_json())?;
    if let Ok(result) = serde_json::from_value::<rodspring::blackbox::OptimizerResult>(fit.report.clone()) {
        result.write_history_csv(&a.out.join("history.csv"))?;
    }
    out!("wrote {}", a.out.display());
    Ok(())
}

fn fmt(x: f64) -> String {
    format!("{x:.3}")
}

fn print_table(what: &str, est: &BTreeMap<String, f64>, truth: Option<&BTreeMap<String, f64>>) {
    out!("{what:<14} {:>14} {:>14} {:>10}", "estimate", "truth", "rel.err");
    for (k, v) in est {
        match truth.and_then(|t| t.get(k)) {
            Some(t) => out!("{k:<14} {v:>14.6} {t:>14.6} {:>9.3}%", 100.0 * rel(*v, *t)),
            None => out!("{k:<14} {v:>14.6} {:>14} {:>10}", "-", "-"),
        }
    }
}

fn rollout(a: RolloutArgs) -> CliResult {
    let data = io::read_dataset(&a.data)?;
    let trajs = data.split(&a.split)?;
    let reference = trajs
        .get(a.index)
        .ok_or_else(|| Failure::Usage(format!("split {} has {} trajectories", a.split, trajs.len())))?;
    let model_json: Value = io::read_json(&a.model)?;
    let mut model = FittedModel::from_json(&model_json, &data.config)?;
    if let Some(h) = a.control_scale {
        match &mut model {
            FittedModel::Engine(p) => p.control_scale = h,
            _ => return Err(Failure::Usage("--control-scale needs a model with absolute parameters".into())),
        }
    }
    let horizon = a.horizon.unwrap_or(reference.n_steps());
    if horizon > reference.n_steps() {
        return Err(Error::HorizonMismatch { predicted: horizon + 1, reference: reference.states.len() }.into());
    }
    echo(
        &a.out,
        &json!({
            "command": "rollout",
            "data": a.data,
            "model": a.model,
            "kind": model.kind(),
            "split": a.split,
            "index": a.index,
            "horizon": horizon,
            "control_scale": a.control_scale,
        }),
    )?;
    let mut truncated = reference.clone();
    truncated.states.truncate(horizon + 1);
    truncated.controls.truncate(horizon);
    let acc = model.acceleration_model();
    let predicted = rollout_with(acc.as_ref(), truncated.initial(), &data.config, horizon, Controls::Recorded(&truncated.controls))?;
    let curve = eval::compare_rollouts(&predicted, &truncated, model.kind())?;
    io::write_text(&a.out.join(format!("curves_{}.csv", file_stem(&curve.label))), &curve.to_csv())?;
    eval::write_plots(&a.out, std::slice::from_ref(&curve), true)?;
    out!(
        "{horizon} steps: accumulated position MSE {:.6e}, quaternion MSE {:.6e}",
        curve.final_accumulated_pos(),
        curve.final_accumulated_quat()
    );
    Ok(())
}

fn parse_seeds(s: &str) -> CliResult<Vec<u64>> {
    let bad = || Failure::Usage(format!("cannot parse seeds `{s}`"));
    let num = |t: &str| t.trim().parse::<u64>().map_err(|_| bad());
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..=") {
        (num(a)?..=num(b)?).collect()
    } else if let Some((a, b)) = s.split_once("..") {
        (num(a)?..num(b)?).collect()
    } else {
        s.split(',').map(num).collect::<CliResult<_>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

fn parse_overrides(s: &str) -> CliResult<Value> {
    let path = Path::new(s);
    let text = if path.is_file() { io::read_text(path)? } else { s.to_string() };
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("overrides are not JSON: {e}")))
}

fn protocol(a: ProtocolArgs) -> CliResult {
    let seeds = parse_seeds(&a.seeds)?;
    let overrides = a.overrides.as_deref().map(parse_overrides).transpose()?;
    let settings = eval::ProtocolSettings::resolve(&a.name, overrides.as_ref())?;
    echo(
        &a.out.join(&a.name),
        &json!({ "command": "protocol", "name": a.name, "seeds": seeds, "settings": settings }),
    )?;
    let result = eval::run_with_settings(&a.name, &seeds, settings)?;
    print_summary(&result);
    let written = eval::emit_report(&result, &a.out)?;
    out!("wrote {} files under {}", written.len(), a.out.join(&a.name).display());
    Ok(())
}

fn print_reports(reports: &[SuccessReport]) {
    if reports.is_empty() {
        return;
    }
    out!("{:<32} {:>8} {:>12}  estimates (mean ± std)", "method", "success", "sec/itr");
    for r in reports {
        let est: Vec<String> = r
            .estimates
            .iter()
            .take(4)
            .map(|(k, s)| format!("{k}={:.4}±{:.4}", s.mean, s.std))
            .collect();
        let more = if r.estimates.len() > 4 { format!(" (+{} more)", r.estimates.len() - 4) } else { String::new() };
        out!(
            "{:<32} {:>7.0}% {:>12.3e}  {}{more}",
            r.method,
            100.0 * r.success_ratio,
            r.sec_per_itr.mean,
            est.join(" ")
        );
    }
}

fn print_summary(result: &ProtocolResult) {
    out!("\nprotocol {} ({} seeds, {} parameters)", result.protocol, result.seeds.len(), result.settings.score.kind());
    print_reports(&result.reports);
    let metrics: Vec<_> = result.seeds.iter().flat_map(|s| s.metrics.iter().map(move |m| (s.seed, m))).collect();
    if !metrics.is_empty() {
        out!("\n{:<6} {:<36} {:>7} {:>16} {:>16}", "seed", "rollout", "steps", "acc. pos MSE", "acc. quat MSE");
        for (seed, m) in metrics {
            match (m.accumulated_pos_mse, m.accumulated_quat_mse) {
                (Some(p), Some(q)) => out!("{seed:<6} {:<36} {:>7} {p:>16.6e} {q:>16.6e}", m.label, m.steps),
                _ => out!("{seed:<6} {:<36} {:>7} failed: {}", m.label, m.steps, m.error.as_deref().unwrap_or("?")),
            }
        }
    }
    for s in &result.seeds {
        for r in s.runs.iter().filter(|r| r.method.starts_with("h-tuning")) {
            if let (Some(e), Some(t)) = (r.estimates.get("h"), r.truth.get("h")) {
                out!("seed {}: {} tuned h = {e:.6} (truth {t})", s.seed, r.method);
            }
            if let Some(trace) = s.fit_report.get(&r.method).and_then(|v| v.get("trace")).and_then(Value::as_array) {
                let t: Vec<String> = trace.iter().filter_map(Value::as_f64).map(|x| format!("{x:.4}")).collect();
                out!("  convergence: {}", t.join(" "));
            }
        }
    }
}

fn report(a: ReportArgs) -> CliResult {
    let summary: Value = io::read_json(&a.dir.join("summary.json"))?;
    let reports: Vec<SuccessReport> = serde_json::from_value(summary.get("reports").cloned().unwrap_or(json!([])))
        .map_err(|e| Failure::Usage(format!("{}: not a protocol summary: {e}", a.dir.display())))?;
    out!("protocol {}", summary.get("protocol").and_then(Value::as_str).unwrap_or("?"));
    print_reports(&reports);
    let seeds: Vec<u64> = summary
        .get("seeds")
        .and_then(Value::as_array)
        .map(|v| v.iter().filter_map(Value::as_u64).collect())
        .unwrap_or_default();
    for seed in seeds {
        let dir = a.dir.join(seed.to_string());
        let mut curves = Vec::new();
        let Ok(entries) = std::fs::read_dir(&dir) else { continue };
        let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for p in paths {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if let Some(label) = name.strip_prefix("curves_").and_then(|n| n.strip_suffix(".csv")) {
                curves.push(read_curve(&p, label)?);
            }
        }
        let plots = eval::write_plots(&dir, &curves, !a.linear)?;
        for p in plots {
            out!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn read_curve(path: &Path, label: &str) -> CliResult<eval::ErrorCurve> {
    let text = io::read_text(path)?;
    let mut curve = eval::ErrorCurve { label: label.into(), pos_mse: Vec::new(), quat_mse: Vec::new() };
    for (i, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let parse = |k: usize| cols.get(k).and_then(|c| c.parse::<f64>().ok());
        match (parse(1), parse(2)) {
            (Some(p), Some(q)) => {
                curve.pos_mse.push(p);
                curve.quat_mse.push(q);
            }
            _ => {
                return Err(Error::Malformed { path: path.into(), detail: format!("line {}", i + 1) }.into());
            }
        }
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seeds("0..3").unwrap(), [0, 1, 2]);
        assert_eq!(parse_seeds("0..=2").unwrap(), [0, 1, 2]);
        assert_eq!(parse_seeds("4,7").unwrap(), [4, 7]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("x").is_err());
    }
}
