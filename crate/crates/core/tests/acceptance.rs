//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use serde_json::json;

use rodspring::eval::{fraction_label, horizon_label, run_protocol, ProtocolResult};
use rodspring::presets;
use rodspring::sim::subset_count;
use rodspring::Vec3;

#[path = "support/checks.rs"]
mod checks;

const RATIO_TOL: f64 = 0.005;
const SUCCESS_TOL: f64 = 0.05;
const CMA_MIN_SUCCESS: f64 = 0.8;
const CMA_MAX_RATIO_SUCCESS: f64 = 0.5;
const RATIO_BUDGET: Duration = Duration::from_secs(60);
const UNIFORM_BUDGET: Duration = Duration::from_secs(300);
const KOOPMAN_FACTOR: f64 = 10.0;
const H_TOL: f64 = 0.01;
const SUBSET_SIZE: usize = 73;
const MIN_POOL: usize = 500_000;
const NONUNIFORM_PARAMS: usize = 54;

const SEEDS: [u64; 10] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9];
const ROLLOUT_SEEDS: [u64; 3] = [0, 1, 2];

type Check = fn() -> Result<Outcome, String>;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn sci(x: Option<f64>) -> String {
    x.map_or_else(|| "none".into(), |v| format!("{v:.2e}"))
}

fn run(name: &str, seeds: &[u64], overrides: serde_json::Value) -> Result<ProtocolResult, String> {
    run_protocol(name, seeds, Some(&overrides)).map_err(|e| e.to_string())
}

/// Every run of `method` succeeds and every relative error is within `tol`.
fn all_within(result: &ProtocolResult, method: &str, tol: f64) -> (bool, f64) {
    let runs: Vec<_> = result.seeds.iter().filter_map(|s| s.run(method)).collect();
    let worst = runs.iter().map(|r| r.max_relative_error()).fold(0.0, f64::max);
    let ok = runs.len() == result.seeds.len() && runs.iter().all(|r| r.error.is_none()) && worst <= tol;
    (ok, worst)
}

fn success_ratio(result: &ProtocolResult, method: &str) -> f64 {
    result.report(method).map_or(0.0, |r| r.success_ratio)
}

fn pos_mse(result: &ProtocolResult, seed: usize, label: &str) -> Option<f64> {
    result.seeds[seed].metric(label).and_then(|m| m.accumulated_pos_mse)
}

fn ratio_identification() -> Result<Outcome, String> {
    let start = Instant::now();
    let r = run("simple_ratio", &SEEDS, json!({ "methods": ["ident-closed", "ident-iterative"] }))?;
    let elapsed = start.elapsed();
    let (closed_ok, closed_worst) = all_within(&r, "ident-closed", RATIO_TOL);
    let (iter_ok, iter_worst) = all_within(&r, "ident-iterative", RATIO_TOL);
    let ratios = ["ident-closed", "ident-iterative"].map(|m| success_ratio(&r, m));
    Ok(Outcome::new(
        closed_ok && iter_ok && ratios.iter().all(|&s| s == 1.0) && elapsed < RATIO_BUDGET,
        format!(
            "worst rel err closed {closed_worst:.2e} iterative {iter_worst:.2e}, success {ratios:?}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    ))
}

fn known_mass() -> Result<Outcome, String> {
    let r = run("simple_known_M", &SEEDS, json!({ "methods": ["ident-closed", "ident-iterative"] }))?;
    let (closed_ok, closed_worst) = all_within(&r, "ident-closed", RATIO_TOL);
    let (iter_ok, iter_worst) = all_within(&r, "ident-iterative", RATIO_TOL);
    Ok(Outcome::new(
        closed_ok && iter_ok,
        format!("worst rel err on K, c: closed {closed_worst:.2e} iterative {iter_worst:.2e}"),
    ))
}

fn blackbox() -> Result<Outcome, String> {
    let known = run("simple_known_M", &SEEDS, json!({ "methods": ["cma", "local-search"] }))?;
    let free = run("simple_ratio", &SEEDS, json!({ "methods": ["ident-closed", "cma"] }))?;
    let cma = success_ratio(&known, "cma");
    let local = success_ratio(&known, "local-search");
    let ident_free = success_ratio(&free, "ident-closed");
    let cma_free = success_ratio(&free, "cma");
    Ok(Outcome::new(
        cma >= CMA_MIN_SUCCESS && local < cma && ident_free == 1.0 && cma_free <= CMA_MAX_RATIO_SUCCESS,
        format!("known M: cma {cma:.2} local {local:.2}; free M: ident {ident_free:.2} cma {cma_free:.2}"),
    ))
}

fn tensegrity_uniform() -> Result<Outcome, String> {
    let start = Instant::now();
    let r = run("icosa_uniform", &ROLLOUT_SEEDS, json!({}))?;
    let elapsed = start.elapsed();
    let mut pass = elapsed < UNIFORM_BUDGET;
    let mut parts = Vec::new();
    for (i, seed) in ROLLOUT_SEEDS.iter().enumerate() {
        let ident = pos_mse(&r, i, "ident-closed");
        let koopman = pos_mse(&r, i, "koopman");
        pass &= matches!((ident, koopman), (Some(a), Some(b)) if a < b)
            || (ident.is_some() && koopman.is_none());
        parts.push(format!("seed {seed}: ident {} koopman {}", sci(ident), sci(koopman)));
    }
    Ok(Outcome::new(pass, format!("{}, {:.1}s", parts.join("; "), elapsed.as_secs_f64())))
}

fn tensegrity_nonuniform() -> Result<Outcome, String> {
    let r = run("icosa_nonuniform", &ROLLOUT_SEEDS, json!({}))?;
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, seed) in ROLLOUT_SEEDS.iter().enumerate() {
        let single = pos_mse(&r, i, "ident-closed:single").unwrap_or(f64::INFINITY);
        let multiple = pos_mse(&r, i, "ident-closed:multiple");
        pass &= multiple.is_some_and(|m| m <= single);
        let run = r.seeds[i].run("ident-closed:multiple");
        let count = run.map_or(0, |r| r.relative_errors.len());
        let worst = run.map_or(f64::INFINITY, |r| r.max_relative_error());
        pass &= count == NONUNIFORM_PARAMS && worst <= SUCCESS_TOL;
        parts.push(format!(
            "seed {seed}: multiple {} single {single:.2e}, {count} params worst {worst:.2e}",
            sci(multiple)
        ));
    }
    Ok(Outcome::new(pass, parts.join("; ")))
}

fn data_efficiency() -> Result<Outcome, String> {
    let fraction = 0.0001;
    let r = run("data_efficiency", &[0], json!({ "fractions": [fraction] }))?;
    let pool = r.settings.pool_traj * r.settings.pool_steps;
    let count = subset_count(pool, fraction);
    let ident_label = fraction_label("ident-closed:multiple", fraction);
    let koopman_label = fraction_label("koopman", fraction);
    let run = r.seeds[0].run(&ident_label);
    let worst = run.map_or(f64::INFINITY, |r| r.max_relative_error());
    let params = run.map_or(0, |r| r.relative_errors.len());
    let ident_mse = pos_mse(&r, 0, &ident_label);
    let koopman = r.seeds[0].metric(&koopman_label);
    let koopman_error = koopman.and_then(|m| m.error.clone());
    let koopman_mse = koopman.and_then(|m| m.accumulated_pos_mse);
    let koopman_fails = match (koopman_error.as_deref(), koopman_mse, ident_mse) {
        (Some(e), _, _) => e.contains("rank-deficient"),
        (None, Some(k), Some(i)) => k >= KOOPMAN_FACTOR * i,
        _ => false,
    };
    let pass = pool >= MIN_POOL
        && count == SUBSET_SIZE
        && params == NONUNIFORM_PARAMS
        && worst <= SUCCESS_TOL
        && koopman_fails;
    let koopman_note = koopman_error.unwrap_or_else(|| sci(koopman_mse));
    Ok(Outcome::new(
        pass,
        format!(
            "pool {pool}, {count} transitions, {params} params worst {worst:.2e}, ident {}, koopman: {koopman_note}",
            sci(ident_mse)
        ),
    ))
}

fn generalization() -> Result<Outcome, String> {
    let steps = 4000;
    let r = run("generalization", &[0], json!({ "horizons": [steps] }))?;
    let seed = &r.seeds[0];
    let mut pass = true;
    let mut parts = Vec::new();
    for &h in &r.settings.h_values {
        let tuned = seed.run(&format!("h-tuning@{h}"));
        let rel = tuned.map_or(f64::INFINITY, |t| t.max_relative_error());
        let metric = seed.metric(&horizon_label(h, steps));
        let bounded = metric.is_some_and(|m| m.error.is_none() && m.accumulated_pos_mse.is_some_and(f64::is_finite));
        pass &= rel <= H_TOL && bounded;
        let mse = metric.and_then(|m| m.accumulated_pos_mse);
        parts.push(format!("h={h}: rel err {rel:.2e}, {steps}-step acc pos mse {}", sci(mse)));
    }
    Ok(Outcome::new(pass, parts.join("; ")))
}

fn properties() -> Result<Outcome, String> {
    let n = 5000;
    let momentum = checks::momentum_drift(1, n);
    let energy = checks::energy_error(2, 10_000);
    let quat = checks::quaternion_norm_error(3, 5000);
    let mut equivariance = 0.0f64;
    let turns = [([0.3, -0.8, 0.5], 1.1), ([1.0, 0.2, 0.0], 2.7), ([-0.4, 0.4, 0.9], 0.4)];
    for (k, (axis, angle)) in turns.into_iter().enumerate() {
        let rot = checks::rotation(axis, angle).expect("non-degenerate axis");
        for sc in [presets::simple(), presets::icosa_uniform()] {
            equivariance = equivariance.max(checks::equivariance_error(&sc, rot, 100 + k as u64, 1000));
        }
    }
    let gradient = [[1.0, 2.0, 5.0, 0.7], [10.0, 1.0, 12.0, 3.0]]
        .iter()
        .enumerate()
        .map(|(k, w)| checks::gradient_error(w, k as u64))
        .fold(0.0, f64::max);
    let fit_gap = checks::closed_vs_iterative_gap();
    let force = [
        (Vec3::new(0.1, 0.2, 0.3), Vec3::new(1.0, -0.5, 0.2), Vec3::new(1.2, -0.3, 0.9), Vec3::new(-0.4, 0.6, 2.0)),
        (Vec3::new(-1.5, 0.0, 1.0), Vec3::zeros(), Vec3::new(0.5, 1.9, -1.2), Vec3::new(2.5, -2.5, 0.1)),
    ]
    .iter()
    .filter_map(|&(pa, va, pb, vb)| checks::force_path_mismatch(pa, va, pb, vb, 250.0, 12.0, 0.8))
    .fold(0.0, f64::max);
    let (span, replay) = checks::koopman_span();
    let torque_rot = checks::rotation([0.2, 0.9, -0.3], 1.9).expect("non-degenerate axis");
    let torque = checks::torque_identity_error(torque_rot, [3.0, -7.5], 2.5, 0.04);
    let items = [
        ("a momentum", momentum <= 1e-9 * n as f64, momentum),
        ("b energy", energy < 0.01, energy),
        ("c quaternion", quat < 1e-9, quat),
        ("d equivariance", equivariance < 1e-6, equivariance),
        ("e gradient", gradient <= 1e-5, gradient),
        ("f closed/iterative", fit_gap <= 0.01, fit_gap),
        ("g force paths", force <= 1e-12, force),
        ("h koopman span", span < 1e-6 && replay < 1e-6, span.max(replay)),
        ("i torque identity", torque <= 1e-12, torque),
    ];
    let pass = items.iter().all(|(_, ok, _)| *ok);
    let detail = items
        .iter()
        .map(|(name, ok, v)| format!("{name} {} {v:.1e}", if *ok { "ok" } else { "FAIL" }))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(Outcome::new(pass, detail))
}

fn main() -> ExitCode {
    // `cargo test` passes filter arguments; a filter that names no
    // criterion skips the run.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return ExitCode::SUCCESS;
    }
    let criteria: [(&str, Check); 8] = [
        ("1 simple-system ratio identification", ratio_identification),
        ("2 known-mass absolute identification", known_mass),
        ("3 black-box baselines", blackbox),
        ("4 uniform tensegrity rollouts", tensegrity_uniform),
        ("5 non-uniform tying", tensegrity_nonuniform),
        ("6 data efficiency", data_efficiency),
        ("7 generalization to forces", generalization),
        ("8 property suites", properties),
    ];
    let mut failures = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = check().unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!("{verdict} criterion {name} ({:.1}s): {}", start.elapsed().as_secs_f64(), outcome.detail);
        failures += usize::from(!outcome.pass);
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
