use std::fs;
use std::path::Path;

use serde_json::json;

use rodspring::eval::{emit_report, run_protocol, ProtocolSettings, PROTOCOLS};
use rodspring::io::read_config;
use rodspring::presets;
use rodspring::Error;

fn small_icosa() -> serde_json::Value {
    json!({
        "train_traj": 3,
        "n_steps": 200,
        "horizon": 150,
        "methods": ["ident-closed:multiple", "koopman"],
    })
}

#[test]
fn every_protocol_has_defaults() {
    for p in PROTOCOLS {
        let s = ProtocolSettings::defaults(p).unwrap();
        assert!(!s.methods.is_empty(), "{p}");
    }
    assert!(matches!(run_protocol("fig11", &[0], None), Err(Error::UnknownProtocol(_))));
}

#[test]
fn overrides_merge_and_reject_unknown_keys() {
    let s = ProtocolSettings::resolve("simple_ratio", Some(&json!({ "options": { "fit": { "epochs": 4 } } }))).unwrap();
    assert_eq!(s.options.fit.epochs, 4);
    assert_eq!(s.options.fit.batch_size, 32);
    assert_eq!(s.train_traj, 100);
    assert!(ProtocolSettings::resolve("simple_ratio", Some(&json!({ "trian_traj": 3 }))).is_err());
}

#[test]
fn protocol_is_deterministic_and_reports_reproduce() {
    let over = small_icosa();
    let a = run_protocol("icosa_nonuniform", &[4], Some(&over)).unwrap();
    let b = run_protocol("icosa_nonuniform", &[4], Some(&over)).unwrap();
    // wall-clock timings are not serialized
    assert_eq!(serde_json::to_string(&a.seeds).unwrap(), serde_json::to_string(&b.seeds).unwrap());
    assert_eq!(serde_json::to_string(&a.reports).unwrap(), serde_json::to_string(&b.reports).unwrap());
    assert_eq!(a.seeds[0].curves, b.seeds[0].curves);
    assert_eq!(a.report("ident-closed:multiple").unwrap().success_ratio, 1.0);

    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let w1 = emit_report(&a, d1.path()).unwrap();
    let w2 = emit_report(&b, d2.path()).unwrap();
    assert_eq!(w1.len(), w2.len());
    let names: Vec<String> = w1.iter().map(|p| p.strip_prefix(d1.path()).unwrap().display().to_string()).collect();
    for expected in [
        "icosa_nonuniform/summary.json",
        "icosa_nonuniform/4/summary.json",
        "icosa_nonuniform/4/fit_report.json",
        "icosa_nonuniform/4/curves_ident-closed_multiple.csv",
        "icosa_nonuniform/4/curves_koopman.csv",
        "icosa_nonuniform/4/plot_pos.svg",
    ] {
        assert!(names.iter().any(|n| n == expected), "missing {expected} in {names:?}");
    }
    for (p, q) in w1.iter().zip(&w2) {
        let ext = p.extension().and_then(|e| e.to_str()).unwrap_or_default();
        if (ext == "json" || ext == "csv") && !p.ends_with("timing.json") {
            assert_eq!(fs::read(p).unwrap(), fs::read(q).unwrap(), "{}", p.display());
        }
    }
    let svg = fs::read_to_string(d1.path().join("icosa_nonuniform/4/plot_pos.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert!(svg.contains(r#"data-label="koopman""#));

    let csv = fs::read_to_string(d1.path().join("icosa_nonuniform/4/curves_koopman.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "step,pos_mse,quat_mse,acc_pos_mse,acc_quat_mse");
    assert_eq!(lines.count(), 151);
}

#[test]
fn no_curves_means_summary_only() {
    let over = json!({ "train_traj": 2, "n_steps": 100, "test_traj": 0, "methods": ["ident-closed"] });
    let r = run_protocol("simple_ratio", &[0], Some(&over)).unwrap();
    assert!(r.seeds[0].curves.is_empty());
    let dir = tempfile::tempdir().unwrap();
    emit_report(&r, dir.path()).unwrap();
    let seed_dir = dir.path().join("simple_ratio/0");
    let files: Vec<String> = fs::read_dir(&seed_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(files, ["summary.json"]);
}

#[test]
fn accumulated_curves_are_monotone() {
    let r = run_protocol("icosa_uniform", &[1], Some(&small_icosa())).unwrap();
    for c in &r.seeds[0].curves {
        assert!(c.pos_mse.iter().chain(&c.quat_mse).all(|&x| x >= 0.0));
        for acc in [c.accumulated_pos(), c.accumulated_quat()] {
            assert!(acc.windows(2).all(|w| w[1] >= w[0]), "{}", c.label);
        }
    }
}

#[test]
fn shipped_preset_files_match_builtins() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets");
    for (file, sc) in [
        ("simple.json", presets::simple()),
        ("icosa_uniform.json", presets::icosa_uniform()),
        ("icosa_nonuniform_seed0.json", presets::icosa_nonuniform(0, 0.2).unwrap()),
    ] {
        let cfg = read_config(&dir.join(file)).unwrap();
        assert_eq!(cfg, sc.config, "{file}");
    }
}
