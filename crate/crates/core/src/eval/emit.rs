use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::error::Result;
use crate::eval::metrics::ErrorCurve;
use crate::eval::protocols::ProtocolResult;
use crate::io::write_text;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// File-name-safe form of a series label.
pub fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.0e}")
    } else {
        format!("{}", (v * 1000.0).round() / 1000.0)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// A line chart of step against value, one polyline per series.
/// Non-positive values are clipped to the smallest positive one on a log axis.
pub fn line_plot_svg(title: &str, y_label: &str, series: &[(&str, Vec<f64>)], log_y: bool) -> String {
    let (w, h) = (720.0, 440.0);
    let (left, right, top, bottom) = (80.0, 180.0, 40.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let n_max = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0).max(2);
    let finite = series.iter().flat_map(|(_, v)| v.iter().copied()).filter(|x| x.is_finite());
    let floor = finite.clone().filter(|&x| x > 0.0).fold(f64::INFINITY, f64::min);
    let map_y = |y: f64| {
        if log_y {
            y.max(if floor.is_finite() { floor } else { 1e-30 }).log10()
        } else {
            y
        }
    };
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| {
        let m = map_y(y);
        (lo.min(m), hi.max(m))
    });
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let px = |i: usize| left + pw * i as f64 / (n_max - 1) as f64;
    let py = |y: f64| top + ph * (1.0 - (map_y(y) - lo) / (hi - lo));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let yv = lo + (hi - lo) * f;
        let y = top + ph * (1.0 - f);
        let label = if log_y { format!("1e{:.1}", yv) } else { fmt_tick(yv) };
        let _ = writeln!(s, r##"<line x1="{left}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#dddddd"/>"##, left + pw);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{label}</text>"#, left - 6.0, y + 4.0);
        let x = left + pw * f;
        let step = ((n_max - 1) as f64 * f).round();
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{step}</text>"#, top + ph + 18.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">step</text>"#, left + pw / 2.0, h - 10.0);
    let _ = writeln!(
        s,
        r#"<text transform="translate(18 {}) rotate(-90)" text-anchor="middle">{}</text>"#,
        top + ph / 2.0,
        escape(&format!("{y_label}{}", if log_y { " (log)" } else { "" }))
    );
    for (k, (label, ys)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = ys
            .iter()
            .enumerate()
            .filter(|(_, y)| y.is_finite())
            .map(|(i, &y)| format!("{:.2},{:.2}", px(i), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="series" data-label="{}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            escape(label),
            pts.join(" ")
        );
        let ly = top + 14.0 + 18.0 * k as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(label));
    }
    s.push_str("</svg>\n");
    s
}

/// Writes the accumulated position and quaternion plots of `curves` into `dir`.
pub fn write_plots(dir: &Path, curves: &[ErrorCurve], log_y: bool) -> Result<Vec<PathBuf>> {
    if curves.is_empty() {
        return Ok(Vec::new());
    }
    let pos: Vec<(&str, Vec<f64>)> = curves.iter().map(|c| (c.label.as_str(), c.accumulated_pos())).collect();
    let quat: Vec<(&str, Vec<f64>)> = curves.iter().map(|c| (c.label.as_str(), c.accumulated_quat())).collect();
    let p1 = dir.join("plot_pos.svg");
    let p2 = dir.join("plot_quat.svg");
    write_text(&p1, &line_plot_svg("Accumulated position MSE", "position MSE (m²)", &pos, log_y))?;
    write_text(&p2, &line_plot_svg("Accumulated quaternion MSE", "quaternion MSE", &quat, log_y))?;
    Ok(vec![p1, p2])
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("report serializes") + "\n"
}

/// Writes `out_dir/<protocol>/…` and returns every path written.
///
/// JSON and CSV files carry no wall-clock values, so reruns reproduce them
/// byte for byte; timings go to `timing.json` beside the summary.
pub fn emit_report(result: &ProtocolResult, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let root = out_dir.join(&result.protocol);
    let mut written = Vec::new();
    let put = |path: PathBuf, text: String, written: &mut Vec<PathBuf>| -> Result<()> {
        write_text(&path, &text)?;
        written.push(path);
        Ok(())
    };
    let summary = json!({
        "protocol": result.protocol,
        "settings": result.settings,
        "seeds": result.seeds.iter().map(|s| s.seed).collect::<Vec<_>>(),
        "reports": result.reports,
    });
    put(root.join("summary.json"), pretty(&summary), &mut written)?;
    let timing = json!({
        "sec_per_itr": result.reports.iter().map(|r| json!({
            "method": r.method,
            "mean": r.sec_per_itr.mean,
            "std": r.sec_per_itr.std,
            "runs": r.runs.iter().map(|x| json!({"seed": x.seed, "sec_per_itr": x.sec_per_itr})).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    });
    put(root.join("timing.json"), pretty(&timing), &mut written)?;

    for seed in &result.seeds {
        let dir = root.join(seed.seed.to_string());
        put(dir.join("summary.json"), pretty(seed), &mut written)?;
        if seed.curves.is_empty() {
            continue;
        }
        if !seed.fit_report.is_null() {
            put(dir.join("fit_report.json"), pretty(&seed.fit_report), &mut written)?;
        }
        for c in &seed.curves {
            put(dir.join(format!("curves_{}.csv", file_stem(&c.label))), c.to_csv(), &mut written)?;
        }
        written.extend(write_plots(&dir, &seed.curves, true)?);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_series_one_plot() {
        let svg = line_plot_svg(
            "t",
            "y",
            &[("ours", vec![1e-6, 2e-6, 3e-6]), ("koopman", vec![1e-3, 0.0, 5e-3])],
            true,
        );
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(r#"data-label="ours""#) && svg.contains(r#"data-label="koopman""#));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn stems_are_path_safe() {
        assert_eq!(file_stem("ident-closed:multiple@0.001"), "ident-closed_multiple_0.001");
        assert_eq!(file_stem("h=2.5,steps=4000"), "h_2.5_steps_4000");
    }
}
