//! Rollout metrics, experiment protocols and report files.

mod emit;
mod metrics;
mod protocols;
mod report;

pub use emit::{emit_report, file_stem, line_plot_svg, write_plots};
pub use metrics::{compare_rollouts, ErrorCurve};
pub use protocols::{
    fraction_label, horizon_label, parse_method, run_protocol, run_with_settings, strip_timing, AnchorSource,
    ProtocolResult, ProtocolSettings, RolloutMetric, Score, SeedResult, PROTOCOLS,
};
pub use report::{RunRecord, Stat, SuccessReport, SUCCESS_TOLERANCE};
