use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// A run succeeds when every evaluated parameter is within this relative
/// error of the truth.
pub const SUCCESS_TOLERANCE: f64 = 0.05;

/// One fit of one method on one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub method: String,
    pub estimates: BTreeMap<String, f64>,
    pub truth: BTreeMap<String, f64>,
    pub relative_errors: BTreeMap<String, f64>,
    pub success: bool,
    pub iterations: usize,
    /// Set when the fit itself failed.
    pub error: Option<String>,
    #[serde(skip)]
    pub sec_per_itr: f64,
}

impl RunRecord {
    /// Score `estimates` on the keys of `truth`; a missing key is a failure.
    pub fn evaluate(
        seed: u64,
        method: &str,
        estimates: &BTreeMap<String, f64>,
        truth: &BTreeMap<String, f64>,
        iterations: usize,
        sec_per_itr: f64,
    ) -> Self {
        let mut relative_errors = BTreeMap::new();
        let mut success = !truth.is_empty();
        let mut kept = BTreeMap::new();
        for (k, t) in truth {
            match estimates.get(k) {
                Some(e) => {
                    let rel = (e - t).abs() / t.abs().max(f64::MIN_POSITIVE);
                    success &= rel <= SUCCESS_TOLERANCE;
                    relative_errors.insert(k.clone(), rel);
                    kept.insert(k.clone(), *e);
                }
                None => success = false,
            }
        }
        Self {
            seed,
            method: method.into(),
            estimates: kept,
            truth: truth.clone(),
            relative_errors,
            success,
            iterations,
            error: None,
            sec_per_itr,
        }
    }

    pub fn failed(seed: u64, method: &str, truth: &BTreeMap<String, f64>, error: String) -> Self {
        Self {
            seed,
            method: method.into(),
            estimates: BTreeMap::new(),
            truth: truth.clone(),
            relative_errors: BTreeMap::new(),
            success: false,
            iterations: 0,
            error: Some(error),
            sec_per_itr: 0.0,
        }
    }

    pub fn max_relative_error(&self) -> f64 {
        if self.error.is_some() || self.relative_errors.len() < self.truth.len() {
            return f64::INFINITY;
        }
        self.relative_errors.values().fold(0.0, |m, &x| m.max(x))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and sample standard deviation.
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self { mean, std: var.sqrt() }
    }
}

/// Aggregate of one method over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessReport {
    pub method: String,
    /// `ratio` or `absolute`.
    pub parameter_kind: String,
    pub runs: Vec<RunRecord>,
    pub success_ratio: f64,
    pub estimates: BTreeMap<String, Stat>,
    #[serde(skip)]
    pub sec_per_itr: Stat,
}

impl SuccessReport {
    pub fn from_runs(method: &str, parameter_kind: &str, runs: Vec<RunRecord>) -> Self {
        let n = runs.len();
        let ok = runs.iter().filter(|r| r.success).count();
        let mut keys: Vec<String> = runs.iter().flat_map(|r| r.truth.keys().cloned()).collect();
        keys.sort();
        keys.dedup();
        let estimates = keys
            .into_iter()
            .map(|k| {
                let xs: Vec<f64> = runs.iter().filter_map(|r| r.estimates.get(&k).copied()).collect();
                (k, Stat::of(&xs))
            })
            .collect();
        let secs: Vec<f64> = runs.iter().filter(|r| r.error.is_none()).map(|r| r.sec_per_itr).collect();
        Self {
            method: method.into(),
            parameter_kind: parameter_kind.into(),
            success_ratio: if n == 0 { 0.0 } else { ok as f64 / n as f64 },
            estimates,
            sec_per_itr: Stat::of(&secs),
            runs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn five_percent_rule() {
        let truth = map(&[("K", 100.0), ("c", 10.0)]);
        let ok = RunRecord::evaluate(0, "m", &map(&[("K", 104.9), ("c", 9.6)]), &truth, 1, 0.0);
        let bad = RunRecord::evaluate(1, "m", &map(&[("K", 100.0), ("c", 10.6)]), &truth, 1, 0.0);
        let missing = RunRecord::evaluate(2, "m", &map(&[("K", 100.0)]), &truth, 1, 0.0);
        assert!(ok.success && !bad.success && !missing.success);
        let report = SuccessReport::from_runs("m", "absolute", vec![ok, bad, missing]);
        assert!((report.success_ratio - 1.0 / 3.0).abs() < 1e-15);
        assert!((report.estimates["K"].mean - (104.9 + 100.0 + 100.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn stat_uses_sample_deviation() {
        let s = Stat::of(&[1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-15);
    }
}
