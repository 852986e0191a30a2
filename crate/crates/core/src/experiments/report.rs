//! Suite reports: per-instance records, checks and aggregate maxima.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// How a check affects the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    /// A proved inequality with explicit constant; a violation fails the run.
    Exact,
    /// A comparability claim held to the configured bound; exceeding it fails the run.
    Threshold,
    /// Reported only; an exceedance is a warning.
    Observation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub kind: CheckKind,
    pub lhs: f64,
    pub rhs: f64,
    pub passed: bool,
}

impl Check {
    /// `lhs <= rhs` up to relative slack `tol`.
    pub fn le(name: impl Into<String>, lhs: f64, rhs: f64, tol: f64) -> Self {
        let passed = lhs <= rhs + tol * rhs.abs();
        Self { name: name.into(), kind: CheckKind::Exact, lhs, rhs, passed }
    }

    /// `|a - b| <= tol * max(|a|, |b|)`, recorded as `(|a - b|, tol * max)`.
    pub fn close(name: impl Into<String>, a: f64, b: f64, tol: f64) -> Self {
        let err = (a - b).abs();
        let bound = tol * a.abs().max(b.abs());
        Self { name: name.into(), kind: CheckKind::Exact, lhs: err, rhs: bound, passed: err <= bound }
    }

    pub fn threshold(name: impl Into<String>, ratio: f64, bound: f64) -> Self {
        Self { name: name.into(), kind: CheckKind::Threshold, lhs: ratio, rhs: bound, passed: ratio <= bound }
    }

    pub fn observe(name: impl Into<String>, ratio: f64, bound: f64) -> Self {
        Self { name: name.into(), kind: CheckKind::Observation, lhs: ratio, rhs: bound, passed: ratio <= bound }
    }
}

/// `num / den` with `0 / 0 = 0`.
pub fn safe_ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub index: usize,
    pub seed: u64,
    pub p: f64,
    pub q: f64,
    pub label: String,
    pub values: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
}

impl InstanceRecord {
    pub fn new(index: usize, seed: u64, p: f64, q: f64, label: impl Into<String>) -> Self {
        Self { index, seed, p, q, label: label.into(), values: BTreeMap::new(), checks: Vec::new() }
    }

    pub fn value(&mut self, name: &str, v: f64) {
        self.values.insert(name.to_string(), v);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed || c.kind == CheckKind::Observation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub instances: usize,
    pub exact_checks: usize,
    pub exact_failures: usize,
    pub threshold_failures: usize,
    pub observation_warnings: usize,
    /// Largest `lhs` per threshold or observation check name.
    pub worst: BTreeMap<String, f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport<C> {
    pub suite: String,
    pub version: String,
    pub config: C,
    pub records: Vec<InstanceRecord>,
    pub summary: SuiteSummary,
}

impl<C: Serialize> SuiteReport<C> {
    pub fn new(suite: &str, config: C, records: Vec<InstanceRecord>) -> Self {
        let mut s = SuiteSummary {
            instances: records.len(),
            exact_checks: 0,
            exact_failures: 0,
            threshold_failures: 0,
            observation_warnings: 0,
            worst: BTreeMap::new(),
            passed: true,
        };
        for c in records.iter().flat_map(|r| &r.checks) {
            match c.kind {
                CheckKind::Exact => {
                    s.exact_checks += 1;
                    s.exact_failures += usize::from(!c.passed);
                }
                CheckKind::Threshold => s.threshold_failures += usize::from(!c.passed),
                CheckKind::Observation => s.observation_warnings += usize::from(!c.passed),
            }
            if c.kind != CheckKind::Exact {
                s.worst.entry(c.name.clone()).and_modify(|e| *e = e.max(c.lhs)).or_insert(c.lhs);
            }
        }
        s.passed = s.exact_failures == 0 && s.threshold_failures == 0;
        Self { suite: suite.to_string(), version: env!("CARGO_PKG_VERSION").to_string(), config, records, summary: s }
    }

    pub fn passed(&self) -> bool {
        self.summary.passed
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = (&InstanceRecord, &Check)> {
        self.records
            .iter()
            .flat_map(|r| r.checks.iter().map(move |c| (r, c)))
            .filter(|(_, c)| !c.passed && c.kind != CheckKind::Observation)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per instance: fixed columns, every recorded value, then the pass flag.
    pub fn to_csv(&self) -> String {
        let mut keys: Vec<&String> = self.records.iter().flat_map(|r| r.values.keys()).collect();
        keys.sort();
        keys.dedup();
        let mut out = String::from("index,seed,p,q,label");
        for k in &keys {
            let _ = write!(out, ",{k}");
        }
        out.push_str(",passed\n");
        for r in &self.records {
            let _ = write!(out, "{},{},{:?},{:?},{}", r.index, r.seed, r.p, r.q, r.label);
            for k in &keys {
                match r.values.get(*k) {
                    Some(v) => {
                        let _ = write!(out, ",{v:?}");
                    }
                    None => out.push(','),
                }
            }
            let _ = writeln!(out, ",{}", r.passed());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_counts_and_worst() {
        let mut a = InstanceRecord::new(0, 1, 2.0, 2.0, "a");
        a.checks.push(Check::le("chain", 1.0, 1.0, 1e-9));
        a.checks.push(Check::threshold("ratio", 3.0, 64.0));
        a.checks.push(Check::observe("sym", 100.0, 64.0));
        let mut b = InstanceRecord::new(1, 2, 2.0, 2.0, "b");
        b.checks.push(Check::le("chain", 1.1, 1.0, 1e-9));
        b.checks.push(Check::threshold("ratio", 5.0, 64.0));
        let r = SuiteReport::new("t", (), vec![a, b]);
        assert_eq!(r.summary.exact_checks, 2);
        assert_eq!(r.summary.exact_failures, 1);
        assert_eq!(r.summary.observation_warnings, 1);
        assert_eq!(r.summary.worst["ratio"], 5.0);
        assert!(!r.passed());
        assert_eq!(r.failed_checks().count(), 1);
    }

    #[test]
    fn ratios_and_csv() {
        assert_eq!(safe_ratio(0.0, 0.0), 0.0);
        assert!(safe_ratio(1.0, 0.0).is_infinite());
        let mut a = InstanceRecord::new(0, 1, 1.5, 3.0, "x");
        a.value("k", 0.25);
        let csv = SuiteReport::new("t", (), vec![a]).to_csv();
        assert_eq!(csv, "index,seed,p,q,label,k,passed\n0,1,1.5,3.0,x,0.25,true\n");
    }
}
