//! Per-cell accumulators and their flattening into long-format metric rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::CellParams;

/// Running sums for one point estimator within a cell.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointAccum {
    pub sum: f64,
    pub sum_sq: f64,
    pub truncated: u32,
    pub failures: u32,
}

/// Running sums for one confidence-interval method within a cell.  A
/// degenerate interval contains no value at all, so it never counts as
/// covering the truth.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IntervalAccum {
    pub covered: u32,
    pub degenerate: u32,
    pub sum_width: f64,
    pub failures: u32,
}

/// Rejection tallies for one test within a cell, parallel to the cell's
/// threshold list.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TestAccum {
    pub reject_counts: Vec<u32>,
    pub failures: u32,
}

/// Everything accumulated over the replications of one cell.  Holding exact
/// integer counts and plain sums (no running averages) keeps results
/// bit-identical regardless of scheduling, and lets a finished cell be
/// written to disk and re-read without loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: CellParams,
    pub reps: u32,
    pub seed: u64,
    pub thresholds: Vec<f64>,
    pub sum_q_f: f64,
    pub sum_q_f_sq: f64,
    pub sum_q_iv: f64,
    pub sum_q_iv_sq: f64,
    pub point: BTreeMap<String, PointAccum>,
    pub intervals: BTreeMap<String, IntervalAccum>,
    pub tests: BTreeMap<String, TestAccum>,
}

/// One `(cell, method, metric)` observation of the long-format output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub k: u32,
    pub n_spec: String,
    pub f: f64,
    pub delta: f64,
    pub tau2: f64,
    pub method: String,
    pub metric: String,
    pub value: f64,
    pub reps: u32,
    pub seed: u64,
}

impl CellResult {
    /// Flattens the accumulators into metric rows.
    ///
    /// Rates and moments are taken over the replications where the method
    /// succeeded; `error_rate` (over all replications) reports how many did
    /// not.  A method that failed every time contributes only its error
    /// rate.
    pub fn to_rows(&self) -> Vec<MetricRow> {
        let mut rows = Vec::new();
        let mut push = |method: &str, metric: String, value: f64| {
            rows.push(MetricRow {
                k: self.cell.k,
                n_spec: self.cell.n_spec.to_string(),
                f: self.cell.control_fraction,
                delta: self.cell.delta,
                tau2: self.cell.tau2,
                method: method.to_string(),
                metric,
                value,
                reps: self.reps,
                seed: self.seed,
            });
        };
        let reps = f64::from(self.reps);
        push("QF", "mean".into(), self.sum_q_f / reps);
        push("QIV", "mean".into(), self.sum_q_iv / reps);
        for (method, acc) in &self.point {
            let ok = f64::from(self.reps - acc.failures);
            if ok > 0.0 {
                let mean = acc.sum / ok;
                let tau2 = self.cell.tau2;
                push(method, "mean".into(), mean);
                push(method, "bias".into(), mean - tau2);
                push(method, "mse".into(), acc.sum_sq / ok - 2.0 * tau2 * mean + tau2 * tau2);
                push(method, "trunc_rate".into(), f64::from(acc.truncated) / ok);
            }
            push(method, "error_rate".into(), f64::from(acc.failures) / reps);
        }
        for (method, acc) in &self.intervals {
            let ok = f64::from(self.reps - acc.failures);
            if ok > 0.0 {
                push(method, "coverage".into(), f64::from(acc.covered) / ok);
                push(method, "width".into(), acc.sum_width / ok);
                push(method, "degenerate_rate".into(), f64::from(acc.degenerate) / ok);
            }
            push(method, "error_rate".into(), f64::from(acc.failures) / reps);
        }
        for (method, acc) in &self.tests {
            let ok = f64::from(self.reps - acc.failures);
            if ok > 0.0 {
                for (threshold, &count) in self.thresholds.iter().zip(&acc.reject_counts) {
                    push(method, format!("reject_{threshold}"), f64::from(count) / ok);
                }
            }
            push(method, "error_rate".into(), f64::from(acc.failures) / reps);
        }
        rows
    }
}

/// Serializes rows as CSV with a fixed header.  Floats use the shortest
/// representation that round-trips, so equal runs produce identical bytes.
pub fn rows_to_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("k,n_spec,f,delta,tau2,method,metric,value,reps,seed\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.k, r.n_spec, r.f, r.delta, r.tau2, r.method, r.metric, r.value, r.reps, r.seed
        )
        .expect("writing to a String cannot fail");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::config::NSpec;
    use super::*;

    fn toy_result() -> CellResult {
        let mut point = BTreeMap::new();
        point.insert(
            "SSC".to_string(),
            PointAccum { sum: 150.0, sum_sq: 350.0, truncated: 10, failures: 0 },
        );
        point.insert(
            "REML".to_string(),
            PointAccum { sum: 90.0, sum_sq: 200.0, truncated: 5, failures: 20 },
        );
        let mut intervals = BTreeMap::new();
        intervals.insert(
            "QP".to_string(),
            IntervalAccum { covered: 95, degenerate: 2, sum_width: 310.0, failures: 0 },
        );
        let mut tests = BTreeMap::new();
        tests.insert(
            "CHI2".to_string(),
            TestAccum { reject_counts: vec![4, 52], failures: 0 },
        );
        CellResult {
            cell: CellParams {
                k: 10,
                n_spec: NSpec::Equal(40),
                control_fraction: 0.5,
                delta: 0.5,
                tau2: 1.0,
            },
            reps: 100,
            seed: 0xDEAD_BEEF,
            thresholds: vec![0.01, 0.05],
            sum_q_f: 900.0,
            sum_q_f_sq: 9000.0,
            sum_q_iv: 950.0,
            sum_q_iv_sq: 9900.0,
            point,
            intervals,
            tests,
        }
    }

    #[test]
    fn rows_report_the_documented_metrics() {
        let rows = toy_result().to_rows();
        let get = |method: &str, metric: &str| -> f64 {
            rows.iter()
                .find(|r| r.method == method && r.metric == metric)
                .unwrap_or_else(|| panic!("missing {method}/{metric}"))
                .value
        };
        assert_eq!(get("QF", "mean"), 9.0);
        assert_eq!(get("QIV", "mean"), 9.5);
        assert_eq!(get("SSC", "mean"), 1.5);
        assert_eq!(get("SSC", "bias"), 0.5);
        // E[t^2] - 2 tau2 E[t] + tau2^2 = 3.5 - 3.0 + 1.0.
        assert_eq!(get("SSC", "mse"), 1.5);
        assert_eq!(get("SSC", "trunc_rate"), 0.1);
        assert_eq!(get("SSC", "error_rate"), 0.0);
        // REML ratios are over its 80 successful replications.
        assert_eq!(get("REML", "mean"), 90.0 / 80.0);
        assert_eq!(get("REML", "error_rate"), 0.2);
        assert_eq!(get("QP", "coverage"), 0.95);
        assert_eq!(get("QP", "width"), 3.1);
        assert_eq!(get("QP", "degenerate_rate"), 0.02);
        assert_eq!(get("CHI2", "reject_0.01"), 0.04);
        assert_eq!(get("CHI2", "reject_0.05"), 0.52);
    }

    #[test]
    fn csv_has_fixed_header_and_round_trip_floats() {
        let rows = toy_result().to_rows();
        let text = rows_to_csv(&rows);
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "k,n_spec,f,delta,tau2,method,metric,value,reps,seed"
        );
        let first = lines.next().unwrap();
        assert_eq!(first.split(',').count(), 10);
        assert!(first.starts_with("10,40,0.5,0.5,1,QF,mean,9,100,"));
        // Shortest round-trip formatting: a third gets all the digits it needs.
        let third = 1.0 / 3.0;
        assert_eq!(format!("{third}").parse::<f64>().unwrap(), third);
    }

    #[test]
    fn result_round_trips_through_json() {
        let r = toy_result();
        let text = serde_json::to_string(&r).unwrap();
        let back: CellResult = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn failed_method_reports_only_an_error_rate() {
        let mut r = toy_result();
        r.point.insert(
            "MP".to_string(),
            PointAccum { sum: 0.0, sum_sq: 0.0, truncated: 0, failures: r.reps },
        );
        let rows = r.to_rows();
        let mp: Vec<_> = rows.iter().filter(|row| row.method == "MP").collect();
        assert_eq!(mp.len(), 1);
        assert_eq!(mp[0].metric, "error_rate");
        assert_eq!(mp[0].value, 1.0);
    }
}
