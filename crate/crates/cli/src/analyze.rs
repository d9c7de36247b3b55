//! The `analyze` subcommand: read one dataset of study summaries, report
//! both heterogeneity statistics, every point estimate, confidence
//! interval, and significance test.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use qhet_core::htest::{test_heterogeneity, ApproxMethod};
use qhet_core::intervals::{interval, IntervalMethod};
use qhet_core::point::{estimate_tau2, Tau2Method};
use qhet_core::qstat::{q_with_scheme, QValue, WeightScheme};
use qhet_core::{EffectEstimate, Error, Result, StudySummary, VarianceMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Per-study variances as estimated from the data
    Conditional,
    /// Expected variances under the fitted common effect
    Unconditional,
}

impl From<ModeArg> for VarianceMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Conditional => VarianceMode::Conditional,
            ModeArg::Unconditional => VarianceMode::Unconditional,
        }
    }
}

/// Estimate and test heterogeneity for one dataset.
///
/// The CSV must carry a header naming either raw summaries
/// (`n_t,n_c,mean_t,mean_c,sd_pooled`) or precomputed effects
/// (`g,v2,n_t,n_c`); an optional leading `study` column labels the rows.
#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// CSV file of per-study summaries
    pub data: PathBuf,
    /// Emit the full report as JSON instead of a table
    #[arg(long)]
    pub json: bool,
    /// Re-derive the statistics through independent identities and fail on mismatch
    #[arg(long)]
    pub verify: bool,
    /// Confidence level for the intervals
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Significance level for the tests
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Null heterogeneity to test (tests that cannot hold a positive null are skipped)
    #[arg(long, default_value_t = 0.0)]
    pub tau0_sq: f64,
    /// Variance handling for the exact-distribution methods
    #[arg(long, value_enum, default_value_t = ModeArg::Conditional)]
    pub mode: ModeArg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct QReport {
    value: f64,
    weighted_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PointReport {
    method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    truncated: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct IntervalReport {
    method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    upper: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    degenerate: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TestReport {
    method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    statistic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reject: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Report {
    studies: usize,
    schema: String,
    level: f64,
    alpha: f64,
    tau0_sq: f64,
    mode: String,
    q_f: QReport,
    q_iv: QReport,
    points: Vec<PointReport>,
    intervals: Vec<IntervalReport>,
    tests: Vec<TestReport>,
}

struct Dataset {
    estimates: Vec<EffectEstimate>,
    schema: &'static str,
}

use crate::csv_err;

/// Reads either accepted CSV schema, telling them apart by the header.
fn read_studies(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(|h| h.trim().to_ascii_lowercase())
        .collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let require = |name: &str| {
        col(name).ok_or_else(|| {
            Error::Validation(format!("{}: missing column '{name}'", path.display()))
        })
    };

    let precomputed = col("g").is_some();
    if !precomputed && col("mean_t").is_none() {
        return Err(Error::Validation(format!(
            "{}: unrecognized header; expected raw summaries \
             (n_t,n_c,mean_t,mean_c,sd_pooled) or precomputed effects (g,v2,n_t,n_c)",
            path.display()
        )));
    }

    let idx_nt = require("n_t")?;
    let idx_nc = require("n_c")?;
    let extra = if precomputed {
        (require("g")?, require("v2")?)
    } else {
        (require("mean_t")?, require("mean_c")?)
    };
    let idx_sd = if precomputed { 0 } else { require("sd_pooled")? };

    let mut estimates = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let row = i + 2; // header is line 1
        let field = |idx: usize| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("");
            raw.parse().map_err(|_| {
                Error::Validation(format!(
                    "{}: line {row}: cannot parse '{raw}' in column '{}'",
                    path.display(),
                    headers[idx]
                ))
            })
        };
        let arm = |idx: usize| -> Result<u32> {
            let v = field(idx)?;
            if v.fract() != 0.0 || v < 0.0 || v > f64::from(u32::MAX) {
                return Err(Error::Validation(format!(
                    "{}: line {row}: arm size must be a nonnegative integer, got {v}",
                    path.display()
                )));
            }
            Ok(v as u32)
        };
        let n_t = arm(idx_nt)?;
        let n_c = arm(idx_nc)?;
        let summary = if precomputed {
            StudySummary::Precomputed {
                g: field(extra.0)?,
                v2: field(extra.1)?,
                n_t,
                n_c,
            }
        } else {
            StudySummary::Raw {
                n_t,
                n_c,
                mean_t: field(extra.0)?,
                mean_c: field(extra.1)?,
                sd_pooled: field(idx_sd)?,
            }
        };
        estimates.push(EffectEstimate::from_summary(&summary).map_err(|e| match e {
            Error::DegenerateStudy(msg) => {
                Error::DegenerateStudy(format!("line {row}: {msg}"))
            }
            Error::Validation(msg) => Error::Validation(format!("line {row}: {msg}")),
            other => other,
        })?);
    }
    if estimates.is_empty() {
        return Err(Error::NoData(format!(
            "{}: no study rows after the header",
            path.display()
        )));
    }
    Ok(Dataset {
        estimates,
        schema: if precomputed { "precomputed" } else { "raw" },
    })
}

fn build_report(args: &AnalyzeArgs, data: &Dataset) -> Result<Report> {
    let estimates = &data.estimates;
    let mode: VarianceMode = args.mode.into();
    let q_f = q_with_scheme(estimates, WeightScheme::EffectiveSampleSize)?;
    let q_iv = q_with_scheme(estimates, WeightScheme::InverseVariance)?;

    let points = Tau2Method::ALL
        .iter()
        .map(|&m| match estimate_tau2(estimates, m) {
            Ok(est) => PointReport {
                method: m.to_string(),
                value: Some(est.value),
                truncated: Some(est.truncated),
                error: None,
            },
            Err(e) => PointReport {
                method: m.to_string(),
                value: None,
                truncated: None,
                error: Some(e.to_string()),
            },
        })
        .collect();

    let intervals = IntervalMethod::ALL
        .iter()
        .map(|&m| match interval(estimates, m, args.level) {
            Ok(ci) => IntervalReport {
                method: m.to_string(),
                lower: Some(ci.lower),
                upper: Some(ci.upper),
                degenerate: Some(ci.degenerate),
                error: None,
            },
            Err(e) => IntervalReport {
                method: m.to_string(),
                lower: None,
                upper: None,
                degenerate: None,
                error: Some(e.to_string()),
            },
        })
        .collect();

    let tests = ApproxMethod::ALL
        .iter()
        .filter(|m| args.tau0_sq == 0.0 || m.supports_positive_null())
        .map(|&m| {
            match test_heterogeneity(estimates, m, mode, args.tau0_sq, args.alpha) {
                Ok(t) => TestReport {
                    method: m.to_string(),
                    statistic: Some(t.statistic),
                    p_value: Some(t.p_value),
                    reject: Some(t.reject),
                    error: None,
                },
                Err(e) => TestReport {
                    method: m.to_string(),
                    statistic: None,
                    p_value: None,
                    reject: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    Ok(Report {
        studies: estimates.len(),
        schema: data.schema.to_string(),
        level: args.level,
        alpha: args.alpha,
        tau0_sq: args.tau0_sq,
        mode: match args.mode {
            ModeArg::Conditional => "conditional".to_string(),
            ModeArg::Unconditional => "unconditional".to_string(),
        },
        q_f: QReport {
            value: q_f.value,
            weighted_mean: q_f.weighted_mean,
        },
        q_iv: QReport {
            value: q_iv.value,
            weighted_mean: q_iv.weighted_mean,
        },
        points,
        intervals,
        tests,
    })
}

/// Re-derives the statistics through routes independent of the ones used
/// for the report and fails on any mismatch beyond rounding.
fn verify(estimates: &[EffectEstimate], report: &Report) -> Result<usize> {
    let mut checks = 0;
    let mut ensure = |label: &str, got: f64, want: f64, scale: f64| -> Result<()> {
        checks += 1;
        if (got - want).abs() > 1e-12 * scale.max(1.0) {
            return Err(Error::Numeric(format!(
                "verification failed: {label}: {got} vs {want}"
            )));
        }
        Ok(())
    };

    // The sum-of-squares expansion Q = sum(w g^2) - W gbar^2 must agree with
    // the centered two-pass computation behind the report.
    for scheme in [WeightScheme::EffectiveSampleSize, WeightScheme::InverseVariance] {
        let q: &QValue = &q_with_scheme(estimates, scheme)?;
        let w = qhet_core::qstat::weights(estimates, scheme)?;
        let total: f64 = w.iter().sum();
        let wg: f64 = w.iter().zip(estimates).map(|(wi, e)| wi * e.g).sum();
        let wgg: f64 = w.iter().zip(estimates).map(|(wi, e)| wi * e.g * e.g).sum();
        let (reported, name) = match scheme {
            WeightScheme::EffectiveSampleSize => (&report.q_f, "QF"),
            WeightScheme::InverseVariance => (&report.q_iv, "QIV"),
        };
        ensure(&format!("{name} mean identity"), q.weighted_mean, wg / total, wgg)?;
        ensure(&format!("{name} expansion identity"), q.value, wgg - wg * wg / total, wgg)?;
        ensure(&format!("{name} report value"), reported.value, q.value, wgg)?;
    }

    // The JSON form must round-trip to the identical report.
    let text = serde_json::to_string(report)
        .map_err(|e| Error::Numeric(format!("verification failed: serialize: {e}")))?;
    let back: Report = serde_json::from_str(&text)
        .map_err(|e| Error::Numeric(format!("verification failed: parse: {e}")))?;
    checks += 1;
    if back != *report {
        return Err(Error::Numeric(
            "verification failed: JSON round trip altered the report".to_string(),
        ));
    }
    Ok(checks)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn render_table(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Studies: {} ({} effects)", report.studies, report.schema);
    let _ = writeln!(out);
    let _ = writeln!(out, "Heterogeneity statistics");
    let _ = writeln!(
        out,
        "  QF  = {:>9.4}   (constant weights; weighted mean g = {:.4})",
        report.q_f.value, report.q_f.weighted_mean
    );
    let _ = writeln!(
        out,
        "  QIV = {:>9.4}   (inverse-variance weights; weighted mean g = {:.4})",
        report.q_iv.value, report.q_iv.weighted_mean
    );
    let _ = writeln!(out);
    let _ = writeln!(out, "Point estimates of tau^2");
    for p in &report.points {
        match &p.error {
            None => {
                let trunc = if p.truncated == Some(true) { "  (truncated at 0)" } else { "" };
                let _ = writeln!(out, "  {:<5} {:>9}{trunc}", p.method, fmt_opt(p.value));
            }
            Some(e) => {
                let _ = writeln!(out, "  {:<5} failed: {e}", p.method);
            }
        }
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "{:.0}% confidence intervals for tau^2", report.level * 100.0);
    for ci in &report.intervals {
        match &ci.error {
            None => {
                let tag = if ci.degenerate == Some(true) { "  (degenerate)" } else { "" };
                let _ = writeln!(
                    out,
                    "  {:<5} [{}, {}]{tag}",
                    ci.method,
                    fmt_opt(ci.lower),
                    fmt_opt(ci.upper)
                );
            }
            Some(e) => {
                let _ = writeln!(out, "  {:<5} failed: {e}", ci.method);
            }
        }
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "Tests of tau^2 = {} (alpha = {}, {} variances)",
        report.tau0_sq, report.alpha, report.mode
    );
    for t in &report.tests {
        match &t.error {
            None => {
                let verdict = if t.reject == Some(true) { "reject" } else { "retain" };
                let _ = writeln!(
                    out,
                    "  {:<5} Q = {:>9}   p = {}   {verdict}",
                    t.method,
                    fmt_opt(t.statistic),
                    fmt_opt(t.p_value)
                );
            }
            Some(e) => {
                let _ = writeln!(out, "  {:<5} failed: {e}", t.method);
            }
        }
    }
    out
}

pub fn run(args: &AnalyzeArgs) -> Result<()> {
    for (name, value) in [("--level", args.level), ("--alpha", args.alpha)] {
        if !(value > 0.0 && value < 1.0) {
            return Err(Error::Usage(format!(
                "{name} must lie strictly between 0 and 1, got {value}"
            )));
        }
    }
    if !(args.tau0_sq >= 0.0 && args.tau0_sq.is_finite()) {
        return Err(Error::Usage(format!(
            "--tau0-sq must be a finite nonnegative number, got {}",
            args.tau0_sq
        )));
    }
    let data = read_studies(&args.data)?;
    let report = build_report(args, &data)?;
    if args.json {
        let text = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Numeric(format!("serialize report: {e}")))?;
        crate::emit(&text);
        crate::emit("\n");
    } else {
        crate::emit(&render_table(&report));
    }
    if args.verify {
        let checks = verify(&data.estimates, &report)?;
        crate::emit(&format!("verification passed ({checks} checks)\n"));
    }
    Ok(())
}
