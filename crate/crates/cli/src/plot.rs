//! The `plot` subcommand: turn the long-format simulation CSV into
//! self-contained SVG figures, one panel per meta-analysis shape.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};

use qhet_core::sim::MetricRow;
use qhet_core::{Error, Result};

use crate::svg::{self, Figure, Panel, Series};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    /// Bias of each point estimator vs true heterogeneity
    Bias,
    /// Interval coverage vs true heterogeneity
    Coverage,
    /// Empirical vs nominal rejection rate under homogeneity
    Level,
    /// Empirical size at --alpha vs average study size
    Levelt,
    /// Rejection rate at --alpha vs true heterogeneity
    Power,
    /// Absolute rejection-rate error under homogeneity, log-x
    Apxerr,
}

/// Draw one figure from `simulate` output.
///
/// Each figure fixes the allocation fraction and the true effect (`--f`,
/// `--delta`) and lays out one panel per meta-analysis shape present in the
/// selected slice.  An empty slice fails with exit code 4 and a summary of
/// what the file does contain.
#[derive(Args, Debug)]
pub struct PlotArgs {
    /// results.csv written by `qhet simulate`
    pub data: PathBuf,
    /// Which figure to draw
    #[arg(long, value_enum)]
    pub kind: PlotKind,
    /// Output SVG file
    #[arg(long, default_value = "plot.svg")]
    pub out: PathBuf,
    /// Allocation-fraction slice
    #[arg(long, default_value_t = 0.5)]
    pub f: f64,
    /// True-effect slice (default 0 for level/levelt/apxerr, 0.5 otherwise)
    #[arg(long)]
    pub delta: Option<f64>,
    /// Significance threshold for levelt and power
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

/// Average study size of a `n_spec` string like `"40"` or `"12/16/18/20/84"`.
fn mean_n(spec: &str) -> f64 {
    let parts: Vec<f64> = spec.split('/').filter_map(|p| p.parse().ok()).collect();
    if parts.is_empty() {
        0.0
    } else {
        parts.iter().sum::<f64>() / parts.len() as f64
    }
}

fn reject_threshold(metric: &str) -> Option<f64> {
    metric.strip_prefix("reject_")?.parse().ok()
}

fn read_rows(path: &Path) -> Result<Vec<MetricRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| crate::csv_err(path, e))?;
    let mut rows = Vec::new();
    for record in reader.deserialize::<MetricRow>() {
        rows.push(record.map_err(|e| crate::csv_err(path, e))?);
    }
    if rows.is_empty() {
        return Err(Error::NoData(format!("{}: no rows after the header", path.display())));
    }
    Ok(rows)
}

fn join<T: Display>(values: impl IntoIterator<Item = T>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

fn no_data(kind: PlotKind, rows: &[MetricRow], f: f64, delta: f64) -> Error {
    let mut ks = BTreeSet::new();
    let mut specs = BTreeSet::new();
    let mut fractions = BTreeSet::new();
    let mut deltas = BTreeSet::new();
    let mut tau2s = BTreeSet::new();
    for r in rows {
        ks.insert(r.k);
        specs.insert(r.n_spec.clone());
        fractions.insert(r.f.to_string());
        deltas.insert(r.delta.to_string());
        tau2s.insert(r.tau2.to_string());
    }
    Error::NoData(format!(
        "no rows for a {kind:?} figure at f = {f}, delta = {delta}; the file holds \
         k in {{{}}}, n in {{{}}}, f in {{{}}}, delta in {{{}}}, tau2 in {{{}}}",
        join(ks),
        join(specs),
        join(fractions),
        join(deltas),
        join(tau2s)
    ))
}

// Panels sort by study count, then by average study size, so equal and
// unequal shapes interleave in a readable order.
type PanelKey = (u32, u64, String);

fn make_panels<I>(picks: I, title: impl Fn(u32, &str) -> String, hline: Option<f64>, diagonal: bool) -> Vec<Panel>
where
    I: IntoIterator<Item = (u32, String, String, f64, f64)>,
{
    let mut grouped: BTreeMap<PanelKey, BTreeMap<String, Vec<(f64, f64)>>> = BTreeMap::new();
    for (k, spec, label, x, y) in picks {
        let key = (k, (mean_n(&spec) * 1000.0).round() as u64, spec);
        grouped.entry(key).or_default().entry(label).or_default().push((x, y));
    }
    grouped
        .into_iter()
        .map(|((k, _, spec), series)| Panel {
            title: title(k, &spec),
            series: series
                .into_iter()
                .map(|(label, points)| Series { label, points })
                .collect(),
            hline,
            diagonal,
        })
        .collect()
}

fn shape_title(k: u32, spec: &str) -> String {
    format!("K = {k}, n = {spec}")
}

fn build_figure(args: &PlotArgs, rows: &[MetricRow], delta: f64) -> Result<Figure> {
    let slice = |r: &&MetricRow| near(r.f, args.f) && near(r.delta, delta);
    let alpha_metric = format!("reject_{}", args.alpha);
    let (panels, title, x_label, y_label, log_x) = match args.kind {
        PlotKind::Bias => (
            make_panels(
                rows.iter()
                    .filter(slice)
                    .filter(|r| r.metric == "bias")
                    .map(|r| (r.k, r.n_spec.clone(), r.method.clone(), r.tau2, r.value)),
                shape_title,
                Some(0.0),
                false,
            ),
            format!("Point-estimator bias (f = {}, delta = {delta})", args.f),
            "true tau^2".to_string(),
            "bias".to_string(),
            false,
        ),
        PlotKind::Coverage => (
            make_panels(
                rows.iter()
                    .filter(slice)
                    .filter(|r| r.metric == "coverage")
                    .map(|r| (r.k, r.n_spec.clone(), r.method.clone(), r.tau2, r.value)),
                shape_title,
                Some(0.95),
                false,
            ),
            format!("Interval coverage (f = {}, delta = {delta})", args.f),
            "true tau^2".to_string(),
            "coverage".to_string(),
            false,
        ),
        PlotKind::Level => (
            make_panels(
                rows.iter()
                    .filter(slice)
                    .filter(|r| near(r.tau2, 0.0))
                    .filter_map(|r| {
                        let t = reject_threshold(&r.metric)?;
                        Some((r.k, r.n_spec.clone(), r.method.clone(), t, r.value))
                    }),
                shape_title,
                None,
                true,
            ),
            format!("Rejection rate vs nominal threshold under homogeneity (f = {}, delta = {delta})", args.f),
            "nominal threshold".to_string(),
            "rejection rate".to_string(),
            false,
        ),
        PlotKind::Levelt => (
            make_panels(
                rows.iter()
                    .filter(slice)
                    .filter(|r| near(r.tau2, 0.0) && r.metric == alpha_metric)
                    .map(|r| {
                        let n = mean_n(&r.n_spec);
                        (r.k, String::new(), r.method.clone(), n, r.value)
                    }),
                |k, _| format!("K = {k}"),
                Some(args.alpha),
                false,
            ),
            format!(
                "Empirical size at alpha = {} under homogeneity (f = {}, delta = {delta})",
                args.alpha, args.f
            ),
            "average study size".to_string(),
            "rejection rate".to_string(),
            false,
        ),
        PlotKind::Power => (
            make_panels(
                rows.iter()
                    .filter(slice)
                    .filter(|r| r.metric == alpha_metric)
                    .map(|r| (r.k, r.n_spec.clone(), r.method.clone(), r.tau2, r.value)),
                shape_title,
                Some(args.alpha),
                false,
            ),
            format!("Rejection rate at alpha = {} (f = {}, delta = {delta})", args.alpha, args.f),
            "true tau^2".to_string(),
            "rejection rate".to_string(),
            false,
        ),
        PlotKind::Apxerr => (
            make_panels(
                rows.iter()
                    .filter(slice)
                    .filter(|r| near(r.tau2, 0.0))
                    .filter_map(|r| {
                        let t = reject_threshold(&r.metric)?;
                        Some((r.k, r.n_spec.clone(), r.method.clone(), t, (r.value - t).abs()))
                    }),
                shape_title,
                None,
                false,
            ),
            format!(
                "Absolute rejection-rate error under homogeneity (f = {}, delta = {delta})",
                args.f
            ),
            "nominal threshold".to_string(),
            "|empirical - nominal|".to_string(),
            true,
        ),
    };
    if panels.iter().all(|p| p.series.is_empty()) || panels.is_empty() {
        return Err(no_data(args.kind, rows, args.f, delta));
    }
    Ok(Figure { title, x_label, y_label, log_x, panels })
}

pub fn run(args: &PlotArgs) -> Result<()> {
    let rows = read_rows(&args.data)?;
    let delta = args.delta.unwrap_or(match args.kind {
        PlotKind::Level | PlotKind::Levelt | PlotKind::Apxerr => 0.0,
        _ => 0.5,
    });
    let figure = build_figure(args, &rows, delta)?;
    fs::write(&args.out, svg::render(&figure))?;
    crate::emit(&format!("wrote {}\n", args.out.display()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(
        k: u32,
        n_spec: &str,
        f: f64,
        delta: f64,
        tau2: f64,
        method: &str,
        metric: &str,
        value: f64,
    ) -> MetricRow {
        MetricRow {
            k,
            n_spec: n_spec.to_string(),
            f,
            delta,
            tau2,
            method: method.to_string(),
            metric: metric.to_string(),
            value,
            reps: 1000,
            seed: 7,
        }
    }

    fn demo_rows() -> Vec<MetricRow> {
        let mut rows = Vec::new();
        for &tau2 in &[0.0, 1.0, 2.0] {
            for method in ["SSC", "DL"] {
                rows.push(row(5, "20", 0.5, 0.5, tau2, method, "bias", -0.1 * tau2));
                rows.push(row(5, "12/16/18/20/84", 0.5, 0.5, tau2, method, "bias", -0.05 * tau2));
            }
            rows.push(row(5, "20", 0.5, 0.5, tau2, "QP", "coverage", 0.93));
            for method in ["CHI2", "FSW"] {
                rows.push(row(5, "20", 0.5, 0.0, tau2, method, "reject_0.05", 0.06));
                rows.push(row(5, "20", 0.5, 0.0, tau2, method, "reject_0.5", 0.5));
            }
        }
        rows
    }

    fn args(kind: PlotKind) -> PlotArgs {
        PlotArgs {
            data: PathBuf::from("unused.csv"),
            kind,
            out: PathBuf::from("unused.svg"),
            f: 0.5,
            delta: None,
            alpha: 0.05,
        }
    }

    #[test]
    fn bias_figure_has_one_panel_per_shape() {
        let fig = build_figure(&args(PlotKind::Bias), &demo_rows(), 0.5).unwrap();
        assert_eq!(fig.panels.len(), 2);
        // Equal 20 sorts before the unequal pattern with mean 30.
        assert_eq!(fig.panels[0].title, "K = 5, n = 20");
        assert_eq!(fig.panels[1].title, "K = 5, n = 12/16/18/20/84");
        assert_eq!(fig.panels[0].series.len(), 2);
        assert_eq!(fig.panels[0].series[0].points.len(), 3);
    }

    #[test]
    fn level_figure_reads_thresholds_from_metric_names() {
        let fig = build_figure(&args(PlotKind::Level), &demo_rows(), 0.0).unwrap();
        assert_eq!(fig.panels.len(), 1);
        let series = &fig.panels[0].series;
        assert_eq!(series.len(), 2);
        let xs: Vec<f64> = series[0].points.iter().map(|p| p.0).collect();
        assert!(xs.contains(&0.05) && xs.contains(&0.5));
        assert!(fig.panels[0].diagonal);
    }

    #[test]
    fn empty_slice_reports_what_exists() {
        let err = build_figure(&args(PlotKind::Bias), &demo_rows(), 1.7).unwrap_err();
        match err {
            Error::NoData(msg) => {
                assert!(msg.contains("delta in {0, 0.5}"), "{msg}");
                assert!(msg.contains("tau2 in {0, 1, 2}"), "{msg}");
            }
            other => panic!("expected NoData, got {other}"),
        }
    }

    #[test]
    fn average_study_size_handles_patterns() {
        assert_eq!(mean_n("40"), 40.0);
        assert_eq!(mean_n("12/16/18/20/84"), 30.0);
        assert_eq!(reject_threshold("reject_0.05"), Some(0.05));
        assert_eq!(reject_threshold("coverage"), None);
    }

    #[test]
    fn rendered_figure_is_valid_svg() {
        let fig = build_figure(&args(PlotKind::Apxerr), &demo_rows(), 0.0).unwrap();
        assert!(fig.log_x);
        let text = svg::render(&fig);
        assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"));
    }
}
