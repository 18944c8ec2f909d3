//! Run configuration documents and export of Monte-Carlo reports.
//!
//! Tables follow a fixed layout: frequency tables (`tab0`
//! for pattern I, `tab1` for pattern II) and error tables (`tab2`, `tab3`).
//! Rows for the alpha-weighted baseline are emitted with empty cells so
//! exported tables line up with that layout; the baseline itself is not
//! implemented.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::covariance::Method;
use crate::error::{Error, Result};
use crate::estimator::FitOptions;
use crate::evaluation::qq_points;
use crate::io::fmt_num;
use crate::simulation::{mean_factor_error, McReport, MethodRecord, Moments, Pattern, SimConfig};

/// Baseline rows kept empty in exported tables.
pub const BASELINE_LABELS: [&str; 3] = ["F(alpha=-1)", "F(alpha=0)", "F(alpha=1)"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputOptions {
    pub dir: PathBuf,
    pub report_json: bool,
    pub tables: bool,
    pub boxplot: bool,
    pub qq: bool,
}

impl Default for OutputOptions {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            report_json: true,
            tables: true,
            boxplot: true,
            qq: true,
        }
    }
}

/// A whole simulation campaign as one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub simulation: SimConfig,
    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
    /// Simulated data are mean zero by construction, so centring is off
    /// unless asked for.
    #[serde(default = "uncentred")]
    pub fit: FitOptions,
    #[serde(default)]
    pub output: OutputOptions,
}

fn all_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn uncentred() -> FitOptions {
    FitOptions {
        demean: false,
        ..FitOptions::default()
    }
}

impl RunConfig {
    pub fn new(simulation: SimConfig) -> Self {
        Self {
            simulation,
            methods: all_methods(),
            fit: uncentred(),
            output: OutputOptions::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.simulation.validate()?;
        if config.methods.is_empty() {
            return Err(Error::InvalidConfig("methods must not be empty".into()));
        }
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

fn key_columns(config: &SimConfig) -> String {
    format!(
        "{},{},{},{},{}",
        config.setting.label(),
        config.pattern.label(),
        config.a,
        config.b,
        config.t
    )
}

const KEY_HEADER: &str = "setting,pattern,a,b,T";

/// `tab0`/`tab1`: share of replications per selected `(k̂, r̂)`.
pub fn frequency_table(report: &McReport) -> String {
    let key = key_columns(&report.config);
    let mut out = format!("{KEY_HEADER},method,k_hat,r_hat,count,frequency\n");
    for s in &report.summaries {
        for f in &s.rank_frequencies {
            let (k, r) = match f.ranks {
                Some((k, r)) => (k.to_string(), r.to_string()),
                None => ("failed".to_string(), String::new()),
            };
            out += &format!("{key},{},{k},{r},{},{}\n", s.method, f.count, fmt_num(f.frequency));
        }
    }
    for label in BASELINE_LABELS {
        out += &format!("{key},{label},,,,\n");
    }
    out
}

/// `tab2`/`tab3`: means and standard deviations of the accuracy metrics.
pub fn error_table(report: &McReport) -> String {
    let key = key_columns(&report.config);
    let mut out = format!(
        "{KEY_HEADER},method,d_r_mean,d_r_sd,d_c_mean,d_c_sd,factor_error_mean,factor_error_sd,reps,failures\n"
    );
    let cells = |m: Option<Moments>| (opt(m.map(|m| m.mean)), opt(m.map(|m| m.sd)));
    for s in &report.summaries {
        let (dr, drs) = cells(s.d_r);
        let (dc, dcs) = cells(s.d_c);
        let (fe, fes) = cells(s.factor_error);
        out += &format!(
            "{key},{},{dr},{drs},{dc},{dcs},{fe},{fes},{},{}\n",
            s.method,
            report.records.len(),
            s.failures
        );
    }
    for label in BASELINE_LABELS {
        out += &format!("{key},{label},,,,,,,,\n");
    }
    out
}

fn metric_values(report: &McReport, m: usize) -> [(&'static str, Vec<(usize, f64)>); 3] {
    let pick = |f: &dyn Fn(&MethodRecord) -> Option<f64>| -> Vec<(usize, f64)> {
        report
            .records
            .iter()
            .filter_map(|r| f(&r.methods[m]).map(|v| (r.rep, v)))
            .collect()
    };
    [
        ("d_r", pick(&|r| r.d_r)),
        ("d_c", pick(&|r| r.d_c)),
        ("factor_error", pick(&mean_factor_error)),
    ]
}

/// Raw per-replication values behind the boxplots; the factor error of a
/// replication is its mean over periods.
pub fn boxplot_table(report: &McReport) -> String {
    let mut out = String::from("method,metric,rep,value\n");
    for (m, s) in report.summaries.iter().enumerate() {
        for (name, values) in metric_values(report, m) {
            for (rep, v) in values {
                out += &format!("{},{name},{rep},{}\n", s.method, fmt_num(v));
            }
        }
    }
    out
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Five-number summaries of the boxplot data.
pub fn boxplot_summary_table(report: &McReport) -> String {
    let mut out = String::from("method,metric,n,min,q1,median,q3,max\n");
    for (m, s) in report.summaries.iter().enumerate() {
        for (name, values) in metric_values(report, m) {
            let mut v: Vec<f64> = values.into_iter().map(|(_, v)| v).collect();
            if v.is_empty() {
                continue;
            }
            v.sort_by(f64::total_cmp);
            let q: Vec<String> = [0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|&p| fmt_num(quantile(&v, p))).collect();
            out += &format!("{},{name},{},{}\n", s.method, v.len(), q.join(","));
        }
    }
    out
}

/// Normal QQ pairs of the standardized first-row loading errors.
pub fn qq_table(report: &McReport) -> String {
    let mut out = String::from("method,coordinate,theoretical,empirical\n");
    for s in &report.summaries {
        if let Some(n) = &s.normality {
            for c in 0..n.standardized.len() {
                for (x, y) in qq_points(n, c) {
                    out += &format!("{},{c},{},{}\n", s.method, fmt_num(x), fmt_num(y));
                }
            }
        }
    }
    out
}

pub fn normality_table(report: &McReport) -> String {
    let mut out = String::from("method,coordinate,reps,mean,sd,skewness,excess_kurtosis\n");
    for s in &report.summaries {
        if let Some(n) = &s.normality {
            for c in 0..n.mean.len() {
                out += &format!(
                    "{},{c},{},{},{},{},{}\n",
                    s.method,
                    n.reps,
                    fmt_num(n.mean[c]),
                    fmt_num(n.sd[c]),
                    fmt_num(n.skewness[c]),
                    fmt_num(n.excess_kurtosis[c])
                );
            }
        }
    }
    out
}

/// File names of the frequency and error tables for the report's pattern.
pub fn table_names(config: &SimConfig) -> (&'static str, &'static str) {
    match config.pattern {
        Pattern::I { .. } => ("tab0.csv", "tab2.csv"),
        Pattern::II { .. } => ("tab1.csv", "tab3.csv"),
    }
}

fn write_file(dir: &Path, name: &str, contents: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    let mut f = fs::File::create(&path)?;
    f.write_all(contents.as_bytes())?;
    written.push(path);
    Ok(())
}

/// Writes the enabled outputs into `options.dir` and returns their paths.
pub fn write_report(report: &McReport, options: &OutputOptions) -> Result<Vec<PathBuf>> {
    let dir = options.dir.as_path();
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if options.report_json {
        let json = serde_json::to_string_pretty(report)? + "\n";
        write_file(dir, "report.json", &json, &mut written)?;
    }
    if options.tables {
        let (freq, err) = table_names(&report.config);
        write_file(dir, freq, &frequency_table(report), &mut written)?;
        write_file(dir, err, &error_table(report), &mut written)?;
    }
    if options.boxplot {
        write_file(dir, "boxplot.csv", &boxplot_table(report), &mut written)?;
        write_file(dir, "boxplot_summary.csv", &boxplot_summary_table(report), &mut written)?;
    }
    if options.qq {
        write_qq(report, dir, &mut written)?;
    }
    Ok(written)
}

/// Only the normality outputs: `qq.csv` and `normality.csv`.
pub fn write_normality(report: &McReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    write_qq(report, dir, &mut written)?;
    Ok(written)
}

fn write_qq(report: &McReport, dir: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    write_file(dir, "qq.csv", &qq_table(report), written)?;
    write_file(dir, "normality.csv", &normality_table(report), written)
}
