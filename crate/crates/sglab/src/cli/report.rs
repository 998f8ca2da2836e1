use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::{ExperimentConfig, OutputFormat};
use super::experiments::Outcome;
use crate::error::{LabError, Result};

/// Bumped whenever the JSON report layout changes.
pub const REPORT_SCHEMA_VERSION: u32 = 1;
/// Written as the first column of every CSV row; bumped on schema changes.
pub const CSV_SCHEMA_VERSION: u32 = 1;

/// One reported quantity. `pass` is `None` for informational metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    /// Monte Carlo standard error of `value`, if it is an estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
    /// 95% confidence interval, if `se` is known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci95: Option<[f64; 2]>,
    /// Ratio of `value` to its reference or bound, where meaningful.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    /// Human-readable pass rule, e.g. "≤ 1.5".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<String>,
    pub pass: Option<bool>,
}

impl Metric {
    pub fn info(name: impl Into<String>, value: f64) -> Self {
        Self {
            name: name.into(),
            value,
            se: None,
            ci95: None,
            ratio: None,
            threshold: None,
            pass: None,
        }
    }

    pub fn check(name: impl Into<String>, value: f64, threshold: String, pass: bool) -> Self {
        Self {
            threshold: Some(threshold),
            pass: Some(pass),
            ..Self::info(name, value)
        }
    }

    /// value ≤ max.
    pub fn at_most(name: impl Into<String>, value: f64, max: f64) -> Self {
        Self::check(name, value, format!("<= {max}"), value <= max)
    }

    /// value ≥ min.
    pub fn at_least(name: impl Into<String>, value: f64, min: f64) -> Self {
        Self::check(name, value, format!(">= {min}"), value >= min)
    }

    pub fn with_se(mut self, se: f64) -> Self {
        self.se = Some(se);
        self.ci95 = Some([self.value - 1.96 * se, self.value + 1.96 * se]);
        self
    }

    pub fn with_ratio(mut self, ratio: f64) -> Self {
        self.ratio = Some(ratio);
        self
    }

    pub fn summary_line(&self) -> String {
        let verdict = match self.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "info",
        };
        let mut s = format!("[{verdict}] {} = {:.6}", self.name, self.value);
        if let Some(se) = self.se {
            s.push_str(&format!(" ± {se:.2e}"));
        }
        if let Some(r) = self.ratio {
            s.push_str(&format!(" (ratio {r:.4})"));
        }
        if let Some(t) = &self.threshold {
            s.push_str(&format!(" [{t}]"));
        }
        s
    }
}

/// A table written as one CSV file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Series {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["schema_version".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![CSV_SCHEMA_VERSION.to_string()];
            rec.extend(row.iter().map(|v| match v {
                Value::Null => String::new(),
                Value::String(s) => s.clone(),
                other => other.to_string(),
            }));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub experiment: String,
    pub version: String,
    /// Source revision the binary was built from, when known.
    pub git_revision: String,
    /// The fully merged configuration that produced this report.
    pub config: ExperimentConfig,
    /// Every seed the experiment consumed.
    pub seeds: Vec<u64>,
    pub metrics: Vec<Metric>,
    /// All pass flags true.
    pub pass: bool,
    /// Experiment-specific structured output.
    pub details: Value,
    pub series: Vec<Series>,
    pub wall_clock_seconds: f64,
}

impl ExperimentReport {
    pub(crate) fn assemble(config: ExperimentConfig, outcome: Outcome, wall: f64) -> Self {
        let pass = outcome.metrics.iter().all(|m| m.pass != Some(false));
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            experiment: config.experiment.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            git_revision: option_env!("SGLAB_GIT_REVISION")
                .unwrap_or("unknown")
                .to_string(),
            config,
            seeds: outcome.seeds,
            metrics: outcome.metrics,
            pass,
            details: outcome.details,
            series: outcome.series,
            wall_clock_seconds: wall,
        }
    }

    pub fn metric(&self, name: &str) -> Option<&Metric> {
        self.metrics.iter().find(|m| m.name == name)
    }

    /// The report as JSON with the wall-clock field zeroed; two runs with the
    /// same config produce identical strings.
    pub fn content_fingerprint(&self) -> String {
        let mut r = self.clone();
        r.wall_clock_seconds = 0.0;
        serde_json::to_string(&r).expect("report serialises")
    }

    /// Write `<experiment>.json` and one `<experiment>.<series>.csv` per
    /// series into `dir`, returning the paths written.
    pub fn write(&self, dir: &Path, formats: &[OutputFormat]) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| {
            LabError::Config(format!("cannot create output directory {}: {e}", dir.display()))
        })?;
        let mut written = Vec::new();
        if formats.contains(&OutputFormat::Json) {
            let p = dir.join(format!("{}.json", self.experiment));
            let mut text = serde_json::to_string_pretty(self)?;
            text.push('\n');
            std::fs::write(&p, text).map_err(|e| {
                LabError::Config(format!("cannot write {}: {e}", p.display()))
            })?;
            written.push(p);
        }
        if formats.contains(&OutputFormat::Csv) {
            for s in &self.series {
                let p = dir.join(format!("{}.{}.csv", self.experiment, s.name));
                s.write_csv(&p)?;
                written.push(p);
            }
        }
        Ok(written)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| LabError::Config(format!("{}: not a report: {e}", path.display())))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BaselineDiff {
    pub lines: Vec<String>,
    /// Metrics whose value moved by more than the relative tolerance.
    pub changed: usize,
    /// Metrics that passed in the baseline and fail now.
    pub regressed: usize,
    /// Baseline metrics absent from the new report.
    pub missing: usize,
}

impl BaselineDiff {
    pub fn is_clean(&self) -> bool {
        self.changed == 0 && self.regressed == 0 && self.missing == 0
    }
}

pub fn compare_reports(
    old: &ExperimentReport,
    new: &ExperimentReport,
    rel_tol: f64,
) -> Result<BaselineDiff> {
    if old.experiment != new.experiment {
        return Err(LabError::Config(format!(
            "reports are for different experiments (`{}` vs `{}`)",
            old.experiment, new.experiment
        )));
    }
    let mut d = BaselineDiff::default();
    if old.config != new.config {
        d.lines.push("note: configurations differ".into());
    }
    for m in &old.metrics {
        let Some(n) = new.metric(&m.name) else {
            d.missing += 1;
            d.lines.push(format!("missing  {}", m.name));
            continue;
        };
        let scale = m.value.abs().max(n.value.abs());
        let same = m.value == n.value
            || (m.value.is_finite()
                && n.value.is_finite()
                && (m.value - n.value).abs() <= rel_tol * scale);
        if !same {
            d.changed += 1;
            d.lines.push(format!(
                "changed  {}: {} -> {}",
                m.name, m.value, n.value
            ));
        }
        if m.pass == Some(true) && n.pass == Some(false) {
            d.regressed += 1;
            d.lines.push(format!("regressed {}: PASS -> FAIL", m.name));
        } else if m.pass == Some(false) && n.pass == Some(true) {
            d.lines.push(format!("fixed    {}: FAIL -> PASS", m.name));
        }
    }
    for n in &new.metrics {
        if old.metric(&n.name).is_none() {
            d.lines.push(format!("new      {}", n.name));
        }
    }
    Ok(d)
}
