//! Scenario runner: config in, artifacts and a pass/fail summary out.
//!
//! Every run writes into its own directory: the resolved config, the experiment's
//! CSV and JSON files, and `summary.json`. Runs are deterministic; only the
//! `runtime_s` field of the summary varies between identical runs.

pub mod config;
mod experiments;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

pub use config::{Experiment, GridSpec, PhaseSpec, Scenario, ShiftSpec, SurgeryMode, SymbolSpec, SCHEMA_VERSION};

use crate::error::{Error, Result};
use crate::io::{loglog_slope, num, write_text};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub bound: f64,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub schema: u32,
    pub scenario: String,
    pub experiment: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub metrics: BTreeMap<String, f64>,
    pub artifacts: Vec<String>,
    pub runtime_s: f64,
}

impl Summary {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Collects checks, metrics and files for one run.
pub(crate) struct Report {
    dir: PathBuf,
    checks: Vec<Check>,
    metrics: BTreeMap<String, f64>,
    artifacts: Vec<String>,
}

impl Report {
    fn new(dir: &Path) -> Self {
        Report {
            dir: dir.to_path_buf(),
            checks: Vec::new(),
            metrics: BTreeMap::new(),
            artifacts: Vec::new(),
        }
    }

    pub(crate) fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    /// Passes when `value <= bound`.
    pub(crate) fn at_most(&mut self, name: impl Into<String>, value: f64, bound: f64) {
        self.check(name, value <= bound, value, bound, "");
    }

    pub(crate) fn check(&mut self, name: impl Into<String>, passed: bool, value: f64, bound: f64, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            value,
            bound,
            detail: detail.into(),
        });
    }

    pub(crate) fn file(&mut self, name: &str, text: &str) -> Result<()> {
        write_text(&self.dir.join(name), text)?;
        self.artifacts.push(name.to_owned());
        Ok(())
    }

    pub(crate) fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.file(name, &text)
    }
}

/// Metric and check names: `base[a,b]`.
pub(crate) fn key(base: &str, parts: &[&str]) -> String {
    if parts.is_empty() {
        base.to_owned()
    } else {
        format!("{base}[{}]", parts.join(","))
    }
}

/// Runs `scenario` into `out_dir` and writes `summary.json` there.
pub fn run(scenario: &Scenario, out_dir: &Path) -> Result<Summary> {
    let wrap = |e: Error| match e {
        e @ Error::Scenario { .. } => e,
        e => Error::Scenario {
            scenario: scenario.name.clone(),
            source: Box::new(e),
        },
    };
    scenario.validate().map_err(wrap)?;
    std::fs::create_dir_all(out_dir).map_err(|e| wrap(e.into()))?;
    let clock = Instant::now();
    let mut rep = Report::new(out_dir);
    rep.file("scenario.toml", &scenario.to_toml().map_err(wrap)?).map_err(wrap)?;
    experiments::dispatch(scenario, &mut rep).map_err(wrap)?;
    let summary = Summary {
        schema: SCHEMA_VERSION,
        scenario: scenario.name.clone(),
        experiment: scenario.experiment.kind().to_owned(),
        passed: rep.checks.iter().all(|c| c.passed),
        checks: rep.checks,
        metrics: rep.metrics,
        artifacts: rep.artifacts,
        runtime_s: clock.elapsed().as_secs_f64(),
    };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    write_text(&out_dir.join("summary.json"), &text).map_err(wrap)?;
    Ok(summary)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Eps,
    Beta,
    LabelSpacing,
    Dt,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eps" | "epsilon" => Ok(SweepParam::Eps),
            "beta" => Ok(SweepParam::Beta),
            "label_spacing" | "label-spacing" => Ok(SweepParam::LabelSpacing),
            "dt" => Ok(SweepParam::Dt),
            _ => Err(Error::Config(format!("unknown sweep parameter '{s}' (eps, beta, label_spacing, dt)"))),
        }
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Eps => "eps",
            SweepParam::Beta => "beta",
            SweepParam::LabelSpacing => "label_spacing",
            SweepParam::Dt => "dt",
        }
    }

    /// Copy of `scenario` with the parameter set to `value`, validated.
    pub fn apply(self, scenario: &Scenario, value: f64) -> Result<Scenario> {
        let mut sc = scenario.clone();
        match self {
            SweepParam::Eps => sc.eps = vec![value],
            SweepParam::LabelSpacing => sc.grid.label_spacing = value,
            SweepParam::Dt => sc.grid.dt = value,
            SweepParam::Beta => match &mut sc.experiment {
                Experiment::Surgery { beta, .. } => *beta = value,
                other => {
                    return Err(Error::Config(format!("beta sweeps need a surgery experiment, not '{}'", other.kind())))
                }
            },
        }
        sc.name = format!("{}-{}-{}", scenario.name, self.name(), value);
        sc.validate()?;
        Ok(sc)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub passed: bool,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepSummary {
    pub schema: u32,
    pub scenario: String,
    pub parameter: SweepParam,
    pub passed: bool,
    pub rows: Vec<SweepRow>,
    /// Log-log slope of each positive metric against the parameter.
    pub slopes: BTreeMap<String, f64>,
    /// Ratio of each metric between consecutive rows.
    pub ratios: BTreeMap<String, Vec<f64>>,
}

/// Runs one scenario per value, each in `out_dir/<param>-<index>`.
///
/// Every value is validated before anything runs, so a rejected value costs nothing.
pub fn sweep(scenario: &Scenario, param: SweepParam, values: &[f64], out_dir: &Path) -> Result<SweepSummary> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let scenarios = values.iter().map(|&v| param.apply(scenario, v)).collect::<Result<Vec<_>>>()?;
    let job = |i: usize| -> Result<Summary> { run(&scenarios[i], &out_dir.join(format!("{}-{i}", param.name()))) };
    let summaries = crate::hamflow::map_labels(scenarios.len(), job)?;
    let rows: Vec<SweepRow> = values
        .iter()
        .zip(&summaries)
        .map(|(&value, s)| SweepRow {
            value,
            passed: s.passed,
            metrics: s.metrics.clone(),
        })
        .collect();
    let names: Vec<String> = rows[0].metrics.keys().filter(|k| rows.iter().all(|r| r.metrics.contains_key(*k))).cloned().collect();
    let mut slopes = BTreeMap::new();
    let mut ratios = BTreeMap::new();
    for name in &names {
        let ys: Vec<f64> = rows.iter().map(|r| r.metrics[name]).collect();
        if rows.len() >= 2 && ys.iter().all(|y| *y > 0.0 && y.is_finite()) && values.iter().all(|v| *v > 0.0) {
            slopes.insert(name.clone(), loglog_slope(values, &ys));
            ratios.insert(name.clone(), ys.windows(2).map(|w| w[0] / w[1]).collect());
        }
    }
    let mut csv = format!("{},passed", param.name());
    for n in &names {
        csv.push(',');
        csv.push_str(n);
    }
    csv.push('\n');
    for r in &rows {
        csv.push_str(&num(r.value));
        csv.push_str(if r.passed { ",1" } else { ",0" });
        for n in &names {
            csv.push(',');
            csv.push_str(&num(r.metrics[n]));
        }
        csv.push('\n');
    }
    write_text(&out_dir.join("sweep.csv"), &csv)?;
    let out = SweepSummary {
        schema: SCHEMA_VERSION,
        scenario: scenario.name.clone(),
        parameter: param,
        passed: rows.iter().all(|r| r.passed),
        rows,
        slopes,
        ratios,
    };
    let mut text = serde_json::to_string_pretty(&out)?;
    text.push('\n');
    write_text(&out_dir.join("summary.json"), &text)?;
    Ok(out)
}

const BUILTINS: &[(&str, &str)] = &[
    ("convex-global", include_str!("../../builtins/convex-global.toml")),
    ("caustic-tanh", include_str!("../../builtins/caustic-tanh.toml")),
    ("varadhan-pre-caustic", include_str!("../../builtins/varadhan-pre-caustic.toml")),
    ("post-caustic-tanh", include_str!("../../builtins/post-caustic-tanh.toml")),
    ("reference-crosscheck", include_str!("../../builtins/reference-crosscheck.toml")),
    ("time-reversal-convex", include_str!("../../builtins/time-reversal-convex.toml")),
    ("merge-two-shocks", include_str!("../../builtins/merge-two-shocks.toml")),
    ("surgery-homogeneous", include_str!("../../builtins/surgery-homogeneous.toml")),
    ("surgery-inhomogeneous", include_str!("../../builtins/surgery-inhomogeneous.toml")),
    ("delta-oracles", include_str!("../../builtins/delta-oracles.toml")),
    ("rk4-order", include_str!("../../builtins/rk4-order.toml")),
];

/// Names and one-line descriptions of the built-in scenarios.
pub fn builtin_names() -> Vec<(&'static str, String)> {
    BUILTINS
        .iter()
        .map(|(name, text)| {
            let desc = Scenario::from_toml(text).map(|s| s.description).unwrap_or_default();
            (*name, desc)
        })
        .collect()
}

pub fn builtin_source(name: &str) -> Option<&'static str> {
    BUILTINS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn builtin(name: &str) -> Result<Scenario> {
    let text = builtin_source(name).ok_or_else(|| Error::Config(format!("no built-in scenario named '{name}'")))?;
    Scenario::from_toml(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse_and_match_their_names() {
        for (name, text) in BUILTINS {
            let sc = Scenario::from_toml(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(&sc.name, name);
            assert!(!sc.description.is_empty(), "{name} has no description");
        }
    }

    #[test]
    fn beta_sweep_rejects_scale_violation() {
        let sc = builtin("surgery-homogeneous").unwrap();
        assert!(SweepParam::Beta.apply(&sc, 0.2).is_ok());
        let err = SweepParam::Beta.apply(&sc, 0.05).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(SweepParam::Beta.apply(&builtin("caustic-tanh").unwrap(), 0.1).is_err());
    }
}
