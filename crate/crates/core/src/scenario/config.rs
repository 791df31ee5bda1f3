//! Scenario files.
//!
//! A scenario is one TOML document:
//!
//! ```toml
//! schema = 1
//! name = "caustic-tanh"
//! eps = [0.02, 0.01]            # positive, strictly descending; optional for some experiments
//!
//! [symbol]                      # H = A(x) p^2 + V(x) f(t) + lambda g(t) (e^{nu0 p} - 1)
//! kind = "quadratic"            # "quadratic" | "potential" | "jump"
//! diffusion = 1.0               # a number or a coefficient table
//! potential = { type = "sine", amplitude = 0.1, wavenumber = 1.0 }
//!
//! [initial]
//! phase = "tanh-minus"          # a built-in name or a phase table
//! density = { type = "constant", value = 1.0 }
//!
//! [grid]
//! labels = [-4.0, 4.0]
//! label_spacing = 0.01
//! t_end = 1.0
//! dt = 0.01
//!
//! [experiment]
//! kind = "characteristics"      # experiment-specific keys follow
//! ```
//!
//! Unknown keys are rejected so typos do not silently fall back to defaults.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::initial::{InitialDensity, InitialPhase};
use crate::symbol::{Coefficient, HamiltonianSymbol, TimeFactor};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub eps: Vec<f64>,
    #[serde(default)]
    pub symbol: SymbolSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    pub grid: GridSpec,
    pub experiment: Experiment,
    /// Output directory; the CLI may override it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SymbolFamily {
    #[default]
    Quadratic,
    Potential,
    Jump,
}

/// Coefficient given as a plain number or as a full table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoefficientSpec {
    Value(f64),
    Full(Coefficient),
}

impl CoefficientSpec {
    pub fn resolve(&self) -> Coefficient {
        match self {
            CoefficientSpec::Value(v) => Coefficient::constant(*v),
            CoefficientSpec::Full(c) => c.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymbolSpec {
    #[serde(default)]
    pub kind: SymbolFamily,
    #[serde(default = "one")]
    pub diffusion: CoefficientSpec,
    #[serde(default = "zero")]
    pub potential: CoefficientSpec,
    #[serde(default)]
    pub potential_time: Vec<f64>,
    #[serde(default)]
    pub rate: f64,
    #[serde(default)]
    pub rate_time: Vec<f64>,
    #[serde(default)]
    pub size: f64,
}

fn one() -> CoefficientSpec {
    CoefficientSpec::Value(1.0)
}

fn zero() -> CoefficientSpec {
    CoefficientSpec::Value(0.0)
}

impl Default for SymbolSpec {
    fn default() -> Self {
        SymbolSpec {
            kind: SymbolFamily::Quadratic,
            diffusion: one(),
            potential: zero(),
            potential_time: Vec::new(),
            rate: 0.0,
            rate_time: Vec::new(),
            size: 0.0,
        }
    }
}

impl SymbolSpec {
    pub fn build(&self) -> Result<HamiltonianSymbol> {
        let a = self.diffusion.resolve();
        let v = self.potential.resolve();
        let sym = match self.kind {
            SymbolFamily::Quadratic => {
                let Coefficient::Constant { value } = a else {
                    return Err(Error::Config("kind = \"quadratic\" takes a constant diffusion; use \"potential\"".into()));
                };
                if v != Coefficient::ZERO && v != Coefficient::constant(0.0) {
                    return Err(Error::Config("kind = \"quadratic\" has no potential; use \"potential\"".into()));
                }
                HamiltonianSymbol::quadratic(value)
            }
            SymbolFamily::Potential => HamiltonianSymbol::with_potential(a, v),
            SymbolFamily::Jump => HamiltonianSymbol::jump(a, v, self.rate, self.size),
        };
        let mut sym = sym.with_potential_time(TimeFactor(self.potential_time.clone()));
        if self.kind == SymbolFamily::Jump {
            sym = sym.with_jump_rate_time(TimeFactor(self.rate_time.clone()));
        } else if self.rate != 0.0 || self.size != 0.0 || !self.rate_time.is_empty() {
            return Err(Error::Config("jump rate and size need kind = \"jump\"".into()));
        }
        Ok(sym)
    }
}

/// Phase given as a built-in name ("tanh-plus", "tanh-minus") or a full table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhaseSpec {
    Named(String),
    Full(InitialPhase),
}

impl PhaseSpec {
    pub fn resolve(&self) -> Result<InitialPhase> {
        match self {
            PhaseSpec::Named(n) => InitialPhase::from_builtin(n)
                .ok_or_else(|| Error::Config(format!("unknown built-in phase '{n}' (expected tanh-plus or tanh-minus)"))),
            PhaseSpec::Full(p) => Ok(p.clone()),
        }
    }

    /// Short tag for metric and file names.
    pub fn tag(&self) -> String {
        match self {
            PhaseSpec::Named(n) => n.clone(),
            PhaseSpec::Full(p) => serde_json::to_value(p)
                .ok()
                .and_then(|v| v.get("type").and_then(|t| t.as_str()).map(str::to_owned))
                .unwrap_or_else(|| "phase".into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub phase: PhaseSpec,
    #[serde(default)]
    pub density: InitialDensity,
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec {
            phase: PhaseSpec::Named("tanh-plus".into()),
            density: InitialDensity::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub labels: [f64; 2],
    pub label_spacing: f64,
    #[serde(default)]
    pub t_start: f64,
    pub t_end: f64,
    pub dt: f64,
}

impl GridSpec {
    pub fn n_labels(&self) -> usize {
        ((self.labels[1] - self.labels[0]) / self.label_spacing).round() as usize + 1
    }

    pub fn labels(&self) -> Vec<f64> {
        crate::io::linspace(self.labels[0], self.labels[1], self.n_labels())
    }

    pub fn n_times(&self) -> usize {
        ((self.t_end - self.t_start) / self.dt).round() as usize + 1
    }

    pub fn times(&self) -> Vec<f64> {
        crate::io::linspace(self.t_start, self.t_end, self.n_times())
    }

    fn validate(&self) -> Result<()> {
        let [a, b] = self.labels;
        if !(a < b) || !(self.label_spacing > 0.0) || self.label_spacing > b - a {
            return Err(Error::Config(format!(
                "grid.labels = [{a}, {b}] with spacing {} is not a grid",
                self.label_spacing
            )));
        }
        if !(self.t_end > self.t_start) || !(self.dt > 0.0) || self.dt > self.t_end - self.t_start {
            return Err(Error::Config(format!(
                "time grid [{}, {}] with dt = {} is not a grid",
                self.t_start, self.t_end, self.dt
            )));
        }
        if self.n_labels() > 200_001 || self.n_times() > 1_000_001 {
            return Err(Error::Config("grid too large".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedCaustic {
    pub t: f64,
    pub label: f64,
    #[serde(default = "default_t_tol")]
    pub t_tol: f64,
    #[serde(default = "default_label_tol")]
    pub label_tol: f64,
}

fn default_t_tol() -> f64 {
    1e-3
}

fn default_label_tol() -> f64 {
    1e-2
}

/// Lead of the blend: fixed, or the smallest passing value on the ladder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ShiftSpec {
    Fixed(f64),
    Auto(String),
}

impl Default for ShiftSpec {
    fn default() -> Self {
        ShiftSpec::Auto("auto".into())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurgeryMode {
    /// Modified initial data on `(x0* - beta, x0* + beta)`; homogeneous symbols only.
    Insertion,
    /// Cut the fold of the curve at `t_cut` and flow back.
    Cut,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    /// Fan, Jacobian and caustic detection.
    Characteristics {
        #[serde(default)]
        expect_caustic: Option<ExpectedCaustic>,
        #[serde(default)]
        expect_no_caustic: bool,
        #[serde(default)]
        min_j_at_least: Option<f64>,
        #[serde(default = "default_caustic_tol")]
        caustic_tol: f64,
        /// Also report the endpoint error against a 16x finer RK4 step.
        #[serde(default)]
        richardson: bool,
    },
    /// `-eps ln u_fd` against the min-action phase.
    Varadhan {
        time: f64,
        window: [f64; 2],
        fd_domain: [f64; 2],
        #[serde(default = "default_cells")]
        cells_per_eps: f64,
        /// Phases to compare; empty means `initial.phase`.
        #[serde(default)]
        phases: Vec<PhaseSpec>,
        #[serde(default = "default_bound_factor")]
        bound_factor: f64,
        #[serde(default)]
        kink_exclusion: f64,
        /// Compare the kink with the max-curvature point of the FD phase at this eps.
        #[serde(default)]
        kink_eps: Option<f64>,
        #[serde(default = "default_kink_tol")]
        kink_tol: f64,
        /// Number of regular points for the leading-term ratio; zero disables it.
        #[serde(default)]
        leading_points: usize,
    },
    /// Heat-kernel convolution against the FD solver.
    ReferenceCrosscheck {
        time: f64,
        domain: [f64; 2],
        nx: usize,
        /// Gaussian data `exp(-x^2 / width2 / eps)`.
        width2: f64,
        #[serde(default = "default_rel_tol")]
        rel_tol: f64,
        #[serde(default = "default_mass_tol")]
        mass_tol: f64,
    },
    /// Laplace reconstruction of the initial amplitude from the phase at `time`.
    TimeReversal {
        time: f64,
        points: [f64; 2],
        n_points: usize,
        #[serde(default = "default_reversal_tol")]
        tol: f64,
        /// Phase whose check at `refuse_time` must be refused.
        #[serde(default)]
        refuse_phase: Option<PhaseSpec>,
        #[serde(default)]
        refuse_time: f64,
    },
    /// Kink strata, amplitudes and Kirchhoff merges.
    Merge {
        x_window: [f64; 2],
        nx: usize,
        #[serde(default = "default_tube")]
        tube_half_width: f64,
        #[serde(default = "default_merge_mass_tol")]
        mass_tol: f64,
    },
    /// Blended characteristics with the Jacobian floor.
    Surgery {
        mode: SurgeryMode,
        beta: f64,
        #[serde(default)]
        shift: ShiftSpec,
        #[serde(default)]
        x0_star: f64,
        #[serde(default)]
        t_cut: f64,
        /// Backflow time as a fraction of `t_cut`.
        #[serde(default = "default_backflow")]
        backflow: f64,
        /// Allowed spread of the fitted floor constant across eps.
        #[serde(default = "default_c_factor")]
        c_factor: f64,
    },
    /// Closed-form checks of the stratum speed, the amplitude ODE and the weak root.
    Oracles {
        #[serde(default = "default_samples")]
        samples: usize,
    },
}

fn default_caustic_tol() -> f64 {
    1e-8
}
fn default_cells() -> f64 {
    10.0
}
fn default_bound_factor() -> f64 {
    5.0
}
fn default_kink_tol() -> f64 {
    0.05
}
fn default_rel_tol() -> f64 {
    1e-3
}
fn default_mass_tol() -> f64 {
    1e-4
}
fn default_reversal_tol() -> f64 {
    0.1
}
fn default_tube() -> f64 {
    1e-2
}
fn default_merge_mass_tol() -> f64 {
    1e-3
}
fn default_backflow() -> f64 {
    0.5
}
fn default_c_factor() -> f64 {
    2.0
}
fn default_samples() -> usize {
    100
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Characteristics { .. } => "characteristics",
            Experiment::Varadhan { .. } => "varadhan",
            Experiment::ReferenceCrosscheck { .. } => "reference-crosscheck",
            Experiment::TimeReversal { .. } => "time-reversal",
            Experiment::Merge { .. } => "merge",
            Experiment::Surgery { .. } => "surgery",
            Experiment::Oracles { .. } => "oracles",
        }
    }
}

fn ordered(w: [f64; 2], what: &str) -> Result<()> {
    if w[0] < w[1] {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} = [{}, {}] must be increasing", w[0], w[1])))
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema {} is not supported (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("invalid scenario name '{}'", self.name)));
        }
        self.grid.validate()?;
        if self.eps.iter().any(|e| !(*e > 0.0)) || self.eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config(format!("eps list {:?} must be positive and strictly descending", self.eps)));
        }
        self.symbol.build()?;
        self.initial.phase.resolve()?;
        let needs_eps = matches!(
            self.experiment,
            Experiment::Varadhan { .. } | Experiment::ReferenceCrosscheck { .. } | Experiment::TimeReversal { .. } | Experiment::Surgery { .. } | Experiment::Oracles { .. }
        );
        if needs_eps && self.eps.is_empty() {
            return Err(Error::Config(format!("experiment '{}' needs a non-empty eps list", self.experiment.kind())));
        }
        match &self.experiment {
            Experiment::Characteristics { expect_caustic, expect_no_caustic, caustic_tol, .. } => {
                if expect_caustic.is_some() && *expect_no_caustic {
                    return Err(Error::Config("expect_caustic and expect_no_caustic are exclusive".into()));
                }
                if !(*caustic_tol > 0.0) {
                    return Err(Error::Config("caustic_tol must be positive".into()));
                }
            }
            Experiment::Varadhan { time, window, fd_domain, cells_per_eps, phases, kink_eps, .. } => {
                ordered(*window, "window")?;
                ordered(*fd_domain, "fd_domain")?;
                if !(fd_domain[0] <= window[0] && window[1] <= fd_domain[1]) {
                    return Err(Error::Config("window must lie inside fd_domain".into()));
                }
                if !(*time > self.grid.t_start && *time <= self.grid.t_end) {
                    return Err(Error::Config(format!("time {time} outside the time grid")));
                }
                if !(*cells_per_eps >= 1.0) {
                    return Err(Error::Config("cells_per_eps must be at least 1".into()));
                }
                for p in phases {
                    p.resolve()?;
                }
                if let Some(k) = kink_eps {
                    if !self.eps.iter().any(|e| (e - k).abs() <= 1e-15) {
                        return Err(Error::Config(format!("kink_eps = {k} is not in the eps list")));
                    }
                }
            }
            Experiment::ReferenceCrosscheck { time, domain, nx, width2, .. } => {
                ordered(*domain, "domain")?;
                if !(*time > 0.0) || *nx < 3 || !(*width2 > 0.0) {
                    return Err(Error::Config("reference crosscheck needs time > 0, nx >= 3, width2 > 0".into()));
                }
            }
            Experiment::TimeReversal { time, points, n_points, refuse_phase, .. } => {
                ordered(*points, "points")?;
                if !(*time >= 0.0) || *n_points == 0 {
                    return Err(Error::Config("time reversal needs time >= 0 and n_points > 0".into()));
                }
                if let Some(p) = refuse_phase {
                    p.resolve()?;
                }
            }
            Experiment::Merge { x_window, nx, .. } => {
                ordered(*x_window, "x_window")?;
                if *nx < 3 {
                    return Err(Error::Config("merge needs nx >= 3".into()));
                }
            }
            Experiment::Surgery { mode, beta, shift, t_cut, backflow, .. } => {
                if !(*beta > 0.0) {
                    return Err(Error::Config(format!("beta = {beta} must be positive")));
                }
                if let Some(e) = self.eps.iter().find(|e| **e > beta / 10.0) {
                    return Err(Error::Config(format!("eps = {e} violates eps <= beta / 10 with beta = {beta}")));
                }
                match shift {
                    ShiftSpec::Fixed(a) if !a.is_finite() => return Err(Error::Config("shift must be finite".into())),
                    ShiftSpec::Auto(s) if s != "auto" => {
                        return Err(Error::Config(format!("shift must be a number or \"auto\", got '{s}'")))
                    }
                    _ => {}
                }
                if *mode == SurgeryMode::Cut && !(*t_cut > self.grid.t_start && *t_cut < self.grid.t_end) {
                    return Err(Error::Config(format!("t_cut = {t_cut} must lie inside the time grid")));
                }
                if !(*backflow > 0.0 && *backflow <= 1.0) {
                    return Err(Error::Config("backflow must be in (0, 1]".into()));
                }
            }
            Experiment::Oracles { samples } => {
                if *samples == 0 {
                    return Err(Error::Config("samples must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema = 1
name = "t"
[grid]
labels = [-1.0, 1.0]
label_spacing = 0.5
t_end = 1.0
dt = 0.25
[experiment]
kind = "characteristics"
"#;

    #[test]
    fn minimal_config_round_trips() {
        let sc = Scenario::from_toml(MINIMAL).unwrap();
        assert_eq!(sc.grid.labels(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(sc.grid.n_times(), 5);
        let again = Scenario::from_toml(&sc.to_toml().unwrap()).unwrap();
        assert_eq!(sc, again);
    }

    #[test]
    fn rejects_bad_input() {
        let bad = [
            MINIMAL.replace("schema = 1", "schema = 2"),
            MINIMAL.replace("label_spacing = 0.5", "label_spacing = -0.5"),
            MINIMAL.replace("name = \"t\"", "name = \"t\"\neps = [0.01, 0.02]"),
            MINIMAL.replace("name = \"t\"", "name = \"t\"\ntypo = 3"),
            MINIMAL.replace("[grid]", "[initial]\nphase = \"tanh-sideways\"\n[grid]"),
        ];
        for text in &bad {
            assert!(matches!(Scenario::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn surgery_enforces_scale_separation() {
        let text = MINIMAL.replace("name = \"t\"", "name = \"t\"\neps = [0.02]").replace(
            "kind = \"characteristics\"",
            "kind = \"surgery\"\nmode = \"insertion\"\nbeta = 0.1",
        );
        let err = Scenario::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("beta / 10"), "{err}");
        assert!(Scenario::from_toml(&text.replace("0.02", "0.01")).is_ok());
    }

    #[test]
    fn symbol_tables() {
        let spec: SymbolSpec = toml::from_str(
            "kind = \"potential\"\npotential = { type = \"sine\", amplitude = 0.1, wavenumber = 1.0 }",
        )
        .unwrap();
        let sym = spec.build().unwrap();
        assert!((sym.eval(0.5, 2.0, 0.0).unwrap() - (4.0 + 0.1 * 0.5f64.sin())).abs() < 1e-14);
        let spec: SymbolSpec = toml::from_str("kind = \"quadratic\"\nrate = 1.0").unwrap();
        assert!(spec.build().is_err());
    }
}
