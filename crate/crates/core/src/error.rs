use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value from {what} at x = {x}, p = {p}, t = {t}")]
    NonFinite {
        what: &'static str,
        x: f64,
        p: f64,
        t: f64,
    },

    #[error("trajectory with label {label} blew up at t = {t}")]
    BlowUp { label: f64, t: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("time {t} outside of fan span [{start}, {end}]")]
    TimeOutOfRange { t: f64, start: f64, end: f64 },

    #[error("x = {x} is not covered by any branch (nearest coverage gap [{gap_lo}, {gap_hi}])")]
    Uncovered { x: f64, gap_lo: f64, gap_hi: f64 },

    #[error("projection of the Lagrangian curve is not proper: {0}")]
    ImproperProjection(String),

    #[error("stratum degenerates: |p_left - p_right| = {0:e}")]
    DegenerateStratum(f64),

    #[error("trajectories do not enter the stratum: u_left = {u_left}, velocity = {velocity}, u_right = {u_right}")]
    NotEntering {
        u_left: f64,
        velocity: f64,
        u_right: f64,
    },

    #[error("stratum paths {0} and {1} do not intersect on the time grid")]
    NoIntersection(usize, usize),

    #[error("query x = {x} at t = {t} lies in the tube of stratum {stratum}")]
    OnStratum { x: f64, t: f64, stratum: usize },

    #[error("trajectories with labels {left} and {right} cross at t = {t}")]
    Crossing { left: f64, right: f64, t: f64 },

    #[error("negative radicand {value:e} at x = {x}")]
    NegativeRadicand { value: f64, x: f64 },

    #[error("root finding failed: {0}")]
    RootFinding(String),

    #[error("no fold found on the curve at t = {0}")]
    NoFold(f64),

    #[error("{count} folds found at t = {t}; only a single fold is supported")]
    MultipleFolds { count: usize, t: f64 },

    #[error("back-flowed segment refolds (t1 = {0})")]
    Refold(f64),

    #[error("Jacobian floor violated: fitted constant C = {0:e}")]
    FloorViolated(f64),

    #[error("finite-difference solve unstable at t = {t} (max grew by factor {factor:e})")]
    Unstable { t: f64, factor: f64 },

    #[error("non-positive value {value:e} at x = {x}, t = {t}")]
    NonPositive { value: f64, x: f64, t: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("Laplace method: {0}")]
    Laplace(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("scenario '{scenario}': {source}")]
    Scenario {
        scenario: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn finite(value: f64, what: &'static str, x: f64, p: f64, t: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { what, x, p, t })
    }
}
