//! Global-in-time tunnel asymptotics for parabolic and Kolmogorov–Feller type equations.
//!
//! The pipeline evolves a Lagrangian curve under the Hamiltonian flow of a real
//! tunnel symbol, decomposes it into single-valued branches, selects the
//! minimal-action (essential) branch to obtain the global phase, and transports
//! densities with generalized delta-shock continuity solutions. Reference
//! solvers check the result through the Varadhan limit `-eps ln u_eps`.

pub mod continuity;
pub mod error;
pub mod hamflow;
pub mod initial;
pub mod io;
pub mod manifold;
pub mod reference;
pub mod scenario;
pub mod surgery;
pub mod symbol;

pub use error::{Error, Result};
pub use hamflow::{evolve_fan, CausticEvent, FanState, IntegratorOptions, TrajectoryFan};
pub use initial::{InitialDensity, InitialPhase};
pub use symbol::{Coefficient, HamiltonianSymbol};
