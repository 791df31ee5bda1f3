//! Real tunnel symbols `H(x, p, t)` of Kolmogorov–Feller type operators.
//!
//! The built-in symbol has the sum structure
//!
//! ```text
//! H(x, p, t) = A(x) p^2 + V(x) v(t) + lambda(t) (exp(nu0 p) - 1)
//! ```
//!
//! where the jump term is the single-atom jump measure `lambda * delta_{nu0}` taken at
//! real momentum. With `xi = -eps d/dx` the operator `exp(nu0 xi)` is the shift
//! `u(x) -> u(x - eps nu0)`, so that `P(x, -eps d/dx) exp(-S/eps) = (H(x, S_x) + O(eps)) exp(-S/eps)`.
//! The reference solvers use the same orientation.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{finite, Result};

/// Smooth scalar coefficient of `x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Coefficient {
    Constant { value: f64 },
    /// `c0 + c1 x + c2 x^2 + ...`
    Polynomial { coeffs: Vec<f64> },
    /// `offset + amplitude * sin(wavenumber * x + phase)`
    Sine {
        amplitude: f64,
        wavenumber: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
    },
}

impl Coefficient {
    pub const ZERO: Coefficient = Coefficient::Constant { value: 0.0 };

    pub fn constant(value: f64) -> Self {
        Coefficient::Constant { value }
    }

    pub fn sine(amplitude: f64, wavenumber: f64) -> Self {
        Coefficient::Sine {
            amplitude,
            wavenumber,
            phase: 0.0,
            offset: 0.0,
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.derivative(x, 0)
    }

    /// `order`-th derivative in `x`.
    pub fn derivative(&self, x: f64, order: u32) -> f64 {
        match self {
            Coefficient::Constant { value } => {
                if order == 0 {
                    *value
                } else {
                    0.0
                }
            }
            Coefficient::Polynomial { coeffs } => poly_derivative(coeffs, x, order),
            Coefficient::Sine {
                amplitude,
                wavenumber,
                phase,
                offset,
            } => {
                let arg = wavenumber * x + phase;
                let k = wavenumber.powi(order as i32);
                let base = match order % 4 {
                    0 => arg.sin(),
                    1 => arg.cos(),
                    2 => -arg.sin(),
                    _ => -arg.cos(),
                };
                let shift = if order == 0 { *offset } else { 0.0 };
                shift + amplitude * k * base
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Coefficient::Constant { .. } => true,
            Coefficient::Polynomial { coeffs } => coeffs.iter().skip(1).all(|c| *c == 0.0),
            Coefficient::Sine { amplitude, .. } => *amplitude == 0.0,
        }
    }
}

/// Polynomial time factor `f(t) = c0 + c1 t + ...`; the empty polynomial means `1`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimeFactor(pub Vec<f64>);

impl TimeFactor {
    pub fn value(&self, t: f64) -> f64 {
        if self.0.is_empty() {
            1.0
        } else {
            poly_derivative(&self.0, t, 0)
        }
    }

    pub fn is_constant(&self) -> bool {
        self.0.iter().skip(1).all(|c| *c == 0.0)
    }
}

fn poly_derivative(coeffs: &[f64], x: f64, order: u32) -> f64 {
    let order = order as usize;
    let mut acc = 0.0;
    for (k, c) in coeffs.iter().enumerate().skip(order).rev() {
        let mut fall = 1.0;
        for j in 0..order {
            fall *= (k - j) as f64;
        }
        acc = acc * x + c * fall;
    }
    // Horner above accumulates in powers of x^(k - order).
    acc
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SymbolKind {
    Quadratic,
    QuadraticPotential,
    Jump,
    Custom,
}

pub type CustomFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Evaluatable Hamiltonian `H(x, p, t)`. Immutable once built.
#[derive(Clone)]
pub struct HamiltonianSymbol {
    kind: SymbolKind,
    diffusion: Coefficient,
    potential: Coefficient,
    potential_time: TimeFactor,
    jump_rate: f64,
    jump_rate_time: TimeFactor,
    jump_size: f64,
    custom: Option<CustomFn>,
    custom_time_dependent: bool,
}

impl fmt::Debug for HamiltonianSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HamiltonianSymbol")
            .field("kind", &self.kind)
            .field("diffusion", &self.diffusion)
            .field("potential", &self.potential)
            .field("potential_time", &self.potential_time)
            .field("jump_rate", &self.jump_rate)
            .field("jump_rate_time", &self.jump_rate_time)
            .field("jump_size", &self.jump_size)
            .finish_non_exhaustive()
    }
}

/// The three summands of a built-in symbol.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct SymbolParts {
    pub diffusion: f64,
    pub potential: f64,
    pub jump: f64,
}

impl SymbolParts {
    pub fn total(&self) -> f64 {
        self.diffusion + self.potential + self.jump
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct ConvexityReport {
    pub min_hess: f64,
    pub at_x: f64,
    pub at_p: f64,
    pub certified: bool,
}

/// Sampled `hess_pp` must exceed this to certify convexity; finite-difference
/// noise on degenerate symbols stays below it.
pub const CONVEXITY_TOL: f64 = 1e-6;

impl HamiltonianSymbol {
    /// `H = a p^2`.
    pub fn quadratic(a: f64) -> Self {
        Self::builtin(
            SymbolKind::Quadratic,
            Coefficient::constant(a),
            Coefficient::ZERO,
            0.0,
            0.0,
        )
    }

    /// `H = A(x) p^2 + V(x)`.
    pub fn with_potential(diffusion: Coefficient, potential: Coefficient) -> Self {
        Self::builtin(
            SymbolKind::QuadraticPotential,
            diffusion,
            potential,
            0.0,
            0.0,
        )
    }

    /// `H = A(x) p^2 + V(x) + lambda (exp(nu0 p) - 1)`.
    pub fn jump(diffusion: Coefficient, potential: Coefficient, rate: f64, size: f64) -> Self {
        Self::builtin(SymbolKind::Jump, diffusion, potential, rate, size)
    }

    /// Arbitrary callable `H(x, p, t)`; derivatives by central differences.
    pub fn custom<F>(h: F, time_dependent: bool) -> Self
    where
        F: Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    {
        let mut sym = Self::builtin(
            SymbolKind::Custom,
            Coefficient::ZERO,
            Coefficient::ZERO,
            0.0,
            0.0,
        );
        sym.custom = Some(Arc::new(h));
        sym.custom_time_dependent = time_dependent;
        sym
    }

    fn builtin(
        kind: SymbolKind,
        diffusion: Coefficient,
        potential: Coefficient,
        jump_rate: f64,
        jump_size: f64,
    ) -> Self {
        HamiltonianSymbol {
            kind,
            diffusion,
            potential,
            potential_time: TimeFactor::default(),
            jump_rate,
            jump_rate_time: TimeFactor::default(),
            jump_size,
            custom: None,
            custom_time_dependent: false,
        }
    }

    /// Multiplies the potential by a polynomial factor in `t`.
    pub fn with_potential_time(mut self, factor: TimeFactor) -> Self {
        self.potential_time = factor;
        self
    }

    /// Multiplies the jump rate by a polynomial factor in `t`.
    pub fn with_jump_rate_time(mut self, factor: TimeFactor) -> Self {
        self.jump_rate_time = factor;
        self
    }

    pub fn kind(&self) -> SymbolKind {
        self.kind
    }

    pub fn diffusion(&self) -> &Coefficient {
        &self.diffusion
    }

    pub fn potential(&self) -> &Coefficient {
        &self.potential
    }

    pub fn jump_rate(&self, t: f64) -> f64 {
        self.jump_rate * self.jump_rate_time.value(t)
    }

    pub fn jump_size(&self) -> f64 {
        self.jump_size
    }

    pub fn potential_value(&self, x: f64, t: f64) -> f64 {
        self.potential.value(x) * self.potential_time.value(t)
    }

    pub fn is_time_dependent(&self) -> bool {
        match self.kind {
            SymbolKind::Custom => self.custom_time_dependent,
            _ => {
                let pot = !self.potential_time.is_constant()
                    && !(self.potential.is_constant() && self.potential.value(0.0) == 0.0);
                let jump = self.jump_rate != 0.0 && !self.jump_rate_time.is_constant();
                pot || jump
            }
        }
    }

    /// True when `H` does not depend on `x` (spatially homogeneous case).
    pub fn is_homogeneous(&self) -> bool {
        match self.kind {
            SymbolKind::Custom => false,
            _ => self.diffusion.is_constant() && self.potential.is_constant(),
        }
    }

    /// True for the plain heat symbol `H = p^2`.
    pub fn is_unit_heat(&self) -> bool {
        self.kind != SymbolKind::Custom
            && self.diffusion == Coefficient::constant(1.0)
            && self.potential.is_constant()
            && self.potential.value(0.0) == 0.0
            && self.jump_rate == 0.0
    }

    pub fn parts(&self, x: f64, p: f64, t: f64) -> SymbolParts {
        let lambda = self.jump_rate(t);
        let jump = if lambda == 0.0 {
            0.0
        } else {
            lambda * (self.jump_size * p).exp_m1()
        };
        SymbolParts {
            diffusion: self.diffusion.value(x) * p * p,
            potential: self.potential_value(x, t),
            jump,
        }
    }

    pub fn eval(&self, x: f64, p: f64, t: f64) -> Result<f64> {
        let v = match &self.custom {
            Some(h) => h(x, p, t),
            None => self.parts(x, p, t).total(),
        };
        finite(v, "eval", x, p, t)
    }

    pub fn grad_p(&self, x: f64, p: f64, t: f64) -> Result<f64> {
        let v = match &self.custom {
            Some(h) => {
                let hp = fd_step(p);
                (h(x, p + hp, t) - h(x, p - hp, t)) / (2.0 * hp)
            }
            None => {
                2.0 * self.diffusion.value(x) * p
                    + self.jump_rate(t) * self.jump_size * (self.jump_size * p).exp()
            }
        };
        finite(v, "grad_p", x, p, t)
    }

    pub fn grad_x(&self, x: f64, p: f64, t: f64) -> Result<f64> {
        let v = match &self.custom {
            Some(h) => {
                let hx = fd_step(x);
                (h(x + hx, p, t) - h(x - hx, p, t)) / (2.0 * hx)
            }
            None => {
                self.diffusion.derivative(x, 1) * p * p
                    + self.potential.derivative(x, 1) * self.potential_time.value(t)
            }
        };
        finite(v, "grad_x", x, p, t)
    }

    pub fn hess_pp(&self, x: f64, p: f64, t: f64) -> Result<f64> {
        let v = match &self.custom {
            Some(h) => {
                let hp = fd_step(p);
                (h(x, p + hp, t) - 2.0 * h(x, p, t) + h(x, p - hp, t)) / (hp * hp)
            }
            None => {
                let nu = self.jump_size;
                2.0 * self.diffusion.value(x) + self.jump_rate(t) * nu * nu * (nu * p).exp()
            }
        };
        finite(v, "hess_pp", x, p, t)
    }

    pub fn cross_xp(&self, x: f64, p: f64, t: f64) -> Result<f64> {
        let v = match &self.custom {
            Some(h) => {
                let hx = fd_step(x);
                let hp = fd_step(p);
                (h(x + hx, p + hp, t) - h(x + hx, p - hp, t) - h(x - hx, p + hp, t)
                    + h(x - hx, p - hp, t))
                    / (4.0 * hx * hp)
            }
            None => 2.0 * self.diffusion.derivative(x, 1) * p,
        };
        finite(v, "cross_xp", x, p, t)
    }

    pub fn hess_xx(&self, x: f64, p: f64, t: f64) -> Result<f64> {
        let v = match &self.custom {
            Some(h) => {
                let hx = fd_step(x);
                (h(x + hx, p, t) - 2.0 * h(x, p, t) + h(x - hx, p, t)) / (hx * hx)
            }
            None => {
                self.diffusion.derivative(x, 2) * p * p
                    + self.potential.derivative(x, 2) * self.potential_time.value(t)
            }
        };
        finite(v, "hess_xx", x, p, t)
    }

    /// Samples `hess_pp` on an `n_samples x n_samples` grid at `t = 0`.
    pub fn check_convexity(
        &self,
        x_window: (f64, f64),
        p_window: (f64, f64),
        n_samples: usize,
    ) -> Result<ConvexityReport> {
        self.check_convexity_at(x_window, p_window, n_samples, 0.0)
    }

    pub fn check_convexity_at(
        &self,
        x_window: (f64, f64),
        p_window: (f64, f64),
        n_samples: usize,
        t: f64,
    ) -> Result<ConvexityReport> {
        if n_samples < 2 || !(x_window.1 >= x_window.0) || !(p_window.1 > p_window.0) {
            return Err(crate::Error::InvalidInput(format!(
                "convexity check needs n_samples >= 2 and ordered windows, got n = {n_samples}, x {x_window:?}, p {p_window:?}"
            )));
        }
        let mut report = ConvexityReport {
            min_hess: f64::INFINITY,
            at_x: x_window.0,
            at_p: p_window.0,
            certified: false,
        };
        let step = |w: (f64, f64), i: usize| w.0 + (w.1 - w.0) * i as f64 / (n_samples - 1) as f64;
        for i in 0..n_samples {
            let x = step(x_window, i);
            for j in 0..n_samples {
                let p = step(p_window, j);
                let h = self.hess_pp(x, p, t)?;
                if h < report.min_hess {
                    report.min_hess = h;
                    report.at_x = x;
                    report.at_p = p;
                }
            }
        }
        report.certified = report.min_hess > CONVEXITY_TOL;
        Ok(report)
    }
}

/// Central-difference step `1e-4 (1 + |z|)`.
pub fn fd_step(z: f64) -> f64 {
    1e-4 * (1.0 + z.abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn jump(lambda: f64, nu: f64) -> HamiltonianSymbol {
        HamiltonianSymbol::jump(Coefficient::constant(1.0), Coefficient::ZERO, lambda, nu)
    }

    #[test]
    fn quadratic_values() {
        let h = HamiltonianSymbol::quadratic(1.0);
        assert_eq!(h.eval(0.3, 2.0, 0.0).unwrap(), 4.0);
        assert_eq!(h.grad_p(0.3, 3.0, 0.0).unwrap(), 6.0);
        assert_eq!(h.cross_xp(-1.7, 2.5, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn jump_values() {
        assert_eq!(jump(1.0, 1.0).eval(0.0, 0.0, 0.0).unwrap(), 0.0);
        let v = jump(2.0, 0.5).eval(0.0, 1.0, 0.0).unwrap();
        let oracle = 1.0 + 2.0 * (0.5f64.exp() - 1.0);
        assert!((v - oracle).abs() < 1e-14);
        assert!((v - 2.29744).abs() < 1e-5);
        // 2A + lambda nu^2 exp(nu p) at p = 0
        assert!((jump(1.0, 1.0).hess_pp(0.4, 0.0, 0.0).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn overflow_is_reported() {
        let err = jump(1.0, 10.0).eval(0.0, 100.0, 0.0).unwrap_err();
        assert!(matches!(err, crate::Error::NonFinite { what: "eval", .. }));
    }

    #[test]
    fn convexity_reports() {
        let q = HamiltonianSymbol::quadratic(1.0)
            .check_convexity((-3.0, 3.0), (-4.0, 4.0), 9)
            .unwrap();
        assert!(q.certified);
        assert_eq!(q.min_hess, 2.0);

        let quartic = HamiltonianSymbol::custom(|_, p, _| p.powi(4), false);
        let r = quartic.check_convexity((0.0, 1.0), (-1.0, 1.0), 11).unwrap();
        assert!(!r.certified);
        assert!(r.at_p.abs() < 1e-12);

        let j = jump(1.0, 1.0)
            .check_convexity((-1.0, 1.0), (-5.0, 5.0), 21)
            .unwrap();
        assert!(j.certified);
        assert!((j.min_hess - (2.0 + (-5.0f64).exp())).abs() < 1e-14);
        assert_eq!(j.at_p, -5.0);
    }

    #[test]
    fn convexity_rejects_degenerate_windows() {
        let h = HamiltonianSymbol::quadratic(1.0);
        assert!(h.check_convexity((0.0, 1.0), (1.0, 1.0), 5).is_err());
        assert!(h.check_convexity((0.0, 1.0), (0.0, 1.0), 1).is_err());
    }

    #[test]
    fn sum_structure() {
        let sym = HamiltonianSymbol::jump(
            Coefficient::Polynomial {
                coeffs: vec![1.0, 0.2, 0.1],
            },
            Coefficient::sine(0.3, 2.0),
            0.7,
            -0.4,
        );
        for &(x, p) in &[(0.1, 0.5), (-1.3, 2.0), (2.2, -1.1)] {
            let diff = HamiltonianSymbol::with_potential(sym.diffusion().clone(), Coefficient::ZERO)
                .eval(x, p, 0.0)
                .unwrap();
            let pot = sym.potential().value(x);
            let jmp = 0.7 * ((-0.4 * p).exp() - 1.0);
            assert!((sym.eval(x, p, 0.0).unwrap() - (diff + pot + jmp)).abs() < 1e-13);
        }
    }

    #[test]
    fn polynomial_derivatives() {
        let c = Coefficient::Polynomial {
            coeffs: vec![1.0, 2.0, 3.0, 4.0],
        };
        let x = 0.7;
        assert!((c.value(x) - (1.0 + 2.0 * x + 3.0 * x * x + 4.0 * x * x * x)).abs() < 1e-14);
        assert!((c.derivative(x, 1) - (2.0 + 6.0 * x + 12.0 * x * x)).abs() < 1e-13);
        assert!((c.derivative(x, 2) - (6.0 + 24.0 * x)).abs() < 1e-13);
        assert_eq!(c.derivative(x, 4), 0.0);
    }

    #[test]
    fn time_dependence_flags() {
        let h = HamiltonianSymbol::with_potential(Coefficient::constant(1.0), Coefficient::sine(0.1, 1.0));
        assert!(!h.is_time_dependent());
        assert!(!h.is_homogeneous());
        let h = h.with_potential_time(TimeFactor(vec![1.0, 0.5]));
        assert!(h.is_time_dependent());
        assert!((h.eval(0.5, 0.0, 2.0).unwrap() - 0.1 * 0.5f64.sin() * 2.0).abs() < 1e-15);
        assert!(HamiltonianSymbol::quadratic(1.0).is_homogeneous());
        assert!(HamiltonianSymbol::quadratic(1.0).is_unit_heat());
    }

    mod fd_agreement {
        use super::*;
        use proptest::prelude::*;

        fn relative(a: f64, b: f64) -> f64 {
            (a - b).abs() / (1.0 + a.abs().max(b.abs()))
        }

        proptest! {
            #[test]
            fn builtin_derivatives_match_finite_differences(
                x in -2.0f64..2.0, p in -2.0f64..2.0, t in 0.0f64..1.0
            ) {
                let sym = HamiltonianSymbol::jump(
                    Coefficient::Polynomial { coeffs: vec![1.0, 0.1, 0.05] },
                    Coefficient::sine(0.3, 1.5),
                    0.8,
                    0.6,
                )
                .with_jump_rate_time(TimeFactor(vec![1.0, 0.2]));
                let f = sym.clone();
                let fd = HamiltonianSymbol::custom(move |x, p, t| f.eval(x, p, t).unwrap(), true);
                prop_assert!(relative(sym.grad_p(x, p, t).unwrap(), fd.grad_p(x, p, t).unwrap()) < 1e-6);
                prop_assert!(relative(sym.grad_x(x, p, t).unwrap(), fd.grad_x(x, p, t).unwrap()) < 1e-6);
                prop_assert!(relative(sym.hess_pp(x, p, t).unwrap(), fd.hess_pp(x, p, t).unwrap()) < 1e-6);
                prop_assert!(relative(sym.cross_xp(x, p, t).unwrap(), fd.cross_xp(x, p, t).unwrap()) < 1e-6);
                prop_assert!(relative(sym.hess_xx(x, p, t).unwrap(), fd.hess_xx(x, p, t).unwrap()) < 1e-6);
            }
        }
    }
}
