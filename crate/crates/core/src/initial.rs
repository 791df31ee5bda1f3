//! Initial manifolds `p = S0'(x0)` and initial densities.

use serde::{Deserialize, Serialize};

/// `ln cosh x` without overflow.
pub fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

pub fn sech2(x: f64) -> f64 {
    let c = 1.0 / x.cosh();
    c * c
}

/// Initial phase `S0`; every variant is normalized to `S0(0) = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum InitialPhase {
    /// `S0 = x + ln cosh x`, the globally smooth example.
    TanhPlus,
    /// `S0 = x - ln cosh x`, focusing at `x0 = 0`.
    TanhMinus,
    /// `S0 = curvature * x^2 / 2`.
    Quadratic { curvature: f64 },
    /// `S0 = sum c_k x^k`.
    Polynomial { coeffs: Vec<f64> },
    /// Two focusing steps: `S0' = slope - tanh(x + d) - tanh(x - d)`.
    TwoStep { slope: f64, separation: f64 },
}

impl InitialPhase {
    pub fn action(&self, x: f64) -> f64 {
        match self {
            InitialPhase::TanhPlus => x + ln_cosh(x),
            InitialPhase::TanhMinus => x - ln_cosh(x),
            InitialPhase::Quadratic { curvature } => 0.5 * curvature * x * x,
            InitialPhase::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c),
            InitialPhase::TwoStep { slope, separation: d } => {
                slope * x - ln_cosh(x + d) - ln_cosh(x - d) + 2.0 * ln_cosh(*d)
            }
        }
    }

    pub fn momentum(&self, x: f64) -> f64 {
        match self {
            InitialPhase::TanhPlus => 1.0 + x.tanh(),
            InitialPhase::TanhMinus => 1.0 - x.tanh(),
            InitialPhase::Quadratic { curvature } => curvature * x,
            InitialPhase::Polynomial { coeffs } => coeffs
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, c)| acc * x + k as f64 * c),
            InitialPhase::TwoStep { slope, separation: d } => slope - (x + d).tanh() - (x - d).tanh(),
        }
    }

    /// `S0''`.
    pub fn momentum_slope(&self, x: f64) -> f64 {
        match self {
            InitialPhase::TanhPlus => sech2(x),
            InitialPhase::TanhMinus => -sech2(x),
            InitialPhase::Quadratic { curvature } => *curvature,
            InitialPhase::Polynomial { coeffs } => coeffs
                .iter()
                .enumerate()
                .skip(2)
                .rev()
                .fold(0.0, |acc, (k, c)| acc * x + (k * (k - 1)) as f64 * c),
            InitialPhase::TwoStep { separation: d, .. } => -sech2(x + d) - sech2(x - d),
        }
    }

    pub fn from_builtin(name: &str) -> Option<Self> {
        match name {
            "tanh-plus" => Some(InitialPhase::TanhPlus),
            "tanh-minus" => Some(InitialPhase::TanhMinus),
            _ => None,
        }
    }
}

/// Initial density `rho0(x0)`; also used as the amplitude `phi0` of Cauchy data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum InitialDensity {
    Constant { value: f64 },
    Gaussian { center: f64, width: f64, mass: f64 },
    /// `mass / half_width * cos^2(pi (x - center) / (2 half_width))` on its support; unit-normalized shape.
    Bump { center: f64, half_width: f64, mass: f64 },
}

impl Default for InitialDensity {
    fn default() -> Self {
        InitialDensity::Constant { value: 1.0 }
    }
}

impl InitialDensity {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            InitialDensity::Constant { value } => value,
            InitialDensity::Gaussian { center, width, mass } => {
                let z = (x - center) / width;
                mass * (-0.5 * z * z).exp() / (width * (2.0 * std::f64::consts::PI).sqrt())
            }
            InitialDensity::Bump {
                center,
                half_width,
                mass,
            } => {
                let z = (x - center) / half_width;
                if z.abs() >= 1.0 {
                    0.0
                } else {
                    let c = (0.5 * std::f64::consts::PI * z).cos();
                    mass * c * c / half_width
                }
            }
        }
    }

    /// Total mass when finite.
    pub fn mass(&self) -> Option<f64> {
        match *self {
            InitialDensity::Constant { value } => (value == 0.0).then_some(0.0),
            InitialDensity::Gaussian { mass, .. } | InitialDensity::Bump { mass, .. } => Some(mass),
        }
    }

    /// Support interval when compact.
    pub fn support(&self) -> Option<(f64, f64)> {
        match *self {
            InitialDensity::Bump {
                center, half_width, ..
            } => Some((center - half_width, center + half_width)),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-5;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn ln_cosh_large_arguments() {
        assert!((ln_cosh(800.0) - (800.0 - std::f64::consts::LN_2)).abs() < 1e-12);
        assert!((ln_cosh(0.3) - 0.3f64.cosh().ln()).abs() < 1e-15);
        assert_eq!(ln_cosh(0.0), 0.0);
    }

    #[test]
    fn derivatives_are_consistent() {
        let phases = [
            InitialPhase::TanhPlus,
            InitialPhase::TanhMinus,
            InitialPhase::Quadratic { curvature: -1.0 },
            InitialPhase::Polynomial {
                coeffs: vec![0.0, 1.0, -0.5, 0.25],
            },
            InitialPhase::TwoStep {
                slope: 0.0,
                separation: 1.5,
            },
        ];
        for ph in &phases {
            assert!(ph.action(0.0).abs() < 1e-15, "{ph:?}");
            for &x in &[-2.0, -0.3, 0.0, 0.7, 1.9] {
                assert!((fd(|y| ph.action(y), x) - ph.momentum(x)).abs() < 1e-8, "{ph:?}");
                assert!((fd(|y| ph.momentum(y), x) - ph.momentum_slope(x)).abs() < 1e-8, "{ph:?}");
            }
        }
    }

    #[test]
    fn bump_mass() {
        let d = InitialDensity::Bump {
            center: 0.5,
            half_width: 2.0,
            mass: 3.0,
        };
        let n = 4000;
        let h = 4.0 / n as f64;
        let m: f64 = (0..=n).map(|i| d.value(-1.5 + i as f64 * h) * h).sum();
        assert!((m - 3.0).abs() < 1e-9);
        assert_eq!(d.value(2.6), 0.0);
    }
}
