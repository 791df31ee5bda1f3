//! Ground-truth solvers for `u_t = (1/eps) P(x, -eps d/dx) u` and asymptotic checks.
//!
//! The jump part of the symbol acts as `lambda (u(x - eps nu0) - u(x))`, which is the
//! sign for which `P e^{-S/eps} = (H(x, S_x) + O(eps)) e^{-S/eps}`.

use std::f64::consts::PI;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamflow::{
    detect_caustic, evolve_fan, initial_states, integrate_segment, map_labels, HamiltonianFlow, DEFAULT_CAUSTIC_TOL,
};
use crate::initial::InitialPhase;
use crate::io::{linspace, num, simpson};
use crate::symbol::{HamiltonianSymbol, SymbolKind};

/// Relative mass change above which a convolution is flagged as leaking.
pub const LEAK_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
enum Storage {
    Values(Vec<f64>),
    Log(Vec<f64>),
}

/// `u(x, t)` on a uniform grid, stored either directly or as `ln u`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    xs: Vec<f64>,
    ts: Vec<f64>,
    eps: f64,
    data: Storage,
    leak: f64,
}

impl GridField {
    pub fn from_values(xs: Vec<f64>, ts: Vec<f64>, eps: f64, values: Vec<Vec<f64>>) -> Result<Self> {
        Self::build(xs, ts, eps, values, false)
    }

    pub fn from_log(xs: Vec<f64>, ts: Vec<f64>, eps: f64, log_u: Vec<Vec<f64>>) -> Result<Self> {
        Self::build(xs, ts, eps, log_u, true)
    }

    fn build(xs: Vec<f64>, ts: Vec<f64>, eps: f64, rows: Vec<Vec<f64>>, log: bool) -> Result<Self> {
        if rows.len() != ts.len() || rows.iter().any(|r| r.len() != xs.len()) {
            return Err(Error::InvalidInput("grid field rows do not match the grids".into()));
        }
        let flat = rows.concat();
        Ok(GridField {
            xs,
            ts,
            eps,
            data: if log { Storage::Log(flat) } else { Storage::Values(flat) },
            leak: 0.0,
        })
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ts(&self) -> &[f64] {
        &self.ts
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    fn row(&self, k: usize) -> &[f64] {
        let n = self.xs.len();
        match &self.data {
            Storage::Values(v) | Storage::Log(v) => &v[k * n..(k + 1) * n],
        }
    }

    pub fn values(&self, k: usize) -> Vec<f64> {
        match self.data {
            Storage::Values(_) => self.row(k).to_vec(),
            Storage::Log(_) => self.row(k).iter().map(|l| l.exp()).collect(),
        }
    }

    /// `ln u`; NaN where `u < 0`.
    pub fn log_u(&self, k: usize) -> Vec<f64> {
        match self.data {
            Storage::Values(_) => self.row(k).iter().map(|u| u.ln()).collect(),
            Storage::Log(_) => self.row(k).to_vec(),
        }
    }

    /// Relative mass change recorded by the producing convolution.
    pub fn leak(&self) -> f64 {
        self.leak
    }

    pub fn leak_flag(&self) -> bool {
        self.leak > LEAK_TOL
    }

    /// Trapezoid mass of time slice `k`.
    pub fn mass(&self, k: usize) -> f64 {
        let u = self.values(k);
        let h = self.xs[1] - self.xs[0];
        h * (u.iter().sum::<f64>() - 0.5 * (u[0] + u[u.len() - 1]))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x,u")?;
        for (k, &t) in self.ts.iter().enumerate() {
            for (x, u) in self.xs.iter().zip(self.values(k)) {
                writeln!(w, "{},{},{}", num(t), num(*x), num(u))?;
            }
        }
        Ok(())
    }

    pub fn write_phase_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let phase = varadhan_extract(self)?;
        writeln!(w, "t,x,minus_eps_log_u")?;
        for (k, &t) in self.ts.iter().enumerate() {
            for (x, s) in self.xs.iter().zip(&phase[k]) {
                writeln!(w, "{},{},{}", num(t), num(*x), num(*s))?;
            }
        }
        Ok(())
    }
}

fn grid_step(xs: &[f64]) -> Result<f64> {
    if xs.len() < 3 {
        return Err(Error::InvalidInput("grid needs at least three points".into()));
    }
    let h = (xs[xs.len() - 1] - xs[0]) / (xs.len() - 1) as f64;
    if !(h > 0.0) || xs.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1.0)) {
        return Err(Error::InvalidInput("grid must be uniform and increasing".into()));
    }
    Ok(h)
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + terms.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Log of the trapezoid integral of `e^{log_u}`.
fn log_mass(log_u: &[f64], h: f64) -> f64 {
    let n = log_u.len();
    let w = |j: usize| if j == 0 || j == n - 1 { 0.5 * h } else { h };
    log_sum_exp((0..n).map(move |j| w(j).ln() + log_u[j]))
}

/// Convolves `e^{log_u0}` with the heat kernel `(4 pi eps t)^{-1/2} e^{-(x - y)^2 / (4 eps t)}`.
///
/// Works in the log domain, so data like `e^{-S/eps}` with small `eps` do not underflow.
pub fn heat_kernel_convolve(xs: &[f64], log_u0: &[f64], t: f64, eps: f64) -> Result<GridField> {
    let h = grid_step(xs)?;
    if log_u0.len() != xs.len() {
        return Err(Error::InvalidInput("initial data does not match the grid".into()));
    }
    if !(t >= 0.0) || !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("need t >= 0 and eps > 0, got t = {t}, eps = {eps}")));
    }
    let n = xs.len();
    let log_u = if t == 0.0 {
        log_u0.to_vec()
    } else {
        let d = 4.0 * eps * t;
        let norm = -0.5 * (PI * d).ln();
        map_labels(n, |i| {
            let x = xs[i];
            let terms = (0..n).map(|j| {
                let w = if j == 0 || j == n - 1 { 0.5 * h } else { h };
                w.ln() + log_u0[j] - (x - xs[j]).powi(2) / d
            });
            Ok(norm + log_sum_exp(terms))
        })?
    };
    let leak = (log_mass(&log_u, h) - log_mass(log_u0, h)).exp_m1().abs();
    let mut field = GridField::from_log(xs.to_vec(), vec![t], eps, vec![log_u])?;
    field.leak = leak;
    Ok(field)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FdScheme {
    /// Crank-Nicolson on `u` with frozen boundary values.
    Linear,
    /// Crank-Nicolson on `ln u` (Hopf-Cole form) with linearly extrapolated ends.
    LogDomain,
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct FdOptions {
    pub scheme: FdScheme,
    /// Time step; default `h / 4` (linear) or `h / 8` (log domain).
    pub dt: Option<f64>,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            scheme: FdScheme::Linear,
            dt: None,
        }
    }
}

impl FdOptions {
    pub fn log_domain() -> Self {
        FdOptions {
            scheme: FdScheme::LogDomain,
            dt: None,
        }
    }
}

/// Linear interpolation of `v` at `x`, extrapolating linearly past the ends.
fn interp_uniform(v: &[f64], x0: f64, h: f64, x: f64) -> f64 {
    let n = v.len();
    let s = (x - x0) / h;
    let i = (s.floor() as isize).clamp(0, n as isize - 2) as usize;
    let w = s - i as f64;
    v[i] + w * (v[i + 1] - v[i])
}

struct Operator<'a> {
    sym: &'a HamiltonianSymbol,
    xs: &'a [f64],
    h: f64,
    eps: f64,
    /// `eps A(x_i) / h^2`.
    diff: Vec<f64>,
    scheme: FdScheme,
}

impl<'a> Operator<'a> {
    fn new(sym: &'a HamiltonianSymbol, xs: &'a [f64], eps: f64, scheme: FdScheme) -> Result<Self> {
        if sym.kind() == SymbolKind::Custom {
            return Err(Error::Precondition(
                "finite-difference reference needs a built-in symbol".into(),
            ));
        }
        let h = grid_step(xs)?;
        let diff = xs.iter().map(|&x| eps * sym.diffusion().value(x) / (h * h)).collect();
        Ok(Operator {
            sym,
            xs,
            h,
            eps,
            diff,
            scheme,
        })
    }

    /// Diagonal part that is treated implicitly besides diffusion.
    fn diagonal(&self, i: usize, t: f64) -> f64 {
        match self.scheme {
            FdScheme::Linear => self.sym.potential_value(self.xs[i], t) / self.eps,
            FdScheme::LogDomain => 0.0,
        }
    }

    fn implicit_apply(&self, y: &[f64], t: f64, out: &mut [f64]) {
        let n = y.len();
        // the far field follows the local reaction only
        out[0] = self.diagonal(0, t) * y[0];
        out[n - 1] = self.diagonal(n - 1, t) * y[n - 1];
        for i in 1..n - 1 {
            out[i] = self.diff[i] * (y[i - 1] - 2.0 * y[i] + y[i + 1]) + self.diagonal(i, t) * y[i];
        }
    }

    fn explicit(&self, y: &[f64], t: f64, out: &mut [f64]) {
        let n = y.len();
        let lambda = self.sym.jump_rate(t);
        let shift = self.eps * self.sym.jump_size();
        let x0 = self.xs[0];
        match self.scheme {
            FdScheme::Linear => {
                out[0] = 0.0;
                out[n - 1] = 0.0;
                for i in 1..n - 1 {
                    out[i] = if lambda == 0.0 {
                        0.0
                    } else {
                        let shifted = interp_uniform(y, x0, self.h, self.xs[i] - shift);
                        lambda / self.eps * (shifted - y[i])
                    };
                }
            }
            FdScheme::LogDomain => {
                for i in 0..n {
                    let lx = if i == 0 {
                        (y[1] - y[0]) / self.h
                    } else if i == n - 1 {
                        (y[n - 1] - y[n - 2]) / self.h
                    } else {
                        (y[i + 1] - y[i - 1]) / (2.0 * self.h)
                    };
                    let a = self.diff[i] * self.h * self.h;
                    let mut r = a * lx * lx + self.sym.potential_value(self.xs[i], t) / self.eps;
                    if lambda != 0.0 {
                        let shifted = interp_uniform(y, x0, self.h, self.xs[i] - shift);
                        r += lambda / self.eps * (shifted - y[i]).exp_m1();
                    }
                    out[i] = r;
                }
            }
        }
    }

    /// Solves `(I - dt/2 M) z = rhs` for the tridiagonal implicit part `M`.
    fn solve(&self, rhs: &[f64], dt: f64, t: f64, z: &mut [f64]) {
        let n = rhs.len();
        let mut c_prime = vec![0.0; n];
        let mut d_prime = vec![0.0; n];
        // boundary rows carry no diffusion
        c_prime[0] = 0.0;
        d_prime[0] = rhs[0] / (1.0 - 0.5 * dt * self.diagonal(0, t));
        for i in 1..n {
            let (a, b, c) = if i == n - 1 {
                (0.0, 1.0 - 0.5 * dt * self.diagonal(i, t), 0.0)
            } else {
                let k = 0.5 * dt * self.diff[i];
                (-k, 1.0 + 2.0 * k - 0.5 * dt * self.diagonal(i, t), -k)
            };
            let m = b - a * c_prime[i - 1];
            c_prime[i] = c / m;
            d_prime[i] = (rhs[i] - a * d_prime[i - 1]) / m;
        }
        z[n - 1] = d_prime[n - 1];
        for i in (0..n - 1).rev() {
            z[i] = d_prime[i] - c_prime[i] * z[i + 1];
        }
    }

    /// One Crank-Nicolson step with the explicit part corrected by Heun's rule.
    fn step(&self, y: &[f64], t: f64, dt: f64) -> Vec<f64> {
        let n = y.len();
        let tm = t + 0.5 * dt;
        let mut my = vec![0.0; n];
        self.implicit_apply(y, tm, &mut my);
        let mut n0 = vec![0.0; n];
        self.explicit(y, t, &mut n0);
        let base: Vec<f64> = (0..n).map(|i| y[i] + 0.5 * dt * my[i]).collect();

        let mut rhs: Vec<f64> = (0..n).map(|i| base[i] + dt * n0[i]).collect();
        let mut pred = vec![0.0; n];
        self.solve(&rhs, dt, tm, &mut pred);
        if self.scheme == FdScheme::LogDomain {
            // boundary rows carry only the explicit part
            pred[0] = y[0] + dt * n0[0];
            pred[n - 1] = y[n - 1] + dt * n0[n - 1];
        }
        let mut n1 = vec![0.0; n];
        self.explicit(&pred, t + dt, &mut n1);
        for i in 0..n {
            rhs[i] = base[i] + 0.5 * dt * (n0[i] + n1[i]);
        }
        let mut out = vec![0.0; n];
        self.solve(&rhs, dt, tm, &mut out);
        out
    }
}

/// Finite-difference solution of `u_t = (1/eps) P(x, -eps d/dx) u` from `exp(log_u0)`.
///
/// Values are recorded at every time of `tgrid`, starting with the initial data.
pub fn fd_parabolic_solve(
    sym: &HamiltonianSymbol,
    xs: &[f64],
    log_u0: &[f64],
    eps: f64,
    tgrid: &[f64],
    opts: FdOptions,
) -> Result<GridField> {
    crate::hamflow::check_tgrid(tgrid)?;
    if log_u0.len() != xs.len() {
        return Err(Error::InvalidInput("initial data does not match the grid".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("eps must be positive, got {eps}")));
    }
    let op = Operator::new(sym, xs, eps, opts.scheme)?;
    let dt_max = opts.dt.unwrap_or(match opts.scheme {
        FdScheme::Linear => op.h / 4.0,
        FdScheme::LogDomain => op.h / 8.0,
    });
    if !(dt_max > 0.0) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {dt_max}")));
    }

    let mut y: Vec<f64> = match opts.scheme {
        FdScheme::Linear => log_u0.iter().map(|l| l.exp()).collect(),
        FdScheme::LogDomain => log_u0.to_vec(),
    };
    let mut rows = vec![y.clone()];
    for w in tgrid.windows(2) {
        let steps = ((w[1] - w[0]) / dt_max).ceil().max(1.0) as usize;
        let dt = (w[1] - w[0]) / steps as f64;
        for s in 0..steps {
            let t = w[0] + s as f64 * dt;
            let next = op.step(&y, t, dt);
            let old_max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let new_max = next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let factor = match opts.scheme {
                FdScheme::Linear => new_max / old_max,
                FdScheme::LogDomain => (new_max - old_max).exp(),
            };
            if next.iter().any(|v| !v.is_finite()) || factor > 10.0 {
                return Err(Error::Unstable { t: t + dt, factor });
            }
            y = next;
        }
        rows.push(y.clone());
    }
    match opts.scheme {
        FdScheme::Linear => GridField::from_values(xs.to_vec(), tgrid.to_vec(), eps, rows),
        FdScheme::LogDomain => GridField::from_log(xs.to_vec(), tgrid.to_vec(), eps, rows),
    }
}

/// `(1/eps) (P u) / u` for `u = exp(log_u)`, evaluated with the log-domain stencils.
///
/// Interior points only are meaningful; `eps` times this tends to `H(x, -eps (ln u)_x)`.
pub fn log_generator(sym: &HamiltonianSymbol, xs: &[f64], log_u: &[f64], eps: f64, t: f64) -> Result<Vec<f64>> {
    let op = Operator::new(sym, xs, eps, FdScheme::LogDomain)?;
    let n = xs.len();
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    op.implicit_apply(log_u, t, &mut a);
    op.explicit(log_u, t, &mut b);
    Ok(a.iter().zip(&b).map(|(a, b)| a + b).collect())
}

/// `-eps ln u` for every time slice.
pub fn varadhan_extract(field: &GridField) -> Result<Vec<Vec<f64>>> {
    let eps = field.eps;
    (0..field.ts.len())
        .map(|k| {
            let log_u = field.log_u(k);
            log_u
                .iter()
                .enumerate()
                .map(|(i, &l)| {
                    if l.is_finite() {
                        Ok(-eps * l)
                    } else {
                        Err(Error::NonPositive {
                            value: field.values(k)[i],
                            x: field.xs[i],
                            t: field.ts[k],
                        })
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct LaplaceReport {
    pub xi_star: f64,
    pub s_star: f64,
    /// `S''(xi*)`.
    pub s2: f64,
    /// Leading-order value divided by `e^{-S(xi*)/eps}`.
    pub formula_scaled: f64,
    /// Numerical quadrature divided by `e^{-S(xi*)/eps}`.
    pub quadrature_scaled: f64,
}

impl LaplaceReport {
    pub fn formula(&self, eps: f64) -> f64 {
        self.formula_scaled * (-self.s_star / eps).exp()
    }

    pub fn quadrature(&self, eps: f64) -> f64 {
        self.quadrature_scaled * (-self.s_star / eps).exp()
    }

    /// quadrature / formula; NaN when the amplitude vanishes at the minimum.
    pub fn ratio(&self) -> f64 {
        self.quadrature_scaled / self.formula_scaled
    }
}

fn golden_min(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-14 * (1.0 + a.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Laplace-method value of `int phi e^{-S/eps}` over `window`, plus the quadrature it approximates.
pub fn laplace_quadrature(
    s: &dyn Fn(f64) -> f64,
    phi: &dyn Fn(f64) -> f64,
    window: (f64, f64),
    eps: f64,
) -> Result<LaplaceReport> {
    let (a, b) = window;
    if !(b > a) || !(eps > 0.0) {
        return Err(Error::InvalidInput("need a nonempty window and eps > 0".into()));
    }
    let scan = linspace(a, b, 2001);
    let (imin, _) = scan
        .iter()
        .map(|&x| s(x))
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    if imin == 0 || imin == scan.len() - 1 {
        return Err(Error::Laplace(format!("minimum sits on the window boundary x = {}", scan[imin])));
    }
    let xi = golden_min(s, scan[imin - 1], scan[imin + 1]);
    let hs = 1e-3 * (1.0 + xi.abs());
    let s_star = s(xi);
    let s2 = (s(xi + hs) - 2.0 * s_star + s(xi - hs)) / (hs * hs);
    // a minimum too flat for the window to hold its Gaussian core is degenerate
    if !(s2 > 1e-10) || (eps / s2).sqrt() > 0.25 * (b - a) {
        return Err(Error::Laplace(format!("degenerate minimum, S'' = {s2:e}")));
    }
    let formula_scaled = phi(xi) * (2.0 * PI * eps / s2).sqrt();

    let width = (eps / s2).sqrt();
    let n = (((b - a) / (width / 40.0)).ceil() as usize).clamp(2001, 4_000_001) | 1;
    let h = (b - a) / (n - 1) as f64;
    let vals: Vec<f64> = (0..n)
        .map(|i| {
            let x = a + i as f64 * h;
            let e = -(s(x) - s_star) / eps;
            if e < -745.0 {
                0.0
            } else {
                phi(x) * e.exp()
            }
        })
        .collect();
    Ok(LaplaceReport {
        xi_star: xi,
        s_star,
        s2,
        formula_scaled,
        quadrature_scaled: simpson(&vals, h),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReversalPoint {
    pub x: f64,
    /// Stationary point of the backward integrand, the image of `x` under the flow.
    pub xi_star: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReversalReport {
    pub t: f64,
    pub eps: f64,
    pub points: Vec<ReversalPoint>,
    pub max_residual: f64,
}

/// Forward solution `(S^, p^, J, Q)` at time `t` reached from the unique label landing on `xi`.
struct Shooter<'a> {
    flow: HamiltonianFlow<'a>,
    phase: &'a InitialPhase,
    t: f64,
    max_step: f64,
}

impl Shooter<'_> {
    fn forward(&self, label: f64) -> Result<[f64; 5]> {
        let y0 = initial_states(&[label], self.phase)[0].to_array();
        integrate_segment(&self.flow, 0, label, y0, 0.0, self.t, self.max_step)
    }

    fn landing(&self, xi: f64, guess: f64) -> Result<(f64, [f64; 5])> {
        let mut label = guess;
        for _ in 0..60 {
            let y = self.forward(label)?;
            let miss = y[0] - xi;
            if miss.abs() < 1e-13 * (1.0 + xi.abs()) {
                return Ok((label, y));
            }
            if !(y[3] > 0.0) {
                return Err(Error::RootFinding(format!("Jacobian {} at label {label}", y[3])));
            }
            label -= miss / y[3];
        }
        Err(Error::RootFinding(format!("no label lands on xi = {xi}")))
    }
}

/// Reconstructs `u(x, 0)` from the forward WKB solution at `t` through the backward heat kernel.
///
/// The integral is evaluated by the Laplace method including its first correction, so the
/// weighted residual `e^{S0/eps} |recon - e^{-S0/eps} phi0|` measures the `O(eps)` remainder of
/// the leading-order ansatz. Only the heat symbol before any caustic is accepted.
pub fn time_reversal_check(
    sym: &HamiltonianSymbol,
    phase: &InitialPhase,
    phi0: &(dyn Fn(f64) -> f64 + Sync),
    t: f64,
    eps: f64,
    xs: &[f64],
) -> Result<ReversalReport> {
    if !sym.is_unit_heat() {
        return Err(Error::Precondition("time reversal needs the heat symbol H = p^2".into()));
    }
    if !(t >= 0.0) || !(eps > 0.0) || xs.is_empty() {
        return Err(Error::InvalidInput("need t >= 0, eps > 0 and sample points".into()));
    }
    if t == 0.0 {
        let points = xs.iter().map(|&x| ReversalPoint { x, xi_star: x, residual: 0.0 }).collect();
        return Ok(ReversalReport { t, eps, points, max_residual: 0.0 });
    }
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min) - 4.0;
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 4.0;
    let fan = evolve_fan(sym, linspace(lo, hi, 801), phase, linspace(0.0, t, 21), Default::default())?;
    let events = detect_caustic(&HamiltonianFlow::new(sym), &fan, DEFAULT_CAUSTIC_TOL)?;
    if let Some(e) = events.first() {
        return Err(Error::Precondition(format!(
            "caustic at t = {:.6} (label {:.6}) precedes t = {t}; the solution is not smooth",
            e.t_star, e.label_star
        )));
    }

    let shooter = Shooter {
        flow: HamiltonianFlow::new(sym),
        phase,
        t,
        max_step: t / 2000.0,
    };
    let points = map_labels(xs.len(), |i| {
        let x = xs[i];
        let y = shooter.forward(x)?;
        let xi = y[0];
        let h = 1e-3 * (1.0 + xi.abs());
        // q = dp^/dxi = Q / J and g = phi^ = phi0(label) / sqrt(J) at xi - h, xi, xi + h
        let mut q = [0.0; 3];
        let mut g = [0.0; 3];
        let mut guess = x;
        for (k, d) in [-h, 0.0, h].into_iter().enumerate() {
            let (label, z) = if d == 0.0 { (x, y) } else { shooter.landing(xi + d, guess)? };
            guess = label;
            q[k] = z[4] / z[3];
            g[k] = phi0(label) / z[3].sqrt();
        }
        // F(xi) = S^(xi) - (x - xi)^2 / (4t); F(xi*) = S0(x) along the characteristic
        let f0 = y[2] - (x - xi).powi(2) / (4.0 * t);
        let f2 = q[1] - 1.0 / (2.0 * t);
        let f3 = (q[2] - q[0]) / (2.0 * h);
        let f4 = (q[2] - 2.0 * q[1] + q[0]) / (h * h);
        let g1 = (g[2] - g[0]) / (2.0 * h);
        let g2 = (g[2] - 2.0 * g[1] + g[0]) / (h * h);
        let corr = g2 / (2.0 * f2) - g1 * f3 / (2.0 * f2 * f2) - g[1] * f4 / (8.0 * f2 * f2)
            + 5.0 * g[1] * f3 * f3 / (24.0 * f2.powi(3));
        // the imaginary factors of the backward kernel and the Gaussian integral cancel
        let pref = (2.0 * PI * eps / f2.abs()).sqrt() / (4.0 * PI * eps * t).sqrt();
        let weight = ((phase.action(x) - f0) / eps).exp();
        let recon = weight * pref * (g[1] + eps * corr);
        Ok(ReversalPoint {
            x,
            xi_star: xi,
            residual: (recon - phi0(x)).abs(),
        })
    })?;
    let max_residual = points.iter().map(|p| p.residual).fold(0.0, f64::max);
    Ok(ReversalReport { t, eps, points, max_residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbol::Coefficient;

    fn gaussian_log(xs: &[f64], var: f64) -> Vec<f64> {
        xs.iter().map(|x| -x * x / (2.0 * var) - 0.5 * (2.0 * PI * var).ln()).collect()
    }

    #[test]
    fn narrow_gaussian_spreads_by_two_eps_t() {
        let xs = linspace(-4.0, 4.0, 1601);
        let (eps, t, var) = (0.05, 0.5, 0.01);
        let out = heat_kernel_convolve(&xs, &gaussian_log(&xs, var), t, eps).unwrap();
        let want = gaussian_log(&xs, var + 2.0 * eps * t);
        let got = out.values(0);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w.exp()).abs() < 1e-8);
        }
        assert!(!out.leak_flag());
        assert!((out.mass(0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_time_is_identity() {
        let xs = linspace(-2.0, 2.0, 101);
        let u0 = gaussian_log(&xs, 0.3);
        assert_eq!(heat_kernel_convolve(&xs, &u0, 0.0, 0.1).unwrap().log_u(0), u0);
    }

    #[test]
    fn truncated_data_raises_leak_flag() {
        let xs = linspace(-1.0, 1.0, 201);
        let out = heat_kernel_convolve(&xs, &vec![0.0; 201], 0.5, 0.1).unwrap();
        assert!(out.leak_flag());
    }

    #[test]
    fn varadhan_inverts_exponential() {
        let xs = linspace(-1.0, 1.0, 11);
        let eps = 0.01;
        let s: Vec<f64> = xs.iter().map(|x| x * x + 0.3).collect();
        let f = GridField::from_log(xs.clone(), vec![0.0], eps, vec![s.iter().map(|v| -v / eps).collect()]).unwrap();
        let back = varadhan_extract(&f).unwrap();
        for (a, b) in back[0].iter().zip(&s) {
            assert!((a - b).abs() < 1e-15);
        }
        let bad = GridField::from_values(xs, vec![0.0], eps, vec![vec![1.0; 10].into_iter().chain([0.0]).collect()]).unwrap();
        assert!(matches!(varadhan_extract(&bad), Err(Error::NonPositive { .. })));
    }

    #[test]
    fn constant_negative_potential_damps_uniformly() {
        let xs = linspace(-1.0, 1.0, 201);
        let (eps, v) = (0.1, -0.5);
        let sym = HamiltonianSymbol::with_potential(Coefficient::constant(1.0), Coefficient::constant(v));
        let ts = vec![0.0, 0.5];
        for scheme in [FdScheme::Linear, FdScheme::LogDomain] {
            let opts = FdOptions { scheme, dt: Some(1e-4) };
            let f = fd_parabolic_solve(&sym, &xs, &vec![0.0; xs.len()], eps, &ts, opts).unwrap();
            let want = (v * 0.5 / eps).exp();
            for u in &f.values(1) {
                assert!((u / want - 1.0).abs() < 1e-6, "{opts:?}: {u} vs {want}");
            }
        }
    }

    #[test]
    fn zero_rate_jump_is_plain_diffusion() {
        let xs = linspace(-3.0, 3.0, 301);
        let u0 = gaussian_log(&xs, 0.1);
        let ts = vec![0.0, 0.2];
        let plain = fd_parabolic_solve(&HamiltonianSymbol::quadratic(1.0), &xs, &u0, 0.05, &ts, FdOptions::default()).unwrap();
        let jump = HamiltonianSymbol::jump(Coefficient::constant(1.0), Coefficient::ZERO, 0.0, 1.0);
        let other = fd_parabolic_solve(&jump, &xs, &u0, 0.05, &ts, FdOptions::default()).unwrap();
        assert_eq!(plain, other);
    }

    #[test]
    fn generator_of_wkb_exponential_is_symbol() {
        let sym = HamiltonianSymbol::jump(Coefficient::constant(0.7), Coefficient::sine(0.2, 1.0), 0.5, 0.8);
        let s = |x: f64| 0.5 * x * x + 0.2 * x;
        let mut errs = Vec::new();
        for eps in [0.02, 0.01, 0.005] {
            let xs = linspace(-1.0, 1.0, 4001);
            let log_u: Vec<f64> = xs.iter().map(|&x| -s(x) / eps).collect();
            let g = log_generator(&sym, &xs, &log_u, eps, 0.0).unwrap();
            let mut worst: f64 = 0.0;
            for i in (400..3600).step_by(50) {
                let x = xs[i];
                let h = sym.eval(x, x + 0.2, 0.0).unwrap();
                worst = worst.max((eps * g[i] - h).abs());
            }
            errs.push(worst);
        }
        // first order in eps
        assert!(errs[0] < 0.1 && errs[1] < 0.55 * errs[0] && errs[2] < 0.55 * errs[1], "{errs:?}");
    }

    #[test]
    fn gaussian_laplace_matches_quadrature() {
        let eps = 1e-2;
        let r = laplace_quadrature(&|x| x * x, &|_| 1.0, (-2.0, 2.0), eps).unwrap();
        assert!((r.formula(eps) - (PI * eps).sqrt()).abs() < 1e-9);
        assert!((r.ratio() - 1.0).abs() < 1e-3);
        let z = laplace_quadrature(&|x| x * x, &|_| 0.0, (-2.0, 2.0), eps).unwrap();
        assert_eq!(z.formula(eps), 0.0);
        assert_eq!(z.quadrature(eps), 0.0);
    }

    #[test]
    fn laplace_rejects_boundary_and_flat_minima() {
        assert!(matches!(
            laplace_quadrature(&|x| x, &|_| 1.0, (0.0, 1.0), 0.01),
            Err(Error::Laplace(_))
        ));
        assert!(matches!(
            laplace_quadrature(&|x| x.powi(4), &|_| 1.0, (-1.0, 1.0), 0.01),
            Err(Error::Laplace(_))
        ));
    }

    #[test]
    fn quadratic_data_reverse_exactly() {
        // backward heat flow of the Gaussian ansatz is exact
        let sym = HamiltonianSymbol::quadratic(1.0);
        let phase = InitialPhase::Quadratic { curvature: 0.7 };
        let r = time_reversal_check(&sym, &phase, &|_| 1.0, 0.5, 0.01, &[-0.5, 0.0, 0.4]).unwrap();
        assert!(r.max_residual < 1e-6, "{r:?}");
    }

    #[test]
    fn polynomial_amplitude_picks_up_backward_correction() {
        // S0 = 0, phi0 = x^2: the ansatz at t is x^2, whose backward flow is x^2 - 2 eps t
        let sym = HamiltonianSymbol::quadratic(1.0);
        let phase = InitialPhase::Polynomial { coeffs: vec![0.0] };
        let (t, eps) = (0.5, 0.01);
        let r = time_reversal_check(&sym, &phase, &|x| x * x, t, eps, &[-1.0, 0.3, 2.0]).unwrap();
        for p in &r.points {
            assert!((p.residual - 2.0 * eps * t).abs() < 1e-6, "{p:?}");
        }
    }
}
