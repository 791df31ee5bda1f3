//! Fans of Hamiltonian trajectories with action and variational Jacobian.
//!
//! Each trajectory carries the state `[x, p, S, J, Q]` with `J = dx/dx0` and
//! `Q = dp/dx0`, integrated by fixed-step classical RK4 so that runs are
//! bit-reproducible.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::initial::InitialPhase;
use crate::io::num;
use crate::symbol::HamiltonianSymbol;

pub type State = [f64; 5];

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FanState {
    pub x: f64,
    pub p: f64,
    pub s: f64,
    pub j: f64,
    pub dpdx0: f64,
}

impl FanState {
    pub fn to_array(self) -> State {
        [self.x, self.p, self.s, self.j, self.dpdx0]
    }

    pub fn from_array(y: State) -> Self {
        FanState {
            x: y[0],
            p: y[1],
            s: y[2],
            j: y[3],
            dpdx0: y[4],
        }
    }
}

/// Right-hand side of the extended phase-space system for one labelled trajectory.
pub trait PhaseFlow: Sync {
    fn rhs(&self, label: usize, t: f64, y: &State) -> Result<State>;
}

/// Plain Hamiltonian characteristics.
pub struct HamiltonianFlow<'a> {
    pub sym: &'a HamiltonianSymbol,
}

impl<'a> HamiltonianFlow<'a> {
    pub fn new(sym: &'a HamiltonianSymbol) -> Self {
        HamiltonianFlow { sym }
    }
}

/// Hamiltonian vector field plus action and variational equations at `(x, p)`.
pub fn hamiltonian_rhs(sym: &HamiltonianSymbol, t: f64, y: &State) -> Result<State> {
    let [x, p, _, j, q] = *y;
    let h = sym.eval(x, p, t)?;
    let hp = sym.grad_p(x, p, t)?;
    let hx = sym.grad_x(x, p, t)?;
    let hpp = sym.hess_pp(x, p, t)?;
    let hxp = sym.cross_xp(x, p, t)?;
    let hxx = sym.hess_xx(x, p, t)?;
    Ok([
        hp,
        -hx,
        p * hp - h,
        hxp * j + hpp * q,
        -hxx * j - hxp * q,
    ])
}

impl PhaseFlow for HamiltonianFlow<'_> {
    fn rhs(&self, _label: usize, t: f64, y: &State) -> Result<State> {
        hamiltonian_rhs(self.sym, t, y)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorOptions {
    /// Largest RK4 substep; `None` means `1e-3` of the horizon.
    pub max_step: Option<f64>,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions { max_step: None }
    }
}

impl IntegratorOptions {
    pub fn with_max_step(h: f64) -> Self {
        IntegratorOptions { max_step: Some(h) }
    }

    pub fn step_for(&self, tgrid: &[f64]) -> f64 {
        let horizon = tgrid.last().copied().unwrap_or(0.0) - tgrid.first().copied().unwrap_or(0.0);
        self.max_step.unwrap_or(1e-3 * horizon.abs().max(f64::MIN_POSITIVE))
    }
}

fn axpy(y: &State, a: f64, k: &State) -> State {
    let mut out = *y;
    for i in 0..5 {
        out[i] += a * k[i];
    }
    out
}

fn rk4_step<F: PhaseFlow + ?Sized>(flow: &F, label: usize, t: f64, y: &State, h: f64) -> Result<State> {
    let k1 = flow.rhs(label, t, y)?;
    let k2 = flow.rhs(label, t + 0.5 * h, &axpy(y, 0.5 * h, &k1))?;
    let k3 = flow.rhs(label, t + 0.5 * h, &axpy(y, 0.5 * h, &k2))?;
    let k4 = flow.rhs(label, t + h, &axpy(y, h, &k3))?;
    let mut out = *y;
    for i in 0..5 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(out)
}

/// Integrates one trajectory from `t0` to `t1` (either direction) in equal substeps no larger than `max_step`.
pub fn integrate_segment<F: PhaseFlow + ?Sized>(
    flow: &F,
    label: usize,
    label_value: f64,
    y0: State,
    t0: f64,
    t1: f64,
    max_step: f64,
) -> Result<State> {
    let span = t1 - t0;
    if span == 0.0 {
        return Ok(y0);
    }
    let n = (span.abs() / max_step).ceil().max(1.0) as usize;
    let h = span / n as f64;
    let mut y = y0;
    for k in 0..n {
        let t = t0 + k as f64 * h;
        y = rk4_step(flow, label, t, &y, h).map_err(|_| Error::BlowUp {
            label: label_value,
            t,
        })?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                label: label_value,
                t: t + h,
            });
        }
    }
    Ok(y)
}

/// Integrates one trajectory over the whole grid.
pub fn integrate_trajectory<F: PhaseFlow + ?Sized>(
    flow: &F,
    label: usize,
    label_value: f64,
    y0: State,
    tgrid: &[f64],
    max_step: f64,
) -> Result<Vec<State>> {
    let mut out = Vec::with_capacity(tgrid.len());
    let mut y = y0;
    out.push(y);
    for w in tgrid.windows(2) {
        y = integrate_segment(flow, label, label_value, y, w[0], w[1], max_step)?;
        out.push(y);
    }
    Ok(out)
}

/// Trajectories indexed by label and time; immutable once built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFan {
    labels: Vec<f64>,
    tgrid: Vec<f64>,
    /// `states[k * labels.len() + i]` is label `i` at time `tgrid[k]`.
    states: Vec<FanState>,
    max_step: f64,
}

pub fn check_labels(labels: &[f64]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::InvalidInput("empty label set".into()));
    }
    if labels.iter().any(|l| !l.is_finite()) || labels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("labels must be finite and strictly increasing".into()));
    }
    Ok(())
}

pub fn check_tgrid(tgrid: &[f64]) -> Result<()> {
    if tgrid.len() < 2 || tgrid.iter().any(|t| !t.is_finite()) || tgrid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput(
            "time grid needs at least two finite strictly increasing times".into(),
        ));
    }
    Ok(())
}

#[cfg(feature = "parallel")]
pub(crate) fn map_labels<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_labels<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..n).map(f).collect()
}

impl TrajectoryFan {
    /// Integrates `flow` from the given initial states on `tgrid`.
    pub fn integrate<F: PhaseFlow + ?Sized>(
        flow: &F,
        labels: Vec<f64>,
        initial: &[FanState],
        tgrid: Vec<f64>,
        opts: IntegratorOptions,
    ) -> Result<Self> {
        check_labels(&labels)?;
        check_tgrid(&tgrid)?;
        if initial.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} initial states for {} labels",
                initial.len(),
                labels.len()
            )));
        }
        if initial.iter().any(|s| s.to_array().iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidInput("non-finite initial state".into()));
        }
        let max_step = opts.step_for(&tgrid);
        if !(max_step > 0.0) {
            return Err(Error::InvalidInput(format!("integrator step {max_step} must be positive")));
        }
        let per_label = map_labels(labels.len(), |i| {
            integrate_trajectory(flow, i, labels[i], initial[i].to_array(), &tgrid, max_step)
        })?;
        let n = labels.len();
        let mut states = Vec::with_capacity(n * tgrid.len());
        for k in 0..tgrid.len() {
            for traj in &per_label {
                states.push(FanState::from_array(traj[k]));
            }
        }
        debug_assert_eq!(states.len(), n * tgrid.len());
        Ok(TrajectoryFan {
            labels,
            tgrid,
            states,
            max_step,
        })
    }

    /// Assembles a fan from precomputed states laid out `[time][label]`.
    pub fn from_states(labels: Vec<f64>, tgrid: Vec<f64>, states: Vec<FanState>, max_step: f64) -> Result<Self> {
        check_labels(&labels)?;
        check_tgrid(&tgrid)?;
        if states.len() != labels.len() * tgrid.len() {
            return Err(Error::InvalidInput("state count does not match grid shape".into()));
        }
        Ok(TrajectoryFan {
            labels,
            tgrid,
            states,
            max_step,
        })
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn tgrid(&self) -> &[f64] {
        &self.tgrid
    }

    pub fn max_step(&self) -> f64 {
        self.max_step
    }

    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn n_times(&self) -> usize {
        self.tgrid.len()
    }

    pub fn state(&self, time: usize, label: usize) -> &FanState {
        &self.states[time * self.labels.len() + label]
    }

    /// All labels at one grid time.
    pub fn slice(&self, time: usize) -> &[FanState] {
        let n = self.labels.len();
        &self.states[time * n..(time + 1) * n]
    }

    /// Grid index of `t` when it coincides with a grid time (relative tolerance 1e-12).
    pub fn time_index(&self, t: f64) -> Option<usize> {
        let scale = 1e-12 * (1.0 + t.abs());
        self.tgrid.iter().position(|s| (s - t).abs() <= scale)
    }

    /// Index `k` with `tgrid[k] <= t <= tgrid[k + 1]`.
    pub fn bracket(&self, t: f64) -> Result<usize> {
        let (start, end) = (self.tgrid[0], *self.tgrid.last().unwrap());
        if !(t >= start && t <= end) {
            return Err(Error::TimeOutOfRange { t, start, end });
        }
        let k = self.tgrid.partition_point(|s| *s <= t);
        Ok(k.saturating_sub(1).min(self.tgrid.len() - 2))
    }

    /// Columnar CSV `label,t,x,p,S,J`, keeping every `label_stride`-th label and `time_stride`-th time.
    pub fn write_csv<W: Write>(&self, mut w: W, label_stride: usize, time_stride: usize) -> Result<()> {
        writeln!(w, "label,t,x,p,S,J")?;
        let ls = label_stride.max(1);
        let ts = time_stride.max(1);
        let last_t = self.tgrid.len() - 1;
        for k in (0..self.tgrid.len()).filter(|k| k % ts == 0 || *k == last_t) {
            for i in (0..self.labels.len()).step_by(ls) {
                let s = self.state(k, i);
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    num(self.labels[i]),
                    num(self.tgrid[k]),
                    num(s.x),
                    num(s.p),
                    num(s.s),
                    num(s.j)
                )?;
            }
        }
        Ok(())
    }

    const MAGIC: &'static [u8; 8] = b"TNLFAN01";

    /// Compact little-endian binary cache of the full fan.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&(self.labels.len() as u64).to_le_bytes())?;
        w.write_all(&(self.tgrid.len() as u64).to_le_bytes())?;
        w.write_all(&self.max_step.to_le_bytes())?;
        for v in self.labels.iter().chain(&self.tgrid) {
            w.write_all(&v.to_le_bytes())?;
        }
        for s in &self.states {
            for v in s.to_array() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::InvalidInput("not a fan cache".into()));
        }
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut word)?;
            Ok(word)
        };
        let n = u64::from_le_bytes(next(&mut r)?) as usize;
        let m = u64::from_le_bytes(next(&mut r)?) as usize;
        let max_step = f64::from_le_bytes(next(&mut r)?);
        let mut floats = |count: usize, r: &mut R| -> Result<Vec<f64>> {
            (0..count).map(|_| Ok(f64::from_le_bytes(next(r)?))).collect()
        };
        let labels = floats(n, &mut r)?;
        let tgrid = floats(m, &mut r)?;
        let raw = floats(5 * n * m, &mut r)?;
        let states = raw
            .chunks_exact(5)
            .map(|c| FanState::from_array([c[0], c[1], c[2], c[3], c[4]]))
            .collect();
        Self::from_states(labels, tgrid, states, max_step)
    }
}

/// Initial states on the graph `p = S0'(x0)`.
pub fn initial_states(labels: &[f64], phase: &InitialPhase) -> Vec<FanState> {
    labels
        .iter()
        .map(|&l| FanState {
            x: l,
            p: phase.momentum(l),
            s: phase.action(l),
            j: 1.0,
            dpdx0: phase.momentum_slope(l),
        })
        .collect()
}

/// Fan of plain characteristics issued from the graph of `S0'`.
pub fn evolve_fan(
    sym: &HamiltonianSymbol,
    labels: Vec<f64>,
    phase: &InitialPhase,
    tgrid: Vec<f64>,
    opts: IntegratorOptions,
) -> Result<TrajectoryFan> {
    let init = initial_states(&labels, phase);
    TrajectoryFan::integrate(&HamiltonianFlow::new(sym), labels, &init, tgrid, opts)
}

/// Variational Jacobian and its neighbour-difference cross-check, both `[time][label]`.
#[derive(Clone, Debug)]
pub struct JacobianField {
    pub variational: Vec<Vec<f64>>,
    pub finite_difference: Vec<Vec<f64>>,
}

impl JacobianField {
    pub fn min_variational(&self) -> f64 {
        self.variational.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Label-difference `dx/dx0` at one time (central inside, one-sided at the ends).
pub fn label_difference_jacobian(labels: &[f64], xs: &[f64]) -> Vec<f64> {
    let n = labels.len();
    if n < 2 {
        return vec![f64::NAN; n];
    }
    (0..n)
        .map(|i| {
            let (a, b) = match i {
                0 => (0, 1),
                _ if i == n - 1 => (n - 2, n - 1),
                _ => (i - 1, i + 1),
            };
            (xs[b] - xs[a]) / (labels[b] - labels[a])
        })
        .collect()
}

pub fn jacobian_field(fan: &TrajectoryFan) -> JacobianField {
    let mut variational = Vec::with_capacity(fan.n_times());
    let mut finite_difference = Vec::with_capacity(fan.n_times());
    for k in 0..fan.n_times() {
        let slice = fan.slice(k);
        variational.push(slice.iter().map(|s| s.j).collect());
        let xs: Vec<f64> = slice.iter().map(|s| s.x).collect();
        finite_difference.push(label_difference_jacobian(fan.labels(), &xs));
    }
    JacobianField {
        variational,
        finite_difference,
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausticEvent {
    pub t_star: f64,
    pub label_star: f64,
    pub x_star: f64,
}

pub const DEFAULT_CAUSTIC_TOL: f64 = 1e-6;

/// Locates every sign change of `J` in `t`, per label, by bisection on re-integrated states.
pub fn detect_caustic<F: PhaseFlow + ?Sized>(flow: &F, fan: &TrajectoryFan, tol: f64) -> Result<Vec<CausticEvent>> {
    let tol = if tol > 0.0 { tol } else { DEFAULT_CAUSTIC_TOL };
    let n = fan.n_labels();
    let found = map_labels(n, |i| {
        let mut events = Vec::new();
        for k in 0..fan.n_times() - 1 {
            let a = fan.state(k, i);
            let b = fan.state(k + 1, i);
            if a.j == 0.0 {
                if k == 0 || fan.state(k - 1, i).j != 0.0 {
                    events.push(CausticEvent {
                        t_star: fan.tgrid()[k],
                        label_star: fan.labels()[i],
                        x_star: a.x,
                    });
                }
                continue;
            }
            if b.j == 0.0 || (a.j > 0.0) == (b.j > 0.0) {
                continue;
            }
            let (mut lo, mut hi) = (fan.tgrid()[k], fan.tgrid()[k + 1]);
            let mut y = a.to_array();
            let positive = a.j > 0.0;
            while hi - lo > tol {
                let mid = 0.5 * (lo + hi);
                let ym = integrate_segment(flow, i, fan.labels()[i], y, lo, mid, fan.max_step())?;
                if (ym[3] > 0.0) == positive && ym[3] != 0.0 {
                    lo = mid;
                    y = ym;
                } else {
                    hi = mid;
                }
            }
            let t_star = 0.5 * (lo + hi);
            let ys = integrate_segment(flow, i, fan.labels()[i], y, lo, t_star, fan.max_step())?;
            events.push(CausticEvent {
                t_star,
                label_star: fan.labels()[i],
                x_star: ys[0],
            });
        }
        Ok(events)
    })?;
    let mut events: Vec<CausticEvent> = found.into_iter().flatten().collect();
    events.sort_by(|a, b| a.t_star.total_cmp(&b.t_star).then(a.label_star.total_cmp(&b.label_star)));
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::linspace;
    use crate::symbol::Coefficient;

    fn heat() -> HamiltonianSymbol {
        HamiltonianSymbol::quadratic(1.0)
    }

    #[test]
    fn convex_tanh_closed_form() {
        let labels = linspace(-2.0, 2.0, 41);
        let fan = evolve_fan(&heat(), labels.clone(), &InitialPhase::TanhPlus, linspace(0.0, 1.0, 11), Default::default()).unwrap();
        for (i, &l) in labels.iter().enumerate() {
            let s = fan.state(10, i);
            assert!((s.x - (l + 2.0 * (1.0 + l.tanh()))).abs() < 1e-12);
            assert!((s.p - (1.0 + l.tanh())).abs() < 1e-14);
            assert!((s.j - (1.0 + 2.0 / l.cosh().powi(2))).abs() < 1e-12);
            // S = S0 + t p^2 along a free trajectory
            let p = 1.0 + l.tanh();
            assert!((s.s - (InitialPhase::TanhPlus.action(l) + p * p)).abs() < 1e-12);
        }
    }

    #[test]
    fn rest_state() {
        let fan = evolve_fan(
            &heat(),
            linspace(-1.0, 1.0, 5),
            &InitialPhase::Quadratic { curvature: 0.0 },
            linspace(0.0, 2.0, 3),
            Default::default(),
        )
        .unwrap();
        for k in 0..3 {
            for (i, s) in fan.slice(k).iter().enumerate() {
                assert_eq!((s.x, s.p, s.s, s.j), (fan.labels()[i], 0.0, 0.0, 1.0));
            }
        }
    }

    #[test]
    fn constant_force() {
        let sym = HamiltonianSymbol::with_potential(
            Coefficient::constant(1.0),
            Coefficient::Polynomial { coeffs: vec![0.0, 1.0] },
        );
        let phase = InitialPhase::Polynomial { coeffs: vec![0.0, 0.5, 0.25] };
        let labels = linspace(-1.0, 1.0, 9);
        let fan = evolve_fan(&sym, labels.clone(), &phase, linspace(0.0, 1.5, 4), Default::default()).unwrap();
        let t = 1.5;
        for (i, &l) in labels.iter().enumerate() {
            let p0 = phase.momentum(l);
            let s = fan.state(3, i);
            assert!((s.p - (p0 - t)).abs() < 1e-12);
            assert!((s.x - (l + 2.0 * p0 * t - t * t)).abs() < 1e-12);
        }
    }

    #[test]
    fn caustic_of_concave_tanh() {
        let labels = linspace(-1.0, 1.0, 1001);
        let sym = heat();
        let fan = evolve_fan(&sym, labels, &InitialPhase::TanhMinus, linspace(0.0, 1.0, 101), Default::default()).unwrap();
        let events = detect_caustic(&HamiltonianFlow::new(&sym), &fan, 1e-7).unwrap();
        let first = events[0];
        assert!((first.t_star - 0.5).abs() < 1e-6, "{first:?}");
        assert!(first.label_star.abs() < 1e-12);
        assert!((first.x_star - 1.0).abs() < 1e-6);
        // per-label oracle t* = cosh^2(x0) / 2
        for e in &events {
            assert!((e.t_star - 0.5 * e.label_star.cosh().powi(2)).abs() < 1e-6);
        }
        assert!(events.iter().all(|e| e.t_star <= 1.0));
    }

    #[test]
    fn uniform_focusing() {
        let sym = heat();
        let fan = evolve_fan(
            &sym,
            linspace(-1.0, 1.0, 21),
            &InitialPhase::Quadratic { curvature: -1.0 },
            linspace(0.0, 1.0, 7),
            Default::default(),
        )
        .unwrap();
        let events = detect_caustic(&HamiltonianFlow::new(&sym), &fan, 1e-8).unwrap();
        assert_eq!(events.len(), 21);
        assert!(events.iter().all(|e| (e.t_star - 0.5).abs() < 1e-7));
    }

    #[test]
    fn convex_case_has_no_caustic() {
        let sym = heat();
        let fan = evolve_fan(&sym, linspace(-4.0, 4.0, 201), &InitialPhase::TanhPlus, linspace(0.0, 5.0, 51), Default::default()).unwrap();
        assert!(detect_caustic(&HamiltonianFlow::new(&sym), &fan, 1e-6).unwrap().is_empty());
        assert!(jacobian_field(&fan).min_variational() >= 1.0);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let sym = HamiltonianSymbol::with_potential(Coefficient::constant(1.0), Coefficient::Sine { amplitude: 1.0, wavenumber: 1.0, phase: std::f64::consts::FRAC_PI_2, offset: 0.0 });
        let flow = HamiltonianFlow::new(&sym);
        let y0 = [0.3, 0.8, 0.0, 1.0, 0.0];
        let run = |h: f64| integrate_segment(&flow, 0, 0.3, y0, 0.0, 2.0, h).unwrap();
        let (a, b, c) = (run(0.04), run(0.02), run(0.01));
        let ratio = (a[0] - b[0]).abs() / (b[0] - c[0]).abs();
        assert!((ratio - 16.0).abs() < 1.5, "ratio {ratio}");
    }

    #[test]
    fn blow_up_names_label() {
        // p' = 4 x^3 escapes in finite time
        let sym = HamiltonianSymbol::with_potential(
            Coefficient::constant(1.0),
            Coefficient::Polynomial { coeffs: vec![0.0, 0.0, 0.0, 0.0, -1.0] },
        );
        let err = evolve_fan(&sym, vec![0.0, 1.0], &InitialPhase::Quadratic { curvature: 0.0 }, vec![0.0, 10.0], Default::default())
            .unwrap_err();
        assert!(matches!(err, Error::BlowUp { .. }), "{err}");
    }

    #[test]
    fn rejects_bad_grids() {
        let sym = heat();
        let phase = InitialPhase::TanhPlus;
        assert!(evolve_fan(&sym, vec![1.0, 0.0], &phase, vec![0.0, 1.0], Default::default()).is_err());
        assert!(evolve_fan(&sym, vec![0.0, 1.0], &phase, vec![0.0], Default::default()).is_err());
        assert!(evolve_fan(&sym, vec![0.0, 1.0], &phase, vec![0.0, 0.0, 1.0], Default::default()).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let fan = evolve_fan(&heat(), linspace(-1.0, 1.0, 7), &InitialPhase::TanhMinus, linspace(0.0, 1.0, 5), Default::default()).unwrap();
        let mut buf = Vec::new();
        fan.write_binary(&mut buf).unwrap();
        assert_eq!(TrajectoryFan::read_binary(&buf[..]).unwrap(), fan);
        assert!(TrajectoryFan::read_binary(&b"garbage!"[..]).is_err());
    }

    #[test]
    fn bracket_and_index() {
        let fan = evolve_fan(&heat(), vec![0.0, 1.0], &InitialPhase::TanhPlus, linspace(0.0, 1.0, 5), Default::default()).unwrap();
        assert_eq!(fan.bracket(0.0).unwrap(), 0);
        assert_eq!(fan.bracket(1.0).unwrap(), 3);
        assert_eq!(fan.bracket(0.6).unwrap(), 2);
        assert_eq!(fan.time_index(0.75), Some(3));
        assert!(matches!(fan.bracket(1.5), Err(Error::TimeOutOfRange { .. })));
    }
}
