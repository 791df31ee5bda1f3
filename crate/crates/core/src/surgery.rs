//! Global-in-time constructions that keep the label-to-x map invertible past the caustic.
//!
//! Trajectories that hit the stratum are blended onto it: a label absorbed at time `tau`
//! moves with `(1 - B) H_p + B c`, where `B = B((t - tau + A eps) / eps)` and `c` is the
//! stratum speed. The lead `A eps` makes the block reach the stratum before it would focus,
//! which is what produces the Jacobian floor `J >= C eps`.

use serde::Serialize;

use crate::continuity::stratum_velocity;
use crate::error::{Error, Result};
use crate::hamflow::{
    check_tgrid, integrate_segment, label_difference_jacobian, FanState, HamiltonianFlow, IntegratorOptions,
    PhaseFlow, State, TrajectoryFan,
};
use crate::initial::InitialPhase;
use crate::manifold::{branch_decompose, LagrangianCurve};
use crate::symbol::HamiltonianSymbol;
#[cfg(test)]
use crate::symbol::Coefficient;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlendKind {
    /// `B(z) = 1 / (1 + e^{-z})`.
    Logistic,
    /// `B = 0`: plain characteristics.
    Off,
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct BlendProfile {
    pub kind: BlendKind,
    pub eps: f64,
    /// Lead `A` of the blend, in units of `eps`.
    pub shift: f64,
    /// Insertion half-width.
    pub beta: f64,
}

impl BlendProfile {
    /// Logistic profile; requires the scale separation `eps <= beta / 10`.
    pub fn new(eps: f64, shift: f64, beta: f64) -> Result<Self> {
        if !(eps > 0.0) || !(beta > 0.0) || !shift.is_finite() {
            return Err(Error::InvalidInput(format!(
                "blend needs eps > 0, beta > 0 and finite A (eps = {eps}, beta = {beta}, A = {shift})"
            )));
        }
        if eps > beta / 10.0 {
            return Err(Error::Config(format!("eps = {eps} violates eps <= beta / 10 with beta = {beta}")));
        }
        Ok(BlendProfile {
            kind: BlendKind::Logistic,
            eps,
            shift,
            beta,
        })
    }

    pub fn off(beta: f64) -> Self {
        BlendProfile {
            kind: BlendKind::Off,
            eps: f64::INFINITY,
            shift: 0.0,
            beta,
        }
    }

    pub fn with_shift(self, shift: f64) -> Self {
        BlendProfile { shift, ..self }
    }

    pub fn value(&self, z: f64) -> f64 {
        match self.kind {
            BlendKind::Logistic => 1.0 / (1.0 + (-z).exp()),
            BlendKind::Off => 0.0,
        }
    }

    /// Blend weight at `t` for a label absorbed at `tau`.
    pub fn weight(&self, t: f64, tau: Option<f64>) -> f64 {
        match (self.kind, tau) {
            (BlendKind::Off, _) | (_, None) => 0.0,
            (_, Some(tau)) => self.value((t - tau + self.shift * self.eps) / self.eps),
        }
    }
}

/// Modified initial velocity on `(x0* - beta, x0* + beta)` for a spatially homogeneous symbol.
///
/// `H_p(u1(x0, t), t) = -K(t) x0 + b(t)` with `K`, `b` fixed by matching the original data
/// at both ends, so all insertion labels arrive at one point at the same time.
#[derive(Clone, Debug)]
pub struct Insertion {
    sym: HamiltonianSymbol,
    pub x0_star: f64,
    pub beta: f64,
    pub t0: f64,
    pub u_minus: f64,
    pub u_plus: f64,
    t_focus: f64,
}

impl Insertion {
    pub fn k(&self, t: f64) -> Result<f64> {
        let vm = self.sym.grad_p(0.0, self.u_minus, t)?;
        let vp = self.sym.grad_p(0.0, self.u_plus, t)?;
        Ok((vm - vp) / (2.0 * self.beta))
    }

    pub fn b(&self, t: f64) -> Result<f64> {
        let vm = self.sym.grad_p(0.0, self.u_minus, t)?;
        Ok(vm + self.k(t)? * (self.x0_star - self.beta))
    }

    pub fn velocity(&self, x0: f64, t: f64) -> Result<f64> {
        Ok(-self.k(t)? * x0 + self.b(t)?)
    }

    /// Inverts `H_p(u, t) = velocity(x0, t)` by bisection between the endpoint momenta.
    pub fn momentum(&self, x0: f64, t: f64) -> Result<f64> {
        let target = self.velocity(x0, t)?;
        let (mut lo, mut hi) = (self.u_minus.min(self.u_plus), self.u_minus.max(self.u_plus));
        let f = |u: f64| -> Result<f64> { Ok(self.sym.grad_p(0.0, u, t)? - target) };
        let (mut flo, fhi) = (f(lo)?, f(hi)?);
        if flo * fhi > 0.0 {
            if flo.abs() <= 1e-12 {
                return Ok(lo);
            }
            if fhi.abs() <= 1e-12 {
                return Ok(hi);
            }
            return Err(Error::RootFinding(format!("no momentum with H_p = {target} at x0 = {x0}")));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let fm = f(mid)?;
            if (fm < 0.0) == (flo < 0.0) {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * (1.0 + hi.abs()) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Time at which the insertion collapses to a point.
    pub fn t_focus(&self) -> f64 {
        self.t_focus
    }
}

/// Builds the insertion from the original momentum profile `u0` around the focusing label.
pub fn insertion_initial_data(
    sym: &HamiltonianSymbol,
    u0: &dyn Fn(f64) -> f64,
    x0_star: f64,
    beta: f64,
    t0: f64,
) -> Result<Insertion> {
    if !sym.is_homogeneous() {
        return Err(Error::Precondition("the insertion needs an x-independent symbol".into()));
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidInput(format!("beta must be positive, got {beta}")));
    }
    let (u_minus, u_plus) = (u0(x0_star - beta), u0(x0_star + beta));
    if (u_minus - u_plus).abs() <= 1e-12 * (1.0 + u_minus.abs()) {
        return Err(Error::Precondition(format!(
            "degenerate endpoint matching: u0 = {u_minus} at both ends of the insertion"
        )));
    }
    let (lo, hi) = (u_minus.min(u_plus), u_minus.max(u_plus));
    let report = sym.check_convexity_at((0.0, 0.0), (lo, hi), 64, t0)?;
    if !report.certified {
        return Err(Error::Precondition(format!(
            "H_p is not invertible on [{lo}, {hi}]: H_pp = {} at p = {}",
            report.min_hess, report.at_p
        )));
    }
    let mut ins = Insertion {
        sym: sym.clone(),
        x0_star,
        beta,
        t0,
        u_minus,
        u_plus,
        t_focus: f64::NAN,
    };
    ins.t_focus = focus_time(&ins)?;
    Ok(ins)
}

/// Solves `int_{t0}^{t} K = 1`.
fn focus_time(ins: &Insertion) -> Result<f64> {
    if !ins.sym.is_time_dependent() {
        let k = ins.k(ins.t0)?;
        if !(k > 0.0) {
            return Err(Error::Precondition(format!("insertion does not focus (K = {k})")));
        }
        return Ok(ins.t0 + 1.0 / k);
    }
    let h = 1e-4;
    let (mut t, mut acc) = (ins.t0, 0.0);
    let mut k_prev = ins.k(t)?;
    for _ in 0..10_000_000 {
        let k_next = ins.k(t + h)?;
        let step = 0.5 * h * (k_prev + k_next);
        if acc + step >= 1.0 {
            // linear inside the last step
            return Ok(t + h * (1.0 - acc) / step);
        }
        acc += step;
        t += h;
        k_prev = k_next;
    }
    Err(Error::Precondition("insertion does not focus within 1000 time units".into()))
}

/// Initial manifold for the blended fan: labels, their states at `t0`, and the insertion block.
#[derive(Clone, Debug, PartialEq)]
pub struct StartData {
    pub t0: f64,
    pub labels: Vec<f64>,
    pub states: Vec<FanState>,
    /// Indices of the block endpoints; labels strictly between them form the block.
    pub block: (usize, usize),
}

impl StartData {
    /// Labels with states from `phase` at `t = 0`; the block is `[x0* - beta, x0* + beta]`.
    pub fn from_phase(labels: Vec<f64>, phase: &InitialPhase, x0_star: f64, beta: f64) -> Result<Self> {
        let states = crate::hamflow::initial_states(&labels, phase);
        let block = (label_index(&labels, x0_star - beta)?, label_index(&labels, x0_star + beta)?);
        Ok(StartData {
            t0: 0.0,
            labels,
            states,
            block,
        })
    }
}

fn label_index(labels: &[f64], v: f64) -> Result<usize> {
    let tol = 1e-9 * (1.0 + v.abs());
    labels
        .iter()
        .position(|l| (l - v).abs() <= tol)
        .ok_or_else(|| Error::InvalidInput(format!("labels must contain the insertion endpoint {v}")))
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct TrackPoint {
    pub t: f64,
    pub x: f64,
    pub velocity: f64,
    /// Labels currently reaching the stratum from each side.
    pub xi_left: f64,
    pub xi_right: f64,
    pub p_left: f64,
    pub p_right: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Track {
    pub points: Vec<TrackPoint>,
}

impl Track {
    /// Stratum speed; constant before the first and after the last sample.
    pub fn velocity(&self, t: f64) -> f64 {
        self.interp(t, |p| p.velocity)
    }

    pub fn position(&self, t: f64) -> f64 {
        self.interp(t, |p| p.x)
    }

    fn interp(&self, t: f64, f: impl Fn(&TrackPoint) -> f64) -> f64 {
        let pts = &self.points;
        if t <= pts[0].t {
            return f(&pts[0]);
        }
        let last = pts.len() - 1;
        if t >= pts[last].t {
            return f(&pts[last]);
        }
        let k = pts.partition_point(|p| p.t <= t) - 1;
        let w = (t - pts[k].t) / (pts[k + 1].t - pts[k].t);
        f(&pts[k]) + w * (f(&pts[k + 1]) - f(&pts[k]))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct Floor {
    /// Minimum block Jacobian over `t >= t_focus + 2 beta`.
    pub min_j: f64,
    /// `min_j / eps`.
    pub c_fit: f64,
    pub t_from: f64,
}

#[derive(Clone, Debug)]
pub struct BlendedFan {
    pub fan: TrajectoryFan,
    pub track: Track,
    pub t_focus: f64,
    pub block: (usize, usize),
    pub blend: BlendProfile,
    pub floor: Floor,
    /// First non-increasing neighbour pair `(t, left label, right label)`.
    pub crossing: Option<(f64, f64, f64)>,
}

impl BlendedFan {
    pub fn is_sorted(&self) -> bool {
        self.crossing.is_none()
    }
}

struct BlendedFlow<'a> {
    sym: &'a HamiltonianSymbol,
    labels: &'a [f64],
    tau: &'a [Option<f64>],
    block: (usize, usize),
    insertion: Option<&'a Insertion>,
    blend: &'a BlendProfile,
    track: &'a Track,
}

impl PhaseFlow for BlendedFlow<'_> {
    fn rhs(&self, label: usize, t: f64, y: &State) -> Result<State> {
        let b = self.blend.weight(t, self.tau[label]);
        let c = self.track.velocity(t);
        let (x, p) = (y[0], y[1]);
        let h = self.sym.eval(x, p, t)?;
        let in_block = label > self.block.0 && label < self.block.1;
        if let (true, Some(ins)) = (in_block, self.insertion) {
            let v = ins.velocity(self.labels[label], t)?;
            let xdot = (1.0 - b) * v + b * c;
            return Ok([xdot, 0.0, p * xdot - h, -(1.0 - b) * ins.k(t)?, 0.0]);
        }
        let hp = self.sym.grad_p(x, p, t)?;
        let hx = self.sym.grad_x(x, p, t)?;
        let hpp = self.sym.hess_pp(x, p, t)?;
        let hxp = self.sym.cross_xp(x, p, t)?;
        let hxx = self.sym.hess_xx(x, p, t)?;
        let (j, q) = (y[3], y[4]);
        let xdot = (1.0 - b) * hp + b * c;
        Ok([
            xdot,
            -(1.0 - b) * hx,
            p * xdot - h,
            (1.0 - b) * (hxp * j + hpp * q),
            -(1.0 - b) * (hxx * j + hxp * q),
        ])
    }
}

/// Side labels at grid time `k`: in each outer family, the label whose plain position is
/// at `x`, interpolated between neighbours. Returns `(label, p)` per side.
fn side_labels_at(fan: &TrajectoryFan, k: usize, block: (usize, usize), x: f64) -> ((f64, f64), (f64, f64)) {
    let labels = fan.labels();
    let s = fan.slice(k);
    let n = labels.len();
    let lerp = |i: usize, j: usize| -> (f64, f64) {
        let (a, b) = (&s[i], &s[j]);
        let w = if (b.x - a.x).abs() > 0.0 { ((x - a.x) / (b.x - a.x)).clamp(0.0, 1.0) } else { 0.0 };
        (labels[i] + w * (labels[j] - labels[i]), a.p + w * (b.p - a.p))
    };
    let (lo, hi) = block;
    let left = match (0..=lo).rev().find(|&i| s[i].x <= x) {
        Some(i) if i < lo => lerp(i, i + 1),
        Some(i) => (labels[i], s[i].p),
        None => (labels[0], s[0].p),
    };
    let right = match (hi..n).find(|&j| s[j].x >= x) {
        Some(j) if j > hi => lerp(j - 1, j),
        Some(j) => (labels[j], s[j].p),
        None => (labels[n - 1], s[n - 1].p),
    };
    (left, right)
}

/// Rankine-Hugoniot speed, or the characteristic speed while the sides still coincide.
fn track_velocity(sym: &HamiltonianSymbol, x: f64, t: f64, pl: f64, pr: f64) -> Result<f64> {
    match stratum_velocity(sym, x, t, pl, pr) {
        Err(Error::DegenerateStratum(_)) => sym.grad_p(x, 0.5 * (pl + pr), t),
        other => other,
    }
}

/// Follows the stratum from the focus point with Heun steps on the fan's time grid.
fn stratum_track(sym: &HamiltonianSymbol, plain: &TrajectoryFan, block: (usize, usize), t_focus: f64) -> Result<Track> {
    let tg = plain.tgrid();
    let kf = tg.partition_point(|&t| t < t_focus);
    if kf == 0 || kf >= tg.len() {
        return Err(Error::InvalidInput(format!("focus time {t_focus} is not inside the time grid")));
    }
    // endpoints of the block at t_focus, by linear interpolation in time
    let w = (t_focus - tg[kf - 1]) / (tg[kf] - tg[kf - 1]);
    let at = |i: usize| plain.state(kf - 1, i).x * (1.0 - w) + plain.state(kf, i).x * w;
    let mut x = 0.5 * (at(block.0) + at(block.1));
    let mut points = Vec::with_capacity(tg.len() - kf + 1);
    let sample = |k: usize, x: f64| -> Result<TrackPoint> {
        let ((xl, pl), (xr, pr)) = side_labels_at(plain, k, block, x);
        let t = tg[k];
        Ok(TrackPoint {
            t,
            x,
            velocity: track_velocity(sym, x, t, pl, pr)?,
            xi_left: xl,
            xi_right: xr,
            p_left: pl,
            p_right: pr,
        })
    };
    // at t_focus the block endpoints meet at x
    let (pl, pr) = (
        plain.state(kf - 1, block.0).p * (1.0 - w) + plain.state(kf, block.0).p * w,
        plain.state(kf - 1, block.1).p * (1.0 - w) + plain.state(kf, block.1).p * w,
    );
    let first = TrackPoint {
        t: t_focus,
        x,
        velocity: track_velocity(sym, x, t_focus, pl, pr)?,
        xi_left: plain.labels()[block.0],
        xi_right: plain.labels()[block.1],
        p_left: pl,
        p_right: pr,
    };
    points.push(first);
    let mut t = t_focus;
    let mut v = first.velocity;
    for k in kf..tg.len() {
        let h = tg[k] - t;
        if h > 0.0 {
            let pred = sample(k, x + h * v)?;
            x += 0.5 * h * (v + pred.velocity);
            t = tg[k];
        }
        let p = sample(k, x)?;
        v = p.velocity;
        if points.last().map(|q| q.t) != Some(t) {
            points.push(p);
        }
    }
    Ok(Track { points })
}

/// Time at which each label is absorbed into the stratum; `None` if never.
///
/// Block labels go in at the focus time. Outer labels are absorbed when the side label
/// of their family passes them.
fn absorption_times(labels: &[f64], block: (usize, usize), t_focus: f64, track: &Track) -> Vec<Option<f64>> {
    let (a, b) = (labels[block.0], labels[block.1]);
    // side-label tracks are monotone away from the block; a running max keeps them so
    let mut left: Vec<(f64, f64)> = Vec::new();
    let mut right: Vec<(f64, f64)> = Vec::new();
    let (mut lmin, mut rmax) = (a, b);
    for p in &track.points {
        lmin = lmin.min(p.xi_left);
        rmax = rmax.max(p.xi_right);
        left.push((p.t, lmin));
        right.push((p.t, rmax));
    }
    let first_time = |side: &[(f64, f64)], l: f64, reached: &dyn Fn(f64) -> bool| -> Option<f64> {
        let k = side.iter().position(|&(_, l)| reached(l))?;
        if k == 0 {
            return Some(side[0].0);
        }
        let ((t0, l0), (t1, l1)) = (side[k - 1], side[k]);
        Some(t0 + (t1 - t0) * ((l - l0) / (l1 - l0)).clamp(0.0, 1.0))
    };
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if i > block.0 && i < block.1 {
                Some(t_focus)
            } else if i <= block.0 {
                first_time(&left, l, &|lm| lm <= l)
            } else {
                first_time(&right, l, &|rm| rm >= l)
            }
        })
        .collect()
}

/// Clock of the stratum track.
const TRACK_DT: f64 = 1e-3;

/// Runs the blended construction with a fixed lead `A = blend.shift`.
fn run_blend(
    sym: &HamiltonianSymbol,
    start: &StartData,
    insertion: Option<&Insertion>,
    t_focus: f64,
    blend: &BlendProfile,
    tgrid: &[f64],
) -> Result<BlendedFan> {
    check_tgrid(tgrid)?;
    let n = start.labels.len();
    let (lo, hi) = start.block;
    if !(lo < hi && hi < n) || start.states.len() != n {
        return Err(Error::InvalidInput("inconsistent start data".into()));
    }
    if (tgrid[0] - start.t0).abs() > 1e-12 {
        return Err(Error::InvalidInput(format!("time grid must start at t0 = {}", start.t0)));
    }
    let t_end = *tgrid.last().unwrap();
    if !(t_focus > start.t0 && t_focus < t_end) {
        return Err(Error::InvalidInput(format!("focus time {t_focus} outside ({}, {t_end})", start.t0)));
    }

    // the track and the sortedness check need a finer clock than a coarse output grid;
    // the plain fan runs past the end so late absorptions still get a time
    let dt_out = tgrid.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let h = dt_out.min(TRACK_DT);
    let margin = if blend.kind == BlendKind::Off { 0.0 } else { (blend.shift.max(0.0) + 30.0) * blend.eps };
    let n_fine = ((t_end + margin - start.t0) / h).ceil() as usize + 1;
    let fine: Vec<f64> = (0..n_fine).map(|k| start.t0 + k as f64 * h).collect();
    let plain = TrajectoryFan::integrate(
        &HamiltonianFlow::new(sym),
        start.labels.clone(),
        &start.states,
        fine.clone(),
        IntegratorOptions::default(),
    )?;
    let track = stratum_track(sym, &plain, start.block, t_focus)?;
    drop(plain);
    let tau = absorption_times(&start.labels, start.block, t_focus, &track);

    let mut merged: Vec<f64> = fine.iter().copied().filter(|&t| t < t_end).chain(tgrid.iter().copied()).collect();
    merged.sort_by(f64::total_cmp);
    merged.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
    let flow = BlendedFlow {
        sym,
        labels: &start.labels,
        tau: &tau,
        block: start.block,
        insertion,
        blend,
        track: &track,
    };
    let step = if blend.kind == BlendKind::Off { h } else { h.min(blend.eps / 10.0) };
    let fan = TrajectoryFan::integrate(&flow, start.labels.clone(), &start.states, merged.clone(), IntegratorOptions::with_max_step(step))?;

    // outer Jacobians pick up d tau / d label, so take them from label differences
    let mut states = Vec::with_capacity(n * tgrid.len());
    let mut crossing = None;
    let mut min_j = f64::INFINITY;
    let t_from = t_focus + 2.0 * blend.beta;
    let mut next_out = 0;
    for (k, &t) in merged.iter().enumerate() {
        let slice = fan.slice(k);
        let xs: Vec<f64> = slice.iter().map(|s| s.x).collect();
        if crossing.is_none() {
            if let Some(i) = (0..n - 1).find(|&i| xs[i + 1] <= xs[i]) {
                crossing = Some((t, start.labels[i], start.labels[i + 1]));
            }
        }
        if t >= t_from - 1e-12 {
            min_j = (lo + 1..hi).map(|i| slice[i].j).fold(min_j, f64::min);
        }
        if next_out >= tgrid.len() || (t - tgrid[next_out]).abs() > 1e-12 {
            continue;
        }
        next_out += 1;
        let fd = label_difference_jacobian(&start.labels, &xs);
        for i in 0..n {
            let mut s = slice[i];
            if i > lo && i < hi {
                if let Some(ins) = insertion {
                    s.p = ins.momentum(start.labels[i], t)?;
                }
            } else {
                s.j = fd[i];
            }
            states.push(s);
        }
    }
    let fan = TrajectoryFan::from_states(start.labels.clone(), tgrid.to_vec(), states, fan.max_step())?;
    Ok(BlendedFan {
        fan,
        track,
        t_focus,
        block: start.block,
        blend: *blend,
        floor: Floor {
            min_j,
            c_fit: min_j / blend.eps,
            t_from,
        },
        crossing,
    })
}

/// Blended fan for a homogeneous symbol with the insertion replacing the data on the block.
pub fn blended_fan_homogeneous(
    sym: &HamiltonianSymbol,
    start: &StartData,
    insertion: &Insertion,
    blend: &BlendProfile,
    tgrid: &[f64],
) -> Result<BlendedFan> {
    let (lo, hi) = start.block;
    let mut start = start.clone();
    let t0 = start.t0;
    let k = insertion.k(t0)?;
    // action along the block from the left endpoint, S' = u1
    let mut prev = (start.labels[lo], start.states[lo].p);
    let mut s_acc = start.states[lo].s;
    for i in lo + 1..hi {
        let l = start.labels[i];
        let u = insertion.momentum(l, t0)?;
        s_acc += 0.5 * (l - prev.0) * (u + prev.1);
        prev = (l, u);
        let hpp = sym.hess_pp(start.states[i].x, u, t0)?;
        start.states[i] = FanState {
            x: start.states[i].x,
            p: u,
            s: s_acc,
            j: 1.0,
            dpdx0: -k / hpp,
        };
    }
    run_blend(sym, &start, Some(insertion), insertion.t_focus(), blend, tgrid)
}

/// Leads tried by [`search_shift`].
pub const SHIFT_LADDER: [f64; 7] = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];

/// Smallest lead on [`SHIFT_LADDER`] giving a positive floor and a sorted fan.
pub fn search_shift(
    sym: &HamiltonianSymbol,
    start: &StartData,
    insertion: &Insertion,
    blend: &BlendProfile,
    tgrid: &[f64],
) -> Result<BlendedFan> {
    let mut best = f64::NEG_INFINITY;
    for &a in &SHIFT_LADDER {
        let fan = blended_fan_homogeneous(sym, start, insertion, &blend.with_shift(a), tgrid)?;
        if fan.floor.min_j > 0.0 && fan.is_sorted() {
            return Ok(fan);
        }
        best = best.max(fan.floor.c_fit);
    }
    Err(Error::FloorViolated(best))
}

/// Manifold after cutting the fold at `x1*` and flowing the result back by `t1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SurgeredManifold {
    /// Time of the input curve.
    pub t1_star: f64,
    /// Backflow duration actually used (after refold halving).
    pub t1: f64,
    pub t_start: f64,
    pub x1_star: f64,
    pub p_left: f64,
    pub p_right: f64,
    /// Original labels where the two kept branches meet `x1*`.
    pub a1: f64,
    pub a2: f64,
    /// Labels are positions at `t_start`; states there have `J = 1`.
    pub start: StartData,
}

impl Serialize for StartData {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = ser.serialize_struct("StartData", 3)?;
        st.serialize_field("t0", &self.t0)?;
        st.serialize_field("n_labels", &self.labels.len())?;
        st.serialize_field("block", &self.block)?;
        st.end()
    }
}

/// Cuts the single fold of `curve` at the equal-action point and flows back by `t1`.
///
/// A curve without folds comes back unchanged when it has a focus point, otherwise
/// this is a [`Error::NoFold`].
pub fn manifold_surgery(sym: &HamiltonianSymbol, curve: &LagrangianCurve, t1: f64, tol: f64) -> Result<SurgeredManifold> {
    if !(t1 > 0.0) || !(t1 <= curve.t) {
        return Err(Error::InvalidInput(format!("backflow time must be in (0, {}], got {t1}", curve.t)));
    }
    let field = branch_decompose(curve);
    match field.branches.len() {
        1 => return Err(Error::NoFold(curve.t)),
        3 => {}
        count => return Err(Error::MultipleFolds { count: (count - 1) / 2, t: curve.t }),
    }
    let (b0, b2) = (&field.branches[0], &field.branches[2]);
    let (lo, hi) = (b0.x_min().max(b2.x_min()), b0.x_max().min(b2.x_max()));
    if !(lo < hi) {
        return Err(Error::Precondition(format!("outer branches do not overlap at t = {}", curve.t)));
    }
    let gap = |x: f64| -> f64 {
        let (c0, c2) = (b0.candidate(x).unwrap(), b2.candidate(x).unwrap());
        c0.s - c2.s
    };
    let (mut a, mut b) = (lo, hi);
    let (mut ga, gb) = (gap(a), gap(b));
    if ga * gb > 0.0 {
        return Err(Error::RootFinding(format!("branch actions do not cross on [{lo}, {hi}]")));
    }
    while b - a > tol.max(1e-14) {
        let m = 0.5 * (a + b);
        let gm = gap(m);
        if (gm < 0.0) == (ga < 0.0) {
            a = m;
            ga = gm;
        } else {
            b = m;
        }
    }
    let x1 = 0.5 * (a + b);
    let (cl, cr) = (b0.candidate(x1).unwrap(), b2.candidate(x1).unwrap());

    let pts = &curve.points;
    let n = pts.len();
    let left: Vec<usize> = (0..=b0.last).filter(|&i| pts[i].x < x1).collect();
    let right: Vec<usize> = (b2.first..n).filter(|&i| pts[i].x > x1).collect();
    if left.len() < 2 || right.len() < 2 {
        return Err(Error::Precondition("too few points kept on one side of the cut".into()));
    }
    let labels: Vec<f64> = pts.iter().map(|q| q.label).collect();
    let ps: Vec<f64> = pts.iter().map(|q| q.p).collect();
    let dpdl = label_difference_jacobian(&labels, &ps);
    let dl = (labels[n - 1] - labels[0]) / (n - 1) as f64;

    let flow = HamiltonianFlow::new(sym);
    let back = |y: State, t1: f64| integrate_segment(&flow, 0, y[0], y, curve.t, curve.t - t1, (t1 / 200.0).min(1e-3));
    let mut t1 = t1;
    for _ in 0..=10 {
        let spread = (sym.grad_p(x1, cr.p, curve.t)? - sym.grad_p(x1, cl.p, curve.t)?).abs() * t1;
        let m = ((spread / dl).ceil() as usize).clamp(8, 20_000);
        let mut ys: Vec<State> = left.iter().map(|&i| [pts[i].x, pts[i].p, pts[i].s, pts[i].j, dpdl[i]]).collect();
        let lo_blk = ys.len();
        for k in 0..=m {
            let p = cl.p + (cr.p - cl.p) * k as f64 / m as f64;
            ys.push([x1, p, cl.s, 0.0, 1.0]);
        }
        let hi_blk = ys.len() - 1;
        ys.extend(right.iter().map(|&i| [pts[i].x, pts[i].p, pts[i].s, pts[i].j, dpdl[i]]));
        let backed = crate::hamflow::map_labels(ys.len(), |i| back(ys[i], t1))?;
        let xs: Vec<f64> = backed.iter().map(|y| y[0]).collect();
        if xs.windows(2).all(|w| w[1] > w[0]) {
            let states = backed
                .iter()
                .map(|y| FanState {
                    x: y[0],
                    p: y[1],
                    s: y[2],
                    j: 1.0,
                    dpdx0: y[4] / y[3],
                })
                .collect();
            return Ok(SurgeredManifold {
                t1_star: curve.t,
                t1,
                t_start: curve.t - t1,
                x1_star: x1,
                p_left: cl.p,
                p_right: cr.p,
                a1: cl.label,
                a2: cr.label,
                start: StartData {
                    t0: curve.t - t1,
                    labels: xs,
                    states,
                    block: (lo_blk, hi_blk),
                },
            });
        }
        t1 *= 0.5;
    }
    Err(Error::Refold(t1))
}

/// Blended fan started from a surgered manifold; the block is the backflowed cut segment.
pub fn backflow_and_blend(
    sym: &HamiltonianSymbol,
    surgered: &SurgeredManifold,
    blend: &BlendProfile,
    tgrid: &[f64],
) -> Result<BlendedFan> {
    run_blend(sym, &surgered.start, None, surgered.t1_star, blend, tgrid)
}

/// Same lead search as [`search_shift`] for a surgered start.
pub fn search_shift_surgered(
    sym: &HamiltonianSymbol,
    surgered: &SurgeredManifold,
    blend: &BlendProfile,
    tgrid: &[f64],
) -> Result<BlendedFan> {
    let mut best = f64::NEG_INFINITY;
    for &a in &SHIFT_LADDER {
        let fan = backflow_and_blend(sym, surgered, &blend.with_shift(a), tgrid)?;
        if fan.floor.min_j > 0.0 && fan.is_sorted() {
            return Ok(fan);
        }
        best = best.max(fan.floor.c_fit);
    }
    Err(Error::FloorViolated(best))
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct SurgeryReport {
    pub t_star: f64,
    pub x_star: f64,
    pub t1_star: f64,
    pub a1: f64,
    pub a2: f64,
    pub x1_star: f64,
    #[serde(rename = "A")]
    pub shift: f64,
    #[serde(rename = "C_fit")]
    pub c_fit: f64,
}

impl SurgeryReport {
    /// `t_star`, `x_star` are the first caustic point of the plain flow.
    pub fn new(t_star: f64, x_star: f64, surgered: &SurgeredManifold, fan: &BlendedFan) -> Self {
        SurgeryReport {
            t_star,
            x_star,
            t1_star: surgered.t1_star,
            a1: surgered.a1,
            a2: surgered.a2,
            x1_star: surgered.x1_star,
            shift: fan.blend.shift,
            c_fit: fan.floor.c_fit,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamflow::evolve_fan;
    use crate::io::linspace;
    use crate::manifold::snapshot;

    fn setup(beta: f64) -> (HamiltonianSymbol, StartData, Insertion) {
        let sym = HamiltonianSymbol::quadratic(1.0);
        let phase = InitialPhase::TanhMinus;
        let start = StartData::from_phase(linspace(-3.0, 3.0, 3001), &phase, 0.0, beta).unwrap();
        let ins = insertion_initial_data(&sym, &|x| phase.momentum(x), 0.0, beta, 0.0).unwrap();
        (sym, start, ins)
    }

    #[test]
    fn insertion_collapses_at_focus() {
        let (sym, start, ins) = setup(0.1);
        let tf = ins.t_focus();
        let k = 2.0 * 0.1f64.tanh() / 0.1;
        assert!((tf - 1.0 / k).abs() < 1e-12);
        let fan = blended_fan_homogeneous(&sym, &start, &ins, &BlendProfile::off(0.1), &[0.0, 0.5 * tf, tf, 1.0]).unwrap();
        let (lo, hi) = fan.block;
        let xs: Vec<f64> = (lo + 1..hi).map(|i| fan.fan.state(2, i).x).collect();
        let spread = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - xs.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread <= 1e-6, "spread {spread}");
        // endpoints keep their plain momenta
        assert!((ins.momentum(-0.1, 0.3).unwrap() - ins.u_minus).abs() < 1e-9);
        assert!((ins.momentum(0.1, 0.3).unwrap() - ins.u_plus).abs() < 1e-9);
    }

    #[test]
    fn floor_scales_with_eps() {
        let (sym, start, ins) = setup(0.1);
        let tgrid = linspace(0.0, 1.0, 201);
        let mut c = vec![];
        for eps in [4e-3, 2e-3] {
            let blend = BlendProfile::new(eps, 1.0, 0.1).unwrap();
            let fan = blended_fan_homogeneous(&sym, &start, &ins, &blend, &tgrid).unwrap();
            assert!(fan.is_sorted(), "crossing {:?}", fan.crossing);
            assert!(fan.floor.min_j > 0.0);
            c.push(fan.floor.c_fit);
        }
        assert!((c[0] - c[1]).abs() <= 0.1 * c[0], "C not stable: {c:?}");
    }

    #[test]
    fn blend_profile_rejects_large_eps() {
        assert!(matches!(BlendProfile::new(0.02, 1.0, 0.1), Err(Error::Config(_))));
        assert!(BlendProfile::new(0.01, 1.0, 0.1).is_ok());
    }

    #[test]
    fn degenerate_insertion_errors() {
        let sym = HamiltonianSymbol::quadratic(1.0);
        assert!(insertion_initial_data(&sym, &|_| 0.3, 0.0, 0.1, 0.0).is_err());
        // diverging data never focuses
        assert!(insertion_initial_data(&sym, &|x| x, 0.0, 0.1, 0.0).is_err());
        let inhom = HamiltonianSymbol::with_potential(Coefficient::constant(1.0), Coefficient::sine(0.1, 1.0));
        assert!(matches!(insertion_initial_data(&inhom, &|x| -x, 0.0, 0.1, 0.0), Err(Error::Precondition(_))));
    }

    #[test]
    fn surgery_requires_a_fold() {
        let sym = HamiltonianSymbol::quadratic(1.0);
        let fan = evolve_fan(&sym, linspace(-3.0, 3.0, 601), &InitialPhase::TanhMinus, vec![0.0, 0.3], Default::default()).unwrap();
        let curve = snapshot(&fan, 0.3).unwrap();
        assert!(matches!(manifold_surgery(&sym, &curve, 0.2, 1e-12), Err(Error::NoFold(_))));
    }

    #[test]
    fn surgery_matches_homogeneous_insertion() {
        let sym = HamiltonianSymbol::quadratic(1.0);
        let phase = InitialPhase::TanhMinus;
        let fan = evolve_fan(&sym, linspace(-3.0, 3.0, 3001), &phase, vec![0.0, 0.8], Default::default()).unwrap();
        let curve = snapshot(&fan, 0.8).unwrap();
        let sm = manifold_surgery(&sym, &curve, 0.4, 1e-12).unwrap();
        // odd data about the drift line x = 2t
        assert!((sm.x1_star - 1.6).abs() < 1e-9, "cut at {}", sm.x1_star);
        let (lo, hi) = sm.start.block;
        let xl = sm.start.labels[lo];
        let xr = sm.start.labels[hi];
        let mid = 0.5 * (xl + xr);
        let beta = 0.5 * (xr - xl);
        let (pl, pr) = (sm.start.states[lo].p, sm.start.states[hi].p);
        let ins = insertion_initial_data(&sym, &|x| if x < mid { pl } else { pr }, mid, beta, sm.t_start).unwrap();
        assert!((ins.t_focus() - sm.t1_star).abs() < 1e-6, "{} vs {}", ins.t_focus(), sm.t1_star);
        for i in lo + 1..hi {
            let want = ins.momentum(sm.start.labels[i], sm.t_start).unwrap();
            assert!((sm.start.states[i].p - want).abs() < 1e-6);
        }
        // the kept characteristics keep their original momenta
        assert!((pl - sm.p_left).abs() < 1e-12 && (pr - sm.p_right).abs() < 1e-12);
    }
}
