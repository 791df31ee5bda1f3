//! Generalized delta-shock solutions `rho = R + sum e_i delta(x - X_i(t))` of the
//! continuity equation `rho_t + (u rho)_x + a rho = 0` in one space dimension.
//!
//! Jump brackets are always `[g] = g_left - g_right`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamflow::TrajectoryFan;
use crate::initial::InitialDensity;
use crate::io::{num, simpson};
use crate::manifold::{branch_decompose, snapshot, BranchField, KinkTrack};
use crate::symbol::HamiltonianSymbol;

/// Regular absorption coefficient `a` along trajectories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ARule {
    Zero,
    Constant { alpha: f64 },
    /// `a = -H_xp`, so that `R` is the squared transport amplitude.
    Madelung,
    /// `a = f(u)` with `u = H_p` and `f` a polynomial.
    Velocity { coeffs: Vec<f64> },
}

impl Default for ARule {
    fn default() -> Self {
        ARule::Zero
    }
}

fn poly(coeffs: &[f64], v: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * v + c)
}

impl ARule {
    pub fn eval(&self, sym: &HamiltonianSymbol, x: f64, p: f64, t: f64) -> Result<f64> {
        Ok(match self {
            ARule::Zero => 0.0,
            ARule::Constant { alpha } => *alpha,
            ARule::Madelung => -sym.cross_xp(x, p, t)?,
            ARule::Velocity { coeffs } => poly(coeffs, sym.grad_p(x, p, t)?),
        })
    }
}

/// Reaction rate `f(v)` of the singular part of `a` on a stratum moving at speed `v`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Reaction(pub Vec<f64>);

impl Reaction {
    pub fn none() -> Self {
        Reaction(Vec::new())
    }

    pub fn constant(f: f64) -> Self {
        Reaction(vec![f])
    }

    pub fn rate(&self, v: f64) -> f64 {
        poly(&self.0, v)
    }
}

/// Moving tube around a stratum inside which the regular density is not defined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumTube {
    pub id: usize,
    /// `(t, x)` samples, increasing in `t`.
    pub path: Vec<(f64, f64)>,
    pub half_width: f64,
}

impl StratumTube {
    pub fn from_track(track: &KinkTrack, half_width: f64) -> Self {
        StratumTube {
            id: track.id,
            path: track.samples.iter().map(|s| (s.0, s.1)).collect(),
            half_width,
        }
    }

    /// Position at `t` when the tube is alive.
    pub fn position(&self, t: f64) -> Option<f64> {
        let first = self.path.first()?;
        let last = self.path.last()?;
        let tol = 1e-12 * (1.0 + t.abs());
        if t < first.0 - tol || t > last.0 + tol {
            return None;
        }
        let i = self.path.partition_point(|s| s.0 <= t);
        if i == 0 {
            return Some(first.1);
        }
        if i >= self.path.len() {
            return Some(last.1);
        }
        let (a, b) = (self.path[i - 1], self.path[i]);
        Some(a.1 + (t - a.0) / (b.0 - a.0) * (b.1 - a.1))
    }

    pub fn contains(&self, x: f64, t: f64) -> bool {
        self.position(t).is_some_and(|c| (x - c).abs() <= self.half_width)
    }
}

/// Branch field of one (possibly off-grid) time.
pub struct DensitySlice<'a> {
    cached: Option<&'a BranchField>,
    owned: Option<BranchField>,
    k: usize,
    w: f64,
}

impl DensitySlice<'_> {
    pub fn field(&self) -> &BranchField {
        self.cached.or(self.owned.as_ref()).expect("slice holds a field")
    }
}

/// Regular density by the Cauchy formula `R = rho0 / |J| * exp(-int a dt)` along the fan.
pub struct RegularDensity<'a> {
    fan: &'a TrajectoryFan,
    rho0: Vec<f64>,
    /// `absorbed[k][i] = int_0^{t_k} a dt` along label `i`.
    absorbed: Vec<Vec<f64>>,
    fields: Vec<BranchField>,
    strata: Vec<StratumTube>,
}

pub fn regular_density<'a>(
    sym: &HamiltonianSymbol,
    fan: &'a TrajectoryFan,
    rho0: &InitialDensity,
    a_rule: &ARule,
    strata: &[StratumTube],
) -> Result<RegularDensity<'a>> {
    let n = fan.n_labels();
    let rho0_v: Vec<f64> = fan.labels().iter().map(|&l| rho0.value(l)).collect();
    let mut absorbed = vec![vec![0.0; n]; fan.n_times()];
    let mut prev: Vec<f64> = Vec::with_capacity(n);
    for k in 0..fan.n_times() {
        let t = fan.tgrid()[k];
        let mut cur = Vec::with_capacity(n);
        for i in 0..n {
            let s = fan.state(k, i);
            cur.push(a_rule.eval(sym, s.x, s.p, t)?);
        }
        if k > 0 {
            let dt = t - fan.tgrid()[k - 1];
            for i in 0..n {
                absorbed[k][i] = absorbed[k - 1][i] + 0.5 * dt * (prev[i] + cur[i]);
            }
        }
        prev = cur;
    }
    let mut fields = Vec::with_capacity(fan.n_times());
    for k in 0..fan.n_times() {
        let t = fan.tgrid()[k];
        let slice = fan.slice(k);
        if let Some(i) = slice.windows(2).position(|w| w[1].x <= w[0].x) {
            let covered = strata.iter().any(|s| s.position(t).is_some());
            if !covered {
                return Err(Error::Crossing {
                    left: fan.labels()[i],
                    right: fan.labels()[i + 1],
                    t,
                });
            }
        }
        fields.push(branch_decompose(&snapshot(fan, t)?));
    }
    Ok(RegularDensity {
        fan,
        rho0: rho0_v,
        absorbed,
        fields,
        strata: strata.to_vec(),
    })
}

impl RegularDensity<'_> {
    pub fn fan(&self) -> &TrajectoryFan {
        self.fan
    }

    pub fn field(&self, k: usize) -> &BranchField {
        &self.fields[k]
    }

    fn interp_label(&self, values: &[f64], label: f64) -> f64 {
        let ls = self.fan.labels();
        let n = ls.len();
        if n == 1 {
            return values[0];
        }
        let i = ls.partition_point(|v| *v <= label).clamp(1, n - 1) - 1;
        let w = (label - ls[i]) / (ls[i + 1] - ls[i]);
        values[i] + w * (values[i + 1] - values[i])
    }

    /// `R` at `x` on branch `branch` of grid time `k`.
    pub fn on_branch(&self, k: usize, branch: usize, x: f64) -> Option<f64> {
        let c = self.fields[k].branch(branch).candidate(x)?;
        Some(self.from_candidate(k, c.label, c.j))
    }

    /// Branch field at any time in the fan span.
    pub fn slice_at(&self, t: f64) -> Result<DensitySlice<'_>> {
        if let Some(k) = self.fan.time_index(t) {
            return Ok(DensitySlice { cached: Some(&self.fields[k]), owned: None, k, w: 0.0 });
        }
        let k = self.fan.bracket(t)?;
        let (t0, t1) = (self.fan.tgrid()[k], self.fan.tgrid()[k + 1]);
        Ok(DensitySlice {
            cached: None,
            owned: Some(branch_decompose(&snapshot(self.fan, t)?)),
            k,
            w: (t - t0) / (t1 - t0),
        })
    }

    fn from_slice(&self, slice: &DensitySlice<'_>, label: f64, j: f64) -> f64 {
        let r0 = self.interp_label(&self.rho0, label);
        let mut a = self.interp_label(&self.absorbed[slice.k], label);
        if slice.w > 0.0 {
            a += slice.w * (self.interp_label(&self.absorbed[slice.k + 1], label) - a);
        }
        r0 / j.abs() * (-a).exp()
    }

    fn from_candidate(&self, k: usize, label: f64, j: f64) -> f64 {
        let r0 = self.interp_label(&self.rho0, label);
        let a = self.interp_label(&self.absorbed[k], label);
        r0 / j.abs() * (-a).exp()
    }

    /// `R(x, t_k)` on the essential branch.
    pub fn at(&self, x: f64, k: usize) -> Result<f64> {
        let t = self.fan.tgrid()[k];
        if let Some(s) = self.strata.iter().find(|s| s.contains(x, t)) {
            return Err(Error::OnStratum { x, t, stratum: s.id });
        }
        let c = self.fields[k].essential(x)?;
        Ok(self.from_candidate(k, c.label, c.j))
    }

    /// `R` on the essential branch together with its velocity `u = H_p`.
    pub fn with_velocity(&self, sym: &HamiltonianSymbol, x: f64, k: usize) -> Result<(f64, f64)> {
        let t = self.fan.tgrid()[k];
        let c = self.fields[k].essential(x)?;
        Ok((self.from_candidate(k, c.label, c.j), sym.grad_p(x, c.p, t)?))
    }

    /// `int R dx` over `[lo, hi]` on the essential branches, split at the given interior points.
    ///
    /// Each piece is integrated in label coordinates, `R dx = rho0 exp(-int a) dx0`, which stays
    /// accurate next to folds where `R` itself is sharply peaked.
    pub fn integral(&self, k: usize, lo: f64, hi: f64, splits: &[f64]) -> Result<f64> {
        let mut cuts = vec![lo];
        cuts.extend(splits.iter().copied().filter(|s| *s > lo && *s < hi));
        cuts.push(hi);
        cuts.sort_by(f64::total_cmp);
        let field = &self.fields[k];
        let mut total = 0.0;
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let branch = field.branch(field.essential(0.5 * (a + b))?.branch);
            let label = |x: f64| -> Result<f64> {
                branch
                    .candidate(x)
                    .map(|c| c.label)
                    .ok_or(Error::Uncovered { x, gap_lo: branch.x_min(), gap_hi: branch.x_max() })
            };
            total += self.label_mass(k, label(a)?, label(b)?);
        }
        Ok(total)
    }

    /// Lagrangian weight `rho0 exp(-int a)` of label `i` at grid time `k`.
    pub fn label_weight(&self, k: usize, i: usize) -> f64 {
        self.rho0[i] * (-self.absorbed[k][i]).exp()
    }

    /// `int rho0 exp(-int a) dx0` between two labels, trapezoid on the label grid.
    pub fn label_mass(&self, k: usize, la: f64, lb: f64) -> f64 {
        let (lo, hi) = (la.min(lb), la.max(lb));
        let weight = |v: f64| self.interp_label(&self.rho0, v) * (-self.interp_label(&self.absorbed[k], v)).exp();
        let mut nodes = vec![lo];
        nodes.extend(self.fan.labels().iter().copied().filter(|l| *l > lo && *l < hi));
        nodes.push(hi);
        nodes.windows(2).map(|w| 0.5 * (w[1] - w[0]) * (weight(w[0]) + weight(w[1]))).sum()
    }
}

/// Rankine–Hugoniot speed `[H]/[p]` at the stratum position.
pub fn stratum_velocity(sym: &HamiltonianSymbol, x: f64, t: f64, p_left: f64, p_right: f64) -> Result<f64> {
    let dp = p_left - p_right;
    if dp.abs() <= 1e-12 * (1.0 + p_left.abs().max(p_right.abs())) {
        return Err(Error::DegenerateStratum(dp.abs()));
    }
    Ok((sym.eval(x, p_left, t)? - sym.eval(x, p_right, t)?) / dp)
}

/// Limits of the regular solution on both sides of a stratum.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SideState {
    pub r_left: f64,
    pub r_right: f64,
    pub u_left: f64,
    pub u_right: f64,
    pub velocity: f64,
}

/// Slack allowed in the entering check `u_left >= c >= u_right`.
pub const ENTERING_TOL: f64 = 1e-9;

/// `de/dt = [R u] - c [R] + f(c) e`.
pub fn amplitude_rate(e: f64, side: &SideState, f: &Reaction) -> Result<f64> {
    let tol = ENTERING_TOL * (1.0 + side.velocity.abs());
    if side.u_left < side.velocity - tol || side.u_right > side.velocity + tol {
        return Err(Error::NotEntering {
            u_left: side.u_left,
            velocity: side.velocity,
            u_right: side.u_right,
        });
    }
    let flux = side.r_left * side.u_left - side.r_right * side.u_right;
    Ok(flux - side.velocity * (side.r_left - side.r_right) + f.rate(side.velocity) * e)
}

/// One RK4 step of the amplitude ODE with side states at `t`, `t + dt/2` and `t + dt`.
pub fn amplitude_step(
    e: f64,
    start: &SideState,
    half: &SideState,
    end: &SideState,
    f: &Reaction,
    dt: f64,
) -> Result<f64> {
    let k1 = amplitude_rate(e, start, f)?;
    let k2 = amplitude_rate(e + 0.5 * dt * k1, half, f)?;
    let k3 = amplitude_rate(e + 0.5 * dt * k2, half, f)?;
    let k4 = amplitude_rate(e + dt * k3, end, f)?;
    Ok(e + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumSample {
    pub t: f64,
    pub x: f64,
    pub velocity: f64,
    pub e: f64,
    pub p_left: f64,
    pub p_right: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShockStratum {
    pub id: usize,
    pub birth_t: f64,
    pub parents: Vec<usize>,
    pub path: Vec<StratumSample>,
    pub terminated: bool,
}

impl ShockStratum {
    pub fn last(&self) -> &StratumSample {
        self.path.last().expect("stratum has at least one sample")
    }

    pub fn amplitude_at(&self, t: f64) -> Option<f64> {
        let i = self.path.iter().position(|s| (s.t - t).abs() <= 1e-12 * (1.0 + t.abs()))?;
        Some(self.path[i].e)
    }
}

/// Kirchhoff record of a merge: the child starts with `e3 = e1 + e2`.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeEvent {
    pub t: f64,
    pub x: f64,
    pub parents: (usize, usize),
    pub child: usize,
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
}

/// Joins two strata at the first crossing of their paths (or of their last-sample extrapolations).
pub fn merge_strata(
    sym: &HamiltonianSymbol,
    s1: &ShockStratum,
    s2: &ShockStratum,
    child_id: usize,
) -> Result<(ShockStratum, MergeEvent)> {
    let (t_m, x_m) = intersection(s1, s2).ok_or(Error::NoIntersection(s1.id, s2.id))?;
    let (left, right) = if s1.last().x <= s2.last().x { (s1, s2) } else { (s2, s1) };
    let e1 = left.last().e;
    let e2 = right.last().e;
    let p_left = left.last().p_left;
    let p_right = right.last().p_right;
    let velocity = stratum_velocity(sym, x_m, t_m, p_left, p_right)?;
    let e3 = e1 + e2;
    let child = ShockStratum {
        id: child_id,
        birth_t: t_m,
        parents: vec![s1.id.min(s2.id), s1.id.max(s2.id)],
        path: vec![StratumSample {
            t: t_m,
            x: x_m,
            velocity,
            e: e3,
            p_left,
            p_right,
        }],
        terminated: false,
    };
    let event = MergeEvent {
        t: t_m,
        x: x_m,
        parents: (left.id, right.id),
        child: child_id,
        e1,
        e2,
        e3,
    };
    Ok((child, event))
}

fn intersection(s1: &ShockStratum, s2: &ShockStratum) -> Option<(f64, f64)> {
    let tol = 1e-12;
    // sampled crossing on common times
    for w in s1.path.windows(2) {
        let (a0, a1) = (w[0], w[1]);
        let b0 = s2.path.iter().find(|s| (s.t - a0.t).abs() <= tol)?;
        let Some(b1) = s2.path.iter().find(|s| (s.t - a1.t).abs() <= tol) else {
            break;
        };
        let d0 = a0.x - b0.x;
        let d1 = a1.x - b1.x;
        if d0 == 0.0 {
            return Some((a0.t, a0.x));
        }
        if d0.signum() != d1.signum() {
            let w = d0 / (d0 - d1);
            return Some((a0.t + w * (a1.t - a0.t), a0.x + w * (a1.x - a0.x)));
        }
    }
    // linear extrapolation from the last samples
    let (a, b) = (s1.last(), s2.last());
    let t0 = a.t.max(b.t);
    let xa = a.x + a.velocity * (t0 - a.t);
    let xb = b.x + b.velocity * (t0 - b.t);
    let closing = a.velocity - b.velocity;
    let gap = xb - xa;
    if gap == 0.0 {
        return Some((t0, xa));
    }
    if closing == 0.0 || gap / closing < 0.0 {
        return None;
    }
    let dt = gap / closing;
    Some((t0 + dt, xa + a.velocity * dt))
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SideOptions {
    /// Sampling cell width next to a stratum.
    pub dx: f64,
    /// Nearest cell offset; the next one is used for the linear extrapolation.
    /// Zero reads the entering branch exactly at the stratum.
    pub offset: usize,
}

impl Default for SideOptions {
    fn default() -> Self {
        SideOptions { dx: 2e-3, offset: 3 }
    }
}

/// Side states of the essential branches at `x_s`, extrapolated from cells `offset` and `offset + 1` away.
pub fn side_state(
    sym: &HamiltonianSymbol,
    density: &RegularDensity<'_>,
    k: usize,
    x_s: f64,
    opts: &SideOptions,
) -> Result<(SideState, f64, f64)> {
    side_state_at(sym, density, density.fan().tgrid()[k], x_s, opts)
}

/// Side states at an arbitrary time; off-grid times use a linearly interpolated snapshot.
pub fn side_state_at(
    sym: &HamiltonianSymbol,
    density: &RegularDensity<'_>,
    t: f64,
    x_s: f64,
    opts: &SideOptions,
) -> Result<(SideState, f64, f64)> {
    let slice = density.slice_at(t)?;
    let field = slice.field();
    let m = opts.offset as f64;
    let on = |branch: usize, x: f64| -> Result<(f64, f64, f64)> {
        let c = field
            .branch(branch)
            .candidate(x)
            .ok_or(Error::Uncovered { x, gap_lo: x, gap_hi: x })?;
        Ok((density.from_slice(&slice, c.label, c.j), sym.grad_p(x, c.p, t)?, c.p))
    };
    // each side is read on the branch that wins next to the stratum
    let side = |dir: f64| -> Result<(f64, f64, f64)> {
        let probe = x_s + dir * m.max(1.0) * opts.dx;
        let b = field.essential(probe)?.branch;
        if opts.offset == 0 {
            return on(b, x_s);
        }
        let near = on(b, x_s + dir * m * opts.dx)?;
        let far = on(b, x_s + dir * (m + 1.0) * opts.dx)?;
        Ok((
            near.0 + m * (near.0 - far.0),
            near.1 + m * (near.1 - far.1),
            near.2 + m * (near.2 - far.2),
        ))
    };
    let l = side(-1.0)?;
    let r = side(1.0)?;
    let velocity = stratum_velocity(sym, x_s, t, l.2, r.2)?;
    Ok((
        SideState {
            r_left: l.0,
            r_right: r.0,
            u_left: l.1,
            u_right: r.1,
            velocity,
        },
        l.2,
        r.2,
    ))
}

/// Labels reaching `x_s` on the essential branches from the left and from the right.
pub fn side_labels(density: &RegularDensity<'_>, k: usize, x_s: f64, opts: &SideOptions) -> Result<(f64, f64)> {
    let field = density.field(k);
    let m = (opts.offset as f64).max(1.0);
    let side_label = |probe: f64| -> Result<f64> {
        let b = field.essential(probe)?.branch;
        field
            .branch(b)
            .candidate(x_s)
            .map(|c| c.label)
            .ok_or(Error::Uncovered { x: x_s, gap_lo: probe, gap_hi: x_s })
    };
    Ok((side_label(x_s - m * opts.dx)?, side_label(x_s + m * opts.dx)?))
}

/// Lagrangian mass `int rho0 exp(-int a) dx0` of the labels between the two essential sides of `x_s`.
pub fn swallowed_mass(density: &RegularDensity<'_>, k: usize, x_s: f64, opts: &SideOptions) -> Result<f64> {
    let (la, lb) = side_labels(density, k, x_s, opts)?;
    Ok(density.label_mass(k, la, lb))
}

/// Amplitudes of the kink strata of a plain fan, advanced by the jump ODE with Kirchhoff merges.
///
/// A stratum born at a caustic starts from the mass its fold has swallowed by the first
/// sample (zero at the caustic instant). At a merge both parents are advanced
/// from their last sample to the crossing instant and the child starts from the sum.
pub fn track_strata(
    sym: &HamiltonianSymbol,
    density: &RegularDensity<'_>,
    tracks: &[KinkTrack],
    reaction: &Reaction,
    opts: &SideOptions,
) -> Result<(Vec<ShockStratum>, Vec<MergeEvent>)> {
    let fan = density.fan();
    let mut strata: Vec<ShockStratum> = Vec::new();
    let mut last_side: Vec<SideState> = Vec::new();
    let mut merges = Vec::new();
    let kidx = |t: f64| {
        fan.time_index(t)
            .ok_or_else(|| Error::InvalidInput(format!("kink sample time {t} is not a fan grid time")))
    };
    for tr in tracks {
        if tr.id != strata.len() {
            return Err(Error::InvalidInput("kink tracks must be numbered consecutively".into()));
        }
        let k0 = kidx(tr.samples[0].0)?;
        let t0 = fan.tgrid()[k0];
        let (mut side, pl, pr) = side_state(sym, density, k0, tr.samples[0].1, opts)?;
        let mut path = Vec::with_capacity(tr.samples.len() + 1);
        let mut e;
        if tr.parents.len() == 2 {
            let (a, b) = (tr.parents[0], tr.parents[1]);
            let (child, _) = merge_strata(sym, &strata[a], &strata[b], tr.id)?;
            let (t_m, x_m) = (child.birth_t.min(t0), child.path[0].x);
            let mut es = [0.0; 2];
            for (slot, &pid) in [a, b].iter().enumerate() {
                let last = *strata[pid].last();
                let dt = t_m - last.t;
                let ps = last_side[pid];
                let em = if dt > 0.0 {
                    amplitude_step(last.e, &ps, &ps, &ps, reaction, dt)?
                } else {
                    last.e
                };
                strata[pid].path.push(StratumSample {
                    t: t_m,
                    x: x_m,
                    e: em,
                    ..last
                });
                strata[pid].terminated = true;
                es[slot] = em;
            }
            let e3 = es[0] + es[1];
            merges.push(MergeEvent {
                t: t_m,
                x: x_m,
                parents: (a, b),
                child: tr.id,
                e1: es[0],
                e2: es[1],
                e3,
            });
            path.push(StratumSample {
                t: t_m,
                x: x_m,
                velocity: side.velocity,
                e: e3,
                p_left: pl,
                p_right: pr,
            });
            e = if t0 > t_m {
                amplitude_step(e3, &side, &side, &side, reaction, t0 - t_m)?
            } else {
                e3
            };
        } else if !tr.parents.is_empty() {
            e = tr.parents.iter().map(|&pid| strata[pid].last().e).sum();
        } else {
            // birth layer: the rate grows like (t - t_birth)^(-1/2), so the mass swallowed
            // before the first sample is taken from the label map directly
            e = swallowed_mass(density, k0, tr.samples[0].1, opts)?;
        }
        path.push(StratumSample {
            t: t0,
            x: tr.samples[0].1,
            velocity: side.velocity,
            e,
            p_left: pl,
            p_right: pr,
        });
        for s in tr.samples.iter().skip(1) {
            let k = kidx(s.0)?;
            let (next, npl, npr) = side_state(sym, density, k, s.1, opts)?;
            let prev = *path.last().unwrap();
            let dt = fan.tgrid()[k] - prev.t;
            let (half, _, _) = side_state_at(sym, density, prev.t + 0.5 * dt, 0.5 * (prev.x + s.1), opts)?;
            e = amplitude_step(e, &side, &half, &next, reaction, dt)?;
            side = next;
            path.push(StratumSample {
                t: fan.tgrid()[k],
                x: s.1,
                velocity: side.velocity,
                e,
                p_left: npl,
                p_right: npr,
            });
        }
        strata.push(ShockStratum {
            id: tr.id,
            birth_t: tr.birth_t,
            parents: tr.parents.clone(),
            path,
            terminated: tr.terminated,
        });
        last_side.push(side);
    }
    Ok((strata, merges))
}

/// CSV `id,t,x,velocity,e`.
pub fn write_strata_csv<W: Write>(strata: &[ShockStratum], mut w: W) -> Result<()> {
    writeln!(w, "id,t,x,velocity,e")?;
    for s in strata {
        for q in &s.path {
            writeln!(w, "{},{},{},{},{}", s.id, num(q.t), num(q.x), num(q.velocity), num(q.e))?;
        }
    }
    Ok(())
}

/// Merge graph as JSON: nodes are strata, edges point parent to child.
pub fn merge_graph_json(strata: &[ShockStratum]) -> serde_json::Value {
    let nodes: Vec<_> = strata
        .iter()
        .map(|s| serde_json::json!({"id": s.id, "birth_t": s.birth_t, "terminated": s.terminated}))
        .collect();
    let edges: Vec<_> = strata
        .iter()
        .flat_map(|s| s.parents.iter().map(move |p| serde_json::json!({"from": p, "to": s.id})))
        .collect();
    serde_json::json!({"nodes": nodes, "edges": edges})
}

/// Standard Gaussian `omega(eta)`.
pub fn gaussian_kernel(eta: f64) -> f64 {
    (-0.5 * eta * eta).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Regularized square-root defect for one `eps`.
pub struct WeakProblem<'a> {
    pub r: &'a (dyn Fn(f64) -> f64 + Sync),
    pub zeta: &'a (dyn Fn(f64) -> f64 + Sync),
    pub window: (f64, f64),
    pub e: f64,
    pub position: f64,
}

/// `int (sqrt(R + (e/eps) omega((x - X)/eps)) - sqrt(R)) zeta dx` for each `eps`, with the log-log slope.
pub fn weak_asymptotic_residual(problem: &WeakProblem<'_>, eps_list: &[f64]) -> Result<(Vec<f64>, f64)> {
    if problem.e < 0.0 {
        return Err(Error::NegativeRadicand { value: problem.e, x: problem.position });
    }
    let mut out = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        if !(eps > 0.0) {
            return Err(Error::InvalidInput(format!("eps = {eps} must be positive")));
        }
        let integrand = |x: f64| -> Result<f64> {
            let rv = (problem.r)(x);
            let rad = rv + problem.e / eps * gaussian_kernel((x - problem.position) / eps);
            if rv < 0.0 || rad < 0.0 {
                return Err(Error::NegativeRadicand { value: rv.min(rad), x });
            }
            Ok((rad.sqrt() - rv.sqrt()) * (problem.zeta)(x))
        };
        let (a, b) = problem.window;
        let near = (problem.position - 40.0 * eps, problem.position + 40.0 * eps);
        let pieces = [(a, near.0.clamp(a, b)), (near.0.clamp(a, b), near.1.clamp(a, b)), (near.1.clamp(a, b), b)];
        let mut total = 0.0;
        for (idx, (lo, hi)) in pieces.iter().enumerate() {
            if hi <= lo {
                continue;
            }
            let m = if idx == 1 { 8001 } else { 4001 };
            let h = (hi - lo) / (m - 1) as f64;
            let vals = (0..m).map(|i| integrand(lo + i as f64 * h)).collect::<Result<Vec<f64>>>()?;
            total += simpson(&vals, h);
        }
        out.push(total);
    }
    let slope = if out.iter().all(|v| *v > 0.0) && eps_list.len() >= 2 {
        crate::io::loglog_slope(eps_list, &out)
    } else {
        f64::NAN
    };
    Ok((out, slope))
}
