//! Lagrangian curves, single-valued branches and the minimal-action global phase.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamflow::{CausticEvent, TrajectoryFan};
use crate::io::{linspace, num};

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub label: f64,
    pub x: f64,
    pub p: f64,
    pub s: f64,
    pub j: f64,
}

/// Snapshot of the fan at a fixed time, ordered by label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagrangianCurve {
    pub t: f64,
    pub points: Vec<CurvePoint>,
}

impl LagrangianCurve {
    /// Largest jump in `x` between consecutive points.
    pub fn max_gap(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].x - w[0].x).abs())
            .fold(0.0, f64::max)
    }

    /// Rejects curves too coarse for their projection to be resolved.
    pub fn check_resolution(&self, bound: f64) -> Result<()> {
        let gap = self.max_gap();
        if self.points.len() < 2 || !(gap <= bound) {
            return Err(Error::ImproperProjection(format!(
                "consecutive points {gap:e} apart exceed resolution bound {bound:e} at t = {}",
                self.t
            )));
        }
        Ok(())
    }

    pub fn x_range(&self) -> (f64, f64) {
        self.points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), q| (lo.min(q.x), hi.max(q.x)))
    }
}

/// Time slice of the fan; linear interpolation in `t` between grid times.
pub fn snapshot(fan: &TrajectoryFan, t: f64) -> Result<LagrangianCurve> {
    let k = fan.bracket(t)?;
    let (t0, t1) = (fan.tgrid()[k], fan.tgrid()[k + 1]);
    let w = if t == t0 { 0.0 } else { (t - t0) / (t1 - t0) };
    let lerp = |a: f64, b: f64| if w == 0.0 { a } else if w == 1.0 { b } else { a + w * (b - a) };
    let points = fan
        .labels()
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let a = fan.state(k, i);
            let b = fan.state(k + 1, i);
            CurvePoint {
                label,
                x: lerp(a.x, b.x),
                p: lerp(a.p, b.p),
                s: lerp(a.s, b.s),
                j: lerp(a.j, b.j),
            }
        })
        .collect();
    Ok(LagrangianCurve { t, points })
}

/// One maximal monotone run of the curve, stored in increasing `x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: usize,
    /// Curve indices of the run, inclusive; turning points are shared with neighbours.
    pub first: usize,
    pub last: usize,
    pub increasing: bool,
    xs: Vec<f64>,
    ss: Vec<f64>,
    ps: Vec<f64>,
    js: Vec<f64>,
    labels: Vec<f64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub s: f64,
    pub p: f64,
    pub j: f64,
    pub label: f64,
    pub branch: usize,
}

impl Branch {
    pub fn x_min(&self) -> f64 {
        self.xs[0]
    }

    pub fn x_max(&self) -> f64 {
        *self.xs.last().unwrap()
    }

    pub fn covers(&self, x: f64) -> bool {
        x >= self.x_min() && x <= self.x_max()
    }

    /// Monotone inverse interpolation; cubic Hermite for `S` using `dS/dx = p`.
    pub fn candidate(&self, x: f64) -> Option<Candidate> {
        if !self.covers(x) {
            return None;
        }
        let n = self.xs.len();
        if n == 1 {
            return Some(Candidate {
                s: self.ss[0],
                p: self.ps[0],
                j: self.js[0],
                label: self.labels[0],
                branch: self.id,
            });
        }
        let i = self.xs.partition_point(|v| *v <= x).clamp(1, n - 1) - 1;
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let h = x1 - x0;
        if h <= 0.0 {
            return Some(Candidate {
                s: self.ss[i],
                p: self.ps[i],
                j: self.js[i],
                label: self.labels[i],
                branch: self.id,
            });
        }
        let w = (x - x0) / h;
        let lerp = |v: &[f64]| v[i] + w * (v[i + 1] - v[i]);
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * w) * (1.0 - w) * (1.0 - w),
            w * (1.0 - w) * (1.0 - w),
            w * w * (3.0 - 2.0 * w),
            w * w * (w - 1.0),
        );
        let s = h00 * self.ss[i] + h10 * h * self.ps[i] + h01 * self.ss[i + 1] + h11 * h * self.ps[i + 1];
        Some(Candidate {
            s,
            p: lerp(&self.ps),
            j: lerp(&self.js),
            label: lerp(&self.labels),
            branch: self.id,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchField {
    pub t: f64,
    pub branches: Vec<Branch>,
}

/// Splits the curve into maximal strictly monotone runs of `x`.
pub fn branch_decompose(curve: &LagrangianCurve) -> BranchField {
    let pts = &curve.points;
    let mut runs: Vec<(usize, usize, bool)> = Vec::new();
    if pts.len() == 1 {
        runs.push((0, 0, true));
    }
    let mut start = 0;
    let mut dir: Option<bool> = None;
    for i in 0..pts.len().saturating_sub(1) {
        let dx = pts[i + 1].x - pts[i].x;
        let here = if dx == 0.0 { dir.unwrap_or(true) } else { dx > 0.0 };
        match dir {
            None => dir = Some(here),
            Some(d) if d != here => {
                runs.push((start, i, d));
                start = i;
                dir = Some(here);
            }
            _ => {}
        }
    }
    if let Some(d) = dir {
        runs.push((start, pts.len() - 1, d));
    }
    let branches = runs
        .into_iter()
        .enumerate()
        .map(|(id, (first, last, increasing))| {
            let mut idx: Vec<usize> = (first..=last).collect();
            if !increasing {
                idx.reverse();
            }
            let pick = |f: fn(&CurvePoint) -> f64| idx.iter().map(|&k| f(&pts[k])).collect::<Vec<f64>>();
            Branch {
                id,
                first,
                last,
                increasing,
                xs: pick(|q| q.x),
                ss: pick(|q| q.s),
                ps: pick(|q| q.p),
                js: pick(|q| q.j),
                labels: pick(|q| q.label),
            }
        })
        .collect();
    BranchField { t: curve.t, branches }
}

impl BranchField {
    /// Every branch lying over `x`, in branch order.
    pub fn candidates(&self, x: f64) -> Vec<Candidate> {
        self.branches.iter().filter_map(|b| b.candidate(x)).collect()
    }

    /// Essential candidate at `x`: minimal action, ties to the lowest branch id.
    pub fn essential(&self, x: f64) -> Result<Candidate> {
        select_min(&self.candidates(x)).ok_or_else(|| self.uncovered(x))
    }

    pub fn coverage(&self) -> (f64, f64) {
        self.branches
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), b| (lo.min(b.x_min()), hi.max(b.x_max())))
    }

    fn uncovered(&self, x: f64) -> Error {
        let mut gap_lo = f64::NEG_INFINITY;
        let mut gap_hi = f64::INFINITY;
        for b in &self.branches {
            if b.x_max() < x {
                gap_lo = gap_lo.max(b.x_max());
            }
            if b.x_min() > x {
                gap_hi = gap_hi.min(b.x_min());
            }
        }
        Error::Uncovered { x, gap_lo, gap_hi }
    }

    /// Number of branches over `x`.
    pub fn multiplicity(&self, x: f64) -> usize {
        self.branches.iter().filter(|b| b.covers(x)).count()
    }

    /// Outer (first and last) branches of a three-branch fold.
    pub fn branch(&self, id: usize) -> &Branch {
        &self.branches[id]
    }
}

/// Minimal action with ties to the lowest branch id.
pub fn select_min(cands: &[Candidate]) -> Option<Candidate> {
    let mut best: Option<Candidate> = None;
    for c in cands {
        match best {
            Some(b) if !(c.s < b.s || (c.s == b.s && c.branch < b.branch)) => {}
            _ => best = Some(*c),
        }
    }
    best
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kink {
    pub x: f64,
    pub s: f64,
    pub left_branch: usize,
    pub right_branch: usize,
    pub p_left: f64,
    pub p_right: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalPhase {
    pub t: f64,
    pub xs: Vec<f64>,
    pub phi: Vec<f64>,
    pub winner: Vec<usize>,
    pub p_win: Vec<f64>,
    pub kinks: Vec<Kink>,
}

pub const DEFAULT_XTOL: f64 = 1e-6;

/// Global phase on `xgrid` with kinks refined to `xtol`.
pub fn min_action(field: &BranchField, xgrid: &[f64], xtol: f64) -> Result<GlobalPhase> {
    let mut phi = Vec::with_capacity(xgrid.len());
    let mut winner = Vec::with_capacity(xgrid.len());
    let mut p_win = Vec::with_capacity(xgrid.len());
    for &x in xgrid {
        let c = field.essential(x)?;
        phi.push(c.s);
        winner.push(c.branch);
        p_win.push(c.p);
    }
    let mut kinks = Vec::new();
    for i in 0..xgrid.len().saturating_sub(1) {
        if winner[i] != winner[i + 1] {
            if let Some(k) = refine_kink(field, xgrid[i], xgrid[i + 1], winner[i], winner[i + 1], xtol) {
                kinks.push(k);
            }
        }
    }
    Ok(GlobalPhase {
        t: field.t,
        xs: xgrid.to_vec(),
        phi,
        winner,
        p_win,
        kinks,
    })
}

/// Bisection on `S_a - S_b` between adjacent grid points with different winners.
fn refine_kink(field: &BranchField, lo: f64, hi: f64, a: usize, b: usize, xtol: f64) -> Option<Kink> {
    let ba = field.branch(a);
    let bb = field.branch(b);
    // the two winners share the interval only where both project
    let (l, h) = (lo.max(ba.x_min()).max(bb.x_min()), hi.min(ba.x_max()).min(bb.x_max()));
    let diff = |x: f64| -> Option<f64> { Some(ba.candidate(x)?.s - bb.candidate(x)?.s) };
    let kink_at = |x: f64| -> Option<Kink> {
        let ca = ba.candidate(x).or_else(|| field.essential(x).ok())?;
        let cb = bb.candidate(x).or_else(|| field.essential(x).ok())?;
        Some(Kink {
            x,
            s: ca.s.min(cb.s),
            left_branch: a,
            right_branch: b,
            p_left: ca.p,
            p_right: cb.p,
        })
    };
    if !(l <= h) {
        // winners never coexist: the switch sits at a coverage edge
        let x = if ba.x_max() < hi { ba.x_max() } else { bb.x_min() };
        return kink_at(x.clamp(lo, hi));
    }
    let (mut x0, mut x1) = (l, h);
    let (mut f0, f1) = (diff(x0)?, diff(x1)?);
    if f0 == 0.0 {
        return kink_at(x0);
    }
    if f0.signum() == f1.signum() {
        return kink_at(if f0.abs() < f1.abs() { x0 } else { x1 });
    }
    while x1 - x0 > xtol {
        let m = 0.5 * (x0 + x1);
        let fm = diff(m)?;
        if fm == 0.0 {
            return kink_at(m);
        }
        if fm.signum() == f0.signum() {
            x0 = m;
            f0 = fm;
        } else {
            x1 = m;
        }
    }
    kink_at(0.5 * (x0 + x1))
}

impl GlobalPhase {
    /// CSV `t,x,phi,winner,p_win`.
    pub fn write_csv<W: Write>(&self, mut w: W, header: bool) -> Result<()> {
        if header {
            writeln!(w, "t,x,phi,winner,p_win")?;
        }
        for i in 0..self.xs.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                num(self.t),
                num(self.xs[i]),
                num(self.phi[i]),
                self.winner[i],
                num(self.p_win[i])
            )?;
        }
        Ok(())
    }
}

/// Global phase of the fan at time `t` on `xgrid`.
pub fn global_phase(fan: &TrajectoryFan, t: f64, xgrid: &[f64]) -> Result<GlobalPhase> {
    let field = branch_decompose(&snapshot(fan, t)?);
    min_action(&field, xgrid, DEFAULT_XTOL)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinkTrack {
    pub id: usize,
    pub birth_t: f64,
    pub birth_x: f64,
    pub parents: Vec<usize>,
    /// `(t, x_kink, p_left, p_right)` samples.
    pub samples: Vec<(f64, f64, f64, f64)>,
    pub terminated: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportOptions {
    pub x_window: (f64, f64),
    pub nx: usize,
    pub xtol: f64,
    /// Largest displacement between consecutive samples of one stratum.
    pub link_radius: f64,
    /// Caustic events within this distance of a new stratum date its birth.
    pub birth_radius: f64,
}

impl Default for SupportOptions {
    fn default() -> Self {
        SupportOptions {
            x_window: (-1.0, 1.0),
            nx: 2001,
            xtol: DEFAULT_XTOL,
            link_radius: 0.2,
            birth_radius: 0.25,
        }
    }
}

/// Kinks of the global phase linked across `times` into strata, with merges recorded as parents.
pub fn singular_support(
    fan: &TrajectoryFan,
    times: &[f64],
    opts: &SupportOptions,
    caustics: &[CausticEvent],
) -> Result<Vec<KinkTrack>> {
    let mut tracks: Vec<KinkTrack> = Vec::new();
    let mut active: Vec<usize> = Vec::new();
    for &t in times {
        let field = branch_decompose(&snapshot(fan, t)?);
        let (cl, ch) = field.coverage();
        let lo = opts.x_window.0.max(cl);
        let hi = opts.x_window.1.min(ch);
        if !(hi > lo) {
            continue;
        }
        let phase = min_action(&field, &linspace(lo, hi, opts.nx.max(2)), opts.xtol)?;
        let kinks = phase.kinks;
        // nearest active stratum for each kink
        let claims: Vec<Option<usize>> = kinks
            .iter()
            .map(|k| {
                active
                    .iter()
                    .copied()
                    .filter(|&a| (last_x(&tracks[a]) - k.x).abs() <= opts.link_radius)
                    .min_by(|&a, &b| {
                        (last_x(&tracks[a]) - k.x)
                            .abs()
                            .total_cmp(&(last_x(&tracks[b]) - k.x).abs())
                    })
            })
            .collect();
        let mut next_active = Vec::new();
        let mut used = vec![false; kinks.len()];
        for (ki, k) in kinks.iter().enumerate() {
            if used[ki] {
                continue;
            }
            let sample = (t, k.x, k.p_left, k.p_right);
            match claims[ki] {
                Some(a) => {
                    // active strata that lost their own kink and sit within reach of this one merged into it
                    let mut parents: Vec<usize> = active
                        .iter()
                        .copied()
                        .filter(|&b| {
                            (last_x(&tracks[b]) - k.x).abs() <= opts.link_radius
                                && !claims.iter().enumerate().any(|(kj, c)| kj != ki && *c == Some(b))
                        })
                        .collect();
                    if !parents.contains(&a) {
                        parents.push(a);
                    }
                    parents.sort_unstable();
                    if parents.len() == 1 {
                        tracks[a].samples.push(sample);
                        next_active.push(a);
                    } else {
                        for &p in &parents {
                            tracks[p].terminated = true;
                        }
                        let id = tracks.len();
                        tracks.push(KinkTrack {
                            id,
                            birth_t: t,
                            birth_x: k.x,
                            parents,
                            samples: vec![sample],
                            terminated: false,
                        });
                        next_active.push(id);
                    }
                }
                None => {
                    let id = tracks.len();
                    let (birth_t, birth_x) = caustics
                        .iter()
                        .filter(|e| e.t_star <= t && (e.x_star - k.x).abs() <= opts.birth_radius)
                        .min_by(|a, b| a.t_star.total_cmp(&b.t_star))
                        .map(|e| (e.t_star, e.x_star))
                        .unwrap_or((t, k.x));
                    tracks.push(KinkTrack {
                        id,
                        birth_t,
                        birth_x,
                        parents: Vec::new(),
                        samples: vec![sample],
                        terminated: false,
                    });
                    next_active.push(id);
                }
            }
            used[ki] = true;
        }
        for a in &active {
            if !next_active.contains(a) {
                tracks[*a].terminated = true;
            }
        }
        next_active.sort_unstable();
        next_active.dedup();
        active = next_active;
    }
    Ok(tracks)
}

fn last_x(track: &KinkTrack) -> f64 {
    track.samples.last().map(|s| s.1).unwrap_or(track.birth_x)
}

/// CSV `stratum,t,x_kink`.
pub fn write_support_csv<W: Write>(tracks: &[KinkTrack], mut w: W) -> Result<()> {
    writeln!(w, "stratum,t,x_kink")?;
    for tr in tracks {
        for s in &tr.samples {
            writeln!(w, "{},{},{}", tr.id, num(s.0), num(s.1))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamflow::evolve_fan;
    use crate::initial::InitialPhase;
    use crate::symbol::HamiltonianSymbol;

    fn curve(xs: &[f64]) -> LagrangianCurve {
        LagrangianCurve {
            t: 0.0,
            points: xs
                .iter()
                .enumerate()
                .map(|(i, &x)| CurvePoint {
                    label: i as f64,
                    x,
                    p: 0.0,
                    s: 0.0,
                    j: 1.0,
                })
                .collect(),
        }
    }

    #[test]
    fn monotone_runs() {
        assert_eq!(branch_decompose(&curve(&[0.0, 1.0, 2.0])).branches.len(), 1);
        let f = branch_decompose(&curve(&[0.0, 1.0, 2.0, 1.5, 1.0, 1.8, 3.0]));
        assert_eq!(f.branches.len(), 3);
        assert_eq!((f.branches[1].first, f.branches[1].last), (2, 4));
        assert!(!f.branches[1].increasing);
        assert_eq!(f.multiplicity(1.6), 3);
        assert_eq!(f.candidates(1.6).len(), 3);
        assert_eq!(f.multiplicity(0.5), 1);
    }

    #[test]
    fn uncovered_reports_gap() {
        let f = branch_decompose(&curve(&[0.0, 1.0]));
        match f.essential(2.0) {
            Err(Error::Uncovered { gap_lo, gap_hi, .. }) => {
                assert_eq!(gap_lo, 1.0);
                assert!(gap_hi.is_infinite());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ties_go_to_lowest_branch() {
        let c = |s: f64, branch: usize| Candidate {
            s,
            p: 0.0,
            j: 1.0,
            label: 0.0,
            branch,
        };
        assert_eq!(select_min(&[c(1.0, 2), c(1.0, 0), c(2.0, 1)]).unwrap().branch, 0);
        assert!(select_min(&[]).is_none());
    }

    #[test]
    fn hermite_is_exact_for_cubic_action() {
        // S = x^3 on a coarse increasing branch, p = 3 x^2
        let pts: Vec<CurvePoint> = (0..5)
            .map(|i| {
                let x = i as f64 * 0.5;
                CurvePoint {
                    label: x,
                    x,
                    p: 3.0 * x * x,
                    s: x * x * x,
                    j: 1.0,
                }
            })
            .collect();
        let f = branch_decompose(&LagrangianCurve { t: 0.0, points: pts });
        let c = f.essential(1.3).unwrap();
        assert!((c.s - 1.3f64.powi(3)).abs() < 1e-12);
    }

    #[test]
    fn snapshot_at_zero_is_initial_manifold() {
        let fan = evolve_fan(
            &HamiltonianSymbol::quadratic(1.0),
            linspace(-1.0, 1.0, 11),
            &InitialPhase::TanhMinus,
            linspace(0.0, 1.0, 3),
            Default::default(),
        )
        .unwrap();
        let c = snapshot(&fan, 0.0).unwrap();
        for q in &c.points {
            assert_eq!(q.x, q.label);
            assert_eq!(q.p, 1.0 - q.label.tanh());
        }
        assert!(snapshot(&fan, 1.5).is_err());
        assert!(c.check_resolution(0.5).is_ok());
        assert!(matches!(c.check_resolution(0.1), Err(Error::ImproperProjection(_))));
    }
}
