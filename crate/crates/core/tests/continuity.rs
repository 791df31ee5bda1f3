use tunnel_core::continuity::*;
use tunnel_core::hamflow::{detect_caustic, evolve_fan, HamiltonianFlow, TrajectoryFan};
use tunnel_core::io::linspace;
use tunnel_core::manifold::{singular_support, SupportOptions};
use tunnel_core::{Error, HamiltonianSymbol, InitialDensity, InitialPhase};

fn heat() -> HamiltonianSymbol {
    HamiltonianSymbol::quadratic(1.0)
}

fn fan(phase: InitialPhase, labels: (f64, f64, usize), t_end: f64, nt: usize) -> TrajectoryFan {
    evolve_fan(&heat(), linspace(labels.0, labels.1, labels.2), &phase, linspace(0.0, t_end, nt), Default::default()).unwrap()
}

#[test]
fn rest_field_transports_nothing() {
    let f = fan(InitialPhase::Quadratic { curvature: 0.0 }, (-2.0, 2.0, 401), 1.0, 11);
    let g = InitialDensity::Gaussian { center: 0.2, width: 0.5, mass: 1.0 };
    let d = regular_density(&heat(), &f, &g, &ARule::Zero, &[]).unwrap();
    for &x in &[-1.0, 0.0, 0.7] {
        assert!((d.at(x, 10).unwrap() - g.value(x)).abs() < 1e-12);
    }
    let d = regular_density(&heat(), &f, &g, &ARule::Constant { alpha: 0.7 }, &[]).unwrap();
    for &x in &[-1.0, 0.0, 0.7] {
        assert!((d.at(x, 10).unwrap() - g.value(x) * (-0.7f64).exp()).abs() < 1e-12);
    }
}

#[test]
fn convex_density_is_inverse_jacobian() {
    let f = fan(InitialPhase::TanhPlus, (-6.0, 6.0, 6001), 1.0, 11);
    let d = regular_density(&heat(), &f, &InitialDensity::Constant { value: 1.0 }, &ARule::Zero, &[]).unwrap();
    for &x in &[-1.0, 0.0, 1.5, 3.0] {
        // invert x = x0 + 2t (1 + tanh x0) by bisection
        let (mut lo, mut hi) = (-6.0, 6.0);
        for _ in 0..100 {
            let m: f64 = 0.5 * (lo + hi);
            if m + 2.0 * (1.0 + m.tanh()) < x {
                lo = m;
            } else {
                hi = m;
            }
        }
        let x0: f64 = 0.5 * (lo + hi);
        let oracle = 1.0 / (1.0 + 2.0 / x0.cosh().powi(2));
        assert!((d.at(x, 10).unwrap() - oracle).abs() < 1e-5, "x = {x}");
    }
}

#[test]
fn crossing_without_strata_is_an_error() {
    let f = fan(InitialPhase::TanhMinus, (-3.0, 3.0, 601), 1.0, 11);
    let err = regular_density(&heat(), &f, &InitialDensity::default(), &ARule::Zero, &[]).err().unwrap();
    match err {
        Error::Crossing { t, .. } => assert!(t > 0.5 && t <= 0.6 + 1e-12),
        other => panic!("{other}"),
    }
}

struct Merge {
    fan: TrajectoryFan,
    tracks: Vec<tunnel_core::manifold::KinkTrack>,
    rho0: InitialDensity,
}

fn merge_setup() -> Merge {
    let sym = heat();
    let f = fan(InitialPhase::TwoStep { slope: 0.0, separation: 1.5 }, (-11.0, 11.0, 5501), 1.5, 151);
    let events = detect_caustic(&HamiltonianFlow::new(&sym), &f, 1e-7).unwrap();
    let opts = SupportOptions { x_window: (-4.0, 4.0), nx: 4001, ..Default::default() };
    let tracks = singular_support(&f, f.tgrid(), &opts, &events).unwrap();
    Merge { fan: f, tracks, rho0: InitialDensity::Bump { center: 0.0, half_width: 3.0, mass: 1.0 } }
}

#[test]
fn two_shocks_merge_conserving_mass() {
    let sym = heat();
    let m = merge_setup();
    assert_eq!(m.tracks.len(), 3, "{:?}", m.tracks.iter().map(|t| (t.id, t.birth_t, t.parents.clone())).collect::<Vec<_>>());
    assert_eq!(m.tracks[2].parents, vec![0, 1]);
    let tubes: Vec<_> = m.tracks.iter().map(|t| StratumTube::from_track(t, 1e-2)).collect();
    let d = regular_density(&sym, &m.fan, &m.rho0, &ARule::Zero, &tubes).unwrap();
    let (strata, merges) = track_strata(&sym, &d, &m.tracks, &Reaction::none(), &SideOptions { offset: 0, ..Default::default() }).unwrap();
    assert_eq!(merges.len(), 1);
    assert_eq!(merges[0].e3, merges[0].e1 + merges[0].e2);
    assert!(merges[0].e1 > 0.0 && merges[0].e2 > 0.0);
    let mut worst: f64 = 0.0;
    for k in 0..m.fan.n_times() {
        let t = m.fan.tgrid()[k];
        let mut kinks = Vec::new();
        let mut e_sum = 0.0;
        for s in &strata {
            if let Some(q) = s.path.iter().rev().find(|q| (q.t - t).abs() < 1e-12) {
                kinks.push(q.x);
                e_sum += q.e;
            }
        }
        // a parent's merge sample and the child share the instant only when it falls on the grid
        let regular = d.integral(k, -4.0, 4.0, &kinks).unwrap();
        let total = regular + e_sum;
        worst = worst.max((total - 1.0).abs());
    }
    eprintln!("mass drift {worst:e}");
    assert!(worst <= 1e-3, "mass drift {worst}");
}

fn bump(z: f64) -> f64 {
    if z.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - z * z)).exp()
    }
}

fn dbump(z: f64) -> f64 {
    if z.abs() >= 1.0 {
        0.0
    } else {
        bump(z) * (-2.0 * z / (1.0 - z * z).powi(2))
    }
}

/// Space-time bump centred at `(xc, tc)` with half-widths `(wx, wt)`: value, d/dt, d/dx.
fn zeta(x: f64, t: f64, c: (f64, f64, f64, f64)) -> (f64, f64, f64) {
    let (xc, wx, tc, wt) = c;
    let (zx, zt) = ((x - xc) / wx, (t - tc) / wt);
    (bump(zx) * bump(zt), bump(zx) * dbump(zt) / wt, dbump(zx) * bump(zt) / wx)
}

/// Space-time integrals of the weak form in label coordinates, trapezoid in `t`.
/// Returns `(int int R (zeta_t + u zeta_x - a zeta), int e (zeta_t + X' zeta_x) at X, scale)`.
fn weak_terms(
    sym: &HamiltonianSymbol,
    d: &RegularDensity<'_>,
    strata: &[ShockStratum],
    alpha: f64,
    c: (f64, f64, f64, f64),
) -> (f64, f64, f64) {
    let f = d.fan();
    let (mut regular, mut singular, mut scale) = (0.0, 0.0, 0.0);
    for k in 0..f.n_times() {
        let t = f.tgrid()[k];
        let wt = if k == 0 || k == f.n_times() - 1 { 0.5 } else { 1.0 } * (f.tgrid()[1] - f.tgrid()[0]);
        let mut swallowed = Vec::new();
        for s in strata {
            if let Some(q) = s.path.iter().find(|q| (q.t - t).abs() < 1e-12) {
                let (z, zt, zx) = zeta(q.x, t, c);
                let _ = z;
                singular += wt * q.e * (zt + q.velocity * zx);
                swallowed.push(side_labels(d, k, q.x, &SideOptions { offset: 0, ..Default::default() }).unwrap());
            }
        }
        let ls = f.labels();
        for i in 0..ls.len() - 1 {
            // trapezoid over label cells that stay essential
            let mid = 0.5 * (ls[i] + ls[i + 1]);
            if swallowed.iter().any(|(a, b)| mid > a.min(*b) && mid < a.max(*b)) {
                continue;
            }
            let h = ls[i + 1] - ls[i];
            for j in [i, i + 1] {
                let st = f.state(k, j);
                let (z, zt, zx) = zeta(st.x, t, c);
                let u = sym.grad_p(st.x, st.p, t).unwrap();
                let w = d.label_weight(k, j);
                regular += wt * 0.5 * h * w * (zt + u * zx - alpha * z);
                scale += wt * 0.5 * h * w * (zt.abs() + (u * zx).abs());
            }
        }
    }
    (regular, singular, scale)
}

#[test]
fn regular_part_is_a_weak_solution_away_from_strata() {
    let sym = heat();
    let f = fan(InitialPhase::TanhPlus, (-8.0, 8.0, 4001), 1.0, 201);
    let alpha = 0.4;
    let d = regular_density(&sym, &f, &InitialDensity::Gaussian { center: 0.0, width: 0.7, mass: 1.0 }, &ARule::Constant { alpha }, &[]).unwrap();
    let (r, _, scale) = weak_terms(&sym, &d, &[], alpha, (1.0, 1.0, 0.5, 0.4));
    assert!(r.abs() <= 1e-2 * scale, "{r} vs {scale}");
    // the opposite sign of the absorption term is detectably wrong
    let (wrong, _, _) = weak_terms(&sym, &d, &[], -alpha, (1.0, 1.0, 0.5, 0.4));
    assert!(wrong.abs() > 1e-1 * scale);
}

#[test]
fn full_identity_with_stratum_term() {
    let sym = heat();
    let f = fan(InitialPhase::TanhMinus, (-8.0, 6.0, 7001), 1.2, 241);
    let events = detect_caustic(&HamiltonianFlow::new(&sym), &f, 1e-7).unwrap();
    let tracks = singular_support(&f, f.tgrid(), &SupportOptions { x_window: (-1.0, 4.0), nx: 2501, ..Default::default() }, &events).unwrap();
    let tubes: Vec<_> = tracks.iter().map(|t| StratumTube::from_track(t, 1e-2)).collect();
    let d = regular_density(&sym, &f, &InitialDensity::Bump { center: 0.0, half_width: 2.0, mass: 1.0 }, &ARule::Zero, &tubes).unwrap();
    let (strata, _) = track_strata(&sym, &d, &tracks, &Reaction::none(), &SideOptions { offset: 0, ..Default::default() }).unwrap();
    let c = (1.8, 0.6, 0.9, 0.25);
    let (r, s, scale) = weak_terms(&sym, &d, &strata, 0.0, c);
    assert!(s.abs() > 0.1 * r.abs(), "the stratum term must matter: {s} vs {r}");
    assert!((r + s).abs() <= 1e-2 * scale, "residual {} of {scale}", r + s);
}

#[test]
fn tube_velocity_does_not_touch_regular_part() {
    let sym = heat();
    let f = fan(InitialPhase::TanhMinus, (-8.0, 6.0, 3501), 1.0, 101);
    let events = detect_caustic(&HamiltonianFlow::new(&sym), &f, 1e-7).unwrap();
    let tracks = singular_support(&f, f.tgrid(), &SupportOptions { x_window: (-1.0, 4.0), nx: 1001, ..Default::default() }, &events).unwrap();
    let tubes: Vec<_> = tracks.iter().map(|t| StratumTube::from_track(t, 5e-2)).collect();
    // a different speed inside the tube, same position at the sample times up to the tube width
    let wobbly: Vec<_> = tubes
        .iter()
        .map(|t| StratumTube { path: t.path.iter().enumerate().map(|(i, p)| (p.0, p.1 + if i % 2 == 0 { 0.0 } else { 1e-2 })).collect(), ..t.clone() })
        .collect();
    let rho0 = InitialDensity::Bump { center: 0.0, half_width: 2.0, mass: 1.0 };
    let a = regular_density(&sym, &f, &rho0, &ARule::Zero, &tubes).unwrap();
    let b = regular_density(&sym, &f, &rho0, &ARule::Zero, &wobbly).unwrap();
    for k in (0..f.n_times()).step_by(5) {
        for &x in &linspace(-1.0, 4.0, 501) {
            match (a.at(x, k), b.at(x, k)) {
                (Ok(u), Ok(v)) => assert_eq!(u.to_bits(), v.to_bits()),
                (Err(Error::OnStratum { .. }), _) | (_, Err(Error::OnStratum { .. })) => {}
                other => panic!("{other:?}"),
            }
        }
    }
}

#[test]
fn weak_residual_decays_like_sqrt_eps() {
    let r = |_: f64| 1.0;
    let z = |_: f64| 1.0;
    let p = WeakProblem { r: &r, zeta: &z, window: (-1.0, 1.0), e: 1.0, position: 0.0 };
    let eps = [1e-2, 1e-3, 1e-4];
    let (res, slope) = weak_asymptotic_residual(&p, &eps).unwrap();
    assert!(slope >= 0.4, "slope {slope}");
    let tail = (res[1] / res[2]).ln() / (eps[1] / eps[2]).ln();
    assert!((tail - 0.5).abs() < 0.05, "tail slope {tail}, {res:?}");
    // change of variables: residual / sqrt(eps) -> int sqrt(omega(eta)) d eta = 2 sqrt(pi) (2 pi)^(-1/4)
    let limit = 2.0 * std::f64::consts::PI.sqrt() / (2.0 * std::f64::consts::PI).powf(0.25);
    assert!((res[2] / eps[2].sqrt() - limit).abs() < 0.05 * limit, "{}", res[2] / eps[2].sqrt());
    let far = |x: f64| if x > 0.5 { 1.0 } else { 0.0 };
    let p = WeakProblem { zeta: &far, ..p };
    let (res, _) = weak_asymptotic_residual(&p, &[1e-3, 1e-4]).unwrap();
    assert!(res.iter().all(|v| v.abs() <= 1e-12), "{res:?}");
}
