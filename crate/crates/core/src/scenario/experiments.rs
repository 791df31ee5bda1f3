use crate::continuity::{
    amplitude_step, gaussian_kernel, merge_graph_json, regular_density, stratum_velocity, track_strata, weak_asymptotic_residual,
    write_strata_csv, ARule, Reaction, SideOptions, SideState, StratumTube, WeakProblem,
};
use crate::error::{Error, Result};
use crate::hamflow::{detect_caustic, evolve_fan, jacobian_field, HamiltonianFlow, IntegratorOptions, TrajectoryFan};
use crate::initial::{InitialDensity, InitialPhase};
use crate::io::{csv_table, linear_fit, linspace};
use crate::manifold::{branch_decompose, global_phase, select_min, singular_support, snapshot, write_support_csv, SupportOptions};
use crate::reference::{fd_parabolic_solve, heat_kernel_convolve, time_reversal_check, varadhan_extract, FdOptions};
use crate::surgery::{
    backflow_and_blend, blended_fan_homogeneous, insertion_initial_data, manifold_surgery, search_shift, search_shift_surgered,
    BlendProfile, BlendedFan, StartData, SurgeryReport,
};
use crate::symbol::{Coefficient, HamiltonianSymbol, SymbolKind};

use super::config::{ExpectedCaustic, Experiment, PhaseSpec, Scenario, ShiftSpec, SurgeryMode};
use super::{key, Report};

pub(crate) fn dispatch(sc: &Scenario, rep: &mut Report) -> Result<()> {
    let sym = sc.symbol.build()?;
    match &sc.experiment {
        Experiment::Characteristics {
            expect_caustic,
            expect_no_caustic,
            min_j_at_least,
            caustic_tol,
            richardson,
        } => characteristics(sc, &sym, rep, expect_caustic.as_ref(), *expect_no_caustic, *min_j_at_least, *caustic_tol, *richardson),
        Experiment::Varadhan { .. } => varadhan(sc, &sym, rep),
        Experiment::ReferenceCrosscheck {
            time,
            domain,
            nx,
            width2,
            rel_tol,
            mass_tol,
        } => crosscheck(sc, &sym, rep, *time, *domain, *nx, *width2, *rel_tol, *mass_tol),
        Experiment::TimeReversal {
            time,
            points,
            n_points,
            tol,
            refuse_phase,
            refuse_time,
        } => reversal(sc, &sym, rep, *time, linspace(points[0], points[1], *n_points), *tol, refuse_phase.as_ref(), *refuse_time),
        Experiment::Merge {
            x_window,
            nx,
            tube_half_width,
            mass_tol,
        } => merge(sc, &sym, rep, *x_window, *nx, *tube_half_width, *mass_tol),
        Experiment::Surgery { .. } => surgery(sc, &sym, rep),
        Experiment::Oracles { samples } => oracles(sc, &sym, rep, *samples),
    }
}

fn eps_tag(eps: f64) -> String {
    format!("eps={eps}")
}

/// Strides keeping roughly `cap` entries.
fn stride(n: usize, cap: usize) -> usize {
    n.div_ceil(cap).max(1)
}

fn fan_csv(rep: &mut Report, name: &str, fan: &TrajectoryFan) -> Result<()> {
    let mut buf = Vec::new();
    fan.write_csv(&mut buf, stride(fan.n_labels(), 201), stride(fan.n_times(), 101))?;
    rep.file(name, &String::from_utf8(buf).expect("csv is ascii"))
}

#[allow(clippy::too_many_arguments)]
fn characteristics(
    sc: &Scenario,
    sym: &HamiltonianSymbol,
    rep: &mut Report,
    expect: Option<&ExpectedCaustic>,
    expect_none: bool,
    min_j_at_least: Option<f64>,
    caustic_tol: f64,
    richardson: bool,
) -> Result<()> {
    let phase = sc.initial.phase.resolve()?;
    let opts = IntegratorOptions::with_max_step(sc.grid.dt);
    let fan = evolve_fan(sym, sc.grid.labels(), &phase, sc.grid.times(), opts)?;
    let jac = jacobian_field(&fan);
    let min_j = jac.min_variational();
    let events = detect_caustic(&HamiltonianFlow::new(sym), &fan, caustic_tol)?;
    rep.metric("n_labels", fan.n_labels() as f64);
    rep.metric("min_j", min_j);
    rep.metric("n_caustics", events.len() as f64);
    if let Some(first) = events.first() {
        rep.metric("t_star", first.t_star);
        rep.metric("label_star", first.label_star);
        rep.metric("x_star", first.x_star);
    }
    if let Some(e) = expect {
        match events.first() {
            Some(first) => {
                rep.at_most("caustic_time", (first.t_star - e.t).abs(), e.t_tol);
                rep.at_most("caustic_label", (first.label_star - e.label).abs(), e.label_tol);
            }
            None => rep.check("caustic_time", false, f64::NAN, e.t_tol, "no caustic found"),
        }
    }
    if expect_none {
        rep.check("no_caustic", events.is_empty(), events.len() as f64, 0.0, "");
    }
    if let Some(lb) = min_j_at_least {
        rep.check("min_j", min_j >= lb, min_j, lb, "J must stay above the bound");
    }
    if richardson {
        let fine = evolve_fan(sym, sc.grid.labels(), &phase, sc.grid.times(), IntegratorOptions::with_max_step(sc.grid.dt / 16.0))?;
        let k = fan.n_times() - 1;
        let err = (0..fan.n_labels())
            .map(|i| (fan.state(k, i).x - fine.state(k, i).x).abs())
            .fold(0.0, f64::max);
        rep.metric("trajectory_error", err);
    }
    fan_csv(rep, "fan.csv", &fan)?;
    let rows = fan
        .tgrid()
        .iter()
        .zip(&jac.variational)
        .map(|(t, js)| vec![*t, js.iter().copied().fold(f64::INFINITY, f64::min)]);
    rep.file("jacobian.csv", &csv_table(&["t", "min_j"], rows))?;
    rep.json("caustics.json", &events)
}

/// `-eps ln u` of the log-domain FD solve on the configured domain, plus the grid.
fn fd_phase(
    sym: &HamiltonianSymbol,
    phase: &InitialPhase,
    amp: &InitialDensity,
    domain: [f64; 2],
    cells_per_eps: f64,
    eps: f64,
    t0: f64,
    t: f64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = ((domain[1] - domain[0]) / (eps / cells_per_eps)).round() as usize + 1;
    let xs = linspace(domain[0], domain[1], n);
    let log_u0 = xs
        .iter()
        .map(|&x| {
            let a = amp.value(x);
            if a > 0.0 {
                Ok(-phase.action(x) / eps + a.ln())
            } else {
                Err(Error::Config(format!("the amplitude must be positive on the FD domain (phi0({x}) = {a})")))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let f = fd_parabolic_solve(sym, &xs, &log_u0, eps, &[t0, t], FdOptions::log_domain())?;
    let phi = varadhan_extract(&f)?.swap_remove(1);
    let log_u = f.log_u(1);
    Ok((xs, phi, log_u))
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn varadhan(sc: &Scenario, sym: &HamiltonianSymbol, rep: &mut Report) -> Result<()> {
    let Experiment::Varadhan {
        time,
        window,
        fd_domain,
        cells_per_eps,
        phases,
        bound_factor,
        kink_exclusion,
        kink_eps,
        kink_tol,
        leading_points,
    } = &sc.experiment
    else {
        unreachable!()
    };
    let phases: Vec<PhaseSpec> = if phases.is_empty() { vec![sc.initial.phase.clone()] } else { phases.clone() };
    let amp = &sc.initial.density;
    let mut table = Vec::new();
    for spec in &phases {
        let tag = spec.tag();
        let phase = spec.resolve()?;
        let fan = evolve_fan(sym, sc.grid.labels(), &phase, vec![sc.grid.t_start, *time], Default::default())?;
        let field = branch_decompose(&snapshot(&fan, *time)?);
        let mut errs = Vec::new();
        // leading-term ratios per eps and sample point
        let mut ratios: Vec<Vec<f64>> = Vec::new();
        let mut samples: Vec<f64> = Vec::new();
        for (ie, &eps) in sc.eps.iter().enumerate() {
            let (xs, phi_fd, log_u) = fd_phase(sym, &phase, amp, *fd_domain, *cells_per_eps, eps, sc.grid.t_start, *time)?;
            let idx: Vec<usize> = (0..xs.len()).filter(|&i| xs[i] >= window[0] - 1e-12 && xs[i] <= window[1] + 1e-12).collect();
            let sub: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
            let g = global_phase(&fan, *time, &sub)?;
            let kinks: Vec<f64> = g.kinks.iter().map(|k| k.x).collect();
            let regular = |x: f64| kinks.iter().all(|k| (x - k).abs() >= *kink_exclusion);
            let mut worst: f64 = 0.0;
            let mut rows = Vec::with_capacity(idx.len());
            for (m, &i) in idx.iter().enumerate() {
                let err = (phi_fd[i] - g.phi[m]).abs();
                if regular(xs[i]) {
                    worst = worst.max(err);
                }
                rows.push(vec![xs[i], g.phi[m], phi_fd[i], err]);
            }
            rep.file(&format!("varadhan_{tag}_eps{ie}.csv"), &csv_table(&["x", "phi", "minus_eps_ln_u", "abs_error"], rows))?;
            let bound = bound_factor * eps * eps.ln().abs();
            rep.metric(key("sup_error", &[&tag, &eps_tag(eps)]), worst);
            rep.at_most(key("varadhan_bound", &[&tag, &eps_tag(eps)]), worst, bound);
            table.push(vec![eps, worst, bound]);
            errs.push(worst);

            if kink_eps.is_some_and(|k| (k - eps).abs() <= 1e-15) {
                let mut best = (f64::NEG_INFINITY, f64::NAN);
                for m in 1..idx.len() - 1 {
                    let i = idx[m];
                    let c = (phi_fd[i + 1] - 2.0 * phi_fd[i] + phi_fd[i - 1]).abs();
                    if c > best.0 {
                        best = (c, xs[i]);
                    }
                }
                rep.metric(key("kink_fd", &[&tag]), best.1);
                match kinks.first() {
                    Some(&k) => {
                        rep.metric(key("kink_manifold", &[&tag]), k);
                        rep.at_most(key("kink_agreement", &[&tag]), (k - best.1).abs(), *kink_tol);
                    }
                    None => rep.check(key("kink_agreement", &[&tag]), false, f64::NAN, *kink_tol, "the manifold has no kink"),
                }
            }

            if *leading_points > 0 {
                if samples.is_empty() {
                    let h = xs[1] - xs[0];
                    let margin = 0.5 * (window[1] - window[0]) / *leading_points as f64;
                    samples = linspace(window[0] + margin, window[1] - margin, *leading_points)
                        .into_iter()
                        .map(|x| {
                            // step off kinks, then snap to the FD grid
                            let mut x = x;
                            while !regular(x) {
                                x += *kink_exclusion;
                            }
                            xs[0] + ((x - xs[0]) / h).round() * h
                        })
                        .collect();
                }
                let row = samples
                    .iter()
                    .map(|&x| {
                        let i = ((x - xs[0]) / (xs[1] - xs[0])).round() as usize;
                        let c = select_min(&field.candidates(xs[i])).ok_or(Error::Uncovered {
                            x: xs[i],
                            gap_lo: f64::NAN,
                            gap_hi: f64::NAN,
                        })?;
                        let sqrt_rho = sc.initial.density.value(c.label) / c.j.abs().sqrt();
                        Ok((log_u[i] + c.s / eps).exp() / sqrt_rho)
                    })
                    .collect::<Result<Vec<f64>>>()?;
                ratios.push(row);
            }
        }
        rep.check(
            key("varadhan_decreasing", &[&tag]),
            strictly_decreasing(&errs),
            errs.last().copied().unwrap_or(f64::NAN),
            errs.first().copied().unwrap_or(f64::NAN),
            "sup error must strictly decrease with eps",
        );
        if *leading_points > 0 {
            leading_term(rep, &tag, &sc.eps, &samples, &ratios)?;
        }
    }
    rep.file("varadhan.csv", &csv_table(&["eps", "sup_error", "bound"], table))
}

/// Ratio `u e^{phi/eps} / sqrt(rho_reg)` against a per-point constant fitted as the eps -> 0 intercept.
fn leading_term(rep: &mut Report, tag: &str, eps: &[f64], samples: &[f64], ratios: &[Vec<f64>]) -> Result<()> {
    if eps.len() < 2 {
        return Err(Error::Config("the leading-term check needs at least two eps values".into()));
    }
    let consts: Vec<f64> = (0..samples.len())
        .map(|j| linear_fit(eps, &ratios.iter().map(|r| r[j]).collect::<Vec<_>>()).1)
        .collect();
    let mut devs = Vec::new();
    let mut rows = Vec::new();
    for (ie, &e) in eps.iter().enumerate() {
        let dev = (0..samples.len()).map(|j| (ratios[ie][j] / consts[j] - 1.0).abs()).fold(0.0, f64::max);
        rep.metric(key("leading_deviation", &[tag, &eps_tag(e)]), dev);
        rep.at_most(key("leading_band", &[tag, &eps_tag(e)]), dev, 10.0 * e);
        devs.push(dev);
        for j in 0..samples.len() {
            rows.push(vec![e, samples[j], ratios[ie][j], consts[j]]);
        }
    }
    // linear trend: each deviation ratio within a factor 2 of the eps ratio
    let worst = devs
        .windows(2)
        .zip(eps.windows(2))
        .map(|(d, e)| {
            let q = (d[0] / d[1]) / (e[0] / e[1]);
            q.max(1.0 / q)
        })
        .fold(1.0, f64::max);
    rep.metric(key("leading_trend_factor", &[tag]), worst);
    rep.at_most(key("leading_trend", &[tag]), worst, 2.0);
    rep.file(&format!("leading_term_{tag}.csv"), &csv_table(&["eps", "x", "ratio", "constant"], rows))
}

#[allow(clippy::too_many_arguments)]
fn crosscheck(
    sc: &Scenario,
    sym: &HamiltonianSymbol,
    rep: &mut Report,
    t: f64,
    domain: [f64; 2],
    nx: usize,
    width2: f64,
    rel_tol: f64,
    mass_tol: f64,
) -> Result<()> {
    let eps = sc.eps[0];
    let xs = linspace(domain[0], domain[1], nx);
    let log_u0: Vec<f64> = xs.iter().map(|x| -x * x / (width2 * eps)).collect();
    let kernel = heat_kernel_convolve(&xs, &log_u0, t, eps)?;
    let exact = kernel.values(0);
    let fd = fd_parabolic_solve(sym, &xs, &log_u0, eps, &[0.0, t], FdOptions::default())?;
    let approx = fd.values(1);
    let peak = exact.iter().copied().fold(0.0, f64::max);
    let err = approx.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / peak;
    let drift = (fd.mass(1) / fd.mass(0) - 1.0).abs();
    rep.metric("rel_sup_error", err);
    rep.metric("fd_mass_drift", drift);
    rep.metric("kernel_leak", kernel.leak());
    rep.at_most("kernel_vs_fd", err, rel_tol);
    rep.at_most("fd_mass", drift, mass_tol);
    let rows = (0..nx).map(|i| vec![xs[i], exact[i], approx[i]]);
    rep.file("crosscheck.csv", &csv_table(&["x", "kernel", "fd"], rows))
}

#[allow(clippy::too_many_arguments)]
fn reversal(
    sc: &Scenario,
    sym: &HamiltonianSymbol,
    rep: &mut Report,
    t: f64,
    xs: Vec<f64>,
    tol: f64,
    refuse: Option<&PhaseSpec>,
    refuse_time: f64,
) -> Result<()> {
    let phase = sc.initial.phase.resolve()?;
    let amp = sc.initial.density.clone();
    let phi0 = move |x: f64| amp.value(x);
    let mut res = Vec::new();
    let mut rows = Vec::new();
    for &eps in &sc.eps {
        let r = time_reversal_check(sym, &phase, &phi0, t, eps, &xs)?;
        rep.metric(key("reversal_residual", &[&eps_tag(eps)]), r.max_residual);
        for p in &r.points {
            rows.push(vec![eps, p.x, p.xi_star, p.residual]);
        }
        res.push(r.max_residual);
    }
    rep.at_most("reversal_residual", res[0], tol);
    rep.check("reversal_decreasing", strictly_decreasing(&res), *res.last().unwrap(), res[0], "residual must decrease with eps");
    if let Some(spec) = refuse {
        let p = spec.resolve()?;
        let outcome = time_reversal_check(sym, &p, &phi0, refuse_time, sc.eps[0], &xs);
        let refused = matches!(outcome, Err(Error::Precondition(_)));
        let detail = match &outcome {
            Err(e) => e.to_string(),
            Ok(r) => format!("ran with residual {}", r.max_residual),
        };
        rep.check("reversal_refused_past_caustic", refused, refuse_time, f64::NAN, detail);
    }
    rep.file("reversal.csv", &csv_table(&["eps", "x", "xi_star", "residual"], rows))
}

fn merge(
    sc: &Scenario,
    sym: &HamiltonianSymbol,
    rep: &mut Report,
    x_window: [f64; 2],
    nx: usize,
    tube: f64,
    mass_tol: f64,
) -> Result<()> {
    let phase = sc.initial.phase.resolve()?;
    let fan = evolve_fan(sym, sc.grid.labels(), &phase, sc.grid.times(), Default::default())?;
    let events = detect_caustic(&HamiltonianFlow::new(sym), &fan, 1e-7)?;
    let opts = SupportOptions {
        x_window: (x_window[0], x_window[1]),
        nx,
        ..Default::default()
    };
    let tracks = singular_support(&fan, fan.tgrid(), &opts, &events)?;
    let tubes: Vec<_> = tracks.iter().map(|t| StratumTube::from_track(t, tube)).collect();
    let rho0 = &sc.initial.density;
    let d = regular_density(sym, &fan, rho0, &ARule::Zero, &tubes)?;
    let side = SideOptions {
        offset: 0,
        ..Default::default()
    };
    let (strata, merges) = track_strata(sym, &d, &tracks, &Reaction::none(), &side)?;
    rep.metric("n_strata", strata.len() as f64);
    rep.metric("n_merges", merges.len() as f64);
    rep.check("merge_happens", !merges.is_empty(), merges.len() as f64, 1.0, "at least one merge");
    let kirchhoff = merges.iter().map(|m| (m.e3 - (m.e1 + m.e2)).abs()).fold(0.0, f64::max);
    if !merges.is_empty() {
        rep.metric("kirchhoff_defect", kirchhoff);
        rep.check("kirchhoff", kirchhoff == 0.0, kirchhoff, 0.0, "e3 = e1 + e2 exactly");
    }
    let m0 = match rho0.mass() {
        Some(m) if m > 0.0 => m,
        _ => d.integral(0, x_window[0], x_window[1], &[])?,
    };
    let mut worst: f64 = 0.0;
    let mut rows = Vec::with_capacity(fan.n_times());
    for k in 0..fan.n_times() {
        let t = fan.tgrid()[k];
        let mut kinks = Vec::new();
        let mut e_sum = 0.0;
        for s in &strata {
            if let Some(q) = s.path.iter().rev().find(|q| (q.t - t).abs() < 1e-12) {
                kinks.push(q.x);
                e_sum += q.e;
            }
        }
        let regular = d.integral(k, x_window[0], x_window[1], &kinks)?;
        let drift = ((regular + e_sum) / m0 - 1.0).abs();
        worst = worst.max(drift);
        rows.push(vec![t, regular, e_sum, drift]);
    }
    rep.metric("mass_drift", worst);
    rep.at_most("mass_balance", worst, mass_tol);
    rep.file("mass.csv", &csv_table(&["t", "regular", "singular", "drift"], rows))?;
    let mut buf = Vec::new();
    write_strata_csv(&strata, &mut buf)?;
    rep.file("strata.csv", &String::from_utf8(buf).expect("csv is ascii"))?;
    let mut buf = Vec::new();
    write_support_csv(&tracks, &mut buf)?;
    rep.file("support.csv", &String::from_utf8(buf).expect("csv is ascii"))?;
    rep.json("merge_graph.json", &merge_graph_json(&strata))
}

fn surgery(sc: &Scenario, sym: &HamiltonianSymbol, rep: &mut Report) -> Result<()> {
    let Experiment::Surgery {
        mode,
        beta,
        shift,
        x0_star,
        t_cut,
        backflow,
        c_factor,
    } = &sc.experiment
    else {
        unreachable!()
    };
    let phase = sc.initial.phase.resolve()?;
    let labels = sc.grid.labels();
    let t_plain_end = if *mode == SurgeryMode::Cut { *t_cut } else { sc.grid.t_end };
    let n_plain = ((t_plain_end - sc.grid.t_start) / sc.grid.dt).round() as usize + 1;
    let plain = evolve_fan(sym, labels.clone(), &phase, linspace(sc.grid.t_start, t_plain_end, n_plain), Default::default())?;
    let caustic = detect_caustic(&HamiltonianFlow::new(sym), &plain, 1e-8)?
        .first()
        .copied()
        .ok_or_else(|| Error::Precondition("the plain flow has no caustic to blend".into()))?;
    rep.metric("t_star", caustic.t_star);
    rep.metric("x_star", caustic.x_star);

    enum Prepared {
        Insertion(StartData, crate::surgery::Insertion, Vec<f64>),
        Cut(crate::surgery::SurgeredManifold, Vec<f64>),
    }
    let prepared = match mode {
        SurgeryMode::Insertion => {
            let start = StartData::from_phase(labels, &phase, *x0_star, *beta)?;
            let ins = insertion_initial_data(sym, &|x| phase.momentum(x), *x0_star, *beta, sc.grid.t_start)?;
            rep.metric("t_focus", ins.t_focus());
            Prepared::Insertion(start, ins, sc.grid.times())
        }
        SurgeryMode::Cut => {
            let curve = snapshot(&plain, *t_cut)?;
            let sm = manifold_surgery(sym, &curve, backflow * (t_cut - sc.grid.t_start), 1e-12)?;
            let n = ((sc.grid.t_end - sm.t_start) / sc.grid.dt).round().max(1.0) as usize + 1;
            rep.metric("t_start", sm.t_start);
            rep.metric("x1_star", sm.x1_star);
            Prepared::Cut(sm.clone(), linspace(sm.t_start, sc.grid.t_end, n))
        }
    };
    let mut cs = Vec::new();
    for (ie, &eps) in sc.eps.iter().enumerate() {
        let blend = BlendProfile::new(eps, 1.0, *beta)?;
        let tag = eps_tag(eps);
        let outcome: Result<BlendedFan> = match (&prepared, shift) {
            (Prepared::Insertion(start, ins, tg), ShiftSpec::Auto(_)) => search_shift(sym, start, ins, &blend, tg),
            (Prepared::Insertion(start, ins, tg), ShiftSpec::Fixed(a)) => {
                blended_fan_homogeneous(sym, start, ins, &blend.with_shift(*a), tg)
            }
            (Prepared::Cut(sm, tg), ShiftSpec::Auto(_)) => search_shift_surgered(sym, sm, &blend, tg),
            (Prepared::Cut(sm, tg), ShiftSpec::Fixed(a)) => backflow_and_blend(sym, sm, &blend.with_shift(*a), tg),
        };
        let fan = match outcome {
            Ok(f) => f,
            Err(Error::FloorViolated(c)) => {
                rep.metric(key("c_fit", &[&tag]), c);
                rep.check(key("floor", &[&tag]), false, c, 0.0, "no lead on the ladder gives a sorted fan with a positive floor");
                continue;
            }
            Err(e) => return Err(e),
        };
        rep.metric(key("shift", &[&tag]), fan.blend.shift);
        rep.metric(key("min_j", &[&tag]), fan.floor.min_j);
        rep.metric(key("c_fit", &[&tag]), fan.floor.c_fit);
        rep.check(key("floor", &[&tag]), fan.floor.min_j > 0.0, fan.floor.c_fit, 0.0, "min J >= C eps with C > 0");
        let detail = fan
            .crossing
            .map(|(t, a, b)| format!("labels {a} and {b} cross at t = {t}"))
            .unwrap_or_default();
        rep.check(key("sorted", &[&tag]), fan.is_sorted(), fan.crossing.map_or(0.0, |c| c.0), 0.0, detail);
        if fan.floor.min_j > 0.0 {
            cs.push(fan.floor.c_fit);
        }
        let report = match &prepared {
            Prepared::Cut(sm, _) => serde_json::to_value(SurgeryReport::new(caustic.t_star, caustic.x_star, sm, &fan))?,
            Prepared::Insertion(start, ins, _) => serde_json::json!({
                "t_star": caustic.t_star,
                "x_star": caustic.x_star,
                "t1_star": ins.t_focus(),
                "a1": start.labels[start.block.0],
                "a2": start.labels[start.block.1],
                "x1_star": fan.track.position(ins.t_focus()),
                "A": fan.blend.shift,
                "C_fit": fan.floor.c_fit,
            }),
        };
        rep.json(&format!("surgery_report_eps{ie}.json"), &report)?;
        let rows = fan.track.points.iter().map(|p| vec![p.t, p.x, p.velocity, p.xi_left, p.xi_right]);
        rep.file(&format!("track_eps{ie}.csv"), &csv_table(&["t", "x", "velocity", "xi_left", "xi_right"], rows))?;
        fan_csv(rep, &format!("fan_eps{ie}.csv"), &fan.fan)?;
    }
    if cs.len() == sc.eps.len() && !cs.is_empty() {
        let (lo, hi) = cs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), c| (a.min(*c), b.max(*c)));
        rep.metric("c_spread", hi / lo);
        rep.at_most("c_stable", hi / lo, *c_factor);
    } else {
        rep.check("c_stable", false, f64::NAN, *c_factor, "some eps has no positive floor");
    }
    Ok(())
}

/// Deterministic points of `[lo, hi]^2` from the R2 low-discrepancy sequence.
fn r2_points(n: usize, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let g = 1.324_717_957_244_746_f64;
    let (a1, a2) = (1.0 / g, 1.0 / (g * g));
    (0..n)
        .map(|i| {
            let k = (i + 1) as f64;
            let u = (0.5 + a1 * k).fract();
            let v = (0.5 + a2 * k).fract();
            (lo + (hi - lo) * u, lo + (hi - lo) * v)
        })
        .collect()
}

fn oracles(sc: &Scenario, sym: &HamiltonianSymbol, rep: &mut Report, samples: usize) -> Result<()> {
    let a = match (sym.kind(), sym.diffusion()) {
        (SymbolKind::Quadratic, Coefficient::Constant { value }) => *value,
        _ => return Err(Error::Precondition("the oracles need H = a p^2".into())),
    };
    // stratum speed [H]/[p] = a (p_l + p_r)
    let pts: Vec<(f64, f64)> = r2_points(4 * samples, -2.0, 2.0).into_iter().filter(|(l, r)| (l - r).abs() >= 1e-2).take(samples).collect();
    let mut rh: f64 = 0.0;
    for &(pl, pr) in &pts {
        rh = rh.max((stratum_velocity(sym, 0.0, 0.0, pl, pr)? - a * (pl + pr)).abs());
    }
    rep.metric("rh_max_error", rh);
    rep.metric("rh_samples", pts.len() as f64);
    rep.at_most("rankine_hugoniot", rh, 1e-12);

    // stationary symmetric shock u = -sign x, R = 1
    let side = SideState {
        r_left: 1.0,
        r_right: 1.0,
        u_left: 1.0,
        u_right: -1.0,
        velocity: 0.0,
    };
    let dt = 1e-3;
    let run = |f: &Reaction| -> Result<f64> {
        let mut e = 0.0;
        for _ in 0..1000 {
            e = amplitude_step(e, &side, &side, &side, f, dt)?;
        }
        Ok(e)
    };
    let plain = (run(&Reaction::none())? - 2.0).abs();
    let reacting = (run(&Reaction::constant(-1.0))? - 2.0 * (1.0 - (-1.0f64).exp())).abs();
    rep.metric("amplitude_error", plain);
    rep.metric("amplitude_reaction_error", reacting);
    rep.at_most("amplitude", plain, 1e-6);
    rep.at_most("amplitude_reaction", reacting, 1e-4);

    // weak square root with the Gaussian kernel, R = 1 and zeta = 1 on [-1, 1]
    let r = |_: f64| 1.0;
    let zeta = |_: f64| 1.0;
    let problem = WeakProblem {
        r: &r,
        zeta: &zeta,
        window: (-1.0, 1.0),
        e: 1.0,
        position: 0.0,
    };
    let (res, slope) = weak_asymptotic_residual(&problem, &sc.eps)?;
    for (e, v) in sc.eps.iter().zip(&res) {
        rep.metric(key("weak_residual", &[&eps_tag(*e)]), *v);
    }
    rep.metric("weak_slope", slope);
    rep.check("weak_slope", slope >= 0.4, slope, 0.4, "log-log slope must be at least 0.4");
    let last = *res.last().unwrap();
    rep.at_most("weak_residual_smallest_eps", last, 1e-2);
    rep.json(
        "oracles.json",
        &serde_json::json!({
            "rankine_hugoniot": { "samples": pts.len(), "max_error": rh },
            "amplitude": { "dt": dt, "error": plain, "reaction_error": reacting },
            "weak": { "eps": sc.eps, "residual": res, "slope": slope, "kernel_at_zero": gaussian_kernel(0.0) },
        }),
    )
}
