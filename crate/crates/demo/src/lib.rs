//! Browser demo: Lagrangian curve, min-action phase and caustic time for
//! `H = p^2 + a sin x`, exported through wasm-bindgen. Arrays come back flat.

use tunnel_core::hamflow::{detect_caustic, HamiltonianFlow};
use tunnel_core::io::linspace;
use tunnel_core::manifold::{global_phase as min_action_phase, snapshot};
use tunnel_core::{evolve_fan, Coefficient, HamiltonianSymbol, InitialPhase, Result, TrajectoryFan};
use wasm_bindgen::prelude::*;

const LABELS: (f64, f64, usize) = (-4.0, 4.0, 801);
const DT: f64 = 0.01;

fn phase(name: &str) -> std::result::Result<InitialPhase, JsError> {
    match name {
        "two-step" => Ok(InitialPhase::TwoStep { slope: 0.0, separation: 1.5 }),
        n => InitialPhase::from_builtin(n).ok_or_else(|| JsError::new(&format!("unknown phase '{n}'"))),
    }
}

fn symbol(amplitude: f64) -> HamiltonianSymbol {
    if amplitude == 0.0 {
        HamiltonianSymbol::quadratic(1.0)
    } else {
        HamiltonianSymbol::with_potential(Coefficient::constant(1.0), Coefficient::sine(amplitude, 1.0))
    }
}

fn fan(sym: &HamiltonianSymbol, ph: &InitialPhase, t: f64) -> Result<TrajectoryFan> {
    let steps = ((t / DT).ceil() as usize).max(1);
    let (lo, hi, n) = LABELS;
    evolve_fan(sym, linspace(lo, hi, n), ph, linspace(0.0, t, steps + 1), Default::default())
}

fn js(e: tunnel_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// `[x0, p0, x1, p1, ...]` along the curve at time `t`, in label order.
#[wasm_bindgen]
pub fn lagrangian_curve(phase_name: &str, amplitude: f64, t: f64) -> std::result::Result<Vec<f64>, JsError> {
    let f = fan(&symbol(amplitude), &phase(phase_name)?, t).map_err(js)?;
    let curve = snapshot(&f, t).map_err(js)?;
    Ok(curve.points.iter().flat_map(|q| [q.x, q.p]).collect())
}

/// `[x0, phi0, x1, phi1, ...]` on `n` points inside the projected curve.
#[wasm_bindgen]
pub fn global_phase(phase_name: &str, amplitude: f64, t: f64, n: usize) -> std::result::Result<Vec<f64>, JsError> {
    let f = fan(&symbol(amplitude), &phase(phase_name)?, t).map_err(js)?;
    let (lo, hi) = snapshot(&f, t).map_err(js)?.x_range();
    let g = min_action_phase(&f, t, &linspace(lo + 0.05, hi - 0.05, n.max(2))).map_err(js)?;
    Ok(g.xs.iter().zip(&g.phi).flat_map(|(x, s)| [*x, *s]).collect())
}

/// Kink positions of the min-action phase at time `t`.
#[wasm_bindgen]
pub fn kinks(phase_name: &str, amplitude: f64, t: f64) -> std::result::Result<Vec<f64>, JsError> {
    let f = fan(&symbol(amplitude), &phase(phase_name)?, t).map_err(js)?;
    let (lo, hi) = snapshot(&f, t).map_err(js)?.x_range();
    let g = min_action_phase(&f, t, &linspace(lo + 0.05, hi - 0.05, 2001)).map_err(js)?;
    Ok(g.kinks.iter().map(|k| k.x).collect())
}

/// `[t*, label*, x*]` of the earliest caustic before `t_end`; empty when there is none.
#[wasm_bindgen]
pub fn first_caustic(phase_name: &str, amplitude: f64, t_end: f64) -> std::result::Result<Vec<f64>, JsError> {
    let sym = symbol(amplitude);
    let f = fan(&sym, &phase(phase_name)?, t_end).map_err(js)?;
    let events = detect_caustic(&HamiltonianFlow::new(&sym), &f, 1e-8).map_err(js)?;
    Ok(events
        .iter()
        .min_by(|a, b| a.t_star.total_cmp(&b.t_star))
        .map(|e| vec![e.t_star, e.label_star, e.x_star])
        .unwrap_or_default())
}
