use serde::Serialize;

use crate::coupling::{compose_coupling, infidelity, CouplingMatrix, WeightVector, GUARD_BAND};
use crate::error::{Error, Result};
use crate::graphs::{power_law_graph, Layout};
use crate::modes::{ModeInteractionSet, ModeSpectrum};

use super::shaping::golden_min;

/// Upper end of the power-law exponent range searched when fitting a
/// single-tone coupling.
pub const ALPHA_MAX: f64 = 6.0;
const ALPHA_TOL: f64 = 1e-9;
const DETUNING_POINTS: usize = 240;
const DETUNING_MAX: f64 = 1e3;
const BISECTION_STEPS: usize = 40;

/// One single-tone operating point.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SweepPoint {
    /// Beatnote detuning, units of omega_z_tilde.
    pub mu: f64,
    /// `mu - omega_COM`.
    pub detuning: f64,
    pub alpha: f64,
    pub infidelity: f64,
}

/// Weights `1 / (mu^2 - omega_k^2)` of a single tone above the COM mode, up to
/// a constant prefactor.
pub fn single_tone_weights(modes: &ModeSpectrum, mu: f64) -> Result<WeightVector> {
    let mut out = Vec::with_capacity(modes.len());
    for (k, &w) in modes.frequencies.iter().enumerate() {
        if (mu - w).abs() < GUARD_BAND {
            return Err(Error::ResonantTone { mu, mode: k });
        }
        out.push(1.0 / (mu * mu - w * w));
    }
    Ok(WeightVector(out))
}

fn single_tone_coupling(modes: &ModeSpectrum, set: &ModeInteractionSet, mu: f64) -> Result<CouplingMatrix> {
    compose_coupling(&single_tone_weights(modes, mu)?, set)
}

/// The power-law exponent closest to `j` and its infidelity, by a coarse
/// scan over `[0, ALPHA_MAX]` and golden-section refinement.
pub fn fit_alpha(j: &CouplingMatrix, layout: Layout) -> Result<(f64, f64)> {
    let eval = |a: f64| -> f64 {
        power_law_graph(layout, a, 1.0).and_then(|g| infidelity(j, &g.matrix)).unwrap_or(f64::INFINITY)
    };
    let grid = 60;
    let h = ALPHA_MAX / grid as f64;
    let (mut best_a, mut best_v) = (0.0, f64::INFINITY);
    for k in 0..=grid {
        let a = k as f64 * h;
        let v = eval(a);
        if v < best_v {
            best_a = a;
            best_v = v;
        }
    }
    let a = golden_min(eval, (best_a - h).max(0.0), (best_a + h).min(ALPHA_MAX), ALPHA_TOL);
    let v = eval(a);
    Ok(if v < best_v { (a, v) } else { (best_a, best_v) })
}

/// Log-spaced detunings above the COM mode, from just outside the guard band.
pub fn default_detunings(points: usize) -> Vec<f64> {
    let lo = (10.0 * GUARD_BAND).ln();
    let hi = DETUNING_MAX.ln();
    (0..points).map(|k| (lo + (hi - lo) * k as f64 / (points.max(2) - 1) as f64).exp()).collect()
}

/// Fig. 3 style curve: for each detuning above the COM mode, the best-fit
/// exponent and its infidelity. Sorted by detuning.
pub fn single_tone_fit_curve(modes: &ModeSpectrum, layout: Layout, detunings: &[f64]) -> Result<Vec<SweepPoint>> {
    check_layout(modes, layout)?;
    let set = modes.interaction_matrices();
    let com = modes.frequencies[0];
    let mut d = detunings.to_vec();
    d.sort_by(f64::total_cmp);
    d.iter()
        .map(|&delta| {
            let mu = com + delta;
            let j = single_tone_coupling(modes, &set, mu)?;
            let (alpha, inf) = fit_alpha(&j, layout)?;
            Ok(SweepPoint { mu, detuning: delta, alpha, infidelity: inf })
        })
        .collect()
}

/// Single-tone infidelity at exponent `alpha`, read off the fit curve: the
/// detuning whose best-fit exponent equals `alpha`, found by bisection in
/// log detuning. Exponents beyond the reach of the curve take its nearest
/// end.
pub fn single_tone_infidelity(modes: &ModeSpectrum, layout: Layout, alpha: f64) -> Result<SweepPoint> {
    Ok(single_tone_sweep(modes, layout, &[alpha])?[0])
}

/// `single_tone_infidelity` over a list of exponents, sharing one fit curve.
pub fn single_tone_sweep(modes: &ModeSpectrum, layout: Layout, alphas: &[f64]) -> Result<Vec<SweepPoint>> {
    check_layout(modes, layout)?;
    if let Some(&a) = alphas.iter().find(|a| !(**a >= 0.0)) {
        return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {a}")));
    }
    let set = modes.interaction_matrices();
    let com = modes.frequencies[0];
    let point = |t: f64| -> Result<SweepPoint> {
        let delta = t.exp();
        let j = single_tone_coupling(modes, &set, com + delta)?;
        let (alpha, inf) = fit_alpha(&j, layout)?;
        Ok(SweepPoint { mu: com + delta, detuning: delta, alpha, infidelity: inf })
    };
    let grid: Vec<f64> = default_detunings(DETUNING_POINTS).iter().map(|d| d.ln()).collect();
    let curve = grid.iter().map(|&t| point(t)).collect::<Result<Vec<_>>>()?;

    alphas
        .iter()
        .map(|&target| {
            let Some(i) = curve.windows(2).position(|w| (w[0].alpha - target) * (w[1].alpha - target) <= 0.0) else {
                let end = if target <= curve[0].alpha { curve[0] } else { *curve.last().unwrap() };
                return Ok(end);
            };
            let (mut lo, mut hi) = (grid[i], grid[i + 1]);
            let rising = curve[i + 1].alpha >= curve[i].alpha;
            for _ in 0..BISECTION_STEPS {
                let mid = 0.5 * (lo + hi);
                if (point(mid)?.alpha < target) == rising {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            point(0.5 * (lo + hi))
        })
        .collect()
}

fn check_layout(modes: &ModeSpectrum, layout: Layout) -> Result<()> {
    if layout.n() != modes.len() {
        return Err(Error::DimensionMismatch { expected: modes.len(), actual: layout.n() });
    }
    if modes.is_empty() {
        return Err(Error::InvalidArgument("no modes".into()));
    }
    Ok(())
}
