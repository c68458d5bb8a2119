use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::equilibrium::{gap_stats, solve_equilibrium_1d, solve_equilibrium_1d_from, Crystal};
use crate::error::{Error, Result};
use crate::modes::{crystal_modes, ModeSpectrum};
use crate::trap::{Geometry, TrapConfig};

/// Highest polynomial order the shaping optimizer accepts (four free
/// coefficients above the quadratic anchor).
pub const MAX_SHAPING_ORDER: u32 = 10;
const MIN_STEP: f64 = 1e-7;
const MAX_EVALUATIONS: usize = 2000;
const LM_ITERATIONS: usize = 100;
/// Bound on the scaled coefficients. Without it a quartic-only search runs
/// off towards a pure quartic well, compressing the chain without limit.
const COEFFICIENT_BOUND: f64 = 1e3;

#[derive(Clone, Debug, Serialize)]
pub struct ShapingResult {
    pub beta: BTreeMap<u32, f64>,
    pub crystal: Crystal,
    /// Spacing std / mean of the shaped chain.
    pub uniformity: f64,
    #[serde(skip)]
    pub modes: ModeSpectrum,
    pub evaluations: usize,
}

/// Even-order axial potential, with `beta_2 = 1`, that makes an `n`-ion chain
/// as close to equally spaced as the order allows.
///
/// Coefficients are searched in scaled form `beta_m = s_m / L^(m-2)`, with
/// `L` the half-length of the harmonic chain, so that every term matters at
/// the chain edge. The search starts from a least-squares force balance on
/// an exactly uniform chain and is polished by pattern search on the solved
/// equilibrium, warm-starting each solve from the last accepted positions,
/// and finished with Levenberg-Marquardt on the spacing residuals.
pub fn shape_potential_equispaced(n: usize, n_max: u32, trap_base: &TrapConfig) -> Result<ShapingResult> {
    if n_max < 2 || n_max % 2 == 1 {
        return Err(Error::InvalidArgument(format!("n_max must be even and >= 2, got {n_max}")));
    }
    if n_max > MAX_SHAPING_ORDER {
        return Err(Error::InvalidArgument(format!("n_max above {MAX_SHAPING_ORDER} is not supported")));
    }
    if trap_base.geometry != Geometry::Chain1D {
        return Err(Error::InvalidArgument("shaping needs a Chain1D trap".into()));
    }
    if trap_base.beta.keys().any(|&k| k % 2 == 1) {
        return Err(Error::InvalidPotential("shaping accepts even orders only".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one ion".into()));
    }
    let harmonic = trap_base.clone().with_beta(BTreeMap::from([(2, 1.0)]));
    let base = solve_equilibrium_1d(&harmonic, n)?;
    let orders: Vec<u32> = (4..=n_max).step_by(2).collect();
    if n < 3 || orders.is_empty() {
        return finish(&harmonic, base, 0);
    }
    let half = base.axial()[n - 1];
    let trap_for = |s: &[f64]| -> TrapConfig {
        let mut beta = BTreeMap::from([(2, 1.0)]);
        for (&m, &sm) in orders.iter().zip(s) {
            beta.insert(m, sm / half.powi(m as i32 - 2));
        }
        trap_base.clone().with_beta(beta)
    };

    let mut state = Search { guess: base.axial(), evaluations: 0 };
    let mut objective = |s: &[f64], state: &mut Search| -> Option<(f64, Vec<f64>)> {
        state.evaluations += 1;
        if s.iter().any(|x| x.abs() > COEFFICIENT_BOUND) {
            return None;
        }
        let trap = trap_for(s);
        trap.validate().ok()?;
        let c = solve_equilibrium_1d_from(&trap, n, Some(&state.guess)).ok()?;
        // the chain must stay linear
        crystal_modes(&c).ok()?;
        let u = c.axial();
        Some((gap_stats(&u).uniformity(), u))
    };

    // candidate starts: harmonic, and force balance fits
    let mut starts = vec![vec![0.0; orders.len()]];
    if let Some(s) = force_balance_start(n, &orders, half) {
        starts.push(s);
    }
    let mut best: Option<(Vec<f64>, f64, Vec<f64>)> = None;
    for s in starts {
        state.guess = base.axial();
        if let Some((f, u)) = objective(&s, &mut state) {
            if best.as_ref().is_none_or(|b| f < b.1) {
                best = Some((s, f, u));
            }
        }
    }
    let (mut x, mut fx, u) = best.ok_or_else(|| Error::NonConvergence("no valid shaping start".into()))?;
    state.guess = u;

    // Hooke-Jeeves: coordinate exploration with shrinking steps plus pattern moves
    let mut step = vec![0.05; x.len()];
    while step.iter().any(|&h| h > MIN_STEP) && state.evaluations < MAX_EVALUATIONS {
        let (y, fy) = explore(&x, fx, &step, &mut objective, &mut state);
        if fy < fx {
            let mut base_point = x;
            let mut current = y;
            let mut fc = fy;
            loop {
                let pattern: Vec<f64> = current.iter().zip(&base_point).map(|(c, b)| 2.0 * c - b).collect();
                let Some((fp, up)) = objective(&pattern, &mut state) else { break };
                let saved = std::mem::replace(&mut state.guess, up);
                let (z, fz) = explore(&pattern, fp, &step, &mut objective, &mut state);
                if fz < fc {
                    base_point = current;
                    current = z;
                    fc = fz;
                } else {
                    state.guess = saved;
                    break;
                }
                if state.evaluations >= MAX_EVALUATIONS {
                    break;
                }
            }
            x = current;
            fx = fc;
        } else {
            for h in &mut step {
                *h *= 0.5;
            }
        }
    }

    // Levenberg-Marquardt on the relative gap residuals, whose squared norm
    // is (N - 1) uniformity^2
    let residuals = |s: &[f64], guess: &[f64]| -> Option<(DVector<f64>, Vec<f64>)> {
        if s.iter().any(|x| x.abs() > COEFFICIENT_BOUND) {
            return None;
        }
        let trap = trap_for(s);
        trap.validate().ok()?;
        let c = solve_equilibrium_1d_from(&trap, n, Some(guess)).ok()?;
        crystal_modes(&c).ok()?;
        let u = c.axial();
        let gaps: Vec<f64> = u.windows(2).map(|w| w[1] - w[0]).collect();
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        Some((DVector::from_iterator(gaps.len(), gaps.iter().map(|g| g / mean - 1.0)), u))
    };
    if let Some((mut r, _)) = residuals(&x, &state.guess) {
        let mut lambda = 1e-3;
        for _ in 0..LM_ITERATIONS {
            let mut jac = DMatrix::zeros(r.len(), x.len());
            let mut ok = true;
            for c in 0..x.len() {
                let h = 1e-7 * x[c].abs().max(1e-2);
                let mut xp = x.clone();
                xp[c] += h;
                state.evaluations += 1;
                match residuals(&xp, &state.guess) {
                    Some((rp, _)) => jac.set_column(c, &((rp - &r) / h)),
                    None => ok = false,
                }
            }
            if !ok {
                break;
            }
            let jtj = jac.transpose() * &jac;
            let grad = jac.transpose() * &r;
            let mut improved = false;
            for _ in 0..12 {
                let mut lhs = jtj.clone();
                for k in 0..x.len() {
                    lhs[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
                }
                let Some(delta) = lhs.lu().solve(&(-&grad)) else { break };
                let trial: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, d)| a + d).collect();
                state.evaluations += 1;
                if let Some((rt, ut)) = residuals(&trial, &state.guess) {
                    if rt.norm() < r.norm() {
                        x = trial;
                        r = rt;
                        state.guess = ut;
                        lambda = (lambda / 3.0).max(1e-12);
                        improved = true;
                        break;
                    }
                }
                lambda *= 4.0;
            }
            if !improved || grad.norm() < 1e-14 {
                break;
            }
        }
    }

    let trap = trap_for(&x);
    let crystal = solve_equilibrium_1d_from(&trap, n, Some(&state.guess))?;
    finish(&trap, crystal, state.evaluations)
}

struct Search {
    guess: Vec<f64>,
    evaluations: usize,
}

fn explore(
    x: &[f64],
    fx: f64,
    step: &[f64],
    objective: &mut impl FnMut(&[f64], &mut Search) -> Option<(f64, Vec<f64>)>,
    state: &mut Search,
) -> (Vec<f64>, f64) {
    let mut y = x.to_vec();
    let mut fy = fx;
    for i in 0..y.len() {
        for dir in [1.0, -1.0] {
            let mut trial = y.clone();
            trial[i] += dir * step[i];
            if let Some((ft, ut)) = objective(&trial, state) {
                if ft < fy {
                    y = trial;
                    fy = ft;
                    state.guess = ut;
                    break;
                }
            }
        }
    }
    (y, fy)
}

/// Scaled coefficients that best balance trap and Coulomb forces on an
/// exactly uniform chain, scanning the spacing. Returns `None` when no
/// spacing yields a confining fit.
fn force_balance_start(n: usize, orders: &[u32], half: f64) -> Option<Vec<f64>> {
    let fit = |d: f64| -> Option<(f64, Vec<f64>)> {
        let u: Vec<f64> = (0..n).map(|i| (i as f64 - (n - 1) as f64 / 2.0) * d).collect();
        let coulomb: Vec<f64> = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| {
                        let r = u[i] - u[j];
                        r.signum() / (r * r)
                    })
                    .sum()
            })
            .collect();
        // 1/2 V'(u_i) = F_i with V = u^2 + sum_m s_m u^m / L^(m-2)
        let a = DMatrix::from_fn(n, orders.len(), |i, c| {
            let m = orders[c] as i32;
            0.5 * m as f64 * u[i].powi(m - 1) / half.powi(m - 2)
        });
        let rhs = DVector::from_fn(n, |i, _| coulomb[i] - u[i]);
        let scale = DVector::from_column_slice(&coulomb).norm();
        let svd = a.clone().svd(true, true);
        let s = svd.solve(&rhs, 1e-12 * svd.singular_values.max()).ok()?;
        let resid = (&a * &s - &rhs).norm() / scale;
        if *s.as_slice().last()? <= 0.0 {
            return None;
        }
        Some((resid, s.as_slice().to_vec()))
    };
    let objective = |t: f64| fit(t.exp()).map_or(f64::INFINITY, |(r, _)| r);
    let d_h = 2.0 * half / (n - 1) as f64;
    let (lo, hi) = ((0.2 * d_h).ln(), (5.0 * d_h).ln());
    let grid = 60;
    let mut best = (f64::INFINITY, lo);
    for k in 0..=grid {
        let t = lo + (hi - lo) * k as f64 / grid as f64;
        let v = objective(t);
        if v < best.0 {
            best = (v, t);
        }
    }
    if !best.0.is_finite() {
        return None;
    }
    let h = (hi - lo) / grid as f64;
    let t = golden_min(objective, best.1 - h, best.1 + h, 1e-10);
    fit(t.exp()).map(|(_, s)| s)
}

pub(crate) fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
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

fn finish(trap: &TrapConfig, crystal: Crystal, evaluations: usize) -> Result<ShapingResult> {
    let uniformity = if crystal.len() > 1 { gap_stats(&crystal.axial()).uniformity() } else { 0.0 };
    let modes = crystal_modes(&crystal)?;
    Ok(ShapingResult { beta: trap.beta.clone(), crystal, uniformity, modes, evaluations })
}

/// Double well from an anti-confining quadratic and confining quartic:
/// `V = -barrier z^2 + z^4`, wells at `+-sqrt(barrier / 2)`.
pub fn make_double_well(barrier: f64, trap_base: &TrapConfig) -> Result<TrapConfig> {
    if !(barrier >= 0.0) || !barrier.is_finite() {
        return Err(Error::InvalidArgument(format!("barrier must be finite and >= 0, got {barrier}")));
    }
    let trap = trap_base.clone().with_beta(BTreeMap::from([(2, -barrier), (4, 1.0)]));
    trap.validate()?;
    Ok(trap)
}
