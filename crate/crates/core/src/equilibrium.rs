//! Equilibrium positions of ions in the trap-plus-Coulomb potential.
//!
//! The dimensionless energy is `E = 1/2 sum_i V(u_i) + sum_{i<j} 1/|u_i - u_j|`,
//! measured in units of `m omega_z_tilde^2 l^2`. Chains use a damped Newton
//! iteration; planar crystals use BFGS from several seeds followed by a Newton
//! polish.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::trap::{poly_eval, Geometry, TrapConfig};

/// Max-norm of the energy gradient accepted as stationary.
pub const STATIONARITY_TOL: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 10_000;
/// Number of seeds for planar crystals.
pub const MULTI_STARTS: usize = 20;
const DEGENERATE_ENERGY_GAP: f64 = 1e-9;

#[derive(Clone, Debug, Serialize)]
pub struct Crystal {
    /// Coordinates per ion; one component for chains, two for planar crystals.
    pub positions: Vec<Vec<f64>>,
    #[serde(skip)]
    pub trap: TrapConfig,
    pub energy: f64,
    /// Set when distinct planar minima were found within 1e-9 in energy.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub degenerate_minimum: bool,
}

impl Crystal {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.positions.first().map_or(1, Vec::len)
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.positions[i].iter().zip(&self.positions[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    pub fn min_distance(&self) -> f64 {
        let n = self.len();
        let mut best = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                best = best.min(self.distance(i, j));
            }
        }
        best
    }

    /// Axial coordinates of a chain.
    pub fn axial(&self) -> Vec<f64> {
        self.positions.iter().map(|p| p[0]).collect()
    }

    fn flat(&self) -> DVector<f64> {
        DVector::from_iterator(self.len() * self.dim(), self.positions.iter().flat_map(|p| p.iter().copied()))
    }

    /// Max-norm of the energy gradient at the stored positions.
    pub fn gradient_norm(&self) -> f64 {
        let model = EnergyModel::new(&self.trap);
        model.gradient(&self.flat(), self.dim()).amax()
    }

    /// Smallest eigenvalue of the energy Hessian in the crystal coordinates.
    pub fn min_hessian_eigenvalue(&self) -> f64 {
        let model = EnergyModel::new(&self.trap);
        let h = model.hessian(&self.flat(), self.dim());
        h.symmetric_eigenvalues().min()
    }
}

/// Statistics of nearest-neighbour gaps along a chain.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SpacingStats {
    pub mean: f64,
    pub std: f64,
    pub max_deviation: f64,
}

impl SpacingStats {
    /// Coefficient of variation, the uniformity metric used by shaping.
    pub fn uniformity(&self) -> f64 {
        self.std / self.mean
    }
}

pub fn spacing_stats(crystal: &Crystal) -> Result<SpacingStats> {
    if crystal.dim() != 1 || crystal.len() < 2 {
        return Err(Error::InvalidArgument("spacing statistics need a chain of >= 2 ions".into()));
    }
    Ok(gap_stats(&crystal.axial()))
}

pub(crate) fn gap_stats(u: &[f64]) -> SpacingStats {
    let gaps: Vec<f64> = u.windows(2).map(|w| w[1] - w[0]).collect();
    let m = gaps.len() as f64;
    let mean = gaps.iter().sum::<f64>() / m;
    let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / m;
    let max_deviation = gaps.iter().map(|g| (g - mean).abs()).fold(0.0, f64::max);
    SpacingStats { mean, std: var.sqrt(), max_deviation }
}

/// Trap plus Coulomb energy over a flat coordinate vector.
struct EnergyModel<'a> {
    trap: &'a TrapConfig,
    /// Quadratic in-plane coefficients (first, second axis) for planar crystals.
    plane: (f64, f64),
}

impl<'a> EnergyModel<'a> {
    fn new(trap: &'a TrapConfig) -> Self {
        let r = trap.omega_other() / trap.omega_z_tilde;
        let b2 = trap.beta.get(&2).copied().unwrap_or(0.0);
        Self { trap, plane: (r * r, b2) }
    }

    fn energy(&self, x: &DVector<f64>, dim: usize) -> f64 {
        let n = x.len() / dim;
        let mut e = 0.0;
        if dim == 1 {
            for i in 0..n {
                if i + 1 < n && x[i + 1] <= x[i] {
                    return f64::INFINITY;
                }
                e += 0.5 * poly_eval(&self.trap.beta, x[i], 0);
            }
        } else {
            let (a, b) = self.plane;
            for i in 0..n {
                e += 0.5 * (a * x[2 * i].powi(2) + b * x[2 * i + 1].powi(2));
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                let r = dist(x, dim, i, j);
                if r == 0.0 {
                    return f64::INFINITY;
                }
                e += 1.0 / r;
            }
        }
        e
    }

    fn gradient(&self, x: &DVector<f64>, dim: usize) -> DVector<f64> {
        let n = x.len() / dim;
        let mut g = DVector::zeros(x.len());
        for i in 0..n {
            if dim == 1 {
                g[i] = 0.5 * poly_eval(&self.trap.beta, x[i], 1);
            } else {
                g[2 * i] = self.plane.0 * x[2 * i];
                g[2 * i + 1] = self.plane.1 * x[2 * i + 1];
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                let r = dist(x, dim, i, j);
                let r3 = r * r * r;
                for c in 0..dim {
                    let f = (x[dim * i + c] - x[dim * j + c]) / r3;
                    g[dim * i + c] -= f;
                    g[dim * j + c] += f;
                }
            }
        }
        g
    }

    fn hessian(&self, x: &DVector<f64>, dim: usize) -> DMatrix<f64> {
        let n = x.len() / dim;
        let mut h = DMatrix::zeros(x.len(), x.len());
        for i in 0..n {
            if dim == 1 {
                h[(i, i)] = 0.5 * poly_eval(&self.trap.beta, x[i], 2);
            } else {
                h[(2 * i, 2 * i)] = self.plane.0;
                h[(2 * i + 1, 2 * i + 1)] = self.plane.1;
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                let r = dist(x, dim, i, j);
                let r3 = r * r * r;
                let r5 = r3 * r * r;
                for a in 0..dim {
                    for b in 0..dim {
                        let da = x[dim * i + a] - x[dim * j + a];
                        let db = x[dim * i + b] - x[dim * j + b];
                        let delta = if a == b { 1.0 } else { 0.0 };
                        let k = 3.0 * da * db / r5 - delta / r3;
                        h[(dim * i + a, dim * i + b)] += k;
                        h[(dim * j + a, dim * j + b)] += k;
                        h[(dim * i + a, dim * j + b)] -= k;
                        h[(dim * j + a, dim * i + b)] -= k;
                    }
                }
            }
        }
        h
    }
}

fn dist(x: &DVector<f64>, dim: usize, i: usize, j: usize) -> f64 {
    (0..dim).map(|c| (x[dim * i + c] - x[dim * j + c]).powi(2)).sum::<f64>().sqrt()
}

/// Backtracking line search. Near convergence the energy change drops below
/// round-off, so a step that shrinks the gradient is also accepted.
fn line_search(
    model: &EnergyModel,
    x: &DVector<f64>,
    dim: usize,
    e0: f64,
    g0: &DVector<f64>,
    dir: &DVector<f64>,
) -> Option<(DVector<f64>, f64)> {
    let slope = g0.dot(dir);
    if slope >= 0.0 {
        return None;
    }
    let g0_norm = g0.amax();
    let mut t = 1.0;
    for _ in 0..60 {
        let trial = x + dir * t;
        let e = model.energy(&trial, dim);
        if e.is_finite() {
            if e <= e0 + 1e-4 * t * slope {
                return Some((trial, e));
            }
            if (e - e0).abs() <= 1e-13 * e0.abs().max(1.0) && model.gradient(&trial, dim).amax() < g0_norm {
                return Some((trial, e.min(e0)));
            }
        }
        t *= 0.5;
    }
    None
}

/// Newton iteration with eigenvalue-modified Hessian; falls back to steepest
/// descent when the Newton direction admits no acceptable step.
fn newton_minimize(
    model: &EnergyModel,
    mut x: DVector<f64>,
    dim: usize,
    max_iter: usize,
) -> Result<(DVector<f64>, f64)> {
    let mut e = model.energy(&x, dim);
    if !e.is_finite() {
        return Err(Error::NonConvergence("initial configuration has infinite energy".into()));
    }
    for _ in 0..max_iter {
        let g = model.gradient(&x, dim);
        if g.amax() < STATIONARITY_TOL {
            return Ok((x, e));
        }
        let eig = SymmetricEigen::new(model.hessian(&x, dim));
        let scale = eig.eigenvalues.amax().max(1e-300);
        let proj = eig.eigenvectors.transpose() * &g;
        let mut step = DVector::zeros(x.len());
        for k in 0..x.len() {
            let lam = eig.eigenvalues[k].abs().max(1e-10 * scale);
            step -= eig.eigenvectors.column(k) * (proj[k] / lam);
        }
        let accepted = line_search(model, &x, dim, e, &g, &step)
            .or_else(|| line_search(model, &x, dim, e, &g, &(-&g / g.norm().max(1e-300))));
        match accepted {
            Some((next, en)) => {
                x = next;
                e = en;
            }
            None => {
                return Err(Error::NonConvergence(format!("line search failed with gradient norm {:.3e}", g.amax())))
            }
        }
    }
    let gn = model.gradient(&x, dim).amax();
    if gn < STATIONARITY_TOL {
        Ok((x, e))
    } else {
        Err(Error::NonConvergence(format!("gradient norm {gn:.3e} after {max_iter} iterations")))
    }
}

/// BFGS with backtracking line search, run to a loose tolerance.
fn bfgs_minimize(model: &EnergyModel, mut x: DVector<f64>, dim: usize, tol: f64) -> (DVector<f64>, f64) {
    let n = x.len();
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut e = model.energy(&x, dim);
    let mut g = model.gradient(&x, dim);
    for _ in 0..MAX_ITERATIONS {
        if g.amax() < tol {
            break;
        }
        let mut dir = -(&hinv * &g);
        if dir.dot(&g) >= 0.0 {
            hinv = DMatrix::identity(n, n);
            dir = -g.clone();
        }
        let Some((next, en)) = line_search(model, &x, dim, e, &g, &dir) else {
            break;
        };
        let gn = model.gradient(&next, dim);
        let s = &next - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-14 {
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            hinv += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        x = next;
        e = en;
        g = gn;
    }
    (x, e)
}

/// Rescales a seed shape to the energy-minimizing overall size.
fn best_scale(model: &EnergyModel, shape: &DVector<f64>, dim: usize) -> DVector<f64> {
    let f = |log_s: f64| model.energy(&(shape * log_s.exp()), dim);
    let golden = 0.5 * (5f64.sqrt() - 1.0);
    // bracket by coarse scan
    let grid: Vec<f64> = (-60..=60).map(|k| k as f64 * 0.1).collect();
    let (ibest, _) =
        grid.iter()
            .map(|&s| f(s))
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    let (mut a, mut b) = (grid[ibest.saturating_sub(1)], grid[(ibest + 1).min(grid.len() - 1)]);
    for _ in 0..60 {
        let c = b - golden * (b - a);
        let d = a + golden * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    shape * (0.5 * (a + b)).exp()
}

/// Equilibrium of a linear chain in the axial potential of `trap`.
///
/// Positions are returned sorted ascending. For symmetric potentials the
/// result is exactly mirror-symmetric.
pub fn solve_equilibrium_1d(trap: &TrapConfig, n: usize) -> Result<Crystal> {
    solve_equilibrium_1d_from(trap, n, None)
}

/// As [`solve_equilibrium_1d`], optionally warm-started from `guess`.
pub fn solve_equilibrium_1d_from(trap: &TrapConfig, n: usize, guess: Option<&[f64]>) -> Result<Crystal> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one ion".into()));
    }
    if trap.geometry != Geometry::Chain1D {
        return Err(Error::InvalidArgument("solve_equilibrium_1d needs Chain1D geometry".into()));
    }
    trap.validate()?;
    let model = EnergyModel::new(trap);
    let symmetric = trap.is_symmetric();
    let x0 = match guess {
        Some(g) if g.len() == n && g.windows(2).all(|w| w[1] > w[0]) => DVector::from_column_slice(g),
        _ => {
            let half = (n as f64).powf(2.0 / 3.0);
            let shape =
                DVector::from_fn(n, |i, _| if n == 1 { 0.0 } else { half * (2.0 * i as f64 / (n - 1) as f64 - 1.0) });
            best_scale(&model, &shape, 1)
        }
    };
    let x0 = if symmetric { mirror_symmetrize(&x0) } else { x0 };
    let (mut x, mut e) = newton_minimize(&model, x0, 1, MAX_ITERATIONS)?;
    if symmetric {
        let sym = mirror_symmetrize(&x);
        let es = model.energy(&sym, 1);
        if es.is_finite() && model.gradient(&sym, 1).amax() < STATIONARITY_TOL {
            x = sym;
            e = es;
        }
    }
    Ok(Crystal {
        positions: x.iter().map(|&u| vec![u]).collect(),
        trap: trap.clone(),
        energy: e,
        degenerate_minimum: false,
    })
}

fn mirror_symmetrize(x: &DVector<f64>) -> DVector<f64> {
    let n = x.len();
    DVector::from_fn(n, |i, _| 0.5 * (x[i] - x[n - 1 - i]))
}

fn hexagonal_seed(n: usize, rng: &mut ChaCha8Rng, jitter: f64) -> DVector<f64> {
    let mut pts: Vec<(f64, f64)> = Vec::new();
    let reach = (n as f64).sqrt().ceil() as i64 + 2;
    for a in -reach..=reach {
        for b in -reach..=reach {
            let y = a as f64 + 0.5 * b as f64;
            let z = b as f64 * 3f64.sqrt() / 2.0;
            pts.push((y, z));
        }
    }
    pts.sort_by(|p, q| {
        let rp = p.0.hypot(p.1);
        let rq = q.0.hypot(q.1);
        rp.partial_cmp(&rq).unwrap().then(p.1.atan2(p.0).partial_cmp(&q.1.atan2(q.0)).unwrap())
    });
    let mut x = DVector::zeros(2 * n);
    for i in 0..n {
        x[2 * i] = pts[i].0 + jitter * rng.gen_range(-1.0..1.0);
        x[2 * i + 1] = pts[i].1 + jitter * rng.gen_range(-1.0..1.0);
    }
    x
}

fn random_seed(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let mut x = DVector::zeros(2 * n);
    for i in 0..n {
        let r = rng.gen_range(0.0f64..1.0).sqrt();
        let phi = rng.gen_range(0.0..std::f64::consts::TAU);
        x[2 * i] = r * phi.cos();
        x[2 * i + 1] = r * phi.sin();
    }
    x
}

/// Lowest-energy planar crystal among [`MULTI_STARTS`] seeds.
///
/// Orientation and ion order are canonical: with isotropic in-plane
/// confinement the farthest ion lies on the positive first axis and the
/// second-farthest has nonnegative second coordinate; ions are ordered by
/// radius, then angle.
pub fn solve_equilibrium_2d(trap: &TrapConfig, n: usize) -> Result<Crystal> {
    solve_equilibrium_2d_seeded(trap, n, 0)
}

/// As [`solve_equilibrium_2d`] with an explicit seed for the random starts.
pub fn solve_equilibrium_2d_seeded(trap: &TrapConfig, n: usize, seed: u64) -> Result<Crystal> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one ion".into()));
    }
    if trap.geometry != Geometry::Crystal2D {
        return Err(Error::InvalidArgument("solve_equilibrium_2d needs Crystal2D geometry".into()));
    }
    trap.validate()?;
    let model = EnergyModel::new(trap);
    if n == 1 {
        return Ok(Crystal {
            positions: vec![vec![0.0, 0.0]],
            trap: trap.clone(),
            energy: 0.0,
            degenerate_minimum: false,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<DVector<f64>> = (0..MULTI_STARTS)
        .map(|k| {
            let shape = if k < MULTI_STARTS / 2 {
                hexagonal_seed(n, &mut rng, 0.05 * k as f64)
            } else {
                random_seed(n, &mut rng)
            };
            best_scale(&model, &shape, 2)
        })
        .collect();

    let results: Vec<Result<(Vec<Vec<f64>>, f64)>> = seeds
        .into_par_iter()
        .map(|seed| {
            let (x, _) = bfgs_minimize(&model, seed, 2, 1e-6);
            let (x, e) = newton_minimize(&model, x, 2, 200)?;
            Ok((canonical_planar(&x, trap), e))
        })
        .collect();

    let mut minima: Vec<(Vec<Vec<f64>>, f64)> = results.into_iter().filter_map(|r| r.ok()).collect();
    if minima.is_empty() {
        return Err(Error::NonConvergence("no planar seed converged".into()));
    }
    minima.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| lex_cmp(&a.0, &b.0)));
    let (best, energy) = minima[0].clone();
    let degenerate = minima[1..]
        .iter()
        .any(|(pos, e)| (e - energy).abs() < DEGENERATE_ENERGY_GAP && shape_distance(pos, &best) > 1e-6);
    if degenerate {
        log::warn!("planar crystal of {n} ions has competing minima within {DEGENERATE_ENERGY_GAP:e}");
    }
    // minima that are equal up to ties in energy are ordered lexicographically
    let best = minima
        .iter()
        .take_while(|(_, e)| (e - energy).abs() < 1e-12 * energy.abs().max(1.0))
        .map(|(p, _)| p)
        .min_by(|a, b| lex_cmp(a, b))
        .cloned()
        .unwrap_or(best);
    Ok(Crystal { positions: best, trap: trap.clone(), energy, degenerate_minimum: degenerate })
}

fn lex_cmp(a: &[Vec<f64>], b: &[Vec<f64>]) -> std::cmp::Ordering {
    for (p, q) in a.iter().zip(b) {
        for (x, y) in p.iter().zip(q) {
            match x.partial_cmp(y) {
                Some(std::cmp::Ordering::Equal) | None => {}
                Some(o) => return o,
            }
        }
    }
    std::cmp::Ordering::Equal
}

fn shape_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).flat_map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y).abs())).fold(0.0, f64::max)
}

fn canonical_planar(x: &DVector<f64>, trap: &TrapConfig) -> Vec<Vec<f64>> {
    let n = x.len() / 2;
    let mut pts: Vec<(f64, f64)> = (0..n).map(|i| (x[2 * i], x[2 * i + 1])).collect();
    let isotropic = {
        let r = trap.omega_other() / trap.omega_z_tilde;
        let b2 = trap.beta.get(&2).copied().unwrap_or(0.0);
        (r * r - b2).abs() < 1e-12
    };
    let radius = |p: &(f64, f64)| p.0.hypot(p.1);
    let rmax = pts.iter().map(radius).fold(0.0, f64::max);
    let tol = 1e-6 * rmax.max(1.0);
    // farthest ion; among near-ties the one with the largest first coordinate
    let far = (0..n)
        .filter(|&i| radius(&pts[i]) > rmax - tol)
        .max_by(|&i, &j| pts[i].0.partial_cmp(&pts[j].0).unwrap())
        .unwrap();
    if isotropic {
        let theta = pts[far].1.atan2(pts[far].0);
        let (s, c) = (-theta).sin_cos();
        for p in pts.iter_mut() {
            *p = (c * p.0 - s * p.1, s * p.0 + c * p.1);
        }
        pts[far].1 = 0.0;
        let second = (0..n)
            .filter(|&i| i != far && pts[i].1.abs() > tol)
            .max_by(|&i, &j| radius(&pts[i]).partial_cmp(&radius(&pts[j])).unwrap());
        if let Some(k) = second {
            if pts[k].1 < 0.0 {
                for p in pts.iter_mut() {
                    p.1 = -p.1;
                }
            }
        }
    } else {
        if pts[far].0 < 0.0 {
            for p in pts.iter_mut() {
                p.0 = -p.0;
            }
        }
        if pts[far].1 < 0.0 {
            for p in pts.iter_mut() {
                p.1 = -p.1;
            }
        }
    }
    let quant = |v: f64| (v / tol).round() as i64;
    pts.sort_by_key(|p| {
        let mut ang = p.1.atan2(p.0);
        if ang < 0.0 {
            ang += std::f64::consts::TAU;
        }
        let ang = if radius(p) < tol { 0.0 } else { ang };
        (quant(radius(p)), (ang / 1e-6).round() as i64)
    });
    pts.into_iter().map(|(a, b)| vec![a, b]).collect()
}
