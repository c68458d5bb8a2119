use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graphs::InteractionGraph;
use crate::modes::ModeInteractionSet;

use super::weights::WeightFitter;

/// Largest N searched exhaustively.
pub const EXHAUSTIVE_MAX_N: usize = 10;
/// Candidates whose permuted graph has a larger antidiagonal defect are
/// discarded in pruned mode.
pub const DEFECT_CUT: f64 = 0.3;
const TIE_TOL: f64 = 1e-12;
const SPECTRAL_SEEDS: usize = 3;
/// Partial labelings kept per level in pruned mode, at most.
pub const MAX_BEAM: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RelabelMode {
    Exhaustive,
    Pruned,
}

#[derive(Clone, Debug, Serialize)]
pub struct RelabelResult {
    /// Vertex `i` moves to ion `permutation[i]` (0-based).
    pub permutation: Vec<usize>,
    pub infidelity_before: f64,
    pub infidelity_after: f64,
    pub evaluated_count: usize,
    /// Set when the budget cut candidates that passed the defect filter.
    pub budget_exceeded: bool,
    pub mode: RelabelMode,
}

/// Searches ion labelings of `g` for the lowest best-fit infidelity.
///
/// Exhaustive when `N <= EXHAUSTIVE_MAX_N` and `N! <= budget`, pruned
/// otherwise.
pub fn relabel_search(g: &InteractionGraph, modes: &ModeInteractionSet, budget: usize) -> Result<RelabelResult> {
    let n = g.n();
    let mode = if n <= EXHAUSTIVE_MAX_N && factorial(n).is_some_and(|f| f <= budget) {
        RelabelMode::Exhaustive
    } else {
        RelabelMode::Pruned
    };
    relabel_search_with(g, modes, budget, mode)
}

pub fn relabel_search_with(
    g: &InteractionGraph,
    modes: &ModeInteractionSet,
    budget: usize,
    mode: RelabelMode,
) -> Result<RelabelResult> {
    let n = modes.n_ions();
    if g.n() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: g.n() });
    }
    let norm = g.matrix.offdiag_norm();
    if norm == 0.0 {
        return Err(Error::ZeroOffDiagonal);
    }
    if budget == 0 {
        return Err(Error::InvalidArgument("relabel budget must be positive".into()));
    }
    let fitter = WeightFitter::new(modes);
    let edges = g.edges();
    let identity: Vec<usize> = (0..n).collect();
    let before = fitter.infidelity(&edges, &identity, norm);

    let (best, evaluated, exceeded) = match mode {
        RelabelMode::Exhaustive => {
            if n > EXHAUSTIVE_MAX_N {
                return Err(Error::InvalidArgument(format!(
                    "exhaustive relabeling supports N <= {EXHAUSTIVE_MAX_N}, got {n}"
                )));
            }
            let (best, count) = exhaustive(&fitter, &edges, norm, n);
            (best, count, false)
        }
        RelabelMode::Pruned => pruned(&fitter, g, &edges, norm, budget),
    };
    let (permutation, after) = match best {
        Some((p, v)) if v < before - TIE_TOL || (v <= before + TIE_TOL && p < identity) => (p, v),
        _ => (identity, before),
    };
    Ok(RelabelResult {
        permutation,
        infidelity_before: before,
        infidelity_after: after,
        evaluated_count: evaluated,
        budget_exceeded: exceeded,
        mode,
    })
}

fn factorial(n: usize) -> Option<usize> {
    (1..=n).try_fold(1usize, |acc, k| acc.checked_mul(k))
}

/// `a` replaces `b` as the incumbent.
fn better(a: (&[usize], f64), b: (&[usize], f64)) -> bool {
    a.1 < b.1 - TIE_TOL || (a.1 <= b.1 + TIE_TOL && a.0 < b.0)
}

/// Advances `p` to the next permutation in lexicographic order.
fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

fn exhaustive(
    fitter: &WeightFitter,
    edges: &[(usize, usize, f64)],
    norm: f64,
    n: usize,
) -> (Option<(Vec<usize>, f64)>, usize) {
    // one branch per image of vertex 0, merged in index order
    let branches: Vec<(Option<(Vec<usize>, f64)>, usize)> = (0..n)
        .into_par_iter()
        .map(|first| {
            let mut rest: Vec<usize> = (0..n).filter(|&v| v != first).collect();
            let mut place = vec![0; n];
            let mut best: Option<(Vec<usize>, f64)> = None;
            let mut count = 0;
            loop {
                place[0] = first;
                place[1..].copy_from_slice(&rest);
                let v = fitter.infidelity(edges, &place, norm);
                count += 1;
                if best.as_ref().is_none_or(|(bp, bv)| better((&place, v), (bp, *bv))) {
                    best = Some((place.clone(), v));
                }
                if !next_permutation(&mut rest) {
                    break;
                }
            }
            (best, count)
        })
        .collect();
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut total = 0;
    for (cand, count) in branches {
        total += count;
        if let Some((p, v)) = cand {
            if best.as_ref().is_none_or(|(bp, bv)| better((&p, v), (bp, *bv))) {
                best = Some((p, v));
            }
        }
    }
    (best, total)
}

#[derive(Clone)]
struct Partial {
    /// Vertex at each position.
    at: Vec<usize>,
    used: Vec<bool>,
    /// Sum of squared mirror mismatches over assigned ordered position pairs.
    defect_sq: f64,
}

struct Child {
    residual_key: i64,
    defect_key: i64,
    parent: usize,
    u: usize,
    v: usize,
    defect_sq: f64,
}

impl Child {
    fn order(&self) -> (i64, i64, usize, usize, usize) {
        (self.residual_key, self.defect_key, self.parent, self.u, self.v)
    }
}

const UNSET: usize = usize::MAX;

/// Builds labelings mirror pair by mirror pair, `(0, N-1)`, `(1, N-2)`, ...
///
/// The defect among the positions filled so far bounds the final
/// antidiagonal defect from below, so partial labelings above the cut are
/// dropped. The beam keeps at most `min(budget, MAX_BEAM)` partial labelings per level,
/// preferring those whose edges so far are best explained by the modes.
/// Complete labelings are ranked by defect and the best `budget` are fitted.
///
/// The best of these, the identity and a few spectral orderings of the
/// graph are then refined by swap descent with a further `budget`
/// evaluations.
fn pruned(
    fitter: &WeightFitter,
    g: &InteractionGraph,
    edges: &[(usize, usize, f64)],
    norm: f64,
    budget: usize,
) -> (Option<(Vec<usize>, f64)>, usize, bool) {
    let n = g.n();
    let mut j = g.matrix.stripped();
    j.fill_diagonal(0.0);
    let b = &fitter.b;
    let m = b.ncols();
    let cut_sq = (2.0 * DEFECT_CUT * norm).powi(2);
    let quantum = 1e-12 * norm * norm;
    let key = |d: f64| (d / quantum).round() as i64;
    let mirror = |x: usize| n - 1 - x;

    let mut slots: Vec<(usize, usize)> = (0..n / 2).map(|k| (k, n - 1 - k)).collect();
    if n % 2 == 1 {
        slots.push((n / 2, n / 2));
    }
    let mut beam = vec![Partial { at: vec![UNSET; n], used: vec![false; n], defect_sq: 0.0 }];
    let mut exceeded = false;
    let mut assigned: Vec<usize> = Vec::new();

    for &(p, q) in &slots {
        let new_positions: &[usize] = if p == q { &[p][..] } else { &[p, q][..] };
        let mut children: Vec<Child> = beam
            .par_iter()
            .enumerate()
            .flat_map_iter(|(parent, state)| {
                let mut r0 = vec![0.0; m];
                let mut norm0 = 0.0;
                for (ia, &x) in assigned.iter().enumerate() {
                    for &y in &assigned[ia + 1..] {
                        let w = j[(state.at[x], state.at[y])];
                        if w != 0.0 {
                            norm0 += 2.0 * w * w;
                            for k in 0..m {
                                r0[k] += 2.0 * w * b[(x, k)] * b[(y, k)];
                            }
                        }
                    }
                }
                let free: Vec<usize> = (0..n).filter(|&v| !state.used[v]).collect();
                let pairs: Vec<(usize, usize)> = if p == q {
                    free.iter().map(|&u| (u, u)).collect()
                } else {
                    free.iter().flat_map(|&u| free.iter().filter(move |&&v| v != u).map(move |&v| (u, v))).collect()
                };
                let mut out = Vec::with_capacity(pairs.len());
                let mut r = vec![0.0; m];
                for (u, v) in pairs {
                    let vertex_at = |x: usize| {
                        if x == p {
                            u
                        } else if x == q {
                            v
                        } else {
                            state.at[x]
                        }
                    };
                    let term = |x: usize, y: usize| {
                        let d = j[(vertex_at(x), vertex_at(y))] - j[(vertex_at(mirror(x)), vertex_at(mirror(y)))];
                        d * d
                    };
                    let mut delta = 0.0;
                    for &x in new_positions {
                        for &y in &assigned {
                            delta += 2.0 * term(x, y);
                        }
                    }
                    if p != q {
                        delta += 2.0 * term(p, q);
                    }
                    let defect_sq = state.defect_sq + delta;
                    if defect_sq > cut_sq * (1.0 + 1e-12) {
                        continue;
                    }

                    r.copy_from_slice(&r0);
                    let mut norm_sq = norm0;
                    let mut add = |x: usize, y: usize, w: f64| {
                        norm_sq += 2.0 * w * w;
                        for k in 0..m {
                            r[k] += 2.0 * w * b[(x, k)] * b[(y, k)];
                        }
                    };
                    for &x in new_positions {
                        for &y in &assigned {
                            let w = j[(vertex_at(x), vertex_at(y))];
                            if w != 0.0 {
                                add(x, y, w);
                            }
                        }
                    }
                    if p != q && j[(u, v)] != 0.0 {
                        add(p, q, j[(u, v)]);
                    }
                    let fitted = fitter.quadratic(&r);
                    let residual = (norm_sq - fitted).max(0.0);
                    out.push(Child {
                        residual_key: key(residual),
                        defect_key: key(defect_sq),
                        parent,
                        u,
                        v,
                        defect_sq,
                    });
                }
                out
            })
            .collect();
        let width = budget.min(MAX_BEAM);
        if children.len() > width {
            exceeded = true;
            children.select_nth_unstable_by(width - 1, |a, b| a.order().cmp(&b.order()));
            children.truncate(width);
        }
        children.sort_by(|a, b| a.order().cmp(&b.order()));
        beam = children
            .into_iter()
            .map(|c| {
                let mut s = beam[c.parent].clone();
                s.at[p] = c.u;
                s.at[q] = c.v;
                s.used[c.u] = true;
                s.used[c.v] = true;
                s.defect_sq = c.defect_sq;
                s
            })
            .collect();
        if beam.is_empty() {
            break;
        }
        assigned.extend_from_slice(new_positions);
    }

    let mut candidates: Vec<(i64, Vec<usize>)> = beam
        .into_iter()
        .map(|s| {
            let mut place = vec![0; n];
            for (x, &v) in s.at.iter().enumerate() {
                place[v] = x;
            }
            (key(s.defect_sq), place)
        })
        .collect();
    candidates.sort();
    if candidates.len() > budget {
        exceeded = true;
        candidates.truncate(budget);
    }
    let scored: Vec<(Vec<usize>, f64)> = candidates
        .into_par_iter()
        .map(|(_, place)| {
            let v = fitter.infidelity(edges, &place, norm);
            (place, v)
        })
        .collect();
    let mut count = scored.len();
    let mut best: Option<(Vec<usize>, f64)> = None;
    for (p, v) in scored {
        if best.as_ref().is_none_or(|(bp, bv)| better((&p, v), (bp, *bv))) {
            best = Some((p, v));
        }
    }

    let mut seeds: Vec<Vec<usize>> = spectral_orders(g, SPECTRAL_SEEDS);
    seeds.push((0..n).collect());
    if let Some((p, _)) = &best {
        seeds.push(p.clone());
    }
    seeds.sort();
    seeds.dedup();
    let mut remaining = budget;
    for seed in seeds {
        let (p, v, used, _) = swap_descent(fitter, edges, norm, seed, remaining);
        count += used;
        remaining -= used;
        if best.as_ref().is_none_or(|(bp, bv)| better((&p, v), (bp, *bv))) {
            best = Some((p, v));
        }
        if remaining == 0 {
            break;
        }
    }
    (best, count, exceeded)
}

/// Placements ordering the vertices along the lowest nontrivial
/// eigenvectors of the Laplacian of `|J|`, so strongly coupled vertices land
/// on nearby ions.
fn spectral_orders(g: &InteractionGraph, count: usize) -> Vec<Vec<usize>> {
    let n = g.n();
    let mut w = g.matrix.stripped().abs();
    w.fill_diagonal(0.0);
    let mut lap = -w.clone();
    for i in 0..n {
        lap[(i, i)] = w.row(i).sum();
    }
    let eig = nalgebra::SymmetricEigen::new(lap);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let scale = eig.eigenvalues.amax().max(1.0);
    idx.iter()
        .skip(1)
        .take(count)
        .map(|&k| {
            // tilt towards degenerate partners so the ordering has no ties
            let mut v = eig.eigenvectors.column(k).into_owned();
            let mut tilt = 0.1;
            for &j in &idx {
                if j != k && (eig.eigenvalues[j] - eig.eigenvalues[k]).abs() < 1e-9 * scale {
                    v += eig.eigenvectors.column(j) * tilt;
                    tilt *= 0.618;
                }
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
            let mut place = vec![0; n];
            for (pos, &vertex) in order.iter().enumerate() {
                place[vertex] = pos;
            }
            place
        })
        .collect()
}

/// Best-improvement descent over transpositions of two ions, spending at
/// most `budget` evaluations. Returns the placement, its infidelity, the
/// evaluations used and whether the budget stopped the descent.
fn swap_descent(
    fitter: &WeightFitter,
    edges: &[(usize, usize, f64)],
    norm: f64,
    start: Vec<usize>,
    budget: usize,
) -> (Vec<usize>, f64, usize, bool) {
    let n = start.len();
    let mut place = start;
    let mut value = fitter.infidelity(edges, &place, norm);
    let mut used = 1;
    let swaps: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    loop {
        if used + swaps.len() > budget {
            return (place, value, used, true);
        }
        let trials: Vec<(Vec<usize>, f64)> = swaps
            .par_iter()
            .map(|&(a, b)| {
                let mut p = place.clone();
                p.swap(a, b);
                let v = fitter.infidelity(edges, &p, norm);
                (p, v)
            })
            .collect();
        used += trials.len();
        let mut step: Option<(Vec<usize>, f64)> = None;
        for (p, v) in trials {
            if v < value - TIE_TOL && step.as_ref().is_none_or(|(sp, sv)| better((&p, v), (sp, *sv))) {
                step = Some((p, v));
            }
        }
        match step {
            Some((p, v)) => {
                place = p;
                value = v;
            }
            None => return (place, value, used, false),
        }
    }
}
