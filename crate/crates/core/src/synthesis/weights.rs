use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::coupling::{compose_coupling, infidelity, WeightVector};
use crate::error::{Error, Result};
use crate::graphs::InteractionGraph;
use crate::modes::ModeInteractionSet;

const RANK_TOL: f64 = 1e-10;

/// Least-squares mode weights for `g`: minimizes the Frobenius distance
/// between `sum_k c_k J~^(k)` and `J~_des` over the stacked off-diagonal
/// system, taking the minimum-norm solution when the system is rank
/// deficient. Returns the weights and the infidelity they achieve.
pub fn optimize_weights(g: &InteractionGraph, modes: &ModeInteractionSet) -> Result<(WeightVector, f64)> {
    let n = modes.n_ions();
    if g.n() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: g.n() });
    }
    if g.matrix.offdiag_norm() == 0.0 {
        return Err(Error::ZeroOffDiagonal);
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let nm = modes.len();
    let system = DMatrix::from_fn(pairs.len(), nm, |row, k| {
        let (i, j) = pairs[row];
        modes.b[(i, k)] * modes.b[(j, k)]
    });
    let rhs = DVector::from_iterator(pairs.len(), pairs.iter().map(|&(i, j)| g.matrix.j[(i, j)]));
    let svd = system.svd(true, true);
    let tol = RANK_TOL * svd.singular_values.max();
    let c = svd.solve(&rhs, tol).map_err(|e| Error::NonConvergence(e.to_string()))?;
    let weights = WeightVector(c.iter().copied().collect());
    let j_exp = compose_coupling(&weights, modes)?;
    let inf = infidelity(&j_exp, &g.matrix)?;
    Ok((weights, inf))
}

/// Precomputed normal equations for repeated weight fits against one set
/// of modes.
///
/// With `G_kl = <J~^(k), J~^(l)> = delta_kl - sum_i B_ik^2 B_il^2` and
/// `r_k = b_k^T J~ b_k`, the best fit is `c = G^+ r` and its overlap with the
/// target is `sqrt(r^T G^+ r)`. Used by the relabeling search, where the
/// target changes but the modes do not.
#[derive(Clone, Debug)]
pub struct WeightFitter {
    pub(crate) b: DMatrix<f64>,
    gram_pinv: DMatrix<f64>,
}

impl WeightFitter {
    pub fn new(modes: &ModeInteractionSet) -> Self {
        let b = modes.b.clone();
        let m = b.ncols();
        let sq = b.map(|x| x * x);
        let gram = DMatrix::identity(m, m) - sq.transpose() * &sq;
        let eig = SymmetricEigen::new(gram);
        let top = eig.eigenvalues.amax();
        let mut pinv = DMatrix::zeros(m, m);
        for k in 0..m {
            let lam = eig.eigenvalues[k];
            if lam > RANK_TOL * top {
                let v = eig.eigenvectors.column(k);
                pinv += (&v * v.transpose()) / lam;
            }
        }
        Self { b, gram_pinv: pinv }
    }

    pub fn n(&self) -> usize {
        self.b.nrows()
    }

    /// `r_k` for a target given as weighted edges where vertex `a` sits at
    /// position `place[a]`.
    pub fn projections(&self, edges: &[(usize, usize, f64)], place: &[usize]) -> DVector<f64> {
        let m = self.b.ncols();
        let mut r = DVector::zeros(m);
        for &(a, b, w) in edges {
            let (pa, pb) = (place[a], place[b]);
            for k in 0..m {
                r[k] += 2.0 * w * self.b[(pa, k)] * self.b[(pb, k)];
            }
        }
        r
    }

    /// `r^T G^+ r`, the squared norm of the best fit.
    pub fn quadratic(&self, r: &[f64]) -> f64 {
        let m = r.len();
        let mut total = 0.0;
        for k in 0..m {
            let mut row = 0.0;
            for l in 0..m {
                row += self.gram_pinv[(k, l)] * r[l];
            }
            total += r[k] * row;
        }
        total
    }

    /// Best-fit infidelity for the edge list under the placement.
    /// `target_norm` is the Frobenius norm of the stripped target.
    pub fn infidelity(&self, edges: &[(usize, usize, f64)], place: &[usize], target_norm: f64) -> f64 {
        let r = self.projections(edges, place);
        let fitted = self.quadratic(r.as_slice()).max(0.0).sqrt();
        (0.5 * (1.0 - fitted / target_norm)).clamp(0.0, 1.0)
    }

    pub fn weights(&self, edges: &[(usize, usize, f64)], place: &[usize]) -> WeightVector {
        let r = self.projections(edges, place);
        WeightVector((&self.gram_pinv * r).iter().copied().collect())
    }
}

/// Equal weight on every other mode starting from the COM mode, i.e. the
/// mirror-symmetric modes. On sinusoidal modes this gives
/// `(I + anti-identity) / 2` for even N. The complementary set (the
/// antisymmetric modes) gives `(I - anti-identity) / 2`, the same dimers with
/// the opposite sign.
pub fn dimer_weights(n: usize) -> WeightVector {
    WeightVector((0..n).map(|k| if k % 2 == 0 { 1.0 } else { 0.0 }).collect())
}

/// `c_k = 2 cos((k - 1) pi / N)`, which on sinusoidal modes gives the
/// nearest-neighbour path plus two corner diagonal entries.
pub fn analytic_nn_weights(n: usize) -> WeightVector {
    WeightVector((0..n).map(|k| 2.0 * (k as f64 * std::f64::consts::PI / n as f64).cos()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::solve_equilibrium_1d;
    use crate::graphs::{named_graph, power_law_graph, Layout};
    use crate::modes::{crystal_modes, sinusoidal_modes};
    use crate::trap::TrapConfig;
    use std::collections::BTreeMap;

    fn chain_set(n: usize) -> ModeInteractionSet {
        crystal_modes(&solve_equilibrium_1d(&TrapConfig::default_chain(), n).unwrap()).unwrap().interaction_matrices()
    }

    #[test]
    fn residual_is_orthogonal_to_every_mode_matrix() {
        let set = chain_set(9);
        let g = power_law_graph(Layout::Chain(9), 1.3, 1.0).unwrap();
        let (c, _) = optimize_weights(&g, &set).unwrap();
        let mut resid = compose_coupling(&c, &set).unwrap().stripped() - g.matrix.stripped();
        resid.fill_diagonal(0.0);
        for jk in &set.matrices {
            let mut s = jk.clone();
            s.fill_diagonal(0.0);
            assert!(resid.dot(&s).abs() < 1e-9);
        }
    }

    #[test]
    fn fast_fitter_matches_stacked_solve() {
        let set = chain_set(8);
        let fitter = WeightFitter::new(&set);
        let identity: Vec<usize> = (0..8).collect();
        for alpha in [0.5, 1.0, 2.0] {
            let g = power_law_graph(Layout::Chain(8), alpha, 1.0).unwrap();
            let (c, inf) = optimize_weights(&g, &set).unwrap();
            let norm = g.matrix.offdiag_norm();
            assert!((fitter.infidelity(&g.edges(), &identity, norm) - inf).abs() < 1e-12);
            let fast = fitter.weights(&g.edges(), &identity);
            let ja = compose_coupling(&c, &set).unwrap().stripped();
            let jb = compose_coupling(&fast, &set).unwrap().stripped();
            assert!((ja - jb).norm() < 1e-10);
        }
    }

    #[test]
    fn accessible_graph_has_zero_infidelity() {
        let set = chain_set(6);
        let g = named_graph("dimer", Layout::Chain(6), &BTreeMap::new()).unwrap();
        assert!(optimize_weights(&g, &set).unwrap().1 < 1e-10);
    }

    #[test]
    fn zero_graph_is_rejected() {
        let set = chain_set(4);
        let g = InteractionGraph::from_edges(4, &[], "empty").unwrap();
        assert!(matches!(optimize_weights(&g, &set), Err(Error::ZeroOffDiagonal)));
    }

    #[test]
    fn dimer_closed_form_on_sinusoidal_modes() {
        let set = ModeInteractionSet::from_participation(&sinusoidal_modes(4));
        let j = compose_coupling(&dimer_weights(4), &set).unwrap().j;
        let expected = DMatrix::from_fn(4, 4, |i, k| if i == k || i + k == 3 { 0.5 } else { 0.0 });
        assert!((j - expected).amax() < 1e-12);

        let anti = WeightVector(dimer_weights(4).0.iter().map(|c| 1.0 - c).collect());
        let j = compose_coupling(&anti, &set).unwrap().j;
        let expected = DMatrix::from_fn(4, 4, |i, k| {
            if i == k {
                0.5
            } else if i + k == 3 {
                -0.5
            } else {
                0.0
            }
        });
        assert!((j - expected).amax() < 1e-12);
    }

    #[test]
    fn nn_closed_form_on_sinusoidal_modes() {
        let n = 5;
        let set = ModeInteractionSet::from_participation(&sinusoidal_modes(n));
        let j = compose_coupling(&analytic_nn_weights(n), &set).unwrap().j;
        for a in 0..n {
            for b in 0..n {
                let expected = if a.abs_diff(b) == 1 || (a == b && (a == 0 || a == n - 1)) { 1.0 } else { 0.0 };
                assert!((j[(a, b)] - expected).abs() < 1e-12, "({a},{b}) = {}", j[(a, b)]);
            }
        }
    }
}
