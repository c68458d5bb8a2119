use nalgebra::DMatrix;
use serde::Serialize;

use crate::coupling::WeightVector;
use crate::error::{Error, Result};
use crate::graphs::InteractionGraph;
use crate::modes::ModeSpectrum;

/// Off-diagonal ratio below which a graph counts as exactly accessible.
pub const ACCESSIBLE_RATIO: f64 = 1e-8;

#[derive(Clone, Debug, Serialize)]
pub struct AccessibilityReport {
    pub accessible: bool,
    /// `C = B^T J_des B`.
    #[serde(serialize_with = "crate::modes::ser_matrix")]
    pub c: DMatrix<f64>,
    /// Norm of the part of `C` not explained by the weights, over `||C||`.
    pub offdiag_norm_ratio: f64,
    /// Diagonal of `C`, averaged within degenerate groups.
    pub weights: WeightVector,
    pub degenerate_groups: Vec<Vec<usize>>,
}

/// Decides whether `g` is exactly `sum_k c_k J^(k)` for the given modes.
///
/// Degenerate modes share one frequency and therefore one weight, so inside
/// each degenerate group `C` must be a multiple of the identity: the group's
/// diagonal is replaced by its average and everything else left over counts
/// towards the ratio.
pub fn accessibility_test(g: &InteractionGraph, modes: &ModeSpectrum) -> Result<AccessibilityReport> {
    let n = modes.len();
    if g.n() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: g.n() });
    }
    let lap = g.matrix.to_laplacian();
    let c = modes.b.transpose() * &lap.j * &modes.b;
    let c = (&c + c.transpose()) * 0.5;

    let mut weights: Vec<f64> = c.diagonal().iter().copied().collect();
    let groups = modes.degenerate_groups();
    for group in &groups {
        let avg = group.iter().map(|&k| weights[k]).sum::<f64>() / group.len() as f64;
        for &k in group {
            weights[k] = avg;
        }
    }
    let mut residual = c.clone();
    for k in 0..n {
        residual[(k, k)] -= weights[k];
    }
    let total = c.norm();
    let offdiag_norm_ratio = if total == 0.0 { 0.0 } else { residual.norm() / total };
    Ok(AccessibilityReport {
        accessible: offdiag_norm_ratio < ACCESSIBLE_RATIO,
        c,
        offdiag_norm_ratio,
        weights: WeightVector(weights),
        degenerate_groups: groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::{compose_coupling, infidelity, CouplingMatrix};
    use crate::equilibrium::{solve_equilibrium_1d, solve_equilibrium_2d};
    use crate::graphs::{laplacian_form, named_graph, Layout};
    use crate::modes::crystal_modes;
    use crate::trap::TrapConfig;
    use rand::{Rng, SeedableRng};
    use std::collections::BTreeMap;

    fn chain_modes(n: usize) -> ModeSpectrum {
        crystal_modes(&solve_equilibrium_1d(&TrapConfig::default_chain(), n).unwrap()).unwrap()
    }

    #[test]
    fn all_to_all_needs_only_com() {
        let modes = chain_modes(8);
        let g = named_graph("all_to_all", Layout::Chain(8), &BTreeMap::new()).unwrap();
        let rep = accessibility_test(&g, &modes).unwrap();
        assert!(rep.accessible);
        // Laplacian convention: c_COM = 0, all others equal
        assert!(rep.weights.0[0].abs() < 1e-10);
        for &w in &rep.weights.0[1..] {
            assert!((w - rep.weights.0[1]).abs() < 1e-10 && w < 0.0);
        }
    }

    #[test]
    fn dimer_is_accessible_on_harmonic_chains() {
        for n in [4, 5, 10, 11] {
            let modes = chain_modes(n);
            let g = named_graph("dimer", Layout::Chain(n), &BTreeMap::new()).unwrap();
            let rep = accessibility_test(&g, &modes).unwrap();
            assert!(rep.accessible, "N = {n}: ratio {}", rep.offdiag_norm_ratio);
            let j = compose_coupling(&rep.weights, &modes.interaction_matrices()).unwrap();
            assert!(infidelity(&j, &g.matrix).unwrap() < 1e-10);
        }
    }

    #[test]
    fn monotone_ring_five_is_inaccessible() {
        let modes = chain_modes(5);
        let g = named_graph("ring", Layout::Chain(5), &BTreeMap::new()).unwrap();
        let rep = accessibility_test(&g, &modes).unwrap();
        assert!(!rep.accessible);
        assert!(rep.offdiag_norm_ratio > 0.1);
    }

    #[test]
    fn random_combinations_recover_weights() {
        let modes = chain_modes(7);
        let set = modes.interaction_matrices();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let c: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let j = compose_coupling(&WeightVector(c.clone()), &set).unwrap();
            let g = laplacian_form(&j);
            let rep = accessibility_test(&g, &modes).unwrap();
            assert!(rep.accessible);
            let shift = c[0] - rep.weights.0[0];
            for k in 0..7 {
                assert!((rep.weights.0[k] + shift - c[k]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn planar_all_to_all_and_dimer_with_degenerate_modes() {
        let crystal = solve_equilibrium_2d(&TrapConfig::planar_mhz(5.0, 0.1), 7).unwrap();
        let modes = crystal_modes(&crystal).unwrap();
        assert!(!modes.degenerate_groups().is_empty());
        for name in ["all_to_all", "dimer", "star", "ring", "trimer_pair"] {
            let g = named_graph(name, Layout::Planar(&crystal), &BTreeMap::new()).unwrap();
            let rep = accessibility_test(&g, &modes).unwrap();
            assert!(rep.accessible, "{name}: {}", rep.offdiag_norm_ratio);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let g = laplacian_form(&CouplingMatrix::raw(DMatrix::zeros(3, 3)));
        assert!(matches!(accessibility_test(&g, &chain_modes(4)), Err(Error::DimensionMismatch { .. })));
    }
}
