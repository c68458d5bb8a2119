//! Lawson-Hanson active-set nonnegative least squares.

use nalgebra::{DMatrix, DVector};

/// Minimizes `||a x - b||` subject to `x >= 0`.
///
/// Pivots enter the passive set by largest dual value, ties broken by the
/// lowest column index, so the result is deterministic.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 10.0 * f64::EPSILON * a.norm() * b.norm().max(1.0) * (n.max(a.nrows()) as f64);
    let max_outer = 3 * n + 10;

    for _ in 0..max_outer {
        let w = a.transpose() * (b - a * &x);
        let entering = (0..n).filter(|&j| !passive[j]).fold(None, |best: Option<usize>, j| match best {
            Some(k) if w[k] >= w[j] => Some(k),
            _ => Some(j),
        });
        let Some(j) = entering.filter(|&j| w[j] > tol) else {
            break;
        };
        passive[j] = true;

        // inner loop: keep the passive solution feasible
        loop {
            let idx: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let z_p = solve_subproblem(a, b, &idx);
            if z_p.iter().all(|&v| v > 0.0) {
                for (slot, &k) in idx.iter().enumerate() {
                    x[k] = z_p[slot];
                }
                break;
            }
            // step towards z until the first passive variable hits zero
            let mut alpha = f64::INFINITY;
            for (slot, &k) in idx.iter().enumerate() {
                if z_p[slot] <= 0.0 {
                    let denom = x[k] - z_p[slot];
                    if denom > 0.0 {
                        alpha = alpha.min(x[k] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            for (slot, &k) in idx.iter().enumerate() {
                x[k] += alpha * (z_p[slot] - x[k]);
            }
            for &k in &idx {
                if x[k] <= tol.max(f64::MIN_POSITIVE) {
                    x[k] = 0.0;
                    passive[k] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    x
}

fn solve_subproblem(a: &DMatrix<f64>, b: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    let sub = DMatrix::from_fn(a.nrows(), idx.len(), |i, c| a[(i, idx[c])]);
    let svd = sub.svd(true, true);
    svd.solve(b, 1e-13 * svd.singular_values.max()).unwrap_or_else(|_| DVector::zeros(idx.len()))
}
