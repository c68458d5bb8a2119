//! Transverse normal modes along the drive axis.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::equilibrium::Crystal;
use crate::error::{Error, Result};
use crate::trap::{DriveAxis, TrapConfig};

/// Modes whose frequencies differ by less than this are treated as degenerate.
pub const DEGENERACY_GAP: f64 = 1e-9;
const COLLISION_DISTANCE: f64 = 1e-9;

/// Normal modes: dimensionless frequencies (units of omega_z_tilde) sorted
/// descending and the orthogonal participation matrix whose column `k` is
/// the mode vector `b_k`.
#[derive(Clone, Debug)]
pub struct ModeSpectrum {
    pub frequencies: Vec<f64>,
    pub b: DMatrix<f64>,
    pub axis: DriveAxis,
    /// omega_z_tilde in rad/s, used to restore physical units.
    pub frequency_scale: f64,
}

impl ModeSpectrum {
    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    /// Runs of consecutive modes with frequency gaps below `DEGENERACY_GAP`.
    /// Singletons are omitted.
    pub fn degenerate_groups(&self) -> Vec<Vec<usize>> {
        degenerate_runs(&self.frequencies)
    }

    pub fn interaction_matrices(&self) -> ModeInteractionSet {
        mode_interaction_matrices(self)
    }
}

fn degenerate_runs(values: &[f64]) -> Vec<Vec<usize>> {
    let mut groups = Vec::new();
    let mut current = vec![0];
    for k in 1..values.len() {
        if (values[k - 1] - values[k]).abs() < DEGENERACY_GAP {
            current.push(k);
        } else {
            if current.len() > 1 {
                groups.push(std::mem::take(&mut current));
            }
            current = vec![k];
        }
    }
    if current.len() > 1 {
        groups.push(current);
    }
    groups
}

/// Rank-1 mode interaction matrices `J^(k) = b_k b_k^T`.
#[derive(Clone, Debug)]
pub struct ModeInteractionSet {
    pub b: DMatrix<f64>,
    pub matrices: Vec<DMatrix<f64>>,
}

impl ModeInteractionSet {
    pub fn from_participation(b: &DMatrix<f64>) -> Self {
        let matrices = (0..b.ncols())
            .map(|k| {
                let col = b.column(k);
                &col * col.transpose()
            })
            .collect();
        Self { b: b.clone(), matrices }
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn n_ions(&self) -> usize {
        self.b.nrows()
    }
}

/// Dimensionless Hessian of the transverse potential along the drive axis.
pub fn build_a_matrix(crystal: &Crystal, trap: &TrapConfig) -> Result<DMatrix<f64>> {
    let n = crystal.len();
    let base = trap.drive_ratio_sq();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = base;
    }
    for i in 0..n {
        for j in i + 1..n {
            let d = crystal.distance(i, j);
            if d < COLLISION_DISTANCE {
                return Err(Error::IonCollision(i, j));
            }
            let k = 1.0 / (d * d * d);
            a[(i, j)] = k;
            a[(j, i)] = k;
            a[(i, i)] -= k;
            a[(j, j)] -= k;
        }
    }
    Ok(a)
}

/// Eigen-decomposition of `a` into a [`ModeSpectrum`].
///
/// Within degenerate groups the basis is fixed by Gram-Schmidt on the
/// projections of the ion unit vectors in index order, so the result does
/// not depend on the eigensolver's choice of basis.
pub fn diagonalize_modes(a: &DMatrix<f64>, trap: &TrapConfig) -> Result<ModeSpectrum> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: a.ncols() });
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap().then(i.cmp(&j)));

    let mut frequencies = Vec::with_capacity(n);
    let mut b = DMatrix::zeros(n, n);
    for (k, &idx) in order.iter().enumerate() {
        let lam = eig.eigenvalues[idx];
        if lam <= 0.0 {
            return Err(Error::UnstableCrystal(lam));
        }
        frequencies.push(lam.sqrt());
        b.set_column(k, &eig.eigenvectors.column(idx));
    }
    for group in degenerate_runs(&frequencies) {
        canonicalize_subspace(&mut b, &group);
    }
    fix_signs(&mut b);
    Ok(ModeSpectrum { frequencies, b, axis: trap.drive_axis, frequency_scale: trap.omega_z_tilde })
}

fn canonicalize_subspace(b: &mut DMatrix<f64>, group: &[usize]) {
    let n = b.nrows();
    let basis = DMatrix::from_fn(n, group.len(), |i, c| b[(i, group[c])]);
    let projector = &basis * basis.transpose();
    let mut accepted: Vec<DVector<f64>> = Vec::with_capacity(group.len());
    for i in 0..n {
        if accepted.len() == group.len() {
            break;
        }
        let mut v: DVector<f64> = projector.column(i).into_owned();
        for _ in 0..2 {
            for u in &accepted {
                let p = u.dot(&v);
                v -= u * p;
            }
        }
        let norm = v.norm();
        if norm > 1e-6 {
            accepted.push(v / norm);
        }
    }
    for (c, v) in group.iter().zip(accepted) {
        b.set_column(*c, &v);
    }
}

/// First entry with magnitude above 1e-9 in every column is made positive.
fn fix_signs(b: &mut DMatrix<f64>) {
    for k in 0..b.ncols() {
        if let Some(&first) = b.column(k).iter().find(|x| x.abs() > 1e-9) {
            if first < 0.0 {
                b.column_mut(k).neg_mut();
            }
        }
    }
}

/// Modes of a crystal along its drive axis.
pub fn crystal_modes(crystal: &Crystal) -> Result<ModeSpectrum> {
    let a = build_a_matrix(crystal, &crystal.trap)?;
    diagonalize_modes(&a, &crystal.trap)
}

/// Sinusoidal approximation to equispaced-chain modes:
/// `B_jk = sqrt((2 - delta_k1)/N) cos((2j - 1)(k - 1) pi / 2N)` (1-based).
pub fn sinusoidal_modes(n: usize) -> DMatrix<f64> {
    let nf = n as f64;
    DMatrix::from_fn(n, n, |j, k| {
        let norm = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        norm * ((2 * j + 1) as f64 * k as f64 * std::f64::consts::PI / (2.0 * nf)).cos()
    })
}

pub fn mode_interaction_matrices(spec: &ModeSpectrum) -> ModeInteractionSet {
    ModeInteractionSet::from_participation(&spec.b)
}

/// Mode spectrum in JSON form.
#[derive(Serialize)]
pub struct ModeReport {
    pub frequencies: Vec<f64>,
    /// Physical frequencies, MHz.
    pub frequencies_mhz: Vec<f64>,
    /// Row-major participation matrix, `b[i][k] = B_ik`.
    pub b: Vec<Vec<f64>>,
    pub axis: DriveAxis,
}

impl From<&ModeSpectrum> for ModeReport {
    fn from(spec: &ModeSpectrum) -> Self {
        Self {
            frequencies: spec.frequencies.clone(),
            frequencies_mhz: spec.frequencies.iter().map(|w| w * spec.frequency_scale / crate::trap::MHZ).collect(),
            b: matrix_rows(&spec.b),
            axis: spec.axis,
        }
    }
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub(crate) fn ser_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    matrix_rows(m).serialize(s)
}
