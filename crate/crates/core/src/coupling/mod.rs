//! Coupling matrices from mode weights, bichromatic tones, and the
//! infidelity metric.

pub mod nnls;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modes::{ModeInteractionSet, ModeSpectrum};
use crate::trap::{PhysicalConstants, MHZ};

/// Minimum distance between a beatnote and any mode frequency (units of omega_z_tilde).
pub const GUARD_BAND: f64 = 1e-6;
/// Largest relative residual accepted from tone synthesis.
pub const MAX_SYNTHESIS_RESIDUAL: f64 = 1e-3;

/// Mode weights `c_k`; the overall scale carries no meaning for infidelity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(pub Vec<f64>);

impl WeightVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// One bichromatic tone: beatnote `mu` (units of omega_z_tilde) and Rabi
/// frequency `omega` (rad/s).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub mu: f64,
    pub omega: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ToneSet {
    pub tones: Vec<Tone>,
}

impl ToneSet {
    pub fn single(mu: f64, omega: f64) -> Self {
        Self { tones: vec![Tone { mu, omega }] }
    }

    pub fn validate(&self, modes: &ModeSpectrum) -> Result<()> {
        for (m, tone) in self.tones.iter().enumerate() {
            if !(tone.omega >= 0.0 && tone.omega.is_finite() && tone.mu.is_finite()) {
                return Err(Error::InvalidArgument(format!("tone {m} has invalid parameters")));
            }
            if self.tones[..m].iter().any(|t| t.mu == tone.mu) {
                return Err(Error::InvalidArgument(format!("duplicate beatnote {}", tone.mu)));
            }
            if let Some(k) = modes.frequencies.iter().position(|w| (tone.mu - w).abs() < GUARD_BAND) {
                return Err(Error::ResonantTone { mu: tone.mu, mode: k });
            }
        }
        Ok(())
    }
}

/// Diagonal convention of a stored coupling matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagonalConvention {
    /// Diagonal cancels each row sum.
    LaplacianDiagonal,
    ZeroDiagonal,
    RawDiagonal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingMatrix {
    pub j: DMatrix<f64>,
    pub convention: DiagonalConvention,
}

impl CouplingMatrix {
    pub fn raw(j: DMatrix<f64>) -> Self {
        Self { j, convention: DiagonalConvention::RawDiagonal }
    }

    pub fn n(&self) -> usize {
        self.j.nrows()
    }

    /// Copy with the diagonal removed.
    pub fn stripped(&self) -> DMatrix<f64> {
        let mut m = self.j.clone();
        m.fill_diagonal(0.0);
        m
    }

    pub fn to_zero_diagonal(&self) -> Self {
        Self { j: self.stripped(), convention: DiagonalConvention::ZeroDiagonal }
    }

    pub fn to_laplacian(&self) -> Self {
        let mut m = self.stripped();
        for i in 0..m.nrows() {
            let s: f64 = m.row(i).iter().sum();
            m[(i, i)] = -s;
        }
        Self { j: m, convention: DiagonalConvention::LaplacianDiagonal }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let n = self.n();
        self.j.ncols() == n && (0..n).all(|i| (0..i).all(|k| (self.j[(i, k)] - self.j[(k, i)]).abs() <= tol))
    }

    /// Frobenius norm of the off-diagonal part.
    pub fn offdiag_norm(&self) -> f64 {
        self.stripped().norm()
    }
}

/// `J = sum_k c_k J^(k)` in raw diagonal convention.
pub fn compose_coupling(weights: &WeightVector, modes: &ModeInteractionSet) -> Result<CouplingMatrix> {
    if weights.len() != modes.len() {
        return Err(Error::DimensionMismatch { expected: modes.len(), actual: weights.len() });
    }
    let c = DVector::from_column_slice(weights.as_slice());
    let scaled = &modes.b * DMatrix::from_diagonal(&c);
    let mut j = scaled * modes.b.transpose();
    // exact symmetry
    let n = j.nrows();
    for i in 0..n {
        for k in 0..i {
            let v = 0.5 * (j[(i, k)] + j[(k, i)]);
            j[(i, k)] = v;
            j[(k, i)] = v;
        }
    }
    Ok(CouplingMatrix::raw(j))
}

/// Mode weights produced by a set of bichromatic tones:
/// `c_k = sum_m Omega_m^2 R / (mu_m^2 - omega_k^2)` with frequencies restored to rad/s.
pub fn tone_weights(tones: &ToneSet, modes: &ModeSpectrum, consts: &PhysicalConstants) -> Result<WeightVector> {
    tones.validate(modes)?;
    consts.validate()?;
    let scale2 = modes.frequency_scale * modes.frequency_scale;
    let c = modes
        .frequencies
        .iter()
        .map(|&w| {
            tones
                .tones
                .iter()
                .map(|t| t.omega * t.omega * consts.recoil_frequency / (scale2 * (t.mu * t.mu - w * w)))
                .sum()
        })
        .collect();
    Ok(WeightVector(c))
}

/// Fixed beatnote grid: midpoints between adjacent modes, then points
/// alternately above the highest and below the lowest mode at the mean
/// adjacent-mode spacing, until `grid_size` points exist.
pub fn beatnote_grid(frequencies: &[f64], grid_size: usize) -> Vec<f64> {
    let n = frequencies.len();
    let hi = frequencies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = frequencies.iter().copied().fold(f64::INFINITY, f64::min);
    let gap = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 1e-2 * hi };
    let mut sorted = frequencies.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut grid: Vec<f64> = sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let (mut above, mut below) = (1usize, 1usize);
    while grid.len() < grid_size {
        if above <= below || lo - below as f64 * gap <= 0.0 {
            grid.push(hi + above as f64 * gap);
            above += 1;
        } else {
            grid.push(lo - below as f64 * gap);
            below += 1;
        }
    }
    grid.sort_by(|a, b| b.partial_cmp(a).unwrap());
    grid
}

/// Result of inverting weights into tones.
#[derive(Clone, Debug)]
pub struct Synthesis {
    pub tones: ToneSet,
    /// `||c(tones) - target|| / ||target||` after unit-normalizing the target.
    pub relative_residual: f64,
}

/// Finds nonnegative tone powers on the fixed beatnote grid whose weights
/// reproduce `target` up to a positive scale.
///
/// `offset` is added to every normalized target weight before solving; it
/// does not change the off-diagonal coupling.
pub fn synthesize_tones(
    target: &WeightVector,
    modes: &ModeSpectrum,
    consts: &PhysicalConstants,
    grid_size: usize,
    offset: f64,
) -> Result<Synthesis> {
    let n = modes.len();
    if target.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: target.len() });
    }
    if grid_size < 2 * n + 1 {
        return Err(Error::InvalidArgument(format!("grid size {grid_size} < 2N+1 = {}", 2 * n + 1)));
    }
    consts.validate()?;
    let norm = target.norm();
    if norm == 0.0 {
        return Err(Error::InvalidArgument("target weights are all zero".into()));
    }
    let t = DVector::from_iterator(n, target.0.iter().map(|c| c / norm + offset));

    let grid = beatnote_grid(&modes.frequencies, grid_size);
    let scale2 = modes.frequency_scale * modes.frequency_scale;
    let response = DMatrix::from_fn(n, grid.len(), |k, m| {
        let w = modes.frequencies[k];
        consts.recoil_frequency / (scale2 * (grid[m] * grid[m] - w * w))
    });
    // unit columns for conditioning
    let col_norms: Vec<f64> = (0..grid.len()).map(|m| response.column(m).norm()).collect();
    let normalized = DMatrix::from_fn(n, grid.len(), |k, m| response[(k, m)] / col_norms[m]);
    let y = nnls::nnls(&normalized, &t);
    let fitted = &normalized * &y;
    let relative_residual = (&fitted - &t).norm() / t.norm();

    let tones = ToneSet {
        tones: grid
            .iter()
            .zip(y.iter().zip(&col_norms))
            .filter(|(_, (&p, _))| p > 0.0)
            .map(|(&mu, (&p, &cn))| Tone { mu, omega: (p / cn).sqrt() })
            .collect(),
    };
    if relative_residual > MAX_SYNTHESIS_RESIDUAL {
        return Err(Error::InfeasibleWeights(relative_residual));
    }
    Ok(Synthesis { tones, relative_residual })
}

/// Stripped Frobenius inner product and norms.
fn stripped_overlap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (f64, f64, f64) {
    let n = a.nrows();
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                ab += a[(i, j)] * b[(i, j)];
                aa += a[(i, j)] * a[(i, j)];
                bb += b[(i, j)] * b[(i, j)];
            }
        }
    }
    (ab, aa.sqrt(), bb.sqrt())
}

/// `I = (1 - <J~exp, J~des> / (||J~exp|| ||J~des||)) / 2` over diagonal-stripped matrices.
pub fn infidelity(j_exp: &CouplingMatrix, j_des: &CouplingMatrix) -> Result<f64> {
    infidelity_raw(&j_exp.j, &j_des.j)
}

pub fn infidelity_raw(j_exp: &DMatrix<f64>, j_des: &DMatrix<f64>) -> Result<f64> {
    if j_exp.shape() != j_des.shape() {
        return Err(Error::DimensionMismatch { expected: j_des.nrows(), actual: j_exp.nrows() });
    }
    let (ab, na, nb) = stripped_overlap(j_exp, j_des);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroOffDiagonal);
    }
    Ok((0.5 * (1.0 - ab / (na * nb))).clamp(0.0, 1.0))
}

/// ToneSet in physical units for reports: mu in MHz, Omega in kHz.
#[derive(Serialize)]
pub struct ToneReport {
    pub mu_mhz: f64,
    pub omega_khz: f64,
}

pub fn tone_report(tones: &ToneSet, modes: &ModeSpectrum) -> Vec<ToneReport> {
    tones
        .tones
        .iter()
        .map(|t| ToneReport {
            mu_mhz: t.mu * modes.frequency_scale / MHZ,
            omega_khz: t.omega / (2.0 * std::f64::consts::PI * 1e3),
        })
        .collect()
}
