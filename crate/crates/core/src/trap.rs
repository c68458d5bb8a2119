//! Confining potential, physical constants and unit conversions.
//!
//! Everything downstream of this module works in dimensionless units: lengths
//! in units of [`LengthScale`], frequencies in units of `omega_z_tilde`. The
//! axial potential is the polynomial `V(z) = sum_n beta_n z^n`, with the common
//! prefactor `m omega_z_tilde^2 / 2` factored out.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Conversion factor from MHz to angular frequency (rad/s).
pub const MHZ: f64 = 2.0 * PI * 1.0e6;

const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;
const HBAR: f64 = 1.054_571_817e-34;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// kg
    pub ion_mass: f64,
    /// C
    pub ion_charge: f64,
    /// F/m
    pub vacuum_permittivity: f64,
    /// Recoil frequency `hbar dk^2 / 2m`, rad/s.
    pub recoil_frequency: f64,
    /// Global on-resonance Rabi frequency, rad/s.
    pub rabi_scale: f64,
}

impl PhysicalConstants {
    /// 171Yb+ driven by counter-propagating 355 nm Raman beams.
    pub fn ytterbium171() -> Self {
        let ion_mass = 171.0 * ATOMIC_MASS_UNIT;
        let delta_k = 2f64.sqrt() * 2.0 * PI / 355.0e-9;
        Self {
            ion_mass,
            ion_charge: ELEMENTARY_CHARGE,
            vacuum_permittivity: VACUUM_PERMITTIVITY,
            recoil_frequency: HBAR * delta_k * delta_k / (2.0 * ion_mass),
            rabi_scale: 2.0 * PI * 0.5e6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("ion_mass", self.ion_mass),
            ("ion_charge", self.ion_charge),
            ("vacuum_permittivity", self.vacuum_permittivity),
            ("recoil_frequency", self.recoil_frequency),
            ("rabi_scale", self.rabi_scale),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidTrap(format!("{name} must be positive, got {value}")));
            }
        }
        Ok(())
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::ytterbium171()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Geometry {
    Chain1D,
    Crystal2D,
}

/// Transverse axis addressed by the entangling drives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriveAxis {
    X,
    Y,
}

/// Trap frequencies and the polynomial shape of the axial potential.
///
/// For [`Geometry::Crystal2D`] the ions lie in the plane spanned by the
/// non-driven transverse axis and z; the drive axis is the stiff
/// (drumhead) direction.
#[derive(Clone, Debug, PartialEq)]
pub struct TrapConfig {
    /// rad/s
    pub omega_x: f64,
    /// rad/s
    pub omega_y: f64,
    /// Axial frequency scale, rad/s.
    pub omega_z_tilde: f64,
    /// Sparse map from polynomial order (n >= 2) to dimensionless coefficient.
    pub beta: BTreeMap<u32, f64>,
    pub geometry: Geometry,
    pub drive_axis: DriveAxis,
}

impl TrapConfig {
    /// Harmonic linear chain with frequencies given in MHz.
    pub fn harmonic_chain_mhz(omega_x: f64, omega_y: f64, omega_z: f64) -> Self {
        Self {
            omega_x: omega_x * MHZ,
            omega_y: omega_y * MHZ,
            omega_z_tilde: omega_z * MHZ,
            beta: harmonic_beta(),
            geometry: Geometry::Chain1D,
            drive_axis: DriveAxis::X,
        }
    }

    /// Default 1D configuration: 2pi x {5, 5, 0.1} MHz, harmonic axial potential.
    pub fn default_chain() -> Self {
        Self::harmonic_chain_mhz(5.0, 5.0, 0.1)
    }

    /// Planar crystal with a stiff drive axis and isotropic in-plane confinement.
    pub fn planar_mhz(omega_drive: f64, omega_plane: f64) -> Self {
        Self {
            omega_x: omega_drive * MHZ,
            omega_y: omega_plane * MHZ,
            omega_z_tilde: omega_plane * MHZ,
            beta: harmonic_beta(),
            geometry: Geometry::Crystal2D,
            drive_axis: DriveAxis::X,
        }
    }

    pub fn with_beta(mut self, beta: BTreeMap<u32, f64>) -> Self {
        self.beta = beta;
        self
    }

    /// Angular frequency of the drive axis.
    pub fn omega_drive(&self) -> f64 {
        match self.drive_axis {
            DriveAxis::X => self.omega_x,
            DriveAxis::Y => self.omega_y,
        }
    }

    /// Non-driven transverse frequency; the second in-plane axis of a 2D crystal.
    pub fn omega_other(&self) -> f64 {
        match self.drive_axis {
            DriveAxis::X => self.omega_y,
            DriveAxis::Y => self.omega_x,
        }
    }

    /// (omega_drive / omega_z_tilde)^2, the constant part of the A-matrix diagonal.
    pub fn drive_ratio_sq(&self) -> f64 {
        let r = self.omega_drive() / self.omega_z_tilde;
        r * r
    }

    pub fn is_harmonic(&self) -> bool {
        self.beta.iter().all(|(&n, &b)| if n == 2 { b == 1.0 } else { b == 0.0 }) && self.beta.get(&2) == Some(&1.0)
    }

    /// True when every nonzero coefficient has even order.
    pub fn is_symmetric(&self) -> bool {
        self.beta.iter().all(|(&n, &b)| b == 0.0 || n % 2 == 0)
    }

    /// Checks the type invariants: positive frequencies, orders >= 2, and for
    /// chains a confining axial potential.
    pub fn validate(&self) -> Result<()> {
        for (name, value) in
            [("omega_x", self.omega_x), ("omega_y", self.omega_y), ("omega_z_tilde", self.omega_z_tilde)]
        {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidTrap(format!("{name} must be positive, got {value}")));
            }
        }
        for (&n, &b) in &self.beta {
            if n < 2 {
                return Err(Error::InvalidTrap(format!("beta order {n} < 2")));
            }
            if !b.is_finite() {
                return Err(Error::InvalidTrap(format!("beta_{n} is not finite")));
            }
        }
        match self.geometry {
            Geometry::Chain1D => self.check_confining(),
            Geometry::Crystal2D => {
                let only_quadratic = self.beta.iter().all(|(&n, &b)| n == 2 || b == 0.0);
                match self.beta.get(&2) {
                    Some(&b2) if only_quadratic && b2 > 0.0 => Ok(()),
                    _ => Err(Error::InvalidPotential("2D crystals require harmonic in-plane confinement".into())),
                }
            }
        }
    }

    fn check_confining(&self) -> Result<()> {
        match self.beta.iter().rev().find(|(_, &b)| b != 0.0) {
            Some((&n, &b)) if n % 2 == 0 && b > 0.0 => Ok(()),
            Some((&n, &b)) => Err(Error::InvalidPotential(format!("leading term beta_{n} = {b} is unbounded below"))),
            None => Err(Error::InvalidPotential("all beta coefficients vanish".into())),
        }
    }
}

pub fn harmonic_beta() -> BTreeMap<u32, f64> {
    BTreeMap::from([(2, 1.0)])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthScale {
    /// m
    pub l: f64,
}

/// `l = [q^2 / (4 pi eps0 m omega_z_tilde^2)]^(1/3)`.
pub fn length_scale(consts: &PhysicalConstants, trap: &TrapConfig) -> LengthScale {
    let q = consts.ion_charge;
    let w = trap.omega_z_tilde;
    let l = (q * q / (4.0 * PI * consts.vacuum_permittivity * consts.ion_mass * w * w)).cbrt();
    LengthScale { l }
}

/// `sum_n beta_n z^n`.
pub fn axial_potential(trap: &TrapConfig, z: f64) -> f64 {
    poly_eval(&trap.beta, z, 0)
}

/// `dV/dz`.
pub fn axial_gradient(trap: &TrapConfig, z: f64) -> f64 {
    poly_eval(&trap.beta, z, 1)
}

/// `d^2V/dz^2`.
pub fn axial_curvature(trap: &TrapConfig, z: f64) -> f64 {
    poly_eval(&trap.beta, z, 2)
}

/// Evaluates the `deriv`-th derivative of `sum beta_n z^n`.
pub(crate) fn poly_eval(beta: &BTreeMap<u32, f64>, z: f64, deriv: u32) -> f64 {
    beta.iter()
        .filter(|(&n, &b)| n >= deriv && b != 0.0)
        .map(|(&n, &b)| {
            let falling: f64 = (0..deriv).map(|k| (n - k) as f64).product();
            b * falling * z.powi((n - deriv) as i32)
        })
        .sum()
}

/// JSON form of [`TrapConfig`]: frequencies in MHz, beta keyed by order.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapConfigDoc {
    pub omega_x: f64,
    pub omega_y: f64,
    pub omega_z_tilde: f64,
    #[serde(default = "harmonic_beta")]
    pub beta: BTreeMap<u32, f64>,
    #[serde(default = "default_geometry")]
    pub geometry: Geometry,
    #[serde(default = "default_axis")]
    pub drive_axis: DriveAxis,
}

fn default_geometry() -> Geometry {
    Geometry::Chain1D
}

fn default_axis() -> DriveAxis {
    DriveAxis::X
}

impl TryFrom<TrapConfigDoc> for TrapConfig {
    type Error = Error;

    fn try_from(doc: TrapConfigDoc) -> Result<Self> {
        let trap = TrapConfig {
            omega_x: doc.omega_x * MHZ,
            omega_y: doc.omega_y * MHZ,
            omega_z_tilde: doc.omega_z_tilde * MHZ,
            beta: doc.beta,
            geometry: doc.geometry,
            drive_axis: doc.drive_axis,
        };
        trap.validate()?;
        Ok(trap)
    }
}

impl From<&TrapConfig> for TrapConfigDoc {
    fn from(trap: &TrapConfig) -> Self {
        Self {
            omega_x: trap.omega_x / MHZ,
            omega_y: trap.omega_y / MHZ,
            omega_z_tilde: trap.omega_z_tilde / MHZ,
            beta: trap.beta.clone(),
            geometry: trap.geometry,
            drive_axis: trap.drive_axis,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn trap_with(beta: &[(u32, f64)]) -> TrapConfig {
        TrapConfig::default_chain().with_beta(beta.iter().copied().collect())
    }

    #[test]
    fn length_scale_matches_hand_evaluation() {
        let consts = PhysicalConstants::ytterbium171();
        let trap = TrapConfig::harmonic_chain_mhz(5.0, 5.0, 0.1);
        let k = 1.602_176_634e-19f64.powi(2) / (4.0 * PI * 8.854_187_812_8e-12);
        let mw2 = 171.0 * 1.660_539_066_60e-27 * (2.0 * PI * 1.0e5f64).powi(2);
        let expected = (k / mw2).cbrt();
        assert_relative_eq!(length_scale(&consts, &trap).l, expected, max_relative = 1e-14);
        // about 12.7 micrometres
        assert!((expected - 12.72e-6).abs() < 0.01e-6, "{expected}");
    }

    #[test]
    fn length_scale_power_laws() {
        let consts = PhysicalConstants::ytterbium171();
        let trap = TrapConfig::default_chain();
        let l0 = length_scale(&consts, &trap).l;
        let mut fast = trap.clone();
        fast.omega_z_tilde *= 8.0;
        assert_relative_eq!(length_scale(&consts, &fast).l, l0 / 4.0, max_relative = 1e-14);
        let mut heavy = consts.clone();
        heavy.ion_mass *= 8.0;
        assert_relative_eq!(length_scale(&heavy, &trap).l, l0 / 2.0, max_relative = 1e-14);
    }

    #[test]
    fn potential_examples() {
        let harmonic = TrapConfig::default_chain();
        assert_eq!(axial_potential(&harmonic, 2.0), 4.0);
        assert_eq!(axial_gradient(&harmonic, 3.0), 6.0);
        assert_eq!(axial_curvature(&harmonic, 3.0), 2.0);

        let dw = trap_with(&[(2, -1.0), (4, 1.0)]);
        assert_eq!(axial_potential(&dw, 0.0), 0.0);
        assert_eq!(axial_potential(&dw, 1.0), 0.0);
        assert_eq!(axial_curvature(&dw, 0.0), -2.0);
    }

    #[test]
    fn finite_difference_gradient_at_fixed_point() {
        let trap = trap_with(&[(2, 1.0), (3, -0.2), (4, 0.3), (6, 0.05)]);
        let z = 0.7;
        let h = 1e-5;
        let fd = (axial_potential(&trap, z + h) - axial_potential(&trap, z - h)) / (2.0 * h);
        assert_relative_eq!(axial_gradient(&trap, z), fd, max_relative = 1e-8);
    }

    #[test]
    fn confinement_validation() {
        assert!(TrapConfig::default_chain().validate().is_ok());
        assert!(trap_with(&[(2, -1.0), (4, 1.0)]).validate().is_ok());
        assert!(matches!(trap_with(&[(2, 1.0), (4, -1.0)]).validate(), Err(Error::InvalidPotential(_))));
        assert!(matches!(trap_with(&[(2, 1.0), (3, 1.0)]).validate(), Err(Error::InvalidPotential(_))));
        assert!(matches!(trap_with(&[(1, 1.0)]).validate(), Err(Error::InvalidTrap(_))));
        let mut bad = TrapConfig::default_chain();
        bad.omega_x = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn json_document_uses_mhz() {
        let doc: TrapConfigDoc = serde_json::from_str(
            r#"{"omega_x": 5.0, "omega_y": 5.0, "omega_z_tilde": 0.1, "beta": {"2": 1.0, "4": 0.3}}"#,
        )
        .unwrap();
        let trap = TrapConfig::try_from(doc).unwrap();
        assert_relative_eq!(trap.omega_x, 2.0 * PI * 5.0e6, max_relative = 1e-15);
        assert_eq!(trap.beta.get(&4), Some(&0.3));
        assert_eq!(trap.geometry, Geometry::Chain1D);
    }

    #[test]
    fn harmonic_potential_is_exactly_z_squared() {
        use rand::{Rng, SeedableRng};
        let trap = TrapConfig::default_chain();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let z: f64 = rng.gen_range(-100.0..100.0);
            assert_eq!(axial_potential(&trap, z), z * z);
        }
    }

    proptest! {
        #[test]
        fn derivatives_match_central_differences(
            coeffs in proptest::collection::vec(-1.0f64..1.0, 9),
            z in -5.0f64..5.0,
        ) {
            let beta: BTreeMap<u32, f64> =
                coeffs.iter().enumerate().map(|(i, &b)| (i as u32 + 2, b)).collect();
            let trap = TrapConfig::default_chain().with_beta(beta);
            let h = 1e-3 * z.abs().max(1.0);
            // Richardson-extrapolated central differences
            let diff = |f: &dyn Fn(f64) -> f64| {
                let d = |h: f64| (f(z + h) - f(z - h)) / (2.0 * h);
                (4.0 * d(h / 2.0) - d(h)) / 3.0
            };
            let fd_grad = diff(&|x| axial_potential(&trap, x));
            let fd_curv = diff(&|x| axial_gradient(&trap, x));
            // absolute floor for terms that nearly cancel
            let scale = (z.abs().max(1.0)).powi(9) * 10.0;
            prop_assert!((axial_gradient(&trap, z) - fd_grad).abs() <= 1e-6 * fd_grad.abs() + 1e-9 * scale);
            prop_assert!((axial_curvature(&trap, z) - fd_curv).abs() <= 1e-6 * fd_curv.abs() + 1e-9 * scale);
        }

        #[test]
        fn even_orders_give_even_potential(
            coeffs in proptest::collection::vec(-2.0f64..2.0, 4),
            z in -5.0f64..5.0,
        ) {
            let beta: BTreeMap<u32, f64> =
                coeffs.iter().enumerate().map(|(i, &b)| (2 * i as u32 + 2, b)).collect();
            let trap = TrapConfig::default_chain().with_beta(beta);
            prop_assert_eq!(axial_potential(&trap, z), axial_potential(&trap, -z));
        }
    }
}
