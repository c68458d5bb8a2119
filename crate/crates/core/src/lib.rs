//! Programmable spin-spin interaction graphs from trapped-ion normal modes.
//!
//! The pipeline runs trap configuration, crystal equilibrium, transverse
//! modes, coupling composition and graph synthesis. Lengths are in units of
//! `l = (q^2 / (4 pi eps0 m omega_z_tilde^2))^(1/3)` and frequencies in units
//! of `omega_z_tilde` throughout.

pub mod cli;
pub mod coupling;
pub mod equilibrium;
pub mod error;
pub mod graphs;
pub mod modes;
pub mod synthesis;
pub mod trap;

pub use coupling::{
    compose_coupling, infidelity, synthesize_tones, tone_weights, CouplingMatrix, DiagonalConvention, Tone, ToneSet,
    WeightVector,
};
pub use equilibrium::{solve_equilibrium_1d, solve_equilibrium_2d, spacing_stats, Crystal, SpacingStats};
pub use error::{Error, Result};
pub use graphs::{named_graph, power_law_graph, InteractionGraph, Layout};
pub use modes::{
    build_a_matrix, crystal_modes, diagonalize_modes, mode_interaction_matrices, ModeInteractionSet, ModeSpectrum,
};
pub use trap::{length_scale, PhysicalConstants, TrapConfig};
