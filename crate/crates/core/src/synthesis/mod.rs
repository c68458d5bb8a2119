//! Graph synthesis: exact accessibility, least-squares weights, ion
//! relabeling, potential shaping and single-tone baselines.

mod accessibility;
mod relabel;
mod shaping;
mod sweep;
mod weights;

pub use accessibility::{accessibility_test, AccessibilityReport, ACCESSIBLE_RATIO};
pub use relabel::{
    relabel_search, relabel_search_with, RelabelMode, RelabelResult, DEFECT_CUT, EXHAUSTIVE_MAX_N, MAX_BEAM,
};
pub use shaping::{make_double_well, shape_potential_equispaced, ShapingResult, MAX_SHAPING_ORDER};
pub use sweep::{
    default_detunings, fit_alpha, single_tone_fit_curve, single_tone_infidelity, single_tone_sweep,
    single_tone_weights, SweepPoint, ALPHA_MAX,
};
pub use weights::{analytic_nn_weights, dimer_weights, optimize_weights, WeightFitter};
