//! Derived quantities and theory checks.

pub mod angles;
pub mod energy;
pub mod fields;
pub mod forces;

pub use angles::{
    infsup_constant, mode_divergences, orthonormal_span, principal_angle, reduced_infsup, subspace_cosines, AngleReport,
};
pub use energy::{energy_balance, energy_step, EnergyBalance, EnergyNorms, EnergyParams, EnergyStep};
pub use fields::{
    divergence_field, divergence_norm, fit_order, kinetic_energy, l2l2_relative_error, DivergenceProjector,
    ErrorReport, RelativeError,
};
pub use forces::{drag_lift, ForceFunctional};
