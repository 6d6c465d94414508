//! Taylor-Hood P2-P1 spaces and operator assembly.

pub mod assembly;
pub mod dofmap;
pub mod element;

pub use assembly::{
    apply_dirichlet, assemble_convection_skew, assemble_divergence, assemble_forcing, assemble_pressure_mass,
    assemble_velocity_mass, assemble_velocity_stiffness, Assembler, Execution,
};
pub use dofmap::DofMap;
pub use element::{p2_values, ElementGeometry};
