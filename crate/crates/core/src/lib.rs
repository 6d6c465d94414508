//! Artificial-compression reduced order models for incompressible flow past
//! an offset cylinder: Taylor-Hood snapshots, POD, the reduced integrator
//! and its diagnostics.
//!
//! Numerical code is generic over [`Real`]; the aliases below fix `f64`.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod diag;
pub mod error;
pub mod fem;
pub mod io;
pub mod mesh;
pub mod offline;
pub mod pod;
pub mod quadrature;
pub mod rom;
pub mod scalar;
pub mod solver;
pub mod sparse;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Mesh64 = mesh::Mesh<f64>;
pub type FemSystem64 = offline::FemSystem<f64>;
pub type FlowState64 = offline::FlowState<f64>;
pub type SnapshotSet64 = offline::SnapshotSet<f64>;
pub type PodBasis64 = pod::PodBasis<f64>;
pub type ReducedModel64 = rom::ReducedModel<f64>;
pub type RomTrajectory64 = rom::RomTrajectory<f64>;
pub type AngleReport64 = diag::AngleReport<f64>;
pub type SparseOperator64 = sparse::SparseOperator<f64>;
