//! Kinetic equations for quantum many-particle systems.
//!
//! The crate discretizes the linear collision operator of a particle in a
//! weak random potential and the Uehling-Uhlenbeck operator for weakly
//! interacting fermions and bosons, integrates the resulting transport
//! equations, extracts diffusion coefficients, and checks the kinetic limit
//! against disorder-averaged Schrodinger evolution on a lattice.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod dispersion;
pub mod error;
pub mod grids;
pub mod collision_linear;
pub mod collision_uu;
pub mod io;
pub mod linalg;
pub mod microscopic;
pub mod quasifree;
pub mod stats;
pub mod transport;

pub use dispersion::{propagator_decay, DecayReport, DispersionKind, DispersionModel};
pub use error::{QkinError, Result};
pub use grids::{
    auto_eta, energy_shell, moments_of, smeared_delta, Distribution, GridKind, Moments,
    MomentumGrid, ShellWeights, SpatialGrid, Statistics, WignerField,
};
