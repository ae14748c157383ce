//! Cercignani-Lampis gas–surface scattering in convex domains.
//!
//! The crate bundles the wall kernel (density, exact sampler, reciprocity),
//! backward characteristics with the kinetic distance weight, stochastic
//! backward boundary cycles, a numerical checker for the Gaussian–Bessel
//! integral bounds the regularity theory rests on, hard-sphere collision
//! mechanics and a free-molecular particle simulator.

// `!(x > 0.0)` guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod clkernel;
pub mod collision;
pub mod cycles;
pub mod error;
pub mod geometry;
pub mod lemma_oracle;
pub mod quadrature;
pub mod report;
pub mod rng;
pub mod simulator;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
pub use geometry::{ConvexDomain, Vec3};
