//! Finite-volume PDE solvers with classic, learned and temporal stencil
//! interpolation of the convective flux, and reverse-mode training through
//! unrolled rollouts.

pub mod classic_stencils;
pub mod datagen;
pub mod error;
pub mod fvm2d;
pub mod grid;
pub mod hippo;
pub mod ks1d;
pub mod metrics;
pub mod nn;
mod spectral;
pub mod stencil_net;
pub mod train;

pub use error::{Result, TsmError};
