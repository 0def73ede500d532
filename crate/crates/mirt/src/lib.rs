//! Restricted mixed ray transform (MiRT) on second-order tensor fields in R^3.
//!
//! The MiRT integrates a 2-tensor field along a line, contracting the first
//! slot with the line direction and the second with a direction orthogonal to
//! the line; two channels per line. Restricted to lines through a source
//! curve, only the solenoidal part of the field is visible. This crate
//! provides the discrete forward operator and its exact adjoint, the
//! solenoidal decomposition, source-curve geometry and Kirillov-Tuy
//! verification, the principal symbol of the normal operator with its SVD
//! parametrix, and a leading-order microlocal reconstruction.

pub mod cli;
pub mod config;
pub mod error;
pub mod fft;
pub mod fields;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod phantom;
pub mod reconstruct;
pub mod symbol;
pub mod transform;
pub mod vec3;

pub use error::{Error, Result};
