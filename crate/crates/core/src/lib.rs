//! Reconstruction and validation toolkit for 3D porous-media volumes.
//!
//! The crate runs inference of a fully convolutional 3D generator /
//! discriminator pair from a portable weights file and compares generated
//! volumes with real ones through two-point probability functions,
//! Minkowski functionals, Stokes-flow permeability, velocity distributions
//! and two-sample Kolmogorov-Smirnov tests.
//!
//! Phase convention: after optional polarity canonicalization every binary
//! image stores `1 = pore` and `0 = grain`, and segmentation labels a voxel
//! as pore iff its gray value is strictly greater than the threshold.

pub mod error;
pub mod flow;
pub mod ks;
pub mod microstats;
pub mod minkowski;
pub mod nn;
pub mod phantom;
pub mod pipeline;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{Axis, BinaryImage3D, GrayImage3D, Polarity};
