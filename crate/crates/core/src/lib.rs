//! Cone-beam CT reconstruction for low-dose dental acquisitions.
//!
//! A matched ray-driven projector pair, discrete TV operators, and five
//! reconstruction methods (FDK, MLEM, SIRT-TV, MLEM-TV and preconditioned
//! KL-TV) plus plain SIRT. Around them sit a parametric jaw phantom, a
//! Poisson-Gaussian acquisition simulator, image-quality metrics and a small
//! raw+sidecar file format.
//!
//! Volumes are `f64` in memory and indexed `(slice, row, col)` with slices
//! along the rotation axis `z`.

pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod noise;
pub mod phantom;
pub mod projector;
pub mod solvers;
pub mod tvops;
pub mod volume;

pub use error::{Error, Result};
pub use geometry::{ConeBeamGeometry, Ray};
pub use projector::Projector;
pub use solvers::{reconstruct, Algorithm, IterationTrace, Preset, ReconConfig};
pub use volume::{Domain, ProjectionStack, Volume};
