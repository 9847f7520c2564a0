//! Dense incompressible motion estimation from tagged volume sequences.
//!
//! The pipeline turns a sequence of tagged volumes into harmonic phase
//! volumes, registers them with a multichannel log-domain demons engine,
//! and compares three sequence strategies: direct (frame 1 to frame n),
//! incremental (compose consecutive pairs) and warm-started (sum the
//! consecutive stationary velocities and use the sum as the starting
//! point of a final frame 1 to frame n registration).
//!
//! Module map:
//! - [`volume`]: grids, scalar/vector fields, interpolation, warping,
//!   smoothing and finite-difference operators.
//! - [`io`]: the TMV1 binary volume format.
//! - [`phantom`]: closed-form shear phantoms with exact ground truth.
//! - [`harp`]: harmonic phase extraction.
//! - [`pvira`]: the registration engine.
//! - [`strategies`]: direct, incremental and warm-started sequence runs.
//! - [`eval`]: deformed phases, SSIM, CORR, endpoint error, tag-jump detection.
//! - [`config`] and [`pipeline`]: the key=value config and CLI stages.

pub mod config;
pub mod error;
pub mod eval;
pub mod fft;
pub mod harp;
pub mod io;
pub mod phantom;
pub mod pipeline;
pub mod pvira;
pub mod strategies;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{Grid3, ScalarVolume, VectorKind, VectorVolume};
