//! Multichannel log-domain demons on wrapped harmonic phases.
//!
//! The engine estimates a stationary velocity field `v` whose exponential
//! `exp(v)` maps the fixed image grid onto the moving image (pull-back).
//! Each iteration computes a symmetric demons force from the three wrapped
//! phase differences, smooths it (fluid regularization), adds it to `v`,
//! smooths `v` (diffusion regularization) and optionally projects `v` onto
//! divergence-free fields so the resulting flow preserves volume.
//!
//! Registration can start from any velocity, not just zero. Warm-starting
//! from a velocity close to the answer keeps every voxel inside the ±π
//! capture range of the phase difference, which is what prevents tag
//! jumping on large motions.

mod demons;
mod exp;
mod params;
mod project;
mod register;

pub use demons::demons_update;
pub use exp::{exp_velocity, squaring_steps};
pub use params::{MagnitudeThreshold, PviraParams};
pub use project::{project_divergence_free, Projector};
pub use register::{
    inverse_consistency, register, trace_csv, RegistrationResult, TraceRecord,
};
