use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::harp::PhaseSet;
use crate::volume::smooth::smooth_separable;
use crate::volume::{compose_displacements, norm3, VectorKind, VectorVolume};

use super::demons::DemonsContext;
use super::exp::exp_velocity;
use super::params::PviraParams;
use super::project::Projector;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub mean_phase_error: f64,
    pub max_update: f64,
}

#[derive(Clone, Debug)]
pub struct RegistrationResult {
    pub velocity: VectorVolume,
    /// `exp(velocity)`: pulls the moving image onto the fixed grid.
    pub forward: VectorVolume,
    /// `exp(-velocity)`.
    pub inverse: VectorVolume,
    pub trace: Vec<TraceRecord>,
    pub converged: bool,
}

impl RegistrationResult {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    /// `iteration,mean_phase_err,max_update` rows.
    pub fn trace_csv(&self) -> String {
        trace_csv(&self.trace)
    }

    /// Max norm of `compose(forward, inverse)`, mm.
    pub fn inverse_consistency(&self) -> Result<f64> {
        inverse_consistency(&self.forward, &self.inverse)
    }

    /// As [`inverse_consistency`](Self::inverse_consistency) but only over
    /// voxels at least `margin` voxels from every face. Near the faces the
    /// flow pulls from outside the grid, where clamped sampling cannot
    /// invert it.
    pub fn inverse_consistency_interior(&self, margin: usize) -> Result<f64> {
        Ok(compose_displacements(&self.forward, &self.inverse)?.max_norm_interior(margin))
    }
}

/// `iteration,mean_phase_err,max_update` rows.
pub fn trace_csv(trace: &[TraceRecord]) -> String {
    let mut s = String::from("iteration,mean_phase_err,max_update\n");
    for r in trace {
        let _ = writeln!(s, "{},{},{}", r.iteration, r.mean_phase_error, r.max_update);
    }
    s
}

/// Max norm of `compose(forward, inverse)`; zero for an exact inverse pair.
pub fn inverse_consistency(forward: &VectorVolume, inverse: &VectorVolume) -> Result<f64> {
    Ok(compose_displacements(forward, inverse)?.max_norm())
}

/// Log-domain demons registration of `moving` onto `fixed`.
///
/// Starts from `init_velocity` when given, zero otherwise. The loop is:
/// exponentiate, demons force, fluid smoothing, `v += u`, diffusion
/// smoothing, optional divergence-free projection. It stops once the
/// largest per-voxel change of the regularised velocity over one
/// iteration drops below `stop_tol · min spacing`. The raw smoothed force
/// never vanishes on noisy data (it is balanced by the regularisers at the
/// fixed point), so the net change is what is measured.
pub fn register(
    moving: &PhaseSet,
    fixed: &PhaseSet,
    params: &PviraParams,
    init_velocity: Option<&VectorVolume>,
) -> Result<RegistrationResult> {
    params.validate()?;
    let grid = *fixed.grid();
    moving.grid().check_same(&grid)?;
    let mut v = match init_velocity {
        Some(init) => {
            init.grid().check_same(&grid)?;
            init.expect_kind(VectorKind::Velocity)?;
            init.clone()
        }
        None => VectorVolume::zeros(grid, VectorKind::Velocity),
    };

    let ctx = DemonsContext::new(moving, fixed, params)?;
    let projector = params.incompressible.then(|| Projector::new(grid));
    let stop = params.stop_tol * grid.min_spacing();
    let mut trace = Vec::new();
    let mut converged = false;

    for iteration in 1..=params.max_iters {
        let phi = exp_velocity(&v)?;
        let step = ctx.step(phi.values());
        let update = smooth_separable(&grid, step.update, params.sigma_fluid);
        let previous = v.into_values();
        let mut values = previous.clone();
        for (a, u) in values.iter_mut().zip(&update) {
            a[0] += u[0];
            a[1] += u[1];
            a[2] += u[2];
        }
        values = smooth_separable(&grid, values, params.sigma_diffusion);
        if let Some(p) = &projector {
            values = p.project_tapered(&values, params.boundary_taper_voxels);
        }
        let max_update = values
            .iter()
            .zip(&previous)
            .map(|(a, b)| norm3([a[0] - b[0], a[1] - b[1], a[2] - b[2]]))
            .fold(0.0, f64::max);
        v = VectorVolume::from_parts(grid, values, VectorKind::Velocity);

        if !max_update.is_finite() || !step.mean_error.is_finite() || !v.is_finite() {
            return Err(Error::NumericalDivergence { iteration });
        }
        trace.push(TraceRecord {
            iteration,
            mean_phase_error: step.mean_error,
            max_update,
        });
        log::debug!(
            "iter {iteration}: mean phase err {:.5}, max update {:.5} mm",
            step.mean_error,
            max_update
        );
        if max_update < stop {
            converged = true;
            break;
        }
    }

    let forward = exp_velocity(&v)?;
    let inverse = exp_velocity(&v.scaled(-1.0))?;
    Ok(RegistrationResult {
        velocity: v,
        forward,
        inverse,
        trace,
        converged,
    })
}
