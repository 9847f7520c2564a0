//! Sequence strategies: direct, incremental and warm-started.
//!
//! All three estimate `ψ_n`, the pull-back displacement from frame 1 to
//! frame n, for n = 2..N:
//!
//! - direct: register frame 1 to frame n from a zero velocity;
//! - incremental: register consecutive pairs (i → i+1) and compose,
//!   `ψ_n = φ_{n-1} ∘ … ∘ φ_1`;
//! - new start: sum the consecutive stationary velocities
//!   `V'_n = V_1 + … + V_{n-1}` and register frame 1 to frame n starting
//!   from `V'_n`.
//!
//! Pair registrations are cached inside a [`SequenceRunner`], so running
//! incremental and new-start over the same sequence registers each pair
//! once.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harp::PhaseSet;
use crate::io;
use crate::pvira::{
    project_divergence_free, register, trace_csv, PviraParams, RegistrationResult, TraceRecord,
};
use crate::volume::{compose_displacements, Grid3, VectorKind, VectorVolume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Direct,
    Incremental,
    NewStart,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Direct, Method::Incremental, Method::NewStart];

    pub fn name(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Incremental => "incremental",
            Method::NewStart => "new_start",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// Interior margin (voxels) for the interior inverse-consistency figure.
pub const STATS_MARGIN: usize = 3;

/// Summary of one registration call.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegistrationStats {
    pub iterations: usize,
    pub converged: bool,
    /// Max norm of `compose(forward, inverse)`, mm.
    pub inverse_consistency: f64,
    /// Same, over voxels at least [`STATS_MARGIN`] voxels from every face.
    pub inverse_consistency_interior: f64,
    pub seconds: f64,
}

impl RegistrationStats {
    fn of(r: &RegistrationResult, seconds: f64) -> Result<Self> {
        Ok(Self {
            iterations: r.iterations(),
            converged: r.converged,
            inverse_consistency: r.inverse_consistency()?,
            inverse_consistency_interior: r.inverse_consistency_interior(STATS_MARGIN)?,
            seconds,
        })
    }
}

/// Motion estimates of one method over a sequence.
///
/// `deformations[n - 2]` holds `ψ_n`. `velocities` holds the velocity of
/// each registration the method ran: per frame for direct and new start,
/// per pair for incremental. `init_velocities[n - 2]` holds `V'_n` for the
/// new-start method and is empty otherwise.
#[derive(Clone, Debug)]
pub struct SequenceEstimate {
    pub method: Method,
    pub deformations: Vec<VectorVolume>,
    pub velocities: Vec<VectorVolume>,
    pub init_velocities: Vec<VectorVolume>,
    pub params: PviraParams,
    /// Wall-clock seconds per frame n = 2..N. Incremental frames are
    /// charged their pair registration plus the composition.
    pub timing: Vec<f64>,
    /// One entry per registration, aligned with `velocities`.
    pub stats: Vec<RegistrationStats>,
    /// Convergence trace per registration, aligned with `velocities`.
    pub traces: Vec<Vec<TraceRecord>>,
}

impl SequenceEstimate {
    pub fn frames(&self) -> usize {
        self.deformations.len() + 1
    }

    /// `ψ_n`, n in 2..=N.
    pub fn deformation(&self, n: usize) -> Result<&VectorVolume> {
        if n < 2 || n > self.frames() {
            return Err(Error::FrameOutOfRange {
                frame: n,
                frames: self.frames(),
            });
        }
        Ok(&self.deformations[n - 2])
    }

    pub fn grid(&self) -> &Grid3 {
        self.deformations[0].grid()
    }
}

/// `V_1 + … + V_k` as a plain ascending left fold.
///
/// No smoothing or projection: the sum is used verbatim as a starting
/// point.
pub fn accumulate_velocities(velocities: &[VectorVolume]) -> Result<VectorVolume> {
    let (first, rest) = velocities.split_first().ok_or(Error::Empty("velocity list"))?;
    first.expect_kind(VectorKind::Velocity)?;
    let mut sum = first.clone();
    for v in rest {
        v.expect_kind(VectorKind::Velocity)?;
        sum = sum.add(v)?;
    }
    Ok(sum)
}

/// Runs strategies over one phase sequence, sharing pair registrations.
pub struct SequenceRunner<'a> {
    phases: &'a [PhaseSet],
    params: PviraParams,
    project_init: bool,
    pairs: Vec<OnceLock<(RegistrationResult, RegistrationStats)>>,
    calls: AtomicUsize,
}

impl<'a> SequenceRunner<'a> {
    pub fn new(phases: &'a [PhaseSet], params: PviraParams) -> Result<Self> {
        if phases.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "a sequence needs at least 2 frames, got {}",
                phases.len()
            )));
        }
        params.validate()?;
        let grid = phases[0].grid();
        for p in &phases[1..] {
            grid.check_same(p.grid())?;
        }
        Ok(Self {
            phases,
            params,
            project_init: false,
            pairs: (1..phases.len()).map(|_| OnceLock::new()).collect(),
            calls: AtomicUsize::new(0),
        })
    }

    /// Project `V'_n` onto divergence-free fields before using it.
    /// Off by default: the summed velocity is used as is.
    pub fn with_project_init(mut self, on: bool) -> Self {
        self.project_init = on;
        self
    }

    pub fn frames(&self) -> usize {
        self.phases.len()
    }

    /// Number of `register` calls made so far.
    pub fn register_calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    fn timed_register(
        &self,
        moving: usize,
        fixed: usize,
        init: Option<&VectorVolume>,
    ) -> Result<(RegistrationResult, RegistrationStats)> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let start = Instant::now();
        let r = register(&self.phases[moving], &self.phases[fixed], &self.params, init)?;
        let seconds = start.elapsed().as_secs_f64();
        let stats = RegistrationStats::of(&r, seconds)?;
        log::info!(
            "registered frame {} -> {}: {} iterations{}, {:.2} s",
            moving + 1,
            fixed + 1,
            stats.iterations,
            if stats.converged { "" } else { " (not converged)" },
            seconds
        );
        Ok((r, stats))
    }

    /// Registers every consecutive pair not yet cached.
    fn ensure_pairs(&self) -> Result<()> {
        (0..self.pairs.len())
            .into_par_iter()
            .try_for_each(|i| {
                if self.pairs[i].get().is_none() {
                    let r = self.timed_register(i, i + 1, None)?;
                    let _ = self.pairs[i].set(r);
                }
                Ok(())
            })
    }

    fn pair(&self, i: usize) -> &(RegistrationResult, RegistrationStats) {
        self.pairs[i].get().expect("pairs registered")
    }

    pub fn run(&self, method: Method) -> Result<SequenceEstimate> {
        match method {
            Method::Direct => self.run_direct(),
            Method::Incremental => self.run_incremental(),
            Method::NewStart => self.run_new_start(),
        }
    }

    pub fn run_direct(&self) -> Result<SequenceEstimate> {
        let results: Vec<_> = (1..self.frames())
            .into_par_iter()
            .map(|f| self.timed_register(0, f, None))
            .collect::<Result<_>>()?;
        let mut est = self.empty(Method::Direct);
        for (r, stats) in results {
            est.traces.push(r.trace);
            est.deformations.push(r.forward);
            est.velocities.push(r.velocity);
            est.timing.push(stats.seconds);
            est.stats.push(stats);
        }
        Ok(est)
    }

    pub fn run_incremental(&self) -> Result<SequenceEstimate> {
        self.ensure_pairs()?;
        let mut est = self.empty(Method::Incremental);
        let mut psi: Option<VectorVolume> = None;
        for i in 0..self.pairs.len() {
            let (r, stats) = self.pair(i);
            let start = Instant::now();
            let next = match psi {
                None => r.forward.clone(),
                Some(prev) => compose_displacements(&prev, &r.forward)?,
            };
            est.timing.push(stats.seconds + start.elapsed().as_secs_f64());
            est.deformations.push(next.clone());
            est.velocities.push(r.velocity.clone());
            est.traces.push(r.trace.clone());
            est.stats.push(*stats);
            psi = Some(next);
        }
        Ok(est)
    }

    pub fn run_new_start(&self) -> Result<SequenceEstimate> {
        self.ensure_pairs()?;
        let pair_velocities: Vec<VectorVolume> =
            (0..self.pairs.len()).map(|i| self.pair(i).0.velocity.clone()).collect();
        let mut inits = Vec::with_capacity(pair_velocities.len());
        for k in 1..=pair_velocities.len() {
            let sum = accumulate_velocities(&pair_velocities[..k])?;
            inits.push(if self.project_init {
                project_divergence_free(&sum)
            } else {
                sum
            });
        }
        let results: Vec<_> = inits
            .par_iter()
            .enumerate()
            .map(|(k, init)| self.timed_register(0, k + 1, Some(init)))
            .collect::<Result<_>>()?;
        let mut est = self.empty(Method::NewStart);
        for (r, stats) in results {
            est.traces.push(r.trace);
            est.deformations.push(r.forward);
            est.velocities.push(r.velocity);
            est.timing.push(stats.seconds);
            est.stats.push(stats);
        }
        est.init_velocities = inits;
        Ok(est)
    }

    fn empty(&self, method: Method) -> SequenceEstimate {
        SequenceEstimate {
            method,
            deformations: Vec::new(),
            velocities: Vec::new(),
            init_velocities: Vec::new(),
            params: self.params.clone(),
            timing: Vec::new(),
            stats: Vec::new(),
            traces: Vec::new(),
        }
    }
}

pub fn run_direct(phases: &[PhaseSet], params: &PviraParams) -> Result<SequenceEstimate> {
    SequenceRunner::new(phases, params.clone())?.run_direct()
}

pub fn run_incremental(phases: &[PhaseSet], params: &PviraParams) -> Result<SequenceEstimate> {
    SequenceRunner::new(phases, params.clone())?.run_incremental()
}

pub fn run_new_start(phases: &[PhaseSet], params: &PviraParams) -> Result<SequenceEstimate> {
    SequenceRunner::new(phases, params.clone())?.run_new_start()
}

/// Writes `psi_NN.tmv`, `v_NN.tmv`, `vinit_NN.tmv` (new start only),
/// `manifest.cfg` and `timing.csv` into `dir`, plus `trace_NN.csv` per
/// registration when `traces` is set.
///
/// Velocity files are numbered by frame n for direct and new start, and by
/// pair index i (frames i → i+1) for incremental. Everything except
/// `timing.csv` is a deterministic function of the inputs.
pub fn write_estimate(dir: &Path, est: &SequenceEstimate, traces: bool) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (k, psi) in est.deformations.iter().enumerate() {
        io::write_vector(dir.join(format!("psi_{:02}.tmv", k + 2)), psi)?;
    }
    let first_velocity_index = match est.method {
        Method::Incremental => 1,
        _ => 2,
    };
    for (k, v) in est.velocities.iter().enumerate() {
        io::write_vector(dir.join(format!("v_{:02}.tmv", k + first_velocity_index)), v)?;
    }
    for (k, v) in est.init_velocities.iter().enumerate() {
        io::write_vector(dir.join(format!("vinit_{:02}.tmv", k + 2)), v)?;
    }
    if traces {
        for (k, trace) in est.traces.iter().enumerate() {
            let path = dir.join(format!("trace_{:02}.csv", k + first_velocity_index));
            std::fs::write(&path, trace_csv(trace)).map_err(|e| Error::io(&path, e))?;
        }
    }
    let manifest = manifest_text(est);
    let path = dir.join("manifest.cfg");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    let mut timing = String::from("frame,seconds\n");
    for (k, t) in est.timing.iter().enumerate() {
        let _ = writeln!(timing, "{},{t:.6}", k + 2);
    }
    let path = dir.join("timing.csv");
    std::fs::write(&path, timing).map_err(|e| Error::io(&path, e))
}

fn manifest_text(est: &SequenceEstimate) -> String {
    let p = &est.params;
    let triple = |t: [f64; 3]| format!("{},{},{}", t[0], t[1], t[2]);
    let mut s = String::new();
    let _ = writeln!(s, "method={}", est.method.name());
    let _ = writeln!(s, "frames={}", est.frames());
    let _ = writeln!(s, "pvira.sigma_fluid_mm={}", triple(p.sigma_fluid));
    let _ = writeln!(s, "pvira.sigma_diffusion_mm={}", triple(p.sigma_diffusion));
    let _ = writeln!(s, "pvira.sigma_i={}", p.sigma_i);
    let _ = writeln!(s, "pvira.max_iters={}", p.max_iters);
    let _ = writeln!(s, "pvira.step_max_voxels={}", p.step_max_voxels);
    let _ = writeln!(s, "pvira.incompressible={}", p.incompressible);
    let _ = writeln!(s, "pvira.magnitude_threshold={}", p.magnitude_threshold);
    let _ = writeln!(s, "pvira.stop_tol={}", p.stop_tol);
    let _ = writeln!(s, "pvira.boundary_taper_voxels={}", p.boundary_taper_voxels);
    for (k, st) in est.stats.iter().enumerate() {
        let _ = writeln!(
            s,
            "registration.{:02}=iterations:{} converged:{} inverse_consistency_mm:{:.6e} interior:{:.6e}",
            k + 1,
            st.iterations,
            st.converged,
            st.inverse_consistency,
            st.inverse_consistency_interior
        );
    }
    s
}

/// Reads the displacements written by [`write_estimate`].
///
/// Velocities are loaded when present; registration statistics and timing
/// are not restored.
pub fn read_estimate(dir: &Path, method: Method, params: PviraParams) -> Result<SequenceEstimate> {
    let mut est = SequenceEstimate {
        method,
        deformations: Vec::new(),
        velocities: Vec::new(),
        init_velocities: Vec::new(),
        params,
        timing: Vec::new(),
        stats: Vec::new(),
        traces: Vec::new(),
    };
    let mut n = 2;
    loop {
        let path = dir.join(format!("psi_{n:02}.tmv"));
        if !path.exists() {
            break;
        }
        est.deformations.push(io::read_vector(&path, VectorKind::Displacement)?);
        n += 1;
    }
    if est.deformations.is_empty() {
        return Err(Error::Format {
            path: dir.to_path_buf(),
            reason: "no psi_NN.tmv files".into(),
        });
    }
    let first = match method {
        Method::Incremental => 1,
        _ => 2,
    };
    for k in first.. {
        let path = dir.join(format!("v_{k:02}.tmv"));
        if !path.exists() {
            break;
        }
        est.velocities.push(io::read_vector(&path, VectorKind::Velocity)?);
    }
    for k in 2.. {
        let path = dir.join(format!("vinit_{k:02}.tmv"));
        if !path.exists() {
            break;
        }
        est.init_velocities.push(io::read_vector(&path, VectorKind::Velocity)?);
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harp::{extract_phase_set, HarpFilterSpec};
    use crate::phantom::{PhantomConfig, ShearStep, Axis};

    fn small_phantom(frames: usize, amplitude: f64) -> Vec<PhaseSet> {
        let cfg = PhantomConfig {
            dims: [24, 24, 8],
            frames,
            noise_sigma: 0.0,
            steps: Some(vec![ShearStep::new(Axis::X, Axis::Y, amplitude, 180.0, 0.5).unwrap()]),
            ..PhantomConfig::default()
        };
        let ph = cfg.build().unwrap();
        let specs = [0, 1, 2].map(|a| HarpFilterSpec::for_tag(ph.pattern.period(a), a).unwrap());
        (1..=frames)
            .map(|n| extract_phase_set(&ph.render(n).unwrap(), specs).unwrap())
            .collect()
    }

    fn static_sequence(frames: usize) -> Vec<PhaseSet> {
        let one = small_phantom(2, 0.0).remove(0);
        vec![one; frames]
    }

    fn fast_params() -> PviraParams {
        PviraParams {
            max_iters: 60,
            ..PviraParams::default()
        }
    }

    fn grid() -> Grid3 {
        Grid3::new([6, 5, 4], [1.875, 1.875, 6.0], [0.0; 3]).unwrap()
    }

    #[test]
    fn method_names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()), Some(m));
        }
        assert_eq!(Method::parse("newstart"), None);
    }

    #[test]
    fn accumulate_zero_single_and_translations() {
        let g = grid();
        let z = VectorVolume::zeros(g, VectorKind::Velocity);
        let sum = accumulate_velocities(&[z.clone(), z.clone(), z]).unwrap();
        assert!(sum.values().iter().all(|v| *v == [0.0; 3]));

        let f = VectorVolume::from_fn(g, VectorKind::Velocity, |p| [p[1], -p[0], 0.5 * p[2]]).unwrap();
        assert_eq!(accumulate_velocities(std::slice::from_ref(&f)).unwrap(), f);

        let (t1, t2) = ([1.25, -0.5, 2.0], [0.75, 3.0, -1.0]);
        let a = VectorVolume::constant(g, t1, VectorKind::Velocity);
        let b = VectorVolume::constant(g, t2, VectorKind::Velocity);
        let sum = accumulate_velocities(&[a.clone(), b.clone()]).unwrap();
        assert!(sum.values().iter().all(|v| *v == [2.0, 2.5, 1.0]));
        let exp_sum = crate::pvira::exp_velocity(&sum).unwrap();
        let composed = compose_displacements(
            &crate::pvira::exp_velocity(&a).unwrap(),
            &crate::pvira::exp_velocity(&b).unwrap(),
        )
        .unwrap();
        for (x, y) in exp_sum.values().iter().zip(composed.values()) {
            for c in 0..3 {
                assert!((x[c] - y[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn accumulate_order_changes_only_by_rounding() {
        let g = grid();
        let fields: Vec<_> = (0..5)
            .map(|k| {
                VectorVolume::from_fn(g, VectorKind::Velocity, |p| {
                    let s = k as f64 + 1.0;
                    [(p[0] * s).sin() / 3.0, (p[1] + s).cos(), 0.1 * s * p[2]]
                })
                .unwrap()
            })
            .collect();
        let forward = accumulate_velocities(&fields).unwrap();
        let again = accumulate_velocities(&fields).unwrap();
        assert_eq!(forward, again);
        let reversed: Vec<_> = fields.iter().rev().cloned().collect();
        let backward = accumulate_velocities(&reversed).unwrap();
        for (x, y) in forward.values().iter().zip(backward.values()) {
            for c in 0..3 {
                assert!((x[c] - y[c]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn accumulate_rejects_empty_mismatch_and_kind() {
        assert!(accumulate_velocities(&[]).is_err());
        let a = VectorVolume::zeros(grid(), VectorKind::Velocity);
        let other = Grid3::new([6, 5, 3], [1.875, 1.875, 6.0], [0.0; 3]).unwrap();
        let b = VectorVolume::zeros(other, VectorKind::Velocity);
        assert!(accumulate_velocities(&[a.clone(), b]).is_err());
        let d = VectorVolume::zeros(grid(), VectorKind::Displacement);
        assert!(accumulate_velocities(&[a, d]).is_err());
    }

    #[test]
    fn runner_needs_two_frames() {
        let seq = static_sequence(1);
        assert!(SequenceRunner::new(&seq, PviraParams::default()).is_err());
    }

    #[test]
    fn identical_frames_give_identity_for_every_method() {
        let seq = static_sequence(3);
        let runner = SequenceRunner::new(&seq, fast_params()).unwrap();
        for m in Method::ALL {
            let est = runner.run(m).unwrap();
            assert_eq!(est.method, m);
            assert_eq!(est.deformations.len(), 2);
            for psi in &est.deformations {
                assert!(psi.max_norm() < 1e-9, "{}: {}", m.name(), psi.max_norm());
            }
            if m == Method::NewStart {
                for v in &est.velocities {
                    assert!(v.max_norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn incremental_second_frame_is_first_pair_and_pairs_are_shared() {
        let seq = small_phantom(4, 3.0);
        let runner = SequenceRunner::new(&seq, fast_params()).unwrap();
        let inc = runner.run_incremental().unwrap();
        assert_eq!(runner.register_calls(), 3);
        let ns = runner.run_new_start().unwrap();
        assert_eq!(runner.register_calls(), 6);
        let (first_pair, _) = runner.pair(0);
        assert_eq!(inc.deformations[0], first_pair.forward);
        assert_eq!(inc.velocities.len(), 3);
        assert_eq!(ns.init_velocities.len(), 3);
        assert_eq!(ns.init_velocities[0], first_pair.velocity);
        let expected = accumulate_velocities(&inc.velocities).unwrap();
        assert_eq!(ns.init_velocities[2], expected);
    }

    #[test]
    fn new_start_second_frame_matches_direct() {
        let seq = small_phantom(2, 2.0);
        let runner = SequenceRunner::new(&seq, PviraParams::default()).unwrap();
        let direct = runner.run_direct().unwrap();
        let ns = runner.run_new_start().unwrap();
        let voxel = seq[0].grid().min_spacing();
        let diff = compose_diff(&direct.deformations[0], &ns.deformations[0]);
        assert!(diff < 0.05 * voxel, "diff {diff} mm");
    }

    fn compose_diff(a: &VectorVolume, b: &VectorVolume) -> f64 {
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| crate::volume::norm3([x[0] - y[0], x[1] - y[1], x[2] - y[2]]))
            .fold(0.0, f64::max)
    }

    #[test]
    fn persisted_estimate_reads_back() {
        let seq = small_phantom(3, 2.0);
        let runner = SequenceRunner::new(&seq, fast_params()).unwrap();
        let est = runner.run_new_start().unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_estimate(dir.path(), &est, true).unwrap();
        for name in ["psi_02.tmv", "psi_03.tmv", "v_02.tmv", "vinit_03.tmv", "manifest.cfg", "trace_03.csv"] {
            assert!(dir.path().join(name).exists(), "{name}");
        }
        let manifest = std::fs::read_to_string(dir.path().join("manifest.cfg")).unwrap();
        assert!(manifest.starts_with("method=new_start\nframes=3\n"));
        let back = read_estimate(dir.path(), Method::NewStart, est.params.clone()).unwrap();
        assert_eq!(back.deformations.len(), 2);
        assert_eq!(back.velocities.len(), 2);
        assert_eq!(back.init_velocities.len(), 2);
        // stored as f32
        let d = compose_diff(&back.deformations[1], &est.deformations[1]);
        assert!(d < 1e-5);
        assert!(matches!(
            back.deformation(4),
            Err(Error::FrameOutOfRange { .. })
        ));
    }
}
