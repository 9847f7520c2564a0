//! CLI stages and the end-to-end pipeline.
//!
//! Every stage reads its inputs from and writes its outputs to one output
//! directory, so stages can run separately or chained:
//!
//! ```text
//! <out>/phantom/frame_NN.tmv, model.cfg          phantom
//! <out>/harp/phase_NN_{x,y,z}.tmv, mag_NN_*.tmv  harp
//! <out>/estimates/<method>/...                   register
//! <out>/eval/metrics.csv, worst_slices.csv,      evaluate
//!           chart.svg, pgm/*.pgm
//! <out>/config.cfg, run_manifest.cfg             pipeline
//! ```
//!
//! All outputs except `timing.csv` files are deterministic functions of
//! the configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{self, evaluate_sequence, GroundTruth, SliceId};
use crate::harp::{extract_phase_set, wrap, PhaseSet};
use crate::io;
use crate::phantom::Phantom;
use crate::strategies::{read_estimate, write_estimate, Method, SequenceEstimate, SequenceRunner};
use crate::volume::{ScalarVolume, VectorKind};

const AXES: [&str; 3] = ["x", "y", "z"];

/// Per-invocation settings that do not belong in the config file.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Write per-registration convergence traces.
    pub trace: bool,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn phantom_dir(out: &Path) -> PathBuf {
    out.join("phantom")
}

fn harp_dir(out: &Path) -> PathBuf {
    out.join("harp")
}

fn estimates_dir(out: &Path) -> PathBuf {
    out.join("estimates")
}

fn eval_dir(out: &Path) -> PathBuf {
    out.join("eval")
}

/// Counts `name(1)`, `name(2)`, … until the first missing file.
fn count_frames(name: impl Fn(usize) -> PathBuf) -> usize {
    (1..).take_while(|&n| name(n).exists()).count()
}

/// Renders every frame to `<out>/phantom` and records the generating
/// parameters in `model.cfg`.
pub fn cmd_phantom(cfg: &PipelineConfig, out: &Path) -> Result<Phantom> {
    stage("phantom", run_phantom(cfg, out))
}

fn run_phantom(cfg: &PipelineConfig, out: &Path) -> Result<Phantom> {
    let phantom = cfg.phantom.build()?;
    let dir = phantom_dir(out);
    create_dir(&dir)?;
    for n in 1..=phantom.frames() {
        let frame = phantom.render(n)?;
        io::write_scalar(dir.join(format!("frame_{n:02}.tmv")), &frame)?;
    }
    write_text(&dir.join("model.cfg"), &cfg.phantom_text())?;
    log::info!("phantom: {} frames written to {}", phantom.frames(), dir.display());
    Ok(phantom)
}

/// Rebuilds the phantom recorded in `<out>/phantom/model.cfg`, if any.
pub fn load_phantom(out: &Path) -> Result<Option<Phantom>> {
    let path = phantom_dir(out).join("model.cfg");
    if !path.exists() {
        return Ok(None);
    }
    let cfg = PipelineConfig::load(&path)?;
    Ok(Some(cfg.phantom.build()?))
}

/// Extracts the three harmonic phases of every frame in `<out>/phantom`.
pub fn cmd_harp(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PhaseSet>> {
    stage("harp", run_harp(cfg, out))
}

fn run_harp(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PhaseSet>> {
    let src = phantom_dir(out);
    let frames = count_frames(|n| src.join(format!("frame_{n:02}.tmv")));
    if frames < 2 {
        return Err(Error::Format {
            path: src,
            reason: format!("need at least 2 frame_NN.tmv files, found {frames}"),
        });
    }
    let specs = cfg.harp_specs()?;
    let dir = harp_dir(out);
    create_dir(&dir)?;
    let mut sets = Vec::with_capacity(frames);
    for n in 1..=frames {
        let image = io::read_scalar(src.join(format!("frame_{n:02}.tmv")))?;
        let set = extract_phase_set(&image, specs)?;
        for d in 0..3 {
            io::write_scalar(dir.join(format!("phase_{n:02}_{}.tmv", AXES[d])), &set.phases()[d])?;
            io::write_scalar(dir.join(format!("mag_{n:02}_{}.tmv", AXES[d])), &set.magnitudes()[d])?;
        }
        sets.push(set);
    }
    log::info!("harp: {frames} phase sets written to {}", dir.display());
    // continue from the stored (single precision) values, like a separate run would
    load_phases(cfg, out)
}

/// Reads the phase sets written by the harp stage.
///
/// Values are stored in single precision; phases are re-wrapped after
/// widening because rounding can push a value just below π onto π.
pub fn load_phases(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PhaseSet>> {
    let dir = harp_dir(out);
    let frames = count_frames(|n| dir.join(format!("phase_{n:02}_x.tmv")));
    if frames < 2 {
        return Err(Error::Format {
            path: dir,
            reason: format!("need at least 2 phase sets, found {frames}"),
        });
    }
    let specs = cfg.harp_specs()?;
    (1..=frames)
        .map(|n| {
            let mut phases = Vec::with_capacity(3);
            let mut mags = Vec::with_capacity(3);
            for axis in AXES {
                let p = io::read_scalar(dir.join(format!("phase_{n:02}_{axis}.tmv")))?;
                phases.push(p.map(wrap)?);
                mags.push(io::read_scalar(dir.join(format!("mag_{n:02}_{axis}.tmv")))?);
            }
            PhaseSet::new(
                phases.try_into().expect("three phases"),
                mags.try_into().expect("three magnitudes"),
                specs,
            )
        })
        .collect()
}

/// Runs every configured method on the stored phases and writes each
/// estimate to `<out>/estimates/<method>`. A method's directory is written
/// under a temporary name and renamed into place, so an interrupted run
/// never leaves a half-written estimate behind.
pub fn cmd_register(
    cfg: &PipelineConfig,
    out: &Path,
    opts: &RunOptions,
) -> Result<Vec<SequenceEstimate>> {
    stage("register", run_register(cfg, out, opts))
}

fn run_register(
    cfg: &PipelineConfig,
    out: &Path,
    opts: &RunOptions,
) -> Result<Vec<SequenceEstimate>> {
    let phases = load_phases(cfg, out)?;
    let runner = SequenceRunner::new(&phases, cfg.pvira.clone())?.with_project_init(cfg.project_init);
    let root = estimates_dir(out);
    create_dir(&root)?;
    let mut estimates = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let start = Instant::now();
        let est = runner.run(method)?;
        log::info!(
            "register: {} done in {:.1} s",
            method.name(),
            start.elapsed().as_secs_f64()
        );
        let tmp = root.join(format!(".tmp-{}", method.name()));
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        write_estimate(&tmp, &est, opts.trace)?;
        let dest = root.join(method.name());
        if dest.exists() {
            std::fs::remove_dir_all(&dest).map_err(|e| Error::io(&dest, e))?;
        }
        std::fs::rename(&tmp, &dest).map_err(|e| Error::io(&dest, e))?;
        estimates.push(est);
    }
    log::info!("register: {} pair/frame registrations", runner.register_calls());
    Ok(estimates)
}

/// Evaluates the stored estimates against the stored phases (and the
/// phantom ground truth when `model.cfg` is present).
pub fn cmd_evaluate(cfg: &PipelineConfig, out: &Path) -> Result<eval::Evaluation> {
    stage("evaluate", run_evaluate(cfg, out))
}

fn run_evaluate(cfg: &PipelineConfig, out: &Path) -> Result<eval::Evaluation> {
    let phases = load_phases(cfg, out)?;
    let mut estimates = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let dir = estimates_dir(out).join(method.name());
        estimates.push(read_estimate(&dir, method, cfg.pvira.clone())?);
    }
    let phantom = load_phantom(out)?;
    let truth = phantom.as_ref().map(|p| GroundTruth {
        model: &p.model,
        pattern: &p.pattern,
    });
    let evaluation = evaluate_sequence(&estimates, &phases, truth, &cfg.eval)?;

    let dir = eval_dir(out);
    create_dir(&dir)?;
    write_text(&dir.join("metrics.csv"), &eval::metrics_csv(&evaluation.rows))?;
    write_text(
        &dir.join("worst_slices.csv"),
        &eval::metrics_csv(&evaluation.worst_slices),
    )?;
    if cfg.output.svg {
        let onset = phantom.as_ref().and_then(|p| p.jump_onset_frame());
        write_text(&dir.join("chart.svg"), &eval::svg_chart(&evaluation.rows, onset))?;
    }
    if cfg.output.pgm {
        write_pgms(cfg, &dir.join("pgm"), &estimates, &phases)?;
    }
    log::info!("evaluate: {} rows written to {}", evaluation.rows.len(), dir.display());
    Ok(evaluation)
}

/// Dominant-direction (x) phase slices: the reference frame and every
/// method's deformed frame 1.
fn write_pgms(
    cfg: &PipelineConfig,
    dir: &Path,
    estimates: &[SequenceEstimate],
    phases: &[PhaseSet],
) -> Result<()> {
    use std::f64::consts::PI;
    create_dir(dir)?;
    let axis = cfg.eval.slice_axis;
    let grid = *phases[0].grid();
    let k = cfg.output.pgm_slice.unwrap_or(grid.dims()[axis] / 2);
    let slice = |v: &ScalarVolume| v.slice(axis, k);
    for (i, set) in phases.iter().enumerate() {
        eval::write_pgm(
            &dir.join(format!("reference_f{:02}.pgm", i + 1)),
            &slice(&set.phases()[0]),
            -PI,
            PI,
        )?;
    }
    for est in estimates {
        for n in 2..=est.frames() {
            let psi = est.deformation(n)?;
            let warped = crate::volume::warp_phase(&phases[0].phases()[0], psi)?;
            eval::write_pgm(
                &dir.join(format!("{}_f{n:02}.pgm", est.method.name())),
                &slice(&warped),
                -PI,
                PI,
            )?;
        }
    }
    Ok(())
}

/// Hex SHA-256 of the canonical config text.
pub fn config_hash(cfg: &PipelineConfig) -> String {
    let digest = Sha256::digest(cfg.to_text().as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Summary of a full run.
#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub evaluation: eval::Evaluation,
    pub estimates: Vec<SequenceEstimate>,
    pub phantom: Phantom,
    /// Wall-clock seconds per stage, in stage order.
    pub stage_seconds: Vec<(&'static str, f64)>,
}

/// phantom → harp → register → evaluate, all under `out`.
pub fn cmd_pipeline(cfg: &PipelineConfig, out: &Path, opts: &RunOptions) -> Result<PipelineRun> {
    create_dir(out)?;
    write_text(&out.join("config.cfg"), &cfg.to_text())?;
    let mut stage_seconds = Vec::new();
    let mut timed = |name: &'static str, t: Instant| stage_seconds.push((name, t.elapsed().as_secs_f64()));

    let t = Instant::now();
    let phantom = cmd_phantom(cfg, out)?;
    timed("phantom", t);
    let t = Instant::now();
    cmd_harp(cfg, out)?;
    timed("harp", t);
    let t = Instant::now();
    let estimates = cmd_register(cfg, out, opts)?;
    timed("register", t);
    let t = Instant::now();
    let evaluation = cmd_evaluate(cfg, out)?;
    timed("evaluate", t);

    let mut manifest = String::new();
    let _ = writeln!(manifest, "tagflow_version={}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(manifest, "config_sha256={}", config_hash(cfg));
    let _ = writeln!(manifest, "frames={}", phantom.frames());
    let _ = writeln!(
        manifest,
        "jump_onset_frame={}",
        phantom.jump_onset_frame().map_or("none".to_string(), |n| n.to_string())
    );
    let names: Vec<&str> = cfg.methods.iter().map(|m| m.name()).collect();
    let _ = writeln!(manifest, "methods={}", names.join(","));
    let _ = writeln!(manifest, "stages=phantom,harp,register,evaluate");
    for est in &estimates {
        let last = est.frames();
        if let Some(row) = evaluation.volume_row(est.method, last) {
            let _ = writeln!(
                manifest,
                "summary.{}.frame_{last:02}=ssim:{:.6} corr:{:.6}",
                est.method.name(),
                row.ssim,
                row.corr
            );
        }
    }
    write_text(&out.join("run_manifest.cfg"), &manifest)?;
    let mut timing = String::from("stage,seconds\n");
    for (name, s) in &stage_seconds {
        let _ = writeln!(timing, "{name},{s:.3}");
    }
    write_text(&out.join("timing.csv"), &timing)?;
    Ok(PipelineRun {
        evaluation,
        estimates,
        phantom,
        stage_seconds,
    })
}

/// Volume rows of one method, ordered by frame.
pub fn volume_rows(evaluation: &eval::Evaluation, method: Method) -> Vec<&eval::MetricRow> {
    evaluation
        .rows
        .iter()
        .filter(|r| r.method == method && r.slice == SliceId::Volume)
        .collect()
}

/// Loads a stored deformation for callers outside the pipeline.
pub fn load_deformation(out: &Path, method: Method, n: usize) -> Result<crate::VectorVolume> {
    io::read_vector(
        estimates_dir(out).join(method.name()).join(format!("psi_{n:02}.tmv")),
        VectorKind::Displacement,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(out: &Path) -> PipelineConfig {
        PipelineConfig::parse(&format!(
            "phantom.dims=20,20,8\n\
             phantom.frames=3\n\
             phantom.peak_half_periods=0.5\n\
             pvira.max_iters=15\n\
             output.dir={}\n",
            out.display()
        ))
        .unwrap()
    }

    #[test]
    fn stages_chain_through_the_output_directory() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path();
        let cfg = tiny_config(out);
        let run = cmd_pipeline(&cfg, out, &RunOptions { trace: true }).unwrap();
        for f in [
            "config.cfg",
            "run_manifest.cfg",
            "phantom/frame_03.tmv",
            "phantom/model.cfg",
            "harp/phase_03_z.tmv",
            "harp/mag_01_x.tmv",
            "estimates/direct/psi_03.tmv",
            "estimates/incremental/v_02.tmv",
            "estimates/new_start/vinit_03.tmv",
            "estimates/new_start/trace_02.csv",
            "eval/metrics.csv",
            "eval/worst_slices.csv",
            "eval/chart.svg",
            "eval/pgm/reference_f01.pgm",
            "eval/pgm/new_start_f03.pgm",
        ] {
            assert!(out.join(f).exists(), "{f} missing");
        }
        assert!(!out.join("estimates/.tmp-direct").exists());
        assert_eq!(count_frames(|n| out.join(format!("harp/phase_{n:02}_y.tmv"))), 3);
        assert_eq!(run.evaluation.rows.len(), 3 * 2 * 9);
        let csv = std::fs::read_to_string(out.join("eval/metrics.csv")).unwrap();
        assert!(csv.starts_with(eval::METRICS_HEADER));
        let manifest = std::fs::read_to_string(out.join("run_manifest.cfg")).unwrap();
        assert!(manifest.contains(&format!("config_sha256={}", config_hash(&cfg))));

        // model.cfg regenerates the frames bit for bit
        let phantom = load_phantom(out).unwrap().unwrap();
        for n in 1..=3 {
            let stored = std::fs::read(out.join(format!("phantom/frame_{n:02}.tmv"))).unwrap();
            assert_eq!(io::encode_scalar(&phantom.render(n).unwrap()), stored);
        }
        // evaluate alone reproduces the pipeline's table
        let again = cmd_evaluate(&cfg, out).unwrap();
        assert_eq!(again, run.evaluation);
    }

    #[test]
    fn missing_inputs_are_io_or_format_errors_with_stage() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_config(tmp.path());
        let err = cmd_harp(&cfg, tmp.path()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().starts_with("harp stage failed"), "{err}");
        let err = cmd_register(&cfg, tmp.path(), &RunOptions::default()).unwrap_err();
        assert!(err.to_string().starts_with("register stage failed"), "{err}");
    }

    #[test]
    fn hash_tracks_config_changes() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.phantom.seed = 1;
        assert_eq!(config_hash(&a).len(), 64);
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
        assert_ne!(config_hash(&a), config_hash(&b));
    }
}
