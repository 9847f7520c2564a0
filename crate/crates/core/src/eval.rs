//! Evaluation: deformed phases, SSIM, CORR, endpoint error and tag jumps.
//!
//! Each estimate `ψ_n` warps the frame-1 phases onto frame n
//! (`Î_n = I_1 ∘ ψ_n` under pull-back); the result is compared slice by
//! slice with the phases extracted from frame n. With a phantom the
//! estimate is also compared with the exact displacement.
//!
//! A voxel counts as tag-jumped along direction d when the estimate is off
//! by more than half a tag period along `k̂_d`: past that point the wrapped
//! phase difference points at the neighbouring tag.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harp::{median_in_place, PhaseSet};
use crate::phantom::{ground_truth_displacement, MotionModel, TagPattern};
use crate::strategies::{Method, SequenceEstimate};
use crate::volume::{
    norm3, warp_phase, warp_scalar, Grid3, Plane, ScalarVolume, VectorKind, VectorVolume,
};

pub const DEFAULT_SSIM_WINDOW: usize = 7;
pub const DEFAULT_MARGIN: usize = 3;

/// `Î_n`: every phase and magnitude of `first` pulled back through `psi`.
pub fn deformed_phase(psi: &VectorVolume, first: &PhaseSet) -> Result<PhaseSet> {
    psi.expect_kind(VectorKind::Displacement)?;
    first.grid().check_same(psi.grid())?;
    let mut phases = Vec::with_capacity(3);
    let mut mags = Vec::with_capacity(3);
    for d in 0..3 {
        phases.push(warp_phase(&first.phases()[d], psi)?);
        mags.push(warp_scalar(&first.magnitudes()[d], psi)?);
    }
    PhaseSet::new(
        phases.try_into().expect("three phases"),
        mags.try_into().expect("three magnitudes"),
        *first.specs(),
    )
}

fn check_shape(a: &Plane, b: &Plane) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::InvalidParameter(format!(
            "plane shapes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Sums over every `window × window` block fully inside the plane.
/// Each output is summed afresh, so there is no running-sum drift.
fn box_sums(p: &Plane, window: usize, f: impl Fn(usize) -> f64) -> Vec<f64> {
    let (w, h) = (p.width, p.height);
    let ow = w - window + 1;
    let oh = h - window + 1;
    let mut rows = vec![0.0; ow * h];
    for b in 0..h {
        for a in 0..ow {
            let mut s = 0.0;
            for t in 0..window {
                s += f(a + t + w * b);
            }
            rows[a + ow * b] = s;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for b in 0..oh {
        for a in 0..ow {
            let mut s = 0.0;
            for t in 0..window {
                s += rows[a + ow * (b + t)];
            }
            out[a + ow * b] = s;
        }
    }
    out
}

/// Mean SSIM over all valid (unpadded) `window × window` windows with
/// uniform weights, `c1 = (0.01 L)²`, `c2 = (0.03 L)²` and population
/// (co)variances.
pub fn ssim(a: &Plane, b: &Plane, window: usize, dynamic_range: f64) -> Result<f64> {
    check_shape(a, b)?;
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "SSIM window must be odd, got {window}"
        )));
    }
    if window > a.width || window > a.height {
        return Err(Error::InvalidParameter(format!(
            "SSIM window {window} larger than plane {}x{}",
            a.width, a.height
        )));
    }
    if !(dynamic_range > 0.0 && dynamic_range.is_finite()) {
        return Err(Error::InvalidParameter(
            "SSIM dynamic range must be positive".into(),
        ));
    }
    let (x, y) = (&a.values, &b.values);
    let sa = box_sums(a, window, |i| x[i]);
    let sb = box_sums(a, window, |i| y[i]);
    let saa = box_sums(a, window, |i| x[i] * x[i]);
    let sbb = box_sums(a, window, |i| y[i] * y[i]);
    let sab = box_sums(a, window, |i| x[i] * y[i]);
    let n = (window * window) as f64;
    let c1 = (0.01 * dynamic_range).powi(2);
    let c2 = (0.03 * dynamic_range).powi(2);
    let mut total = 0.0;
    for i in 0..sa.len() {
        let (ma, mb) = (sa[i] / n, sb[i] / n);
        let va = saa[i] / n - ma * ma;
        let vb = sbb[i] / n - mb * mb;
        let cov = sab[i] / n - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / sa.len() as f64)
}

/// Pearson correlation over all samples.
pub fn corr(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::Empty("correlation input"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(Error::Degenerate("zero variance".into()));
    }
    Ok(sab / (saa.sqrt() * sbb.sqrt()))
}

/// How phase planes are compared.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhaseCompare {
    /// SSIM (L = 2π) and CORR directly on wrapped values.
    Raw,
    /// Mean of the cos and sin channel scores (SSIM with L = 2).
    SinCos,
}

impl PhaseCompare {
    pub fn name(self) -> &'static str {
        match self {
            PhaseCompare::Raw => "raw",
            PhaseCompare::SinCos => "sincos",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [PhaseCompare::Raw, PhaseCompare::SinCos]
            .into_iter()
            .find(|m| m.name() == s)
    }
}

fn map_plane(p: &Plane, f: fn(f64) -> f64) -> Plane {
    Plane {
        width: p.width,
        height: p.height,
        values: p.values.iter().map(|&v| f(v)).collect(),
    }
}

/// SSIM of two phase planes.
pub fn phase_ssim(a: &Plane, b: &Plane, mode: PhaseCompare, window: usize) -> Result<f64> {
    match mode {
        PhaseCompare::Raw => ssim(a, b, window, std::f64::consts::TAU),
        PhaseCompare::SinCos => {
            let c = ssim(&map_plane(a, f64::cos), &map_plane(b, f64::cos), window, 2.0)?;
            let s = ssim(&map_plane(a, f64::sin), &map_plane(b, f64::sin), window, 2.0)?;
            Ok(0.5 * (c + s))
        }
    }
}

/// CORR of two phase planes.
pub fn phase_corr(a: &Plane, b: &Plane, mode: PhaseCompare) -> Result<f64> {
    check_shape(a, b)?;
    match mode {
        PhaseCompare::Raw => corr(&a.values, &b.values),
        PhaseCompare::SinCos => {
            let c = corr(&map_plane(a, f64::cos).values, &map_plane(b, f64::cos).values)?;
            let s = corr(&map_plane(a, f64::sin).values, &map_plane(b, f64::sin).values)?;
            Ok(0.5 * (c + s))
        }
    }
}

/// `(ssim, corr)` of two phase planes.
pub fn compare_phase_planes(
    a: &Plane,
    b: &Plane,
    mode: PhaseCompare,
    window: usize,
) -> Result<(f64, f64)> {
    Ok((phase_ssim(a, b, mode, window)?, phase_corr(a, b, mode)?))
}

/// Planes flatter than this (population std, radians) carry no structure
/// to correlate; a tag direction normal to the slice plane gives one.
pub const FLAT_PLANE_STD: f64 = 1e-6;

fn plane_std(p: &Plane) -> f64 {
    let n = p.values.len() as f64;
    let m = p.values.iter().sum::<f64>() / n;
    (p.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt()
}

/// Endpoint error summary over a voxel mask.
#[derive(Clone, Debug, PartialEq)]
pub struct EndpointError {
    pub median_mm: f64,
    pub max_mm: f64,
    /// `|u_est - u_true|` at every voxel (mask ignored).
    pub per_voxel: ScalarVolume,
}

/// `|estimate - truth|` with median and max over voxels at least `margin`
/// voxels from every face.
pub fn endpoint_error(
    estimate: &VectorVolume,
    truth: &VectorVolume,
    margin: usize,
) -> Result<EndpointError> {
    estimate.grid().check_same(truth.grid())?;
    let grid = *estimate.grid();
    let per_voxel: Vec<f64> = estimate
        .values()
        .iter()
        .zip(truth.values())
        .map(|(a, b)| norm3([a[0] - b[0], a[1] - b[1], a[2] - b[2]]))
        .collect();
    let mut inside: Vec<f64> = (0..grid.len())
        .filter(|&i| grid.is_interior(i, margin))
        .map(|i| per_voxel[i])
        .collect();
    if inside.is_empty() {
        return Err(Error::Empty("interior mask"));
    }
    let max_mm = inside.iter().copied().fold(0.0, f64::max);
    let median_mm = median_in_place(&mut inside);
    Ok(EndpointError {
        median_mm,
        max_mm,
        per_voxel: ScalarVolume::from_parts(grid, per_voxel),
    })
}

/// Fraction of masked voxels whose error along each tag direction exceeds
/// half that direction's tag period.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpFractions {
    pub per_direction: [f64; 3],
}

impl JumpFractions {
    /// Worst direction.
    pub fn overall(&self) -> f64 {
        self.per_direction.iter().copied().fold(0.0, f64::max)
    }
}

fn jump_counts(
    estimate: &VectorVolume,
    truth: &VectorVolume,
    pattern: &TagPattern,
    mask: impl Fn(usize) -> bool,
) -> Result<JumpFractions> {
    estimate.grid().check_same(truth.grid())?;
    let grid = *estimate.grid();
    let dirs: [([f64; 3], f64); 3] = [0, 1, 2].map(|d| {
        let k = pattern.wave_vectors()[d];
        let len = norm3(k);
        ([k[0] / len, k[1] / len, k[2] / len], std::f64::consts::PI / len)
    });
    let mut hits = [0usize; 3];
    let mut count = 0usize;
    for idx in (0..grid.len()).filter(|&i| mask(i)) {
        let (a, b) = (estimate.values()[idx], truth.values()[idx]);
        let diff = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        count += 1;
        for (d, (unit, half)) in dirs.iter().enumerate() {
            let along = diff[0] * unit[0] + diff[1] * unit[1] + diff[2] * unit[2];
            if along.abs() > *half {
                hits[d] += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Empty("interior mask"));
    }
    Ok(JumpFractions {
        per_direction: hits.map(|h| h as f64 / count as f64),
    })
}

/// Tag-jump fractions over voxels at least `margin` voxels from every face.
pub fn detect_tag_jump(
    estimate: &VectorVolume,
    truth: &VectorVolume,
    pattern: &TagPattern,
    margin: usize,
) -> Result<JumpFractions> {
    let grid = *estimate.grid();
    jump_counts(estimate, truth, pattern, |i| grid.is_interior(i, margin))
}

/// Which rows of a table a value describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum SliceId {
    Index(usize),
    Volume,
}

impl std::fmt::Display for SliceId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SliceId::Index(k) => write!(f, "{k}"),
            SliceId::Volume => f.write_str("volume"),
        }
    }
}

/// One row of `metrics.csv`. Endpoint and jump columns are empty without
/// ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub method: Method,
    pub frame: usize,
    pub slice: SliceId,
    pub ssim: f64,
    pub corr: f64,
    pub median_epe_mm: Option<f64>,
    pub max_epe_mm: Option<f64>,
    pub jump_fraction: Option<f64>,
}

pub const METRICS_HEADER: &str =
    "method,frame,slice,ssim,corr,median_epe_mm,max_epe_mm,jump_fraction";

/// Exact motion for phantom sequences.
#[derive(Clone, Copy, Debug)]
pub struct GroundTruth<'a> {
    pub model: &'a MotionModel,
    pub pattern: &'a TagPattern,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub window: usize,
    pub compare: PhaseCompare,
    /// Axis held fixed by a slice; 2 gives axial slices.
    pub slice_axis: usize,
    /// Interior margin in voxels; in-plane only for slice rows.
    pub margin: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            window: DEFAULT_SSIM_WINDOW,
            compare: PhaseCompare::Raw,
            slice_axis: 2,
            margin: DEFAULT_MARGIN,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if self.slice_axis > 2 {
            return Err(Error::InvalidParameter(format!(
                "slice axis {} not in 0..=2",
                self.slice_axis
            )));
        }
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "SSIM window must be odd, got {}",
                self.window
            )));
        }
        Ok(())
    }
}

/// Rows for every method and frame plus each (method, frame)'s worst slice.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Ordered by method, frame, then slices ascending and the volume row last.
    pub rows: Vec<MetricRow>,
    /// Lowest-SSIM slice per method and frame, same order.
    pub worst_slices: Vec<MetricRow>,
}

impl Evaluation {
    pub fn volume_row(&self, method: Method, frame: usize) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.frame == frame && r.slice == SliceId::Volume)
    }
}

fn slice_position(grid: &Grid3, idx: usize, axis: usize) -> usize {
    grid.coords(idx)[axis]
}

fn in_plane_interior(grid: &Grid3, idx: usize, axis: usize, margin: usize) -> bool {
    let c = grid.coords(idx);
    let dims = grid.dims();
    (0..3).all(|a| a == axis || (c[a] >= margin && c[a] + margin < dims[a]))
}

fn frame_rows(
    est: &SequenceEstimate,
    n: usize,
    phases: &[PhaseSet],
    truth: Option<GroundTruth<'_>>,
    opts: &EvalOptions,
) -> Result<Vec<MetricRow>> {
    let psi = est.deformation(n)?;
    let deformed = deformed_phase(psi, &phases[0])?;
    let reference = &phases[n - 1];
    let grid = *psi.grid();
    let axis = opts.slice_axis;
    let slices = grid.dims()[axis];
    let exact = match truth {
        Some(t) => Some(ground_truth_displacement(t.model, &grid, n)?),
        None => None,
    };
    let epe = match &exact {
        Some(u) => Some(endpoint_error(psi, u, opts.margin)?),
        None => None,
    };

    let mut rows = Vec::with_capacity(slices + 1);
    let (mut ssim_sum, mut corr_sum) = (0.0, 0.0);
    for k in 0..slices {
        let (mut s, mut c, mut c_count) = (0.0, 0.0, 0usize);
        for d in 0..3 {
            let a = deformed.phases()[d].slice(axis, k);
            let b = reference.phases()[d].slice(axis, k);
            s += phase_ssim(&a, &b, opts.compare, opts.window)?;
            if plane_std(&a) > FLAT_PLANE_STD && plane_std(&b) > FLAT_PLANE_STD {
                c += phase_corr(&a, &b, opts.compare)?;
                c_count += 1;
            }
        }
        if c_count == 0 {
            return Err(Error::Degenerate(format!(
                "frame {n}, slice {k}: every phase plane is flat"
            )));
        }
        let (s, c) = (s / 3.0, c / c_count as f64);
        ssim_sum += s;
        corr_sum += c;
        let mut row = MetricRow {
            method: est.method,
            frame: n,
            slice: SliceId::Index(k),
            ssim: s,
            corr: c,
            median_epe_mm: None,
            max_epe_mm: None,
            jump_fraction: None,
        };
        if let (Some(e), Some(u), Some(t)) = (&epe, &exact, truth) {
            let mask = |i: usize| {
                slice_position(&grid, i, axis) == k && in_plane_interior(&grid, i, axis, opts.margin)
            };
            let mut vals: Vec<f64> = (0..grid.len())
                .filter(|&i| mask(i))
                .map(|i| e.per_voxel.values()[i])
                .collect();
            if !vals.is_empty() {
                row.max_epe_mm = Some(vals.iter().copied().fold(0.0, f64::max));
                row.median_epe_mm = Some(median_in_place(&mut vals));
                row.jump_fraction = Some(jump_counts(psi, u, t.pattern, mask)?.overall());
            }
        }
        rows.push(row);
    }
    let mut volume = MetricRow {
        method: est.method,
        frame: n,
        slice: SliceId::Volume,
        ssim: ssim_sum / slices as f64,
        corr: corr_sum / slices as f64,
        median_epe_mm: None,
        max_epe_mm: None,
        jump_fraction: None,
    };
    if let (Some(e), Some(u), Some(t)) = (&epe, &exact, truth) {
        volume.median_epe_mm = Some(e.median_mm);
        volume.max_epe_mm = Some(e.max_mm);
        volume.jump_fraction = Some(detect_tag_jump(psi, u, t.pattern, opts.margin)?.overall());
    }
    rows.push(volume);
    Ok(rows)
}

/// Per method and frame n = 2..N: slice-averaged SSIM and CORR of the
/// deformed frame-1 phases against the frame-n phases, one row per slice
/// plus a volume row, with endpoint and jump metrics when ground truth is
/// given.
///
/// A slice's SSIM is the mean over the three phase directions. Its CORR is
/// the mean over directions whose planes are not flat (see
/// [`FLAT_PLANE_STD`]); a slice with only flat planes is an error.
pub fn evaluate_sequence(
    estimates: &[SequenceEstimate],
    phases: &[PhaseSet],
    truth: Option<GroundTruth<'_>>,
    opts: &EvalOptions,
) -> Result<Evaluation> {
    opts.validate()?;
    for est in estimates {
        if est.frames() != phases.len() {
            return Err(Error::InvalidParameter(format!(
                "{} estimate covers {} frames, sequence has {}",
                est.method.name(),
                est.frames(),
                phases.len()
            )));
        }
    }
    let jobs: Vec<(usize, usize)> = (0..estimates.len())
        .flat_map(|e| (2..=phases.len()).map(move |n| (e, n)))
        .collect();
    let per_frame: Vec<Vec<MetricRow>> = jobs
        .par_iter()
        .map(|&(e, n)| frame_rows(&estimates[e], n, phases, truth, opts))
        .collect::<Result<_>>()?;
    let mut worst_slices = Vec::with_capacity(per_frame.len());
    for rows in &per_frame {
        let worst = rows
            .iter()
            .filter(|r| r.slice != SliceId::Volume)
            .min_by(|a, b| a.ssim.total_cmp(&b.ssim))
            .expect("at least one slice");
        worst_slices.push(worst.clone());
    }
    Ok(Evaluation {
        rows: per_frame.into_iter().flatten().collect(),
        worst_slices,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// CSV text with [`METRICS_HEADER`]; fixed six-decimal formatting.
pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{},{},{}",
            r.method.name(),
            r.frame,
            r.slice,
            r.ssim,
            r.corr,
            opt(r.median_epe_mm),
            opt(r.max_epe_mm),
            opt(r.jump_fraction)
        );
    }
    s
}

/// Binary PGM (P5) of a plane, mapping `[lo, hi]` linearly to 0..=255.
pub fn pgm_bytes(plane: &Plane, lo: f64, hi: f64) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", plane.width, plane.height).into_bytes();
    let span = if hi > lo { hi - lo } else { 1.0 };
    // image rows top to bottom: flip the second coordinate
    for b in (0..plane.height).rev() {
        for a in 0..plane.width {
            let t = ((plane.at(a, b) - lo) / span).clamp(0.0, 1.0);
            out.push((t * 255.0).round() as u8);
        }
    }
    out
}

pub fn write_pgm(path: &Path, plane: &Plane, lo: f64, hi: f64) -> Result<()> {
    std::fs::write(path, pgm_bytes(plane, lo, hi)).map_err(|e| Error::io(path, e))
}

const SVG_COLORS: [&str; 3] = ["#d62728", "#1f77b4", "#2ca02c"];

/// Two-panel line chart (SSIM and CORR of the volume rows versus frame,
/// one line per method) with an optional dashed marker at `onset`.
pub fn svg_chart(rows: &[MetricRow], onset: Option<usize>) -> String {
    let volume: Vec<&MetricRow> = rows.iter().filter(|r| r.slice == SliceId::Volume).collect();
    let mut methods: Vec<Method> = volume.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    let frames_max = volume.iter().map(|r| r.frame).max().unwrap_or(2).max(3);
    let (pw, ph, pad) = (420.0, 260.0, 50.0);
    let width = 2.0 * (pw + pad) + pad;
    let height = ph + 2.0 * pad + 30.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (panel, title) in ["SSIM", "CORR"].iter().enumerate() {
        let x0 = pad + panel as f64 * (pw + pad);
        let y0 = pad;
        let value = |r: &MetricRow| if panel == 0 { r.ssim } else { r.corr };
        let lo = volume
            .iter()
            .map(|r| value(r))
            .fold(f64::INFINITY, f64::min)
            .min(1.0);
        let lo = if lo.is_finite() { (lo * 10.0).floor() / 10.0 } else { 0.0 };
        let hi = 1.0;
        let span = if hi > lo { hi - lo } else { 1.0 };
        let px = |f: usize| x0 + (f as f64 - 2.0) / (frames_max as f64 - 2.0) * pw;
        let py = |v: f64| y0 + (hi - v) / span * ph;
        let _ = writeln!(
            s,
            r#"<rect x="{x0}" y="{y0}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{title}</text>"#,
            x0 + pw / 2.0,
            y0 - 10.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">frame</text>"#,
            x0 + pw / 2.0,
            y0 + ph + 32.0
        );
        for (v, label) in [(lo, lo), (hi, hi)] {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end">{label:.1}</text>"#,
                x0 - 4.0,
                py(v) + 4.0
            );
        }
        for f in [2, frames_max] {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{f}</text>"#,
                px(f),
                y0 + ph + 16.0
            );
        }
        if let Some(n) = onset.filter(|&n| (2..=frames_max).contains(&n)) {
            let _ = writeln!(
                s,
                r#"<line x1="{0}" y1="{y0}" x2="{0}" y2="{1}" stroke="green" stroke-dasharray="6,4"/>"#,
                px(n),
                y0 + ph
            );
        }
        for (m_i, m) in methods.iter().enumerate() {
            let points: Vec<String> = volume
                .iter()
                .filter(|r| r.method == *m)
                .map(|r| format!("{:.2},{:.2}", px(r.frame), py(value(r))))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                SVG_COLORS[m_i % SVG_COLORS.len()],
                points.join(" ")
            );
        }
    }
    for (m_i, m) in methods.iter().enumerate() {
        let x = pad + m_i as f64 * 140.0;
        let y = height - 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{x}" y1="{0}" x2="{1}" y2="{0}" stroke="{2}" stroke-width="2"/><text x="{3}" y="{4}">{5}</text>"#,
            y - 4.0,
            x + 20.0,
            SVG_COLORS[m_i % SVG_COLORS.len()],
            x + 26.0,
            y,
            m.name()
        );
    }
    s.push_str("</svg>\n");
    s
}
