//! Flat `key=value` pipeline configuration.
//!
//! One setting per line, `#` starts a comment, keys are dotted
//! (`phantom.tag_period_mm=12,12,36`). Parsing is fail-closed: unknown
//! keys, duplicates and out-of-range values are rejected before any
//! computation starts. Keys not given keep their defaults.
//!
//! Triples are comma separated in x, y, z order. Floats are written back
//! with Rust's shortest round-trip formatting, so [`PipelineConfig::to_text`]
//! followed by [`PipelineConfig::parse`] reproduces every value bit for bit.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::{EvalOptions, PhaseCompare};
use crate::harp::{axis_wave_vector, FilterProfile, HarpFilterSpec, DEFAULT_RADIUS_FRACTION};
use crate::phantom::{Axis, PhantomConfig};
use crate::pvira::{MagnitudeThreshold, PviraParams};
use crate::strategies::Method;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HarpConfig {
    /// Pass-band radius as a fraction of the tag frequency.
    pub radius_fraction: f64,
    pub profile: FilterProfile,
}

impl Default for HarpConfig {
    fn default() -> Self {
        Self {
            radius_fraction: DEFAULT_RADIUS_FRACTION,
            profile: FilterProfile::default(),
        }
    }
}

impl HarpConfig {
    /// One filter per axis-aligned tag direction.
    pub fn specs(&self, tag_periods: [f64; 3]) -> Result<[HarpFilterSpec; 3]> {
        let mut out = Vec::with_capacity(3);
        for (axis, &period) in tag_periods.iter().enumerate() {
            let k = axis_wave_vector(period, axis);
            let radius = self.radius_fraction * k.iter().map(|c| c * c).sum::<f64>().sqrt();
            out.push(HarpFilterSpec::new(k, radius, self.profile)?);
        }
        Ok(out.try_into().expect("three specs"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write PGM dumps of deformed phase slices.
    pub pgm: bool,
    /// Slice index for the PGM dumps; the middle slice when unset.
    pub pgm_slice: Option<usize>,
    pub svg: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("tagflow_out"),
            pgm: true,
            pgm_slice: None,
            svg: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub phantom: PhantomConfig,
    pub harp: HarpConfig,
    pub pvira: PviraParams,
    pub methods: Vec<Method>,
    /// Project the summed warm-start velocity before use (default off).
    pub project_init: bool,
    pub output: OutputConfig,
    pub eval: EvalOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            phantom: PhantomConfig::default(),
            harp: HarpConfig::default(),
            pvira: PviraParams::default(),
            methods: Method::ALL.to_vec(),
            project_init: false,
            output: OutputConfig::default(),
            eval: EvalOptions::default(),
        }
    }
}

fn cfg_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("line {line}: {msg}"))
}

fn parse_f64(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = v.trim().parse().map_err(|_| format!("not a number: {v:?}"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("not finite: {v:?}"))
    }
}

fn parse_usize(v: &str) -> std::result::Result<usize, String> {
    v.trim()
        .parse()
        .map_err(|_| format!("not a non-negative integer: {v:?}"))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

fn parse_triple<T>(
    v: &str,
    item: fn(&str) -> std::result::Result<T, String>,
) -> std::result::Result<[T; 3], String> {
    let parts: Vec<&str> = v.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got {v:?}"));
    }
    let items = parts
        .into_iter()
        .map(item)
        .collect::<std::result::Result<Vec<T>, String>>()?;
    Ok(items.try_into().unwrap_or_else(|_| unreachable!()))
}

fn triple_text<T: std::fmt::Display>(t: &[T; 3]) -> String {
    format!("{},{},{}", t[0], t[1], t[2])
}

fn profile_text(p: FilterProfile) -> &'static str {
    match p {
        FilterProfile::HardSphere => "hard_sphere",
        FilterProfile::RaisedCosine { .. } => "raised_cosine",
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        // the rolloff is only meaningful with the raised-cosine profile,
        // so resolve the pair after all lines are read
        let mut profile_name: Option<String> = None;
        let mut rolloff: Option<f64> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(line_no, format!("expected key=value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(cfg_err(line_no, format!("duplicate key {key}")));
            }
            let set = |r: std::result::Result<(), String>| {
                r.map_err(|m| cfg_err(line_no, format!("{key}: {m}")))
            };
            let p = &mut cfg.phantom;
            match key {
                "phantom.dims" => set(parse_triple(value, parse_usize).map(|t| p.dims = t))?,
                "phantom.spacing_mm" => set(parse_triple(value, parse_f64).map(|t| p.spacing = t))?,
                "phantom.origin_mm" => set(parse_triple(value, parse_f64).map(|t| p.origin = t))?,
                "phantom.frames" => set(parse_usize(value).map(|v| p.frames = v))?,
                "phantom.tag_period_mm" => {
                    set(parse_triple(value, parse_f64).map(|t| p.tag_periods = t))?
                }
                "phantom.peak_half_periods" => {
                    set(parse_f64(value).map(|v| p.peak_half_periods = v))?
                }
                "phantom.schedule_exponent" => {
                    set(parse_f64(value).map(|v| p.schedule_exponent = v))?
                }
                "phantom.noise_sigma" => set(parse_f64(value).map(|v| p.noise_sigma = v))?,
                "phantom.seed" => set(
                    value
                        .parse::<u64>()
                        .map(|v| p.seed = v)
                        .map_err(|_| format!("not a u64: {value:?}")),
                )?,
                "harp.radius_fraction" => {
                    set(parse_f64(value).map(|v| cfg.harp.radius_fraction = v))?
                }
                "harp.profile" => profile_name = Some(value.to_string()),
                "harp.rolloff" => set(parse_f64(value).map(|v| rolloff = Some(v)))?,
                "pvira.sigma_fluid_mm" => {
                    set(parse_triple(value, parse_f64).map(|t| cfg.pvira.sigma_fluid = t))?
                }
                "pvira.sigma_diffusion_mm" => {
                    set(parse_triple(value, parse_f64).map(|t| cfg.pvira.sigma_diffusion = t))?
                }
                "pvira.sigma_i" => set(parse_f64(value).map(|v| cfg.pvira.sigma_i = v))?,
                "pvira.max_iters" => set(parse_usize(value).map(|v| cfg.pvira.max_iters = v))?,
                "pvira.step_max_voxels" => {
                    set(parse_f64(value).map(|v| cfg.pvira.step_max_voxels = v))?
                }
                "pvira.incompressible" => {
                    set(parse_bool(value).map(|v| cfg.pvira.incompressible = v))?
                }
                "pvira.magnitude_threshold" => set(
                    MagnitudeThreshold::parse(value)
                        .map(|t| cfg.pvira.magnitude_threshold = t)
                        .ok_or_else(|| format!("expected median:F or abs:E, got {value:?}")),
                )?,
                "pvira.stop_tol" => set(parse_f64(value).map(|v| cfg.pvira.stop_tol = v))?,
                "pvira.boundary_taper_voxels" => {
                    set(parse_usize(value).map(|v| cfg.pvira.boundary_taper_voxels = v))?
                }
                "strategies.methods" => {
                    let mut methods = Vec::new();
                    for name in value.split(',') {
                        let m = Method::parse(name.trim()).ok_or_else(|| {
                            cfg_err(line_no, format!("{key}: unknown method {name:?}"))
                        })?;
                        if methods.contains(&m) {
                            return Err(cfg_err(line_no, format!("{key}: {name} listed twice")));
                        }
                        methods.push(m);
                    }
                    methods.sort();
                    cfg.methods = methods;
                }
                "strategies.project_init" => {
                    set(parse_bool(value).map(|v| cfg.project_init = v))?
                }
                "output.dir" => {
                    if value.is_empty() {
                        return Err(cfg_err(line_no, "output.dir is empty"));
                    }
                    cfg.output.dir = PathBuf::from(value);
                }
                "output.pgm" => set(parse_bool(value).map(|v| cfg.output.pgm = v))?,
                "output.pgm_slice" => {
                    set(parse_usize(value).map(|v| cfg.output.pgm_slice = Some(v)))?
                }
                "output.svg" => set(parse_bool(value).map(|v| cfg.output.svg = v))?,
                "eval.window" => set(parse_usize(value).map(|v| cfg.eval.window = v))?,
                "eval.compare" => set(
                    PhaseCompare::parse(value)
                        .map(|m| cfg.eval.compare = m)
                        .ok_or_else(|| format!("expected raw or sincos, got {value:?}")),
                )?,
                "eval.slice_axis" => set(
                    Axis::parse(value)
                        .map(|a| cfg.eval.slice_axis = a.index())
                        .ok_or_else(|| format!("expected x, y or z, got {value:?}")),
                )?,
                "eval.margin" => set(parse_usize(value).map(|v| cfg.eval.margin = v))?,
                _ => return Err(cfg_err(line_no, format!("unknown key {key}"))),
            }
        }
        cfg.harp.profile = match (profile_name.as_deref(), rolloff) {
            (None | Some("raised_cosine"), r) => FilterProfile::RaisedCosine {
                rolloff: r.unwrap_or(match FilterProfile::default() {
                    FilterProfile::RaisedCosine { rolloff } => rolloff,
                    FilterProfile::HardSphere => 0.25,
                }),
            },
            (Some("hard_sphere"), None) => FilterProfile::HardSphere,
            (Some("hard_sphere"), Some(_)) => {
                return Err(Error::Config(
                    "harp.rolloff only applies to harp.profile=raised_cosine".into(),
                ))
            }
            (Some(other), _) => {
                return Err(Error::Config(format!(
                    "harp.profile: expected raised_cosine or hard_sphere, got {other:?}"
                )))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Range checks across all sections; also builds the phantom and the
    /// filters once so that every later failure is numerical, not a typo.
    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        self.phantom.build().map_err(wrap)?;
        if self.phantom.tag_periods.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::Config("tag periods must be positive".into()));
        }
        if !(self.harp.radius_fraction > 0.0 && self.harp.radius_fraction < 1.0) {
            return Err(Error::Config(format!(
                "harp.radius_fraction must lie in (0, 1), got {}",
                self.harp.radius_fraction
            )));
        }
        self.harp.specs(self.phantom.tag_periods).map_err(wrap)?;
        self.pvira.validate().map_err(wrap)?;
        self.eval.validate().map_err(wrap)?;
        if self.methods.is_empty() {
            return Err(Error::Config("strategies.methods is empty".into()));
        }
        let plane = {
            let d = self.phantom.dims;
            let axis = self.eval.slice_axis;
            (0..3).filter(|&a| a != axis).map(|a| d[a]).min().unwrap_or(0)
        };
        if self.eval.window > plane {
            return Err(Error::Config(format!(
                "eval.window {} larger than the {}-voxel slice",
                self.eval.window, plane
            )));
        }
        if 2 * self.eval.margin >= plane || 2 * self.eval.margin >= *self.phantom.dims.iter().min().unwrap_or(&0) {
            return Err(Error::Config(format!(
                "eval.margin {} leaves no interior voxels",
                self.eval.margin
            )));
        }
        if let Some(k) = self.output.pgm_slice {
            if k >= self.phantom.dims[self.eval.slice_axis] {
                return Err(Error::Config(format!("output.pgm_slice {k} out of range")));
            }
        }
        Ok(())
    }

    /// Every setting, one per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = self.phantom_text();
        let h = &self.harp;
        let _ = writeln!(s, "harp.radius_fraction={}", h.radius_fraction);
        let _ = writeln!(s, "harp.profile={}", profile_text(h.profile));
        if let FilterProfile::RaisedCosine { rolloff } = h.profile {
            let _ = writeln!(s, "harp.rolloff={rolloff}");
        }
        let p = &self.pvira;
        let _ = writeln!(s, "pvira.sigma_fluid_mm={}", triple_text(&p.sigma_fluid));
        let _ = writeln!(s, "pvira.sigma_diffusion_mm={}", triple_text(&p.sigma_diffusion));
        let _ = writeln!(s, "pvira.sigma_i={}", p.sigma_i);
        let _ = writeln!(s, "pvira.max_iters={}", p.max_iters);
        let _ = writeln!(s, "pvira.step_max_voxels={}", p.step_max_voxels);
        let _ = writeln!(s, "pvira.incompressible={}", p.incompressible);
        let _ = writeln!(s, "pvira.magnitude_threshold={}", p.magnitude_threshold);
        let _ = writeln!(s, "pvira.stop_tol={}", p.stop_tol);
        let _ = writeln!(s, "pvira.boundary_taper_voxels={}", p.boundary_taper_voxels);
        let names: Vec<&str> = self.methods.iter().map(|m| m.name()).collect();
        let _ = writeln!(s, "strategies.methods={}", names.join(","));
        let _ = writeln!(s, "strategies.project_init={}", self.project_init);
        let _ = writeln!(s, "output.dir={}", self.output.dir.display());
        let _ = writeln!(s, "output.pgm={}", self.output.pgm);
        if let Some(k) = self.output.pgm_slice {
            let _ = writeln!(s, "output.pgm_slice={k}");
        }
        let _ = writeln!(s, "output.svg={}", self.output.svg);
        let e = &self.eval;
        let _ = writeln!(s, "eval.window={}", e.window);
        let _ = writeln!(s, "eval.compare={}", e.compare.name());
        let _ = writeln!(s, "eval.slice_axis={}", ["x", "y", "z"][e.slice_axis]);
        let _ = writeln!(s, "eval.margin={}", e.margin);
        s
    }

    /// The `phantom.*` lines only: enough to regenerate the frames.
    pub fn phantom_text(&self) -> String {
        let p = &self.phantom;
        let mut s = String::new();
        let _ = writeln!(s, "phantom.dims={}", triple_text(&p.dims));
        let _ = writeln!(s, "phantom.spacing_mm={}", triple_text(&p.spacing));
        let _ = writeln!(s, "phantom.origin_mm={}", triple_text(&p.origin));
        let _ = writeln!(s, "phantom.frames={}", p.frames);
        let _ = writeln!(s, "phantom.tag_period_mm={}", triple_text(&p.tag_periods));
        let _ = writeln!(s, "phantom.peak_half_periods={}", p.peak_half_periods);
        let _ = writeln!(s, "phantom.schedule_exponent={}", p.schedule_exponent);
        let _ = writeln!(s, "phantom.noise_sigma={}", p.noise_sigma);
        let _ = writeln!(s, "phantom.seed={}", p.seed);
        s
    }

    pub fn harp_specs(&self) -> Result<[HarpFilterSpec; 3]> {
        self.harp.specs(self.phantom.tag_periods)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_default() {
        assert_eq!(PipelineConfig::parse("").unwrap(), PipelineConfig::default());
        assert_eq!(
            PipelineConfig::parse("# nothing\n\n   \n").unwrap(),
            PipelineConfig::default()
        );
    }

    #[test]
    fn text_roundtrip_is_exact() {
        let mut cfg = PipelineConfig::default();
        cfg.phantom.noise_sigma = 0.1 + 0.2;
        cfg.phantom.seed = u64::MAX;
        cfg.pvira.sigma_i = 1.0 / 3.0;
        cfg.pvira.magnitude_threshold = MagnitudeThreshold::Absolute(0.7);
        cfg.methods = vec![Method::Direct, Method::NewStart];
        cfg.output.pgm_slice = Some(5);
        cfg.eval.compare = PhaseCompare::SinCos;
        cfg.eval.slice_axis = 1;
        let back = PipelineConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), cfg.to_text());

        let mut hard = PipelineConfig::default();
        hard.harp.profile = FilterProfile::HardSphere;
        assert_eq!(PipelineConfig::parse(&hard.to_text()).unwrap(), hard);
    }

    #[test]
    fn values_and_comments_parse() {
        let cfg = PipelineConfig::parse(
            "phantom.dims = 32,32,12   # smaller\n\
             phantom.frames=6\n\
             pvira.incompressible=false\n\
             pvira.magnitude_threshold=abs:0.5\n\
             strategies.methods=new_start,direct\n\
             eval.slice_axis=y\n",
        )
        .unwrap();
        assert_eq!(cfg.phantom.dims, [32, 32, 12]);
        assert_eq!(cfg.phantom.frames, 6);
        assert!(!cfg.pvira.incompressible);
        assert_eq!(cfg.pvira.magnitude_threshold, MagnitudeThreshold::Absolute(0.5));
        assert_eq!(cfg.methods, vec![Method::Direct, Method::NewStart]);
        assert_eq!(cfg.eval.slice_axis, 1);
    }

    #[test]
    fn fail_closed() {
        let bad = [
            "phantom.dimz=1,2,3",
            "phantom.dims=64,64",
            "phantom.frames=1",
            "phantom.noise_sigma=-1",
            "phantom.spacing_mm=1,0,1",
            "phantom.tag_period_mm=12,nan,36",
            "pvira.max_iters=0",
            "pvira.sigma_i=0",
            "pvira.step_max_voxels=0",
            "pvira.incompressible=yes",
            "pvira.magnitude_threshold=0.1",
            "strategies.methods=direct,direct",
            "strategies.methods=",
            "strategies.methods=warm",
            "harp.radius_fraction=1.5",
            "harp.profile=gaussian",
            "harp.profile=hard_sphere\nharp.rolloff=0.2",
            "eval.window=8",
            "eval.window=99",
            "eval.compare=phase",
            "eval.slice_axis=w",
            "output.pgm_slice=24",
            "phantom.frames=4\nphantom.frames=5",
            "no equals sign",
            "phantom.seed=-3",
        ];
        for text in bad {
            match PipelineConfig::parse(text) {
                Err(Error::Config(_)) => {}
                other => panic!("{text:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn error_names_the_line() {
        let err = PipelineConfig::parse("phantom.frames=4\n\nbogus=1\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn specs_follow_tag_periods() {
        let cfg = PipelineConfig::default();
        let specs = cfg.harp_specs().unwrap();
        for a in 0..3 {
            let k = axis_wave_vector(cfg.phantom.tag_periods[a], a);
            assert_eq!(specs[a].center(), k);
        }
    }
}
