use crate::error::{Error, Result};

/// Confidence gate on harmonic magnitude.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MagnitudeThreshold {
    Absolute(f64),
    /// Fraction of the smaller of the two images' median magnitudes.
    FractionOfMedian(f64),
}

impl MagnitudeThreshold {
    /// Parses `median:F` or `abs:E`.
    pub fn parse(s: &str) -> Option<Self> {
        let (kind, value) = s.split_once(':')?;
        let value: f64 = value.trim().parse().ok()?;
        match kind.trim() {
            "median" => Some(MagnitudeThreshold::FractionOfMedian(value)),
            "abs" => Some(MagnitudeThreshold::Absolute(value)),
            _ => None,
        }
    }
}

impl std::fmt::Display for MagnitudeThreshold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MagnitudeThreshold::FractionOfMedian(x) => write!(f, "median:{x}"),
            MagnitudeThreshold::Absolute(x) => write!(f, "abs:{x}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PviraParams {
    /// Smoothing of each update field, mm.
    pub sigma_fluid: [f64; 3],
    /// Smoothing of the accumulated velocity, mm.
    pub sigma_diffusion: [f64; 3],
    /// Demons noise scale (phase error normalization).
    pub sigma_i: f64,
    pub max_iters: usize,
    /// Per-iteration update cap in units of the smallest voxel spacing.
    pub step_max_voxels: f64,
    pub incompressible: bool,
    pub magnitude_threshold: MagnitudeThreshold,
    /// Stop once the largest per-iteration velocity change falls below
    /// `stop_tol · min spacing`.
    pub stop_tol: f64,
    /// Width of the cosine boundary taper used when projecting; 0 disables it.
    pub boundary_taper_voxels: usize,
}

impl Default for PviraParams {
    fn default() -> Self {
        Self {
            sigma_fluid: [2.0, 2.0, 2.0],
            sigma_diffusion: [2.0, 2.0, 6.0],
            sigma_i: 1.0,
            max_iters: 200,
            step_max_voxels: 0.4,
            incompressible: true,
            magnitude_threshold: MagnitudeThreshold::FractionOfMedian(0.1),
            stop_tol: 1e-3,
            boundary_taper_voxels: 0,
        }
    }
}

impl PviraParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.max_iters < 1 {
            return bad("max_iters must be >= 1".into());
        }
        if self
            .sigma_fluid
            .iter()
            .chain(&self.sigma_diffusion)
            .any(|s| !(*s >= 0.0 && s.is_finite()))
        {
            return bad("smoothing sigmas must be finite and >= 0".into());
        }
        if !(self.sigma_i > 0.0 && self.sigma_i.is_finite()) {
            return bad(format!("sigma_i must be > 0, got {}", self.sigma_i));
        }
        if !(self.step_max_voxels > 0.0 && self.step_max_voxels.is_finite()) {
            return bad(format!(
                "step_max_voxels must be > 0, got {}",
                self.step_max_voxels
            ));
        }
        if !(self.stop_tol >= 0.0 && self.stop_tol.is_finite()) {
            return bad(format!("stop_tol must be >= 0, got {}", self.stop_tol));
        }
        match self.magnitude_threshold {
            MagnitudeThreshold::Absolute(e) | MagnitudeThreshold::FractionOfMedian(e)
                if !(e >= 0.0 && e.is_finite()) =>
            {
                bad(format!("magnitude threshold must be >= 0, got {e}"))
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_text_roundtrip() {
        for t in [
            MagnitudeThreshold::FractionOfMedian(0.1),
            MagnitudeThreshold::Absolute(2.5),
        ] {
            assert_eq!(MagnitudeThreshold::parse(&t.to_string()), Some(t));
        }
        assert_eq!(MagnitudeThreshold::parse("0.1"), None);
        assert_eq!(MagnitudeThreshold::parse("mean:0.1"), None);
    }

    #[test]
    fn defaults_validate() {
        PviraParams::default().validate().unwrap();
    }

    #[test]
    fn rejects_out_of_range() {
        let p = PviraParams {
            max_iters: 0,
            ..PviraParams::default()
        };
        assert!(p.validate().is_err());
        let p = PviraParams {
            step_max_voxels: 0.0,
            ..PviraParams::default()
        };
        assert!(p.validate().is_err());
        let p = PviraParams {
            sigma_fluid: [1.0, -1.0, 1.0],
            ..PviraParams::default()
        };
        assert!(p.validate().is_err());
        let p = PviraParams {
            magnitude_threshold: MagnitudeThreshold::Absolute(-0.1),
            ..PviraParams::default()
        };
        assert!(p.validate().is_err());
    }
}
