//! Architecture constants and ablation switches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rectification applied to the motion-filter responses before pooling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rectifier {
    #[default]
    Square,
    Relu,
}

/// Switches for the architecture ablations. The default is the full model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Variant {
    pub center_surround: bool,
    pub local_norm: bool,
    pub orientation_norm: bool,
    /// When false, the max-pooling window shrinks to one pixel (plain
    /// stride-2 subsampling).
    pub phase_pooling: bool,
    pub rectifier: Rectifier,
    pub rotation_ties: bool,
    /// Replace the learned motion filters by fixed Gaussian derivatives.
    pub fixed_gaussian_h1: bool,
}

impl Default for Variant {
    fn default() -> Self {
        Variant {
            center_surround: true,
            local_norm: true,
            orientation_norm: true,
            phase_pooling: true,
            rectifier: Rectifier::Square,
            rotation_ties: true,
            fixed_gaussian_h1: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// F: input frames.
    pub frames: usize,
    /// w: spatial kernel size in pixels (odd).
    pub kernel_size: usize,
    /// M: independent kernels per orientation.
    pub kernels_per_orientation: usize,
    /// O: explicitly represented orientations.
    pub orientations: usize,
    /// T: hidden speeds.
    pub speeds: usize,
    pub num_scales: usize,
    /// Linear downsizing factor between consecutive scales.
    pub scale_factor: f64,
    pub recurrent_iters: usize,
    /// ε in the normalization over orientations.
    pub epsilon: f64,
    /// Lower bound on the local standard deviation in contrast normalization.
    pub std_floor: f64,
    /// Speed magnitudes (px/frame) of the classification targets, one per
    /// hidden speed. Targets are these speeds at every orientation.
    pub target_speeds: Vec<f64>,
    pub variant: Variant,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let speeds = 8;
        NetworkConfig {
            frames: 3,
            kernel_size: 11,
            kernels_per_orientation: 4,
            orientations: 12,
            speeds,
            num_scales: 10,
            scale_factor: std::f64::consts::FRAC_1_SQRT_2,
            recurrent_iters: 1,
            epsilon: 0.01,
            std_floor: 0.01,
            target_speeds: default_speeds(speeds, 4.0),
            variant: Variant::default(),
        }
    }
}

/// `count` speeds evenly spread over `(0, max]` at bin centers.
pub fn default_speeds(count: usize, max: f64) -> Vec<f64> {
    (0..count)
        .map(|t| max * (t as f64 + 0.5) / count as f64)
        .collect()
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.kernel_size % 2 == 0 || self.kernel_size == 0 {
            return fail(format!("kernel size must be odd, got {}", self.kernel_size));
        }
        if self.frames < 2 {
            return fail(format!("at least two frames are needed, got {}", self.frames));
        }
        if self.orientations == 0 || self.orientations % 2 != 0 {
            return fail(format!(
                "orientation count must be even and positive, got {}",
                self.orientations
            ));
        }
        if self.kernels_per_orientation == 0 || self.speeds == 0 {
            return fail("kernel and speed counts must be positive".into());
        }
        if self.num_scales == 0 || self.recurrent_iters == 0 {
            return fail("scale and iteration counts must be positive".into());
        }
        if !(self.scale_factor > 0.0 && self.scale_factor < 1.0) {
            return fail(format!("scale factor must lie in (0, 1), got {}", self.scale_factor));
        }
        if !(self.epsilon > 0.0) || !(self.std_floor > 0.0) {
            return fail("normalization floors must be positive".into());
        }
        if self.target_speeds.len() != self.speeds {
            return fail(format!(
                "{} target speeds given for {} hidden speeds",
                self.target_speeds.len(),
                self.speeds
            ));
        }
        if self.target_speeds.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return fail("target speeds must be finite and non-negative".into());
        }
        Ok(())
    }

    /// MO: channels of every per-scale feature map.
    pub fn feature_channels(&self) -> usize {
        self.kernels_per_orientation * self.orientations
    }

    /// TO: size of the distributed motion representation.
    pub fn classes(&self) -> usize {
        self.speeds * self.orientations
    }

    pub fn orientation_angle(&self, o: usize) -> f64 {
        std::f64::consts::TAU * o as f64 / self.orientations as f64
    }

    /// Flow vector of classification target `k = t * O + o`:
    /// `speed_t (cos θ_o, sin θ_o)`.
    pub fn target(&self, k: usize) -> (f64, f64) {
        let (t, o) = (k / self.orientations, k % self.orientations);
        let theta = self.orientation_angle(o);
        let s = self.target_speeds[t];
        (s * theta.cos(), s * theta.sin())
    }

    pub fn targets(&self) -> Vec<(f64, f64)> {
        (0..self.classes()).map(|k| self.target(k)).collect()
    }

    /// Window of the phase-invariance max-pooling, `ceil(w / 4)`.
    pub fn pool_window(&self) -> usize {
        if self.variant.phase_pooling {
            self.kernel_size.div_ceil(4)
        } else {
            1
        }
    }

    /// Zero-based index of the reference frame; flow is predicted from it
    /// to the next one.
    pub fn reference_frame(&self) -> usize {
        self.frames.div_ceil(2) - 1
    }

    /// Standard deviation of the center-surround Gaussian, `w / 3`.
    pub fn surround_sigma(&self) -> f64 {
        self.kernel_size as f64 / 3.0
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: NetworkConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
