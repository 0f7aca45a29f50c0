use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainingSample;
use crate::error::{Error, Result};
use crate::field::{FlowField, ValidMask};
use crate::tensor::{filter_separable, gaussian_taps, Tensor3};

#[derive(Clone, Debug, PartialEq)]
pub enum Texture {
    /// Uniform noise smoothed by a Gaussian of standard deviation `sigma`
    /// pixels, stretched to `[0.1, 0.9]`.
    Noise { sigma: f64 },
    /// `0.5 + 0.4 cos(2π x·d / wavelength + phase)` along direction angle
    /// `orientation`.
    Sinusoid {
        wavelength: f64,
        phase: f64,
        orientation: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionLayer {
    pub texture: Texture,
    /// `(u, v)` in pixels per frame.
    pub motion: (f64, f64),
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub layers: Vec<MotionLayer>,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Frame at which every layer sits at its origin; flow is measured from
    /// it to the next frame.
    pub reference: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// One noise layer translating by `motion`, reference frame centered
    /// like the network's.
    pub fn translating(motion: (f64, f64), frames: usize, height: usize, width: usize, seed: u64) -> Self {
        SyntheticSpec {
            layers: vec![MotionLayer {
                texture: Texture::Noise { sigma: 2.0 },
                motion,
                alpha: 1.0,
            }],
            frames,
            height,
            width,
            reference: frames.div_ceil(2) - 1,
            seed,
        }
    }

    /// Two equally blended noise layers moving with `a` and `b`.
    pub fn transparent(a: (f64, f64), b: (f64, f64), frames: usize, height: usize, width: usize, seed: u64) -> Self {
        let layer = |motion| MotionLayer {
            texture: Texture::Noise { sigma: 2.0 },
            motion,
            alpha: 0.5,
        };
        SyntheticSpec {
            layers: vec![layer(a), layer(b)],
            ..Self::translating(a, frames, height, width, seed)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() || self.frames == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::contract("synthetic sequence needs layers, frames and pixels"));
        }
        if self.reference >= self.frames {
            return Err(Error::contract("reference frame out of range"));
        }
        let total: f64 = self.layers.iter().map(|l| l.alpha).sum();
        if (total - 1.0).abs() > 1e-9 || self.layers.iter().any(|l| l.alpha < 0.0) {
            return Err(Error::contract("layer alphas must be nonnegative and sum to one"));
        }
        if self
            .layers
            .iter()
            .any(|l| !(l.motion.0.is_finite() && l.motion.1.is_finite()))
        {
            return Err(Error::contract("layer motion must be finite"));
        }
        Ok(())
    }
}

/// A generated sequence: the training sample (ground truth from the
/// layer with the largest alpha) plus every layer's motion.
#[derive(Clone, Debug)]
pub struct Synthetic {
    pub sample: TrainingSample,
    pub layer_motions: Vec<(f64, f64)>,
}

struct Canvas {
    data: Vec<f64>,
    height: usize,
    width: usize,
    margin: usize,
}

impl Canvas {
    fn noise(rng: &mut ChaCha8Rng, height: usize, width: usize, margin: usize, sigma: f64) -> Self {
        let (h, w) = (height + 2 * margin, width + 2 * margin);
        let raw = Tensor3::from_fn(h, w, 1, |_, _, _| rng.gen::<f64>());
        let radius = (3.0 * sigma).ceil() as usize;
        let taps = gaussian_taps(2 * radius + 1, sigma);
        let smooth = filter_separable(&raw, &taps, &taps).into_data();
        let (lo, hi) = smooth
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let span = (hi - lo).max(1e-12);
        Canvas {
            data: smooth.iter().map(|v| 0.1 + 0.8 * (v - lo) / span).collect(),
            height: h,
            width: w,
            margin,
        }
    }

    /// Bilinear sample at image coordinates `(y, x)`.
    fn sample(&self, y: f64, x: f64) -> f64 {
        let y = (y + self.margin as f64).clamp(0.0, (self.height - 1) as f64);
        let x = (x + self.margin as f64).clamp(0.0, (self.width - 1) as f64);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.height - 1), (x0 + 1).min(self.width - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let at = |r: usize, c: usize| self.data[r * self.width + c];
        let top = at(y0, x0) + fx * (at(y0, x1) - at(y0, x0));
        let bottom = at(y1, x0) + fx * (at(y1, x1) - at(y1, x0));
        top + fy * (bottom - top)
    }
}

/// Renders every layer translated by `(k - reference) · motion` in frame
/// `k` and composites them with their alphas.
pub fn synth_sequence(spec: &SyntheticSpec) -> Result<Synthetic> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let span = spec.frames.max(spec.reference + 1) as f64;
    let mut frames = vec![Tensor3::zeros(spec.height, spec.width, 1); spec.frames];
    for layer in &spec.layers {
        let reach = layer.motion.0.abs().max(layer.motion.1.abs()) * span;
        let (u, v) = layer.motion;
        match &layer.texture {
            Texture::Noise { sigma } => {
                let canvas = Canvas::noise(&mut rng, spec.height, spec.width, reach.ceil() as usize + 2, *sigma);
                for (k, frame) in frames.iter_mut().enumerate() {
                    let d = k as f64 - spec.reference as f64;
                    for i in 0..spec.height {
                        for j in 0..spec.width {
                            frame[(i, j, 0)] +=
                                layer.alpha * canvas.sample(i as f64 - d * v, j as f64 - d * u);
                        }
                    }
                }
            }
            Texture::Sinusoid {
                wavelength,
                phase,
                orientation,
            } => {
                let (s, c) = orientation.sin_cos();
                let k_wave = std::f64::consts::TAU / wavelength;
                for (k, frame) in frames.iter_mut().enumerate() {
                    let d = k as f64 - spec.reference as f64;
                    for i in 0..spec.height {
                        for j in 0..spec.width {
                            let (x, y) = (j as f64 - d * u, i as f64 - d * v);
                            let value = 0.5 + 0.4 * (k_wave * (x * c + y * s) + phase).cos();
                            frame[(i, j, 0)] += layer.alpha * value;
                        }
                    }
                }
            }
        }
    }
    let dominant = spec
        .layers
        .iter()
        .enumerate()
        .fold(0, |best, (k, l)| if l.alpha > spec.layers[best].alpha { k } else { best });
    let (u, v) = spec.layers[dominant].motion;
    Ok(Synthetic {
        sample: TrainingSample {
            name: format!("synthetic-{}", spec.seed),
            frames,
            flow: FlowField::uniform(spec.height, spec.width, u, v),
            mask: ValidMask::all(spec.height, spec.width),
        },
        layer_motions: spec.layers.iter().map(|l| l.motion).collect(),
    })
}

/// `count` translating-noise sequences with motion directions uniform on
/// the circle and speeds uniform on `[0, max_speed]`.
pub fn translating_dataset(
    count: usize,
    frames: usize,
    size: (usize, usize),
    max_speed: f64,
    seed: u64,
) -> Result<Vec<TrainingSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|n| {
            let speed = rng.gen_range(0.0..=max_speed);
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let spec = SyntheticSpec::translating(
                (speed * angle.cos(), speed * angle.sin()),
                frames,
                size.0,
                size.1,
                rng.gen(),
            );
            let mut s = synth_sequence(&spec)?.sample;
            s.name = format!("translate-{n}");
            Ok(s)
        })
        .collect()
}

/// Parameters of a [`translating_dataset`] whose masks exclude a border of
/// `margin` pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslatingSet {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub max_speed: f64,
    pub margin: usize,
    pub seed: u64,
}

impl Default for TranslatingSet {
    fn default() -> Self {
        TranslatingSet {
            count: 64,
            height: 40,
            width: 40,
            max_speed: 3.0,
            margin: 6,
            seed: 1,
        }
    }
}

impl TranslatingSet {
    pub fn generate(&self, frames: usize) -> Result<Vec<TrainingSample>> {
        let mask = ValidMask::interior(self.height, self.width, self.margin);
        if mask.count() == 0 {
            return Err(Error::contract("the margin leaves no valid pixels"));
        }
        let mut out = translating_dataset(self.count, frames, (self.height, self.width), self.max_speed, self.seed)?;
        for s in &mut out {
            s.mask = mask.clone();
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_layer_gives_identical_frames() {
        let s = synth_sequence(&SyntheticSpec::translating((0.0, 0.0), 3, 12, 10, 4)).unwrap();
        assert_eq!(s.sample.frames[0], s.sample.frames[2]);
        assert_eq!(s.sample.flow.max_magnitude(), 0.0);
    }

    #[test]
    fn integer_motion_is_an_exact_shift() {
        let s = synth_sequence(&SyntheticSpec::translating((1.0, 0.0), 3, 12, 14, 9)).unwrap();
        let f = &s.sample.frames;
        for i in 0..12 {
            for j in 1..14 {
                assert_eq!(f[2][(i, j, 0)], f[1][(i, j - 1, 0)]);
            }
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = SyntheticSpec::transparent((2.0, 0.0), (-2.0, 0.0), 3, 9, 9, 11);
        let a = synth_sequence(&spec).unwrap();
        let b = synth_sequence(&spec).unwrap();
        assert_eq!(a.sample.frames, b.sample.frames);
        assert_eq!(a.layer_motions, vec![(2.0, 0.0), (-2.0, 0.0)]);
    }

    #[test]
    fn translating_set_masks_the_border() {
        let set = TranslatingSet {
            count: 2,
            height: 12,
            width: 10,
            margin: 2,
            ..Default::default()
        };
        let v = set.generate(2).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[1].mask.count(), 8 * 6);
        assert!(TranslatingSet { margin: 5, ..set }.generate(2).is_err());
    }

    #[test]
    fn alphas_must_sum_to_one() {
        let mut spec = SyntheticSpec::translating((0.0, 0.0), 2, 4, 4, 0);
        spec.layers[0].alpha = 0.7;
        assert!(synth_sequence(&spec).is_err());
    }
}
