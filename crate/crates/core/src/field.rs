//! Flow fields, validity masks and the distributed motion representation.

use crate::error::{Error, Result};
use crate::tensor::{resize_bilinear, upsample_half_grid, Tensor3};

/// Two-channel map of `(u, v)` displacements in pixels per frame; `u` points
/// right and `v` down.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField(Tensor3);

impl FlowField {
    pub fn new(tensor: Tensor3) -> Result<Self> {
        if tensor.channels() != 2 {
            return Err(Error::contract(format!(
                "a flow field has 2 channels, got {}",
                tensor.channels()
            )));
        }
        Ok(FlowField(tensor))
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        FlowField(Tensor3::zeros(height, width, 2))
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> Self {
        let mut t = Tensor3::zeros(height, width, 2);
        for i in 0..height {
            for j in 0..width {
                let (u, v) = f(i, j);
                t[(i, j, 0)] = u;
                t[(i, j, 1)] = v;
            }
        }
        FlowField(t)
    }

    pub fn uniform(height: usize, width: usize, u: f64, v: f64) -> Self {
        Self::from_fn(height, width, |_, _| (u, v))
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn at(&self, i: usize, j: usize) -> (f64, f64) {
        (self.0[(i, j, 0)], self.0[(i, j, 1)])
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor3 {
        self.0
    }

    /// Bilinear resampling of both components; vectors keep their length in
    /// input pixels.
    pub fn resize(&self, height: usize, width: usize) -> FlowField {
        FlowField(resize_bilinear(&self.0, height, width).expect("positive target size"))
    }

    /// Inverse of [`FlowField::subsample_half`]: bilinear upsampling of a
    /// half-resolution field to the full `height x width` grid.
    pub fn upsample_half(&self, height: usize, width: usize) -> Result<FlowField> {
        upsample_half_grid(&self.0, height, width).map(FlowField)
    }

    /// Samples the field at even coordinates, the grid of the network output.
    pub fn subsample_half(&self) -> FlowField {
        let (h, w) = (self.height().div_ceil(2), self.width().div_ceil(2));
        Self::from_fn(h, w, |i, j| self.at(2 * i, 2 * j))
    }

    pub fn add(&self, other: &FlowField) -> FlowField {
        FlowField(self.0.zip_map(&other.0, |a, b| a + b))
    }

    pub fn sub(&self, other: &FlowField) -> FlowField {
        FlowField(self.0.zip_map(&other.0, |a, b| a - b))
    }

    pub fn is_finite(&self) -> bool {
        self.0.is_finite()
    }

    pub fn max_magnitude(&self) -> f64 {
        (0..self.height())
            .flat_map(|i| (0..self.width()).map(move |j| (i, j)))
            .map(|(i, j)| {
                let (u, v) = self.at(i, j);
                u.hypot(v)
            })
            .fold(0.0, f64::max)
    }
}

/// Pixels whose ground-truth flow is known.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidMask {
    height: usize,
    width: usize,
    valid: Vec<bool>,
}

impl ValidMask {
    pub fn all(height: usize, width: usize) -> Self {
        ValidMask {
            height,
            width,
            valid: vec![true; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let valid = (0..height * width).map(|p| f(p / width, p % width)).collect();
        ValidMask {
            height,
            width,
            valid,
        }
    }

    /// Valid everywhere except a band of `margin` pixels along the border.
    pub fn interior(height: usize, width: usize, margin: usize) -> Self {
        Self::from_fn(height, width, |i, j| {
            i >= margin && j >= margin && i + margin < height && j + margin < width
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.valid[i * self.width + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.valid[i * self.width + j] = value;
    }

    pub fn count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn and(&self, other: &ValidMask) -> ValidMask {
        assert_eq!((self.height, self.width), (other.height, other.width));
        ValidMask {
            height: self.height,
            width: self.width,
            valid: self.valid.iter().zip(&other.valid).map(|(a, b)| *a && *b).collect(),
        }
    }

    pub fn subsample_half(&self) -> ValidMask {
        let (h, w) = (self.height.div_ceil(2), self.width.div_ceil(2));
        Self::from_fn(h, w, |i, j| self.get(2 * i, 2 * j))
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> ValidMask {
        Self::from_fn(height, width, |i, j| self.get(top + i, left + j))
    }
}

/// Per-pixel softmax over `T` speeds × `O` orientations, channel `t * O + o`.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionDistribution {
    probs: Tensor3,
    speeds: usize,
    orientations: usize,
}

impl MotionDistribution {
    pub fn new(probs: Tensor3, speeds: usize, orientations: usize) -> Result<Self> {
        if probs.channels() != speeds * orientations {
            return Err(Error::contract(format!(
                "distribution has {} channels, expected {speeds}x{orientations}",
                probs.channels()
            )));
        }
        Ok(MotionDistribution {
            probs,
            speeds,
            orientations,
        })
    }

    pub fn speeds(&self) -> usize {
        self.speeds
    }

    pub fn orientations(&self) -> usize {
        self.orientations
    }

    pub fn height(&self) -> usize {
        self.probs.height()
    }

    pub fn width(&self) -> usize {
        self.probs.width()
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.probs
    }

    pub fn pixel(&self, i: usize, j: usize) -> &[f64] {
        let c = self.probs.channels();
        let o = self.probs.offset(i, j, 0);
        &self.probs.data()[o..o + c]
    }

    /// Probability of speed `t` at orientation `o` at pixel `(i, j)`.
    pub fn at(&self, i: usize, j: usize, t: usize, o: usize) -> f64 {
        self.probs[(i, j, t * self.orientations + o)]
    }
}
