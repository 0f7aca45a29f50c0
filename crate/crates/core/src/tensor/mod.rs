//! Dense rank-3 tensors and the spatial kernels the network is built from.
//!
//! Every feature map is a [`Tensor3`] stored row-major in `(i, j, k)` order:
//! `i` is the row (downwards), `j` the column (rightwards) and `k` the
//! channel. All spatial operations use stride 1 and replicate-border padding,
//! and convolutions follow the correlation convention (no kernel flip).
//!
//! Each differentiable operation has a matching `*_grad` function returning
//! the adjoint (vector-Jacobian product) of the forward map.

mod conv;
mod interp;
mod pool;

pub use conv::{
    conv2d, conv2d_grad, conv3d, conv3d_grad, conv_bank, conv_bank_grad, filter_separable,
    filter_separable_adjoint, BankGrads, Conv3dGrads, KernelBank,
};
pub use interp::{
    exact_sin_cos, resize_bilinear, resize_bilinear_grad, rotate_bilinear, upsample_half_grid,
    warp_bilinear,
    RotationPlan,
};
pub use pool::{maxpool, maxpool_grad, ArgmaxRecord};

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Boundary handling for spatial operations. Only replicate-border exists.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PaddingPolicy {
    #[default]
    ReplicateBorder,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        assert!(
            height > 0 && width > 0 && channels > 0,
            "tensor dimensions must be positive"
        );
        Tensor3 {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::contract("tensor dimensions must be positive"));
        }
        if data.len() != height * width * channels {
            return Err(Error::contract(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Tensor3 {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut t = Self::zeros(height, width, channels);
        for i in 0..height {
            for j in 0..width {
                for k in 0..channels {
                    t[(i, j, k)] = f(i, j, k);
                }
            }
        }
        t
    }

    /// Stacks single-channel planes into one multi-channel tensor.
    pub fn from_planes(planes: &[Tensor3]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::contract("no planes to stack"))?;
        let (h, w) = (first.height, first.width);
        if planes.iter().any(|p| p.height != h || p.width != w) {
            return Err(Error::contract("planes differ in spatial size"));
        }
        let channels: usize = planes.iter().map(|p| p.channels).sum();
        let mut out = Self::zeros(h, w, channels);
        let mut offset = 0;
        for p in planes {
            for px in 0..h * w {
                let src = &p.data[px * p.channels..(px + 1) * p.channels];
                out.data[px * channels + offset..px * channels + offset + p.channels]
                    .copy_from_slice(src);
            }
            offset += p.channels;
        }
        Ok(out)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn same_shape(&self, other: &Tensor3) -> bool {
        self.shape() == other.shape()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.width + j) * self.channels + k
    }

    /// Copy of channel `k` as a single-channel plane.
    pub fn channel(&self, k: usize) -> Tensor3 {
        assert!(k < self.channels, "channel {k} out of range");
        let data = self
            .data
            .iter()
            .skip(k)
            .step_by(self.channels)
            .copied()
            .collect();
        Tensor3 {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    /// Channels `start..start + count` as a new tensor.
    pub fn channel_range(&self, start: usize, count: usize) -> Tensor3 {
        assert!(start + count <= self.channels && count > 0);
        let mut out = Tensor3::zeros(self.height, self.width, count);
        for px in 0..self.height * self.width {
            let src = px * self.channels + start;
            out.data[px * count..(px + 1) * count].copy_from_slice(&self.data[src..src + count]);
        }
        out
    }

    /// Adds `src` into channels `start..start + src.channels()`.
    pub fn add_into_channels(&mut self, start: usize, src: &Tensor3) {
        assert_eq!((self.height, self.width), (src.height, src.width));
        assert!(start + src.channels <= self.channels);
        for px in 0..self.height * self.width {
            let dst = px * self.channels + start;
            for (d, s) in self.data[dst..dst + src.channels]
                .iter_mut()
                .zip(&src.data[px * src.channels..(px + 1) * src.channels])
            {
                *d += s;
            }
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor3 {
        Tensor3 {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor3, f: impl Fn(f64, f64) -> f64) -> Tensor3 {
        assert!(self.same_shape(other), "shape mismatch in zip_map");
        Tensor3 {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor3) {
        assert!(self.same_shape(other), "shape mismatch in add_assign");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn dot(&self, other: &Tensor3) -> f64 {
        assert!(self.same_shape(other), "shape mismatch in dot");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        assert!(self.same_shape(other), "shape mismatch in max_abs_diff");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize, usize)> for Tensor3 {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j, k): (usize, usize, usize)) -> &f64 {
        &self.data[self.offset(i, j, k)]
    }
}

impl IndexMut<(usize, usize, usize)> for Tensor3 {
    #[inline]
    fn index_mut(&mut self, (i, j, k): (usize, usize, usize)) -> &mut f64 {
        let o = self.offset(i, j, k);
        &mut self.data[o]
    }
}

/// Spatial kernel with odd extents and `depth` slices, stored `(a, b, d)`
/// row-major. `a` indexes rows and `b` columns; the tap `(a, b)` is applied
/// at offset `(a - size_y / 2, b - size_x / 2)` from the output pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel3 {
    size_y: usize,
    size_x: usize,
    depth: usize,
    weights: Vec<f64>,
}

impl Kernel3 {
    pub fn zeros(size_y: usize, size_x: usize, depth: usize) -> Result<Self> {
        Self::from_vec(size_y, size_x, depth, vec![0.0; size_y * size_x * depth])
    }

    pub fn from_vec(size_y: usize, size_x: usize, depth: usize, weights: Vec<f64>) -> Result<Self> {
        if size_y % 2 == 0 || size_x % 2 == 0 {
            return Err(Error::contract(format!(
                "kernel extents must be odd, got {size_y}x{size_x}"
            )));
        }
        if depth == 0 {
            return Err(Error::contract("kernel depth must be positive"));
        }
        if weights.len() != size_y * size_x * depth {
            return Err(Error::contract("kernel weight count mismatch"));
        }
        Ok(Kernel3 {
            size_y,
            size_x,
            depth,
            weights,
        })
    }

    pub fn from_fn(
        size_y: usize,
        size_x: usize,
        depth: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut k = Self::zeros(size_y, size_x, depth)?;
        for a in 0..size_y {
            for b in 0..size_x {
                for d in 0..depth {
                    let o = k.offset(a, b, d);
                    k.weights[o] = f(a, b, d);
                }
            }
        }
        Ok(k)
    }

    /// Normalized 2D Gaussian of the given standard deviation on a square
    /// support of `size` taps.
    pub fn gaussian(size: usize, sigma: f64) -> Result<Self> {
        let taps = gaussian_taps(size, sigma);
        Self::from_fn(size, size, 1, |a, b, _| taps[a] * taps[b])
    }

    pub fn size_y(&self) -> usize {
        self.size_y
    }

    pub fn size_x(&self) -> usize {
        self.size_x
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    #[inline]
    pub fn offset(&self, a: usize, b: usize, d: usize) -> usize {
        (a * self.size_x + b) * self.depth + d
    }

    pub fn at(&self, a: usize, b: usize, d: usize) -> f64 {
        self.weights[self.offset(a, b, d)]
    }

    /// Extracts depth slice `d` as a depth-1 kernel.
    pub fn slice(&self, d: usize) -> Kernel3 {
        let weights = self.weights.iter().skip(d).step_by(self.depth).copied().collect();
        Kernel3 {
            size_y: self.size_y,
            size_x: self.size_x,
            depth: 1,
            weights,
        }
    }
}

/// Unit-sum 1D Gaussian taps on an odd support.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    assert!(size % 2 == 1 && sigma > 0.0);
    let r = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|t| {
            let x = t as f64 - r;
            (-0.5 * x * x / (sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

#[inline]
pub(crate) fn clamp_index(v: isize, len: usize) -> usize {
    v.clamp(0, len as isize - 1) as usize
}
