use std::f64::consts::{FRAC_PI_2, TAU};

use super::{Kernel3, Tensor3};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct AxisSample {
    lo: usize,
    hi: usize,
    frac: f64,
}

impl AxisSample {
    fn at(pos: f64, len: usize) -> Self {
        let pos = pos.clamp(0.0, (len - 1) as f64);
        let lo = (pos.floor() as usize).min(len - 1);
        AxisSample {
            lo,
            hi: (lo + 1).min(len - 1),
            frac: pos - lo as f64,
        }
    }
}

// Corner-aligned grid: output index 0 maps to source 0 and the last output
// index to the last source index. A single output sample sits at the center.
fn axis_table(n_in: usize, n_out: usize) -> Vec<AxisSample> {
    (0..n_out)
        .map(|t| {
            let pos = if n_out == 1 {
                (n_in - 1) as f64 / 2.0
            } else {
                (t * (n_in - 1)) as f64 / (n_out - 1) as f64
            };
            AxisSample::at(pos, n_in)
        })
        .collect()
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Bilinear resize of every channel on a corner-aligned sampling grid.
pub fn resize_bilinear(input: &Tensor3, new_height: usize, new_width: usize) -> Result<Tensor3> {
    if new_height == 0 || new_width == 0 {
        return Err(Error::contract("resize target must be at least 1x1"));
    }
    let (h, w, c) = input.shape();
    if (h, w) == (new_height, new_width) {
        return Ok(input.clone());
    }
    let rows = axis_table(h, new_height);
    let cols = axis_table(w, new_width);
    let src = input.data();
    let mut out = Tensor3::zeros(new_height, new_width, c);
    let dst = out.data_mut();
    for (i, ry) in rows.iter().enumerate() {
        for (j, rx) in cols.iter().enumerate() {
            let p00 = (ry.lo * w + rx.lo) * c;
            let p01 = (ry.lo * w + rx.hi) * c;
            let p10 = (ry.hi * w + rx.lo) * c;
            let p11 = (ry.hi * w + rx.hi) * c;
            let d = (i * new_width + j) * c;
            for k in 0..c {
                let top = lerp(src[p00 + k], src[p01 + k], rx.frac);
                let bottom = lerp(src[p10 + k], src[p11 + k], rx.frac);
                dst[d + k] = lerp(top, bottom, ry.frac);
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`resize_bilinear`] from `grad_out`'s size back to `h x w`.
pub fn resize_bilinear_grad(grad_out: &Tensor3, h: usize, w: usize) -> Result<Tensor3> {
    if h == 0 || w == 0 {
        return Err(Error::contract("resize source must be at least 1x1"));
    }
    let (nh, nw, c) = grad_out.shape();
    if (h, w) == (nh, nw) {
        return Ok(grad_out.clone());
    }
    let rows = axis_table(h, nh);
    let cols = axis_table(w, nw);
    let g = grad_out.data();
    let mut out = Tensor3::zeros(h, w, c);
    let dst = out.data_mut();
    for (i, ry) in rows.iter().enumerate() {
        for (j, rx) in cols.iter().enumerate() {
            let taps = [
                ((ry.lo * w + rx.lo) * c, (1.0 - ry.frac) * (1.0 - rx.frac)),
                ((ry.lo * w + rx.hi) * c, (1.0 - ry.frac) * rx.frac),
                ((ry.hi * w + rx.lo) * c, ry.frac * (1.0 - rx.frac)),
                ((ry.hi * w + rx.hi) * c, ry.frac * rx.frac),
            ];
            let s = (i * nw + j) * c;
            for (p, wt) in taps {
                if wt == 0.0 {
                    continue;
                }
                for k in 0..c {
                    dst[p + k] += wt * g[s + k];
                }
            }
        }
    }
    Ok(out)
}

/// `(sin, cos)` of `angle`, exact at multiples of π/2. The angle is reduced
/// to a quadrant first so that angles a quarter turn apart share one
/// remainder and differ only by sign swaps.
pub fn exact_sin_cos(angle: f64) -> (f64, f64) {
    let q = (angle / FRAC_PI_2).round();
    let mut r = angle - q * FRAC_PI_2;
    if r.abs() < 1e-12 {
        r = 0.0;
    }
    quadrant_sin_cos(q as i64, r)
}

fn quadrant_sin_cos(q: i64, r: f64) -> (f64, f64) {
    let (s, c) = if r == 0.0 { (0.0, 1.0) } else { r.sin_cos() };
    match q.rem_euclid(4) {
        0 => (s, c),
        1 => (c, -s),
        2 => (-s, -c),
        _ => (-c, s),
    }
}

/// Sparse linear map rotating a square 2D kernel slice about its center.
///
/// Output tap `p` reads the source at `R(-angle) p` by bilinear
/// interpolation; interpolation taps that fall outside the support read zero.
/// With rows pointing down, a positive angle turns rightward structure
/// towards the bottom, matching flow vectors `(u, v) = s (cos θ, sin θ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RotationPlan {
    size: usize,
    taps: Vec<(usize, usize, f64)>,
}

impl RotationPlan {
    pub fn new(size: usize, angle: f64) -> Self {
        let (s, c) = exact_sin_cos(angle);
        Self::from_sin_cos(size, s, c)
    }

    /// Rotation by `num / den` of a full turn. Quadrant reduction happens in
    /// integer arithmetic, so plans a quarter turn apart are exact index
    /// permutations of each other.
    pub fn from_turns(size: usize, num: i64, den: i64) -> Self {
        assert!(den > 0);
        let num = num.rem_euclid(den);
        let q = (4 * num) / den;
        let rem = 4 * num - q * den;
        let r = TAU * rem as f64 / (4 * den) as f64;
        let (s, c) = quadrant_sin_cos(q, r);
        Self::from_sin_cos(size, s, c)
    }

    fn from_sin_cos(size: usize, s: f64, c: f64) -> Self {
        assert!(size > 0);
        let center = (size - 1) as f64 / 2.0;
        let mut taps = Vec::with_capacity(size * size * 4);
        for a in 0..size {
            for b in 0..size {
                let (x, y) = (b as f64 - center, a as f64 - center);
                let sx = c * x + s * y + center;
                let sy = -s * x + c * y + center;
                let (x0, y0) = (sx.floor(), sy.floor());
                let (fx, fy) = (sx - x0, sy - y0);
                let dst = a * size + b;
                for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                    for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                        let wt = wy * wx;
                        let (yy, xx) = (y0 + dy, x0 + dx);
                        if wt == 0.0 || yy < 0.0 || xx < 0.0 {
                            continue;
                        }
                        let (yy, xx) = (yy as usize, xx as usize);
                        if yy < size && xx < size {
                            taps.push((dst, yy * size + xx, wt));
                        }
                    }
                }
            }
        }
        RotationPlan { size, taps }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Rotates one `size x size` slice (row-major) into `out`, overwriting it.
    pub fn apply(&self, src: &[f64], out: &mut [f64]) {
        debug_assert_eq!(src.len(), self.size * self.size);
        out.iter_mut().for_each(|v| *v = 0.0);
        for &(d, s, w) in &self.taps {
            out[d] += w * src[s];
        }
    }

    /// Adds the adjoint of the rotation applied to `grad` into `acc`.
    pub fn apply_adjoint_acc(&self, grad: &[f64], acc: &mut [f64]) {
        for &(d, s, w) in &self.taps {
            acc[s] += w * grad[d];
        }
    }
}

/// Rotates every depth slice of a square kernel about its spatial center.
pub fn rotate_bilinear(kernel: &Kernel3, angle: f64) -> Result<Kernel3> {
    if kernel.size_y() != kernel.size_x() {
        return Err(Error::contract("rotation needs a spatially square kernel"));
    }
    let size = kernel.size_y();
    let plan = RotationPlan::new(size, angle);
    let mut out = Kernel3::zeros(size, size, kernel.depth())?;
    let mut src = vec![0.0; size * size];
    let mut dst = vec![0.0; size * size];
    for d in 0..kernel.depth() {
        for (p, v) in src.iter_mut().enumerate() {
            *v = kernel.at(p / size, p % size, d);
        }
        plan.apply(&src, &mut dst);
        for (p, &v) in dst.iter().enumerate() {
            let o = out.offset(p / size, p % size, d);
            out.weights_mut()[o] = v;
        }
    }
    Ok(out)
}

/// Samples every channel of `frame` at `(i + scale * v, j + scale * u)`,
/// clamping sample positions to the image (replicate border).
pub fn warp_bilinear(frame: &Tensor3, flow: &Tensor3, scale: f64) -> Result<Tensor3> {
    let (h, w, c) = frame.shape();
    if (flow.height(), flow.width()) != (h, w) || flow.channels() != 2 {
        return Err(Error::contract(
            "warp needs a two-channel flow of the frame's spatial size",
        ));
    }
    let src = frame.data();
    let f = flow.data();
    let mut out = Tensor3::zeros(h, w, c);
    let dst = out.data_mut();
    for i in 0..h {
        for j in 0..w {
            let p = (i * w + j) * 2;
            let sy = AxisSample::at(i as f64 + scale * f[p + 1], h);
            let sx = AxisSample::at(j as f64 + scale * f[p], w);
            let p00 = (sy.lo * w + sx.lo) * c;
            let p01 = (sy.lo * w + sx.hi) * c;
            let p10 = (sy.hi * w + sx.lo) * c;
            let p11 = (sy.hi * w + sx.hi) * c;
            let d = (i * w + j) * c;
            for k in 0..c {
                let top = lerp(src[p00 + k], src[p01 + k], sx.frac);
                let bottom = lerp(src[p10 + k], src[p11 + k], sx.frac);
                dst[d + k] = lerp(top, bottom, sy.frac);
            }
        }
    }
    Ok(out)
}

/// Upsamples a map living on the even pixels of an `h x w` image (as
/// produced by stride-2 pooling) back to every pixel: output `(i, j)` reads
/// the input at `(i / 2, j / 2)` bilinearly, clamped at the far border.
pub fn upsample_half_grid(input: &Tensor3, h: usize, w: usize) -> Result<Tensor3> {
    let (hi, wi, c) = input.shape();
    if h == 0 || w == 0 || hi != h.div_ceil(2) || wi != w.div_ceil(2) {
        return Err(Error::contract(format!(
            "a {hi}x{wi} map is not the half grid of {h}x{w}"
        )));
    }
    let ys: Vec<_> = (0..h).map(|i| AxisSample::at(i as f64 / 2.0, hi)).collect();
    let xs: Vec<_> = (0..w).map(|j| AxisSample::at(j as f64 / 2.0, wi)).collect();
    let src = input.data();
    let mut out = Tensor3::zeros(h, w, c);
    let dst = out.data_mut();
    for (i, sy) in ys.iter().enumerate() {
        for (j, sx) in xs.iter().enumerate() {
            let d = (i * w + j) * c;
            for k in 0..c {
                let at = |y: usize, x: usize| src[(y * wi + x) * c + k];
                let top = lerp(at(sy.lo, sx.lo), at(sy.lo, sx.hi), sx.frac);
                let bottom = lerp(at(sy.hi, sx.lo), at(sy.hi, sx.hi), sx.frac);
                dst[d + k] = lerp(top, bottom, sy.frac);
            }
        }
    }
    Ok(out)
}
