use image::{GrayImage, Luma};

use crate::error::{Error, Result};
use crate::field::MotionDistribution;
use crate::tensor::Tensor3;

/// Tag of the binary distribution dump: `MDST`, then speeds, orientations,
/// height and width as little-endian `u32`, then the `f64` probabilities in
/// row-major `(i, j, t * O + o)` order.
pub const DIST_MAGIC: &[u8; 4] = b"MDST";

pub fn write_distribution(dist: &MotionDistribution) -> Vec<u8> {
    let t = dist.tensor();
    let mut out = Vec::with_capacity(20 + t.data().len() * 8);
    out.extend_from_slice(DIST_MAGIC);
    for n in [dist.speeds(), dist.orientations(), dist.height(), dist.width()] {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_distribution(bytes: &[u8]) -> Result<MotionDistribution> {
    let bad = |reason: String| Error::format("distribution dump", reason);
    if bytes.len() < 20 || &bytes[..4] != DIST_MAGIC {
        return Err(bad("missing MDST header".into()));
    }
    let field = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize;
    let (t, o, h, w) = (field(0), field(1), field(2), field(3));
    let n = t * o * h * w;
    if bytes.len() - 20 != n * 8 {
        return Err(bad(format!("payload does not hold {t}x{o}x{h}x{w} values")));
    }
    let data = bytes[20..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    MotionDistribution::new(Tensor3::from_vec(h, w, t * o, data)?, t, o)
}

/// Renders the distribution at pixel `(i, j)` as `T` concentric rings
/// (speeds, innermost first) of `O` angular sectors (orientations, each
/// centered on its angle, measured with image `y` pointing down).
///
/// A bin's gray level is `255 · min(1, p · TO / 2)`, so a uniform
/// distribution renders mid-gray and any bin holding twice its uniform share
/// saturates. Pixels outside the disc are black.
pub fn distribution_to_radial_plot(
    dist: &MotionDistribution,
    pixel: (usize, usize),
    size: u32,
) -> Result<GrayImage> {
    let (i, j) = pixel;
    if i >= dist.height() || j >= dist.width() {
        return Err(Error::contract(format!(
            "pixel ({i}, {j}) outside the {}x{} distribution",
            dist.height(),
            dist.width()
        )));
    }
    if size == 0 {
        return Err(Error::contract("plot size must be positive"));
    }
    let (t_count, o_count) = (dist.speeds(), dist.orientations());
    let classes = (t_count * o_count) as f64;
    let probs = dist.pixel(i, j);
    let c = (size as f64 - 1.0) / 2.0;
    let radius = size as f64 / 2.0;
    let sector = std::f64::consts::TAU / o_count as f64;
    let mut img = GrayImage::new(size, size);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let (dx, dy) = (x as f64 - c, y as f64 - c);
        let r = dx.hypot(dy);
        if r >= radius {
            continue;
        }
        let ring = ((r / radius * t_count as f64) as usize).min(t_count - 1);
        let angle = dy.atan2(dx).rem_euclid(std::f64::consts::TAU);
        let o = ((angle / sector + 0.5).floor() as usize) % o_count;
        let p = probs[ring * o_count + o];
        *px = Luma([(255.0 * (p * classes / 2.0).min(1.0)).round() as u8]);
    }
    Ok(img)
}
