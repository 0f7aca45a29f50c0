use image::{Rgb, RgbImage};

use crate::field::FlowField;

// Segment lengths of the benchmark color wheel:
// red-yellow, yellow-green, green-cyan, cyan-blue, blue-magenta, magenta-red.
const SEGMENTS: [usize; 6] = [15, 6, 4, 11, 13, 6];

fn color_wheel() -> Vec<[f64; 3]> {
    let mut wheel = Vec::with_capacity(SEGMENTS.iter().sum());
    let ramps: [([usize; 3], [i8; 3]); 6] = [
        ([255, 0, 0], [0, 1, 0]),
        ([255, 255, 0], [-1, 0, 0]),
        ([0, 255, 0], [0, 0, 1]),
        ([0, 255, 255], [0, -1, 0]),
        ([0, 0, 255], [1, 0, 0]),
        ([255, 0, 255], [0, 0, -1]),
    ];
    for (&n, (base, dir)) in SEGMENTS.iter().zip(ramps) {
        for i in 0..n {
            let step = (255 * i / n) as f64;
            let mut c = [0.0; 3];
            for k in 0..3 {
                c[k] = base[k] as f64 + dir[k] as f64 * step;
            }
            wheel.push(c);
        }
    }
    wheel
}

/// The `q`-quantile (`0..=1`) of the flow magnitudes.
pub fn percentile_magnitude(flow: &FlowField, q: f64) -> f64 {
    let mut mags: Vec<f64> = (0..flow.height())
        .flat_map(|i| (0..flow.width()).map(move |j| (i, j)))
        .map(|(i, j)| {
            let (u, v) = flow.at(i, j);
            u.hypot(v)
        })
        .collect();
    if mags.is_empty() {
        return 0.0;
    }
    mags.sort_by(f64::total_cmp);
    let idx = ((mags.len() - 1) as f64 * q.clamp(0.0, 1.0)).round() as usize;
    mags[idx]
}

/// Renders flow with the standard benchmark color wheel: hue encodes
/// direction, saturation the magnitude relative to `max_magnitude`
/// (clamped at 1). Without a maximum, the 99th percentile of the field's
/// magnitudes is used.
pub fn flow_to_color(flow: &FlowField, max_magnitude: Option<f64>) -> RgbImage {
    let wheel = color_wheel();
    let ncols = wheel.len();
    let max = max_magnitude
        .unwrap_or_else(|| percentile_magnitude(flow, 0.99))
        .max(f64::MIN_POSITIVE);
    let mut img = RgbImage::new(flow.width() as u32, flow.height() as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let (u, v) = flow.at(y as usize, x as usize);
        let rad = (u.hypot(v) / max).min(1.0);
        let a = (-v).atan2(-u) / std::f64::consts::PI;
        let fk = (a + 1.0) / 2.0 * (ncols - 1) as f64;
        let k0 = (fk.floor() as usize).min(ncols - 1);
        let k1 = (k0 + 1) % ncols;
        let f = fk - k0 as f64;
        let mut rgb = [0u8; 3];
        for (c, out) in rgb.iter_mut().enumerate() {
            let col = ((1.0 - f) * wheel[k0][c] + f * wheel[k1][c]) / 255.0;
            let col = 1.0 - rad * (1.0 - col);
            *out = (255.0 * col).floor() as u8;
        }
        *px = Rgb(rgb);
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wheel_has_55_entries_starting_red() {
        let w = color_wheel();
        assert_eq!(w.len(), 55);
        assert_eq!(w[0], [255.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_flow_is_white() {
        let img = flow_to_color(&FlowField::zeros(2, 3), Some(1.0));
        assert!(img.pixels().all(|p| p.0 == [255, 255, 255]));
    }

    #[test]
    fn saturation_clamps_beyond_max() {
        let a = flow_to_color(&FlowField::uniform(1, 1, 2.0, 0.0), Some(1.0));
        let b = flow_to_color(&FlowField::uniform(1, 1, 5.0, 0.0), Some(1.0));
        assert_eq!(a, b);
    }
}
