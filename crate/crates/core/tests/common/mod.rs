//! Nested-loop reference implementations, written directly from the
//! definitions and sharing no code with the library.

#![allow(dead_code)]

use motionnet::tensor::KernelBank;
use motionnet::{FlowField, Kernel3, Tensor3, ValidMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Tensor3 {
    Tensor3::from_fn(h, w, c, |_, _, _| rng.gen_range(-1.0..1.0))
}

pub fn random_kernel(rng: &mut ChaCha8Rng, sy: usize, sx: usize, d: usize) -> Kernel3 {
    Kernel3::from_fn(sy, sx, d, |_, _, _| rng.gen_range(-1.0..1.0)).unwrap()
}

pub fn random_flow(rng: &mut ChaCha8Rng, h: usize, w: usize, max: f64) -> FlowField {
    FlowField::from_fn(h, w, |_, _| (rng.gen_range(-max..max), rng.gen_range(-max..max)))
}

fn clamp(v: isize, n: usize) -> usize {
    if v < 0 {
        0
    } else if v as usize >= n {
        n - 1
    } else {
        v as usize
    }
}

/// `out(i, j) = sum_{a, b, c} x(i + a - ry, j + b - rx, c) k(a, b, c) + bias`
/// with out-of-range rows and columns replaced by the nearest border one.
pub fn conv3d(x: &Tensor3, k: &Kernel3, bias: f64) -> Tensor3 {
    let (h, w, _) = x.shape();
    let (ry, rx) = ((k.size_y() / 2) as isize, (k.size_x() / 2) as isize);
    let mut out = Tensor3::zeros(h, w, 1);
    for i in 0..h {
        for j in 0..w {
            let mut s = bias;
            for a in 0..k.size_y() {
                for b in 0..k.size_x() {
                    let y = clamp(i as isize + a as isize - ry, h);
                    let xx = clamp(j as isize + b as isize - rx, w);
                    for c in 0..k.depth() {
                        s += x[(y, xx, c)] * k.at(a, b, c);
                    }
                }
            }
            out[(i, j, 0)] = s;
        }
    }
    out
}

pub fn conv_bank(x: &Tensor3, kernels: &[Kernel3], biases: &[f64]) -> Tensor3 {
    let (h, w, _) = x.shape();
    let mut out = Tensor3::zeros(h, w, kernels.len());
    for (o, k) in kernels.iter().enumerate() {
        let plane = conv3d(x, k, biases[o]);
        for i in 0..h {
            for j in 0..w {
                out[(i, j, o)] = plane[(i, j, 0)];
            }
        }
    }
    out
}

/// Max over the `window x window` block whose first tap sits
/// `(window - 1) / 2` before `(2i, 2j)`, replicate border.
pub fn maxpool(x: &Tensor3, window: usize) -> Tensor3 {
    let (h, w, c) = x.shape();
    let (ho, wo) = ((h + 1) / 2, (w + 1) / 2);
    let back = ((window - 1) / 2) as isize;
    let mut out = Tensor3::zeros(ho, wo, c);
    for i in 0..ho {
        for j in 0..wo {
            for k in 0..c {
                let mut m = f64::NEG_INFINITY;
                for a in 0..window as isize {
                    for b in 0..window as isize {
                        let y = clamp(2 * i as isize - back + a, h);
                        let xx = clamp(2 * j as isize - back + b, w);
                        m = m.max(x[(y, xx, k)]);
                    }
                }
                out[(i, j, k)] = m;
            }
        }
    }
    out
}

fn bilinear(x: &Tensor3, y: f64, xx: f64, k: usize) -> f64 {
    let (h, w, _) = x.shape();
    let y = y.max(0.0).min((h - 1) as f64);
    let xx = xx.max(0.0).min((w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, xx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, xx - x0 as f64);
    (1.0 - fy) * ((1.0 - fx) * x[(y0, x0, k)] + fx * x[(y0, x1, k)])
        + fy * ((1.0 - fx) * x[(y1, x0, k)] + fx * x[(y1, x1, k)])
}

/// Corner-aligned bilinear resize: output `t` samples source position
/// `t (n_in - 1) / (n_out - 1)`.
pub fn resize(x: &Tensor3, nh: usize, nw: usize) -> Tensor3 {
    let (h, w, c) = x.shape();
    let pos = |t: usize, n_in: usize, n_out: usize| {
        if n_out == 1 {
            (n_in - 1) as f64 / 2.0
        } else {
            t as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
        }
    };
    Tensor3::from_fn(nh, nw, c, |i, j, k| bilinear(x, pos(i, h, nh), pos(j, w, nw), k))
}

/// Samples `x` at `(i + s v, j + s u)`.
pub fn warp(x: &Tensor3, flow: &Tensor3, s: f64) -> Tensor3 {
    let (h, w, c) = x.shape();
    Tensor3::from_fn(h, w, c, |i, j, k| {
        bilinear(x, i as f64 + s * flow[(i, j, 1)], j as f64 + s * flow[(i, j, 0)], k)
    })
}

/// Rotates every slice about its center: output tap `p` (relative to the
/// center, `x` right, `y` down) reads the source at `R(-angle) p`, zero
/// outside the support.
pub fn rotate(k: &Kernel3, angle: f64) -> Kernel3 {
    let n = k.size_y();
    let c = (n - 1) as f64 / 2.0;
    let (s, co) = angle.sin_cos();
    let read = |y: isize, x: isize, d: usize| {
        if y < 0 || x < 0 || y >= n as isize || x >= n as isize {
            0.0
        } else {
            k.at(y as usize, x as usize, d)
        }
    };
    Kernel3::from_fn(n, n, k.depth(), |a, b, d| {
        let (x, y) = (b as f64 - c, a as f64 - c);
        let sx = co * x + s * y + c;
        let sy = -s * x + co * y + c;
        let (x0, y0) = (sx.floor(), sy.floor());
        let (fx, fy) = (sx - x0, sy - y0);
        let (x0, y0) = (x0 as isize, y0 as isize);
        (1.0 - fy) * ((1.0 - fx) * read(y0, x0, d) + fx * read(y0, x0 + 1, d))
            + fy * ((1.0 - fx) * read(y0 + 1, x0, d) + fx * read(y0 + 1, x0 + 1, d))
    })
    .unwrap()
}

/// Separable filtering equals a full 2D correlation with the outer product.
pub fn separable(x: &Tensor3, ky: &[f64], kx: &[f64]) -> Tensor3 {
    let (h, w, c) = x.shape();
    let mut out = Tensor3::zeros(h, w, c);
    for k in 0..c {
        let plane = Tensor3::from_fn(h, w, 1, |i, j, _| x[(i, j, k)]);
        let kernel = Kernel3::from_fn(ky.len(), kx.len(), 1, |a, b, _| ky[a] * kx[b]).unwrap();
        let r = conv3d(&plane, &kernel, 0.0);
        for i in 0..h {
            for j in 0..w {
                out[(i, j, k)] = r[(i, j, 0)];
            }
        }
    }
    out
}

pub fn epe(f: &FlowField, g: &FlowField, m: &ValidMask) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for i in 0..f.height() {
        for j in 0..f.width() {
            if m.get(i, j) {
                let (a, b) = (f.at(i, j), g.at(i, j));
                s += ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
                n += 1;
            }
        }
    }
    s / n as f64
}

/// Mean angle between `(u, v, 1)` and `(u*, v*, 1)` in degrees, by the
/// arccosine of the normalized dot product.
pub fn aae(f: &FlowField, g: &FlowField, m: &ValidMask) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for i in 0..f.height() {
        for j in 0..f.width() {
            if m.get(i, j) {
                let ((u, v), (x, y)) = (f.at(i, j), g.at(i, j));
                let c = (u * x + v * y + 1.0) / ((u * u + v * v + 1.0).sqrt() * (x * x + y * y + 1.0).sqrt());
                s += c.clamp(-1.0, 1.0).acos().to_degrees();
                n += 1;
            }
        }
    }
    s / n as f64
}

/// Rotates a plane by 90° so that image content moving right moves down:
/// `out(i, j) = x(H - 1 - j, i)`.
pub fn rot90(x: &Tensor3) -> Tensor3 {
    let (h, w, c) = x.shape();
    Tensor3::from_fn(w, h, c, |i, j, k| x[(h - 1 - j, i, k)])
}

/// Rotates a flow field with [`rot90`] and turns every vector by 90°:
/// `(u, v) -> (-v, u)`.
pub fn rot90_flow(f: &FlowField) -> FlowField {
    let (h, w) = (f.height(), f.width());
    FlowField::from_fn(w, h, |i, j| {
        let (u, v) = f.at(h - 1 - j, i);
        (-v, u)
    })
}

pub fn max_abs(a: &Tensor3, b: &Tensor3) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// The finite-difference configuration: w=5, O=4, M=1, T=2, F=2, one scale,
/// one iteration.
pub fn tiny_config() -> motionnet::NetworkConfig {
    motionnet::NetworkConfig {
        frames: 2,
        kernel_size: 5,
        kernels_per_orientation: 1,
        orientations: 4,
        speeds: 2,
        num_scales: 1,
        recurrent_iters: 1,
        target_speeds: vec![0.5, 1.5],
        ..Default::default()
    }
}

/// Classification plus end-point loss of one forward pass.
fn fd_loss(
    net: &motionnet::MotionNet,
    w: &motionnet::CanonicalWeights,
    frames: &[Tensor3],
    gt: &FlowField,
    mask: &ValidMask,
    with_grad: bool,
) -> (f64, Option<motionnet::CanonicalWeights>) {
    use motionnet::net::Cotangents;
    use motionnet::training::{classification_loss, regression_loss};
    let ew = net.expand(w).unwrap();
    let mode = if with_grad { motionnet::Mode::Training } else { motionnet::Mode::Inference };
    let out = net.forward_multiscale(&ew, frames, mode).unwrap();
    let targets = net.config().targets();
    let lc = classification_loss(&out.distribution, gt, &targets, mask).unwrap();
    let lr = regression_loss(&out.flow, gt, mask).unwrap();
    let value = lc.value + lr.value;
    let grads = with_grad.then(|| {
        let cot = Cotangents {
            scores: Some(&lc.grad),
            flow: Some(&lr.grad),
        };
        net.backward(&ew, out.trace.as_ref().unwrap(), cot).unwrap()
    });
    (value, grads)
}

/// Largest relative discrepancy between the analytic gradient and central
/// differences, over every canonical parameter. Gradients below 1e-6 are
/// compared in absolute terms. Returns the error and the parameter count.
pub fn finite_difference_check(config: motionnet::NetworkConfig, size: usize, seed: u64) -> (f64, usize) {
    let net = motionnet::MotionNet::new(config).unwrap();
    let weights = net.init_weights(seed).unwrap();
    let mut r = rng(seed);
    let frames: Vec<Tensor3> = (0..net.config().frames)
        .map(|_| Tensor3::from_fn(size, size, 1, |_, _, _| r.gen_range(0.0..1.0)))
        .collect();
    let half = size.div_ceil(2);
    let gt = random_flow(&mut r, half, half, 1.5);
    let mask = ValidMask::all(half, half);
    let (_, grads) = fd_loss(&net, &weights, &frames, &gt, &mask, true);
    let analytic = grads.unwrap().to_flat();
    let base = weights.to_flat();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for p in 0..base.len() {
        let eval = |delta: f64| {
            let mut theta = base.clone();
            theta[p] += delta;
            let mut w = weights.clone();
            w.assign_flat(&theta).unwrap();
            fd_loss(&net, &w, &frames, &gt, &mask, false).0
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        let a = analytic[p];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(err);
    }
    (worst, base.len())
}

/// Slice of the bank from input channel `(i, m)` to output channel `(j, n)`
/// with `k = member * groups + group` channel numbering.
fn bank_slice(bank: &KernelBank, o: usize, i: usize, m: usize, j: usize, n: usize) -> Kernel3 {
    let (c, out) = (m * o + i, n * o + j);
    let s = bank.size_y();
    Kernel3::from_fn(s, s, 1, |a, b, _| bank.weights()[bank.offset(a, b, c, out)]).unwrap()
}

pub fn folded(o: usize, i: usize, j: usize) -> usize {
    let d = (j + o - i) % o;
    d.min(o - d)
}

/// Brute-force check of the tying equations on an expanded bank:
/// slices with equal folded relative orientation and equal output
/// orientation are bit-identical, every slice is the output-orientation
/// rotation of the matching orientation-0 slice, and quarter-turn rotations
/// are exact index permutations.
pub fn check_tied_bank(bank: &KernelBank, o: usize, m: usize) -> Result<(), String> {
    let size = bank.size_y();
    for j in 0..o {
        for i in 0..o {
            for i2 in 0..o {
                if folded(o, i, j) != folded(o, i2, j) {
                    continue;
                }
                for a in 0..m {
                    for b in 0..m {
                        if bank_slice(bank, o, i, a, j, b) != bank_slice(bank, o, i2, a, j, b) {
                            return Err(format!("tie ({i},{j}) vs ({i2},{j}) broken"));
                        }
                    }
                }
            }
        }
    }
    for j in 0..o {
        let theta = std::f64::consts::TAU * j as f64 / o as f64;
        for i in 0..o {
            // the orientation-0 slice with the same relative angle
            let i0 = (o - folded(o, i, j)) % o;
            for a in 0..m {
                for b in 0..m {
                    let base = bank_slice(bank, o, i0, a, 0, b);
                    let got = bank_slice(bank, o, i, a, j, b);
                    if (4 * j) % o == 0 {
                        let quarter = 4 * j / o;
                        let mut want = base.clone();
                        for _ in 0..quarter {
                            let prev = want.clone();
                            want = Kernel3::from_fn(size, size, 1, |y, x, _| prev.at(size - 1 - x, y, 0)).unwrap();
                        }
                        if got != want {
                            return Err(format!("quarter turn j={j} is not a permutation"));
                        }
                    } else {
                        let want = rotate(&base, theta);
                        let diff = got
                            .weights()
                            .iter()
                            .zip(want.weights())
                            .map(|(p, q)| (p - q).abs())
                            .fold(0.0, f64::max);
                        if diff > 1e-12 {
                            return Err(format!("slice ({i},{j}) is not the rotated copy: {diff:e}"));
                        }
                    }
                }
            }
        }
    }
    Ok(())
}
