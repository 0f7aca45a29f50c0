//! Individual network layers, in feed-forward order.
//!
//! Layers ahead of the first learned filter bank (center-surround and
//! contrast normalization) have no backward pass: nothing upstream of them
//! is trainable.

use crate::config::Rectifier;
use crate::error::{Error, Result};
use crate::tensor::{
    conv_bank, filter_separable, gaussian_taps, maxpool, ArgmaxRecord, KernelBank, Tensor3,
};

/// Stacks `F` single-channel frames into an `H x W x F` tensor.
pub fn stack_input(frames: &[Tensor3]) -> Result<Tensor3> {
    if frames.len() < 2 {
        return Err(Error::contract("at least two frames are required"));
    }
    if frames.iter().any(|f| f.channels() != 1) {
        return Err(Error::contract("frames must be grayscale planes"));
    }
    Tensor3::from_planes(frames)
        .map_err(|_| Error::contract("frames differ in size"))
}

/// Taps of the surround Gaussian: σ = w/3, support radius ceil(2σ).
pub fn surround_taps(kernel_size: usize) -> Vec<f64> {
    let sigma = kernel_size as f64 / 3.0;
    let radius = (2.0 * sigma).ceil() as usize;
    gaussian_taps(2 * radius + 1, sigma)
}

/// Subtracts the local low-frequency component of every channel.
pub fn center_surround(x: &Tensor3, kernel_size: usize) -> Tensor3 {
    let taps = surround_taps(kernel_size);
    let low = filter_separable(x, &taps, &taps);
    x.zip_map(&low, |a, b| a - b)
}

/// Divides every value by the standard deviation of its channel over the
/// `window x window` neighborhood, floored at `floor`.
pub fn local_contrast_norm(x: &Tensor3, window: usize, floor: f64) -> Tensor3 {
    let std = local_std(x, window);
    x.zip_map(&std, |v, s| v / s.max(floor))
}

/// Windowed (population) standard deviation with replicate padding.
pub fn local_std(x: &Tensor3, window: usize) -> Tensor3 {
    let taps = vec![1.0 / window as f64; window];
    let mean = filter_separable(x, &taps, &taps);
    let mean_sq = filter_separable(&x.map(|v| v * v), &taps, &taps);
    mean.zip_map(&mean_sq, |m, m2| (m2 - m * m).max(0.0).sqrt())
}

/// MO learned spatiotemporal filters, one output plane per bank kernel.
pub fn motion_filters(x: &Tensor3, bank: &KernelBank, biases: &[f64]) -> Result<Tensor3> {
    conv_bank(x, bank, biases)
}

pub fn rectify(x: &Tensor3, rectifier: Rectifier) -> Tensor3 {
    match rectifier {
        Rectifier::Square => x.map(|v| v * v),
        Rectifier::Relu => x.map(|v| v.max(0.0)),
    }
}

pub fn rectify_grad(x: &Tensor3, grad: &Tensor3, rectifier: Rectifier) -> Tensor3 {
    match rectifier {
        Rectifier::Square => x.zip_map(grad, |v, g| 2.0 * v * g),
        Rectifier::Relu => x.zip_map(grad, |v, g| if v > 0.0 { g } else { 0.0 }),
    }
}

/// Pointwise squaring followed by stride-2 max-pooling.
pub fn square_and_pool(x: &Tensor3, window: usize) -> Result<(Tensor3, ArgmaxRecord)> {
    maxpool(&rectify(x, Rectifier::Square), window)
}

/// Divides each response by the sum of its `O` orientation variants plus
/// `epsilon`. Channel `k` is orientation `k % O` of kernel `k / O`.
pub fn orientation_norm(x: &Tensor3, orientations: usize, epsilon: f64) -> Result<Tensor3> {
    let c = x.channels();
    if c % orientations != 0 {
        return Err(Error::contract("channels are not a multiple of the orientation count"));
    }
    let mut out = x.clone();
    for px in out.data_mut().chunks_exact_mut(c) {
        for group in px.chunks_exact_mut(orientations) {
            let denom = group.iter().sum::<f64>() + epsilon;
            group.iter_mut().for_each(|v| *v /= denom);
        }
    }
    Ok(out)
}

pub fn orientation_norm_grad(
    x: &Tensor3,
    grad: &Tensor3,
    orientations: usize,
    epsilon: f64,
) -> Tensor3 {
    let c = x.channels();
    let mut out = Tensor3::zeros(x.height(), x.width(), c);
    for ((xs, gs), ds) in x
        .data()
        .chunks_exact(orientations)
        .zip(grad.data().chunks_exact(orientations))
        .zip(out.data_mut().chunks_exact_mut(orientations))
    {
        let denom = xs.iter().sum::<f64>() + epsilon;
        let cross: f64 = xs.iter().zip(gs).map(|(a, b)| a * b).sum::<f64>() / (denom * denom);
        for (d, g) in ds.iter_mut().zip(gs) {
            *d = g / denom - cross;
        }
    }
    out
}

/// Learned spatial interaction over all MO channels followed by ReLU.
/// Returns `(pre_activation, output)`.
pub fn aperture_smoothing(
    x: &Tensor3,
    bank: &KernelBank,
    biases: &[f64],
) -> Result<(Tensor3, Tensor3)> {
    let pre = conv_bank(x, bank, biases)?;
    let out = pre.map(|v| v.max(0.0));
    Ok((pre, out))
}

/// Per-pixel softmax over channels.
pub fn softmax(scores: &Tensor3) -> Tensor3 {
    let c = scores.channels();
    let mut out = scores.clone();
    for px in out.data_mut().chunks_exact_mut(c) {
        let max = px.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in px.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        px.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Cotangent of the scores given the softmax output `p` and its cotangent.
pub fn softmax_grad(p: &Tensor3, grad: &Tensor3) -> Tensor3 {
    let c = p.channels();
    let mut out = Tensor3::zeros(p.height(), p.width(), c);
    for ((ps, gs), ds) in p
        .data()
        .chunks_exact(c)
        .zip(grad.data().chunks_exact(c))
        .zip(out.data_mut().chunks_exact_mut(c))
    {
        let inner: f64 = ps.iter().zip(gs).map(|(a, b)| a * b).sum();
        for ((d, p), g) in ds.iter_mut().zip(ps).zip(gs) {
            *d = p * (g - inner);
        }
    }
    out
}
