//! Two-phase training: classification into speed/orientation targets with a
//! logarithmic loss, then end-point-error fine-tuning of the decoded flow.

mod trainer;

pub use trainer::{
    evaluate, predict_full, EpochRecord, LossMode, Phase, Schedule, TrainStatus, Trainer,
    TrainingState,
};

use rand::Rng;

pub use crate::data::TrainingSample;
use crate::error::{Error, Result};
use crate::field::{FlowField, MotionDistribution, ValidMask};
use crate::net::{CanonicalWeights, Layer, LayerParams, MotionNet};
use crate::tensor::Tensor3;

/// Smoothing of the end-point-error loss at zero residual.
pub const REGRESSION_DELTA: f64 = 1e-3;

/// A scalar loss and its cotangent on the network output it was computed
/// from (scores for classification, flow for regression).
#[derive(Clone, Debug)]
pub struct Loss {
    pub value: f64,
    pub grad: Tensor3,
}

/// `speeds` magnitudes at the quantiles `(t + 0.5) / speeds` of the masked
/// flow-magnitude distribution of `flows`.
pub fn select_targets(flows: &[(&FlowField, &ValidMask)], speeds: usize) -> Result<Vec<f64>> {
    if speeds == 0 {
        return Err(Error::contract("at least one speed is needed"));
    }
    let mut mags = Vec::new();
    for (flow, mask) in flows {
        for i in 0..flow.height() {
            for j in 0..flow.width() {
                if mask.get(i, j) {
                    let (u, v) = flow.at(i, j);
                    mags.push(u.hypot(v));
                }
            }
        }
    }
    if mags.is_empty() {
        return Err(Error::Data("no valid flow to select targets from".into()));
    }
    mags.sort_by(f64::total_cmp);
    let n = mags.len();
    Ok((0..speeds)
        .map(|t| {
            let pos = (t as f64 + 0.5) / speeds as f64 * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            mags[lo] + (pos - lo as f64) * (mags[hi] - mags[lo])
        })
        .collect())
}

/// Index of the target closest to `(u, v)`; the lowest index wins ties.
pub fn nearest_target(targets: &[(f64, f64)], u: f64, v: f64) -> usize {
    let mut best = (0, f64::INFINITY);
    for (k, &(tu, tv)) in targets.iter().enumerate() {
        let d = (tu - u).powi(2) + (tv - v).powi(2);
        if d < best.1 {
            best = (k, d);
        }
    }
    best.0
}

fn check_sizes(h: usize, w: usize, gt: &FlowField, mask: &ValidMask) -> Result<()> {
    if (gt.height(), gt.width()) != (h, w) || (mask.height(), mask.width()) != (h, w) {
        return Err(Error::contract(format!(
            "loss inputs differ in size from the {h}x{w} prediction"
        )));
    }
    if mask.count() == 0 {
        return Err(Error::Data("every pixel is masked".into()));
    }
    Ok(())
}

/// Mean negative log-probability of each masked pixel's nearest target.
/// The gradient is taken with respect to the softmax input scores.
pub fn classification_loss(
    dist: &MotionDistribution,
    gt: &FlowField,
    targets: &[(f64, f64)],
    mask: &ValidMask,
) -> Result<Loss> {
    let (h, w) = (dist.height(), dist.width());
    check_sizes(h, w, gt, mask)?;
    if targets.len() != dist.speeds() * dist.orientations() {
        return Err(Error::contract("one target per distribution class is needed"));
    }
    let n = mask.count() as f64;
    let c = targets.len();
    let mut grad = Tensor3::zeros(h, w, c);
    let mut value = 0.0;
    for i in 0..h {
        for j in 0..w {
            if !mask.get(i, j) {
                continue;
            }
            let (u, v) = gt.at(i, j);
            let label = nearest_target(targets, u, v);
            let p = dist.pixel(i, j);
            value -= p[label].max(f64::MIN_POSITIVE).ln();
            let o = grad.offset(i, j, 0);
            let g = &mut grad.data_mut()[o..o + c];
            for (k, gk) in g.iter_mut().enumerate() {
                *gk = (p[k] - if k == label { 1.0 } else { 0.0 }) / n;
            }
        }
    }
    Ok(Loss {
        value: value / n,
        grad,
    })
}

/// Mean smoothed end-point error `sqrt(du² + dv² + δ²)` over masked pixels.
pub fn regression_loss(flow: &FlowField, gt: &FlowField, mask: &ValidMask) -> Result<Loss> {
    let (h, w) = (flow.height(), flow.width());
    check_sizes(h, w, gt, mask)?;
    let n = mask.count() as f64;
    let mut grad = Tensor3::zeros(h, w, 2);
    let mut value = 0.0;
    for i in 0..h {
        for j in 0..w {
            if !mask.get(i, j) {
                continue;
            }
            let (u, v) = flow.at(i, j);
            let (gu, gv) = gt.at(i, j);
            let (du, dv) = (u - gu, v - gv);
            let r = (du * du + dv * dv + REGRESSION_DELTA * REGRESSION_DELTA).sqrt();
            value += r;
            grad[(i, j, 0)] = du / r / n;
            grad[(i, j, 1)] = dv / r / n;
        }
    }
    Ok(Loss {
        value: value / n,
        grad,
    })
}

/// H⁴ parameters for which the decoded flow is the distribution-weighted
/// mean of the targets `speeds[t] (cos θ_o, sin θ_o)`; biases are zero.
pub fn init_output_layer(net: &MotionNet, speeds: &[f64]) -> Result<LayerParams> {
    net.output_layer_init(speeds)
}

/// Adaptive-moment optimizer state, one moment pair per canonical scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub steps: u64,
    pub(crate) first: Vec<f64>,
    pub(crate) second: Vec<f64>,
}

impl Adam {
    pub fn new(learning_rate: f64, num_params: usize) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 0,
            first: vec![0.0; num_params],
            second: vec![0.0; num_params],
        }
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.first, &self.second)
    }

    pub fn set_moments(&mut self, first: Vec<f64>, second: Vec<f64>) -> Result<()> {
        if first.len() != second.len() {
            return Err(Error::contract("moment vectors differ in length"));
        }
        self.first = first;
        self.second = second;
        Ok(())
    }

    /// Applies one update; parameters of `frozen` layers are left untouched.
    pub fn step(&mut self, weights: &mut CanonicalWeights, grads: &CanonicalWeights, frozen: &[Layer]) {
        assert_eq!(weights.num_params(), self.first.len());
        assert_eq!(grads.num_params(), self.first.len());
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let mut offset = 0;
        for l in Layer::ALL {
            let (p, g) = (weights.layer_mut(l), grads.layer(l));
            let n = p.len();
            if !frozen.contains(&l) {
                let params = p.weights.iter_mut().chain(p.biases.iter_mut());
                let gs = g.weights.iter().chain(g.biases.iter());
                for (k, (w, &gk)) in params.zip(gs).enumerate() {
                    let m = &mut self.first[offset + k];
                    let v = &mut self.second[offset + k];
                    *m = self.beta1 * *m + (1.0 - self.beta1) * gk;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * gk * gk;
                    *w -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
                }
            }
            offset += n;
        }
    }
}

/// Draws batches of random crops. Crops without a valid pixel are redrawn.
#[derive(Clone, Debug)]
pub struct PatchSampler {
    patch: usize,
    batch: usize,
    eligible: Vec<usize>,
}

const MAX_REDRAWS: usize = 1000;

impl PatchSampler {
    pub fn new(data: &[TrainingSample], patch: usize, batch: usize) -> Result<Self> {
        if patch == 0 || batch == 0 {
            return Err(Error::contract("patch and batch sizes must be positive"));
        }
        let eligible: Vec<usize> = data
            .iter()
            .enumerate()
            .filter(|(_, s)| s.height() >= patch && s.width() >= patch && s.mask.count() > 0)
            .map(|(k, _)| k)
            .collect();
        if eligible.is_empty() {
            return Err(Error::Data(format!(
                "no training image holds a {patch}x{patch} patch with valid flow"
            )));
        }
        Ok(PatchSampler {
            patch,
            batch,
            eligible,
        })
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    /// Position `(sample, top, left)` of one crop.
    pub fn draw_position(&self, data: &[TrainingSample], rng: &mut impl Rng) -> Result<(usize, usize, usize)> {
        for _ in 0..MAX_REDRAWS {
            let k = self.eligible[rng.gen_range(0..self.eligible.len())];
            let s = &data[k];
            let top = rng.gen_range(0..=s.height() - self.patch);
            let left = rng.gen_range(0..=s.width() - self.patch);
            let valid = (top..top + self.patch)
                .any(|i| (left..left + self.patch).any(|j| s.mask.get(i, j)));
            if valid {
                return Ok((k, top, left));
            }
        }
        Err(Error::Data("could not find a crop with valid flow".into()))
    }

    pub fn draw_batch(&self, data: &[TrainingSample], rng: &mut impl Rng) -> Result<Vec<TrainingSample>> {
        (0..self.batch)
            .map(|_| {
                let (k, top, left) = self.draw_position(data, rng)?;
                Ok(data[k].crop(top, left, self.patch, self.patch))
            })
            .collect()
    }
}
