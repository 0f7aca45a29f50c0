//! The motion network.
//!
//! One scale of the pipeline runs
//!
//! ```text
//! frames → center-surround → contrast norm → H¹ → square → maxpool
//!        → orientation norm → H² → ReLU
//! ```
//!
//! at half the input resolution after pooling. Feature maps of every usable
//! scale are brought to the scale-0 grid, concatenated and decoded pixelwise
//! (H³, softmax, H⁴) into a distribution over speeds × orientations and a
//! flow vector. Recurrent iterations warp the frames by the accumulated flow
//! and add the residual estimate.
//!
//! Flow values are always in input pixels per frame, including at half
//! resolution.

pub mod layers;
mod weights;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use weights::{CanonicalWeights, ExpandedWeights, Layer, LayerParams};

use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::field::{FlowField, MotionDistribution};
use crate::rotation::{FoldMode, OrientationSet, Parity, TieLayout, TiedLayerSpec};
use crate::tensor::{
    conv_bank, conv_bank_grad, maxpool, maxpool_grad, resize_bilinear, resize_bilinear_grad,
    warp_bilinear, ArgmaxRecord, KernelBank, Tensor3,
};
use layers::{
    aperture_smoothing, center_surround, local_contrast_norm, motion_filters, orientation_norm,
    orientation_norm_grad, rectify, rectify_grad, softmax, softmax_grad, stack_input,
};

/// Whether a forward pass records what the backward pass needs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Inference,
    Training,
}

/// Activations of one scale kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ScaleTrace {
    /// Normalized frame stack fed to H¹.
    input: Tensor3,
    h1_pre: Tensor3,
    pool: ArgmaxRecord,
    /// Pooled energies before orientation normalization.
    pooled: Tensor3,
    h2_in: Tensor3,
    h2_pre: Tensor3,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Clone, Debug)]
pub struct LayerTrace {
    scales: Vec<ScaleTrace>,
    features: Tensor3,
    probs: Tensor3,
}

impl LayerTrace {
    pub fn usable_scales(&self) -> usize {
        self.scales.len()
    }
}

#[derive(Clone, Debug)]
pub struct Forward {
    /// H³ outputs before the softmax.
    pub scores: Tensor3,
    pub distribution: MotionDistribution,
    /// Half-resolution flow.
    pub flow: FlowField,
    /// Pyramid levels dropped for being smaller than the kernel.
    pub skipped_scales: Vec<usize>,
    /// Present in [`Mode::Training`].
    pub trace: Option<LayerTrace>,
}

#[derive(Clone, Debug)]
pub struct Iteration {
    /// Accumulated flow the frames were warped with.
    pub base_flow: FlowField,
    pub forward: Forward,
}

#[derive(Clone, Debug)]
pub struct Recurrent {
    /// Sum of all iterations' residual flows, at half resolution.
    pub flow: FlowField,
    pub iterations: Vec<Iteration>,
}

/// Upstream cotangents for [`MotionNet::backward`]. Missing entries are zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct Cotangents<'a> {
    pub scores: Option<&'a Tensor3>,
    pub flow: Option<&'a Tensor3>,
}

fn layer_specs(cfg: &NetworkConfig) -> [TiedLayerSpec; 4] {
    let tied = cfg.variant.rotation_ties;
    let o = OrientationSet::Regular(cfg.orientations);
    let (w, m) = (cfg.kernel_size, cfg.kernels_per_orientation);
    [
        TiedLayerSpec {
            input: OrientationSet::Isotropic,
            output: o,
            in_per_group: cfg.frames,
            out_per_group: m,
            size: w,
            parity: Parity::Even,
            tied,
            has_bias: true,
        },
        TiedLayerSpec {
            input: o,
            output: o,
            in_per_group: m,
            out_per_group: m,
            size: w,
            parity: Parity::Even,
            tied,
            has_bias: true,
        },
        TiedLayerSpec {
            input: o,
            output: o,
            in_per_group: cfg.num_scales * m,
            out_per_group: cfg.speeds,
            size: 1,
            parity: Parity::Even,
            tied,
            has_bias: true,
        },
        TiedLayerSpec {
            input: o,
            output: OrientationSet::FlowComponents,
            in_per_group: cfg.speeds,
            out_per_group: 1,
            size: 1,
            parity: Parity::Odd,
            tied,
            has_bias: false,
        },
    ]
}

/// Builds the network description: configuration plus the tying tables of
/// every learned layer. Weights are kept separately.
#[derive(Clone, Debug)]
pub struct MotionNet {
    config: NetworkConfig,
    layouts: [TieLayout; 4],
    scale_limit: usize,
}

impl MotionNet {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let [s1, s2, s3, s4] = layer_specs(&config);
        let layouts = [
            TieLayout::new(s1)?,
            TieLayout::new(s2)?,
            TieLayout::new(s3)?,
            TieLayout::new(s4)?,
        ];
        let scale_limit = config.num_scales;
        Ok(MotionNet {
            config,
            layouts,
            scale_limit,
        })
    }

    /// Runs only the first `scales` pyramid levels of a network trained with
    /// more; the weights of the dropped levels are ignored.
    pub fn with_scale_limit(mut self, scales: usize) -> Result<Self> {
        if scales == 0 || scales > self.config.num_scales {
            return Err(Error::Config(format!(
                "scale count must lie in 1..={}, got {scales}",
                self.config.num_scales
            )));
        }
        self.scale_limit = scales;
        Ok(self)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layout(&self, l: Layer) -> &TieLayout {
        &self.layouts[l.index()]
    }

    pub fn zero_weights(&self) -> CanonicalWeights {
        CanonicalWeights::new(
            self.layouts
                .each_ref()
                .map(|t| LayerParams::zeros(t.canonical_len(), t.bias_len())),
        )
    }

    pub fn check_weights(&self, weights: &CanonicalWeights) -> Result<()> {
        for l in Layer::ALL {
            let (p, t) = (weights.layer(l), self.layout(l));
            if p.weights.len() != t.canonical_len() || p.biases.len() != t.bias_len() {
                return Err(Error::Config(format!(
                    "layer {} holds {}+{} parameters, the configuration needs {}+{}",
                    l.name(),
                    p.weights.len(),
                    p.biases.len(),
                    t.canonical_len(),
                    t.bias_len()
                )));
            }
        }
        Ok(())
    }

    /// Random initialization, deterministic in `seed`. H⁴ is set from the
    /// configured target speeds; with `fixed_gaussian_h1`, H¹ holds the
    /// Gaussian-derivative bank.
    pub fn init_weights(&self, seed: u64) -> Result<CanonicalWeights> {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = self.zero_weights();
        let (k, m, o) = (
            cfg.kernel_size as f64,
            cfg.kernels_per_orientation as f64,
            cfg.orientations as f64,
        );
        let scales = [
            (Layer::MotionFilters, 1.0 / (k * (cfg.frames as f64).sqrt())),
            (Layer::Smoothing, (o / m).sqrt() / k),
            (Layer::Hidden, 1.0 / (cfg.num_scales as f64 * m * o).sqrt()),
        ];
        for (l, std) in scales {
            let a = 3f64.sqrt() * std;
            for v in w.layer_mut(l).weights.iter_mut() {
                *v = rng.gen_range(-a..a);
            }
        }
        if cfg.variant.fixed_gaussian_h1 {
            *w.layer_mut(Layer::MotionFilters) = self.gaussian_derivative_h1()?;
        }
        *w.layer_mut(Layer::Output) = self.output_layer_init(&cfg.target_speeds)?;
        Ok(w)
    }

    /// H⁴ parameters under which the decoded flow is the expectation of the
    /// target vectors `speeds[t] (cos θ_o, sin θ_o)` under the distribution.
    pub fn output_layer_init(&self, speeds: &[f64]) -> Result<LayerParams> {
        let cfg = &self.config;
        if speeds.len() != cfg.speeds {
            return Err(Error::contract(format!(
                "{} speeds given for {} hidden speeds",
                speeds.len(),
                cfg.speeds
            )));
        }
        let o = cfg.orientations;
        let mut bank = KernelBank::zeros(1, 1, cfg.classes(), 2);
        for (t, &s) in speeds.iter().enumerate() {
            for k in 0..o {
                let theta = cfg.orientation_angle(k);
                let ci = t * o + k;
                let off = bank.offset(0, 0, ci, 0);
                bank.weights_mut()[off] = s * theta.cos();
                let off = bank.offset(0, 0, ci, 1);
                bank.weights_mut()[off] = s * theta.sin();
            }
        }
        let layout = self.layout(Layer::Output);
        Ok(LayerParams {
            weights: layout.fold_gradients(&bank, FoldMode::Mean)?,
            biases: vec![0.0; layout.bias_len()],
        })
    }

    /// Fixed H¹ of separable Gaussian derivatives along the kernel's
    /// orientation (σ = w/4) and time (σ = 0.8 frames). Kernel `n` uses the
    /// (spatial, temporal) derivative orders (1,1), (2,1), (1,0), (2,0)
    /// cyclically; each kernel has unit L2 norm.
    pub fn gaussian_derivative_h1(&self) -> Result<LayerParams> {
        let cfg = &self.config;
        let (w, f, m) = (cfg.kernel_size, cfg.frames, cfg.kernels_per_orientation);
        let layout = self.layout(Layer::MotionFilters);
        let tied = TieLayout::new(TiedLayerSpec {
            tied: true,
            ..*layout.spec()
        })?;
        let sigma_s = w as f64 / 4.0;
        let sigma_t = 0.8;
        let gauss = |x: f64, s: f64| (-x * x / (2.0 * s * s)).exp();
        let deriv = |x: f64, s: f64, order: usize| match order {
            0 => gauss(x, s),
            1 => -x / (s * s) * gauss(x, s),
            _ => (x * x / s.powi(4) - 1.0 / (s * s)) * gauss(x, s),
        };
        const ORDERS: [(usize, usize); 4] = [(1, 1), (2, 1), (1, 0), (2, 0)];
        let r = (w / 2) as f64;
        let tc = (f as f64 - 1.0) / 2.0;
        let mut canonical = vec![0.0; tied.canonical_len()];
        let slice = w * w;
        for n in 0..m {
            let (os, ot) = ORDERS[n % ORDERS.len()];
            let mut norm = 0.0;
            for fr in 0..f {
                let gt = deriv(fr as f64 - tc, sigma_t, ot);
                for a in 0..w {
                    let gy = gauss(a as f64 - r, sigma_s);
                    for b in 0..w {
                        let v = gt * gy * deriv(b as f64 - r, sigma_s, os);
                        canonical[(fr * m + n) * slice + a * w + b] = v;
                        norm += v * v;
                    }
                }
            }
            let norm = norm.sqrt();
            for fr in 0..f {
                let o = (fr * m + n) * slice;
                canonical[o..o + slice].iter_mut().for_each(|v| *v /= norm);
            }
        }
        let weights = if layout.spec().tied {
            canonical
        } else {
            layout.fold_gradients(&tied.expand(&canonical)?, FoldMode::Mean)?
        };
        Ok(LayerParams {
            weights,
            biases: vec![0.0; layout.bias_len()],
        })
    }

    pub fn expand(&self, weights: &CanonicalWeights) -> Result<ExpandedWeights> {
        self.check_weights(weights)?;
        let mut banks = Vec::with_capacity(4);
        let mut biases = Vec::with_capacity(4);
        for l in Layer::ALL {
            let (p, t) = (weights.layer(l), self.layout(l));
            banks.push(t.expand(&p.weights)?);
            biases.push(t.expand_biases(&p.biases)?);
        }
        Ok(ExpandedWeights {
            banks: banks.try_into().expect("four layers"),
            biases: biases.try_into().expect("four layers"),
        })
    }

    /// Output grid of the network for an `h x w` input.
    pub fn output_size(h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(2), w.div_ceil(2))
    }

    /// Sizes of the usable pyramid levels and the indices of skipped ones.
    pub fn scale_sizes(&self, h: usize, w: usize) -> (Vec<(usize, usize)>, Vec<usize>) {
        let mut usable = vec![(h, w)];
        let mut skipped = Vec::new();
        for s in 1..self.config.num_scales {
            let f = self.config.scale_factor.powi(s as i32);
            let (hs, ws) = (
                (h as f64 * f).round() as usize,
                (w as f64 * f).round() as usize,
            );
            if hs.min(ws) < self.config.kernel_size || !skipped.is_empty() {
                skipped.push(s);
            } else {
                usable.push((hs, ws));
            }
        }
        (usable, skipped)
    }

    fn preprocess(&self, stack: &Tensor3) -> Tensor3 {
        let v = &self.config.variant;
        let w = self.config.kernel_size;
        let x = if v.center_surround {
            center_surround(stack, w)
        } else {
            stack.clone()
        };
        if v.local_norm {
            local_contrast_norm(&x, w, self.config.std_floor)
        } else {
            x
        }
    }

    /// Layers H¹ through H² at one scale, resized to `out` at the end.
    fn scale_features(
        &self,
        ew: &ExpandedWeights,
        stack: &Tensor3,
        out: (usize, usize),
        mode: Mode,
    ) -> Result<(Tensor3, Option<ScaleTrace>)> {
        let cfg = &self.config;
        let input = self.preprocess(stack);
        let h1_pre = motion_filters(
            &input,
            ew.bank(Layer::MotionFilters),
            ew.biases(Layer::MotionFilters),
        )?;
        let (pooled, pool) = maxpool(&rectify(&h1_pre, cfg.variant.rectifier), cfg.pool_window())?;
        let h2_in = if cfg.variant.orientation_norm {
            orientation_norm(&pooled, cfg.orientations, cfg.epsilon)?
        } else {
            pooled.clone()
        };
        let (h2_pre, h2) =
            aperture_smoothing(&h2_in, ew.bank(Layer::Smoothing), ew.biases(Layer::Smoothing))?;
        let features = if (h2.height(), h2.width()) == out {
            h2
        } else {
            resize_bilinear(&h2, out.0, out.1)?
        };
        let trace = (mode == Mode::Training).then(|| ScaleTrace {
            input,
            h1_pre,
            pool,
            pooled,
            h2_in,
            h2_pre,
        });
        Ok((features, trace))
    }

    /// Pixelwise decoding of concatenated features (`k · MO` channels for
    /// `k` usable scales) into scores, the motion distribution and flow.
    pub fn decode(
        &self,
        ew: &ExpandedWeights,
        features: &Tensor3,
    ) -> Result<(Tensor3, MotionDistribution, FlowField)> {
        let cfg = &self.config;
        let mo = cfg.feature_channels();
        let c = features.channels();
        if c == 0 || c % mo != 0 || c / mo > cfg.num_scales {
            return Err(Error::contract(format!(
                "decoder expects a multiple of {mo} channels up to {}, got {c}",
                mo * cfg.num_scales
            )));
        }
        let h3 = ew.bank(Layer::Hidden);
        let scores = if c == h3.in_channels() {
            conv_bank(features, h3, ew.biases(Layer::Hidden))?
        } else {
            conv_bank(features, &h3.input_prefix(c), ew.biases(Layer::Hidden))?
        };
        let probs = softmax(&scores);
        let flow = conv_bank(&probs, ew.bank(Layer::Output), ew.biases(Layer::Output))?;
        Ok((
            scores,
            MotionDistribution::new(probs, cfg.speeds, cfg.orientations)?,
            FlowField::new(flow)?,
        ))
    }

    fn check_frames(&self, frames: &[Tensor3]) -> Result<Tensor3> {
        if frames.len() != self.config.frames {
            return Err(Error::contract(format!(
                "network takes {} frames, got {}",
                self.config.frames,
                frames.len()
            )));
        }
        let stack = stack_input(frames)?;
        let w = self.config.kernel_size;
        if stack.height() < w || stack.width() < w {
            return Err(Error::contract(format!(
                "input {}x{} is smaller than the {w}px kernel",
                stack.height(),
                stack.width()
            )));
        }
        Ok(stack)
    }

    fn forward_scales(
        &self,
        ew: &ExpandedWeights,
        frames: &[Tensor3],
        max_scales: usize,
        mode: Mode,
    ) -> Result<Forward> {
        let stack = self.check_frames(frames)?;
        let (h, w) = (stack.height(), stack.width());
        let out = Self::output_size(h, w);
        let (mut sizes, mut skipped) = self.scale_sizes(h, w);
        sizes.truncate(max_scales);
        skipped.retain(|&s| s < max_scales);
        for s in &skipped {
            log::warn!(
                "scale {s} is smaller than the {}px kernel and is skipped",
                self.config.kernel_size
            );
        }
        let per_scale: Vec<(Tensor3, Option<ScaleTrace>)> = sizes
            .par_iter()
            .enumerate()
            .map(|(s, &(hs, ws))| {
                if s == 0 {
                    self.scale_features(ew, &stack, out, mode)
                } else {
                    self.scale_features(ew, &resize_bilinear(&stack, hs, ws)?, out, mode)
                }
            })
            .collect::<Result<_>>()?;
        let mo = self.config.feature_channels();
        let mut features = Tensor3::zeros(out.0, out.1, mo * per_scale.len());
        for (s, (f, _)) in per_scale.iter().enumerate() {
            features.add_into_channels(s * mo, f);
        }
        let (scores, distribution, flow) = self.decode(ew, &features)?;
        let trace = (mode == Mode::Training).then(|| LayerTrace {
            scales: per_scale
                .into_iter()
                .map(|(_, t)| t.expect("training mode keeps traces"))
                .collect(),
            probs: distribution.tensor().clone(),
            features,
        });
        Ok(Forward {
            scores,
            distribution,
            flow,
            skipped_scales: skipped,
            trace,
        })
    }

    /// The network at the input resolution only.
    pub fn forward_single_scale(
        &self,
        ew: &ExpandedWeights,
        frames: &[Tensor3],
        mode: Mode,
    ) -> Result<Forward> {
        self.forward_scales(ew, frames, 1, mode)
    }

    /// The network on the full pyramid of downsized inputs.
    pub fn forward_multiscale(
        &self,
        ew: &ExpandedWeights,
        frames: &[Tensor3],
        mode: Mode,
    ) -> Result<Forward> {
        self.forward_scales(ew, frames, self.scale_limit, mode)
    }

    /// `recurrent_iters` passes of [`MotionNet::forward_multiscale`], each on
    /// the frames warped by the flow accumulated so far.
    pub fn forward_recurrent(
        &self,
        ew: &ExpandedWeights,
        frames: &[Tensor3],
        mode: Mode,
    ) -> Result<Recurrent> {
        self.forward_iterations(ew, frames, self.config.recurrent_iters, mode)
    }

    /// Like [`MotionNet::forward_recurrent`] with an explicit iteration count.
    pub fn forward_iterations(
        &self,
        ew: &ExpandedWeights,
        frames: &[Tensor3],
        iters: usize,
        mode: Mode,
    ) -> Result<Recurrent> {
        let stack = self.check_frames(frames)?;
        let (h, w) = Self::output_size(stack.height(), stack.width());
        let mut acc = FlowField::zeros(h, w);
        let mut iterations = Vec::with_capacity(iters);
        for r in 0..iters {
            let forward = if r == 0 {
                self.forward_multiscale(ew, frames, mode)?
            } else {
                let warped = warp_frames(frames, &acc, self.config.reference_frame())?;
                self.forward_multiscale(ew, &warped, mode)?
            };
            let next = acc.add(&forward.flow);
            iterations.push(Iteration {
                base_flow: acc,
                forward,
            });
            acc = next;
        }
        Ok(Recurrent {
            flow: acc,
            iterations,
        })
    }

    /// Gradient of a scalar loss with respect to the canonical weights,
    /// given its cotangents on one forward pass's scores and flow.
    pub fn backward(
        &self,
        ew: &ExpandedWeights,
        trace: &LayerTrace,
        cot: Cotangents<'_>,
    ) -> Result<CanonicalWeights> {
        let cfg = &self.config;
        let probs = &trace.probs;
        let mut d_scores = Tensor3::zeros(probs.height(), probs.width(), probs.channels());
        let mut g4 = KernelBank::zeros(1, 1, cfg.classes(), 2);
        let mut g4_bias = vec![0.0; 2];
        if let Some(df) = cot.flow {
            let g = conv_bank_grad(probs, ew.bank(Layer::Output), df, true)?;
            d_scores.add_assign(&softmax_grad(probs, &g.input.expect("requested")));
            g4 = g.weights;
            g4_bias = g.biases;
        }
        if let Some(ds) = cot.scores {
            if !ds.same_shape(&d_scores) {
                return Err(Error::contract("score cotangent shape mismatch"));
            }
            d_scores.add_assign(ds);
        }

        let h3 = ew.bank(Layer::Hidden);
        let z = &trace.features;
        let g = conv_bank_grad(z, &h3.input_prefix(z.channels()), &d_scores, true)?;
        let mut g3 = KernelBank::zeros(1, 1, h3.in_channels(), h3.out_channels());
        g3.add_input_prefix(&g.weights);
        let g3_bias = g.biases;
        let dz = g.input.expect("requested");

        let mo = cfg.feature_channels();
        let per_scale: Vec<(BankGradsPair, Option<BankGradsPair>)> = trace
            .scales
            .par_iter()
            .enumerate()
            .map(|(s, st)| self.scale_backward(ew, st, &dz.channel_range(s * mo, mo)))
            .collect::<Result<_>>()?;

        let b1 = ew.bank(Layer::MotionFilters);
        let b2 = ew.bank(Layer::Smoothing);
        let mut g1 = (
            KernelBank::zeros(b1.size_y(), b1.size_x(), b1.in_channels(), b1.out_channels()),
            vec![0.0; b1.out_channels()],
        );
        let mut g2 = (
            KernelBank::zeros(b2.size_y(), b2.size_x(), b2.in_channels(), b2.out_channels()),
            vec![0.0; b2.out_channels()],
        );
        for (s2, s1) in per_scale {
            accumulate(&mut g2, &s2);
            if let Some(s1) = s1 {
                accumulate(&mut g1, &s1);
            }
        }

        let fold = |l: Layer, bank: &KernelBank, biases: &[f64]| -> Result<LayerParams> {
            let t = self.layout(l);
            Ok(LayerParams {
                weights: t.fold_gradients(bank, FoldMode::Sum)?,
                biases: t.fold_bias_gradients(biases, FoldMode::Sum)?,
            })
        };
        Ok(CanonicalWeights::new([
            fold(Layer::MotionFilters, &g1.0, &g1.1)?,
            fold(Layer::Smoothing, &g2.0, &g2.1)?,
            fold(Layer::Hidden, &g3, &g3_bias)?,
            fold(Layer::Output, &g4, &g4_bias)?,
        ]))
    }

    fn scale_backward(
        &self,
        ew: &ExpandedWeights,
        st: &ScaleTrace,
        d_features: &Tensor3,
    ) -> Result<(BankGradsPair, Option<BankGradsPair>)> {
        let cfg = &self.config;
        let (hs, ws) = (st.h2_pre.height(), st.h2_pre.width());
        let d_h2 = if (d_features.height(), d_features.width()) == (hs, ws) {
            d_features.clone()
        } else {
            resize_bilinear_grad(d_features, hs, ws)?
        };
        let d_h2_pre = st
            .h2_pre
            .zip_map(&d_h2, |x, g| if x > 0.0 { g } else { 0.0 });
        let g2 = conv_bank_grad(&st.h2_in, ew.bank(Layer::Smoothing), &d_h2_pre, true)?;
        let d_h2_in = g2.input.expect("requested");
        let d_pooled = if cfg.variant.orientation_norm {
            orientation_norm_grad(&st.pooled, &d_h2_in, cfg.orientations, cfg.epsilon)
        } else {
            d_h2_in
        };
        let g1 = if cfg.variant.fixed_gaussian_h1 {
            None
        } else {
            let d_rect = maxpool_grad(&st.pool, &d_pooled)?;
            let d_h1_pre = rectify_grad(&st.h1_pre, &d_rect, cfg.variant.rectifier);
            let g = conv_bank_grad(&st.input, ew.bank(Layer::MotionFilters), &d_h1_pre, false)?;
            Some((g.weights, g.biases))
        };
        Ok(((g2.weights, g2.biases), g1))
    }
}

type BankGradsPair = (KernelBank, Vec<f64>);

fn accumulate(acc: &mut BankGradsPair, add: &BankGradsPair) {
    acc.0
        .weights_mut()
        .iter_mut()
        .zip(add.0.weights())
        .for_each(|(a, b)| *a += b);
    acc.1.iter_mut().zip(&add.1).for_each(|(a, b)| *a += b);
}

/// Warps every frame toward the reference frame: frame `k` is sampled at
/// `p + (k - reference) · flow(p)`, with the half-resolution `flow`
/// upsampled to the frame size first.
pub fn warp_frames(frames: &[Tensor3], flow: &FlowField, reference: usize) -> Result<Vec<Tensor3>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::contract("no frames to warp"))?;
    let full = flow.upsample_half(first.height(), first.width())?;
    frames
        .iter()
        .enumerate()
        .map(|(k, f)| warp_bilinear(f, full.tensor(), k as f64 - reference as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Variant;

    fn tiny() -> NetworkConfig {
        NetworkConfig {
            frames: 2,
            kernel_size: 5,
            kernels_per_orientation: 1,
            orientations: 4,
            speeds: 2,
            num_scales: 1,
            target_speeds: vec![0.5, 1.5],
            ..Default::default()
        }
    }

    fn frames(n: usize, h: usize, w: usize) -> Vec<Tensor3> {
        (0..n)
            .map(|t| {
                Tensor3::from_fn(h, w, 1, |i, j, _| {
                    0.5 + 0.3 * ((i as f64 * 0.7 + (j + t) as f64 * 0.45).sin())
                        + 0.1 * ((i * j) as f64 * 0.13).cos()
                })
            })
            .collect()
    }

    #[test]
    fn output_is_half_resolution() {
        let net = MotionNet::new(tiny()).unwrap();
        let ew = net.expand(&net.init_weights(1).unwrap()).unwrap();
        for (h, w) in [(16, 16), (17, 9), (5, 6)] {
            let out = net.forward_single_scale(&ew, &frames(2, h, w), Mode::Inference).unwrap();
            assert_eq!((out.flow.height(), out.flow.width()), (h.div_ceil(2), w.div_ceil(2)));
            assert!(out.trace.is_none());
        }
    }

    #[test]
    fn small_scales_are_skipped() {
        let net = MotionNet::new(NetworkConfig { num_scales: 6, ..tiny() }).unwrap();
        let (usable, skipped) = net.scale_sizes(12, 20);
        assert_eq!(usable, vec![(12, 20), (8, 14), (6, 10)]);
        assert_eq!(skipped, vec![3, 4, 5]);
        let ew = net.expand(&net.init_weights(2).unwrap()).unwrap();
        let out = net.forward_multiscale(&ew, &frames(2, 12, 20), Mode::Training).unwrap();
        assert_eq!(out.skipped_scales, vec![3, 4, 5]);
        assert_eq!(out.trace.unwrap().usable_scales(), 3);
    }

    #[test]
    fn scale_limit_of_one_is_single_scale() {
        let net = MotionNet::new(NetworkConfig { num_scales: 3, ..tiny() }).unwrap();
        let ew = net.expand(&net.init_weights(4).unwrap()).unwrap();
        let f = frames(2, 14, 14);
        let single = net.forward_single_scale(&ew, &f, Mode::Inference).unwrap();
        let limited = net.with_scale_limit(1).unwrap();
        let out = limited.forward_multiscale(&ew, &f, Mode::Inference).unwrap();
        assert_eq!(out.flow, single.flow);
        assert!(limited.with_scale_limit(4).is_err());
    }

    #[test]
    fn wrong_frame_count_is_rejected() {
        let net = MotionNet::new(tiny()).unwrap();
        let ew = net.expand(&net.init_weights(1).unwrap()).unwrap();
        assert!(net.forward_single_scale(&ew, &frames(3, 8, 8), Mode::Inference).is_err());
        assert!(net.forward_single_scale(&ew, &frames(2, 4, 8), Mode::Inference).is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let net = MotionNet::new(tiny()).unwrap();
        assert_eq!(net.init_weights(7).unwrap(), net.init_weights(7).unwrap());
        assert_ne!(net.init_weights(7).unwrap(), net.init_weights(8).unwrap());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let net = MotionNet::new(tiny()).unwrap();
        let ew = net.expand(&net.init_weights(3).unwrap()).unwrap();
        let out = net.forward_single_scale(&ew, &frames(2, 10, 10), Mode::Training).unwrap();
        let zero_flow = Tensor3::zeros(5, 5, 2);
        let g = net
            .backward(
                &ew,
                out.trace.as_ref().unwrap(),
                Cotangents {
                    scores: None,
                    flow: Some(&zero_flow),
                },
            )
            .unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gaussian_bank_is_frozen_in_backward() {
        let cfg = NetworkConfig {
            variant: Variant {
                fixed_gaussian_h1: true,
                ..Default::default()
            },
            ..tiny()
        };
        let net = MotionNet::new(cfg).unwrap();
        let w = net.init_weights(3).unwrap();
        assert_eq!(w.layer(Layer::MotionFilters), &net.gaussian_derivative_h1().unwrap());
        let ew = net.expand(&w).unwrap();
        let out = net.forward_single_scale(&ew, &frames(2, 10, 10), Mode::Training).unwrap();
        let up = out.flow.tensor().map(|v| v + 1.0);
        let g = net
            .backward(&ew, out.trace.as_ref().unwrap(), Cotangents { scores: None, flow: Some(&up) })
            .unwrap();
        assert!(g.layer(Layer::MotionFilters).weights.iter().all(|&v| v == 0.0));
        assert!(g.layer(Layer::Smoothing).weights.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn untied_gaussian_bank_matches_tied_expansion() {
        let tied = MotionNet::new(tiny()).unwrap();
        let untied = MotionNet::new(NetworkConfig {
            variant: Variant {
                rotation_ties: false,
                ..Default::default()
            },
            ..tiny()
        })
        .unwrap();
        let a = tied
            .layout(Layer::MotionFilters)
            .expand(&tied.gaussian_derivative_h1().unwrap().weights)
            .unwrap();
        let b = untied
            .layout(Layer::MotionFilters)
            .expand(&untied.gaussian_derivative_h1().unwrap().weights)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn one_iteration_equals_multiscale() {
        let net = MotionNet::new(NetworkConfig { num_scales: 2, ..tiny() }).unwrap();
        let ew = net.expand(&net.init_weights(5).unwrap()).unwrap();
        let f = frames(2, 14, 14);
        let a = net.forward_multiscale(&ew, &f, Mode::Inference).unwrap();
        let b = net.forward_recurrent(&ew, &f, Mode::Inference).unwrap();
        assert_eq!(a.flow, b.flow);
    }

    #[test]
    fn warping_by_zero_flow_is_identity() {
        let f = frames(3, 9, 7);
        let w = warp_frames(&f, &FlowField::zeros(5, 4), 1).unwrap();
        assert_eq!(w, f);
    }
}
