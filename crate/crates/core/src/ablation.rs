//! Named architecture and training ablations.
//!
//! Each preset modifies a base configuration and schedule in exactly one
//! respect. `full` leaves both untouched.

use crate::config::{NetworkConfig, Rectifier};
use crate::error::{Error, Result};
use crate::training::{LossMode, Schedule};

#[derive(Clone, Copy, Debug)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    /// The published result of this row did not converge.
    pub expected_not_converged: bool,
    apply: fn(&mut NetworkConfig, &mut Schedule),
}

impl Preset {
    pub fn apply(&self, base: &NetworkConfig, schedule: &Schedule) -> Result<(NetworkConfig, Schedule)> {
        let (mut config, mut schedule) = (base.clone(), schedule.clone());
        (self.apply)(&mut config, &mut schedule);
        config.validate()?;
        schedule.validate()?;
        Ok((config, schedule))
    }
}

const fn preset(
    name: &'static str,
    description: &'static str,
    expected_not_converged: bool,
    apply: fn(&mut NetworkConfig, &mut Schedule),
) -> Preset {
    Preset {
        name,
        description,
        expected_not_converged,
        apply,
    }
}

pub const PRESETS: &[Preset] = &[
    preset("full", "unmodified model", false, |_, _| ()),
    preset("frames-2", "two input frames", false, |c, _| c.frames = 2),
    preset("frames-5", "five input frames", false, |c, _| c.frames = 5),
    preset("no-center-surround", "no center-surround filter", true, |c, _| {
        c.variant.center_surround = false
    }),
    preset("no-local-norm", "no local contrast normalization", false, |c, _| {
        c.variant.local_norm = false
    }),
    preset(
        "gauss-deriv-h1",
        "fixed Gaussian-derivative motion filters",
        false,
        |c, _| c.variant.fixed_gaussian_h1 = true
    ),
    preset(
        "no-orientation-norm",
        "no L1 normalization over orientations",
        true,
        |c, _| c.variant.orientation_norm = false
    ),
    preset("no-phase-pooling", "no max-pooling for phase invariance", false, |c, _| {
        c.variant.phase_pooling = false
    }),
    preset("relu-after-conv1", "ReLU instead of squaring", true, |c, _| {
        c.variant.rectifier = Rectifier::Relu
    }),
    preset("no-rotation-ties", "all rotated kernels trained independently", true, |c, _| {
        c.variant.rotation_ties = false
    }),
    preset("orientations-6", "six orientations", false, |c, _| c.orientations = 6),
    preset("orientations-8", "eight orientations", false, |c, _| c.orientations = 8),
    preset("orientations-16", "sixteen orientations", false, |c, _| c.orientations = 16),
    preset("classification-only", "classification loss only", false, |_, s| {
        s.loss = LossMode::ClassificationOnly
    }),
    preset("regression-only", "end-point-error loss only", false, |_, s| {
        s.loss = LossMode::RegressionOnly
    }),
    preset("scales-4", "four scales", false, |c, _| c.num_scales = 4),
    preset("scales-8", "eight scales", false, |c, _| c.num_scales = 8),
    preset("scales-16", "sixteen scales", false, |c, _| c.num_scales = 16),
    preset("iterations-2", "two recurrent iterations", false, |c, _| c.recurrent_iters = 2),
    preset("iterations-3", "three recurrent iterations", false, |c, _| c.recurrent_iters = 3),
    preset("iterations-4", "four recurrent iterations", false, |c, _| c.recurrent_iters = 4),
    preset("iterations-5", "five recurrent iterations", false, |c, _| c.recurrent_iters = 5),
];

pub fn find_preset(name: &str) -> Result<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name).ok_or_else(|| {
        let known: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        Error::Config(format!("unknown preset {name:?}; known presets: {}", known.join(", ")))
    })
}
