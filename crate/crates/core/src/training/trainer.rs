use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    classification_loss, regression_loss, select_targets, Adam, PatchSampler, TrainingSample,
};
use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::field::FlowField;
use crate::flow_io::{metrics, MetricReport};
use crate::net::{CanonicalWeights, Cotangents, ExpandedWeights, Layer, Mode, MotionNet};
use crate::tensor::Tensor3;

/// Which losses a run optimizes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// Classification until plateau, then end-point-error fine-tuning.
    #[default]
    TwoPhase,
    ClassificationOnly,
    /// End-point error from the start, at the first-phase learning rate.
    RegressionOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Classification,
    Regression,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Classification => "classification",
            Phase::Regression => "regression",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainStatus {
    Running,
    Converged,
    /// The training loss stalled; reported as "N.C.".
    NotConverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub seed: u64,
    pub patch_size: usize,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    /// Epoch cap of the first phase (and of a regression-only run).
    pub max_epochs: usize,
    /// Epoch cap of the fine-tuning phase.
    pub regression_epochs: usize,
    pub learning_rate: f64,
    pub fine_tune_learning_rate: f64,
    /// A phase ends once its plateau metric improves by less than
    /// `plateau_tolerance` (relative) over `plateau_window` epochs.
    pub plateau_window: usize,
    pub plateau_tolerance: f64,
    /// A run is abandoned as not converging once the training loss improves
    /// by less than `stall_tolerance` over `stall_window` epochs.
    pub stall_window: usize,
    pub stall_tolerance: f64,
    pub loss: LossMode,
    /// Replace the configured target speeds by quantiles of the training
    /// flow magnitudes before training.
    pub select_targets: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            seed: 0,
            patch_size: 96,
            batch_size: 8,
            steps_per_epoch: 100,
            max_epochs: 200,
            regression_epochs: 20,
            learning_rate: 1e-3,
            fine_tune_learning_rate: 1e-4,
            plateau_window: 5,
            plateau_tolerance: 0.005,
            stall_window: 20,
            stall_tolerance: 0.01,
            loss: LossMode::TwoPhase,
            select_targets: true,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.batch_size == 0 || self.steps_per_epoch == 0 {
            return Err(Error::Config("patch, batch and epoch sizes must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.fine_tune_learning_rate > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.plateau_window == 0 || self.stall_window == 0 {
            return Err(Error::Config("plateau windows must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    /// Mean training loss, summed over unfolded iterations.
    pub loss: f64,
    pub iteration_losses: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heldout_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heldout_epe: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heldout_aae: Option<f64>,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingState {
    pub config: NetworkConfig,
    pub schedule: Schedule,
    pub weights: CanonicalWeights,
    pub optimizer: Adam,
    pub phase: Phase,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps; seeds the crop sampler.
    pub step: u64,
    pub status: TrainStatus,
    pub history: Vec<EpochRecord>,
}

pub struct Trainer {
    net: MotionNet,
    state: TrainingState,
}

fn relative_improvement(values: &[f64], window: usize) -> Option<f64> {
    if values.len() <= window {
        return None;
    }
    let split = values.len() - window;
    let min = |s: &[f64]| s.iter().copied().fold(f64::INFINITY, f64::min);
    let (before, recent) = (min(&values[..split]), min(&values[split..]));
    Some((before - recent) / before.abs().max(1e-12))
}

struct SampleOutcome {
    iteration_losses: Vec<f64>,
    grads: CanonicalWeights,
}

impl Trainer {
    /// Starts a run. With `select_targets`, the target speeds are first fitted
    /// to the flow magnitudes of `train`.
    pub fn new(mut config: NetworkConfig, schedule: Schedule, train: &[TrainingSample]) -> Result<Self> {
        schedule.validate()?;
        PatchSampler::new(train, schedule.patch_size, schedule.batch_size)?;
        if schedule.select_targets {
            let flows: Vec<_> = train.iter().map(|s| (&s.flow, &s.mask)).collect();
            config.target_speeds = select_targets(&flows, config.speeds)?;
        }
        let net = MotionNet::new(config.clone())?;
        let weights = net.init_weights(schedule.seed)?;
        let phase = match schedule.loss {
            LossMode::RegressionOnly => Phase::Regression,
            _ => Phase::Classification,
        };
        let optimizer = Adam::new(schedule.learning_rate, weights.num_params());
        Ok(Trainer {
            net,
            state: TrainingState {
                config,
                schedule,
                weights,
                optimizer,
                phase,
                epoch: 0,
                step: 0,
                status: TrainStatus::Running,
                history: Vec::new(),
            },
        })
    }

    pub fn resume(state: TrainingState) -> Result<Self> {
        state.schedule.validate()?;
        let net = MotionNet::new(state.config.clone())?;
        net.check_weights(&state.weights)?;
        if state.optimizer.first.len() != state.weights.num_params() {
            return Err(Error::Config("optimizer state does not match the weights".into()));
        }
        Ok(Trainer { net, state })
    }

    pub fn net(&self) -> &MotionNet {
        &self.net
    }

    pub fn state(&self) -> &TrainingState {
        &self.state
    }

    pub fn into_state(self) -> TrainingState {
        self.state
    }

    pub fn status(&self) -> TrainStatus {
        self.state.status
    }

    fn frozen(&self) -> Vec<Layer> {
        if self.state.config.variant.fixed_gaussian_h1 {
            vec![Layer::MotionFilters]
        } else {
            Vec::new()
        }
    }

    fn sample_outcome(&self, ew: &ExpandedWeights, sample: &TrainingSample) -> Result<SampleOutcome> {
        let net = &self.net;
        let iters = net.config().recurrent_iters;
        let mut grads = self.state.weights.zeros_like();
        let mut iteration_losses = vec![0.0; iters];
        let gt = sample.flow.subsample_half();
        let mask = sample.mask.subsample_half();
        if mask.count() == 0 {
            return Ok(SampleOutcome {
                iteration_losses,
                grads,
            });
        }
        let targets = net.config().targets();
        let rec = net.forward_recurrent(ew, &sample.frames, Mode::Training)?;
        for (r, it) in rec.iterations.iter().enumerate() {
            let trace = it.forward.trace.as_ref().expect("training mode");
            let g = match self.state.phase {
                Phase::Classification => {
                    let residual = gt.sub(&it.base_flow);
                    let l = classification_loss(&it.forward.distribution, &residual, &targets, &mask)?;
                    iteration_losses[r] = l.value;
                    let cot = Cotangents {
                        scores: Some(&l.grad),
                        flow: None,
                    };
                    net.backward(ew, trace, cot)?
                }
                Phase::Regression => {
                    let l = regression_loss(&it.base_flow.add(&it.forward.flow), &gt, &mask)?;
                    iteration_losses[r] = l.value;
                    let cot = Cotangents {
                        scores: None,
                        flow: Some(&l.grad),
                    };
                    net.backward(ew, trace, cot)?
                }
            };
            grads.axpy(1.0, &g);
        }
        Ok(SampleOutcome {
            iteration_losses,
            grads,
        })
    }

    /// Loss and gradient of one batch, summed over unfolded iterations and
    /// averaged over the batch. Deterministic for any thread count.
    pub fn batch_gradient(&self, batch: &[TrainingSample]) -> Result<(Vec<f64>, CanonicalWeights)> {
        let ew = self.net.expand(&self.state.weights)?;
        let outcomes: Vec<SampleOutcome> = batch
            .par_iter()
            .map(|s| self.sample_outcome(&ew, s))
            .collect::<Result<_>>()?;
        let scale = 1.0 / batch.len() as f64;
        let mut grads = self.state.weights.zeros_like();
        let mut losses = vec![0.0; self.net.config().recurrent_iters];
        for o in &outcomes {
            grads.axpy(scale, &o.grads);
            for (l, v) in losses.iter_mut().zip(&o.iteration_losses) {
                *l += scale * v;
            }
        }
        Ok((losses, grads))
    }

    /// The crops of optimizer step `step`.
    pub fn draw_batch(&self, train: &[TrainingSample], step: u64) -> Result<Vec<TrainingSample>> {
        let s = &self.state.schedule;
        let sampler = PatchSampler::new(train, s.patch_size, s.batch_size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        rng.set_stream(step);
        sampler.draw_batch(train, &mut rng)
    }

    fn step(&mut self, train: &[TrainingSample]) -> Result<Vec<f64>> {
        let batch = self.draw_batch(train, self.state.step)?;
        let (losses, grads) = self.batch_gradient(&batch)?;
        if !losses.iter().all(|v| v.is_finite()) || !grads.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite loss or gradient at step {}",
                self.state.step
            )));
        }
        let frozen = self.frozen();
        let st = &mut self.state;
        st.optimizer.step(&mut st.weights, &grads, &frozen);
        st.step += 1;
        Ok(losses)
    }

    /// Mean loss (summed over iterations), EPE and AAE on `samples`.
    fn heldout(&self, samples: &[TrainingSample]) -> Result<Option<(f64, f64, f64)>> {
        if samples.is_empty() {
            return Ok(None);
        }
        let net = &self.net;
        let ew = net.expand(&self.state.weights)?;
        let targets = net.config().targets();
        let phase = self.state.phase;
        let rows: Vec<(f64, MetricReport)> = samples
            .par_iter()
            .map(|s| {
                let rec = net.forward_recurrent(&ew, &s.frames, Mode::Inference)?;
                let gt = s.flow.subsample_half();
                let mask = s.mask.subsample_half();
                let mut loss = 0.0;
                if mask.count() > 0 {
                    for it in &rec.iterations {
                        loss += match phase {
                            Phase::Classification => {
                                let residual = gt.sub(&it.base_flow);
                                classification_loss(&it.forward.distribution, &residual, &targets, &mask)?
                                    .value
                            }
                            Phase::Regression => {
                                let pred = it.base_flow.add(&it.forward.flow);
                                regression_loss(&pred, &gt, &mask)?.value
                            }
                        };
                    }
                }
                let full = rec.flow.upsample_half(s.height(), s.width())?;
                Ok((loss, metrics(&full, &s.flow, &s.mask)?))
            })
            .collect::<Result<_>>()?;
        let n = rows.len() as f64;
        Ok(Some((
            rows.iter().map(|r| r.0).sum::<f64>() / n,
            rows.iter().map(|r| r.1.epe).sum::<f64>() / n,
            rows.iter().map(|r| r.1.aae).sum::<f64>() / n,
        )))
    }

    /// Runs one epoch and applies the phase and stall rules. On divergence
    /// the state is rolled back to the start of the epoch.
    pub fn run_epoch(&mut self, train: &[TrainingSample], heldout: &[TrainingSample]) -> Result<EpochRecord> {
        if self.state.status != TrainStatus::Running {
            return Err(Error::contract("training has already finished"));
        }
        let snapshot = (self.state.weights.clone(), self.state.optimizer.clone(), self.state.step);
        let iters = self.net.config().recurrent_iters;
        let steps = self.state.schedule.steps_per_epoch;
        let mut iteration_losses = vec![0.0; iters];
        for _ in 0..steps {
            match self.step(train) {
                Ok(l) => iteration_losses
                    .iter_mut()
                    .zip(l)
                    .for_each(|(a, b)| *a += b / steps as f64),
                Err(e) => {
                    (self.state.weights, self.state.optimizer, self.state.step) = snapshot;
                    return Err(e);
                }
            }
        }
        let held = self.heldout(heldout)?;
        if held.is_some_and(|h| !h.0.is_finite()) {
            (self.state.weights, self.state.optimizer, self.state.step) = snapshot;
            return Err(Error::Divergence("held-out loss is not finite".into()));
        }
        let record = EpochRecord {
            epoch: self.state.epoch,
            phase: self.state.phase,
            loss: iteration_losses.iter().sum(),
            iteration_losses,
            heldout_loss: held.map(|h| h.0),
            heldout_epe: held.map(|h| h.1),
            heldout_aae: held.map(|h| h.2),
        };
        log::info!(
            "epoch {} [{}] loss {:.5}{}",
            record.epoch,
            record.phase.name(),
            record.loss,
            held.map(|h| format!(" held-out loss {:.5} EPE {:.4} AAE {:.3}", h.0, h.1, h.2))
                .unwrap_or_default()
        );
        self.state.history.push(record.clone());
        self.state.epoch += 1;
        self.advance()?;
        Ok(record)
    }

    fn advance(&mut self) -> Result<()> {
        let st = &self.state;
        let s = &st.schedule;
        let current: Vec<&EpochRecord> = st.history.iter().filter(|r| r.phase == st.phase).collect();
        let train: Vec<f64> = current.iter().map(|r| r.loss).collect();
        let metric: Vec<f64> = current
            .iter()
            .map(|r| r.heldout_loss.unwrap_or(r.loss))
            .collect();
        if relative_improvement(&train, s.stall_window).is_some_and(|i| i < s.stall_tolerance) {
            log::warn!("training loss stalled; run did not converge");
            self.state.status = TrainStatus::NotConverged;
            return Ok(());
        }
        let plateau = relative_improvement(&metric, s.plateau_window)
            .is_some_and(|i| i < s.plateau_tolerance);
        let cap = match (st.phase, s.loss) {
            (Phase::Regression, LossMode::TwoPhase) => s.regression_epochs,
            _ => s.max_epochs,
        };
        if !(plateau || current.len() >= cap) {
            return Ok(());
        }
        if st.phase == Phase::Classification && s.loss == LossMode::TwoPhase {
            log::info!("switching to end-point-error fine-tuning");
            let h4 = self.net.output_layer_init(&st.config.target_speeds)?;
            let lr = s.fine_tune_learning_rate;
            let st = &mut self.state;
            *st.weights.layer_mut(Layer::Output) = h4;
            st.optimizer = Adam::new(lr, st.weights.num_params());
            st.phase = Phase::Regression;
        } else {
            self.state.status = TrainStatus::Converged;
        }
        Ok(())
    }

    /// Runs epochs until the run finishes or `max_epochs` more have passed.
    pub fn run(
        &mut self,
        train: &[TrainingSample],
        heldout: &[TrainingSample],
        max_epochs: Option<usize>,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<TrainStatus> {
        let mut done = 0;
        while self.state.status == TrainStatus::Running && max_epochs.is_none_or(|m| done < m) {
            let record = self.run_epoch(train, heldout)?;
            on_epoch(&record);
            done += 1;
        }
        Ok(self.state.status)
    }
}

/// Full-resolution flow after `iters` recurrent iterations.
pub fn predict_full(net: &MotionNet, ew: &ExpandedWeights, frames: &[Tensor3], iters: usize) -> Result<FlowField> {
    let rec = net.forward_iterations(ew, frames, iters, Mode::Inference)?;
    let f = frames
        .first()
        .ok_or_else(|| Error::contract("no frames"))?;
    rec.flow.upsample_half(f.height(), f.width())
}

/// Per-sample metrics of the full-resolution prediction.
pub fn evaluate(
    net: &MotionNet,
    weights: &CanonicalWeights,
    samples: &[TrainingSample],
    iters: usize,
) -> Result<Vec<(String, MetricReport)>> {
    if samples.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    let ew = net.expand(weights)?;
    samples
        .par_iter()
        .map(|s| {
            let flow = predict_full(net, &ew, &s.frames, iters)?;
            Ok((s.name.clone(), metrics(&flow, &s.flow, &s.mask)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improvement_needs_a_full_window() {
        assert_eq!(relative_improvement(&[1.0, 0.9], 2), None);
        let i = relative_improvement(&[1.0, 0.99, 0.98, 0.995], 2).unwrap();
        assert!((i - 0.01 / 0.99).abs() < 1e-12);
    }

    #[test]
    fn schedule_toml_roundtrip() {
        let s = Schedule {
            loss: LossMode::ClassificationOnly,
            ..Default::default()
        };
        let text = toml::to_string(&s).unwrap();
        assert!(text.contains("loss = \"classification-only\""));
        assert_eq!(toml::from_str::<Schedule>(&text).unwrap(), s);
    }
}
