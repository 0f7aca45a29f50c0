//! Versioned binary container for a training run.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 4 | magic `MNCK` |
//! | 4 | `u32` format version (currently 1) |
//! | 8 | `u64` header length `n` |
//! | n | UTF-8 TOML header: `[meta]` (phase, epoch, step, status), `[config]`, `[schedule]`, `[optimizer]` hyper-parameters and `[[history]]` |
//! | 8 | `u64` parameter count `p` |
//! | 8p | canonical parameters as `f64`, layers `h1..h4`, each weights then biases |
//! | 8 | `u64` moment count `q` (either `p` or 0) |
//! | 16q | first then second optimizer moments as `f64` |
//!
//! Every float in the TOML header is written with the shortest decimal
//! representation that parses back to the same bits, so a save/load round
//! trip is exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::net::MotionNet;
use crate::training::{Adam, EpochRecord, Phase, Schedule, TrainStatus, TrainingState};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MNCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    phase: Phase,
    epoch: usize,
    step: u64,
    status: TrainStatus,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    steps: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: Meta,
    config: NetworkConfig,
    schedule: Schedule,
    optimizer: OptimizerHeader,
    #[serde(default)]
    history: Vec<EpochRecord>,
}

fn push_floats(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(state: &TrainingState) -> Vec<u8> {
    let header = Header {
        meta: Meta {
            phase: state.phase,
            epoch: state.epoch,
            step: state.step,
            status: state.status,
        },
        config: state.config.clone(),
        schedule: state.schedule.clone(),
        optimizer: OptimizerHeader {
            learning_rate: state.optimizer.learning_rate,
            beta1: state.optimizer.beta1,
            beta2: state.optimizer.beta2,
            epsilon: state.optimizer.epsilon,
            steps: state.optimizer.steps,
        },
        history: state.history.clone(),
    };
    let text = toml::to_string(&header).expect("checkpoint header serializes");
    let params = state.weights.to_flat();
    let (first, second) = state.optimizer.moments();
    let mut out = Vec::with_capacity(32 + text.len() + 8 * (params.len() + 2 * first.len()));
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    push_floats(&mut out, &params);
    out.extend_from_slice(&(first.len() as u64).to_le_bytes());
    push_floats(&mut out, first);
    push_floats(&mut out, second);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("checkpoint", "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::format("checkpoint", "length overflows"))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| Error::format("checkpoint", "length overflows"))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainingState> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::format("checkpoint", "missing MNCK magic"));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::format("checkpoint", format!("unsupported version {version}")));
    }
    let len = r.u64()?;
    let text = std::str::from_utf8(r.take(len)?)
        .map_err(|e| Error::format("checkpoint", format!("header is not UTF-8: {e}")))?;
    let header: Header =
        toml::from_str(text).map_err(|e| Error::format("checkpoint", format!("header: {e}")))?;
    header.config.validate()?;
    let net = MotionNet::new(header.config.clone())?;
    let mut weights = net.zero_weights();
    let count = r.u64()?;
    if count != weights.num_params() {
        return Err(Error::format(
            "checkpoint",
            format!("{count} parameters stored, configuration needs {}", weights.num_params()),
        ));
    }
    weights.assign_flat(&r.floats(count)?)?;
    let moments = r.u64()?;
    if moments != 0 && moments != count {
        return Err(Error::format("checkpoint", "optimizer state does not match the parameters"));
    }
    let first = r.floats(moments)?;
    let second = r.floats(moments)?;
    if r.pos != bytes.len() {
        return Err(Error::format("checkpoint", "trailing bytes"));
    }
    let h = header.optimizer;
    let mut optimizer = Adam::new(h.learning_rate, count);
    optimizer.beta1 = h.beta1;
    optimizer.beta2 = h.beta2;
    optimizer.epsilon = h.epsilon;
    optimizer.steps = h.steps;
    if moments != 0 {
        optimizer.set_moments(first, second)?;
    }
    Ok(TrainingState {
        config: header.config,
        schedule: header.schedule,
        weights,
        optimizer,
        phase: header.meta.phase,
        epoch: header.meta.epoch,
        step: header.meta.step,
        status: header.meta.status,
        history: header.history,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, state: &TrainingState) -> Result<()> {
    std::fs::write(path, encode_checkpoint(state))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainingState> {
    decode_checkpoint(&std::fs::read(path)?)
}
