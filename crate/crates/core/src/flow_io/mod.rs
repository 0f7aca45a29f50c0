//! Benchmark plumbing: `.flo` files, EPE/AAE metrics, color-wheel rendering
//! and visualization of motion distributions.

mod color;
mod dist;
mod metrics;

pub use color::{flow_to_color, percentile_magnitude};
pub use dist::{
    distribution_to_radial_plot, read_distribution, write_distribution, DIST_MAGIC,
};
pub use metrics::{aae, epe, metrics, write_metrics_csv, MetricReport};

use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{FlowField, ValidMask};

/// `202021.25` as a little-endian `f32`.
pub const FLO_MAGIC: &[u8; 4] = b"PIEH";

/// Components above this magnitude mark unknown flow.
pub const UNKNOWN_FLOW_THRESHOLD: f32 = 1e9;

/// Value written for pixels outside the validity mask.
pub const UNKNOWN_FLOW: f32 = 1e10;

/// Raw contents of a `.flo` file: interleaved `(u, v)` as stored.
///
/// Keeping the original `f32` payload makes re-saving a loaded file
/// byte-identical, whatever sentinel the source used.
#[derive(Clone, Debug, PartialEq)]
pub struct FloFile {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl FloFile {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let bad = |reason: String| Error::format("flo file", reason);
        if bytes.len() < 12 {
            return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..4] != FLO_MAGIC {
            return Err(bad("missing PIEH tag".into()));
        }
        let dim = |o: usize| i32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let (w, h) = (dim(4), dim(8));
        if w <= 0 || h <= 0 {
            return Err(bad(format!("nonpositive size {w}x{h}")));
        }
        let (w, h) = (w as usize, h as usize);
        let n = w
            .checked_mul(h)
            .and_then(|p| p.checked_mul(2))
            .ok_or_else(|| bad("size overflows".into()))?;
        let payload = &bytes[12..];
        if payload.len() != n * 4 {
            return Err(bad(format!(
                "expected {} payload bytes for {w}x{h}, found {}",
                n * 4,
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(FloFile {
            width: w,
            height: h,
            data,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.data.len() * 4);
        out.extend_from_slice(FLO_MAGIC);
        out.extend_from_slice(&(self.width as i32).to_le_bytes());
        out.extend_from_slice(&(self.height as i32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Stores `flow` as `f32`; pixels outside `mask` get [`UNKNOWN_FLOW`].
    pub fn from_flow(flow: &FlowField, mask: &ValidMask) -> Result<Self> {
        if (mask.height(), mask.width()) != (flow.height(), flow.width()) {
            return Err(Error::contract("mask and flow sizes differ"));
        }
        let mut data = Vec::with_capacity(flow.height() * flow.width() * 2);
        for i in 0..flow.height() {
            for j in 0..flow.width() {
                if mask.get(i, j) {
                    let (u, v) = flow.at(i, j);
                    data.extend([u as f32, v as f32]);
                } else {
                    data.extend([UNKNOWN_FLOW, UNKNOWN_FLOW]);
                }
            }
        }
        Ok(FloFile {
            width: flow.width(),
            height: flow.height(),
            data,
        })
    }

    fn unknown(u: f32, v: f32) -> bool {
        !(u.abs() <= UNKNOWN_FLOW_THRESHOLD && v.abs() <= UNKNOWN_FLOW_THRESHOLD)
    }

    pub fn mask(&self) -> ValidMask {
        ValidMask::from_fn(self.height, self.width, |i, j| {
            let p = (i * self.width + j) * 2;
            !Self::unknown(self.data[p], self.data[p + 1])
        })
    }

    /// The decoded field; unknown pixels read as zero.
    pub fn flow(&self) -> FlowField {
        FlowField::from_fn(self.height, self.width, |i, j| {
            let p = (i * self.width + j) * 2;
            let (u, v) = (self.data[p], self.data[p + 1]);
            if Self::unknown(u, v) {
                (0.0, 0.0)
            } else {
                (u as f64, v as f64)
            }
        })
    }
}

pub fn read_flo(bytes: &[u8]) -> Result<(FlowField, ValidMask)> {
    let f = FloFile::parse(bytes)?;
    Ok((f.flow(), f.mask()))
}

pub fn write_flo(flow: &FlowField, mask: &ValidMask) -> Result<Vec<u8>> {
    Ok(FloFile::from_flow(flow, mask)?.to_bytes())
}

pub fn read_flo_file(path: impl AsRef<Path>) -> Result<(FlowField, ValidMask)> {
    read_flo(&std::fs::read(path)?)
}

pub fn write_flo_file(path: impl AsRef<Path>, flow: &FlowField, mask: &ValidMask) -> Result<()> {
    std::fs::write(path, write_flo(flow, mask)?)?;
    Ok(())
}
