use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{FlowField, ValidMask};

/// Mean errors over the valid pixels of one flow estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    /// Mean end-point error in pixels.
    pub epe: f64,
    /// Mean angular error in degrees.
    pub aae: f64,
    pub pixels: usize,
}

fn check(flow: &FlowField, gt: &FlowField, mask: &ValidMask) -> Result<()> {
    let dims = (flow.height(), flow.width());
    if dims != (gt.height(), gt.width()) || dims != (mask.height(), mask.width()) {
        return Err(Error::contract("flow, ground truth and mask sizes differ"));
    }
    if mask.count() == 0 {
        return Err(Error::Data("no valid pixels to evaluate".into()));
    }
    Ok(())
}

fn end_point(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Angle between `(u, v, 1)` and `(u*, v*, 1)`, in degrees.
fn angular(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (u, v, w) = (a.0, a.1, 1.0);
    let (x, y, z) = (b.0, b.1, 1.0);
    let dot = u * x + v * y + w * z;
    let cross = ((v * z - w * y).powi(2) + (w * x - u * z).powi(2) + (u * y - v * x).powi(2)).sqrt();
    cross.atan2(dot).to_degrees()
}

fn mean_over(
    flow: &FlowField,
    gt: &FlowField,
    mask: &ValidMask,
    f: impl Fn((f64, f64), (f64, f64)) -> f64,
) -> Result<f64> {
    check(flow, gt, mask)?;
    let mut sum = 0.0;
    for i in 0..flow.height() {
        for j in 0..flow.width() {
            if mask.get(i, j) {
                sum += f(flow.at(i, j), gt.at(i, j));
            }
        }
    }
    Ok(sum / mask.count() as f64)
}

pub fn epe(flow: &FlowField, gt: &FlowField, mask: &ValidMask) -> Result<f64> {
    mean_over(flow, gt, mask, end_point)
}

/// Average angular error in degrees (homogeneous 3D vectors).
pub fn aae(flow: &FlowField, gt: &FlowField, mask: &ValidMask) -> Result<f64> {
    mean_over(flow, gt, mask, angular)
}

pub fn metrics(flow: &FlowField, gt: &FlowField, mask: &ValidMask) -> Result<MetricReport> {
    Ok(MetricReport {
        epe: epe(flow, gt, mask)?,
        aae: aae(flow, gt, mask)?,
        pixels: mask.count(),
    })
}

#[derive(Serialize)]
struct Row<'a> {
    sequence: &'a str,
    epe: f64,
    aae: f64,
    pixels: usize,
}

/// Writes one row per named report followed by a pixel-weighted `mean` row.
pub fn write_metrics_csv<W: Write>(out: W, rows: &[(String, MetricReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    for (name, r) in rows {
        w.serialize(Row {
            sequence: name,
            epe: r.epe,
            aae: r.aae,
            pixels: r.pixels,
        })
        .map_err(csv_err)?;
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        w.serialize(Row {
            sequence: "mean",
            epe: rows.iter().map(|(_, r)| r.epe).sum::<f64>() / n,
            aae: rows.iter().map(|(_, r)| r.aae).sum::<f64>() / n,
            pixels: rows.iter().map(|(_, r)| r.pixels).sum(),
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
