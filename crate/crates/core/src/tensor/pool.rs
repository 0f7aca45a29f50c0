use super::{clamp_index, Tensor3};
use crate::error::{Error, Result};

/// Winning input offsets of a [`maxpool`] call, one per output element.
#[derive(Clone, Debug, PartialEq)]
pub struct ArgmaxRecord {
    input_shape: (usize, usize, usize),
    output_shape: (usize, usize, usize),
    winners: Vec<usize>,
}

impl ArgmaxRecord {
    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    pub fn output_shape(&self) -> (usize, usize, usize) {
        self.output_shape
    }

    pub fn winners(&self) -> &[usize] {
        &self.winners
    }
}

/// Offset of the first tap of a `window`-wide pooling window relative to its
/// center. Odd windows are symmetric; even windows extend one more tap to
/// the right/bottom.
pub(crate) fn window_start(window: usize) -> isize {
    -(((window - 1) / 2) as isize)
}

/// Per-channel max over `window x window` regions centered on `(2i, 2j)`,
/// stride 2, replicate border. Output is `ceil(H/2) x ceil(W/2)`.
/// Ties go to the first tap in row-major scan order.
pub fn maxpool(input: &Tensor3, window: usize) -> Result<(Tensor3, ArgmaxRecord)> {
    if window == 0 {
        return Err(Error::contract("pooling window must be at least 1"));
    }
    let (h, w, c) = input.shape();
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let start = window_start(window);
    let src = input.data();
    let mut out = Tensor3::zeros(ho, wo, c);
    let mut winners = vec![0usize; ho * wo * c];
    for i in 0..ho {
        for j in 0..wo {
            for k in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0;
                for a in 0..window as isize {
                    let si = clamp_index(2 * i as isize + start + a, h);
                    for b in 0..window as isize {
                        let sj = clamp_index(2 * j as isize + start + b, w);
                        let idx = (si * w + sj) * c + k;
                        if src[idx] > best {
                            best = src[idx];
                            arg = idx;
                        }
                    }
                }
                let o = (i * wo + j) * c + k;
                out.data_mut()[o] = best;
                winners[o] = arg;
            }
        }
    }
    let record = ArgmaxRecord {
        input_shape: (h, w, c),
        output_shape: (ho, wo, c),
        winners,
    };
    Ok((out, record))
}

/// Routes each upstream gradient to the input element that won its window.
pub fn maxpool_grad(record: &ArgmaxRecord, grad_out: &Tensor3) -> Result<Tensor3> {
    if grad_out.shape() != record.output_shape {
        return Err(Error::contract("maxpool_grad: upstream gradient shape mismatch"));
    }
    let (h, w, c) = record.input_shape;
    let mut d = Tensor3::zeros(h, w, c);
    let dd = d.data_mut();
    for (&src, &g) in record.winners.iter().zip(grad_out.data()) {
        dd[src] += g;
    }
    Ok(d)
}
