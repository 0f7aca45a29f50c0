use super::{clamp_index, Kernel3, PaddingPolicy, Tensor3};
use crate::error::{Error, Result};

/// Single-plane 2D correlation with replicate-border padding.
pub fn conv2d(input: &Tensor3, kernel: &Kernel3, padding: PaddingPolicy) -> Result<Tensor3> {
    let PaddingPolicy::ReplicateBorder = padding;
    check_plane_kernel(input, kernel)?;
    let (h, w) = (input.height(), input.width());
    let (ry, rx) = ((kernel.size_y() / 2) as isize, (kernel.size_x() / 2) as isize);
    let src = input.data();
    let mut out = Tensor3::zeros(h, w, 1);
    let dst = out.data_mut();
    for a in 0..kernel.size_y() {
        for b in 0..kernel.size_x() {
            let wt = kernel.at(a, b, 0);
            if wt == 0.0 {
                continue;
            }
            let cols: Vec<usize> = (0..w)
                .map(|j| clamp_index(j as isize + b as isize - rx, w))
                .collect();
            for i in 0..h {
                let row = clamp_index(i as isize + a as isize - ry, h) * w;
                let out_row = &mut dst[i * w..(i + 1) * w];
                for (o, &c) in out_row.iter_mut().zip(&cols) {
                    *o += wt * src[row + c];
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`conv2d`]: returns `(d input, d kernel)` for upstream `grad_out`.
pub fn conv2d_grad(
    input: &Tensor3,
    kernel: &Kernel3,
    grad_out: &Tensor3,
) -> Result<(Tensor3, Kernel3)> {
    check_plane_kernel(input, kernel)?;
    if !grad_out.same_shape(input) {
        return Err(Error::contract("conv2d_grad: upstream gradient shape mismatch"));
    }
    let (h, w) = (input.height(), input.width());
    let (ry, rx) = ((kernel.size_y() / 2) as isize, (kernel.size_x() / 2) as isize);
    let src = input.data();
    let g = grad_out.data();
    let mut d_in = Tensor3::zeros(h, w, 1);
    let mut d_k = Kernel3::zeros(kernel.size_y(), kernel.size_x(), 1)?;
    for a in 0..kernel.size_y() {
        for b in 0..kernel.size_x() {
            let wt = kernel.at(a, b, 0);
            let cols: Vec<usize> = (0..w)
                .map(|j| clamp_index(j as isize + b as isize - rx, w))
                .collect();
            let mut acc = 0.0;
            let di = d_in.data_mut();
            for i in 0..h {
                let row = clamp_index(i as isize + a as isize - ry, h) * w;
                for (j, &c) in cols.iter().enumerate() {
                    let gv = g[i * w + j];
                    acc += gv * src[row + c];
                    di[row + c] += wt * gv;
                }
            }
            let o = d_k.offset(a, b, 0);
            d_k.weights_mut()[o] = acc;
        }
    }
    Ok((d_in, d_k))
}

fn check_plane_kernel(input: &Tensor3, kernel: &Kernel3) -> Result<()> {
    if input.channels() != 1 {
        return Err(Error::contract(format!(
            "conv2d expects a single-channel plane, got {} channels",
            input.channels()
        )));
    }
    if kernel.depth() != 1 {
        return Err(Error::contract("conv2d expects a depth-1 kernel"));
    }
    Ok(())
}

/// A bank of `out_channels` kernels, each `size_y x size_x x in_channels`.
///
/// Weights are stored tap-major: `((a * size_x + b) * in_channels + c) *
/// out_channels + o`, so every tap is a contiguous `in x out` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelBank {
    size_y: usize,
    size_x: usize,
    in_channels: usize,
    out_channels: usize,
    weights: Vec<f64>,
}

impl KernelBank {
    pub fn zeros(size_y: usize, size_x: usize, in_channels: usize, out_channels: usize) -> Self {
        assert!(size_y % 2 == 1 && size_x % 2 == 1, "bank extents must be odd");
        assert!(in_channels > 0 && out_channels > 0);
        KernelBank {
            size_y,
            size_x,
            in_channels,
            out_channels,
            weights: vec![0.0; size_y * size_x * in_channels * out_channels],
        }
    }

    /// Packs per-output kernels (each of depth `in_channels`) into a bank.
    pub fn from_kernels(kernels: &[Kernel3]) -> Result<Self> {
        let first = kernels
            .first()
            .ok_or_else(|| Error::contract("empty kernel bank"))?;
        let (sy, sx, depth) = (first.size_y(), first.size_x(), first.depth());
        if kernels
            .iter()
            .any(|k| (k.size_y(), k.size_x(), k.depth()) != (sy, sx, depth))
        {
            return Err(Error::contract("kernels in a bank must share a shape"));
        }
        let mut bank = Self::zeros(sy, sx, depth, kernels.len());
        for (o, k) in kernels.iter().enumerate() {
            for a in 0..sy {
                for b in 0..sx {
                    for c in 0..depth {
                        let idx = bank.offset(a, b, c, o);
                        bank.weights[idx] = k.at(a, b, c);
                    }
                }
            }
        }
        Ok(bank)
    }

    /// Wraps tap-major weights, see the type documentation for the layout.
    pub fn from_weights(
        size_y: usize,
        size_x: usize,
        in_channels: usize,
        out_channels: usize,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if weights.len() != size_y * size_x * in_channels * out_channels {
            return Err(Error::contract("bank weight count does not match its shape"));
        }
        let mut bank = Self::zeros(size_y, size_x, in_channels, out_channels);
        bank.weights = weights;
        Ok(bank)
    }

    /// The sub-bank acting on the first `in_channels` input channels.
    pub fn input_prefix(&self, in_channels: usize) -> KernelBank {
        assert!(in_channels <= self.in_channels);
        let mut out = Self::zeros(self.size_y, self.size_x, in_channels, self.out_channels);
        let n = in_channels * self.out_channels;
        for (t, dst) in out.weights.chunks_exact_mut(n).enumerate() {
            dst.copy_from_slice(&self.tap(t / self.size_x, t % self.size_x)[..n]);
        }
        out
    }

    /// Adds `prefix` (a bank over the first input channels) into this bank.
    pub fn add_input_prefix(&mut self, prefix: &KernelBank) {
        assert_eq!(
            (prefix.size_y, prefix.size_x, prefix.out_channels),
            (self.size_y, self.size_x, self.out_channels)
        );
        let full = self.in_channels * self.out_channels;
        let n = prefix.in_channels * prefix.out_channels;
        for (t, src) in prefix.weights.chunks_exact(n).enumerate() {
            let dst = &mut self.weights[t * full..t * full + n];
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
    }

    pub fn kernel(&self, o: usize) -> Kernel3 {
        Kernel3::from_fn(self.size_y, self.size_x, self.in_channels, |a, b, c| {
            self.weights[self.offset(a, b, c, o)]
        })
        .expect("bank extents are odd")
    }

    pub fn size_y(&self) -> usize {
        self.size_y
    }

    pub fn size_x(&self) -> usize {
        self.size_x
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    #[inline]
    pub fn offset(&self, a: usize, b: usize, c: usize, o: usize) -> usize {
        ((a * self.size_x + b) * self.in_channels + c) * self.out_channels + o
    }

    fn tap(&self, a: usize, b: usize) -> &[f64] {
        let n = self.in_channels * self.out_channels;
        let start = (a * self.size_x + b) * n;
        &self.weights[start..start + n]
    }
}

/// One output plane: `conv3d(x, k) = sum_c x[:, :, c] * k[:, :, c] + bias`.
pub fn conv3d(
    input: &Tensor3,
    kernel: &Kernel3,
    bias: f64,
    padding: PaddingPolicy,
) -> Result<Tensor3> {
    let PaddingPolicy::ReplicateBorder = padding;
    if kernel.depth() != input.channels() {
        return Err(Error::contract(format!(
            "conv3d kernel depth {} does not match {} input channels",
            kernel.depth(),
            input.channels()
        )));
    }
    let bank = KernelBank::from_kernels(std::slice::from_ref(kernel))?;
    conv_bank(input, &bank, &[bias])
}

#[derive(Clone, Debug)]
pub struct Conv3dGrads {
    pub input: Tensor3,
    pub kernel: Kernel3,
    pub bias: f64,
}

pub fn conv3d_grad(input: &Tensor3, kernel: &Kernel3, grad_out: &Tensor3) -> Result<Conv3dGrads> {
    if kernel.depth() != input.channels() {
        return Err(Error::contract("conv3d_grad: kernel depth mismatch"));
    }
    let bank = KernelBank::from_kernels(std::slice::from_ref(kernel))?;
    let g = conv_bank_grad(input, &bank, grad_out, true)?;
    Ok(Conv3dGrads {
        input: g.input.expect("input gradient requested"),
        kernel: g.weights.kernel(0),
        bias: g.biases[0],
    })
}

/// Replicate-padded copy of `input`, `ry` rows and `rx` columns on each side.
fn pad_replicate(input: &Tensor3, ry: usize, rx: usize) -> Tensor3 {
    let (h, w, c) = input.shape();
    if ry == 0 && rx == 0 {
        return input.clone();
    }
    let (hp, wp) = (h + 2 * ry, w + 2 * rx);
    let mut out = Tensor3::zeros(hp, wp, c);
    let src = input.data();
    let dst = out.data_mut();
    for i in 0..hp {
        let si = clamp_index(i as isize - ry as isize, h);
        for j in 0..wp {
            let sj = clamp_index(j as isize - rx as isize, w);
            let s = (si * w + sj) * c;
            let d = (i * wp + j) * c;
            dst[d..d + c].copy_from_slice(&src[s..s + c]);
        }
    }
    out
}

/// Adjoint of [`pad_replicate`]: folds border copies back onto their source.
fn unpad_replicate_adjoint(padded: &Tensor3, ry: usize, rx: usize) -> Tensor3 {
    let (hp, wp, c) = padded.shape();
    let (h, w) = (hp - 2 * ry, wp - 2 * rx);
    let mut out = Tensor3::zeros(h, w, c);
    let src = padded.data();
    let dst = out.data_mut();
    for i in 0..hp {
        let si = clamp_index(i as isize - ry as isize, h);
        for j in 0..wp {
            let sj = clamp_index(j as isize - rx as isize, w);
            let d = (si * w + sj) * c;
            let s = (i * wp + j) * c;
            for k in 0..c {
                dst[d + k] += src[s + k];
            }
        }
    }
    out
}

/// `C (m x n) += A (m x k) * B (k x n)` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
    rsc: isize,
    csc: isize,
) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
        (rows as isize - 1) * rs + (cols as isize - 1) * cs + 1
    };
    assert!(span(m, k, rsa, csa) as usize <= a.len());
    assert!(span(k, n, rsb, csb) as usize <= b.len());
    assert!(span(m, n, rsc, csc) as usize <= c.len());
    // SAFETY: the asserts above bound every strided access inside the slices,
    // all strides are non-negative and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

// Outputs are computed on the padded-width grid so that every tap is one
// GEMM over a contiguous run of the padded buffer; the `wp - w` extra
// columns per row are discarded. `m` stops at the last valid output pixel
// so no tap reads past the end of the padded buffer.
struct WideGrid {
    wp: usize,
    m: usize,
}

impl WideGrid {
    fn new(h: usize, w: usize, rx: usize) -> Self {
        let wp = w + 2 * rx;
        WideGrid {
            wp,
            m: (h - 1) * wp + w,
        }
    }
}

/// Convolves `input` with every kernel of the bank, adding one bias per
/// output channel. Output has the input's spatial size and
/// `bank.out_channels()` channels.
pub fn conv_bank(input: &Tensor3, bank: &KernelBank, biases: &[f64]) -> Result<Tensor3> {
    if bank.in_channels() != input.channels() {
        return Err(Error::contract(format!(
            "kernel bank expects {} input channels, got {}",
            bank.in_channels(),
            input.channels()
        )));
    }
    if biases.len() != bank.out_channels() {
        return Err(Error::contract("one bias per output channel required"));
    }
    let (h, w, cin) = input.shape();
    let cout = bank.out_channels();
    let (ry, rx) = (bank.size_y() / 2, bank.size_x() / 2);
    let padded = pad_replicate(input, ry, rx);
    let grid = WideGrid::new(h, w, rx);
    let mut wide = vec![0.0; grid.m * cout];
    for a in 0..bank.size_y() {
        for b in 0..bank.size_x() {
            let start = (a * grid.wp + b) * cin;
            gemm_acc(
                grid.m,
                cin,
                cout,
                &padded.data()[start..],
                cin as isize,
                1,
                bank.tap(a, b),
                cout as isize,
                1,
                &mut wide,
                cout as isize,
                1,
            );
        }
    }
    let mut out = Tensor3::zeros(h, w, cout);
    let dst = out.data_mut();
    for i in 0..h {
        for j in 0..w {
            let s = (i * grid.wp + j) * cout;
            let d = (i * w + j) * cout;
            for (o, (v, bias)) in dst[d..d + cout].iter_mut().zip(biases).enumerate() {
                *v = wide[s + o] + bias;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct BankGrads {
    /// Present only when requested; the first network layer skips it.
    pub input: Option<Tensor3>,
    pub weights: KernelBank,
    pub biases: Vec<f64>,
}

/// Adjoint of [`conv_bank`] with respect to its input, weights and biases.
pub fn conv_bank_grad(
    input: &Tensor3,
    bank: &KernelBank,
    grad_out: &Tensor3,
    want_input: bool,
) -> Result<BankGrads> {
    let (h, w, cin) = input.shape();
    let cout = bank.out_channels();
    if bank.in_channels() != cin {
        return Err(Error::contract("conv_bank_grad: input channel mismatch"));
    }
    if grad_out.shape() != (h, w, cout) {
        return Err(Error::contract("conv_bank_grad: upstream gradient shape mismatch"));
    }
    let (ry, rx) = (bank.size_y() / 2, bank.size_x() / 2);
    let padded = pad_replicate(input, ry, rx);
    let grid = WideGrid::new(h, w, rx);

    let mut g_wide = vec![0.0; grid.m * cout];
    let g = grad_out.data();
    let mut biases = vec![0.0; cout];
    for i in 0..h {
        for j in 0..w {
            let s = (i * w + j) * cout;
            let d = (i * grid.wp + j) * cout;
            g_wide[d..d + cout].copy_from_slice(&g[s..s + cout]);
            for (acc, v) in biases.iter_mut().zip(&g[s..s + cout]) {
                *acc += v;
            }
        }
    }

    let mut d_bank = KernelBank::zeros(bank.size_y(), bank.size_x(), cin, cout);
    let mut d_padded = want_input.then(|| Tensor3::zeros(padded.height(), padded.width(), cin));
    let tap_len = cin * cout;
    for a in 0..bank.size_y() {
        for b in 0..bank.size_x() {
            let start = (a * grid.wp + b) * cin;
            let t0 = (a * bank.size_x() + b) * tap_len;
            // d tap (cin x cout) += A^T (cin x m) * G (m x cout)
            gemm_acc(
                cin,
                grid.m,
                cout,
                &padded.data()[start..],
                1,
                cin as isize,
                &g_wide,
                cout as isize,
                1,
                &mut d_bank.weights[t0..t0 + tap_len],
                cout as isize,
                1,
            );
            if let Some(dp) = d_padded.as_mut() {
                // d A (m x cin) += G (m x cout) * tap^T (cout x cin)
                gemm_acc(
                    grid.m,
                    cout,
                    cin,
                    &g_wide,
                    cout as isize,
                    1,
                    bank.tap(a, b),
                    1,
                    cout as isize,
                    &mut dp.data_mut()[start..],
                    cin as isize,
                    1,
                );
            }
        }
    }
    let input_grad = d_padded.map(|dp| unpad_replicate_adjoint(&dp, ry, rx));
    Ok(BankGrads {
        input: input_grad,
        weights: d_bank,
        biases,
    })
}

/// Per-channel separable filter: vertical taps `ky`, then horizontal taps
/// `kx`, replicate-border padding. Equals [`conv2d`] with the outer-product
/// kernel `ky ⊗ kx` applied to every channel.
pub fn filter_separable(input: &Tensor3, ky: &[f64], kx: &[f64]) -> Tensor3 {
    assert!(ky.len() % 2 == 1 && kx.len() % 2 == 1, "separable taps must be odd");
    let (h, w, c) = input.shape();
    let (ry, rx) = ((ky.len() / 2) as isize, (kx.len() / 2) as isize);
    let src = input.data();
    let mut tmp = Tensor3::zeros(h, w, c);
    {
        let t = tmp.data_mut();
        for (a, &wt) in ky.iter().enumerate() {
            for i in 0..h {
                let si = clamp_index(i as isize + a as isize - ry, h);
                let srow = &src[si * w * c..(si + 1) * w * c];
                let trow = &mut t[i * w * c..(i + 1) * w * c];
                for (d, s) in trow.iter_mut().zip(srow) {
                    *d += wt * s;
                }
            }
        }
    }
    let mut out = Tensor3::zeros(h, w, c);
    {
        let t = tmp.data();
        let o = out.data_mut();
        for (b, &wt) in kx.iter().enumerate() {
            for j in 0..w {
                let sj = clamp_index(j as isize + b as isize - rx, w);
                for i in 0..h {
                    let s = (i * w + sj) * c;
                    let d = (i * w + j) * c;
                    for k in 0..c {
                        o[d + k] += wt * t[s + k];
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`filter_separable`].
pub fn filter_separable_adjoint(grad_out: &Tensor3, ky: &[f64], kx: &[f64]) -> Tensor3 {
    let (h, w, c) = grad_out.shape();
    let (ry, rx) = ((ky.len() / 2) as isize, (kx.len() / 2) as isize);
    let g = grad_out.data();
    let mut tmp = Tensor3::zeros(h, w, c);
    {
        let t = tmp.data_mut();
        for (b, &wt) in kx.iter().enumerate() {
            for j in 0..w {
                let sj = clamp_index(j as isize + b as isize - rx, w);
                for i in 0..h {
                    let s = (i * w + j) * c;
                    let d = (i * w + sj) * c;
                    for k in 0..c {
                        t[d + k] += wt * g[s + k];
                    }
                }
            }
        }
    }
    let mut out = Tensor3::zeros(h, w, c);
    {
        let t = tmp.data();
        let o = out.data_mut();
        for (a, &wt) in ky.iter().enumerate() {
            for i in 0..h {
                let si = clamp_index(i as isize + a as isize - ry, h);
                for x in 0..w * c {
                    o[si * w * c + x] += wt * t[i * w * c + x];
                }
            }
        }
    }
    out
}
