//! Rotation-tied weight banks.
//!
//! A tied layer maps `O_in` input orientation groups of `M` channels to `P`
//! output orientation groups of `N` channels. The 2D slice acting on input
//! channel `(i, m)` for output channel `(j, n)` is generated from one
//! canonical slice at orientation 0:
//!
//! ```text
//! h[i, m, j, n] = rot(θ_j) g[class(θ_j - θ_i), m, n]
//! ```
//!
//! where `class` identifies relative angles with equal cosine, i.e. `|Δθ|`
//! folded into `[0, π]`. Kernels for the same relative orientation are thus
//! rotated copies of each other, which makes the network equivariant to
//! rotations of the input by multiples of `2π / O`.
//!
//! Classes are found by enumerating every `(i, j)` pair with exact integer
//! arithmetic on fractions of a turn. For even `O` this yields `O/2 + 1`
//! classes (both `0` and `π` are their own class), one more than the
//! commonly quoted `ceil(O/2)`; for odd `O` the two counts agree.
//!
//! Channel `k` of a feature map with `G` orientation groups belongs to
//! group `k % G` and holds group-member `k / G`.

use crate::error::{Error, Result};
use crate::tensor::{KernelBank, RotationPlan};

/// Orientation layout of one side of a tied layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrientationSet {
    /// A single rotation-invariant group, such as the stack of input frames.
    /// Every output group sees it at relative angle 0.
    Isotropic,
    /// `n` regular orientations `2πk / n`.
    Regular(usize),
    /// Two groups at angles `0` and `π/2`: the `u` and `v` flow components.
    FlowComponents,
}

impl OrientationSet {
    pub fn groups(self) -> usize {
        match self {
            OrientationSet::Isotropic => 1,
            OrientationSet::Regular(n) => n,
            OrientationSet::FlowComponents => 2,
        }
    }

    /// Angle of group `k` as `(numerator, denominator)` of a full turn.
    pub fn turns(self, k: usize) -> (i64, i64) {
        match self {
            OrientationSet::Isotropic => (0, 1),
            OrientationSet::Regular(n) => (k as i64, n as i64),
            OrientationSet::FlowComponents => (k as i64, 4),
        }
    }

    pub fn angle(self, k: usize) -> f64 {
        let (num, den) = self.turns(k);
        std::f64::consts::TAU * num as f64 / den as f64
    }
}

/// How the expanded channels of a layer respond to a half-turn of the input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    /// Scalar features: slices depend on the relative angle only.
    Even,
    /// Vector components: additionally `h(Δ + π) = -h(Δ)`, which forces the
    /// `Δ = π/2` class to zero. Used by the flow output layer, where a
    /// rotated input must rotate the output vectors too.
    Odd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TiedLayerSpec {
    pub input: OrientationSet,
    pub output: OrientationSet,
    /// `M`: channels per input orientation group.
    pub in_per_group: usize,
    /// `N`: channels per output orientation group.
    pub out_per_group: usize,
    /// Square spatial extent of each slice; 1 for pixelwise layers.
    pub size: usize,
    pub parity: Parity,
    /// When false every expanded slice is an independent parameter.
    pub tied: bool,
    pub has_bias: bool,
}

impl TiedLayerSpec {
    pub fn in_channels(&self) -> usize {
        self.input.groups() * self.in_per_group
    }

    pub fn out_channels(&self) -> usize {
        self.output.groups() * self.out_per_group
    }

    fn spatially_rotated(&self) -> bool {
        self.tied && self.size > 1
    }
}

/// How [`TieLayout::fold_gradients`] combines the copies of a tied slice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FoldMode {
    /// Exact adjoint of [`TieLayout::expand`]: the true gradient.
    Sum,
    /// Sum divided by the number of tied copies.
    Mean,
}

/// Expansion and folding tables for one tied layer.
#[derive(Clone, Debug)]
pub struct TieLayout {
    spec: TiedLayerSpec,
    /// Folded relative angle of each class, in units of `1 / angle_den` turns.
    class_angles: Vec<i64>,
    angle_den: i64,
    /// `(class, sign)` per `(i, j)` pair, `None` where the slice is forced to zero.
    table: Vec<Option<(usize, f64)>>,
    tie_counts: Vec<usize>,
    plans: Vec<RotationPlan>,
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl TieLayout {
    pub fn new(spec: TiedLayerSpec) -> Result<Self> {
        if spec.in_per_group == 0 || spec.out_per_group == 0 {
            return Err(Error::Config("tied layer group sizes must be positive".into()));
        }
        if spec.size % 2 == 0 {
            return Err(Error::Config("tied layer kernel size must be odd".into()));
        }
        if let OrientationSet::Regular(0) = spec.input {
            return Err(Error::Config("orientation count must be positive".into()));
        }
        if let OrientationSet::Regular(0) = spec.output {
            return Err(Error::Config("orientation count must be positive".into()));
        }
        let (gi, go) = (spec.input.groups(), spec.output.groups());

        let den_in = spec.input.turns(0).1;
        let den_out = spec.output.turns(0).1;
        // common denominator, doubled so that a quarter of it is integral
        let mut den = den_in / gcd(den_in, den_out) * den_out;
        if den % 4 != 0 {
            den *= 4 / gcd(den, 4);
        }

        let folded = |i: usize, j: usize| -> i64 {
            if spec.input == OrientationSet::Isotropic {
                return 0;
            }
            let (ni, di) = spec.input.turns(i);
            let (nj, dj) = spec.output.turns(j);
            let d = (nj * (den / dj) - ni * (den / di)).rem_euclid(den);
            d.min(den - d)
        };

        let mut class_angles: Vec<i64> = Vec::new();
        let mut table = vec![None; gi * go];
        if spec.tied {
            let mut raw = Vec::with_capacity(gi * go);
            for i in 0..gi {
                for j in 0..go {
                    let f = folded(i, j);
                    let entry = match spec.parity {
                        Parity::Even => Some((f, 1.0)),
                        Parity::Odd => {
                            let quarter = den / 4;
                            match (2 * f).cmp(&(2 * quarter)) {
                                std::cmp::Ordering::Less => Some((f, 1.0)),
                                std::cmp::Ordering::Equal => None,
                                std::cmp::Ordering::Greater => Some((den / 2 - f, -1.0)),
                            }
                        }
                    };
                    if let Some((a, _)) = entry {
                        if !class_angles.contains(&a) {
                            class_angles.push(a);
                        }
                    }
                    raw.push(entry);
                }
            }
            class_angles.sort_unstable();
            for (slot, entry) in table.iter_mut().zip(raw) {
                *slot = entry.map(|(a, s)| {
                    let c = class_angles.binary_search(&a).expect("class was recorded");
                    (c, s)
                });
            }
        } else {
            for (p, slot) in table.iter_mut().enumerate() {
                *slot = Some((p, 1.0));
            }
            class_angles = (0..(gi * go) as i64).collect();
        }

        let mut tie_counts = vec![0; class_angles.len()];
        for (c, _) in table.iter().flatten() {
            tie_counts[*c] += 1;
        }
        let plans = (0..go)
            .map(|j| {
                let (num, d) = spec.output.turns(j);
                RotationPlan::from_turns(spec.size, num, d)
            })
            .collect();
        Ok(TieLayout {
            spec,
            class_angles,
            angle_den: den,
            table,
            tie_counts,
            plans,
        })
    }

    pub fn spec(&self) -> &TiedLayerSpec {
        &self.spec
    }

    /// Number of distinct canonical slices per `(m, n)` pair.
    pub fn class_count(&self) -> usize {
        self.class_angles.len()
    }

    /// Folded relative angle of class `c` in radians, within `[0, π]`.
    pub fn class_angle(&self, c: usize) -> f64 {
        std::f64::consts::TAU * self.class_angles[c] as f64 / self.angle_den as f64
    }

    /// Relative-orientation class of input group `i` seen from output group
    /// `j`, with the sign applied to its canonical slice. `None` marks a
    /// slice that is identically zero (odd layers at a right angle).
    pub fn relative_orientation_class(&self, i: usize, j: usize) -> Option<(usize, f64)> {
        assert!(i < self.spec.input.groups() && j < self.spec.output.groups());
        self.table[i * self.spec.output.groups() + j]
    }

    /// Number of expanded slices generated from class `c` for each `(m, n)`.
    pub fn tie_count(&self, c: usize) -> usize {
        self.tie_counts[c]
    }

    fn slice_len(&self) -> usize {
        self.spec.size * self.spec.size
    }

    /// Stored weight count: classes × M × N × size².
    pub fn canonical_len(&self) -> usize {
        self.class_count() * self.spec.in_per_group * self.spec.out_per_group * self.slice_len()
    }

    /// Weight count of the materialized bank: O_in × P × M × N × size².
    pub fn expanded_len(&self) -> usize {
        self.spec.in_channels() * self.spec.out_channels() * self.slice_len()
    }

    /// Stored kernel-slice count, the unit the storage ratio is quoted in.
    pub fn canonical_slices(&self) -> usize {
        self.canonical_len() / self.slice_len()
    }

    pub fn expanded_slices(&self) -> usize {
        self.expanded_len() / self.slice_len()
    }

    pub fn bias_len(&self) -> usize {
        match (self.spec.has_bias, self.spec.tied) {
            (false, _) => 0,
            (true, true) => self.spec.out_per_group,
            (true, false) => self.spec.out_channels(),
        }
    }

    fn canonical_offset(&self, c: usize, m: usize, n: usize) -> usize {
        ((c * self.spec.in_per_group + m) * self.spec.out_per_group + n) * self.slice_len()
    }

    /// Materializes the full kernel bank from canonical weights.
    pub fn expand(&self, canonical: &[f64]) -> Result<KernelBank> {
        if canonical.len() != self.canonical_len() {
            return Err(Error::contract(format!(
                "expected {} canonical weights, got {}",
                self.canonical_len(),
                canonical.len()
            )));
        }
        let s = self.spec;
        let (gi, go) = (s.input.groups(), s.output.groups());
        let size = s.size;
        let mut bank = KernelBank::zeros(size, size, s.in_channels(), s.out_channels());
        let mut rotated = vec![0.0; self.slice_len()];
        for m in 0..s.in_per_group {
            for n in 0..s.out_per_group {
                for j in 0..go {
                    for i in 0..gi {
                        let Some((c, sign)) = self.table[i * go + j] else {
                            continue;
                        };
                        let src = &canonical[self.canonical_offset(c, m, n)..][..self.slice_len()];
                        if s.spatially_rotated() {
                            self.plans[j].apply(src, &mut rotated);
                        } else {
                            rotated.copy_from_slice(src);
                        }
                        let (ci, co) = (m * gi + i, n * go + j);
                        for (p, &v) in rotated.iter().enumerate() {
                            let o = bank.offset(p / size, p % size, ci, co);
                            bank.weights_mut()[o] = sign * v;
                        }
                    }
                }
            }
        }
        Ok(bank)
    }

    /// Per-output-channel biases of the expanded bank.
    pub fn expand_biases(&self, canonical: &[f64]) -> Result<Vec<f64>> {
        if canonical.len() != self.bias_len() {
            return Err(Error::contract("bias count mismatch"));
        }
        let go = self.spec.output.groups();
        Ok((0..self.spec.out_channels())
            .map(|co| match (self.spec.has_bias, self.spec.tied) {
                (false, _) => 0.0,
                (true, true) => canonical[co / go],
                (true, false) => canonical[co],
            })
            .collect())
    }

    /// Maps cotangents of the expanded bank back onto the canonical slices:
    /// each copy is sign-corrected and inverse-rotated (adjoint of the
    /// bilinear rotation), then the copies are summed or averaged.
    pub fn fold_gradients(&self, grads: &KernelBank, mode: FoldMode) -> Result<Vec<f64>> {
        let s = self.spec;
        if (grads.size_y(), grads.size_x(), grads.in_channels(), grads.out_channels())
            != (s.size, s.size, s.in_channels(), s.out_channels())
        {
            return Err(Error::contract("gradient bank does not match the tied layer"));
        }
        let (gi, go) = (s.input.groups(), s.output.groups());
        let size = s.size;
        let mut out = vec![0.0; self.canonical_len()];
        let mut slice = vec![0.0; self.slice_len()];
        for m in 0..s.in_per_group {
            for n in 0..s.out_per_group {
                for j in 0..go {
                    for i in 0..gi {
                        let Some((c, sign)) = self.table[i * go + j] else {
                            continue;
                        };
                        let (ci, co) = (m * gi + i, n * go + j);
                        for (p, v) in slice.iter_mut().enumerate() {
                            *v = sign * grads.weights()[grads.offset(p / size, p % size, ci, co)];
                        }
                        let dst = &mut out[self.canonical_offset(c, m, n)..][..self.slice_len()];
                        if s.spatially_rotated() {
                            self.plans[j].apply_adjoint_acc(&slice, dst);
                        } else {
                            dst.iter_mut().zip(&slice).for_each(|(d, v)| *d += v);
                        }
                    }
                }
            }
        }
        if mode == FoldMode::Mean {
            for c in 0..self.class_count() {
                let k = self.tie_counts[c] as f64;
                for m in 0..s.in_per_group {
                    for n in 0..s.out_per_group {
                        let o = self.canonical_offset(c, m, n);
                        out[o..o + self.slice_len()].iter_mut().for_each(|v| *v /= k);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn fold_bias_gradients(&self, grads: &[f64], mode: FoldMode) -> Result<Vec<f64>> {
        if grads.len() != self.spec.out_channels() {
            return Err(Error::contract("bias gradient count mismatch"));
        }
        let go = self.spec.output.groups();
        let mut out = vec![0.0; self.bias_len()];
        if !self.spec.has_bias {
            return Ok(out);
        }
        if !self.spec.tied {
            out.copy_from_slice(grads);
            return Ok(out);
        }
        for (co, g) in grads.iter().enumerate() {
            out[co / go] += g;
        }
        if mode == FoldMode::Mean {
            out.iter_mut().for_each(|v| *v /= go as f64);
        }
        Ok(out)
    }

    /// Brute-force check of the tying constraints on an expanded bank.
    ///
    /// Visits every `(i, i', j, j', m, n)` whose relative angles have equal
    /// cosine (decided in floating point, independently of the class
    /// tables) and requires exact equality of
    /// * slices sharing an output group,
    /// * each slice and the rotation by `θ_j` of its partner in group 0,
    /// * slices whose output groups differ by a multiple of a quarter turn,
    ///   related by the grid-exact rotation.
    ///
    /// Odd layers additionally compare partners whose relative angles differ
    /// by π with opposite signs. Returns the number of relations checked.
    pub fn check_tie_constraints(&self, bank: &KernelBank) -> std::result::Result<usize, String> {
        let s = self.spec;
        if !s.tied {
            return Err("layer is untied".into());
        }
        let (gi, go) = (s.input.groups(), s.output.groups());
        let size = s.size;
        let len = size * size;
        let slice = |i: usize, m: usize, j: usize, n: usize| -> Vec<f64> {
            (0..len)
                .map(|p| bank.weights()[bank.offset(p / size, p % size, m * gi + i, n * go + j)])
                .collect()
        };
        let rel = |i: usize, j: usize| -> f64 {
            if s.input == OrientationSet::Isotropic {
                0.0
            } else {
                s.output.angle(j) - s.input.angle(i)
            }
        };
        let rotate = |src: &[f64], num: i64, den: i64| -> Vec<f64> {
            let mut out = vec![0.0; len];
            if s.spatially_rotated() {
                RotationPlan::from_turns(size, num, den).apply(src, &mut out);
            } else {
                out.copy_from_slice(src);
            }
            out
        };
        let same = |a: &[f64], b: &[f64], sign: f64| a.iter().zip(b).all(|(x, y)| *x == sign * y);
        let mut checked = 0;
        for m in 0..s.in_per_group {
            for n in 0..s.out_per_group {
                for j in 0..go {
                    for i in 0..gi {
                        let h = slice(i, m, j, n);
                        for jp in 0..go {
                            for ip in 0..gi {
                                let (a, b) = (rel(i, j), rel(ip, jp));
                                let sign = if (a.cos() - b.cos()).abs() < 1e-9 {
                                    1.0
                                } else if s.parity == Parity::Odd
                                    && (a.cos() + b.cos()).abs() < 1e-9
                                    && a.cos().abs() > 1e-9
                                {
                                    -1.0
                                } else {
                                    continue;
                                };
                                let hp = slice(ip, m, jp, n);
                                let (nj, dj) = s.output.turns(j);
                                let (njp, djp) = s.output.turns(jp);
                                let diff_num = nj * djp - njp * dj;
                                let diff_den = dj * djp;
                                let ok = if jp == j {
                                    same(&h, &hp, sign)
                                } else if jp == 0 {
                                    same(&h, &rotate(&hp, nj, dj), sign)
                                } else if (4 * diff_num) % diff_den == 0 {
                                    same(&h, &rotate(&hp, diff_num, diff_den), sign)
                                } else {
                                    continue;
                                };
                                if !ok {
                                    return Err(format!(
                                        "tie violated: h[{i},{m},{j},{n}] vs h[{ip},{m},{jp},{n}]"
                                    ));
                                }
                                checked += 1;
                            }
                        }
                    }
                }
            }
        }
        Ok(checked)
    }
}
