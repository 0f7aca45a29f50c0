use crate::error::{Error, Result};
use crate::tensor::KernelBank;

/// The four learned layers, in feed-forward order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Layer {
    /// H¹: spatiotemporal motion filters.
    MotionFilters,
    /// H²: spatial interaction (aperture smoothing).
    Smoothing,
    /// H³: pixelwise map to the speed/orientation scores.
    Hidden,
    /// H⁴: pixelwise map from the distribution to the flow vector.
    Output,
}

impl Layer {
    pub const ALL: [Layer; 4] = [
        Layer::MotionFilters,
        Layer::Smoothing,
        Layer::Hidden,
        Layer::Output,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Layer::MotionFilters => "h1",
            Layer::Smoothing => "h2",
            Layer::Hidden => "h3",
            Layer::Output => "h4",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl LayerParams {
    pub fn zeros(weights: usize, biases: usize) -> Self {
        LayerParams {
            weights: vec![0.0; weights],
            biases: vec![0.0; biases],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The stored parameters of the network: canonical slices of every tied
/// layer plus their biases. This is the only trainable state.
///
/// The same type carries gradients, which mirror the parameters exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalWeights {
    layers: [LayerParams; 4],
}

impl CanonicalWeights {
    pub fn new(layers: [LayerParams; 4]) -> Self {
        CanonicalWeights { layers }
    }

    pub fn layer(&self, l: Layer) -> &LayerParams {
        &self.layers[l.index()]
    }

    pub fn layer_mut(&mut self, l: Layer) -> &mut LayerParams {
        &mut self.layers[l.index()]
    }

    pub fn zeros_like(&self) -> Self {
        CanonicalWeights {
            layers: self
                .layers
                .each_ref()
                .map(|p| LayerParams::zeros(p.weights.len(), p.biases.len())),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(LayerParams::len).sum()
    }

    /// Every scalar in a fixed order: per layer, weights then biases.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|p| p.weights.iter().chain(p.biases.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|p| p.weights.iter_mut().chain(p.biases.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::contract(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                values.len()
            )));
        }
        self.iter_mut().zip(values).for_each(|(d, s)| *d = *s);
        Ok(())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &CanonicalWeights) {
        assert_eq!(self.num_params(), other.num_params());
        self.iter_mut()
            .zip(other.iter())
            .for_each(|(d, s)| *d += alpha * s);
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &CanonicalWeights) -> f64 {
        self.iter()
            .zip(other.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Full kernel banks materialized from [`CanonicalWeights`] for a forward
/// pass. Read-only; safe to share across threads.
#[derive(Clone, Debug)]
pub struct ExpandedWeights {
    pub(crate) banks: [KernelBank; 4],
    pub(crate) biases: [Vec<f64>; 4],
}

impl ExpandedWeights {
    pub fn bank(&self, l: Layer) -> &KernelBank {
        &self.banks[l.index()]
    }

    pub fn biases(&self, l: Layer) -> &[f64] {
        &self.biases[l.index()]
    }
}
