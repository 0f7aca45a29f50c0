//! A trainable motion-energy network for dense optical flow.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod field;
pub mod flow_io;
pub mod net;
pub mod rotation;
pub mod tensor;
pub mod training;

pub use config::{NetworkConfig, Rectifier, Variant};
pub use error::{Error, Result};
pub use field::{FlowField, MotionDistribution, ValidMask};
pub use net::{CanonicalWeights, ExpandedWeights, Layer, Mode, MotionNet};
pub use tensor::{Kernel3, PaddingPolicy, Tensor3};
