//! Generation settings that make each shipped fault observable.

use serde::{Deserialize, Serialize};

use crate::detect::Stage;
use crate::engine::Fault;
use crate::fuzz::GenerationConfig;
use crate::ir::{LayerKind, LossKind, TensorShape};

/// Where a fault is expected to surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    Stage(Stage),
    Nan,
}

#[derive(Debug, Clone)]
pub struct TriggerPreset {
    pub fault: Fault,
    pub channel: Channel,
    /// Layer or loss kind the finding should name.
    pub kind: String,
    pub generation: GenerationConfig,
}

fn shape(dims: &[usize]) -> TensorShape {
    TensorShape::new(dims.to_vec()).expect("static shape")
}

/// Generation config biased toward inputs and architectures that exercise
/// `fault`. Returns `None` for the debug faults and `none`.
pub fn trigger_preset(fault: Fault, n_models: usize, seed: u64) -> Option<TriggerPreset> {
    use LayerKind as K;
    let mut g = GenerationConfig { n_models, seed, ..GenerationConfig::default() };
    let (channel, kind) = match fault {
        Fault::ReluEqZero => {
            g.restrict_to(&[K::ReLU, K::Dense, K::Reshape, K::Flatten, K::Add, K::Concatenate]);
            g.losses = vec![LossKind::MeanAbsolutePercentageError];
            g.output_shape = shape(&[2]);
            g.data.zero_fraction = 0.5;
            (Channel::Stage(Stage::BC), K::ReLU.to_string())
        }
        Fault::PoolingLocation => {
            g.restrict_to(&[K::AveragePooling2D, K::ReLU, K::Reshape, K::Add, K::Maximum]);
            g.losses = vec![LossKind::MeanSquaredError];
            g.data.low = 0.0;
            g.data.high = 255.0;
            g.bias.full_extent_pool = 0.5;
            g.bias.same_padding = 1.0;
            g.max_magnitude = None;
            (Channel::Stage(Stage::FC), K::AveragePooling2D.to_string())
        }
        Fault::BceEpsilonClip => {
            g.restrict_to(&[K::Dense, K::ReLU, K::Reshape, K::Flatten, K::Add, K::Conv2D]);
            g.losses = vec![LossKind::BinaryCrossentropy];
            g.data.low = -50.0;
            g.data.high = 50.0;
            (Channel::Stage(Stage::LC), LossKind::BinaryCrossentropy.to_string())
        }
        Fault::MaxpoolTieGradient => {
            g.restrict_to(&[K::MaxPooling1D, K::ReLU, K::Reshape, K::Flatten, K::Dense, K::Add]);
            g.losses = vec![LossKind::MeanAbsolutePercentageError];
            g.output_shape = shape(&[2]);
            g.data.low = -1.0;
            g.data.high = 0.0;
            g.data.zero_fraction = 0.5;
            (Channel::Stage(Stage::BC), K::MaxPooling1D.to_string())
        }
        Fault::HingeNoDivide => {
            g.restrict_to(&[K::ReLU, K::Reshape, K::Flatten, K::Add, K::Maximum]);
            g.losses = vec![LossKind::CategoricalHinge];
            g.input_shape = shape(&[16]);
            g.output_shape = shape(&[16]);
            g.data.low = -1.0;
            g.data.high = 0.0;
            (Channel::Stage(Stage::LC), LossKind::CategoricalHinge.to_string())
        }
        Fault::GlobalmaxpoolNeginfOnNan => {
            g.restrict_to(&[K::GlobalMaxPooling2D, K::ReLU, K::Dense]);
            g.losses = vec![LossKind::MeanSquaredError];
            g.p_chain = 1.0;
            g.p_skip = 0.0;
            g.data.nan_channels = vec![0];
            (Channel::Nan, K::GlobalMaxPooling2D.to_string())
        }
        Fault::DebugAbort | Fault::DebugSleep | Fault::None => return None,
    };
    Some(TriggerPreset { fault, channel, kind, generation: g })
}
