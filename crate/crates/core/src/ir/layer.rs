//! Layer kinds, their hyperparameters, shape rules and weight layouts.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::shape::TensorShape;

/// Whether a kind consumes one input or several.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arity {
    /// The model input; zero predecessors.
    Source,
    /// Single input.
    Si,
    /// Two or more inputs.
    Mi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Input,
    Dense,
    Convolution,
    Pooling,
    Normalization,
    Activation,
    Recurrent,
    Merge,
    Reshape,
    Regularization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankReq {
    Any,
    Exactly(usize),
    AtLeast(usize),
}

impl RankReq {
    pub fn accepts(self, rank: usize) -> bool {
        match self {
            RankReq::Any => true,
            RankReq::Exactly(r) => rank == r,
            RankReq::AtLeast(r) => rank >= r,
        }
    }
}

macro_rules! kinds {
    ($( $v:ident => $name:literal, $arity:ident, $cat:ident, $rank:expr; )*) => {
        /// Every layer kind the toolkit knows about.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum LayerKind { $( $v, )* }

        impl LayerKind {
            pub const ALL: &'static [LayerKind] = &[ $( LayerKind::$v, )* ];

            pub fn name(self) -> &'static str {
                match self { $( LayerKind::$v => $name, )* }
            }

            pub fn arity(self) -> Arity {
                match self { $( LayerKind::$v => Arity::$arity, )* }
            }

            pub fn category(self) -> Category {
                match self { $( LayerKind::$v => Category::$cat, )* }
            }

            pub fn rank_req(self) -> RankReq {
                match self { $( LayerKind::$v => $rank, )* }
            }

            pub fn from_name(name: &str) -> Option<LayerKind> {
                match name { $( $name => Some(LayerKind::$v), )* _ => None }
            }
        }
    };
}

use RankReq::{Any, AtLeast, Exactly};

kinds! {
    Input => "Input", Source, Input, Any;
    Dense => "Dense", Si, Dense, Any;
    Conv1D => "Conv1D", Si, Convolution, Exactly(2);
    Conv2D => "Conv2D", Si, Convolution, Exactly(3);
    Conv3D => "Conv3D", Si, Convolution, Exactly(4);
    DepthwiseConv2D => "DepthwiseConv2D", Si, Convolution, Exactly(3);
    SeparableConv2D => "SeparableConv2D", Si, Convolution, Exactly(3);
    Conv2DTranspose => "Conv2DTranspose", Si, Convolution, Exactly(3);
    LocallyConnected1D => "LocallyConnected1D", Si, Convolution, Exactly(2);
    MaxPooling1D => "MaxPooling1D", Si, Pooling, Exactly(2);
    MaxPooling2D => "MaxPooling2D", Si, Pooling, Exactly(3);
    MaxPooling3D => "MaxPooling3D", Si, Pooling, Exactly(4);
    AveragePooling1D => "AveragePooling1D", Si, Pooling, Exactly(2);
    AveragePooling2D => "AveragePooling2D", Si, Pooling, Exactly(3);
    AveragePooling3D => "AveragePooling3D", Si, Pooling, Exactly(4);
    GlobalMaxPooling1D => "GlobalMaxPooling1D", Si, Pooling, Exactly(2);
    GlobalMaxPooling2D => "GlobalMaxPooling2D", Si, Pooling, Exactly(3);
    GlobalAveragePooling1D => "GlobalAveragePooling1D", Si, Pooling, Exactly(2);
    GlobalAveragePooling2D => "GlobalAveragePooling2D", Si, Pooling, Exactly(3);
    BatchNormalization => "BatchNormalization", Si, Normalization, Any;
    LayerNormalization => "LayerNormalization", Si, Normalization, Any;
    ReLU => "ReLU", Si, Activation, Any;
    LeakyReLU => "LeakyReLU", Si, Activation, Any;
    ELU => "ELU", Si, Activation, Any;
    PReLU => "PReLU", Si, Activation, Any;
    ThresholdedReLU => "ThresholdedReLU", Si, Activation, Any;
    Softmax => "Softmax", Si, Activation, Any;
    Activation => "Activation", Si, Activation, Any;
    SimpleRNN => "SimpleRNN", Si, Recurrent, Exactly(2);
    GRU => "GRU", Si, Recurrent, Exactly(2);
    LSTM => "LSTM", Si, Recurrent, Exactly(2);
    Reshape => "Reshape", Si, Reshape, Any;
    Flatten => "Flatten", Si, Reshape, Any;
    Permute => "Permute", Si, Reshape, AtLeast(2);
    RepeatVector => "RepeatVector", Si, Reshape, Exactly(1);
    ZeroPadding1D => "ZeroPadding1D", Si, Reshape, Exactly(2);
    ZeroPadding2D => "ZeroPadding2D", Si, Reshape, Exactly(3);
    Cropping1D => "Cropping1D", Si, Reshape, Exactly(2);
    Cropping2D => "Cropping2D", Si, Reshape, Exactly(3);
    UpSampling1D => "UpSampling1D", Si, Reshape, Exactly(2);
    UpSampling2D => "UpSampling2D", Si, Reshape, Exactly(3);
    Add => "Add", Mi, Merge, Any;
    Subtract => "Subtract", Mi, Merge, Any;
    Multiply => "Multiply", Mi, Merge, Any;
    Average => "Average", Mi, Merge, Any;
    Maximum => "Maximum", Mi, Merge, Any;
    Minimum => "Minimum", Mi, Merge, Any;
    Concatenate => "Concatenate", Mi, Merge, Any;
    Dropout => "Dropout", Si, Regularization, Any;
    GaussianNoise => "GaussianNoise", Si, Regularization, Any;
}

impl LayerKind {
    /// Kinds whose training-mode behaviour draws random numbers.
    pub fn is_stochastic(self) -> bool {
        matches!(self, LayerKind::Dropout | LayerKind::GaussianNoise)
    }

    /// Kinds that can be selected for generated vertices (everything but the
    /// structural input kind).
    pub fn selectable() -> impl Iterator<Item = LayerKind> {
        LayerKind::ALL.iter().copied().filter(|k| *k != LayerKind::Input)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LayerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LayerKind::from_name(s).ok_or_else(|| format!("unknown layer kind `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Valid,
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationFn {
    Sigmoid,
    Tanh,
    Softplus,
    Softsign,
    Selu,
    Linear,
}

impl ActivationFn {
    pub const ALL: &'static [ActivationFn] = &[
        ActivationFn::Sigmoid,
        ActivationFn::Tanh,
        ActivationFn::Softplus,
        ActivationFn::Softsign,
        ActivationFn::Selu,
        ActivationFn::Linear,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvParams {
    pub filters: usize,
    pub kernel: Vec<usize>,
    pub strides: Vec<usize>,
    pub padding: Padding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthwiseParams {
    pub multiplier: usize,
    pub kernel: Vec<usize>,
    pub strides: Vec<usize>,
    pub padding: Padding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparableParams {
    pub multiplier: usize,
    pub filters: usize,
    pub kernel: Vec<usize>,
    pub strides: Vec<usize>,
    pub padding: Padding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalParams {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Pooling window; strides always equal the pool size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolParams {
    pub pool: Vec<usize>,
    pub padding: Padding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentParams {
    pub units: usize,
    pub return_sequences: bool,
}

/// A layer kind together with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Layer {
    Input,
    Dense { units: usize },
    Conv1D(ConvParams),
    Conv2D(ConvParams),
    Conv3D(ConvParams),
    DepthwiseConv2D(DepthwiseParams),
    SeparableConv2D(SeparableParams),
    Conv2DTranspose(ConvParams),
    LocallyConnected1D(LocalParams),
    MaxPooling1D(PoolParams),
    MaxPooling2D(PoolParams),
    MaxPooling3D(PoolParams),
    AveragePooling1D(PoolParams),
    AveragePooling2D(PoolParams),
    AveragePooling3D(PoolParams),
    GlobalMaxPooling1D,
    GlobalMaxPooling2D,
    GlobalAveragePooling1D,
    GlobalAveragePooling2D,
    BatchNormalization,
    LayerNormalization,
    ReLU,
    LeakyReLU { alpha: f64 },
    ELU { alpha: f64 },
    PReLU,
    ThresholdedReLU { theta: f64 },
    Softmax,
    Activation { function: ActivationFn },
    SimpleRNN(RecurrentParams),
    GRU(RecurrentParams),
    LSTM(RecurrentParams),
    Reshape { target: TensorShape },
    Flatten,
    Permute { axes: Vec<usize> },
    RepeatVector { n: usize },
    ZeroPadding1D { pad: [usize; 2] },
    ZeroPadding2D { pad: [[usize; 2]; 2] },
    Cropping1D { crop: [usize; 2] },
    Cropping2D { crop: [[usize; 2]; 2] },
    UpSampling1D { size: usize },
    UpSampling2D { size: [usize; 2] },
    Add,
    Subtract,
    Multiply,
    Average,
    Maximum,
    Minimum,
    Concatenate,
    Dropout { rate: f64 },
    GaussianNoise { stddev: f64 },
}

/// Epsilon used by both normalization kinds.
pub const NORM_EPSILON: f64 = 1e-3;

/// A violated shape-rule precondition.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct ShapeRuleError(pub String);

fn fail<T>(msg: impl Into<String>) -> Result<T, ShapeRuleError> {
    Err(ShapeRuleError(msg.into()))
}

/// Output extent of a strided window sweep.
pub fn window_out(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<usize> {
    match padding {
        Padding::Same => Some(input.div_ceil(stride)),
        Padding::Valid => (input >= kernel).then(|| (input - kernel) / stride + 1),
    }
}

/// Leading padding for a `same` window sweep.
pub fn same_pad_before(input: usize, kernel: usize, stride: usize) -> usize {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    total / 2
}

/// Output extent of a transposed convolution.
pub fn transpose_out(input: usize, kernel: usize, stride: usize, padding: Padding) -> usize {
    match padding {
        Padding::Same => input * stride,
        Padding::Valid => input * stride + kernel.saturating_sub(stride),
    }
}

fn spatial_conv(
    shape: &TensorShape,
    kernel: &[usize],
    strides: &[usize],
    padding: Padding,
    out_channels: usize,
) -> Result<TensorShape, ShapeRuleError> {
    let sp = shape.spatial();
    if kernel.len() != sp.len() || strides.len() != sp.len() {
        return fail(format!("window rank {} does not match {} spatial axes", kernel.len(), sp.len()));
    }
    let mut dims = Vec::with_capacity(sp.len() + 1);
    for ((&n, &k), &s) in sp.iter().zip(kernel).zip(strides) {
        if k == 0 || s == 0 {
            return fail("zero kernel or stride");
        }
        match window_out(n, k, s, padding) {
            Some(o) => dims.push(o),
            None => return fail(format!("kernel {k} larger than extent {n} with valid padding")),
        }
    }
    dims.push(out_channels);
    TensorShape::new(dims).map_err(|e| ShapeRuleError(e.to_string()))
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        use Layer as L;
        use LayerKind as K;
        match self {
            L::Input => K::Input,
            L::Dense { .. } => K::Dense,
            L::Conv1D(_) => K::Conv1D,
            L::Conv2D(_) => K::Conv2D,
            L::Conv3D(_) => K::Conv3D,
            L::DepthwiseConv2D(_) => K::DepthwiseConv2D,
            L::SeparableConv2D(_) => K::SeparableConv2D,
            L::Conv2DTranspose(_) => K::Conv2DTranspose,
            L::LocallyConnected1D(_) => K::LocallyConnected1D,
            L::MaxPooling1D(_) => K::MaxPooling1D,
            L::MaxPooling2D(_) => K::MaxPooling2D,
            L::MaxPooling3D(_) => K::MaxPooling3D,
            L::AveragePooling1D(_) => K::AveragePooling1D,
            L::AveragePooling2D(_) => K::AveragePooling2D,
            L::AveragePooling3D(_) => K::AveragePooling3D,
            L::GlobalMaxPooling1D => K::GlobalMaxPooling1D,
            L::GlobalMaxPooling2D => K::GlobalMaxPooling2D,
            L::GlobalAveragePooling1D => K::GlobalAveragePooling1D,
            L::GlobalAveragePooling2D => K::GlobalAveragePooling2D,
            L::BatchNormalization => K::BatchNormalization,
            L::LayerNormalization => K::LayerNormalization,
            L::ReLU => K::ReLU,
            L::LeakyReLU { .. } => K::LeakyReLU,
            L::ELU { .. } => K::ELU,
            L::PReLU => K::PReLU,
            L::ThresholdedReLU { .. } => K::ThresholdedReLU,
            L::Softmax => K::Softmax,
            L::Activation { .. } => K::Activation,
            L::SimpleRNN(_) => K::SimpleRNN,
            L::GRU(_) => K::GRU,
            L::LSTM(_) => K::LSTM,
            L::Reshape { .. } => K::Reshape,
            L::Flatten => K::Flatten,
            L::Permute { .. } => K::Permute,
            L::RepeatVector { .. } => K::RepeatVector,
            L::ZeroPadding1D { .. } => K::ZeroPadding1D,
            L::ZeroPadding2D { .. } => K::ZeroPadding2D,
            L::Cropping1D { .. } => K::Cropping1D,
            L::Cropping2D { .. } => K::Cropping2D,
            L::UpSampling1D { .. } => K::UpSampling1D,
            L::UpSampling2D { .. } => K::UpSampling2D,
            L::Add => K::Add,
            L::Subtract => K::Subtract,
            L::Multiply => K::Multiply,
            L::Average => K::Average,
            L::Maximum => K::Maximum,
            L::Minimum => K::Minimum,
            L::Concatenate => K::Concatenate,
            L::Dropout { .. } => K::Dropout,
            L::GaussianNoise { .. } => K::GaussianNoise,
        }
    }

    /// Deterministic shape rule. `inputs` are the shapes of the node's
    /// predecessors in ascending id order; the input layer takes none and
    /// must be given its shape externally.
    pub fn output_shape(&self, inputs: &[&TensorShape]) -> Result<TensorShape, ShapeRuleError> {
        let kind = self.kind();
        match kind.arity() {
            Arity::Source => return fail("input layer shape is set externally"),
            Arity::Si if inputs.len() != 1 => return fail(format!("{kind} takes one input, got {}", inputs.len())),
            Arity::Mi if inputs.len() < 2 => {
                return fail(format!("{kind} needs at least two inputs, got {}", inputs.len()))
            }
            _ => {}
        }
        let x = inputs[0];
        if !kind.rank_req().accepts(x.rank()) {
            return fail(format!("{kind} cannot take rank-{} input", x.rank()));
        }
        let mk = |dims: Vec<usize>| TensorShape::new(dims).map_err(|e| ShapeRuleError(e.to_string()));
        let sp = x.spatial();
        let c = x.last();
        use Layer as L;
        match self {
            L::Input => unreachable!(),
            L::Dense { units } => {
                if *units == 0 {
                    return fail("zero units");
                }
                let mut d = sp.to_vec();
                d.push(*units);
                mk(d)
            }
            L::Conv1D(p) | L::Conv2D(p) | L::Conv3D(p) => {
                if p.filters == 0 {
                    return fail("zero filters");
                }
                spatial_conv(x, &p.kernel, &p.strides, p.padding, p.filters)
            }
            L::DepthwiseConv2D(p) => spatial_conv(x, &p.kernel, &p.strides, p.padding, c * p.multiplier),
            L::SeparableConv2D(p) => spatial_conv(x, &p.kernel, &p.strides, p.padding, p.filters),
            L::Conv2DTranspose(p) => {
                if p.kernel.len() != 2 || p.strides.len() != 2 || p.filters == 0 {
                    return fail("transposed convolution needs 2 spatial axes");
                }
                let d = (0..2)
                    .map(|a| transpose_out(sp[a], p.kernel[a], p.strides[a], p.padding))
                    .chain(std::iter::once(p.filters))
                    .collect();
                mk(d)
            }
            L::LocallyConnected1D(p) => {
                if p.kernel == 0 || p.stride == 0 || p.filters == 0 {
                    return fail("zero kernel, stride or filters");
                }
                match window_out(sp[0], p.kernel, p.stride, Padding::Valid) {
                    Some(o) => mk(vec![o, p.filters]),
                    None => fail(format!("kernel {} larger than {} steps", p.kernel, sp[0])),
                }
            }
            L::MaxPooling1D(p)
            | L::MaxPooling2D(p)
            | L::MaxPooling3D(p)
            | L::AveragePooling1D(p)
            | L::AveragePooling2D(p)
            | L::AveragePooling3D(p) => spatial_conv(x, &p.pool, &p.pool, p.padding, c),
            L::GlobalMaxPooling1D | L::GlobalMaxPooling2D | L::GlobalAveragePooling1D | L::GlobalAveragePooling2D => {
                mk(vec![c])
            }
            L::BatchNormalization
            | L::LayerNormalization
            | L::ReLU
            | L::LeakyReLU { .. }
            | L::ELU { .. }
            | L::PReLU
            | L::ThresholdedReLU { .. }
            | L::Softmax
            | L::Activation { .. }
            | L::Dropout { .. }
            | L::GaussianNoise { .. } => Ok(x.clone()),
            L::SimpleRNN(p) | L::GRU(p) | L::LSTM(p) => {
                if p.units == 0 {
                    return fail("zero units");
                }
                if p.return_sequences {
                    mk(vec![sp[0], p.units])
                } else {
                    mk(vec![p.units])
                }
            }
            L::Reshape { target } => {
                if target.element_count() != x.element_count() {
                    return fail(format!("reshape {x} -> {target} changes element count"));
                }
                Ok(target.clone())
            }
            L::Flatten => mk(vec![x.element_count()]),
            L::Permute { axes } => {
                let mut sorted = axes.clone();
                sorted.sort_unstable();
                if sorted != (0..x.rank()).collect::<Vec<_>>() {
                    return fail(format!("{axes:?} is not a permutation of {} axes", x.rank()));
                }
                mk(axes.iter().map(|&a| x.dims()[a]).collect())
            }
            L::RepeatVector { n } => {
                if *n == 0 {
                    return fail("zero repeats");
                }
                mk(vec![*n, c])
            }
            L::ZeroPadding1D { pad } => mk(vec![sp[0] + pad[0] + pad[1], c]),
            L::ZeroPadding2D { pad } => mk(vec![sp[0] + pad[0][0] + pad[0][1], sp[1] + pad[1][0] + pad[1][1], c]),
            L::Cropping1D { crop } => {
                if crop[0] + crop[1] >= sp[0] {
                    return fail(format!("cropping {crop:?} removes all {} steps", sp[0]));
                }
                mk(vec![sp[0] - crop[0] - crop[1], c])
            }
            L::Cropping2D { crop } => {
                for a in 0..2 {
                    if crop[a][0] + crop[a][1] >= sp[a] {
                        return fail(format!("cropping {:?} removes axis {a} of extent {}", crop[a], sp[a]));
                    }
                }
                mk(vec![sp[0] - crop[0][0] - crop[0][1], sp[1] - crop[1][0] - crop[1][1], c])
            }
            L::UpSampling1D { size } => {
                if *size == 0 {
                    return fail("zero upsampling");
                }
                mk(vec![sp[0] * size, c])
            }
            L::UpSampling2D { size } => {
                if size.contains(&0) {
                    return fail("zero upsampling");
                }
                mk(vec![sp[0] * size[0], sp[1] * size[1], c])
            }
            L::Add | L::Subtract | L::Multiply | L::Average | L::Maximum | L::Minimum => {
                if inputs.iter().any(|s| *s != x) {
                    return fail(format!("MI shape mismatch: {kind} needs identical input shapes"));
                }
                Ok(x.clone())
            }
            L::Concatenate => {
                let mut last = 0;
                for s in inputs {
                    if s.rank() != x.rank() || s.spatial() != sp {
                        return fail("MI shape mismatch: Concatenate needs equal leading axes");
                    }
                    last += s.last();
                }
                let mut d = sp.to_vec();
                d.push(last);
                mk(d)
            }
        }
    }

    /// Shapes of the weight blobs this layer owns, in serialization order.
    pub fn weight_shapes(&self, inputs: &[&TensorShape]) -> Vec<Vec<usize>> {
        use Layer as L;
        let x = match inputs.first() {
            Some(x) => *x,
            None => return Vec::new(),
        };
        let c = x.last();
        match self {
            L::Dense { units } => vec![vec![c, *units], vec![*units]],
            L::Conv1D(p) | L::Conv2D(p) | L::Conv3D(p) | L::Conv2DTranspose(p) => {
                let mut k = p.kernel.clone();
                k.extend([c, p.filters]);
                vec![k, vec![p.filters]]
            }
            L::DepthwiseConv2D(p) => {
                let mut k = p.kernel.clone();
                k.extend([c, p.multiplier]);
                vec![k, vec![c * p.multiplier]]
            }
            L::SeparableConv2D(p) => {
                let mut k = p.kernel.clone();
                k.extend([c, p.multiplier]);
                vec![k, vec![c * p.multiplier, p.filters], vec![p.filters]]
            }
            L::LocallyConnected1D(p) => {
                let steps = (x.dims()[0] - p.kernel) / p.stride + 1;
                vec![vec![steps, p.kernel * c, p.filters], vec![steps, p.filters]]
            }
            L::BatchNormalization | L::LayerNormalization => vec![vec![c], vec![c]],
            L::PReLU => vec![x.dims().to_vec()],
            L::SimpleRNN(p) => vec![vec![c, p.units], vec![p.units, p.units], vec![p.units]],
            L::GRU(p) => vec![vec![c, 3 * p.units], vec![p.units, 3 * p.units], vec![3 * p.units]],
            L::LSTM(p) => vec![vec![c, 4 * p.units], vec![p.units, 4 * p.units], vec![4 * p.units]],
            _ => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(d: &[usize]) -> TensorShape {
        TensorShape::new(d.to_vec()).unwrap()
    }

    #[test]
    fn same_padded_conv_keeps_spatial_extent() {
        let l =
            Layer::Conv2D(ConvParams { filters: 4, kernel: vec![3, 3], strides: vec![1, 1], padding: Padding::Same });
        assert_eq!(l.output_shape(&[&s(&[8, 8, 3])]).unwrap(), s(&[8, 8, 4]));
        assert_eq!(l.weight_shapes(&[&s(&[8, 8, 3])]), vec![vec![3, 3, 3, 4], vec![4]]);
    }

    #[test]
    fn dense_maps_last_axis() {
        let l = Layer::Dense { units: 5 };
        assert_eq!(l.output_shape(&[&s(&[10])]).unwrap(), s(&[5]));
        assert_eq!(l.output_shape(&[&s(&[2, 10])]).unwrap(), s(&[2, 5]));
    }

    #[test]
    fn add_rejects_mismatched_inputs() {
        let err = Layer::Add.output_shape(&[&s(&[4, 4]), &s(&[2, 8])]).unwrap_err();
        assert!(err.0.contains("MI shape mismatch"), "{err}");
        assert!(Layer::Add.output_shape(&[&s(&[4, 4])]).is_err());
    }

    #[test]
    fn concatenate_sums_last_axis() {
        let out = Layer::Concatenate.output_shape(&[&s(&[3, 2]), &s(&[3, 5])]).unwrap();
        assert_eq!(out, s(&[3, 7]));
    }

    #[test]
    fn rank_requirements_are_enforced() {
        let l = Layer::GlobalMaxPooling1D;
        assert!(l.output_shape(&[&s(&[8, 8, 3])]).is_err());
        assert_eq!(l.output_shape(&[&s(&[8, 3])]).unwrap(), s(&[3]));
    }

    #[test]
    fn valid_pooling_needs_room() {
        let p = Layer::MaxPooling1D(PoolParams { pool: vec![5], padding: Padding::Valid });
        assert!(p.output_shape(&[&s(&[4, 2])]).is_err());
        let q = Layer::AveragePooling2D(PoolParams { pool: vec![8, 8], padding: Padding::Same });
        assert_eq!(q.output_shape(&[&s(&[8, 8, 3])]).unwrap(), s(&[1, 1, 3]));
        assert_eq!(same_pad_before(8, 8, 8), 0);
        assert_eq!(same_pad_before(5, 3, 1), 1);
    }

    #[test]
    fn transposed_conv_extents() {
        assert_eq!(transpose_out(4, 3, 2, Padding::Valid), 9);
        assert_eq!(transpose_out(4, 3, 2, Padding::Same), 8);
        assert_eq!(transpose_out(4, 1, 2, Padding::Valid), 8);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in LayerKind::ALL {
            assert_eq!(LayerKind::from_name(k.name()), Some(*k));
        }
        let json = serde_json::to_string(&Layer::LeakyReLU { alpha: 0.2 }).unwrap();
        assert_eq!(json, r#"{"kind":"LeakyReLU","alpha":0.2}"#);
        let back: Layer = serde_json::from_str(&json).unwrap();
        assert_eq!(back.kind(), LayerKind::LeakyReLU);
    }
}
