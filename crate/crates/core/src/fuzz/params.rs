//! Uniform hyperparameter schemas.

use rand::seq::SliceRandom;
use rand::Rng;

use super::config::SchemaBias;
use crate::ir::layer::{ConvParams, DepthwiseParams, LocalParams, PoolParams, RecurrentParams, SeparableParams};
use crate::ir::{ActivationFn, Layer, LayerKind, Padding, TensorShape};

const KERNELS: [usize; 3] = [1, 3, 5];

fn prime_factors(mut n: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut p = 2;
    while p * p <= n {
        while n.is_multiple_of(p) {
            out.push(p);
            n /= p;
        }
        p += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

/// Random shape of the given rank holding exactly `elements` elements.
pub fn fold_shape<R: Rng + ?Sized>(elements: usize, rank: usize, rng: &mut R) -> TensorShape {
    let mut dims = vec![1usize; rank];
    for p in prime_factors(elements) {
        dims[rng.gen_range(0..rank)] *= p;
    }
    TensorShape::new(dims).expect("positive extents")
}

fn padding<R: Rng + ?Sized>(bias: &SchemaBias, rng: &mut R) -> Padding {
    if rng.gen_bool(bias.same_padding) {
        Padding::Same
    } else {
        Padding::Valid
    }
}

fn kernel<R: Rng + ?Sized>(axes: usize, rng: &mut R) -> Vec<usize> {
    (0..axes).map(|_| *KERNELS.choose(rng).expect("non-empty")).collect()
}

fn strides<R: Rng + ?Sized>(axes: usize, rng: &mut R) -> Vec<usize> {
    (0..axes).map(|_| rng.gen_range(1..=2)).collect()
}

fn conv<R: Rng + ?Sized>(axes: usize, bias: &SchemaBias, rng: &mut R) -> ConvParams {
    ConvParams {
        filters: rng.gen_range(1..=8),
        kernel: kernel(axes, rng),
        strides: strides(axes, rng),
        padding: padding(bias, rng),
    }
}

fn pool<R: Rng + ?Sized>(input: &TensorShape, bias: &SchemaBias, rng: &mut R) -> PoolParams {
    let sp = input.spatial();
    let pool = if rng.gen_bool(bias.full_extent_pool) {
        sp.to_vec()
    } else {
        sp.iter().map(|&n| rng.gen_range(1..=n)).collect()
    };
    PoolParams { pool, padding: padding(bias, rng) }
}

fn pad_pair<R: Rng + ?Sized>(rng: &mut R) -> [usize; 2] {
    [rng.gen_range(0..=2), rng.gen_range(0..=2)]
}

/// Draws hyperparameters for `kind` given its (first) input shape. The
/// result may still violate the kind's shape rule; callers resample.
pub fn sample_params<R: Rng + ?Sized>(kind: LayerKind, input: &TensorShape, bias: &SchemaBias, rng: &mut R) -> Layer {
    use LayerKind as K;
    let axes = input.spatial().len();
    match kind {
        K::Input => Layer::Input,
        K::Dense => Layer::Dense { units: rng.gen_range(1..=16) },
        K::Conv1D => Layer::Conv1D(conv(axes, bias, rng)),
        K::Conv2D => Layer::Conv2D(conv(axes, bias, rng)),
        K::Conv3D => Layer::Conv3D(conv(axes, bias, rng)),
        K::Conv2DTranspose => Layer::Conv2DTranspose(conv(axes, bias, rng)),
        K::DepthwiseConv2D => Layer::DepthwiseConv2D(DepthwiseParams {
            multiplier: rng.gen_range(1..=2),
            kernel: kernel(axes, rng),
            strides: strides(axes, rng),
            padding: padding(bias, rng),
        }),
        K::SeparableConv2D => Layer::SeparableConv2D(SeparableParams {
            multiplier: rng.gen_range(1..=2),
            filters: rng.gen_range(1..=8),
            kernel: kernel(axes, rng),
            strides: strides(axes, rng),
            padding: padding(bias, rng),
        }),
        K::LocallyConnected1D => Layer::LocallyConnected1D(LocalParams {
            filters: rng.gen_range(1..=8),
            kernel: *KERNELS.choose(rng).expect("non-empty"),
            stride: rng.gen_range(1..=2),
        }),
        K::MaxPooling1D => Layer::MaxPooling1D(pool(input, bias, rng)),
        K::MaxPooling2D => Layer::MaxPooling2D(pool(input, bias, rng)),
        K::MaxPooling3D => Layer::MaxPooling3D(pool(input, bias, rng)),
        K::AveragePooling1D => Layer::AveragePooling1D(pool(input, bias, rng)),
        K::AveragePooling2D => Layer::AveragePooling2D(pool(input, bias, rng)),
        K::AveragePooling3D => Layer::AveragePooling3D(pool(input, bias, rng)),
        K::GlobalMaxPooling1D => Layer::GlobalMaxPooling1D,
        K::GlobalMaxPooling2D => Layer::GlobalMaxPooling2D,
        K::GlobalAveragePooling1D => Layer::GlobalAveragePooling1D,
        K::GlobalAveragePooling2D => Layer::GlobalAveragePooling2D,
        K::BatchNormalization => Layer::BatchNormalization,
        K::LayerNormalization => Layer::LayerNormalization,
        K::ReLU => Layer::ReLU,
        K::LeakyReLU => Layer::LeakyReLU { alpha: rng.gen_range(0.01..0.5) },
        K::ELU => Layer::ELU { alpha: rng.gen_range(0.1..1.5) },
        K::PReLU => Layer::PReLU,
        K::ThresholdedReLU => Layer::ThresholdedReLU { theta: rng.gen_range(0.0..1.0) },
        K::Softmax => Layer::Softmax,
        K::Activation => Layer::Activation { function: *ActivationFn::ALL.choose(rng).expect("non-empty") },
        K::SimpleRNN | K::GRU | K::LSTM => {
            let p = RecurrentParams { units: rng.gen_range(1..=8), return_sequences: rng.gen_bool(0.5) };
            match kind {
                K::SimpleRNN => Layer::SimpleRNN(p),
                K::GRU => Layer::GRU(p),
                _ => Layer::LSTM(p),
            }
        }
        K::Reshape => {
            let rank = rng.gen_range(1..=4);
            Layer::Reshape { target: fold_shape(input.element_count(), rank, rng) }
        }
        K::Flatten => Layer::Flatten,
        K::Permute => {
            let mut axes: Vec<usize> = (0..input.rank()).collect();
            axes.shuffle(rng);
            Layer::Permute { axes }
        }
        K::RepeatVector => Layer::RepeatVector { n: rng.gen_range(1..=4) },
        K::ZeroPadding1D => Layer::ZeroPadding1D { pad: pad_pair(rng) },
        K::ZeroPadding2D => Layer::ZeroPadding2D { pad: [pad_pair(rng), pad_pair(rng)] },
        K::Cropping1D => Layer::Cropping1D { crop: pad_pair(rng) },
        K::Cropping2D => Layer::Cropping2D { crop: [pad_pair(rng), pad_pair(rng)] },
        K::UpSampling1D => Layer::UpSampling1D { size: rng.gen_range(1..=3) },
        K::UpSampling2D => Layer::UpSampling2D { size: [rng.gen_range(1..=2), rng.gen_range(1..=2)] },
        K::Add => Layer::Add,
        K::Subtract => Layer::Subtract,
        K::Multiply => Layer::Multiply,
        K::Average => Layer::Average,
        K::Maximum => Layer::Maximum,
        K::Minimum => Layer::Minimum,
        K::Concatenate => Layer::Concatenate,
        K::Dropout => Layer::Dropout { rate: rng.gen_range(0.0..0.5) },
        K::GaussianNoise => Layer::GaussianNoise { stddev: rng.gen_range(0.0..1.0) },
    }
}
