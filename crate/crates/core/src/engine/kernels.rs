//! Per-layer forward and backward kernels over batch-major tensors.

use std::hash::{Hash, Hasher};

use super::accum::{accumulate, argmax, sum};
use super::backend::{Fault, Flavor};
use super::linear::{compile_linear, SparseMap, Sweep};
use crate::ir::layer::NORM_EPSILON;
use crate::ir::{ActivationFn, Layer, LayerKind, TensorShape};
use crate::tensor::{Real, Tensor};

const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
const SELU_SCALE: f64 = 1.050_700_987_355_480_5;

#[derive(Debug, Clone, Copy)]
pub enum Act<T> {
    Relu { eq_zero: bool },
    Leaky(T),
    Elu(T),
    Thresholded(T),
    Fn(ActivationFn),
}

/// Input indices gathered by each output element, CSR style.
#[derive(Debug, Clone, Default)]
pub struct Windows {
    ptr: Vec<usize>,
    idx: Vec<u32>,
}

impl Windows {
    fn push(&mut self, members: impl IntoIterator<Item = usize>) {
        if self.ptr.is_empty() {
            self.ptr.push(0);
        }
        self.idx.extend(members.into_iter().map(|i| i as u32));
        self.ptr.push(self.idx.len());
    }

    fn len(&self) -> usize {
        self.ptr.len().saturating_sub(1)
    }

    fn get(&self, o: usize) -> &[u32] {
        &self.idx[self.ptr[o]..self.ptr[o + 1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Simple,
    Gru,
    Lstm,
}

impl Cell {
    fn gates(self) -> usize {
        match self {
            Cell::Simple => 1,
            Cell::Gru => 3,
            Cell::Lstm => 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Recurrent<T> {
    cell: Cell,
    units: usize,
    steps: usize,
    channels: usize,
    sequences: bool,
    w: Vec<T>,
    u: Vec<T>,
    b: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Merge {
    Add,
    Subtract,
    Multiply,
    Average,
    Maximum,
    Minimum,
}

/// A node compiled for one backend and scalar type.
#[derive(Debug, Clone)]
pub enum Kernel<T> {
    Input,
    Linear(Vec<SparseMap<T>>),
    Act(Act<T>),
    PRelu(Vec<T>),
    Softmax,
    BatchNorm { gamma: Vec<T>, beta: Vec<T> },
    LayerNorm { gamma: Vec<T>, beta: Vec<T> },
    MaxPool { windows: Windows, all_ties: bool },
    GlobalMax { windows: Windows, skip_nan: bool },
    Recurrent(Recurrent<T>),
    Merge(Merge),
    Concat,
    Unsupported(LayerKind),
}

fn act_fwd<T: Real>(a: &Act<T>, x: T) -> T {
    let zero = T::zero();
    match *a {
        Act::Relu { .. } => {
            if x > zero || x.is_nan() {
                x
            } else {
                zero
            }
        }
        Act::Leaky(al) => {
            if x > zero {
                x
            } else {
                al * x
            }
        }
        Act::Elu(al) => {
            if x > zero {
                x
            } else {
                al * (x.exp() - T::one())
            }
        }
        Act::Thresholded(th) => {
            if x > th || x.is_nan() {
                x
            } else {
                zero
            }
        }
        Act::Fn(f) => match f {
            ActivationFn::Sigmoid => T::one() / (T::one() + (-x).exp()),
            ActivationFn::Tanh => x.tanh(),
            ActivationFn::Softplus => x.max(zero) + (-x.abs()).exp().ln_1p(),
            ActivationFn::Softsign => x / (T::one() + x.abs()),
            ActivationFn::Selu => {
                let s = T::of(SELU_SCALE);
                if x > zero {
                    s * x
                } else {
                    s * T::of(SELU_ALPHA) * (x.exp() - T::one())
                }
            }
            ActivationFn::Linear => x,
        },
    }
}

/// Derivative of the activation at `x` (with output `y`) times `g`.
fn act_bwd<T: Real>(a: &Act<T>, x: T, y: T, g: T) -> T {
    let zero = T::zero();
    let one = T::one();
    if x.is_nan() {
        return x;
    }
    match *a {
        Act::Relu { eq_zero } => {
            if x > zero || (eq_zero && x == zero) {
                g
            } else {
                zero
            }
        }
        Act::Leaky(al) => {
            if x > zero {
                g
            } else {
                al * g
            }
        }
        Act::Elu(al) => {
            if x > zero {
                g
            } else {
                g * al * x.exp()
            }
        }
        Act::Thresholded(th) => {
            if x > th {
                g
            } else {
                zero
            }
        }
        Act::Fn(f) => match f {
            ActivationFn::Sigmoid => g * y * (one - y),
            ActivationFn::Tanh => g * (one - y * y),
            ActivationFn::Softplus => g / (one + (-x).exp()),
            ActivationFn::Softsign => {
                let d = one + x.abs();
                g / (d * d)
            }
            ActivationFn::Selu => {
                let s = T::of(SELU_SCALE);
                if x > zero {
                    g * s
                } else {
                    g * s * T::of(SELU_ALPHA) * x.exp()
                }
            }
            ActivationFn::Linear => g,
        },
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn max_windows(sweep: &Sweep, c: usize) -> Windows {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); sweep.out_positions()];
    sweep.taps(|o, _, i| members[o].push(i));
    let mut w = Windows::default();
    for m in &members {
        for ci in 0..c {
            w.push(m.iter().map(|&i| i * c + ci));
        }
    }
    w
}

impl<T: Real> Kernel<T> {
    /// Compiles `layer` given its input shapes, output shape and weights.
    pub fn compile(
        layer: &Layer,
        inputs: &[&TensorShape],
        output: &TensorShape,
        weights: &[Vec<T>],
        fault: Option<Fault>,
    ) -> Kernel<T> {
        use Layer as L;
        if let Layer::Input = layer {
            return Kernel::Input;
        }
        if layer.kind().is_stochastic() {
            return Kernel::Unsupported(layer.kind());
        }
        let x = inputs[0];
        if let Some(maps) = compile_linear(layer, x, output, weights, fault) {
            return Kernel::Linear(maps);
        }
        let c = x.last();
        match layer {
            L::ReLU => Kernel::Act(Act::Relu { eq_zero: fault == Some(Fault::ReluEqZero) }),
            L::LeakyReLU { alpha } => Kernel::Act(Act::Leaky(T::of(*alpha))),
            L::ELU { alpha } => Kernel::Act(Act::Elu(T::of(*alpha))),
            L::ThresholdedReLU { theta } => Kernel::Act(Act::Thresholded(T::of(*theta))),
            L::Activation { function } => Kernel::Act(Act::Fn(*function)),
            L::PReLU => Kernel::PRelu(weights[0].clone()),
            L::Softmax => Kernel::Softmax,
            L::BatchNormalization => Kernel::BatchNorm { gamma: weights[0].clone(), beta: weights[1].clone() },
            L::LayerNormalization => Kernel::LayerNorm { gamma: weights[0].clone(), beta: weights[1].clone() },
            L::MaxPooling1D(p) | L::MaxPooling2D(p) | L::MaxPooling3D(p) => {
                let sweep = Sweep::new(x.spatial(), &p.pool, &p.pool, p.padding);
                let all_ties = matches!(layer, L::MaxPooling1D(_)) && fault == Some(Fault::MaxpoolTieGradient);
                Kernel::MaxPool { windows: max_windows(&sweep, c), all_ties }
            }
            L::GlobalMaxPooling1D | L::GlobalMaxPooling2D => {
                let positions: usize = x.spatial().iter().product();
                let mut windows = Windows::default();
                for ci in 0..c {
                    windows.push((0..positions).map(|p| p * c + ci));
                }
                Kernel::GlobalMax { windows, skip_nan: fault == Some(Fault::GlobalmaxpoolNeginfOnNan) }
            }
            L::SimpleRNN(p) | L::GRU(p) | L::LSTM(p) => {
                let cell = match layer {
                    L::SimpleRNN(_) => Cell::Simple,
                    L::GRU(_) => Cell::Gru,
                    _ => Cell::Lstm,
                };
                Kernel::Recurrent(Recurrent {
                    cell,
                    units: p.units,
                    steps: x.dims()[0],
                    channels: c,
                    sequences: p.return_sequences,
                    w: weights[0].clone(),
                    u: weights[1].clone(),
                    b: weights[2].clone(),
                })
            }
            L::Add => Kernel::Merge(Merge::Add),
            L::Subtract => Kernel::Merge(Merge::Subtract),
            L::Multiply => Kernel::Merge(Merge::Multiply),
            L::Average => Kernel::Merge(Merge::Average),
            L::Maximum => Kernel::Merge(Merge::Maximum),
            L::Minimum => Kernel::Merge(Merge::Minimum),
            L::Concatenate => Kernel::Concat,
            other => Kernel::Unsupported(other.kind()),
        }
    }

    /// Output for the batch. `out_shape` is the batched output shape.
    pub fn forward(&self, flavor: Flavor, xs: &[&Tensor<T>], out_shape: &[usize]) -> Tensor<T> {
        let x = xs[0];
        let batch = x.batch();
        let mut y = Tensor::zeros(out_shape.to_vec());
        let per_out = y.per_example();
        let per_in = x.per_example();
        match self {
            Kernel::Input => return x.clone(),
            Kernel::Unsupported(k) => panic!("unsupported: {k}"),
            Kernel::Linear(maps) => {
                for b in 0..batch {
                    let mut cur = x.data[b * per_in..(b + 1) * per_in].to_vec();
                    for m in maps {
                        let mut next = vec![T::zero(); m.rows];
                        m.forward(flavor, &cur, &mut next);
                        cur = next;
                    }
                    y.data[b * per_out..(b + 1) * per_out].copy_from_slice(&cur);
                }
            }
            Kernel::Act(a) => {
                for (o, &v) in y.data.iter_mut().zip(&x.data) {
                    *o = act_fwd(a, v);
                }
            }
            Kernel::PRelu(alpha) => {
                for (i, (o, &v)) in y.data.iter_mut().zip(&x.data).enumerate() {
                    *o = if v > T::zero() { v } else { alpha[i % per_in] * v };
                }
            }
            Kernel::Softmax => {
                let c = *out_shape.last().expect("rank");
                for (row, out) in x.data.chunks(c).zip(y.data.chunks_mut(c)) {
                    softmax_row(flavor, row, out);
                }
            }
            Kernel::BatchNorm { gamma, beta } => {
                let c = gamma.len();
                let n = x.len() / c;
                for ci in 0..c {
                    let (mean, inv) = moments(flavor, (0..n).map(|k| x.data[k * c + ci]), n);
                    for k in 0..n {
                        let i = k * c + ci;
                        y.data[i] = gamma[ci] * ((x.data[i] - mean) * inv) + beta[ci];
                    }
                }
            }
            Kernel::LayerNorm { gamma, beta } => {
                let c = gamma.len();
                for (row, out) in x.data.chunks(c).zip(y.data.chunks_mut(c)) {
                    let (mean, inv) = moments(flavor, row.iter().copied(), c);
                    for ci in 0..c {
                        out[ci] = gamma[ci] * ((row[ci] - mean) * inv) + beta[ci];
                    }
                }
            }
            Kernel::MaxPool { windows, .. } => {
                for b in 0..batch {
                    let xb = &x.data[b * per_in..(b + 1) * per_in];
                    for o in 0..windows.len() {
                        let (_, v) = argmax(windows.get(o).iter().map(|&i| xb[i as usize])).expect("non-empty window");
                        y.data[b * per_out + o] = v;
                    }
                }
            }
            Kernel::GlobalMax { windows, skip_nan } => {
                for b in 0..batch {
                    let xb = &x.data[b * per_in..(b + 1) * per_in];
                    for o in 0..windows.len() {
                        let vals = windows.get(o).iter().map(|&i| xb[i as usize]);
                        y.data[b * per_out + o] = if *skip_nan {
                            vals.filter(|v| !v.is_nan()).fold(T::neg_infinity(), |m, v| if v > m { v } else { m })
                        } else {
                            argmax(vals).expect("non-empty window").1
                        };
                    }
                }
            }
            Kernel::Recurrent(r) => {
                for b in 0..batch {
                    let xb = &x.data[b * per_in..(b + 1) * per_in];
                    let trace = r.run(flavor, xb);
                    let out = &mut y.data[b * per_out..(b + 1) * per_out];
                    if r.sequences {
                        for t in 0..r.steps {
                            out[t * r.units..(t + 1) * r.units].copy_from_slice(&trace.h[t + 1]);
                        }
                    } else {
                        out.copy_from_slice(&trace.h[r.steps]);
                    }
                }
            }
            Kernel::Merge(m) => {
                let k = xs.len();
                for i in 0..y.len() {
                    let vals = xs.iter().map(|t| t.data[i]);
                    y.data[i] = match m {
                        Merge::Add => sum(flavor, vals),
                        Merge::Subtract => {
                            let rest = sum(flavor, xs[1..].iter().map(|t| t.data[i]));
                            xs[0].data[i] - rest
                        }
                        Merge::Multiply => vals.fold(T::one(), |a, v| a * v),
                        Merge::Average => sum(flavor, vals) / T::of(k as f64),
                        Merge::Maximum => argmax(vals).expect("inputs").1,
                        Merge::Minimum => argmax(vals.map(|v| -v)).map(|(_, v)| -v).expect("inputs"),
                    };
                }
            }
            Kernel::Concat => {
                let widths: Vec<usize> = xs.iter().map(|t| *t.shape.last().expect("rank")).collect();
                let total: usize = widths.iter().sum();
                let rows = y.len() / total;
                for r in 0..rows {
                    let mut off = 0;
                    for (t, &w) in xs.iter().zip(&widths) {
                        y.data[r * total + off..r * total + off + w].copy_from_slice(&t.data[r * w..(r + 1) * w]);
                        off += w;
                    }
                }
            }
        }
        y
    }

    /// Feeds every discrete decision the forward pass makes (activation
    /// regions, winning window elements, winning merge inputs) into `h`.
    /// Two evaluations with equal digests took the same piecewise branch.
    pub fn branches<H: Hasher>(&self, xs: &[&Tensor<T>], h: &mut H) {
        let x = xs[0];
        let zero = T::zero();
        let per_in = x.per_example();
        match self {
            Kernel::Act(Act::Relu { .. } | Act::Leaky(_) | Act::Elu(_) | Act::Fn(ActivationFn::Selu))
            | Kernel::PRelu(_) => x.data.iter().for_each(|&v| (v > zero).hash(h)),
            Kernel::Act(Act::Thresholded(th)) => x.data.iter().for_each(|&v| (v > *th).hash(h)),
            Kernel::MaxPool { windows, .. } | Kernel::GlobalMax { windows, .. } => {
                for b in 0..x.batch() {
                    let xb = &x.data[b * per_in..(b + 1) * per_in];
                    for o in 0..windows.len() {
                        argmax(windows.get(o).iter().map(|&i| xb[i as usize])).map(|(k, _)| k).hash(h);
                    }
                }
            }
            Kernel::Merge(Merge::Maximum) => {
                (0..x.len()).for_each(|i| argmax(xs.iter().map(|t| t.data[i])).map(|(k, _)| k).hash(h))
            }
            Kernel::Merge(Merge::Minimum) => {
                (0..x.len()).for_each(|i| argmax(xs.iter().map(|t| -t.data[i])).map(|(k, _)| k).hash(h))
            }
            _ => {}
        }
    }

    /// Gradients of the loss with respect to each input, given the inputs,
    /// the forward output and the output gradient.
    pub fn backward(&self, flavor: Flavor, xs: &[&Tensor<T>], y: &Tensor<T>, gy: &Tensor<T>) -> Vec<Tensor<T>> {
        let x = xs[0];
        let batch = x.batch();
        let per_in = x.per_example();
        let per_out = y.per_example();
        let mut gx = Tensor::zeros(x.shape.clone());
        match self {
            Kernel::Input => return vec![gy.clone()],
            Kernel::Unsupported(k) => panic!("unsupported: {k}"),
            Kernel::Linear(maps) => {
                for b in 0..batch {
                    let mut cur = gy.data[b * per_out..(b + 1) * per_out].to_vec();
                    for m in maps.iter().rev() {
                        let mut prev = vec![T::zero(); m.cols];
                        m.backward(flavor, &cur, &mut prev);
                        cur = prev;
                    }
                    gx.data[b * per_in..(b + 1) * per_in].copy_from_slice(&cur);
                }
            }
            Kernel::Act(a) => {
                for i in 0..x.len() {
                    gx.data[i] = act_bwd(a, x.data[i], y.data[i], gy.data[i]);
                }
            }
            Kernel::PRelu(alpha) => {
                for i in 0..x.len() {
                    let v = x.data[i];
                    gx.data[i] = if v.is_nan() {
                        v
                    } else if v > T::zero() {
                        gy.data[i]
                    } else {
                        alpha[i % per_in] * gy.data[i]
                    };
                }
            }
            Kernel::Softmax => {
                let c = *y.shape.last().expect("rank");
                for ((yr, gr), out) in y.data.chunks(c).zip(gy.data.chunks(c)).zip(gx.data.chunks_mut(c)) {
                    let dot = sum(flavor, yr.iter().zip(gr).map(|(&a, &b)| a * b));
                    for j in 0..c {
                        out[j] = yr[j] * (gr[j] - dot);
                    }
                }
            }
            Kernel::BatchNorm { gamma, .. } => {
                let c = gamma.len();
                let n = x.len() / c;
                for ci in 0..c {
                    let idx = |k: usize| k * c + ci;
                    norm_backward(
                        flavor,
                        n,
                        gamma[ci],
                        |k| x.data[idx(k)],
                        |k| gy.data[idx(k)],
                        |k, v| gx.data[idx(k)] = v,
                    );
                }
            }
            Kernel::LayerNorm { gamma, .. } => {
                let c = gamma.len();
                let rows = x.len() / c;
                for r in 0..rows {
                    let base = r * c;
                    let xr = &x.data[base..base + c];
                    let gr = &gy.data[base..base + c];
                    let (mean, inv) = moments(flavor, xr.iter().copied(), c);
                    let dxhat: Vec<T> = (0..c).map(|j| gr[j] * gamma[j]).collect();
                    let xhat: Vec<T> = xr.iter().map(|&v| (v - mean) * inv).collect();
                    let s1 = sum(flavor, dxhat.iter().copied());
                    let s2 = sum(flavor, dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b));
                    let nn = T::of(c as f64);
                    for j in 0..c {
                        gx.data[base + j] = inv / nn * (nn * dxhat[j] - s1 - xhat[j] * s2);
                    }
                }
            }
            Kernel::MaxPool { windows, all_ties } => {
                for b in 0..batch {
                    let xb = &x.data[b * per_in..(b + 1) * per_in];
                    let gxb = &mut gx.data[b * per_in..(b + 1) * per_in];
                    for o in 0..windows.len() {
                        let win = windows.get(o);
                        let g = gy.data[b * per_out + o];
                        let (best, v) = argmax(win.iter().map(|&i| xb[i as usize])).expect("non-empty window");
                        if *all_ties && !v.is_nan() {
                            for &i in win {
                                if xb[i as usize] == v {
                                    gxb[i as usize] = gxb[i as usize] + g;
                                }
                            }
                        } else {
                            let i = win[best] as usize;
                            gxb[i] = gxb[i] + g;
                        }
                    }
                }
            }
            Kernel::GlobalMax { windows, skip_nan } => {
                for b in 0..batch {
                    let xb = &x.data[b * per_in..(b + 1) * per_in];
                    for o in 0..windows.len() {
                        let win = windows.get(o);
                        let g = gy.data[b * per_out + o];
                        let vals = win.iter().map(|&i| xb[i as usize]);
                        let best = if *skip_nan {
                            argmax(vals.map(|v| if v.is_nan() { T::neg_infinity() } else { v }))
                                .filter(|(_, v)| *v > T::neg_infinity())
                                .map(|(i, _)| i)
                        } else {
                            argmax(vals).map(|(i, _)| i)
                        };
                        if let Some(i) = best {
                            let i = b * per_in + win[i] as usize;
                            gx.data[i] = gx.data[i] + g;
                        }
                    }
                }
            }
            Kernel::Recurrent(r) => {
                for b in 0..batch {
                    let xb = &x.data[b * per_in..(b + 1) * per_in];
                    let gyb = &gy.data[b * per_out..(b + 1) * per_out];
                    let g = r.backward(flavor, xb, gyb);
                    gx.data[b * per_in..(b + 1) * per_in].copy_from_slice(&g);
                }
            }
            Kernel::Merge(m) => {
                let k = xs.len();
                let mut grads: Vec<Tensor<T>> = xs.iter().map(|t| Tensor::zeros(t.shape.clone())).collect();
                for i in 0..gy.len() {
                    let g = gy.data[i];
                    match m {
                        Merge::Add => grads.iter_mut().for_each(|t| t.data[i] = g),
                        Merge::Subtract => {
                            grads[0].data[i] = g;
                            grads[1..].iter_mut().for_each(|t| t.data[i] = -g);
                        }
                        Merge::Average => {
                            let v = g / T::of(k as f64);
                            grads.iter_mut().for_each(|t| t.data[i] = v);
                        }
                        Merge::Multiply => {
                            for j in 0..k {
                                let others = (0..k).filter(|&q| q != j).fold(T::one(), |a, q| a * xs[q].data[i]);
                                grads[j].data[i] = g * others;
                            }
                        }
                        Merge::Maximum | Merge::Minimum => {
                            let sign = if *m == Merge::Maximum { T::one() } else { -T::one() };
                            let (j, v) = argmax(xs.iter().map(|t| sign * t.data[i])).expect("inputs");
                            grads[j].data[i] = if v.is_nan() { v } else { g };
                        }
                    }
                }
                return grads;
            }
            Kernel::Concat => {
                let widths: Vec<usize> = xs.iter().map(|t| *t.shape.last().expect("rank")).collect();
                let total: usize = widths.iter().sum();
                let rows = gy.len() / total;
                let mut grads: Vec<Tensor<T>> = xs.iter().map(|t| Tensor::zeros(t.shape.clone())).collect();
                for r in 0..rows {
                    let mut off = 0;
                    for (t, &w) in grads.iter_mut().zip(&widths) {
                        t.data[r * w..(r + 1) * w].copy_from_slice(&gy.data[r * total + off..r * total + off + w]);
                        off += w;
                    }
                }
                return grads;
            }
        }
        vec![gx]
    }
}

fn softmax_row<T: Real>(flavor: Flavor, x: &[T], out: &mut [T]) {
    let (_, m) = argmax(x.iter().copied()).expect("non-empty row");
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - m).exp();
    }
    let s = sum(flavor, out.iter().copied());
    for o in out.iter_mut() {
        *o = *o / s;
    }
}

/// Mean and inverse standard deviation of `n` values.
fn moments<T: Real>(flavor: Flavor, vals: impl Iterator<Item = T> + Clone, n: usize) -> (T, T) {
    let nn = T::of(n as f64);
    let mean = sum(flavor, vals.clone()) / nn;
    let var = sum(flavor, vals.map(|v| (v - mean) * (v - mean))) / nn;
    (mean, T::one() / (var + T::of(NORM_EPSILON)).sqrt())
}

fn norm_backward<T: Real>(
    flavor: Flavor,
    n: usize,
    gamma: T,
    x: impl Fn(usize) -> T,
    g: impl Fn(usize) -> T,
    mut put: impl FnMut(usize, T),
) {
    let (mean, inv) = moments(flavor, (0..n).map(&x), n);
    let xhat: Vec<T> = (0..n).map(|k| (x(k) - mean) * inv).collect();
    let dxhat: Vec<T> = (0..n).map(|k| g(k) * gamma).collect();
    let s1 = sum(flavor, dxhat.iter().copied());
    let s2 = sum(flavor, dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b));
    let nn = T::of(n as f64);
    for k in 0..n {
        put(k, inv / nn * (nn * dxhat[k] - s1 - xhat[k] * s2));
    }
}

/// Per-step values kept for backpropagation through time.
struct RecTrace<T> {
    /// `h[0]` is the zero state; `h[t + 1]` follows step `t`.
    h: Vec<Vec<T>>,
    c: Vec<Vec<T>>,
    /// Gate activations per step, `gates * units` wide.
    gates: Vec<Vec<T>>,
}

impl<T: Real> Recurrent<T> {
    fn width(&self) -> usize {
        self.cell.gates() * self.units
    }

    /// `b[j] + Σ_c x[c] W[c, j] + Σ_v h[v] U[v, j]` for gate columns `cols`.
    fn preact(&self, flavor: Flavor, x: &[T], h: &[T], j: usize) -> T {
        let gw = self.width();
        let xs = (0..self.channels).map(|c| x[c] * self.w[c * gw + j]);
        let hs = (0..self.units).map(|v| h[v] * self.u[v * gw + j]);
        accumulate(flavor, self.b[j], xs.chain(hs))
    }

    fn run(&self, flavor: Flavor, x: &[T]) -> RecTrace<T> {
        let u = self.units;
        let zero = vec![T::zero(); u];
        let mut tr = RecTrace { h: vec![zero.clone()], c: vec![zero], gates: Vec::new() };
        for t in 0..self.steps {
            let xt = &x[t * self.channels..(t + 1) * self.channels];
            let hp = tr.h[t].clone();
            match self.cell {
                Cell::Simple => {
                    let h: Vec<T> = (0..u).map(|j| self.preact(flavor, xt, &hp, j).tanh()).collect();
                    tr.gates.push(h.clone());
                    tr.h.push(h);
                }
                Cell::Gru => {
                    let z: Vec<T> = (0..u).map(|j| sigmoid(self.preact(flavor, xt, &hp, j))).collect();
                    let r: Vec<T> = (0..u).map(|j| sigmoid(self.preact(flavor, xt, &hp, u + j))).collect();
                    let rh: Vec<T> = (0..u).map(|v| r[v] * hp[v]).collect();
                    let hh: Vec<T> = (0..u).map(|j| self.preact(flavor, xt, &rh, 2 * u + j).tanh()).collect();
                    let h: Vec<T> = (0..u).map(|j| z[j] * hp[j] + (T::one() - z[j]) * hh[j]).collect();
                    tr.gates.push([z, r, hh].concat());
                    tr.h.push(h);
                }
                Cell::Lstm => {
                    let a: Vec<T> = (0..4 * u).map(|j| self.preact(flavor, xt, &hp, j)).collect();
                    let cp = tr.c[t].clone();
                    let mut g = vec![T::zero(); 4 * u];
                    let mut c = vec![T::zero(); u];
                    let mut h = vec![T::zero(); u];
                    for j in 0..u {
                        g[j] = sigmoid(a[j]);
                        g[u + j] = sigmoid(a[u + j]);
                        g[2 * u + j] = a[2 * u + j].tanh();
                        g[3 * u + j] = sigmoid(a[3 * u + j]);
                        c[j] = g[u + j] * cp[j] + g[j] * g[2 * u + j];
                        h[j] = g[3 * u + j] * c[j].tanh();
                    }
                    tr.gates.push(g);
                    tr.c.push(c);
                    tr.h.push(h);
                }
            }
        }
        tr
    }

    fn backward(&self, flavor: Flavor, x: &[T], gy: &[T]) -> Vec<T> {
        let u = self.units;
        let gw = self.width();
        let one = T::one();
        let tr = self.run(flavor, x);
        let mut gx = vec![T::zero(); x.len()];
        let mut dh_next = vec![T::zero(); u];
        let mut dc_next = vec![T::zero(); u];
        for t in (0..self.steps).rev() {
            let mut dh = dh_next.clone();
            if self.sequences {
                for j in 0..u {
                    dh[j] = dh[j] + gy[t * u + j];
                }
            } else if t + 1 == self.steps {
                for j in 0..u {
                    dh[j] = dh[j] + gy[j];
                }
            }
            let hp = &tr.h[t];
            let g = &tr.gates[t];
            // Pre-activation gradients for every gate column.
            let mut da = vec![T::zero(); gw];
            let mut dhp = vec![T::zero(); u];
            // Columns whose recurrent input is `h_prev` itself.
            let mut direct_cols = gw;
            match self.cell {
                Cell::Simple => {
                    for j in 0..u {
                        da[j] = dh[j] * (one - g[j] * g[j]);
                    }
                }
                Cell::Gru => {
                    let (z, r, hh) = (&g[..u], &g[u..2 * u], &g[2 * u..]);
                    let mut dr = vec![T::zero(); u];
                    for j in 0..u {
                        let dz = dh[j] * (hp[j] - hh[j]);
                        let dhh = dh[j] * (one - z[j]);
                        dhp[j] = dh[j] * z[j];
                        da[2 * u + j] = dhh * (one - hh[j] * hh[j]);
                        da[j] = dz * z[j] * (one - z[j]);
                    }
                    for v in 0..u {
                        let drh = sum(flavor, (0..u).map(|j| da[2 * u + j] * self.u[v * gw + 2 * u + j]));
                        dhp[v] = dhp[v] + drh * r[v];
                        dr[v] = drh * hp[v];
                    }
                    for j in 0..u {
                        da[u + j] = dr[j] * r[j] * (one - r[j]);
                    }
                    direct_cols = 2 * u;
                }
                Cell::Lstm => {
                    let c = &tr.c[t + 1];
                    let cp = &tr.c[t];
                    let mut dc_prev = vec![T::zero(); u];
                    for j in 0..u {
                        let (i, f, gg, o) = (g[j], g[u + j], g[2 * u + j], g[3 * u + j]);
                        let tc = c[j].tanh();
                        let d_o = dh[j] * tc;
                        let dc = dc_next[j] + dh[j] * o * (one - tc * tc);
                        da[j] = dc * gg * i * (one - i);
                        da[u + j] = dc * cp[j] * f * (one - f);
                        da[2 * u + j] = dc * i * (one - gg * gg);
                        da[3 * u + j] = d_o * o * (one - o);
                        dc_prev[j] = dc * f;
                    }
                    dc_next = dc_prev;
                }
            }
            for v in 0..u {
                let s = sum(flavor, (0..direct_cols).map(|j| da[j] * self.u[v * gw + j]));
                dhp[v] = dhp[v] + s;
            }
            for ci in 0..self.channels {
                gx[t * self.channels + ci] = sum(flavor, (0..gw).map(|j| da[j] * self.w[ci * gw + j]));
            }
            dh_next = dhp;
        }
        gx
    }
}
