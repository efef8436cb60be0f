//! Layers that are affine in their input, compiled to per-example sparse
//! matrices.

use super::accum::accumulate;
use super::backend::{Fault, Flavor};
use crate::ir::layer::{same_pad_before, window_out};
use crate::ir::{Layer, Padding, TensorShape};
use crate::tensor::Real;

/// `y = A x + b` for one example, stored as CSR with an optional transposed
/// copy for the reordered backward pass.
#[derive(Debug, Clone)]
pub struct SparseMap<T> {
    pub rows: usize,
    pub cols: usize,
    ptr: Vec<usize>,
    idx: Vec<u32>,
    val: Vec<T>,
    bias: Option<Vec<T>>,
    t_ptr: Vec<usize>,
    t_idx: Vec<u32>,
    t_val: Vec<T>,
}

impl<T: Real> SparseMap<T> {
    /// Builds from `(row, col, value)` triplets; within a row, entries keep
    /// their given order.
    pub fn from_triplets(rows: usize, cols: usize, mut trip: Vec<(u32, u32, T)>, bias: Option<Vec<T>>) -> Self {
        trip.sort_by_key(|t| t.0);
        let mut ptr = vec![0usize; rows + 1];
        for t in &trip {
            ptr[t.0 as usize + 1] += 1;
        }
        for r in 0..rows {
            ptr[r + 1] += ptr[r];
        }
        let idx: Vec<u32> = trip.iter().map(|t| t.1).collect();
        let val: Vec<T> = trip.iter().map(|t| t.2).collect();

        let mut t_ptr = vec![0usize; cols + 1];
        for &c in &idx {
            t_ptr[c as usize + 1] += 1;
        }
        for c in 0..cols {
            t_ptr[c + 1] += t_ptr[c];
        }
        let mut fill = t_ptr.clone();
        let mut t_idx = vec![0u32; idx.len()];
        let mut t_val = vec![T::zero(); idx.len()];
        for r in 0..rows {
            for k in ptr[r]..ptr[r + 1] {
                let c = idx[k] as usize;
                t_idx[fill[c]] = r as u32;
                t_val[fill[c]] = val[k];
                fill[c] += 1;
            }
        }
        if let Some(b) = &bias {
            assert_eq!(b.len(), rows);
        }
        Self { rows, cols, ptr, idx, val, bias, t_ptr, t_idx, t_val }
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    pub fn forward(&self, flavor: Flavor, x: &[T], y: &mut [T]) {
        for r in 0..self.rows {
            let b = self.bias.as_ref().map_or(T::zero(), |b| b[r]);
            let span = self.ptr[r]..self.ptr[r + 1];
            let terms = self.idx[span.clone()].iter().zip(&self.val[span]).map(|(&c, &a)| a * x[c as usize]);
            y[r] = accumulate(flavor, b, terms);
        }
    }

    /// `gx = Aᵀ gy` (overwrites `gx`).
    pub fn backward(&self, flavor: Flavor, gy: &[T], gx: &mut [T]) {
        match flavor {
            Flavor::Naive => {
                gx.iter_mut().for_each(|v| *v = T::zero());
                for r in 0..self.rows {
                    let g = gy[r];
                    for k in self.ptr[r]..self.ptr[r + 1] {
                        let c = self.idx[k] as usize;
                        gx[c] = gx[c] + self.val[k] * g;
                    }
                }
            }
            Flavor::Reordered => {
                for c in 0..self.cols {
                    let span = self.t_ptr[c]..self.t_ptr[c + 1];
                    let terms =
                        self.t_idx[span.clone()].iter().zip(&self.t_val[span]).map(|(&r, &a)| a * gy[r as usize]);
                    gx[c] = accumulate(flavor, T::zero(), terms);
                }
            }
        }
    }
}

fn row_major_strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for a in (0..dims.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * dims[a + 1];
    }
    s
}

/// Calls `f` with every multi-index of `dims` in row-major order.
pub fn for_each_index(dims: &[usize], mut f: impl FnMut(&[usize])) {
    if dims.contains(&0) {
        return;
    }
    let mut idx = vec![0usize; dims.len()];
    loop {
        f(&idx);
        let mut a = dims.len();
        loop {
            if a == 0 {
                return;
            }
            a -= 1;
            idx[a] += 1;
            if idx[a] < dims[a] {
                break;
            }
            idx[a] = 0;
        }
    }
}

fn flat(idx: &[usize], strides: &[usize]) -> usize {
    idx.iter().zip(strides).map(|(i, s)| i * s).sum()
}

/// A strided window sweep over the spatial axes of a channels-last tensor.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub in_sp: Vec<usize>,
    pub out_sp: Vec<usize>,
    pub kernel: Vec<usize>,
    pub strides: Vec<usize>,
    pub pad_before: Vec<usize>,
}

impl Sweep {
    pub fn new(in_sp: &[usize], kernel: &[usize], strides: &[usize], padding: Padding) -> Self {
        let out_sp = (0..in_sp.len())
            .map(|a| window_out(in_sp[a], kernel[a], strides[a], padding).expect("shape checked"))
            .collect();
        let pad_before = (0..in_sp.len())
            .map(|a| match padding {
                Padding::Valid => 0,
                Padding::Same => same_pad_before(in_sp[a], kernel[a], strides[a]),
            })
            .collect();
        Self { in_sp: in_sp.to_vec(), out_sp, kernel: kernel.to_vec(), strides: strides.to_vec(), pad_before }
    }

    /// Visits `(out_pos, tap, in_pos)` for every in-bounds tap, as flat
    /// spatial indices, in row-major output then tap order.
    pub fn taps(&self, mut f: impl FnMut(usize, usize, usize)) {
        let in_st = row_major_strides(&self.in_sp);
        let out_st = row_major_strides(&self.out_sp);
        let k_st = row_major_strides(&self.kernel);
        let mut pos = vec![0usize; self.in_sp.len()];
        for_each_index(&self.out_sp, |o| {
            let of = flat(o, &out_st);
            for_each_index(&self.kernel, |k| {
                for a in 0..o.len() {
                    let p = (o[a] * self.strides[a] + k[a]) as isize - self.pad_before[a] as isize;
                    if p < 0 || p as usize >= self.in_sp[a] {
                        return;
                    }
                    pos[a] = p as usize;
                }
                f(of, flat(k, &k_st), flat(&pos, &in_st));
            });
        });
    }

    pub fn out_positions(&self) -> usize {
        self.out_sp.iter().product()
    }
}

type Trip<T> = Vec<(u32, u32, T)>;

fn conv_map<T: Real>(sweep: &Sweep, c: usize, f: usize, w: &[T], b: &[T]) -> SparseMap<T> {
    let mut trip: Trip<T> = Vec::new();
    sweep.taps(|o, k, i| {
        for ci in 0..c {
            for fi in 0..f {
                trip.push(((o * f + fi) as u32, (i * c + ci) as u32, w[(k * c + ci) * f + fi]));
            }
        }
    });
    let rows = sweep.out_positions() * f;
    let bias = (0..rows).map(|r| b[r % f]).collect();
    SparseMap::from_triplets(rows, sweep.in_sp.iter().product::<usize>() * c, trip, Some(bias))
}

fn depthwise_map<T: Real>(sweep: &Sweep, c: usize, m: usize, w: &[T], b: Option<&[T]>) -> SparseMap<T> {
    let mut trip: Trip<T> = Vec::new();
    sweep.taps(|o, k, i| {
        for ci in 0..c {
            for mi in 0..m {
                let oc = ci * m + mi;
                trip.push(((o * c * m + oc) as u32, (i * c + ci) as u32, w[(k * c + ci) * m + mi]));
            }
        }
    });
    let rows = sweep.out_positions() * c * m;
    let bias = b.map(|b| (0..rows).map(|r| b[r % (c * m)]).collect());
    SparseMap::from_triplets(rows, sweep.in_sp.iter().product::<usize>() * c, trip, bias)
}

/// Dense over the last axis at each of `positions` positions.
fn dense_map<T: Real>(positions: usize, c: usize, u: usize, w: &[T], b: &[T]) -> SparseMap<T> {
    let mut trip: Trip<T> = Vec::with_capacity(positions * c * u);
    for p in 0..positions {
        for ui in 0..u {
            for ci in 0..c {
                trip.push(((p * u + ui) as u32, (p * c + ci) as u32, w[ci * u + ui]));
            }
        }
    }
    let bias = (0..positions * u).map(|r| b[r % u]).collect();
    SparseMap::from_triplets(positions * u, positions * c, trip, Some(bias))
}

/// Pure index remap: output element `r` copies input `src(r)` (or is zero).
fn gather_map<T: Real>(rows: usize, cols: usize, src: impl Fn(usize) -> Option<usize>) -> SparseMap<T> {
    let trip = (0..rows).filter_map(|r| src(r).map(|c| (r as u32, c as u32, T::one()))).collect();
    SparseMap::from_triplets(rows, cols, trip, None)
}

fn unravel(mut f: usize, dims: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; dims.len()];
    for a in (0..dims.len()).rev() {
        idx[a] = f % dims[a];
        f /= dims[a];
    }
    idx
}

fn avg_pool_map<T: Real>(sweep: &Sweep, c: usize) -> SparseMap<T> {
    let mut counts = vec![0usize; sweep.out_positions()];
    sweep.taps(|o, _, _| counts[o] += 1);
    let mut trip: Trip<T> = Vec::new();
    sweep.taps(|o, _, i| {
        let w = T::one() / T::of(counts[o] as f64);
        for ci in 0..c {
            trip.push(((o * c + ci) as u32, (i * c + ci) as u32, w));
        }
    });
    SparseMap::from_triplets(sweep.out_positions() * c, sweep.in_sp.iter().product::<usize>() * c, trip, None)
}

/// Compiles an affine layer; `None` for kinds that are not affine.
pub fn compile_linear<T: Real>(
    layer: &Layer,
    input: &TensorShape,
    output: &TensorShape,
    weights: &[Vec<T>],
    fault: Option<Fault>,
) -> Option<Vec<SparseMap<T>>> {
    use Layer as L;
    let sp = input.spatial();
    let c = input.last();
    let n_in = input.element_count();
    let n_out = output.element_count();
    let positions: usize = sp.iter().product();
    let maps = match layer {
        L::Dense { units } => vec![dense_map(positions, c, *units, &weights[0], &weights[1])],
        L::Conv1D(p) | L::Conv2D(p) | L::Conv3D(p) => {
            let sweep = Sweep::new(sp, &p.kernel, &p.strides, p.padding);
            vec![conv_map(&sweep, c, p.filters, &weights[0], &weights[1])]
        }
        L::DepthwiseConv2D(p) => {
            let sweep = Sweep::new(sp, &p.kernel, &p.strides, p.padding);
            vec![depthwise_map(&sweep, c, p.multiplier, &weights[0], Some(&weights[1]))]
        }
        L::SeparableConv2D(p) => {
            let sweep = Sweep::new(sp, &p.kernel, &p.strides, p.padding);
            let dw = depthwise_map(&sweep, c, p.multiplier, &weights[0], None);
            let pw = dense_map(sweep.out_positions(), c * p.multiplier, p.filters, &weights[1], &weights[2]);
            vec![dw, pw]
        }
        L::Conv2DTranspose(p) => {
            let out_sp = output.spatial();
            let f = p.filters;
            let crop: Vec<usize> = (0..2)
                .map(|a| {
                    let full = sp[a] * p.strides[a] + p.kernel[a].saturating_sub(p.strides[a]);
                    (full - out_sp[a]) / 2
                })
                .collect();
            let mut trip: Trip<T> = Vec::new();
            for i0 in 0..sp[0] {
                for i1 in 0..sp[1] {
                    for k0 in 0..p.kernel[0] {
                        for k1 in 0..p.kernel[1] {
                            let o0 = (i0 * p.strides[0] + k0) as isize - crop[0] as isize;
                            let o1 = (i1 * p.strides[1] + k1) as isize - crop[1] as isize;
                            if o0 < 0 || o1 < 0 || o0 as usize >= out_sp[0] || o1 as usize >= out_sp[1] {
                                continue;
                            }
                            let o = o0 as usize * out_sp[1] + o1 as usize;
                            let i = i0 * sp[1] + i1;
                            let k = k0 * p.kernel[1] + k1;
                            for ci in 0..c {
                                for fi in 0..f {
                                    trip.push((
                                        (o * f + fi) as u32,
                                        (i * c + ci) as u32,
                                        weights[0][(k * c + ci) * f + fi],
                                    ));
                                }
                            }
                        }
                    }
                }
            }
            let bias = (0..n_out).map(|r| weights[1][r % f]).collect();
            vec![SparseMap::from_triplets(n_out, n_in, trip, Some(bias))]
        }
        L::LocallyConnected1D(p) => {
            let steps = output.dims()[0];
            let f = p.filters;
            let mut trip: Trip<T> = Vec::new();
            for t in 0..steps {
                for fi in 0..f {
                    for j in 0..p.kernel {
                        for ci in 0..c {
                            let w = weights[0][(t * p.kernel * c + j * c + ci) * f + fi];
                            trip.push(((t * f + fi) as u32, ((t * p.stride + j) * c + ci) as u32, w));
                        }
                    }
                }
            }
            vec![SparseMap::from_triplets(n_out, n_in, trip, Some(weights[1].clone()))]
        }
        L::AveragePooling1D(p) | L::AveragePooling2D(p) | L::AveragePooling3D(p) => {
            let mut sweep = Sweep::new(sp, &p.pool, &p.pool, p.padding);
            if matches!(layer, L::AveragePooling2D(_))
                && fault == Some(Fault::PoolingLocation)
                && p.padding == Padding::Same
            {
                for a in 0..sp.len() {
                    if p.pool[a] == sp[a] {
                        sweep.pad_before[a] = p.pool[a] / 2;
                    }
                }
            }
            vec![avg_pool_map(&sweep, c)]
        }
        L::GlobalAveragePooling1D | L::GlobalAveragePooling2D => {
            let w = T::one() / T::of(positions as f64);
            let mut trip: Trip<T> = Vec::new();
            for ci in 0..c {
                for p in 0..positions {
                    trip.push((ci as u32, (p * c + ci) as u32, w));
                }
            }
            vec![SparseMap::from_triplets(c, n_in, trip, None)]
        }
        L::Reshape { .. } | L::Flatten => vec![gather_map(n_out, n_in, Some)],
        L::Permute { axes } => {
            let in_st = row_major_strides(input.dims());
            let out_dims = output.dims().to_vec();
            vec![gather_map(n_out, n_in, |r| {
                let o = unravel(r, &out_dims);
                let mut src = 0;
                for (j, &a) in axes.iter().enumerate() {
                    src += o[j] * in_st[a];
                }
                Some(src)
            })]
        }
        L::RepeatVector { .. } => vec![gather_map(n_out, n_in, |r| Some(r % c))],
        L::ZeroPadding1D { pad } => {
            let lead = [pad[0]];
            vec![shift_map(input, output, &lead)]
        }
        L::ZeroPadding2D { pad } => vec![shift_map(input, output, &[pad[0][0], pad[1][0]])],
        L::Cropping1D { crop } => vec![crop_map(input, output, &[crop[0]])],
        L::Cropping2D { crop } => vec![crop_map(input, output, &[crop[0][0], crop[1][0]])],
        L::UpSampling1D { size } => vec![upsample_map(input, output, &[*size])],
        L::UpSampling2D { size } => vec![upsample_map(input, output, size)],
        _ => return None,
    };
    Some(maps)
}

/// Zero padding: output spatial position `o` reads input `o - lead`.
fn shift_map<T: Real>(input: &TensorShape, output: &TensorShape, lead: &[usize]) -> SparseMap<T> {
    let in_st = row_major_strides(input.dims());
    let out_dims = output.dims().to_vec();
    let in_dims = input.dims().to_vec();
    gather_map(output.element_count(), input.element_count(), |r| {
        let o = unravel(r, &out_dims);
        let mut src = o[o.len() - 1] * in_st[o.len() - 1];
        for a in 0..lead.len() {
            let p = o[a] as isize - lead[a] as isize;
            if p < 0 || p as usize >= in_dims[a] {
                return None;
            }
            src += p as usize * in_st[a];
        }
        Some(src)
    })
}

fn crop_map<T: Real>(input: &TensorShape, output: &TensorShape, lead: &[usize]) -> SparseMap<T> {
    let in_st = row_major_strides(input.dims());
    let out_dims = output.dims().to_vec();
    gather_map(output.element_count(), input.element_count(), |r| {
        let o = unravel(r, &out_dims);
        let mut src = o[o.len() - 1] * in_st[o.len() - 1];
        for a in 0..lead.len() {
            src += (o[a] + lead[a]) * in_st[a];
        }
        Some(src)
    })
}

fn upsample_map<T: Real>(input: &TensorShape, output: &TensorShape, size: &[usize]) -> SparseMap<T> {
    let in_st = row_major_strides(input.dims());
    let out_dims = output.dims().to_vec();
    gather_map(output.element_count(), input.element_count(), |r| {
        let o = unravel(r, &out_dims);
        let mut src = o[o.len() - 1] * in_st[o.len() - 1];
        for a in 0..size.len() {
            src += (o[a] / size[a]) * in_st[a];
        }
        Some(src)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::layer::{ConvParams, PoolParams};

    fn shape(d: &[usize]) -> TensorShape {
        TensorShape::new(d.to_vec()).unwrap()
    }

    fn apply(layer: &Layer, input: &[usize], x: &[f64], weights: &[Vec<f64>]) -> Vec<f64> {
        let ins = shape(input);
        let out = layer.output_shape(&[&ins]).unwrap();
        let maps = compile_linear(layer, &ins, &out, weights, None).unwrap();
        let mut cur = x.to_vec();
        for m in &maps {
            let mut y = vec![0.0; m.rows];
            m.forward(Flavor::Naive, &cur, &mut y);
            cur = y;
        }
        cur
    }

    #[test]
    fn dense_identity() {
        let y = apply(&Layer::Dense { units: 2 }, &[2], &[1.0, 2.0], &[vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]]);
        assert_eq!(y, vec![1.0, 2.0]);
    }

    #[test]
    fn conv1d_same_matches_direct_sum() {
        let layer = Layer::Conv1D(ConvParams { filters: 1, kernel: vec![3], strides: vec![1], padding: Padding::Same });
        let y = apply(&layer, &[4, 1], &[1.0, 2.0, 3.0, 4.0], &[vec![1.0, 10.0, 100.0], vec![0.5]]);
        assert_eq!(y, vec![210.5, 321.5, 432.5, 43.5]);
    }

    #[test]
    fn same_average_pool_excludes_padding() {
        let layer = Layer::AveragePooling1D(PoolParams { pool: vec![2], padding: Padding::Same });
        let y = apply(&layer, &[3, 1], &[2.0, 4.0, 9.0], &[]);
        assert_eq!(y, vec![3.0, 9.0]);
    }

    #[test]
    fn permute_and_padding() {
        let y = apply(&Layer::Permute { axes: vec![1, 0] }, &[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[]);
        assert_eq!(y, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let z = apply(&Layer::ZeroPadding1D { pad: [1, 0] }, &[2, 1], &[7.0, 8.0], &[]);
        assert_eq!(z, vec![0.0, 7.0, 8.0]);
        let u = apply(&Layer::UpSampling1D { size: 2 }, &[2, 1], &[7.0, 8.0], &[]);
        assert_eq!(u, vec![7.0, 7.0, 8.0, 8.0]);
        let c = apply(&Layer::Cropping1D { crop: [1, 0] }, &[3, 1], &[7.0, 8.0, 9.0], &[]);
        assert_eq!(c, vec![8.0, 9.0]);
    }

    #[test]
    fn backward_is_the_transpose_in_both_flavors() {
        let layer =
            Layer::Conv2D(ConvParams { filters: 2, kernel: vec![3, 3], strides: vec![2, 1], padding: Padding::Same });
        let ins = shape(&[5, 4, 2]);
        let out = layer.output_shape(&[&ins]).unwrap();
        let w: Vec<f64> = (0..36).map(|i| (i as f64 * 0.37).sin()).collect();
        let maps = compile_linear(&layer, &ins, &out, &[w, vec![0.1, -0.2]], None).unwrap();
        let m = &maps[0];
        let gy: Vec<f64> = (0..m.rows).map(|i| (i as f64 * 1.3).cos()).collect();
        let mut a = vec![0.0; m.cols];
        let mut b = vec![0.0; m.cols];
        m.backward(Flavor::Naive, &gy, &mut a);
        m.backward(Flavor::Reordered, &gy, &mut b);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        // <A e_j, gy> equals (Aᵀ gy)_j
        for j in [0, 7, m.cols - 1] {
            let mut e = vec![0.0; m.cols];
            e[j] = 1.0;
            let mut y = vec![0.0; m.rows];
            m.forward(Flavor::Naive, &e, &mut y);
            let lin: f64 = y.iter().zip(&gy).map(|(y, g)| y * g).sum::<f64>()
                - (0..m.rows).map(|r| [0.1, -0.2][r % 2] * gy[r]).sum::<f64>();
            assert!((lin - a[j]).abs() < 1e-9);
        }
    }
}
