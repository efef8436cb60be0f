//! Central finite-difference oracle for backward-stage gradients, evaluated
//! in `f64` by re-executing the part of the graph downstream of each
//! perturbed edge.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::backend::Backend;
use super::exec::{Pass, Program};
use crate::ir::ModelSpec;
use crate::tensor::{Real, Tensor};

/// Gradient magnitude below which tolerances become absolute.
pub const GRADIENT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct FdOptions {
    /// Outer step; the estimate also uses `h / 2`.
    pub h: f64,
    /// Elements checked per node (`usize::MAX` checks every element).
    pub samples: usize,
    pub seed: u64,
    /// Relative tolerance of the step-halving and symmetry checks that flag
    /// an element as unverifiable.
    pub consistency: f64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self { h: 1e-3, samples: 16, seed: 0, consistency: 1e-4 }
    }
}

/// Oracle estimates for a subset of the elements of one node's stacked
/// input gradient. `None` marks an unverifiable element.
#[derive(Debug, Clone)]
pub struct FdNode {
    pub node: usize,
    pub elements: Vec<(usize, Option<f64>)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdComparison {
    pub node: usize,
    pub checked: usize,
    pub unverifiable: usize,
    /// Largest absolute deviation over verifiable elements divided by the
    /// node's gradient magnitude.
    pub rel_err: f64,
}

struct Oracle<'a> {
    program: Program<f64>,
    labels: Tensor<f64>,
    base: Pass<f64>,
    spec: &'a ModelSpec,
}

impl Oracle<'_> {
    /// Loss after adding `delta` to element `elem` of input slot `slot` of
    /// node `i` (for the source node: of its output).
    /// Returns the loss and a digest of the branches taken by every
    /// re-executed node and by the loss.
    fn loss_at(&self, i: usize, slot: usize, elem: usize, delta: f64) -> (f64, u64) {
        let mut h = DefaultHasher::new();
        let p = &self.program;
        let n = p.order.len();
        let mut over: Vec<Option<Tensor<f64>>> = vec![None; n];
        if i == p.source {
            let mut y = self.base.outputs[i].clone();
            y.data[elem] += delta;
            over[i] = Some(y);
        } else {
            let mut x = self.base.outputs[p.preds[i][slot]].clone();
            x.data[elem] += delta;
            let xs: Vec<&Tensor<f64>> = p.preds[i]
                .iter()
                .enumerate()
                .map(|(k, &q)| if k == slot { &x } else { &self.base.outputs[q] })
                .collect();
            p.node_branches(i, &xs, &mut h);
            over[i] = Some(p.eval_node(i, &xs));
        }
        let start = p.order.iter().position(|&j| j == i).expect("node in order");
        for &j in &p.order[start + 1..] {
            if !p.preds[j].iter().any(|&q| over[q].is_some()) {
                continue;
            }
            let xs: Vec<&Tensor<f64>> =
                p.preds[j].iter().map(|&q| over[q].as_ref().unwrap_or(&self.base.outputs[q])).collect();
            p.node_branches(j, &xs, &mut h);
            over[j] = Some(p.eval_node(j, &xs));
        }
        let y = over[p.sink].as_ref().unwrap_or(&self.base.outputs[p.sink]);
        p.loss_branches(y, &self.labels, &mut h);
        (p.loss(y, &self.labels).0, h.finish())
    }

    /// Value currently held at the perturbed position.
    fn value_at(&self, i: usize, slot: usize, elem: usize) -> f64 {
        let p = &self.program;
        let t = if i == p.source { &self.base.outputs[i] } else { &self.base.outputs[p.preds[i][slot]] };
        t.data[elem]
    }

    fn estimate(&self, i: usize, slot: usize, elem: usize, opts: &FdOptions, scale: f64) -> Option<f64> {
        let h = opts.h * self.value_at(i, slot, elem).abs().max(1.0);
        let l0 = self.base.loss_output;
        let (lp, bp) = self.loss_at(i, slot, elem, h);
        let (lm, bm) = self.loss_at(i, slot, elem, -h);
        let (lp2, bp2) = self.loss_at(i, slot, elem, h / 2.0);
        let (lm2, bm2) = self.loss_at(i, slot, elem, -h / 2.0);
        if ![lp, lm, lp2, lm2].iter().all(|v| v.is_finite()) {
            return None;
        }
        // A perturbation that switches a piecewise branch straddles a
        // nondifferentiable point.
        if !(bp == bm && bp == bp2 && bp == bm2) {
            return None;
        }
        let c1 = (lp - lm) / (2.0 * h);
        let c2 = (lp2 - lm2) / h;
        let asym1 = (lp - l0) / h - (l0 - lm) / h;
        let asym2 = (lp2 - l0) / (h / 2.0) - (l0 - lm2) / (h / 2.0);
        let bound = opts.consistency * scale.max(c1.abs()).max(c2.abs()).max(GRADIENT_FLOOR);
        let roundoff = 64.0 * f64::EPSILON * l0.abs().max(f64::MIN_POSITIVE) / h;
        if roundoff > bound || (c1 - c2).abs() > bound || (asym1 - 2.0 * asym2).abs() > bound {
            return None;
        }
        // Richardson extrapolation of the two central differences.
        Some((4.0 * c2 - c1) / 3.0)
    }
}

impl Oracle<'_> {
    fn check_node(&self, node: usize, opts: &FdOptions) -> FdNode {
        let lens: Vec<usize> = self.base.input_grads[node].iter().map(|g| g.len()).collect();
        let total: usize = lens.iter().sum();
        let scale = self.base.input_grads[node].iter().map(|g| g.max_abs()).fold(0.0, f64::max);
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(node as u64);
        let picks: Vec<usize> = if opts.samples >= total {
            (0..total).collect()
        } else {
            let mut v = sample(&mut rng, total, opts.samples).into_vec();
            v.sort_unstable();
            v
        };
        let mut elements = Vec::with_capacity(picks.len());
        for flat in picks {
            let (mut slot, mut elem) = (0, flat);
            while elem >= lens[slot] {
                elem -= lens[slot];
                slot += 1;
            }
            elements.push((flat, self.estimate(node, slot, elem, opts, scale)));
        }
        FdNode { node, elements }
    }
}

/// Estimates the stacked input gradient of every node at sampled elements.
/// Fails if the base pass is not finite.
pub fn finite_difference_gradients(
    spec: &ModelSpec,
    backend: Backend,
    opts: &FdOptions,
) -> Result<Vec<FdNode>, String> {
    let program = Program::<f64>::compile(spec, backend)?;
    let input = spec.input.cast::<f64>();
    let labels = spec.labels.cast::<f64>();
    let base = program.pass(&input, &labels);
    let finite = base.loss_output.is_finite() && base.outputs.iter().all(|t| t.is_finite());
    if !finite {
        return Err("base pass is not finite".into());
    }
    let oracle = Oracle { program, labels, base, spec };
    let n = oracle.spec.graph.len();
    let workers = std::thread::available_parallelism().map_or(1, |w| w.get()).min(n);
    let next = AtomicUsize::new(0);
    let mut out: Vec<FdNode> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let node = next.fetch_add(1, Ordering::Relaxed);
                        if node >= n {
                            break done;
                        }
                        done.push(oracle.check_node(node, opts));
                    }
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("oracle worker")).collect()
    });
    out.sort_by_key(|f| f.node);
    Ok(out)
}

/// Compares backward-stage traces (stacked per node) against oracle
/// estimates. Every node's error is normalized by the larger of its gradient
/// magnitude and the oracle magnitude.
pub fn compare_with_fd<T: Real>(bc: &[Tensor<T>], fd: &[FdNode]) -> Vec<FdComparison> {
    fd.iter()
        .map(|n| {
            let g = &bc[n.node];
            let mut scale = g.max_abs();
            let mut worst = 0.0f64;
            let mut unverifiable = 0;
            for &(idx, est) in &n.elements {
                match est {
                    None => unverifiable += 1,
                    Some(e) => {
                        scale = scale.max(e.abs());
                        worst = worst.max((g.data[idx].as_f64() - e).abs());
                    }
                }
            }
            let rel_err = if worst == 0.0 { 0.0 } else { worst / scale.max(GRADIENT_FLOOR) };
            FdComparison { node: n.node, checked: n.elements.len(), unverifiable, rel_err }
        })
        .collect()
}
