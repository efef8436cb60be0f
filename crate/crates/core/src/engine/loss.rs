//! Loss values and their gradients with respect to the model output.

use std::hash::{Hash, Hasher};

use super::accum::{argmax, sum};
use super::backend::{Fault, Flavor};
use crate::ir::loss::LOSS_EPSILON;
use crate::ir::LossKind;
use crate::tensor::Real;

/// Clamp that lets NaN through.
fn clip<T: Real>(v: T, lo: T, hi: T) -> T {
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}

fn inside<T: Real>(v: T, lo: T, hi: T) -> bool {
    !(v < lo || v > hi)
}

/// Per-element binary cross-entropy terms.
pub fn bce_elementwise<T: Real>(y: &[T], t: &[T], eps_inside_log: bool) -> Vec<T> {
    let eps = T::of(LOSS_EPSILON);
    let one = T::one();
    y.iter()
        .zip(t)
        .map(|(&y, &t)| {
            let o = clip(y, eps, one - eps);
            if eps_inside_log {
                -(t * (o + eps).ln() + (one - t) * (one - o + eps).ln())
            } else {
                -(t * o.ln() + (one - t) * (one - o).ln())
            }
        })
        .collect()
}

/// Returns the loss value and `dL/dy`. `classes` is the extent of the last
/// axis; rows are everything before it.
pub fn loss_forward_backward<T: Real>(
    kind: LossKind,
    flavor: Flavor,
    fault: Option<Fault>,
    y: &[T],
    t: &[T],
    classes: usize,
) -> (T, Vec<T>) {
    let n = y.len();
    let nn = T::of(n as f64);
    let eps = T::of(LOSS_EPSILON);
    let zero = T::zero();
    let one = T::one();
    match kind {
        LossKind::MeanSquaredError => {
            let lo = sum(flavor, y.iter().zip(t).map(|(&a, &b)| (a - b) * (a - b))) / nn;
            let two = T::of(2.0);
            (lo, y.iter().zip(t).map(|(&a, &b)| two * (a - b) / nn).collect())
        }
        LossKind::MeanAbsolutePercentageError => {
            let hundred = T::of(100.0);
            let denom = |b: T| if b.abs() > eps { b.abs() } else { eps };
            let lo = hundred * sum(flavor, y.iter().zip(t).map(|(&a, &b)| (b - a).abs() / denom(b))) / nn;
            let g = y
                .iter()
                .zip(t)
                .map(|(&a, &b)| {
                    let d = a - b;
                    let s = if d > zero {
                        one
                    } else if d < zero {
                        -one
                    } else if d.is_nan() {
                        d
                    } else {
                        zero
                    };
                    hundred * s / denom(b) / nn
                })
                .collect();
            (lo, g)
        }
        LossKind::BinaryCrossentropy => {
            let mutant = fault == Some(Fault::BceEpsilonClip);
            let terms = bce_elementwise(y, t, mutant);
            let lo = sum(flavor, terms.into_iter()) / nn;
            let hi = one - eps;
            let g = y
                .iter()
                .zip(t)
                .map(|(&a, &b)| {
                    if !inside(a, eps, hi) {
                        return zero;
                    }
                    let (p, q) = if mutant { (a + eps, one - a + eps) } else { (a, one - a) };
                    (-b / p + (one - b) / q) / nn
                })
                .collect();
            (lo, g)
        }
        LossKind::CategoricalCrossentropy => {
            let rows = n / classes;
            let rn = T::of(rows as f64);
            let hi = one - eps;
            let mut g = vec![zero; n];
            let mut row_losses = Vec::with_capacity(rows);
            for r in 0..rows {
                let yr = &y[r * classes..(r + 1) * classes];
                let tr = &t[r * classes..(r + 1) * classes];
                let s = sum(flavor, yr.iter().copied());
                let p: Vec<T> = yr.iter().map(|&v| v / s).collect();
                row_losses.push(-sum(flavor, p.iter().zip(tr).map(|(&pv, &tv)| tv * clip(pv, eps, hi).ln())));
                let gp: Vec<T> =
                    p.iter().zip(tr).map(|(&pv, &tv)| if inside(pv, eps, hi) { -tv / pv / rn } else { zero }).collect();
                let dot = sum(flavor, gp.iter().zip(yr).map(|(&a, &b)| a * b));
                for j in 0..classes {
                    g[r * classes + j] = gp[j] / s - dot / (s * s);
                }
            }
            (sum(flavor, row_losses.into_iter()) / rn, g)
        }
        LossKind::CategoricalHinge => {
            let rows = n / classes;
            let rn = T::of(rows as f64);
            let divide = fault != Some(Fault::HingeNoDivide);
            let mut g = vec![zero; n];
            let mut row_losses = Vec::with_capacity(rows);
            for r in 0..rows {
                let yr = &y[r * classes..(r + 1) * classes];
                let tr = &t[r * classes..(r + 1) * classes];
                let pos = sum(flavor, yr.iter().zip(tr).map(|(&a, &b)| a * b));
                let masked: Vec<T> = yr.iter().zip(tr).map(|(&a, &b)| (one - b) * a).collect();
                let (_, neg) = argmax(masked.iter().copied()).expect("non-empty row");
                let margin = neg - pos + one;
                let l = if margin > zero || margin.is_nan() { margin } else { zero };
                row_losses.push(l);
                if margin > zero {
                    let ties = masked.iter().filter(|&&m| m == neg).count();
                    let share = if divide { one / T::of(ties as f64) } else { one };
                    for j in 0..classes {
                        let tied = if masked[j] == neg { (one - tr[j]) * share } else { zero };
                        g[r * classes + j] = (tied - tr[j]) / rn;
                    }
                } else if margin.is_nan() {
                    g[r * classes..(r + 1) * classes].iter_mut().for_each(|v| *v = margin);
                }
            }
            (sum(flavor, row_losses.into_iter()) / rn, g)
        }
    }
}

/// Feeds the piecewise branch taken by every loss element into `h`.
pub fn loss_branches<T: Real, H: Hasher>(kind: LossKind, y: &[T], t: &[T], classes: usize, h: &mut H) {
    let eps = T::of(LOSS_EPSILON);
    let hi = T::one() - eps;
    let region = |v: T| -> u8 {
        if v < eps {
            0
        } else if v > hi {
            2
        } else {
            1
        }
    };
    match kind {
        LossKind::MeanSquaredError => {}
        LossKind::MeanAbsolutePercentageError => y.iter().zip(t).for_each(|(&a, &b)| (a > b, a < b).hash(h)),
        LossKind::BinaryCrossentropy => y.iter().for_each(|&a| region(a).hash(h)),
        LossKind::CategoricalCrossentropy => {
            for yr in y.chunks(classes) {
                let s = yr.iter().fold(T::zero(), |a, &v| a + v);
                yr.iter().for_each(|&v| region(v / s).hash(h));
            }
        }
        LossKind::CategoricalHinge => {
            for (yr, tr) in y.chunks(classes).zip(t.chunks(classes)) {
                let pos = yr.iter().zip(tr).fold(T::zero(), |a, (&v, &w)| a + v * w);
                let masked = yr.iter().zip(tr).map(|(&v, &w)| (T::one() - w) * v);
                let best = argmax(masked);
                best.map(|(k, _)| k).hash(h);
                best.is_some_and(|(_, neg)| neg - pos + T::one() > T::zero()).hash(h);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric(kind: LossKind, y: &[f64], t: &[f64], classes: usize) -> Vec<f64> {
        let h = 1e-6;
        (0..y.len())
            .map(|i| {
                let mut a = y.to_vec();
                let mut b = y.to_vec();
                a[i] += h;
                b[i] -= h;
                let la = loss_forward_backward(kind, Flavor::Naive, None, &a, t, classes).0;
                let lb = loss_forward_backward(kind, Flavor::Naive, None, &b, t, classes).0;
                (la - lb) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn analytic_minima() {
        let t: [f64; 6] = [0.0, 1.0, 0.0, 1.0, 0.0, 0.0];
        for kind in [LossKind::MeanSquaredError, LossKind::CategoricalCrossentropy] {
            let (lo, _) = loss_forward_backward(kind, Flavor::Naive, None, &t, &t, 3);
            assert!(lo.abs() < 1e-6, "{kind}: {lo}");
        }
        let (lo, lg) =
            loss_forward_backward(LossKind::MeanSquaredError, Flavor::Naive, None, &[1.0f32, 2.0], &[1.0, 2.0], 2);
        assert_eq!(lo, 0.0);
        assert_eq!(lg, vec![0.0, 0.0]);
    }

    #[test]
    fn gradients_match_differences() {
        let y = [0.2, 0.5, 0.3, 0.1, 0.7, 0.2];
        let t = [0.0, 1.0, 0.0, 1.0, 0.0, 0.0];
        for kind in LossKind::ALL {
            let labels: Vec<f64> = if *kind == LossKind::MeanAbsolutePercentageError {
                vec![0.7, -1.2, 0.9, 1.1, -0.6, 0.8]
            } else {
                t.to_vec()
            };
            let (_, g) = loss_forward_backward(*kind, Flavor::Naive, None, &y, &labels, 3);
            let n = numeric(*kind, &y, &labels, 3);
            for (a, b) in g.iter().zip(&n) {
                assert!((a - b).abs() < 1e-6, "{kind}: {g:?} vs {n:?}");
            }
        }
    }

    #[test]
    fn hinge_ties_share_gradient() {
        let y = [0.0f64, 0.0, 0.0, 0.5];
        let t = [0.0, 0.0, 0.0, 1.0];
        let (_, g) = loss_forward_backward(LossKind::CategoricalHinge, Flavor::Naive, None, &y, &t, 4);
        assert!((g[0] - 1.0 / 4.0).abs() < 1e-12);
        let (_, m) =
            loss_forward_backward(LossKind::CategoricalHinge, Flavor::Naive, Some(Fault::HingeNoDivide), &y, &t, 4);
        assert_eq!(m[0], 1.0);
    }
}
