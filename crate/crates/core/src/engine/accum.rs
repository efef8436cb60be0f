//! Summation orders. These are the only place the two honest flavors
//! differ numerically.

use super::backend::Flavor;
use crate::tensor::Real;

/// `bias + Σ terms` in the flavor's order.
#[inline]
pub fn accumulate<T: Real>(flavor: Flavor, bias: T, terms: impl Iterator<Item = T>) -> T {
    match flavor {
        Flavor::Naive => terms.fold(bias, |acc, t| acc + t),
        Flavor::Reordered => {
            let mut lanes = [T::zero(); 4];
            for (i, t) in terms.enumerate() {
                lanes[i & 3] = lanes[i & 3] + t;
            }
            ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + bias
        }
    }
}

#[inline]
pub fn sum<T: Real>(flavor: Flavor, terms: impl Iterator<Item = T>) -> T {
    accumulate(flavor, T::zero(), terms)
}

/// NaN-propagating maximum; returns the index of the first maximum (or of
/// the first NaN).
pub fn argmax<T: Real>(xs: impl Iterator<Item = T>) -> Option<(usize, T)> {
    let mut best: Option<(usize, T)> = None;
    for (i, x) in xs.enumerate() {
        if x.is_nan() {
            return Some((i, x));
        }
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flavors_agree_on_exact_sums() {
        let xs = [1.0f64, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(accumulate(Flavor::Naive, 1.0, xs.iter().copied()), 16.0);
        assert_eq!(accumulate(Flavor::Reordered, 1.0, xs.iter().copied()), 16.0);
    }

    #[test]
    fn flavors_differ_in_rounding() {
        let xs = [1.0f32, 1e8, -1e8, 1.0];
        let a = sum(Flavor::Naive, xs.iter().copied());
        let b = sum(Flavor::Reordered, xs.iter().copied());
        assert_eq!(a, 1.0);
        assert_eq!(b, 0.0);
    }

    #[test]
    fn argmax_takes_first_and_propagates_nan() {
        assert_eq!(argmax([1.0f32, 3.0, 3.0].into_iter()), Some((1, 3.0)));
        let (i, v) = argmax([1.0f32, f32::NAN, 5.0].into_iter()).unwrap();
        assert_eq!(i, 1);
        assert!(v.is_nan());
    }
}
