//! Order-fixed reductions.
//!
//! Pairwise summation over a fixed split tree. The result depends only on the
//! input order, never on how the work is scheduled, so chunked or parallel
//! callers that reduce the same tree get bit-identical totals.

use num_complex::Complex64;
use std::ops::Add;

const LEAF: usize = 8;

fn pairwise<T: Copy + Add<Output = T>>(xs: &[T], zero: T) -> T {
    if xs.len() <= LEAF {
        return xs.iter().fold(zero, |acc, &x| acc + x);
    }
    let mid = xs.len() / 2;
    pairwise(&xs[..mid], zero) + pairwise(&xs[mid..], zero)
}

pub fn pairwise_sum(xs: &[f64]) -> f64 {
    pairwise(xs, 0.0)
}

pub fn pairwise_sum_complex(xs: &[Complex64]) -> Complex64 {
    pairwise(xs, Complex64::new(0.0, 0.0))
}
