//! Scalar-operation counting.
//!
//! [`Counted`] wraps an `f64` and bumps a thread-local counter on every `+`
//! and `*`. The naive kernels here are written against [`Scalar`] so that the
//! same code computes values in `f64` and op counts in `Counted`. Every
//! reduction starts from its first term, so a sum of `k` terms costs exactly
//! `k − 1` additions.

use std::cell::Cell;
use std::ops::{Add, Mul};

use serde::{Deserialize, Serialize};

use crate::tensor::ConvGeometry;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub mults: u64,
    pub adds: u64,
}

thread_local! {
    static COUNTS: Cell<OpCounts> = const { Cell::new(OpCounts { mults: 0, adds: 0 }) };
}

pub trait Scalar: Copy + Add<Output = Self> + Mul<Output = Self> {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Counted(pub f64);

impl Add for Counted {
    type Output = Counted;
    fn add(self, rhs: Counted) -> Counted {
        COUNTS.with(|c| {
            let mut v = c.get();
            v.adds += 1;
            c.set(v);
        });
        Counted(self.0 + rhs.0)
    }
}

impl Mul for Counted {
    type Output = Counted;
    fn mul(self, rhs: Counted) -> Counted {
        COUNTS.with(|c| {
            let mut v = c.get();
            v.mults += 1;
            c.set(v);
        });
        Counted(self.0 * rhs.0)
    }
}

impl Scalar for Counted {
    fn from_f64(v: f64) -> Self {
        Counted(v)
    }
    fn to_f64(self) -> f64 {
        self.0
    }
}

/// Runs `f` and returns the scalar ops it performed on this thread.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, OpCounts) {
    let before = COUNTS.with(|c| c.get());
    let r = f();
    let after = COUNTS.with(|c| c.get());
    (
        r,
        OpCounts {
            mults: after.mults - before.mults,
            adds: after.adds - before.adds,
        },
    )
}

/// Sum of a non-empty iterator without a zero seed.
pub fn sum_terms<T: Scalar>(mut terms: impl Iterator<Item = T>) -> T {
    let first = terms.next().expect("empty reduction");
    terms.fold(first, |acc, t| acc + t)
}

fn tap<T: Scalar>(x: &[T], dims: (usize, usize, usize), c: usize, r: isize, s: isize) -> T {
    let (_, h, w) = dims;
    if r < 0 || s < 0 || r as usize >= h || s as usize >= w {
        T::from_f64(0.0)
    } else {
        x[(c * h + r as usize) * w + s as usize]
    }
}

/// Textbook convolution: every kernel tap (padding included) costs one
/// multiply, and the products of one output are summed left to right.
pub fn naive_conv<T: Scalar>(
    x: &[T],
    dims: (usize, usize, usize),
    k: &[T],
    kdims: (usize, usize, usize, usize),
    geom: &ConvGeometry,
    out_hw: (usize, usize),
) -> Vec<T> {
    let (c_out, cg, kh, kw) = kdims;
    let opg = c_out / geom.groups;
    let (ho, wo) = out_hw;
    let mut y = Vec::with_capacity(c_out * ho * wo);
    for b in 0..c_out {
        let grp = b / opg;
        for i in 0..ho {
            for j in 0..wo {
                let terms = (0..cg).flat_map(|cl| {
                    (0..kh).flat_map(move |u| (0..kw).map(move |v| (cl, u, v)))
                });
                y.push(sum_terms(terms.map(|(cl, u, v)| {
                    let r = (i * geom.stride[0] + u * geom.dilation[0]) as isize - geom.padding[0] as isize;
                    let s = (j * geom.stride[1] + v * geom.dilation[1]) as isize - geom.padding[1] as isize;
                    tap(x, dims, grp * cg + cl, r, s) * k[((b * cg + cl) * kh + u) * kw + v]
                })));
            }
        }
    }
    y
}

/// Sum-pooling by direct window summation: `k_c·k_h·k_w − 1` additions per
/// output, no multiplies.
pub fn naive_sum_pool<T: Scalar>(
    x: &[T],
    dims: (usize, usize, usize),
    pool: (usize, usize, usize),
    geom: &ConvGeometry,
    out_hw: (usize, usize),
) -> Vec<T> {
    let (c, _, _) = dims;
    let (kc, kh, kw) = pool;
    let per_group = c / geom.groups;
    let opg = per_group - kc + 1;
    let (ho, wo) = out_hw;
    let mut y = Vec::with_capacity(geom.groups * opg * ho * wo);
    for grp in 0..geom.groups {
        for oc in 0..opg {
            for i in 0..ho {
                for j in 0..wo {
                    let terms = (0..kc).flat_map(|t| {
                        (0..kh).flat_map(move |u| (0..kw).map(move |v| (t, u, v)))
                    });
                    y.push(sum_terms(terms.map(|(t, u, v)| {
                        let r = (i * geom.stride[0] + u * geom.dilation[0]) as isize - geom.padding[0] as isize;
                        let s = (j * geom.stride[1] + v * geom.dilation[1]) as isize - geom.padding[1] as isize;
                        tap(x, dims, grp * per_group + oc + t, r, s)
                    })));
                }
            }
        }
    }
    y
}

/// `W·x` for row-major `W: rows × cols`.
pub fn naive_matvec<T: Scalar>(w: &[T], rows: usize, cols: usize, x: &[T]) -> Vec<T> {
    (0..rows)
        .map(|r| sum_terms((0..cols).map(|q| w[r * cols + q] * x[q])))
        .collect()
}

/// Sliding sums of `window` consecutive entries, stride 1.
pub fn naive_pool1d<T: Scalar>(x: &[T], window: usize) -> Vec<T> {
    (0..=x.len() - window)
        .map(|r| sum_terms(x[r..r + window].iter().copied()))
        .collect()
}
