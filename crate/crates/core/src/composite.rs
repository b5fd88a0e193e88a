//! Composite kernels: linear combinations of linearly independent binary
//! masks, and the convolution path that replaces per-tap multiplies with
//! mask sums.

use crate::counting::{sum_terms, Scalar};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{ConvGeometry, Tensor};

/// Ordered binary masks `β_1..β_M`, each `C×N×N`.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositeBasis {
    channels: usize,
    size: usize,
    elements: Vec<Tensor>,
    supports: Vec<Vec<usize>>,
}

impl CompositeBasis {
    /// Validates shapes and binariness. Linear independence is checked
    /// separately by [`check_linear_independence`].
    pub fn new(channels: usize, size: usize, elements: Vec<Tensor>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::InvalidConfig("composite basis is empty".into()));
        }
        let mut supports = Vec::with_capacity(elements.len());
        for (m, e) in elements.iter().enumerate() {
            e.expect_shape(&[channels, size, size])?;
            if e.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidConfig(format!("basis element {m} is not binary")));
            }
            let support: Vec<usize> = (0..e.len()).filter(|&i| e.data()[i] == 1.0).collect();
            if support.is_empty() {
                return Err(Error::InvalidConfig(format!("basis element {m} is all zeros")));
            }
            supports.push(support);
        }
        Ok(Self {
            channels,
            size,
            elements,
            supports,
        })
    }

    /// The conventional kernel basis: `C·N²` single-entry masks.
    pub fn one_hot(channels: usize, size: usize) -> Self {
        let len = channels * size * size;
        let elements = (0..len)
            .map(|k| Tensor::from_fn(&[channels, size, size], |i| (i == k) as u8 as f64))
            .collect();
        Self::new(channels, size, elements).expect("one-hot basis is valid")
    }

    /// Reads masks stacked as an `M×C×N×N` tensor.
    pub fn from_stacked(t: &Tensor) -> Result<Self> {
        t.expect_rank(4, "stacked basis")?;
        let &[m, c, n, n2] = t.shape() else { unreachable!() };
        if n != n2 {
            return Err(shape_err(format!("basis masks must be square, got {n}x{n2}")));
        }
        let step = c * n * n;
        let elements = (0..m)
            .map(|k| Tensor::new(vec![c, n, n], t.data()[k * step..(k + 1) * step].to_vec()))
            .collect::<Result<_>>()?;
        Self::new(c, n, elements)
    }

    pub fn to_stacked(&self) -> Tensor {
        let data = self.elements.iter().flat_map(|e| e.data().iter().copied()).collect();
        Tensor::new(vec![self.len(), self.channels, self.size, self.size], data)
            .expect("stacked shape")
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[Tensor] {
        &self.elements
    }

    /// Flat `C×N×N` offsets where each mask is one.
    pub fn supports(&self) -> &[Vec<usize>] {
        &self.supports
    }
}

/// Rank of the `M × C·N²` matrix whose rows are the vectorized masks.
///
/// Uses fraction-free (Bareiss) elimination in exact integers. Matrices large
/// enough for the intermediate minors to overflow `i128` fall back to exact
/// elimination over two prime fields; the rank over the rationals is at least
/// the rank over any prime field, so the larger of the two is returned.
pub fn check_linear_independence(basis: &CompositeBasis) -> usize {
    let cols = basis.channels * basis.size * basis.size;
    let rows: Vec<Vec<i128>> = basis
        .elements
        .iter()
        .map(|e| e.data().iter().map(|&v| v as i128).collect())
        .collect();
    if rows.len().min(cols) <= 40 {
        if let Some(rank) = bareiss_rank(rows.clone(), cols) {
            return rank;
        }
    }
    [2_147_483_647u64, 2_147_483_629u64]
        .iter()
        .map(|&p| modular_rank(&rows, cols, p))
        .max()
        .unwrap()
}

fn bareiss_rank(mut a: Vec<Vec<i128>>, cols: usize) -> Option<usize> {
    let n = a.len();
    let mut prev: i128 = 1;
    let mut r = 0;
    for col in 0..cols {
        if r == n {
            break;
        }
        let Some(p) = (r..n).find(|&i| a[i][col] != 0) else {
            continue;
        };
        a.swap(r, p);
        let pivot = a[r][col];
        for i in r + 1..n {
            let lead = a[i][col];
            for j in col + 1..cols {
                let v = pivot
                    .checked_mul(a[i][j])?
                    .checked_sub(lead.checked_mul(a[r][j])?)?;
                a[i][j] = v / prev;
            }
            a[i][col] = 0;
        }
        prev = pivot;
        r += 1;
    }
    Some(r)
}

fn modular_rank(rows: &[Vec<i128>], cols: usize, p: u64) -> usize {
    let mut a: Vec<Vec<u64>> = rows
        .iter()
        .map(|row| row.iter().map(|&v| v.rem_euclid(p as i128) as u64).collect())
        .collect();
    let n = a.len();
    let inv = |x: u64| -> u64 {
        // Fermat: x^(p-2) mod p
        let (mut base, mut e, mut acc) = (x, p - 2, 1u64);
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base % p;
            }
            base = base * base % p;
            e >>= 1;
        }
        acc
    };
    let mut r = 0;
    for col in 0..cols {
        if r == n {
            break;
        }
        let Some(piv) = (r..n).find(|&i| a[i][col] != 0) else {
            continue;
        };
        a.swap(r, piv);
        let pinv = inv(a[r][col]);
        for j in col..cols {
            a[r][j] = a[r][j] * pinv % p;
        }
        let (top, rest) = a.split_at_mut(r + 1);
        let pivot_row = &top[r];
        for row in rest.iter_mut() {
            let f = row[col];
            if f == 0 {
                continue;
            }
            for j in col..cols {
                row[j] = (row[j] + p - f * pivot_row[j] % p) % p;
            }
        }
        r += 1;
    }
    r
}

/// A basis together with one coefficient per mask.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositeKernel {
    basis: CompositeBasis,
    alphas: Vec<f64>,
}

impl CompositeKernel {
    pub fn new(basis: CompositeBasis, alphas: Vec<f64>) -> Result<Self> {
        if alphas.len() != basis.len() {
            return Err(shape_err(format!(
                "{} coefficients for a basis of {} elements",
                alphas.len(),
                basis.len()
            )));
        }
        Ok(Self { basis, alphas })
    }

    pub fn basis(&self) -> &CompositeBasis {
        &self.basis
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }
}

/// Materializes `Σ_m α_m β_m` as a `C×N×N` tensor.
pub fn compose_kernel(k: &CompositeKernel) -> Tensor {
    let b = &k.basis;
    let mut w = Tensor::zeros(&[b.channels, b.size, b.size]);
    for (support, &a) in b.supports.iter().zip(&k.alphas) {
        for &i in support {
            w.data_mut()[i] += a;
        }
    }
    w
}

/// Convolution evaluated as `Σ_m α_m E_m`, where `E_m` adds up the input
/// entries under mask `m` at each output location. Nothing is shared across
/// output locations. Terms are accumulated in ascending `m`.
pub fn conv_composite(x: &Tensor, k: &CompositeKernel, geom: &ConvGeometry) -> Result<Tensor> {
    let (dims, out_hw) = composite_dims(x, k, geom)?;
    let alphas = k.alphas.clone();
    let y = conv_composite_with(x.data(), dims, &k.basis, &alphas, geom, out_hw);
    Tensor::new(vec![1, out_hw.0, out_hw.1], y)
}

fn composite_dims(
    x: &Tensor,
    k: &CompositeKernel,
    geom: &ConvGeometry,
) -> Result<((usize, usize, usize), (usize, usize))> {
    x.expect_rank(3, "composite conv input")?;
    if geom.groups != 1 {
        return Err(Error::InvalidGeometry("composite convolution is ungrouped".into()));
    }
    let &[c, h, w] = x.shape() else { unreachable!() };
    if c != k.basis.channels {
        return Err(shape_err(format!(
            "input has {c} channels, kernel has {}",
            k.basis.channels
        )));
    }
    let n = k.basis.size;
    Ok(((c, h, w), geom.output_hw((h, w), (n, n))?))
}

/// Generic form of [`conv_composite`] over any [`Scalar`], used for op
/// counting. Produces a single output channel of `out_hw` values.
pub fn conv_composite_with<T: Scalar>(
    x: &[T],
    dims: (usize, usize, usize),
    basis: &CompositeBasis,
    alphas: &[T],
    geom: &ConvGeometry,
    out_hw: (usize, usize),
) -> Vec<T> {
    let (ho, wo) = out_hw;
    let mut y = Vec::with_capacity(ho * wo);
    for i in 0..ho {
        for j in 0..wo {
            y.push(composite_point(x, dims, basis, alphas, geom, (i, j)));
        }
    }
    y
}

/// One output of the composite path: `M` multiplies and
/// `Σ_m sum(β_m) − 1` additions.
pub fn composite_point<T: Scalar>(
    x: &[T],
    dims: (usize, usize, usize),
    basis: &CompositeBasis,
    alphas: &[T],
    geom: &ConvGeometry,
    at: (usize, usize),
) -> T {
    let (_, h, w) = dims;
    let n = basis.size;
    let read = |flat: usize| -> T {
        let (c, rem) = (flat / (n * n), flat % (n * n));
        let (u, v) = (rem / n, rem % n);
        let r = (at.0 * geom.stride[0] + u * geom.dilation[0]) as isize - geom.padding[0] as isize;
        let s = (at.1 * geom.stride[1] + v * geom.dilation[1]) as isize - geom.padding[1] as isize;
        if r < 0 || s < 0 || r as usize >= h || s as usize >= w {
            T::from_f64(0.0)
        } else {
            x[(c * h + r as usize) * w + s as usize]
        }
    };
    sum_terms(
        basis
            .supports
            .iter()
            .zip(alphas)
            .map(|(support, &a)| a * sum_terms(support.iter().map(|&f| read(f)))),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompositeOpCount {
    pub mults_per_output: u64,
    pub adds_per_output: u64,
}

/// Per-output cost of [`conv_composite`]: `M` multiplies and
/// `Σ_m sum(β_m) − 1` additions.
pub fn count_composite_ops(basis: &CompositeBasis) -> CompositeOpCount {
    let total: usize = basis.supports.iter().map(Vec::len).sum();
    CompositeOpCount {
        mults_per_output: basis.len() as u64,
        adds_per_output: total as u64 - 1,
    }
}
