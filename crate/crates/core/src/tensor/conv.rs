use std::ops::Range;

use super::{ConvGeometry, Tensor};
use crate::error::{shape_err, Error, Result};

/// Output indices `o` in `0..out_len` for which `o·stride + offset` lands
/// inside `0..in_len`.
fn valid_range(out_len: usize, in_len: usize, stride: usize, offset: isize) -> Range<usize> {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
    let hi = (in_len as isize - offset + s - 1).div_euclid(s).max(0);
    let lo = (lo as usize).min(out_len);
    let hi = (hi as usize).min(out_len);
    lo..hi.max(lo)
}

/// Cross-correlation of a `C×H×W` input with a `C_out×(C/g)×K_h×K_w` kernel.
///
/// `Y[b,i,j] = Σ X[c, i·s − p + u·d, j·s − p + v·d] · K[b,c,u,v]`, summed over
/// the input channels of `b`'s group, with out-of-range reads as zero.
pub fn conv(input: &Tensor, kernel: &Tensor, geom: &ConvGeometry) -> Result<Tensor> {
    input.expect_rank(3, "conv input")?;
    kernel.expect_rank(4, "conv kernel")?;
    geom.validate()?;
    let &[c_in, h, w] = input.shape() else { unreachable!() };
    let &[c_out, c_per_group, kh, kw] = kernel.shape() else { unreachable!() };
    let g = geom.groups;
    if c_per_group * g != c_in {
        return Err(shape_err(format!(
            "kernel has {c_per_group} channels x {g} groups, input has {c_in}"
        )));
    }
    if c_out % g != 0 {
        return Err(shape_err(format!(
            "{c_out} output channels not divisible by {g} groups"
        )));
    }
    let (ho, wo) = geom.output_hw((h, w), (kh, kw))?;
    let out_per_group = c_out / g;

    let x = input.data();
    let k = kernel.data();
    let mut y = vec![0.0; c_out * ho * wo];
    for b in 0..c_out {
        let group = b / out_per_group;
        let out = &mut y[b * ho * wo..(b + 1) * ho * wo];
        for cl in 0..c_per_group {
            let c = group * c_per_group + cl;
            let plane = &x[c * h * w..(c + 1) * h * w];
            for u in 0..kh {
                let row_off = (u * geom.dilation[0]) as isize - geom.padding[0] as isize;
                let rows = valid_range(ho, h, geom.stride[0], row_off);
                for v in 0..kw {
                    let wt = k[((b * c_per_group + cl) * kh + u) * kw + v];
                    if wt == 0.0 {
                        continue;
                    }
                    let col_off = (v * geom.dilation[1]) as isize - geom.padding[1] as isize;
                    let cols = valid_range(wo, w, geom.stride[1], col_off);
                    for i in rows.clone() {
                        let ih = (i * geom.stride[0]) as isize + row_off;
                        let src = &plane[ih as usize * w..(ih as usize + 1) * w];
                        let dst = &mut out[i * wo..(i + 1) * wo];
                        for j in cols.clone() {
                            let iw = ((j * geom.stride[1]) as isize + col_off) as usize;
                            dst[j] += wt * src[iw];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![c_out, ho, wo], y)
}

/// Sliding-window sums over `k_c` consecutive channels and a `k_h×k_w`
/// spatial window.
///
/// Channels slide with stride 1 inside each of `geom.groups` channel groups,
/// producing `C/g − k_c + 1` output channels per group. Spatial axes use the
/// stride, zero padding and dilation of `geom`. Equivalent to convolving each
/// channel offset with an all-ones kernel.
pub fn sum_pool3d(input: &Tensor, pool: (usize, usize, usize), geom: &ConvGeometry) -> Result<Tensor> {
    input.expect_rank(3, "sum-pool input")?;
    geom.validate()?;
    let &[c_in, h, w] = input.shape() else { unreachable!() };
    let (kc, kh, kw) = pool;
    let g = geom.groups;
    if c_in % g != 0 {
        return Err(shape_err(format!("{c_in} channels not divisible by {g} groups")));
    }
    let per_group = c_in / g;
    if kc == 0 || kc > per_group {
        return Err(Error::InvalidGeometry(format!(
            "channel window {kc} exceeds {per_group} channels per group"
        )));
    }
    let (ho, wo) = geom.output_hw((h, w), (kh, kw))?;
    let out_per_group = per_group - kc + 1;
    let c_out = g * out_per_group;
    let [ph, pw] = geom.padding;
    let (hp, wp) = (h + 2 * ph, w + 2 * pw);
    let x = input.data();

    // Channel sums written into a zero-padded plane, then separable spatial sums.
    let mut chan = vec![0.0; c_out * hp * wp];
    for grp in 0..g {
        for oc in 0..out_per_group {
            let dst_c = grp * out_per_group + oc;
            let dst = &mut chan[dst_c * hp * wp..(dst_c + 1) * hp * wp];
            for t in 0..kc {
                let c = grp * per_group + oc + t;
                let src = &x[c * h * w..(c + 1) * h * w];
                for r in 0..h {
                    let d = &mut dst[(r + ph) * wp + pw..(r + ph) * wp + pw + w];
                    for (dv, sv) in d.iter_mut().zip(&src[r * w..(r + 1) * w]) {
                        *dv += sv;
                    }
                }
            }
        }
    }

    let [sh, sw] = geom.stride;
    let [dh, dw] = geom.dilation;
    let mut rows = vec![0.0; c_out * ho * wp];
    for c in 0..c_out {
        let src = &chan[c * hp * wp..(c + 1) * hp * wp];
        let dst = &mut rows[c * ho * wp..(c + 1) * ho * wp];
        for i in 0..ho {
            let d = &mut dst[i * wp..(i + 1) * wp];
            for u in 0..kh {
                let r = i * sh + u * dh;
                for (dv, sv) in d.iter_mut().zip(&src[r * wp..(r + 1) * wp]) {
                    *dv += sv;
                }
            }
        }
    }

    let mut out = vec![0.0; c_out * ho * wo];
    for c in 0..c_out {
        for i in 0..ho {
            let src = &rows[(c * ho + i) * wp..(c * ho + i + 1) * wp];
            let dst = &mut out[(c * ho + i) * wo..(c * ho + i + 1) * wo];
            for (j, dv) in dst.iter_mut().enumerate() {
                *dv = (0..kw).map(|v| src[j * sw + v * dw]).sum();
            }
        }
    }
    Tensor::new(vec![c_out, ho, wo], out)
}

/// Matrix-vector product `W·x` for `W: P×Q`, `x: Q`.
pub fn linear(weights: &Tensor, x: &Tensor) -> Result<Tensor> {
    weights.expect_rank(2, "linear weights")?;
    x.expect_rank(1, "linear input")?;
    let &[p, q] = weights.shape() else { unreachable!() };
    if x.len() != q {
        return Err(shape_err(format!("matrix is {p}x{q}, vector has {}", x.len())));
    }
    let w = weights.data();
    let xs = x.data();
    let y = (0..p)
        .map(|r| w[r * q..(r + 1) * q].iter().zip(xs).map(|(a, b)| a * b).sum())
        .collect();
    Tensor::new(vec![p], y)
}
