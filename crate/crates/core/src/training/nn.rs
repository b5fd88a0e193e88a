//! Backward rules for the layer types the toy networks use. Forward passes
//! reuse the tensor kernels.

use crate::error::Result;
use crate::tensor::{ConvGeometry, Tensor};

fn tap_index(
    i: usize,
    u: usize,
    axis: usize,
    geom: &ConvGeometry,
    len: usize,
) -> Option<usize> {
    let pos = (i * geom.stride[axis] + u * geom.dilation[axis]).checked_sub(geom.padding[axis])?;
    (pos < len).then_some(pos)
}

/// Gradients of `y = conv(x, w)` given `dy`. Returns `(dw, dx)`; `dx` is
/// skipped when `need_dx` is false.
pub(crate) fn conv_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    geom: &ConvGeometry,
    need_dx: bool,
) -> (Tensor, Option<Tensor>) {
    let &[_, h, wd] = x.shape() else { unreachable!("feature map") };
    let &[c_out, cg, kh, kw] = w.shape() else { unreachable!("kernel") };
    let &[_, ho, wo] = dy.shape() else { unreachable!("feature map") };
    let opg = c_out / geom.groups;
    let (xs, ws, dys) = (x.data(), w.data(), dy.data());
    let mut dw = vec![0.0; ws.len()];
    let mut dx = vec![0.0; if need_dx { xs.len() } else { 0 }];
    for b in 0..c_out {
        let grp = b / opg;
        for i in 0..ho {
            for j in 0..wo {
                let g = dys[(b * ho + i) * wo + j];
                if g == 0.0 {
                    continue;
                }
                for cl in 0..cg {
                    let ch = grp * cg + cl;
                    for u in 0..kh {
                        let Some(r) = tap_index(i, u, 0, geom, h) else { continue };
                        for v in 0..kw {
                            let Some(s) = tap_index(j, v, 1, geom, wd) else { continue };
                            let xi = (ch * h + r) * wd + s;
                            let wi = ((b * cg + cl) * kh + u) * kw + v;
                            dw[wi] += g * xs[xi];
                            if need_dx {
                                dx[xi] += g * ws[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    let dw = Tensor::new(w.shape().to_vec(), dw).expect("same shape");
    let dx = need_dx.then(|| Tensor::new(x.shape().to_vec(), dx).expect("same shape"));
    (dw, dx)
}

/// Per-channel sums of `dy`, the bias gradient of a convolution.
pub(crate) fn channel_sums(dy: &Tensor) -> Tensor {
    let c = dy.shape()[0];
    let plane = dy.len() / c;
    Tensor::from_fn(&[c], |ch| dy.data()[ch * plane..(ch + 1) * plane].iter().sum())
}

/// Adjoint of [`crate::tensor::sum_pool3d`]: every input position receives
/// the sum of `dy` over the windows that cover it.
pub(crate) fn sum_pool_backward(
    in_shape: &[usize],
    pool: (usize, usize, usize),
    geom: &ConvGeometry,
    dy: &Tensor,
) -> Tensor {
    let &[c, h, wd] = in_shape else { unreachable!("feature map") };
    let &[_, ho, wo] = dy.shape() else { unreachable!("feature map") };
    let (kc, kh, kw) = pool;
    let per_group = c / geom.groups;
    let opg = per_group - kc + 1;
    let mut dx = vec![0.0; c * h * wd];
    for grp in 0..geom.groups {
        for oc in 0..opg {
            let out_ch = grp * opg + oc;
            for i in 0..ho {
                for j in 0..wo {
                    let g = dy.data()[(out_ch * ho + i) * wo + j];
                    for t in 0..kc {
                        let ch = grp * per_group + oc + t;
                        for u in 0..kh {
                            let Some(r) = tap_index(i, u, 0, geom, h) else { continue };
                            for v in 0..kw {
                                let Some(s) = tap_index(j, v, 1, geom, wd) else { continue };
                                dx[(ch * h + r) * wd + s] += g;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(in_shape.to_vec(), dx).expect("input shape")
}

/// Adjoint of a stride-1 window sum over a vector.
pub(crate) fn pool1d_backward(len: usize, window: usize, dy: &Tensor) -> Tensor {
    let mut dx = vec![0.0; len];
    for (r, &g) in dy.data().iter().enumerate() {
        dx[r..r + window].iter_mut().for_each(|v| *v += g);
    }
    Tensor::new(vec![len], dx).expect("non-empty")
}

/// Gradients of `y = W·x`: `(dW, dx)`.
pub(crate) fn linear_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor) {
    let &[p, q] = w.shape() else { unreachable!("matrix") };
    let dw = Tensor::from_fn(&[p, q], |f| dy.data()[f / q] * x.data()[f % q]);
    let dx = Tensor::from_fn(&[q], |col| (0..p).map(|r| w.data()[r * q + col] * dy.data()[r]).sum());
    (dw, dx)
}

pub(crate) fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub(crate) fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let data = x.data().iter().zip(dy.data()).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

pub(crate) fn global_avg_pool(x: &Tensor) -> Tensor {
    let c = x.shape()[0];
    let plane = x.len() / c;
    Tensor::from_fn(&[c], |ch| {
        x.data()[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64
    })
}

pub(crate) fn global_avg_pool_backward(in_shape: &[usize], dy: &Tensor) -> Tensor {
    let plane: usize = in_shape[1..].iter().product();
    Tensor::from_fn(in_shape, |f| dy.data()[f / plane] / plane as f64)
}

/// Softmax cross-entropy of `logits` against `label`, and its gradient.
pub(crate) fn softmax_cross_entropy(logits: &Tensor, label: usize) -> (f64, Tensor) {
    let z = logits.data();
    let zmax = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exps: Vec<f64> = z.iter().map(|v| (v - zmax).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = total.ln() + zmax - z[label];
    let grad = Tensor::from_fn(&[z.len()], |k| exps[k] / total - (k == label) as u8 as f64);
    (loss, grad)
}

pub(crate) fn add_vector(y: &mut Tensor, b: &Tensor) -> Result<()> {
    y.expect_shape(b.shape())?;
    y.data_mut().iter_mut().zip(b.data()).for_each(|(v, b)| *v += b);
    Ok(())
}
