use serde::{Deserialize, Serialize};

use super::config::StructuredConfig;
use super::matrix::{relative_residual, structure_matrix};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{conv, linear, sum_pool3d, ConvGeometry, Tensor};

/// Default residual tolerance for decomposing weights that should already be
/// exactly structured.
pub const EXACT_TOLERANCE: f64 = 1e-6;

/// A convolution layer rewritten as one shared sum-pool followed by a
/// `C_out×c×n×n` convolution of the extracted coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct DecomposedConvLayer {
    pub cfg: StructuredConfig,
    pub pool_dims: (usize, usize, usize),
    /// Stride 1; padding and dilation of the original layer.
    pub pool_geom: ConvGeometry,
    /// `C_out×c×n×n`
    pub alpha: Tensor,
    /// Stride and dilation of the original layer, no padding.
    pub small_geom: ConvGeometry,
    pub bias: Option<Tensor>,
    /// Per-output-channel residual at decomposition time.
    pub residuals: Vec<f64>,
}

impl DecomposedConvLayer {
    pub fn out_channels(&self) -> usize {
        self.alpha.shape()[0]
    }

    /// Geometry of the convolution this layer replaces.
    pub fn original_geom(&self) -> ConvGeometry {
        ConvGeometry {
            stride: self.small_geom.stride,
            padding: self.pool_geom.padding,
            dilation: self.pool_geom.dilation,
            groups: self.pool_geom.groups,
        }
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, &r| m.max(r))
    }

    /// Reassembles the full `C_out×(C/g)×N×N` weights, `A·α` per channel.
    pub fn reconstructed_weights(&self) -> Result<Tensor> {
        let m = structure_matrix(&self.cfg)?;
        let w = m.compose_rows(self.alpha.data())?;
        let [c, n, _] = self.cfg.kernel_shape();
        Tensor::new(vec![self.out_channels(), c, n, n], w)
    }
}

/// Splits `C_out×(C/g)×N×N` weights into per-channel structured
/// coefficients. All channels share one sum-pool: window `(C−c+1, N−n+1,
/// N−n+1)` with stride 1 and the original padding and dilation. The small
/// convolution gets the original stride and dilation and no padding. A bias
/// is carried over unchanged.
///
/// Fails with [`Error::ResidualExceeded`] naming the worst output channel if
/// any channel is further than `max_residual` from the structured subspace.
pub fn decompose_conv_layer(
    weights: &Tensor,
    cfg: &StructuredConfig,
    geom: &ConvGeometry,
    bias: Option<&Tensor>,
    max_residual: f64,
) -> Result<DecomposedConvLayer> {
    cfg.validate()?;
    geom.validate()?;
    weights.expect_rank(4, "layer weights")?;
    let c_out = weights.shape()[0];
    weights.expect_shape(&[c_out, cfg.channels, cfg.size, cfg.size])?;
    if c_out % geom.groups != 0 {
        return Err(shape_err(format!(
            "{c_out} output channels not divisible by {} groups",
            geom.groups
        )));
    }
    if let Some(b) = bias {
        b.expect_shape(&[c_out])?;
    }

    let m = structure_matrix(cfg)?;
    let alpha = m.alpha_rows(weights.data())?;
    let projected = m.compose_rows(&alpha)?;
    let k = cfg.kernel_len();
    let residuals: Vec<f64> = (0..c_out)
        .map(|b| relative_residual(&weights.data()[b * k..(b + 1) * k], &projected[b * k..(b + 1) * k]))
        .collect();
    let (worst, &worst_r) = residuals
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("at least one output channel");
    if worst_r > max_residual {
        return Err(Error::ResidualExceeded {
            location: format!("output channel {worst}"),
            residual: worst_r,
            tolerance: max_residual,
        });
    }

    let pool_geom = ConvGeometry {
        stride: [1, 1],
        padding: geom.padding,
        dilation: geom.dilation,
        groups: geom.groups,
    };
    let small_geom = ConvGeometry {
        stride: geom.stride,
        padding: [0, 0],
        dilation: geom.dilation,
        groups: geom.groups,
    };
    Ok(DecomposedConvLayer {
        cfg: *cfg,
        pool_dims: cfg.pool_dims(),
        pool_geom,
        alpha: Tensor::new(vec![c_out, cfg.c, cfg.n, cfg.n], alpha)?,
        small_geom,
        bias: bias.cloned(),
        residuals,
    })
}

/// `conv(sum_pool3d(X), α) + bias`.
pub fn forward_decomposed(x: &Tensor, layer: &DecomposedConvLayer) -> Result<Tensor> {
    x.expect_rank(3, "layer input")?;
    let expected_c = layer.cfg.channels * layer.pool_geom.groups;
    if x.shape()[0] != expected_c {
        return Err(shape_err(format!(
            "layer expects {expected_c} input channels, got {}",
            x.shape()[0]
        )));
    }
    let pooled = sum_pool3d(x, layer.pool_dims, &layer.pool_geom)?;
    let mut y = conv(&pooled, &layer.alpha, &layer.small_geom)?;

    let n = layer.cfg.size;
    let original = layer
        .original_geom()
        .output_hw((x.shape()[1], x.shape()[2]), (n, n))?;
    if (y.shape()[1], y.shape()[2]) != original {
        return Err(Error::InvalidGeometry(format!(
            "decomposed output {:?} differs from original {original:?}",
            &y.shape()[1..]
        )));
    }
    if let Some(b) = &layer.bias {
        add_channel_bias(&mut y, b);
    }
    Ok(y)
}

pub(crate) fn add_channel_bias(y: &mut Tensor, bias: &Tensor) {
    let plane = y.len() / y.shape()[0];
    for (ch, chunk) in y.data_mut().chunks_mut(plane).enumerate() {
        let b = bias.data()[ch];
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

/// A `P×Q` matrix whose rows are structured with parameter `R`, rewritten as a
/// stride-1 sum-pool of window `Q−R+1` followed by a `P×R` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DecomposedLinearLayer {
    pub in_features: usize,
    pub r: usize,
    /// `P×R`
    pub small: Tensor,
    pub bias: Option<Tensor>,
    pub residuals: Vec<f64>,
}

impl DecomposedLinearLayer {
    pub fn pool_window(&self) -> usize {
        self.in_features - self.r + 1
    }

    pub fn cfg(&self) -> StructuredConfig {
        linear_cfg(self.in_features, self.r)
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, &r| m.max(r))
    }
}

/// Each row of a `P×Q` matrix is a `Q×1×1` kernel with structure `(Q, 1, R, 1)`.
pub fn linear_cfg(q: usize, r: usize) -> StructuredConfig {
    StructuredConfig {
        channels: q,
        size: 1,
        c: r,
        n: 1,
    }
}

pub fn decompose_linear(
    weights: &Tensor,
    r: usize,
    bias: Option<&Tensor>,
    max_residual: f64,
) -> Result<DecomposedLinearLayer> {
    weights.expect_rank(2, "linear weights")?;
    let &[p, q] = weights.shape() else { unreachable!() };
    let cfg = StructuredConfig::new(q, 1, r, 1)?;
    if let Some(b) = bias {
        b.expect_shape(&[p])?;
    }
    let m = structure_matrix(&cfg)?;
    let alpha = m.alpha_rows(weights.data())?;
    let projected = m.compose_rows(&alpha)?;
    let residuals: Vec<f64> = (0..p)
        .map(|row| relative_residual(&weights.data()[row * q..(row + 1) * q], &projected[row * q..(row + 1) * q]))
        .collect();
    if let Some((worst, &res)) = residuals
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .filter(|(_, &res)| res > max_residual)
    {
        return Err(Error::ResidualExceeded {
            location: format!("row {worst}"),
            residual: res,
            tolerance: max_residual,
        });
    }
    Ok(DecomposedLinearLayer {
        in_features: q,
        r,
        small: Tensor::new(vec![p, r], alpha)?,
        bias: bias.cloned(),
        residuals,
    })
}

/// Window sums `pool(x)_r = Σ_{q=r}^{r+Q−R} x_q`.
pub fn pool_features(x: &Tensor, window: usize) -> Result<Tensor> {
    x.expect_rank(1, "feature vector")?;
    if window == 0 || window > x.len() {
        return Err(Error::InvalidGeometry(format!(
            "pool window {window} for {} features",
            x.len()
        )));
    }
    let xs = x.data();
    let out = (0..=xs.len() - window).map(|r| xs[r..r + window].iter().sum()).collect();
    Tensor::new(vec![xs.len() - window + 1], out)
}

pub fn forward_linear(x: &Tensor, layer: &DecomposedLinearLayer) -> Result<Tensor> {
    if x.len() != layer.in_features || x.rank() != 1 {
        return Err(shape_err(format!(
            "layer expects {} features, got shape {:?}",
            layer.in_features,
            x.shape()
        )));
    }
    let mut y = linear(&layer.small, &pool_features(x, layer.pool_window())?)?;
    if let Some(b) = &layer.bias {
        y.data_mut().iter_mut().zip(b.data()).for_each(|(v, b)| *v += b);
    }
    Ok(y)
}

/// Either kind of decomposed layer, as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub enum DecomposedLayer {
    Conv(DecomposedConvLayer),
    Linear(DecomposedLinearLayer),
}

impl DecomposedLayer {
    pub fn max_residual(&self) -> f64 {
        match self {
            Self::Conv(l) => l.max_residual(),
            Self::Linear(l) => l.max_residual(),
        }
    }
}

/// JSON sidecar stored next to the coefficient tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSidecar {
    Conv {
        cfg: StructuredConfig,
        pool_dims: (usize, usize, usize),
        pool_geom: ConvGeometry,
        small_geom: ConvGeometry,
        has_bias: bool,
        residuals: Vec<f64>,
    },
    Linear {
        cfg: StructuredConfig,
        pool_window: usize,
        has_bias: bool,
        residuals: Vec<f64>,
    },
}
