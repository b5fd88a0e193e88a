use std::fs;
use std::path::Path;

use super::layer::{DecomposedConvLayer, DecomposedLayer, DecomposedLinearLayer, LayerSidecar};
use crate::error::{Error, Result};
use crate::tensor::{read_tensor, write_tensor};

const ALPHA: &str = "alpha.stcv";
const BIAS: &str = "bias.stcv";
const SIDECAR: &str = "layer.json";

/// Writes `alpha.stcv`, an optional `bias.stcv` and a `layer.json` sidecar
/// into `dir`, creating it if needed.
pub fn save_layer(layer: &DecomposedLayer, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (alpha, bias, sidecar) = match layer {
        DecomposedLayer::Conv(l) => (
            &l.alpha,
            l.bias.as_ref(),
            LayerSidecar::Conv {
                cfg: l.cfg,
                pool_dims: l.pool_dims,
                pool_geom: l.pool_geom,
                small_geom: l.small_geom,
                has_bias: l.bias.is_some(),
                residuals: l.residuals.clone(),
            },
        ),
        DecomposedLayer::Linear(l) => (
            &l.small,
            l.bias.as_ref(),
            LayerSidecar::Linear {
                cfg: l.cfg(),
                pool_window: l.pool_window(),
                has_bias: l.bias.is_some(),
                residuals: l.residuals.clone(),
            },
        ),
    };
    write_tensor(&dir.join(ALPHA), alpha)?;
    if let Some(b) = bias {
        write_tensor(&dir.join(BIAS), b)?;
    }
    fs::write(dir.join(SIDECAR), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn load_layer(dir: &Path) -> Result<DecomposedLayer> {
    let sidecar: LayerSidecar = serde_json::from_str(&fs::read_to_string(dir.join(SIDECAR))?)?;
    let alpha = read_tensor(&dir.join(ALPHA))?;
    let load_bias = |has: bool| -> Result<_> {
        Ok(if has { Some(read_tensor(&dir.join(BIAS))?) } else { None })
    };
    match sidecar {
        LayerSidecar::Conv { cfg, pool_dims, pool_geom, small_geom, has_bias, residuals } => {
            cfg.validate()?;
            if pool_dims != cfg.pool_dims() {
                return Err(Error::InvalidConfig(format!(
                    "pool dims {pool_dims:?} inconsistent with {cfg:?}"
                )));
            }
            let c_out = alpha.shape().first().copied().unwrap_or(0);
            alpha.expect_shape(&[c_out, cfg.c, cfg.n, cfg.n])?;
            Ok(DecomposedLayer::Conv(DecomposedConvLayer {
                cfg,
                pool_dims,
                pool_geom,
                alpha,
                small_geom,
                bias: load_bias(has_bias)?,
                residuals,
            }))
        }
        LayerSidecar::Linear { cfg, pool_window, has_bias, residuals } => {
            cfg.validate()?;
            if pool_window != cfg.channels - cfg.c + 1 {
                return Err(Error::InvalidConfig(format!(
                    "pool window {pool_window} inconsistent with {cfg:?}"
                )));
            }
            let p = alpha.shape().first().copied().unwrap_or(0);
            alpha.expect_shape(&[p, cfg.c])?;
            Ok(DecomposedLayer::Linear(DecomposedLinearLayer {
                in_features: cfg.channels,
                r: cfg.c,
                small: alpha,
                bias: load_bias(has_bias)?,
                residuals,
            }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structured::{decompose_conv_layer, decompose_linear, StructuredConfig};
    use crate::tensor::{random_tensor, ConvGeometry};

    #[test]
    fn conv_round_trip() {
        let cfg = StructuredConfig::identity(2, 3);
        let w = random_tensor(1, &[4, 2, 3, 3]);
        let b = random_tensor(2, &[4]);
        let geom = ConvGeometry::new(2, 1, 1);
        let layer = DecomposedLayer::Conv(decompose_conv_layer(&w, &cfg, &geom, Some(&b), 1e-6).unwrap());
        let dir = tempfile::tempdir().unwrap();
        save_layer(&layer, dir.path()).unwrap();
        assert_eq!(load_layer(dir.path()).unwrap(), layer);
    }

    #[test]
    fn linear_round_trip_without_bias() {
        let w = random_tensor(3, &[3, 5]);
        let layer = DecomposedLayer::Linear(decompose_linear(&w, 2, None, 1.0).unwrap());
        let dir = tempfile::tempdir().unwrap();
        save_layer(&layer, dir.path()).unwrap();
        assert!(!dir.path().join(BIAS).exists());
        assert_eq!(load_layer(dir.path()).unwrap(), layer);
    }
}
