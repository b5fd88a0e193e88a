use crate::error::{shape_err, Error, Result};
use crate::structured::{structure_matrix, StructuredConfig};
use crate::tensor::Tensor;

/// Smoothing added to `‖PW‖²` in the gradient so that it stays defined at
/// exactly structured weights.
pub const SR_EPSILON: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SrLoss {
    /// `Σ_l r_l`, before any weighting by λ.
    pub total: f64,
    pub per_layer: Vec<f64>,
}

/// Splits `w` into `(‖PW‖², ‖W‖², PW)` with `P = I − A·A⁺` applied to every
/// `C·N²` row.
fn off_subspace(w: &Tensor, cfg: &StructuredConfig) -> Result<(f64, f64, Vec<f64>)> {
    let k = cfg.kernel_len();
    if w.len() % k != 0 {
        return Err(shape_err(format!(
            "weights of shape {:?} are not rows of {cfg:?}",
            w.shape()
        )));
    }
    let norm2: f64 = w.data().iter().map(|v| v * v).sum();
    if norm2 == 0.0 {
        return Err(Error::ZeroNorm(format!("weights of shape {:?}", w.shape())));
    }
    let projected = structure_matrix(cfg)?.project_rows(w.data())?;
    let pw: Vec<f64> = w.data().iter().zip(&projected).map(|(a, b)| a - b).collect();
    let pw2 = pw.iter().map(|v| v * v).sum();
    Ok((pw2, norm2, pw))
}

/// `‖(I − A·A⁺)W‖_F / ‖W‖_F` for one layer's weights. Each leading row of
/// `w` is one kernel of `cfg`.
pub fn sr_residual(w: &Tensor, cfg: &StructuredConfig) -> Result<f64> {
    let (pw2, norm2, _) = off_subspace(w, cfg)?;
    Ok((pw2 / norm2).sqrt().min(1.0))
}

pub fn sr_loss(weights: &[Tensor], cfgs: &[StructuredConfig]) -> Result<SrLoss> {
    if weights.len() != cfgs.len() {
        return Err(shape_err(format!(
            "{} weight tensors for {} configs",
            weights.len(),
            cfgs.len()
        )));
    }
    let per_layer = weights
        .iter()
        .zip(cfgs)
        .map(|(w, cfg)| sr_residual(w, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(SrLoss {
        total: per_layer.iter().sum(),
        per_layer,
    })
}

/// Gradient of `r(W) = ‖PW‖/‖W‖`:
/// `PW/(‖PW‖_ε·‖W‖) − (‖PW‖_ε/‖W‖³)·W` with `‖v‖_ε = sqrt(‖v‖² + ε)`.
pub fn sr_grad(w: &Tensor, cfg: &StructuredConfig) -> Result<Tensor> {
    let (pw2, norm2, pw) = off_subspace(w, cfg)?;
    let pw_eps = (pw2 + SR_EPSILON).sqrt();
    let norm = norm2.sqrt();
    let a = 1.0 / (pw_eps * norm);
    let b = pw_eps / (norm2 * norm);
    let g = pw.iter().zip(w.data()).map(|(p, x)| a * p - b * x).collect();
    Tensor::new(w.shape().to_vec(), g)
}
