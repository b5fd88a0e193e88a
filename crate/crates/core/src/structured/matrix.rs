use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DMatrixView};

use super::config::{generate_structured_basis, StructuredConfig};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{sum_pool3d, ConvGeometry, Tensor};

/// Relative singular-value cutoff for the rank check.
pub const PINV_RCOND: f64 = 1e-12;

/// The `C·N² × c·n²` binary matrix whose column `m` is the vectorized basis
/// cuboid `β_m`, with its Moore–Penrose pseudoinverse.
///
/// `vec(W) = A·vec(α)` for a structured kernel, and `A·A⁺` projects any
/// kernel onto the structured subspace. Vectorization is channel-major, then
/// row, then column, for both `W` and `α`.
#[derive(Debug)]
pub struct StructureMatrix {
    cfg: StructuredConfig,
    a: DMatrix<f64>,
    pinv: DMatrix<f64>,
    projector: OnceLock<DMatrix<f64>>,
}

impl StructureMatrix {
    pub fn new(cfg: StructuredConfig) -> Result<Self> {
        cfg.validate()?;
        let (rows, cols) = (cfg.kernel_len(), cfg.num_basis());
        let basis = generate_structured_basis(&cfg);
        let mut a = DMatrix::zeros(rows, cols);
        for (m, support) in basis.supports().iter().enumerate() {
            for &i in support {
                a[(i, m)] = 1.0;
            }
        }
        let pinv = if cfg.is_identity() {
            // Unit cuboids in lexicographic order: A is the identity.
            DMatrix::identity(rows, cols)
        } else {
            let sv = a.singular_values();
            let cutoff = PINV_RCOND * sv.max();
            let rank = sv.iter().filter(|&&s| s > cutoff).count();
            if rank < cols {
                return Err(Error::RankDeficient { rank, expected: cols });
            }
            // Full column rank, so A⁺ = R⁻¹Qᵀ. nalgebra's SVD-based
            // pseudoinverse loses up to 1e-7 on matrices with repeated
            // singular values; Householder QR stays near machine precision.
            let qr = a.clone().qr();
            qr.r()
                .solve_upper_triangular(&qr.q().transpose())
                .ok_or_else(|| Error::RankDeficient { rank: cols - 1, expected: cols })?
        };
        Ok(Self {
            cfg,
            a,
            pinv,
            projector: OnceLock::new(),
        })
    }

    /// Process-wide cached instance for `cfg`.
    pub fn shared(cfg: StructuredConfig) -> Result<Arc<Self>> {
        static CACHE: OnceLock<Mutex<HashMap<StructuredConfig, Arc<StructureMatrix>>>> =
            OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(m) = cache.lock().unwrap().get(&cfg) {
            return Ok(m.clone());
        }
        let built = Arc::new(Self::new(cfg)?);
        Ok(cache.lock().unwrap().entry(cfg).or_insert(built).clone())
    }

    pub fn cfg(&self) -> &StructuredConfig {
        &self.cfg
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn pinv(&self) -> &DMatrix<f64> {
        &self.pinv
    }

    /// `A·A⁺`, built on first use.
    pub fn projector(&self) -> &DMatrix<f64> {
        self.projector.get_or_init(|| &self.a * &self.pinv)
    }

    fn check_rows(&self, len: usize, width: usize) -> Result<usize> {
        if len % width != 0 {
            return Err(shape_err(format!(
                "{len} values is not a whole number of rows of {width}"
            )));
        }
        Ok(len / width)
    }

    /// `A⁺` applied to each row of a row-major `rows × C·N²` buffer.
    pub fn alpha_rows(&self, w: &[f64]) -> Result<Vec<f64>> {
        let rows = self.check_rows(w.len(), self.cfg.kernel_len())?;
        if self.cfg.is_identity() {
            return Ok(w.to_vec());
        }
        let wt = DMatrixView::from_slice(w, self.cfg.kernel_len(), rows);
        Ok((&self.pinv * wt).as_slice().to_vec())
    }

    /// `A` applied to each row of a row-major `rows × c·n²` buffer.
    pub fn compose_rows(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        let rows = self.check_rows(alpha.len(), self.cfg.num_basis())?;
        if self.cfg.is_identity() {
            return Ok(alpha.to_vec());
        }
        let at = DMatrixView::from_slice(alpha, self.cfg.num_basis(), rows);
        Ok((&self.a * at).as_slice().to_vec())
    }

    /// `A·A⁺` applied to each row.
    pub fn project_rows(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.compose_rows(&self.alpha_rows(w)?)
    }

    /// `‖(I − A·A⁺)W‖_F / ‖W‖_F` over all rows; zero for a zero tensor.
    pub fn residual_rows(&self, w: &[f64]) -> Result<f64> {
        let projected = self.project_rows(w)?;
        Ok(relative_residual(w, &projected))
    }
}

pub(crate) fn relative_residual(w: &[f64], projected: &[f64]) -> f64 {
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    let off = w
        .iter()
        .zip(projected)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    (off / norm).clamp(0.0, 1.0)
}

/// Builds (or fetches from the process cache) the structure matrix of `cfg`.
pub fn structure_matrix(cfg: &StructuredConfig) -> Result<Arc<StructureMatrix>> {
    StructureMatrix::shared(*cfg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub w_hat: Tensor,
    pub residual: f64,
}

/// Orthogonal projection of a `C×N×N` kernel onto the structured subspace.
pub fn project(w: &Tensor, cfg: &StructuredConfig) -> Result<Projection> {
    w.expect_shape(&cfg.kernel_shape())?;
    let m = structure_matrix(cfg)?;
    let projected = m.project_rows(w.data())?;
    let residual = relative_residual(w.data(), &projected);
    Ok(Projection {
        w_hat: Tensor::new(w.shape().to_vec(), projected)?,
        residual,
    })
}

/// Least-squares coefficients `α = A⁺·vec(W)`, shaped `c×n×n`.
pub fn extract_alpha(w: &Tensor, cfg: &StructuredConfig) -> Result<Tensor> {
    w.expect_shape(&cfg.kernel_shape())?;
    let alpha = structure_matrix(cfg)?.alpha_rows(w.data())?;
    Tensor::new(cfg.alpha_shape().to_vec(), alpha)
}

/// `W = 1_{(C−c+1)×(N−n+1)×(N−n+1)} ∗ α`, the full (zero-padded)
/// convolution of the all-ones cuboid with `α`.
///
/// Computed as a sum-pool over `α` zero-padded by `C−c` channels and `N−n`
/// pixels on each side, which needs no structure matrix.
pub fn reconstruct(alpha: &Tensor, cfg: &StructuredConfig) -> Result<Tensor> {
    alpha.expect_shape(&cfg.alpha_shape())?;
    let (pc, ps, _) = cfg.pool_dims();
    let chan_pad = pc - 1;
    let nn = cfg.n * cfg.n;
    let mut padded = vec![0.0; (cfg.c + 2 * chan_pad) * nn];
    padded[chan_pad * nn..(chan_pad + cfg.c) * nn].copy_from_slice(alpha.data());
    let padded = Tensor::new(vec![cfg.c + 2 * chan_pad, cfg.n, cfg.n], padded)?;
    sum_pool3d(&padded, cfg.pool_dims(), &ConvGeometry::new(1, ps - 1, 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composite::{compose_kernel, CompositeKernel};
    use crate::tensor::random_tensor;

    /// `(AᵀA)⁻¹Aᵀ` by Gauss–Jordan on the normal equations.
    fn normal_equations_pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
        let ata = a.transpose() * a;
        let k = ata.nrows();
        let mut aug = DMatrix::zeros(k, 2 * k);
        for i in 0..k {
            for j in 0..k {
                aug[(i, j)] = ata[(i, j)];
            }
            aug[(i, k + i)] = 1.0;
        }
        for col in 0..k {
            let piv = (col..k)
                .max_by(|&x, &y| aug[(x, col)].abs().total_cmp(&aug[(y, col)].abs()))
                .unwrap();
            aug.swap_rows(col, piv);
            let p = aug[(col, col)];
            for j in 0..2 * k {
                aug[(col, j)] /= p;
            }
            for i in 0..k {
                if i != col {
                    let f = aug[(i, col)];
                    for j in 0..2 * k {
                        aug[(i, j)] -= f * aug[(col, j)];
                    }
                }
            }
        }
        aug.columns(k, k).into_owned() * a.transpose()
    }

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    #[test]
    fn small_matrix_left_inverse() {
        let m = StructureMatrix::new(StructuredConfig::new(1, 3, 1, 2).unwrap()).unwrap();
        assert_eq!(m.a().shape(), (9, 4));
        let eye = m.pinv() * m.a();
        assert!(max_abs(&(eye - DMatrix::identity(4, 4))) < 1e-12);
        let oracle = normal_equations_pinv(m.a());
        assert!(max_abs(&(oracle - m.pinv())) < 1e-12);
    }

    #[test]
    fn pinv_is_accurate_with_repeated_singular_values() {
        for (big_c, big_n, c, n) in [(4, 5, 2, 3), (8, 3, 3, 3), (8, 5, 6, 4), (8, 5, 4, 3)] {
            let m = StructureMatrix::new(StructuredConfig::new(big_c, big_n, c, n).unwrap()).unwrap();
            let k = m.cfg().num_basis();
            assert!(max_abs(&(normal_equations_pinv(m.a()) - m.pinv())) < 1e-12);
            assert!(max_abs(&(m.pinv() * m.a() - DMatrix::identity(k, k))) < 1e-13);
        }
    }

    #[test]
    fn identity_structure() {
        let m = StructureMatrix::new(StructuredConfig::identity(3, 2)).unwrap();
        assert_eq!(m.a(), &DMatrix::<f64>::identity(12, 12));
        assert!(max_abs(&(m.projector() - DMatrix::identity(12, 12))) < 1e-15);
    }

    #[test]
    fn fig2_columns_sum_to_support_size() {
        let m = StructureMatrix::new(StructuredConfig::new(4, 3, 2, 2).unwrap()).unwrap();
        assert_eq!(m.a().shape(), (36, 8));
        for col in m.a().column_iter() {
            assert_eq!(col.sum(), 12.0);
        }
    }

    #[test]
    fn projector_algebra() {
        for (big_c, big_n, c, n) in [(4, 3, 2, 2), (3, 5, 1, 3), (8, 3, 8, 1), (2, 5, 1, 5)] {
            let m = StructureMatrix::new(StructuredConfig::new(big_c, big_n, c, n).unwrap()).unwrap();
            let p = m.projector();
            assert!(max_abs(&(p - p.transpose())) < 1e-10);
            assert!(max_abs(&(p * p - p)) < 1e-10);
            let k = m.cfg().num_basis();
            assert!(max_abs(&(m.pinv() * m.a() - DMatrix::identity(k, k))) < 1e-10);
        }
    }

    #[test]
    fn structured_kernel_is_fixed_point() {
        let cfg = StructuredConfig::new(4, 3, 2, 2).unwrap();
        let alpha = random_tensor(5, &[2, 2, 2]);
        let w = reconstruct(&alpha, &cfg).unwrap();
        let p = project(&w, &cfg).unwrap();
        assert!(p.residual <= 1e-12);
        assert!(p.w_hat.max_rel_diff(&w).unwrap() < 1e-12);
    }

    #[test]
    fn corner_one_hot_residual_matches_dense_projector() {
        let cfg = StructuredConfig::new(1, 3, 1, 2).unwrap();
        let w = Tensor::from_fn(&[1, 3, 3], |i| (i == 0) as u8 as f64);
        let got = project(&w, &cfg).unwrap();
        let m = StructureMatrix::new(cfg).unwrap();
        let p = m.a() * normal_equations_pinv(m.a());
        let v = nalgebra::DVector::from_column_slice(w.data());
        let off = (DMatrix::identity(9, 9) - p) * &v;
        assert!((got.residual - off.norm() / v.norm()).abs() < 1e-12);
        assert!(got.residual > 0.0 && got.residual <= 1.0);
    }

    #[test]
    fn projection_is_idempotent_and_in_column_space() {
        let cfg = StructuredConfig::new(3, 3, 2, 2).unwrap();
        let w = random_tensor(6, &[3, 3, 3]);
        let once = project(&w, &cfg).unwrap();
        let twice = project(&once.w_hat, &cfg).unwrap();
        assert!(twice.w_hat.max_rel_diff(&once.w_hat).unwrap() < 1e-12);
        assert!(twice.residual <= 1e-10);
        assert!(once.residual > 0.0);
    }

    #[test]
    fn zero_kernel_has_zero_residual() {
        let cfg = StructuredConfig::new(2, 3, 1, 2).unwrap();
        assert_eq!(project(&Tensor::zeros(&[2, 3, 3]), &cfg).unwrap().residual, 0.0);
    }

    #[test]
    fn extract_recovers_coefficients() {
        let cfg = StructuredConfig::new(4, 3, 2, 2).unwrap();
        let alpha0 = random_tensor(7, &[2, 2, 2]);
        let w = reconstruct(&alpha0, &cfg).unwrap();
        assert!(extract_alpha(&w, &cfg).unwrap().max_rel_diff(&alpha0).unwrap() < 1e-10);

        let id = StructuredConfig::identity(2, 3);
        let w = random_tensor(8, &[2, 3, 3]);
        assert!(extract_alpha(&w, &id).unwrap().max_rel_diff(&w).unwrap() < 1e-15);
    }

    #[test]
    fn extract_is_least_squares_for_unstructured() {
        let cfg = StructuredConfig::new(3, 3, 2, 2).unwrap();
        let w = random_tensor(9, &[3, 3, 3]);
        let alpha = extract_alpha(&w, &cfg).unwrap();
        let m = StructureMatrix::new(cfg).unwrap();
        let oracle = normal_equations_pinv(m.a()) * nalgebra::DVector::from_column_slice(w.data());
        for (a, b) in alpha.data().iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn reconstruct_examples() {
        let cfg = StructuredConfig::new(4, 3, 2, 2).unwrap();
        let alpha = Tensor::from_fn(&[2, 2, 2], |i| (i == 0) as u8 as f64);
        let basis = crate::structured::generate_structured_basis(&cfg);
        assert_eq!(reconstruct(&alpha, &cfg).unwrap(), basis.elements()[0]);

        let cfg = StructuredConfig::new(1, 3, 1, 2).unwrap();
        let w = reconstruct(&Tensor::full(&[1, 2, 2], 1.0), &cfg).unwrap();
        assert_eq!(w.data(), &[1., 2., 1., 2., 4., 2., 1., 2., 1.]);
    }

    #[test]
    fn reconstruct_matches_matrix_and_basis_paths() {
        for (big_c, big_n, c, n) in [(4, 3, 2, 2), (5, 5, 2, 3), (3, 1, 1, 1), (1, 5, 1, 2)] {
            let cfg = StructuredConfig::new(big_c, big_n, c, n).unwrap();
            let alpha = random_tensor(10, &cfg.alpha_shape());
            let w = reconstruct(&alpha, &cfg).unwrap();
            let via_a = structure_matrix(&cfg).unwrap().compose_rows(alpha.data()).unwrap();
            let via_a = Tensor::new(w.shape().to_vec(), via_a).unwrap();
            assert!(w.max_rel_diff(&via_a).unwrap() < 1e-12);
            let k = CompositeKernel::new(
                crate::structured::generate_structured_basis(&cfg),
                alpha.data().to_vec(),
            )
            .unwrap();
            assert!(w.max_rel_diff(&compose_kernel(&k)).unwrap() < 1e-12);
            assert!(extract_alpha(&w, &cfg).unwrap().max_rel_diff(&alpha).unwrap() < 1e-10);
        }
    }

    #[test]
    fn shape_errors() {
        let cfg = StructuredConfig::new(2, 3, 1, 2).unwrap();
        assert!(project(&Tensor::zeros(&[2, 2, 2]), &cfg).is_err());
        assert!(extract_alpha(&Tensor::zeros(&[1, 3, 3]), &cfg).is_err());
        assert!(reconstruct(&Tensor::zeros(&[1, 3, 3]), &cfg).is_err());
    }
}
