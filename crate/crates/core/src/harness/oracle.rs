use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};
use crate::grid::{GappyDataset, GridSpec, IndexSets};
use crate::kernels::{Hyperparams, ProductKernel};

pub const DEFAULT_ORACLE_CAP: usize = 4096;

enum Factor {
    Cholesky(Cholesky<f64, Dyn>),
    Lu(LU<f64, Dyn, Dyn>),
}

/// Dense reference solutions built from pointwise kernel evaluations, with
/// no Kronecker algebra anywhere on the path.
pub struct DenseOracle {
    grid: GridSpec,
    kernel: ProductKernel,
    idx: IndexSets,
    sigma2: f64,
    k: DMatrix<f64>,
    factor: Factor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    /// `(K_XX + σ²I)⁻¹ y_X`.
    pub alpha_x: Vec<f64>,
    /// `K_ZX α_X`, the noise-free posterior mean on the gaps.
    pub y_gaps: Vec<f64>,
    /// `log |K_XX + σ²I|`.
    pub log_det: f64,
}

impl std::fmt::Debug for DenseOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DenseOracle").field("size", &self.k.nrows()).field("sigma2", &self.sigma2).finish()
    }
}

impl DenseOracle {
    pub fn new(grid: &GridSpec, kernel: &ProductKernel, idx: &IndexSets, sigma2: f64, cap: usize) -> Result<Self> {
        let m = grid.len();
        if m > cap {
            return Err(Error::OracleCap { size: m, cap });
        }
        if idx.size() != m {
            return Err(Error::DimensionMismatch { expected: m, got: idx.size() });
        }
        kernel.validate()?;
        let points: Vec<Vec<f64>> = (0..m).map(|i| grid.point(i)).collect::<Result<_>>()?;
        let mut k = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let v = kernel.eval(&points[i], &points[j])?;
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        let obs = idx.observed();
        let a = DMatrix::from_fn(obs.len(), obs.len(), |i, j| k[(obs[i], obs[j])] + if i == j { sigma2 } else { 0.0 });
        let factor = match Cholesky::new(a.clone()) {
            Some(c) => Factor::Cholesky(c),
            None => Factor::Lu(a.lu()),
        };
        Ok(Self { grid: grid.clone(), kernel: kernel.clone(), idx: idx.clone(), sigma2, k, factor })
    }

    pub fn for_data(data: &GappyDataset, hyper: &Hyperparams) -> Result<Self> {
        Self::new(&data.grid, &hyper.kernel, &data.idx, hyper.noise_variance, DEFAULT_ORACLE_CAP)
    }

    /// Full-grid covariance `K`.
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.k
    }

    /// `(K_XX + σ²I)⁻¹ b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.idx.n_observed();
        if b.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: b.len() });
        }
        let b = DVector::from_column_slice(b);
        let x = match &self.factor {
            Factor::Cholesky(c) => c.solve(&b),
            Factor::Lu(lu) => {
                lu.solve(&b).ok_or_else(|| Error::Factorization("dense oracle matrix is singular".into()))?
            }
        };
        Ok(x.data.into())
    }

    pub fn log_det(&self) -> f64 {
        match &self.factor {
            Factor::Cholesky(c) => 2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>(),
            Factor::Lu(lu) => lu.u().diagonal().iter().map(|v| v.abs().ln()).sum(),
        }
    }

    pub fn solution(&self, y_x: &[f64]) -> Result<OracleSolution> {
        let alpha_x = self.solve(y_x)?;
        let obs = self.idx.observed();
        let y_gaps =
            self.idx.gaps().iter().map(|&z| obs.iter().zip(&alpha_x).map(|(&x, a)| self.k[(z, x)] * a).sum()).collect();
        Ok(OracleSolution { alpha_x, y_gaps, log_det: self.log_det() })
    }

    fn cross(&self, x_star: &[f64]) -> Result<Vec<f64>> {
        self.idx.observed().iter().map(|&i| self.kernel.eval(&self.grid.point(i)?, x_star)).collect()
    }

    /// `g_Xᵀ (K_XX + σ²I)⁻¹ y_X`.
    pub fn posterior_mean(&self, x_star: &[f64], y_x: &[f64]) -> Result<f64> {
        let alpha = self.solve(y_x)?;
        Ok(self.cross(x_star)?.iter().zip(&alpha).map(|(g, a)| g * a).sum())
    }

    /// `k(x*, x*) − g_Xᵀ (K_XX + σ²I)⁻¹ g_X`, unclamped.
    pub fn posterior_variance(&self, x_star: &[f64]) -> Result<f64> {
        let g = self.cross(x_star)?;
        let w = self.solve(&g)?;
        Ok(self.kernel.eval(x_star, x_star)? - g.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>())
    }
}
