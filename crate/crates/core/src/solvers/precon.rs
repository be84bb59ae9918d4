use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::LinearOperator;
use crate::error::{Error, Result};
use crate::grid::{scatter_unchecked, select_unchecked, IndexSets};
use crate::kron::KroneckerEigen;

/// Diagonal operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalOperator {
    diag: Vec<f64>,
}

impl DiagonalOperator {
    pub fn new(diag: Vec<f64>) -> Self {
        Self { diag }
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Entrywise square root, i.e. the two-sided split factor.
    pub fn sqrt(&self) -> Self {
        Self { diag: self.diag.iter().map(|d| d.sqrt()).collect() }
    }
}

impl LinearOperator for DiagonalOperator {
    fn size(&self) -> usize {
        self.diag.len()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        Ok(x.iter().zip(&self.diag).map(|(xi, d)| xi * d).collect())
    }
}

/// Approximate inverse `(γR + σ²I)⁻¹` for the penalized system.
///
/// This is the square of the split preconditioner `(γR + σ²I)^{-1/2}`; CG with
/// it is equivalent to CG on the two-sided preconditioned system.
pub fn pg_preconditioner(idx: &IndexSets, gamma: f64, sigma2: f64) -> Result<DiagonalOperator> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidArgument(format!("PG preconditioner needs sigma2 > 0, got {sigma2}")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("penalty gamma must be positive, got {gamma}")));
    }
    let mut diag = vec![1.0 / sigma2; idx.size()];
    for &i in idx.gaps() {
        diag[i] = 1.0 / (gamma + sigma2);
    }
    Ok(DiagonalOperator::new(diag))
}

/// How the low-rank basis is stored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreconMode {
    /// Materialize the `n × p` basis at setup; apply costs `O(np)`.
    #[default]
    Explicit,
    /// Keep only eigen indices; apply costs two Kronecker products.
    Implicit,
}

#[derive(Debug, Clone)]
enum Basis<'a> {
    Empty,
    Explicit(DMatrix<f64>),
    Implicit { eigen: &'a KroneckerEigen, rows: &'a [usize], cols: Vec<usize>, scale: Vec<f64> },
}

/// `c⁻¹ [r − Ũ (cI + ŨᵀŨ)⁻¹ Ũᵀ r]`, the inverse of `cI + ŨŨᵀ`.
///
/// With `Ũ = W Q Sᵀ T^{1/2}` and `c = σ²` this inverts the rank-`p`
/// approximation `K̃_XX + σ²I`; with `Ũ = V Q S̄ᵀ T̄^{1/2}` and `c = ζ` it is the
/// shifted fill-gaps preconditioner.
#[derive(Debug, Clone)]
pub struct LowRankPrecon<'a> {
    n: usize,
    shift: f64,
    basis: Basis<'a>,
    chol: Option<Cholesky<f64, Dyn>>,
    eigen_indices: Vec<usize>,
}

impl<'a> LowRankPrecon<'a> {
    fn build(
        eigen: &'a KroneckerEigen,
        rows: &'a [usize],
        picks: Vec<(usize, f64)>,
        shift: f64,
        mode: PreconMode,
    ) -> Result<Self> {
        let n = rows.len();
        let eigen_indices: Vec<usize> = picks.iter().map(|&(j, _)| j).collect();
        if picks.is_empty() {
            return Ok(Self { n, shift, basis: Basis::Empty, chol: None, eigen_indices });
        }
        let scale: Vec<f64> = picks.iter().map(|&(_, t)| t.sqrt()).collect();
        let p = picks.len();
        let (basis, gram) = match mode {
            PreconMode::Explicit => {
                let mut u = DMatrix::zeros(n, p);
                for (c, (&j, s)) in eigen_indices.iter().zip(&scale).enumerate() {
                    let col = eigen.column(j)?;
                    for (r, &i) in rows.iter().enumerate() {
                        u[(r, c)] = s * col[i];
                    }
                }
                let gram = u.tr_mul(&u);
                (Basis::Explicit(u), gram)
            }
            PreconMode::Implicit => {
                let basis = Basis::Implicit { eigen, rows, cols: eigen_indices.clone(), scale };
                let mut gram = DMatrix::zeros(p, p);
                for c in 0..p {
                    let mut e = vec![0.0; p];
                    e[c] = 1.0;
                    let uc = basis_apply(&basis, &e, n)?;
                    let g = basis_apply_t(&basis, &uc)?;
                    gram.set_column(c, &DVector::from_vec(g));
                }
                // Symmetrize round-off from the two Kronecker passes.
                let gram = (&gram + gram.transpose()) * 0.5;
                (basis, gram)
            }
        };
        let inner = gram + DMatrix::identity(p, p) * shift;
        let chol = inner
            .cholesky()
            .ok_or_else(|| Error::Factorization(format!("rank-{p} capacitance matrix is not positive definite")))?;
        Ok(Self { n, shift, basis, chol: Some(chol), eigen_indices })
    }

    pub fn rank(&self) -> usize {
        self.eigen_indices.len()
    }

    /// Full-grid eigen indices spanning the correction.
    pub fn eigen_indices(&self) -> &[usize] {
        &self.eigen_indices
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }
}

/// `Ũ v`.
fn basis_apply(basis: &Basis<'_>, v: &[f64], n: usize) -> Result<Vec<f64>> {
    match basis {
        Basis::Empty => Ok(vec![0.0; n]),
        Basis::Explicit(u) => Ok((u * DVector::from_column_slice(v)).data.into()),
        Basis::Implicit { eigen, rows, cols, scale } => {
            let mut coeffs = vec![0.0; eigen.size()];
            for ((&j, s), vi) in cols.iter().zip(scale).zip(v) {
                coeffs[j] = s * vi;
            }
            Ok(select_unchecked(&eigen.q_mvm(&coeffs)?, rows))
        }
    }
}

/// `Ũᵀ r`.
fn basis_apply_t(basis: &Basis<'_>, r: &[f64]) -> Result<Vec<f64>> {
    match basis {
        Basis::Empty => Ok(Vec::new()),
        Basis::Explicit(u) => Ok(u.tr_mul(&DVector::from_column_slice(r)).data.into()),
        Basis::Implicit { eigen, rows, cols, scale } => {
            let full = eigen.qt_mvm(&scatter_unchecked(r, rows, eigen.size()))?;
            Ok(cols.iter().zip(scale).map(|(&j, s)| s * full[j]).collect())
        }
    }
}

impl LinearOperator for LowRankPrecon<'_> {
    fn size(&self) -> usize {
        self.n
    }

    fn apply(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.check_len(r)?;
        let inv_c = 1.0 / self.shift;
        let Some(chol) = &self.chol else {
            return Ok(r.iter().map(|x| x * inv_c).collect());
        };
        let w = DVector::from_vec(basis_apply_t(&self.basis, r)?);
        let s = chol.solve(&w);
        let correction = basis_apply(&self.basis, s.as_slice(), self.n)?;
        Ok(r.iter().zip(&correction).map(|(ri, ci)| (ri - ci) * inv_c).collect())
    }
}

fn check_sizes(eigen: &KroneckerEigen, idx: &IndexSets, p: usize) -> Result<()> {
    if idx.size() != eigen.size() {
        return Err(Error::DimensionMismatch { expected: eigen.size(), got: idx.size() });
    }
    if p > eigen.size() {
        return Err(Error::RankTooLarge { p, size: eigen.size() });
    }
    Ok(())
}

/// Rank-`p` preconditioner for the ignore-gaps system, built from the `p`
/// largest eigenpairs of `K`. `p = 0` gives `r / σ²`.
pub fn ig_preconditioner<'a>(
    eigen: &'a KroneckerEigen,
    idx: &'a IndexSets,
    p: usize,
    sigma2: f64,
    mode: PreconMode,
) -> Result<LowRankPrecon<'a>> {
    check_sizes(eigen, idx, p)?;
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidArgument(format!("IG preconditioner needs sigma2 > 0, got {sigma2}")));
    }
    let spectrum = eigen.spectrum();
    spectrum.clamped()?;
    let picks = spectrum.top(p)?.into_iter().map(|(j, v)| (j, v.max(0.0))).collect();
    LowRankPrecon::build(eigen, idx.observed(), picks, sigma2, mode)
}

/// Open interval `(0, (λ_p + σ²)⁻¹)` of valid spectral shifts, with `λ_p` the
/// `p`-th smallest eigenvalue.
pub fn fg_shift_bound(eigen: &KroneckerEigen, p: usize, sigma2: f64) -> Result<f64> {
    if p == 0 || p > eigen.size() {
        return Err(Error::RankTooLarge { p, size: eigen.size() });
    }
    let spectrum = eigen.spectrum();
    spectrum.clamped()?;
    let lambda_p = spectrum.bottom(p)?.last().map(|&(_, v)| v.max(0.0)).unwrap_or(0.0);
    let denom = lambda_p + sigma2;
    if denom > 0.0 {
        Ok(1.0 / denom)
    } else {
        Err(Error::Singular { eigenvalue: lambda_p, shift: sigma2 })
    }
}

/// Rank-`p` preconditioner for the fill-gaps system, built from the `p`
/// smallest eigenpairs with spectral shift `ζ` (default: mid-interval).
pub fn fg_preconditioner<'a>(
    eigen: &'a KroneckerEigen,
    idx: &'a IndexSets,
    p: usize,
    sigma2: f64,
    zeta: Option<f64>,
    mode: PreconMode,
) -> Result<LowRankPrecon<'a>> {
    check_sizes(eigen, idx, p)?;
    if p == 0 {
        return Err(Error::InvalidArgument("fill-gaps preconditioner needs rank p >= 1".into()));
    }
    if idx.n_gaps() == 0 {
        return Err(Error::InvalidArgument("fill-gaps preconditioner needs at least one gap".into()));
    }
    let bound = fg_shift_bound(eigen, p, sigma2)?;
    let zeta = zeta.unwrap_or(0.5 * bound);
    if !(zeta > 0.0 && zeta < bound) {
        return Err(Error::InvalidShift { zeta, bound });
    }
    let inv = eigen.spectrum().shifted_inverse(sigma2)?;
    let picks = eigen.spectrum().bottom(p)?.into_iter().map(|(j, _)| (j, inv[j] - zeta)).collect();
    LowRankPrecon::build(eigen, idx.gaps(), picks, zeta, mode)
}
