//! Kronecker-structured linear algebra.
//!
//! Products with `A_1 ⊗ … ⊗ A_d` are evaluated one factor at a time on the
//! vector reshaped as a `d`-way tensor, so an `M × M` matrix is never formed.
//! Axis 0 is the slowest-varying index, matching [`crate::grid::GridSpec`].

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut, DVector};

use crate::error::{Error, Result};
use crate::grid::unflatten;
use crate::symeig::sym_eigen;

/// Relative tolerance for factor symmetry.
const SYMMETRY_TOL: f64 = 1e-12;
/// Negative eigenvalues down to `-CLAMP_TOL · max|λ|` are treated as round-off.
const CLAMP_TOL: f64 = 1e-12;

/// Ordered factor list with cached transposes.
#[derive(Debug, Clone)]
struct KronFactors {
    factors: Vec<DMatrix<f64>>,
    transposed: Vec<DMatrix<f64>>,
}

impl KronFactors {
    fn new(factors: Vec<DMatrix<f64>>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidArgument("Kronecker operator needs at least one factor".into()));
        }
        for (l, f) in factors.iter().enumerate() {
            if f.nrows() == 0 || f.ncols() == 0 {
                return Err(Error::InvalidArgument(format!("factor {l} is empty")));
            }
            if f.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("factor {l}")));
            }
        }
        let transposed = factors.iter().map(DMatrix::transpose).collect();
        Ok(Self { factors, transposed })
    }

    fn nrows(&self) -> usize {
        self.factors.iter().map(DMatrix::nrows).product()
    }

    fn ncols(&self) -> usize {
        self.factors.iter().map(DMatrix::ncols).product()
    }

    fn apply(&self, x: &[f64], transpose: bool) -> Result<Vec<f64>> {
        let (mats, expected) = if transpose { (&self.transposed, self.nrows()) } else { (&self.factors, self.ncols()) };
        if x.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: x.len() });
        }
        Ok(kron_apply(mats, x))
    }
}

/// `(⊗ factors) · x` by successive mode products.
///
/// Two scratch buffers sized to the largest intermediate tensor are used. Each
/// mode product is a batch of small GEMMs over contiguous blocks.
fn kron_apply(factors: &[DMatrix<f64>], x: &[f64]) -> Vec<f64> {
    let d = factors.len();
    let mut shape: Vec<usize> = factors.iter().map(DMatrix::ncols).collect();
    let mut capacity = x.len();
    for (l, f) in factors.iter().enumerate() {
        shape[l] = f.nrows();
        capacity = capacity.max(shape.iter().product());
    }
    shape = factors.iter().map(DMatrix::ncols).collect();

    let mut cur = Vec::with_capacity(capacity);
    cur.extend_from_slice(x);
    let mut next = Vec::with_capacity(capacity);

    for l in 0..d {
        let a = &factors[l];
        let (r, n) = (a.nrows(), a.ncols());
        let pre: usize = shape[..l].iter().product();
        let post: usize = shape[l + 1..].iter().product();
        next.clear();
        next.resize(pre * r * post, 0.0);
        if post == 1 {
            // Row-major (pre × n) input is column-major (n × pre).
            let xin = DMatrixView::from_slice(&cur, n, pre);
            let mut out = DMatrixViewMut::from_slice(&mut next, r, pre);
            out.gemm(1.0, a, &xin, 0.0);
        } else {
            let at = a.transpose();
            for (xin, out) in cur.chunks_exact(n * post).zip(next.chunks_exact_mut(r * post)) {
                // Row-major (n × post) block is column-major (post × n).
                let xin = DMatrixView::from_slice(xin, post, n);
                let mut out = DMatrixViewMut::from_slice(out, post, r);
                out.gemm(1.0, &xin, &at, 0.0);
            }
        }
        shape[l] = r;
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// Dense expansion of `⊗ factors`. Only meant for oracles and tests.
pub fn kron_dense(factors: &[DMatrix<f64>]) -> DMatrix<f64> {
    factors.iter().skip(1).fold(factors[0].clone(), |acc, f| acc.kronecker(f))
}

/// Symmetric `K = K_1 ⊗ … ⊗ K_d`.
#[derive(Debug, Clone)]
pub struct KroneckerOperator {
    inner: KronFactors,
}

impl KroneckerOperator {
    pub fn new(factors: Vec<DMatrix<f64>>) -> Result<Self> {
        for (l, f) in factors.iter().enumerate() {
            if f.nrows() != f.ncols() {
                return Err(Error::NotSymmetric(l));
            }
            let scale = f.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
            let n = f.nrows();
            for i in 0..n {
                for j in 0..i {
                    if (f[(i, j)] - f[(j, i)]).abs() > SYMMETRY_TOL * scale {
                        return Err(Error::NotSymmetric(l));
                    }
                }
            }
        }
        Ok(Self { inner: KronFactors::new(factors)? })
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.inner.factors
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.factors.iter().map(DMatrix::nrows).collect()
    }

    /// Row and column size `M`.
    pub fn size(&self) -> usize {
        self.inner.nrows()
    }

    pub fn mvm(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.inner.apply(x, false)
    }

    /// Per-factor symmetric eigendecomposition, `K = Q T Qᵀ`.
    pub fn eigen(&self) -> Result<KroneckerEigen> {
        let mut q = Vec::with_capacity(self.inner.factors.len());
        let mut values = Vec::with_capacity(self.inner.factors.len());
        for (l, f) in self.inner.factors.iter().enumerate() {
            let eig = sym_eigen(f).ok_or(Error::EigenNoConvergence(l))?;
            q.push(eig.vectors);
            values.push(eig.values);
        }
        Ok(KroneckerEigen { q: KronFactors::new(q)?, values })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        kron_dense(&self.inner.factors)
    }
}

/// Rectangular `G = G_1 ⊗ … ⊗ G_d` with `G_l` of shape `m_l × q_l`.
#[derive(Debug, Clone)]
pub struct RectKroneckerOperator {
    inner: KronFactors,
}

impl RectKroneckerOperator {
    pub fn new(factors: Vec<DMatrix<f64>>) -> Result<Self> {
        Ok(Self { inner: KronFactors::new(factors)? })
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.inner.factors
    }

    pub fn nrows(&self) -> usize {
        self.inner.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.inner.ncols()
    }

    /// `G x` for `x` of length `Q`.
    pub fn mvm(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.inner.apply(x, false)
    }

    /// `Gᵀ x` for `x` of length `M`.
    pub fn mvm_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.inner.apply(x, true)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        kron_dense(&self.inner.factors)
    }
}

/// `K = Q T Qᵀ` with `Q = ⊗ Q_l` orthonormal and `T = ⊗ diag(t_l)`.
#[derive(Debug, Clone)]
pub struct KroneckerEigen {
    q: KronFactors,
    values: Vec<DVector<f64>>,
}

impl KroneckerEigen {
    pub fn q_factors(&self) -> &[DMatrix<f64>] {
        &self.q.factors
    }

    pub fn factor_eigenvalues(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn size(&self) -> usize {
        self.q.nrows()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.values.iter().map(|v| v.len()).collect()
    }

    /// `Q x`.
    pub fn q_mvm(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.q.apply(x, false)
    }

    /// `Qᵀ x`.
    pub fn qt_mvm(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.q.apply(x, true)
    }

    /// All `M` eigenvalues of `K`; entry `i` belongs to eigenvector column `i`
    /// of `Q`, whose per-axis indices follow the grid flattening order.
    pub fn spectrum(&self) -> Spectrum {
        let mut values = vec![1.0];
        for t in &self.values {
            values = values.iter().flat_map(|&a| t.iter().map(move |&b| a * b)).collect();
        }
        Spectrum { values }
    }

    /// Column `j` of `Q`, built as the Kronecker product of per-axis columns.
    pub fn column(&self, j: usize) -> Result<Vec<f64>> {
        let size = self.size();
        if j >= size {
            return Err(Error::IndexOutOfRange { index: j, size });
        }
        let multi = unflatten(&self.shape(), j);
        let mut col = vec![1.0];
        for (q, &jl) in self.q.factors.iter().zip(&multi) {
            let c = q.column(jl);
            col = col.iter().flat_map(|&a| c.iter().map(move |&b| a * b)).collect();
        }
        Ok(col)
    }

    /// Precomputes `(T + σ²I)⁻¹` for repeated shifted solves.
    pub fn shifted(&self, sigma2: f64) -> Result<ShiftedInverse<'_>> {
        let inv_diag = self.spectrum().shifted_inverse(sigma2)?;
        Ok(ShiftedInverse { eigen: self, sigma2, inv_diag })
    }

    /// Solves `(K + σ²I) x = y` as `Q (T + σ²I)⁻¹ Qᵀ y`.
    pub fn solve_shifted(&self, sigma2: f64, y: &[f64]) -> Result<Vec<f64>> {
        self.shifted(sigma2)?.solve(y)
    }
}

/// Cached `Q (T + σ²I)⁻¹ Qᵀ`.
#[derive(Debug, Clone)]
pub struct ShiftedInverse<'a> {
    eigen: &'a KroneckerEigen,
    sigma2: f64,
    inv_diag: Vec<f64>,
}

impl ShiftedInverse<'_> {
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Diagonal of `(T + σ²I)⁻¹` in spectrum order.
    pub fn inverse_diagonal(&self) -> &[f64] {
        &self.inv_diag
    }

    pub fn solve(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.eigen.qt_mvm(y)?;
        for (zi, w) in z.iter_mut().zip(&self.inv_diag) {
            *zi *= w;
        }
        self.eigen.q_mvm(&z)
    }
}

/// Full-grid eigenvalues indexed by eigenvector column.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    values: Vec<f64>,
}

impl Spectrum {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Eigenvalues with tiny negative round-off set to zero.
    pub fn clamped(&self) -> Result<Vec<f64>> {
        let scale = self.values.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        self.values
            .iter()
            .map(|&v| {
                if v >= 0.0 {
                    Ok(v)
                } else if v >= -CLAMP_TOL * scale {
                    Ok(0.0)
                } else {
                    Err(Error::NotPsd(v))
                }
            })
            .collect()
    }

    /// `(λ_i + σ²)⁻¹` for every eigenvalue after clamping.
    pub fn shifted_inverse(&self, sigma2: f64) -> Result<Vec<f64>> {
        if !(sigma2 >= 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidArgument(format!("noise variance {sigma2} must be >= 0")));
        }
        self.clamped()?
            .into_iter()
            .map(|v| {
                let shifted = v + sigma2;
                if shifted > 0.0 {
                    Ok(1.0 / shifted)
                } else {
                    Err(Error::Singular { eigenvalue: v, shift: sigma2 })
                }
            })
            .collect()
    }

    fn ranked(&self, p: usize, descending: bool) -> Result<Vec<(usize, f64)>> {
        if p > self.values.len() {
            return Err(Error::RankTooLarge { p, size: self.values.len() });
        }
        let mut order: Vec<usize> = (0..self.values.len()).collect();
        let cmp = |i: &usize, j: &usize| {
            let by_value = self.values[*i].total_cmp(&self.values[*j]);
            let by_value = if descending { by_value.reverse() } else { by_value };
            by_value.then(i.cmp(j))
        };
        if p < order.len() {
            order.select_nth_unstable_by(p, cmp);
            order.truncate(p);
        }
        order.sort_unstable_by(cmp);
        Ok(order.into_iter().map(|i| (i, self.values[i])).collect())
    }

    /// The `p` largest eigenvalues, descending; ties go to the lower index.
    pub fn top(&self, p: usize) -> Result<Vec<(usize, f64)>> {
        self.ranked(p, true)
    }

    /// The `p` smallest eigenvalues, ascending; ties go to the lower index.
    pub fn bottom(&self, p: usize) -> Result<Vec<(usize, f64)>> {
        self.ranked(p, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = random_matrix(rng, n, n);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
    }

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn mvm_scaled_identity() {
        let op = KroneckerOperator::new(vec![diag(&[1.0, 1.0]), diag(&[2.0, 2.0])]).unwrap();
        assert_eq!(op.mvm(&[1.0; 4]).unwrap(), vec![2.0; 4]);
        assert!(op.mvm(&[1.0; 3]).is_err());
    }

    #[test]
    fn mvm_first_basis_vector_is_first_column() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let op = KroneckerOperator::new(vec![a.clone(), b.clone()]).unwrap();
        let got = op.mvm(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        // Dense oracle by explicit entry-wise expansion.
        let dense = |i: usize, j: usize| a[(i / 2, j / 2)] * b[(i % 2, j % 2)];
        let expect: Vec<f64> = (0..4).map(|i| dense(i, 0)).collect();
        assert_eq!(got, expect);
        assert_eq!(got, vec![0.0, 1.0, 0.0, 2.0]);
    }

    #[test]
    fn mvm_matches_dense_three_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let factors: Vec<_> = [3, 4, 5].iter().map(|&n| random_spd(&mut rng, n)).collect();
        let op = KroneckerOperator::new(factors).unwrap();
        let x = random_vec(&mut rng, 60);
        let dense = op.to_dense() * DVector::from_column_slice(&x);
        assert!(max_diff(&op.mvm(&x).unwrap(), dense.as_slice()) <= 1e-10);
    }

    #[test]
    fn rect_mvm_and_transpose_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let shapes = [(3, 2), (4, 5), (2, 3)];
        let factors: Vec<_> = shapes.iter().map(|&(r, c)| random_matrix(&mut rng, r, c)).collect();
        let op = RectKroneckerOperator::new(factors).unwrap();
        assert_eq!((op.nrows(), op.ncols()), (24, 30));
        let dense = op.to_dense();
        let x = random_vec(&mut rng, 30);
        let y = random_vec(&mut rng, 24);
        let gx = &dense * DVector::from_column_slice(&x);
        let gty = dense.transpose() * DVector::from_column_slice(&y);
        assert!(max_diff(&op.mvm(&x).unwrap(), gx.as_slice()) <= 1e-12);
        assert!(max_diff(&op.mvm_transpose(&y).unwrap(), gty.as_slice()) <= 1e-12);
    }

    #[test]
    fn rejects_asymmetric_factor() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(KroneckerOperator::new(vec![a]), Err(Error::NotSymmetric(0))));
        assert!(KroneckerOperator::new(vec![DMatrix::zeros(2, 3)]).is_err());
    }

    #[test]
    fn eigen_of_diagonal_factors() {
        let op = KroneckerOperator::new(vec![diag(&[3.0, 1.0])]).unwrap();
        let eig = op.eigen().unwrap();
        let mut vals = eig.spectrum().values().to_vec();
        vals.sort_by(f64::total_cmp);
        assert_eq!(vals, vec![1.0, 3.0]);

        let op = KroneckerOperator::new(vec![diag(&[1.0, 2.0]), diag(&[3.0, 4.0])]).unwrap();
        let spec = op.eigen().unwrap().spectrum();
        let mut vals = spec.values().to_vec();
        vals.sort_by(f64::total_cmp);
        assert_eq!(vals, vec![3.0, 4.0, 6.0, 8.0]);
        let top: Vec<f64> = spec.top(2).unwrap().into_iter().map(|(_, v)| v).collect();
        let bottom: Vec<f64> = spec.bottom(2).unwrap().into_iter().map(|(_, v)| v).collect();
        assert_eq!(top, vec![8.0, 6.0]);
        assert_eq!(bottom, vec![3.0, 4.0]);
        assert!(matches!(spec.top(5), Err(Error::RankTooLarge { .. })));
    }

    #[test]
    fn eigen_reconstructs_random_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let k = random_spd(&mut rng, 5);
        let eig = KroneckerOperator::new(vec![k.clone()]).unwrap().eigen().unwrap();
        let q = &eig.q_factors()[0];
        let recon = q * diag(eig.factor_eigenvalues()[0].as_slice()) * q.transpose();
        assert!((recon - &k).amax() <= 1e-10);
        assert!((q.transpose() * q - DMatrix::identity(5, 5)).amax() <= 1e-10);
    }

    #[test]
    fn spectrum_matches_dense_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let op = KroneckerOperator::new(vec![random_spd(&mut rng, 3), random_spd(&mut rng, 4)]).unwrap();
        let spec = op.eigen().unwrap().spectrum();
        let all: Vec<f64> = spec.top(12).unwrap().into_iter().map(|(_, v)| v).collect();
        let mut oracle: Vec<f64> = op.to_dense().symmetric_eigen().eigenvalues.iter().copied().collect();
        oracle.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in all.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
        }
    }

    #[test]
    fn ranking_breaks_ties_by_index() {
        let op = KroneckerOperator::new(vec![diag(&[1.0, 1.0]), diag(&[2.0, 2.0])]).unwrap();
        let spec = op.eigen().unwrap().spectrum();
        let idx: Vec<usize> = spec.top(4).unwrap().into_iter().map(|(i, _)| i).collect();
        assert_eq!(idx, vec![0, 1, 2, 3]);
        let idx: Vec<usize> = spec.bottom(2).unwrap().into_iter().map(|(i, _)| i).collect();
        assert_eq!(idx, vec![0, 1]);
    }

    #[test]
    fn solve_shifted_examples() {
        let op = KroneckerOperator::new(vec![diag(&[1.0, 1.0])]).unwrap();
        let x = op.eigen().unwrap().solve_shifted(1.0, &[4.0, 4.0]).unwrap();
        assert!(max_diff(&x, &[2.0, 2.0]) < 1e-15);

        let op = KroneckerOperator::new(vec![diag(&[1.0, 3.0]), diag(&[1.0])]).unwrap();
        let x = op.eigen().unwrap().solve_shifted(0.0, &[1.0, 3.0]).unwrap();
        assert!(max_diff(&x, &[1.0, 1.0]) < 1e-15);
    }

    #[test]
    fn solve_shifted_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let op = KroneckerOperator::new(vec![random_spd(&mut rng, 4), random_spd(&mut rng, 3)]).unwrap();
        let y = random_vec(&mut rng, 12);
        let x = op.eigen().unwrap().solve_shifted(0.1, &y).unwrap();
        let dense = op.to_dense() + DMatrix::identity(12, 12) * 0.1;
        let oracle = dense.lu().solve(&DVector::from_column_slice(&y)).unwrap();
        let err = max_diff(&x, oracle.as_slice()) / oracle.amax();
        assert!(err <= 1e-10, "rel err {err}");
    }

    #[test]
    fn singular_and_indefinite_spectra() {
        let op = KroneckerOperator::new(vec![diag(&[1.0, 0.0])]).unwrap();
        assert!(matches!(op.eigen().unwrap().solve_shifted(0.0, &[1.0, 1.0]), Err(Error::Singular { .. })));
        let op = KroneckerOperator::new(vec![diag(&[1.0, -1e-14])]).unwrap();
        assert!(op.eigen().unwrap().solve_shifted(0.5, &[1.0, 1.0]).is_ok());
        let op = KroneckerOperator::new(vec![diag(&[1.0, -0.5])]).unwrap();
        assert!(matches!(op.eigen().unwrap().solve_shifted(1.0, &[1.0, 1.0]), Err(Error::NotPsd(_))));
    }

    #[test]
    fn eigen_columns() {
        let op = KroneckerOperator::new(vec![DMatrix::identity(2, 2), DMatrix::identity(3, 3)]).unwrap();
        let eig = op.eigen().unwrap();
        assert_eq!(eig.column(0).unwrap(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(eig.column(6).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let k = random_spd(&mut rng, 4);
        let eig = KroneckerOperator::new(vec![k]).unwrap().eigen().unwrap();
        assert_eq!(eig.column(2).unwrap(), eig.q_factors()[0].column(2).iter().copied().collect::<Vec<_>>());

        let op =
            KroneckerOperator::new(vec![random_spd(&mut rng, 3), random_spd(&mut rng, 2), random_spd(&mut rng, 4)])
                .unwrap();
        let eig = op.eigen().unwrap();
        for j in [0, 5, 13, 23] {
            let mut e = vec![0.0; 24];
            e[j] = 1.0;
            assert!(max_diff(&eig.column(j).unwrap(), &eig.q_mvm(&e).unwrap()) <= 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn mvm_equals_dense_expansion(
            shape in proptest::collection::vec(1usize..7, 1..5),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let factors: Vec<_> = shape.iter().map(|&n| random_spd(&mut rng, n)).collect();
            let op = KroneckerOperator::new(factors).unwrap();
            let x = random_vec(&mut rng, op.size());
            let dense = op.to_dense() * DVector::from_column_slice(&x);
            prop_assert!(max_diff(&op.mvm(&x).unwrap(), dense.as_slice()) <= 1e-9);
        }

        #[test]
        fn shifted_solve_inverts(
            shape in proptest::collection::vec(1usize..6, 1..4),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let factors: Vec<_> = shape.iter().map(|&n| random_spd(&mut rng, n)).collect();
            let op = KroneckerOperator::new(factors).unwrap();
            let x = random_vec(&mut rng, op.size());
            let mut b = op.mvm(&x).unwrap();
            for (bi, xi) in b.iter_mut().zip(&x) {
                *bi += 0.3 * xi;
            }
            let got = op.eigen().unwrap().solve_shifted(0.3, &b).unwrap();
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let err = got.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            prop_assert!(err <= 1e-8 * norm);
        }

        #[test]
        fn top_and_bottom_partition_spectrum(
            shape in proptest::collection::vec(1usize..5, 1..4),
            p_frac in 0.0f64..=1.0,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let factors: Vec<_> = shape.iter().map(|&n| random_spd(&mut rng, n)).collect();
            let spec = KroneckerOperator::new(factors).unwrap().eigen().unwrap().spectrum();
            let m = spec.len();
            let p = ((m as f64) * p_frac) as usize;
            let mut vals: Vec<f64> = spec.top(p).unwrap().into_iter().map(|(_, v)| v).collect();
            vals.extend(spec.bottom(m - p).unwrap().into_iter().map(|(_, v)| v));
            vals.sort_by(f64::total_cmp);
            let mut all = spec.values().to_vec();
            all.sort_by(f64::total_cmp);
            prop_assert_eq!(vals, all);
        }
    }
}
