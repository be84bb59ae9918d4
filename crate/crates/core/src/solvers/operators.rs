use super::LinearOperator;
use crate::error::{Error, Result};
use crate::grid::{scatter_unchecked, select_unchecked, IndexSets};
use crate::kron::{KroneckerOperator, ShiftedInverse};

fn check_index_size(idx: &IndexSets, m: usize) -> Result<()> {
    if idx.size() == m {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected: m, got: idx.size() })
    }
}

/// `K + γR + σ²I` on the full grid, with `R` the indicator of the gap set.
///
/// Gap rows become `(K + γ + σ²)`-dominated, so with `y_Z` set to zero the
/// gap weights are driven to zero as `γ → ∞` and `α_X` solves the observed
/// system.
#[derive(Debug, Clone)]
pub struct PgOperator<'a> {
    k: &'a KroneckerOperator,
    gaps: &'a [usize],
    gamma: f64,
    sigma2: f64,
}

impl<'a> PgOperator<'a> {
    pub fn new(k: &'a KroneckerOperator, idx: &'a IndexSets, gamma: f64, sigma2: f64) -> Result<Self> {
        check_index_size(idx, k.size())?;
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("penalty gamma must be positive, got {gamma}")));
        }
        Ok(Self { k, gaps: idx.gaps(), gamma, sigma2 })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl LinearOperator for PgOperator<'_> {
    fn size(&self) -> usize {
        self.k.size()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.k.mvm(x)?;
        for (o, xi) in out.iter_mut().zip(x) {
            *o += self.sigma2 * xi;
        }
        for &i in self.gaps {
            out[i] += self.gamma * x[i];
        }
        Ok(out)
    }
}

/// `W (K + σ²I) Wᵀ` on the observed set.
#[derive(Debug, Clone)]
pub struct IgOperator<'a> {
    k: &'a KroneckerOperator,
    observed: &'a [usize],
    sigma2: f64,
}

impl<'a> IgOperator<'a> {
    pub fn new(k: &'a KroneckerOperator, idx: &'a IndexSets, sigma2: f64) -> Result<Self> {
        check_index_size(idx, k.size())?;
        Ok(Self { k, observed: idx.observed(), sigma2 })
    }
}

impl LinearOperator for IgOperator<'_> {
    fn size(&self) -> usize {
        self.observed.len()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v)?;
        let full = self.k.mvm(&scatter_unchecked(v, self.observed, self.k.size()))?;
        let mut out = select_unchecked(&full, self.observed);
        for (o, vi) in out.iter_mut().zip(v) {
            *o += self.sigma2 * vi;
        }
        Ok(out)
    }
}

/// `V (K + σ²I)⁻¹ Vᵀ` on the gap set, applied through the eigendecomposition.
#[derive(Debug, Clone)]
pub struct FgOperator<'a> {
    inv: &'a ShiftedInverse<'a>,
    gaps: &'a [usize],
    m: usize,
}

impl<'a> FgOperator<'a> {
    pub fn new(inv: &'a ShiftedInverse<'a>, idx: &'a IndexSets) -> Result<Self> {
        let m = inv.inverse_diagonal().len();
        check_index_size(idx, m)?;
        if idx.n_gaps() == 0 {
            return Err(Error::InvalidArgument("fill-gaps system is empty when there are no gaps".into()));
        }
        Ok(Self { inv, gaps: idx.gaps(), m })
    }
}

impl LinearOperator for FgOperator<'_> {
    fn size(&self) -> usize {
        self.gaps.len()
    }

    fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u)?;
        let full = self.inv.solve(&scatter_unchecked(u, self.gaps, self.m))?;
        Ok(select_unchecked(&full, self.gaps))
    }
}

/// Right-hand side `-V (K + σ²I)⁻¹ Wᵀ y_X` of the fill-gaps system.
pub fn fg_rhs(inv: &ShiftedInverse<'_>, idx: &IndexSets, y_x: &[f64]) -> Result<Vec<f64>> {
    let m = inv.inverse_diagonal().len();
    check_index_size(idx, m)?;
    if y_x.len() != idx.n_observed() {
        return Err(Error::DimensionMismatch { expected: idx.n_observed(), got: y_x.len() });
    }
    let full = inv.solve(&scatter_unchecked(y_x, idx.observed(), m))?;
    Ok(select_unchecked(&full, idx.gaps()).into_iter().map(|v| -v).collect())
}

/// `α = Q (T + σ²I)⁻¹ Qᵀ y` on the assembled responses `y = Wᵀy_X + Vᵀy_Z`.
pub fn fg_recover_alpha(inv: &ShiftedInverse<'_>, idx: &IndexSets, y_x: &[f64], y_z: &[f64]) -> Result<Vec<f64>> {
    let m = inv.inverse_diagonal().len();
    check_index_size(idx, m)?;
    if y_x.len() != idx.n_observed() {
        return Err(Error::DimensionMismatch { expected: idx.n_observed(), got: y_x.len() });
    }
    if y_z.len() != idx.n_gaps() {
        return Err(Error::DimensionMismatch { expected: idx.n_gaps(), got: y_z.len() });
    }
    let mut y = scatter_unchecked(y_x, idx.observed(), m);
    for (&i, &v) in idx.gaps().iter().zip(y_z) {
        y[i] = v;
    }
    inv.solve(&y)
}

#[cfg(test)]
mod tests {
    use nalgebra::{DMatrix, DVector};

    use super::*;
    use crate::grid::select;
    use crate::solvers::test_util::*;
    use crate::solvers::{cg_solve, CgConfig};

    fn identity_op(m: usize) -> KroneckerOperator {
        KroneckerOperator::new(vec![DMatrix::identity(m, m)]).unwrap()
    }

    #[test]
    fn pg_small_examples() {
        let k = identity_op(2);
        let idx = IndexSets::from_gaps(2, &[1]).unwrap();
        let op = PgOperator::new(&k, &idx, 2.0, 1.0).unwrap();
        assert_eq!(op.apply(&[1.0, 1.0]).unwrap(), vec![2.0, 4.0]);
        assert!(PgOperator::new(&k, &idx, 0.0, 1.0).is_err());

        let (_, k) = se_problem(&[4, 4, 4], 0.5);
        let mut e0 = vec![0.0; 64];
        e0[0] = 1.0;
        let full = IndexSets::full(64);
        let op = PgOperator::new(&k, &full, 3.0, 0.5).unwrap();
        let dense = k.to_dense() + DMatrix::identity(64, 64) * 0.5;
        assert!(rel_err(&op.apply(&e0).unwrap(), dense.column(0).as_slice()) <= 1e-14);
        let all_gaps = IndexSets::from_gaps(64, &(0..64).collect::<Vec<_>>()).unwrap();
        let op = PgOperator::new(&k, &all_gaps, 3.0, 0.5).unwrap();
        let dense = k.to_dense() + DMatrix::identity(64, 64) * 3.5;
        assert!(rel_err(&op.apply(&e0).unwrap(), dense.column(0).as_slice()) <= 1e-14);
    }

    #[test]
    fn pg_large_gamma_recovers_observed_system() {
        let mut r = rng(21);
        let (_, k) = se_problem(&[8, 8], 0.4);
        let idx = random_gaps(&mut r, 64, 32);
        let sigma2 = 0.1;
        let y = random_vec(&mut r, 64);
        let mut rhs = y.clone();
        for &i in idx.gaps() {
            rhs[i] = 0.0;
        }
        let op = PgOperator::new(&k, &idx, 1e8, sigma2).unwrap();
        let sol = cg_solve(&op, &rhs, None, &CgConfig::default()).unwrap();
        let alpha_x = select(&sol.x, idx.observed()).unwrap();

        let kd = k.to_dense();
        let obs = idx.observed();
        let kxx = submatrix(&kd, obs, obs) + DMatrix::identity(32, 32) * sigma2;
        let oracle = kxx.lu().solve(&DVector::from_vec(select(&y, obs).unwrap())).unwrap();
        assert!(rel_err(&alpha_x, oracle.as_slice()) <= 1e-4);
    }

    #[test]
    fn ig_examples() {
        let (_, k) = se_problem(&[4, 4, 4], 0.7);
        let full = IndexSets::full(64);
        let op = IgOperator::new(&k, &full, 0.2).unwrap();
        let dense = k.to_dense() + DMatrix::identity(64, 64) * 0.2;
        assert!((to_dense(&op) - dense).amax() <= 1e-14);

        let idx = IndexSets::from_gaps(64, &(1..64).collect::<Vec<_>>()).unwrap();
        let op = IgOperator::new(&k, &idx, 0.2).unwrap();
        let got = op.apply(&[2.0]).unwrap();
        assert!((got[0] - 2.0 * 1.2).abs() <= 1e-14);
    }

    #[test]
    fn ig_solve_matches_dense() {
        let mut r = rng(22);
        let (_, k) = se_problem(&[15, 15], 0.3);
        let idx = random_gaps(&mut r, 225, 90);
        let op = IgOperator::new(&k, &idx, 0.1).unwrap();
        let y_x = random_vec(&mut r, idx.n_observed());
        let sol = cg_solve(&op, &y_x, None, &CgConfig::default()).unwrap();
        let obs = idx.observed();
        let kxx = submatrix(&k.to_dense(), obs, obs) + DMatrix::identity(obs.len(), obs.len()) * 0.1;
        let oracle = kxx.lu().solve(&DVector::from_vec(y_x)).unwrap();
        assert!(rel_err(&sol.x, oracle.as_slice()) <= 1e-5);
    }

    #[test]
    fn operators_are_symmetric() {
        let mut r = rng(23);
        let (_, k) = se_problem(&[6, 5], 0.5);
        let idx = random_gaps(&mut r, 30, 12);
        assert_symmetric(&PgOperator::new(&k, &idx, 1e3, 0.1).unwrap(), 1);
        assert_symmetric(&IgOperator::new(&k, &idx, 0.1).unwrap(), 2);
        let eig = k.eigen().unwrap();
        let inv = eig.shifted(0.1).unwrap();
        assert_symmetric(&FgOperator::new(&inv, &idx).unwrap(), 3);
    }

    #[test]
    fn operators_are_linear() {
        let mut r = rng(24);
        let (_, k) = se_problem(&[5, 5], 0.5);
        let idx = random_gaps(&mut r, 25, 10);
        let eig = k.eigen().unwrap();
        let inv = eig.shifted(0.1).unwrap();
        let pg = PgOperator::new(&k, &idx, 10.0, 0.1).unwrap();
        let ig = IgOperator::new(&k, &idx, 0.1).unwrap();
        let fg = FgOperator::new(&inv, &idx).unwrap();
        for op in [&pg as &dyn LinearOperator, &ig, &fg] {
            let x = random_vec(&mut r, op.size());
            let y = random_vec(&mut r, op.size());
            let (a, b) = (0.7, -1.3);
            let combo: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| a * xi + b * yi).collect();
            let lhs = op.apply(&combo).unwrap();
            let ax = op.apply(&x).unwrap();
            let ay = op.apply(&y).unwrap();
            let rhs: Vec<f64> = ax.iter().zip(&ay).map(|(u, v)| a * u + b * v).collect();
            for (l, rr) in lhs.iter().zip(&rhs) {
                assert!((l - rr).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn fg_noise_free_partition_relation() {
        // With σ² = 0 the filled values satisfy [K⁻¹]_ZZ y_Z = -[K⁻¹]_ZX y_X.
        let mut r = rng(25);
        let (_, k) = se_problem(&[4, 4], 0.6);
        let idx = random_gaps(&mut r, 16, 5);
        let eig = k.eigen().unwrap();
        let inv = eig.shifted(0.0).unwrap();
        let op = FgOperator::new(&inv, &idx).unwrap();
        let y_x = random_vec(&mut r, 11);
        let rhs = fg_rhs(&inv, &idx, &y_x).unwrap();
        let y_z = to_dense(&op).lu().solve(&DVector::from_vec(rhs)).unwrap();

        let kinv = k.to_dense().try_inverse().unwrap();
        let (obs, gaps) = (idx.observed(), idx.gaps());
        let lhs = submatrix(&kinv, gaps, gaps) * &y_z;
        let rhs = -(submatrix(&kinv, gaps, obs) * DVector::from_vec(y_x));
        assert!(rel_err(lhs.as_slice(), rhs.as_slice()) <= 1e-6);
    }

    #[test]
    fn fg_fills_posterior_mean_and_zeroes_gap_weights() {
        let mut r = rng(26);
        let (_, k) = se_problem(&[8, 8], 0.4);
        let idx = random_gaps(&mut r, 64, 19);
        let sigma2 = 0.05;
        let eig = k.eigen().unwrap();
        let inv = eig.shifted(sigma2).unwrap();
        let op = FgOperator::new(&inv, &idx).unwrap();
        let y_x = random_vec(&mut r, idx.n_observed());
        let rhs = fg_rhs(&inv, &idx, &y_x).unwrap();
        let sol = cg_solve(&op, &rhs, None, &CgConfig::default()).unwrap();

        let kd = k.to_dense();
        let (obs, gaps) = (idx.observed(), idx.gaps());
        let kxx = submatrix(&kd, obs, obs) + DMatrix::identity(obs.len(), obs.len()) * sigma2;
        let a_x = kxx.lu().solve(&DVector::from_vec(y_x.clone())).unwrap();
        let expected = submatrix(&kd, gaps, obs) * &a_x;
        assert!(rel_err(&sol.x, expected.as_slice()) <= 1e-5);

        let alpha = fg_recover_alpha(&inv, &idx, &y_x, &sol.x).unwrap();
        assert!(rel_err(&select(&alpha, obs).unwrap(), a_x.as_slice()) <= 1e-5);
        let amax = alpha.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let zmax = gaps.iter().fold(0.0f64, |m, &i| m.max(alpha[i].abs()));
        assert!(zmax <= 1e-5 * amax, "{zmax} vs {amax}");
    }

    #[test]
    fn fg_trivial_cases() {
        let k = identity_op(2);
        let eig = k.eigen().unwrap();
        let inv = eig.shifted(1.0).unwrap();
        let idx = IndexSets::from_gaps(2, &[1]).unwrap();
        let op = FgOperator::new(&inv, &idx).unwrap();
        assert_eq!(op.apply(&[1.0]).unwrap(), vec![0.5]);
        assert_eq!(fg_rhs(&inv, &idx, &[3.0]).unwrap(), vec![0.0]);

        let full = IndexSets::full(2);
        assert!(FgOperator::new(&inv, &full).is_err());
        assert_eq!(fg_recover_alpha(&inv, &full, &[4.0, 2.0], &[]).unwrap(), vec![2.0, 1.0]);

        let (_, k) = se_problem(&[5, 5], 0.5);
        let eig = k.eigen().unwrap();
        let inv = eig.shifted(0.1).unwrap();
        let idx = IndexSets::from_gaps(25, &[3, 7, 11]).unwrap();
        let rhs = fg_rhs(&inv, &idx, &[0.0; 22]).unwrap();
        assert!(rhs.iter().all(|&v| v == 0.0));
    }
}
