//! Conjugate gradients and the three gap formulations.
//!
//! * **PG** (penalize gaps): full `M × M` system with a large penalty on the gap
//!   rows, `(K + γR + σ²I) α = y` where `R` is the indicator of `Z`.
//! * **IG** (ignore gaps): the `N × N` system `W (K + σ²I) Wᵀ α_X = y_X`.
//! * **FG** (fill gaps): solve an `L × L` system for `y_Z` such that the
//!   full-grid weights vanish on `Z`, then one eigen-solve gives `α`.

mod cg;
mod operators;
mod precon;
mod system;

use nalgebra::{DMatrix, DVectorView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cg::{cg_solve, CgConfig, CgSolution, SolveReport};
pub use operators::{fg_recover_alpha, fg_rhs, FgOperator, IgOperator, PgOperator};
pub use precon::{
    fg_preconditioner, fg_shift_bound, ig_preconditioner, pg_preconditioner, DiagonalOperator, LowRankPrecon,
    PreconMode,
};
pub use system::{GapSolution, GapSystem, SolverConfig, DEFAULT_GAMMA_FACTOR};

/// Square linear operator on `R^n`.
pub trait LinearOperator {
    fn size(&self) -> usize;

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.size() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected: self.size(), got: x.len() })
        }
    }
}

impl LinearOperator for DMatrix<f64> {
    fn size(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        Ok((self * DVectorView::from_slice(x, x.len())).data.into())
    }
}

/// Gap formulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pg,
    Ig,
    Fg,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Pg, Method::Ig, Method::Fg];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pg => "pg",
            Method::Ig => "ig",
            Method::Fg => "fg",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pg" => Ok(Method::Pg),
            "ig" => Ok(Method::Ig),
            "fg" => Ok(Method::Fg),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?} (expected pg, ig or fg)"))),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
pub(crate) mod test_util {
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::LinearOperator;
    use crate::grid::{GridSpec, IndexSets};
    use crate::kernels::ProductKernel;
    use crate::kron::KroneckerOperator;

    pub fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    pub fn random_gaps(rng: &mut ChaCha8Rng, m: usize, l: usize) -> IndexSets {
        let gaps: Vec<usize> = rand::seq::index::sample(rng, m, l).into_vec();
        IndexSets::from_gaps(m, &gaps).unwrap()
    }

    pub fn se_problem(shape: &[usize], theta: f64) -> (GridSpec, KroneckerOperator) {
        let grid = GridSpec::uniform(shape, 0.0, 1.0).unwrap();
        let k = ProductKernel::isotropic_se(shape.len(), theta).grid_covariance(&grid).unwrap();
        (grid, k)
    }

    pub fn submatrix(a: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
    }

    pub fn to_dense(op: &dyn LinearOperator) -> DMatrix<f64> {
        let n = op.size();
        let mut out = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            out.set_column(j, &nalgebra::DVector::from_vec(op.apply(&e).unwrap()));
        }
        out
    }

    pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        if den == 0.0 {
            num
        } else {
            num / den
        }
    }

    /// Checks `xᵀ A y = yᵀ A x` on random probes.
    pub fn assert_symmetric(op: &dyn LinearOperator, seed: u64) {
        let mut r = rng(seed);
        for _ in 0..20 {
            let x = random_vec(&mut r, op.size());
            let y = random_vec(&mut r, op.size());
            let xay = super::dot(&x, &op.apply(&y).unwrap());
            let yax = super::dot(&y, &op.apply(&x).unwrap());
            assert!((xay - yax).abs() <= 1e-9 * xay.abs().max(yax.abs()).max(1e-300), "{xay} vs {yax}");
        }
    }
}
