use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{dot, norm, LinearOperator};
use crate::error::{Error, Result};

/// Iterations between restarts from the true residual.
const RESTART_EVERY: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgConfig {
    /// Threshold on `‖b − Ax‖₂ / ‖b‖₂`.
    pub tolerance: f64,
    /// Iteration cap; `None` means `10 n`.
    pub max_iters: Option<usize>,
    pub record_history: bool,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self { tolerance: 1e-6, max_iters: None, record_history: false }
    }
}

impl CgConfig {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self { tolerance, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tolerance > 0.0 && self.tolerance.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("CG tolerance must be positive, got {}", self.tolerance)))
        }
    }

    fn cap(&self, n: usize) -> usize {
        self.max_iters.unwrap_or(10 * n.max(1))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub rel_residual: f64,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub history: Option<Vec<f64>>,
    pub solve_seconds: f64,
    pub setup_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub report: SolveReport,
}

/// Preconditioned conjugate gradients for SPD `a`.
///
/// `precon` is applied as an approximate inverse, `z = M⁻¹ r`. On
/// non-convergence the error carries the iterate with the smallest residual.
pub fn cg_solve(
    a: &dyn LinearOperator,
    b: &[f64],
    precon: Option<&dyn LinearOperator>,
    cfg: &CgConfig,
) -> Result<CgSolution> {
    cfg.validate()?;
    a.check_len(b)?;
    if let Some(m) = precon {
        if m.size() != a.size() {
            return Err(Error::DimensionMismatch { expected: a.size(), got: m.size() });
        }
    }
    let start = Instant::now();
    let n = a.size();
    let mut history = cfg.record_history.then(Vec::new);
    let b_norm = norm(b);
    if !b_norm.is_finite() {
        return Err(Error::NonFinite("right-hand side".into()));
    }
    if b_norm == 0.0 {
        let report = SolveReport {
            converged: true,
            history,
            solve_seconds: start.elapsed().as_secs_f64(),
            ..SolveReport::default()
        };
        return Ok(CgSolution { x: vec![0.0; n], report });
    }

    let precondition = |r: &[f64]| -> Result<Vec<f64>> {
        match precon {
            Some(m) => m.apply(r),
            None => Ok(r.to_vec()),
        }
    };
    let true_residual = |x: &[f64]| -> Result<Vec<f64>> {
        let ax = a.apply(x)?;
        Ok(b.iter().zip(&ax).map(|(bi, axi)| bi - axi).collect())
    };

    let cap = cfg.cap(n);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = precondition(&r)?;
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut best = (1.0, x.clone());
    let mut iterations = 0;

    while iterations < cap {
        iterations += 1;
        let q = a.apply(&p)?;
        let pq = dot(&p, &q);
        if !(pq > 0.0) || !pq.is_finite() || !rz.is_finite() {
            return Err(Error::Breakdown(iterations));
        }
        let step = rz / pq;
        for ((xi, ri), (pi, qi)) in x.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&q)) {
            *xi += step * pi;
            *ri -= step * qi;
        }
        let mut rel = norm(&r) / b_norm;
        if !rel.is_finite() {
            return Err(Error::Breakdown(iterations));
        }

        let mut restart = iterations % RESTART_EVERY == 0;
        if rel <= cfg.tolerance {
            r = true_residual(&x)?;
            rel = norm(&r) / b_norm;
            if rel <= cfg.tolerance {
                if let Some(h) = history.as_mut() {
                    h.push(rel);
                }
                let report = SolveReport {
                    iterations,
                    rel_residual: rel,
                    converged: true,
                    history,
                    solve_seconds: start.elapsed().as_secs_f64(),
                    setup_seconds: 0.0,
                };
                return Ok(CgSolution { x, report });
            }
            restart = true;
        } else if restart {
            r = true_residual(&x)?;
            rel = norm(&r) / b_norm;
        }
        if let Some(h) = history.as_mut() {
            h.push(rel);
        }
        if rel < best.0 {
            best.0 = rel;
            best.1.copy_from_slice(&x);
        }

        z = precondition(&r)?;
        let rz_next = dot(&r, &z);
        if restart {
            p.copy_from_slice(&z);
        } else {
            let beta = rz_next / rz;
            for (pi, zi) in p.iter_mut().zip(&z) {
                *pi = zi + beta * *pi;
            }
        }
        rz = rz_next;
    }

    let best_rel = norm(&true_residual(&best.1)?) / b_norm;
    let report = SolveReport {
        iterations,
        rel_residual: best_rel,
        converged: false,
        history,
        solve_seconds: start.elapsed().as_secs_f64(),
        setup_seconds: 0.0,
    };
    Err(Error::NotConverged(Box::new(CgSolution { x: best.1, report })))
}

#[cfg(test)]
mod tests {
    use nalgebra::{DMatrix, DVector};

    use super::*;
    use crate::solvers::test_util::*;

    #[test]
    fn identity_converges_in_one_iteration() {
        let a = DMatrix::<f64>::identity(5, 5);
        let b = vec![1.0, -2.0, 3.0, 0.5, 4.0];
        let sol = cg_solve(&a, &b, None, &CgConfig::default()).unwrap();
        assert_eq!(sol.report.iterations, 1);
        assert_eq!(sol.x, b);
    }

    #[test]
    fn exact_preconditioner_one_iteration() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]));
        let inv = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5, 1.0 / 3.0, 0.25]));
        let sol = cg_solve(&a, &[1.0; 4], Some(&inv), &CgConfig::default()).unwrap();
        assert_eq!(sol.report.iterations, 1);
        assert!(rel_err(&sol.x, &[1.0, 0.5, 1.0 / 3.0, 0.25]) < 1e-15);
    }

    #[test]
    fn zero_rhs() {
        let a = DMatrix::<f64>::identity(3, 3) * 2.0;
        let sol = cg_solve(&a, &[0.0; 3], None, &CgConfig::default()).unwrap();
        assert_eq!(sol.x, vec![0.0; 3]);
        assert_eq!(sol.report.iterations, 0);
    }

    #[test]
    fn random_spd_matches_dense_solve() {
        use rand::Rng;
        let mut r = rng(11);
        let g = DMatrix::from_fn(50, 50, |_, _| r.random_range(-1.0..1.0));
        let a = &g * g.transpose() + DMatrix::identity(50, 50);
        let b = random_vec(&mut r, 50);
        let oracle = a.clone().lu().solve(&DVector::from_vec(b.clone())).unwrap();
        let cfg = CgConfig { record_history: true, ..CgConfig::default() };
        let sol = cg_solve(&a, &b, None, &cfg).unwrap();
        assert!(rel_err(&sol.x, oracle.as_slice()) <= 1e-5);
        assert!(sol.report.rel_residual <= 1e-6);
        assert_eq!(sol.report.history.as_ref().unwrap().len(), sol.report.iterations);
    }

    #[test]
    fn non_convergence_returns_best_iterate() {
        let a = DMatrix::from_diagonal(&DVector::from_fn(30, |i, _| 1.0 + i as f64 * 10.0));
        let b = vec![1.0; 30];
        let cfg = CgConfig { tolerance: 1e-12, max_iters: Some(3), record_history: false };
        match cg_solve(&a, &b, None, &cfg) {
            Err(Error::NotConverged(sol)) => {
                assert_eq!(sol.report.iterations, 3);
                assert!(!sol.report.converged);
                assert!(sol.report.rel_residual < 1.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn indefinite_breaks_down() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(cg_solve(&a, &[1.0, 1.0], None, &CgConfig::default()), Err(Error::Breakdown(_))));
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = DMatrix::<f64>::identity(2, 2);
        assert!(cg_solve(&a, &[1.0], None, &CgConfig::default()).is_err());
        assert!(cg_solve(&a, &[1.0, 1.0], None, &CgConfig::with_tolerance(0.0)).is_err());
        assert!(cg_solve(&a, &[f64::NAN, 1.0], None, &CgConfig::default()).is_err());
    }
}
