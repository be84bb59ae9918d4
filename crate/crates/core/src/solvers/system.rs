use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::precon::{
    fg_preconditioner, ig_preconditioner, pg_preconditioner, DiagonalOperator, LowRankPrecon, PreconMode,
};
use super::{
    cg_solve, fg_recover_alpha, fg_rhs, CgConfig, FgOperator, IgOperator, LinearOperator, Method, PgOperator,
    SolveReport,
};
use crate::error::{Error, Result};
use crate::grid::{scatter_unchecked, select_unchecked, IndexSets};
use crate::kron::{KroneckerEigen, KroneckerOperator, ShiftedInverse};

/// Multiplier on `λ_max + σ²` for the default PG penalty.
pub const DEFAULT_GAMMA_FACTOR: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    /// Low-rank preconditioner rank for IG/FG; 0 disables it.
    pub rank: usize,
    /// PG penalty; `None` means `1e8 (λ_max + σ²)`.
    pub gamma: Option<f64>,
    /// FG spectral shift; `None` means mid-interval.
    pub zeta: Option<f64>,
    /// Use the diagonal preconditioner for PG.
    pub pg_diagonal: bool,
    pub precon_mode: PreconMode,
    pub cg: CgConfig,
}

impl SolverConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            rank: 0,
            gamma: None,
            zeta: None,
            pg_diagonal: false,
            precon_mode: PreconMode::Explicit,
            cg: CgConfig::default(),
        }
    }

    pub fn with_rank(mut self, rank: usize) -> Self {
        self.rank = rank;
        self
    }

    pub fn with_cg(mut self, cg: CgConfig) -> Self {
        self.cg = cg;
        self
    }

    /// Whether setup needs the eigendecomposition of `K`.
    pub fn needs_eigen(&self) -> bool {
        match self.method {
            Method::Pg => self.gamma.is_none(),
            Method::Ig => self.rank > 0,
            Method::Fg => true,
        }
    }
}

#[derive(Debug, Clone)]
enum Precon<'a> {
    Diagonal(DiagonalOperator),
    LowRank(LowRankPrecon<'a>),
}

impl Precon<'_> {
    fn as_operator(&self) -> &dyn LinearOperator {
        match self {
            Precon::Diagonal(d) => d,
            Precon::LowRank(l) => l,
        }
    }
}

/// Result of one solve with the observed responses as right-hand side.
#[derive(Debug, Clone)]
pub struct GapSolution {
    /// Full-grid weights as produced by the method: exact zeros on `Z` for IG,
    /// approximately zero for PG and FG.
    pub alpha: Vec<f64>,
    /// Filled gap responses (FG only).
    pub y_gaps: Option<Vec<f64>>,
    pub report: SolveReport,
}

impl GapSolution {
    pub fn alpha_observed(&self, idx: &IndexSets) -> Vec<f64> {
        select_unchecked(&self.alpha, idx.observed())
    }

    /// `α` with the gap entries set to exactly zero.
    pub fn alpha_masked(&self, idx: &IndexSets) -> Vec<f64> {
        scatter_unchecked(&self.alpha_observed(idx), idx.observed(), idx.size())
    }
}

/// Solver for `(K_XX + σ²I) α_X = b` by one of the gap formulations.
///
/// Preconditioners and the shifted inverse are built once, so repeated
/// solves (e.g. for posterior variances) reuse them.
pub struct GapSystem<'a> {
    k: &'a KroneckerOperator,
    idx: &'a IndexSets,
    sigma2: f64,
    cfg: SolverConfig,
    gamma: f64,
    inv: Option<ShiftedInverse<'a>>,
    precon: Option<Precon<'a>>,
    setup_seconds: f64,
}

impl<'a> GapSystem<'a> {
    pub fn new(
        k: &'a KroneckerOperator,
        eigen: Option<&'a KroneckerEigen>,
        idx: &'a IndexSets,
        sigma2: f64,
        cfg: SolverConfig,
    ) -> Result<Self> {
        let start = Instant::now();
        cfg.cg.validate()?;
        if idx.size() != k.size() {
            return Err(Error::DimensionMismatch { expected: k.size(), got: idx.size() });
        }
        if !(sigma2 >= 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise variance must be >= 0, got {sigma2}")));
        }
        if idx.n_observed() == 0 {
            return Err(Error::InvalidArgument("no observed cells".into()));
        }
        let eigen = match (cfg.needs_eigen(), eigen) {
            (true, None) => {
                return Err(Error::InvalidArgument(format!(
                    "{} solver configuration needs the eigendecomposition of K",
                    cfg.method
                )))
            }
            (_, e) => e,
        };
        let mut gamma = f64::NAN;
        let mut inv = None;
        let mut precon = None;
        match cfg.method {
            Method::Pg => {
                gamma = match cfg.gamma {
                    Some(g) => g,
                    None => DEFAULT_GAMMA_FACTOR * (eigen.unwrap().spectrum().max().max(0.0) + sigma2),
                };
                if !(gamma > 0.0 && gamma.is_finite()) {
                    return Err(Error::InvalidArgument(format!("penalty gamma must be positive, got {gamma}")));
                }
                if cfg.pg_diagonal {
                    precon = Some(Precon::Diagonal(pg_preconditioner(idx, gamma, sigma2)?));
                }
            }
            Method::Ig => {
                if cfg.rank > 0 {
                    precon = Some(Precon::LowRank(ig_preconditioner(
                        eigen.unwrap(),
                        idx,
                        cfg.rank,
                        sigma2,
                        cfg.precon_mode,
                    )?));
                }
            }
            Method::Fg => {
                let e = eigen.unwrap();
                inv = Some(e.shifted(sigma2)?);
                if cfg.rank > 0 && idx.n_gaps() > 0 {
                    precon =
                        Some(Precon::LowRank(fg_preconditioner(e, idx, cfg.rank, sigma2, cfg.zeta, cfg.precon_mode)?));
                }
            }
        }
        Ok(Self { k, idx, sigma2, cfg, gamma, inv, precon, setup_seconds: start.elapsed().as_secs_f64() })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    /// Resolved PG penalty (NaN for other methods).
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn setup_seconds(&self) -> f64 {
        self.setup_seconds
    }

    /// Solves `(K_XX + σ²I) α_X = b_x`.
    pub fn solve(&self, b_x: &[f64]) -> Result<GapSolution> {
        let start = Instant::now();
        let idx = self.idx;
        if b_x.len() != idx.n_observed() {
            return Err(Error::DimensionMismatch { expected: idx.n_observed(), got: b_x.len() });
        }
        let m = idx.size();
        let precon = self.precon.as_ref().map(Precon::as_operator);
        let (alpha, y_gaps, mut report) = match self.cfg.method {
            Method::Pg => {
                let op = PgOperator::new(self.k, idx, self.gamma, self.sigma2)?;
                let rhs = scatter_unchecked(b_x, idx.observed(), m);
                let sol = cg_solve(&op, &rhs, precon, &self.cfg.cg)?;
                (sol.x, None, sol.report)
            }
            Method::Ig => {
                let op = IgOperator::new(self.k, idx, self.sigma2)?;
                let sol = cg_solve(&op, b_x, precon, &self.cfg.cg)?;
                (scatter_unchecked(&sol.x, idx.observed(), m), None, sol.report)
            }
            Method::Fg => {
                let inv = self.inv.as_ref().expect("built at setup");
                if idx.n_gaps() == 0 {
                    let alpha = inv.solve(b_x)?;
                    let report = SolveReport { converged: true, ..SolveReport::default() };
                    (alpha, Some(Vec::new()), report)
                } else {
                    let op = FgOperator::new(inv, idx)?;
                    let rhs = fg_rhs(inv, idx, b_x)?;
                    let sol = cg_solve(&op, &rhs, precon, &self.cfg.cg)?;
                    let alpha = fg_recover_alpha(inv, idx, b_x, &sol.x)?;
                    (alpha, Some(sol.x), sol.report)
                }
            }
        };
        report.setup_seconds = self.setup_seconds;
        report.solve_seconds = start.elapsed().as_secs_f64();
        Ok(GapSolution { alpha, y_gaps, report })
    }
}
