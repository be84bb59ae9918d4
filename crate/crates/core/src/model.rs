//! Gaussian-process regression on a gappy grid.
//!
//! The weight vector is kept at full grid length with exact zeros on the gaps,
//! so posterior means are `gᵀα` for a single point and `Gᵀα` for a whole test
//! grid, both through Kronecker products.

use std::cell::Cell;

use argmin::core::{CostFunction, Executor, State, TerminationReason};
use argmin::solver::neldermead::NelderMead;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{scatter_unchecked, select_unchecked, GappyDataset, GridSpec};
use crate::kernels::Hyperparams;
use crate::kron::{KroneckerEigen, KroneckerOperator};
use crate::solvers::{
    ig_preconditioner, GapSystem, LinearOperator, LowRankPrecon, PreconMode, SolveReport, SolverConfig,
};

/// Raw variances in `[-VARIANCE_ROUNDOFF, 0)` are attributed to round-off.
pub const VARIANCE_ROUNDOFF: f64 = 1e-8;

/// Cost returned for hyperparameters where the likelihood cannot be evaluated.
const FAILED_COST: f64 = 1e300;

/// Weights from one solve against the observed responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    /// Length `M`, exactly zero on the gaps.
    pub alpha: Vec<f64>,
    /// Filled gap responses when solved by FG.
    pub y_gaps: Option<Vec<f64>>,
    pub solver: SolverConfig,
    pub report: SolveReport,
}

/// Pieces of the log marginal likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Likelihood {
    pub value: f64,
    /// Nyström approximation of `log|K_XX + σ²I|`.
    pub log_det: f64,
    /// `y_Xᵀ α_X`.
    pub quadratic: f64,
    pub report: SolveReport,
}

/// Posterior variance after clamping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Variance {
    pub value: f64,
    pub raw: f64,
    /// Set when `raw` was negative and the value was clamped to zero.
    pub clamped: bool,
}

impl Variance {
    fn from_raw(raw: f64) -> Self {
        if raw < 0.0 {
            Variance { value: 0.0, raw, clamped: true }
        } else {
            Variance { value: raw, raw, clamped: false }
        }
    }

    /// Negative beyond what round-off explains.
    pub fn is_suspect(&self) -> bool {
        self.raw < -VARIANCE_ROUNDOFF
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum VarianceMode {
    None,
    Exact { solver: SolverConfig },
    Nystrom { rank: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub point: Vec<f64>,
    pub mean: f64,
    pub variance: Option<Variance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub solver: SolverConfig,
    /// Mask over the log-parameter vector; `None` frees everything.
    pub free: Option<Vec<bool>>,
    /// Cost evaluations per start.
    pub max_evals: usize,
    /// Initial simplex edge in log space.
    pub initial_step: f64,
    /// Stop when the simplex's likelihood spread drops below this.
    pub tolerance: f64,
    pub starts: usize,
    pub seed: u64,
    /// Candidates with `σ²` below this are rejected.
    pub noise_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::new(crate::solvers::Method::Fg),
            free: None,
            max_evals: 200,
            initial_step: 0.5,
            tolerance: 1e-6,
            starts: 3,
            seed: 0,
            noise_floor: 1e-8,
        }
    }
}

impl TrainConfig {
    /// Frees only the named log parameters (see [`Hyperparams::param_names`]).
    pub fn free_only(mut self, hyper: &Hyperparams, names: &[&str]) -> Result<Self> {
        let all = hyper.param_names();
        for n in names {
            if !all.iter().any(|a| a == n) {
                return Err(Error::InvalidArgument(format!("unknown hyperparameter {n:?}")));
            }
        }
        self.free = Some(all.iter().map(|a| names.contains(&a.as_str())).collect());
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_log_likelihood: f64,
    pub final_log_likelihood: f64,
    pub evaluations: usize,
    pub failed_evaluations: usize,
    /// False when any start ran out of budget before converging.
    pub converged: bool,
    pub start_log_likelihoods: Vec<f64>,
    pub param_names: Vec<String>,
    pub log_params: Vec<f64>,
}

/// Nyström `log|K_XX + σ²I| ≈ Σ_{i ≤ N} log((N/M) λ_i + σ²)` over the `N`
/// largest full-grid eigenvalues.
pub fn nystrom_log_det(eigen: &KroneckerEigen, n_observed: usize, sigma2: f64) -> Result<f64> {
    let spectrum = eigen.spectrum();
    spectrum.clamped()?;
    let m = spectrum.len();
    let ratio = n_observed as f64 / m as f64;
    let mut total = 0.0;
    for (_, v) in spectrum.top(n_observed)? {
        let term = ratio * v.max(0.0) + sigma2;
        if !(term > 0.0) {
            return Err(Error::Singular { eigenvalue: v, shift: sigma2 });
        }
        total += term.ln();
    }
    Ok(total)
}

fn likelihood_parts(
    k: &KroneckerOperator,
    eigen: &KroneckerEigen,
    data: &GappyDataset,
    sigma2: f64,
    solver: SolverConfig,
) -> Result<(Likelihood, Vec<f64>, Option<Vec<f64>>)> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidArgument(format!("likelihood needs sigma2 > 0, got {sigma2}")));
    }
    let n = data.idx.n_observed();
    let log_det = nystrom_log_det(eigen, n, sigma2)?;
    let sys = GapSystem::new(k, Some(eigen), &data.idx, sigma2, solver)?;
    let sol = sys.solve(&data.y_obs)?;
    let alpha_x = sol.alpha_observed(&data.idx);
    let quadratic: f64 = data.y_obs.iter().zip(&alpha_x).map(|(y, a)| y * a).sum();
    let value = -0.5 * log_det - 0.5 * quadratic - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    let alpha = scatter_unchecked(&alpha_x, data.idx.observed(), data.idx.size());
    Ok((Likelihood { value, log_det, quadratic, report: sol.report }, alpha, sol.y_gaps))
}

#[derive(Debug, Clone)]
pub struct GpModel {
    data: GappyDataset,
    hyper: Hyperparams,
    k: KroneckerOperator,
    eigen: KroneckerEigen,
    fit: Option<Fit>,
}

impl GpModel {
    pub fn new(data: GappyDataset, hyper: Hyperparams) -> Result<Self> {
        hyper.validate()?;
        let k = hyper.kernel.grid_covariance(&data.grid)?;
        let eigen = k.eigen()?;
        Ok(Self { data, hyper, k, eigen, fit: None })
    }

    pub fn data(&self) -> &GappyDataset {
        &self.data
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn covariance(&self) -> &KroneckerOperator {
        &self.k
    }

    pub fn eigen(&self) -> &KroneckerEigen {
        &self.eigen
    }

    pub fn sigma2(&self) -> f64 {
        self.hyper.noise_variance
    }

    /// Replaces the hyperparameters and drops the fitted weights.
    pub fn set_hyper(&mut self, hyper: Hyperparams) -> Result<()> {
        *self = Self::new(self.data.clone(), hyper)?;
        Ok(())
    }

    /// Replaces the data and drops the fitted weights.
    pub fn set_data(&mut self, data: GappyDataset) -> Result<()> {
        *self = Self::new(data, self.hyper.clone())?;
        Ok(())
    }

    pub fn fitted(&self) -> Option<&Fit> {
        self.fit.as_ref()
    }

    pub fn alpha(&self) -> Result<&[f64]> {
        self.fit.as_ref().map(|f| f.alpha.as_slice()).ok_or(Error::NotFitted)
    }

    /// Solves for the weights and caches them.
    pub fn fit(&mut self, solver: SolverConfig) -> Result<&Fit> {
        let sys = self.gap_system(solver)?;
        let sol = sys.solve(&self.data.y_obs)?;
        let alpha = sol.alpha_masked(&self.data.idx);
        self.fit = Some(Fit { alpha, y_gaps: sol.y_gaps, solver, report: sol.report });
        Ok(self.fit.as_ref().unwrap())
    }

    /// Installs previously computed weights after checking shape and gap zeros.
    pub fn restore_fit(&mut self, fit: Fit) -> Result<()> {
        let m = self.data.len();
        if fit.alpha.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: fit.alpha.len() });
        }
        if self.data.idx.gaps().iter().any(|&i| fit.alpha[i] != 0.0) {
            return Err(Error::Stale("weights are nonzero on gap cells".into()));
        }
        if let Some(yz) = &fit.y_gaps {
            if yz.len() != self.data.idx.n_gaps() {
                return Err(Error::DimensionMismatch { expected: self.data.idx.n_gaps(), got: yz.len() });
            }
        }
        self.fit = Some(fit);
        Ok(())
    }

    /// `‖W(K + σ²I)Wᵀα_X − y_X‖ / ‖y_X‖` for the cached weights.
    pub fn fit_residual(&self) -> Result<f64> {
        let alpha = self.alpha()?;
        let op = crate::solvers::IgOperator::new(&self.k, &self.data.idx, self.sigma2())?;
        let ax = op.apply(&select_unchecked(alpha, self.data.idx.observed()))?;
        let num: f64 = ax.iter().zip(&self.data.y_obs).map(|(a, y)| (a - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = self.data.y_obs.iter().map(|y| y * y).sum::<f64>().sqrt();
        Ok(if den == 0.0 { num } else { num / den })
    }

    /// Solver for `(K_XX + σ²I) x = b`, reusable across right-hand sides.
    pub fn gap_system(&self, solver: SolverConfig) -> Result<GapSystem<'_>> {
        GapSystem::new(&self.k, Some(&self.eigen), &self.data.idx, self.sigma2(), solver)
    }

    pub fn nystrom_log_det(&self) -> Result<f64> {
        nystrom_log_det(&self.eigen, self.data.idx.n_observed(), self.sigma2())
    }

    /// `−½ log|K_XX + σ²I| − ½ y_Xᵀα_X − (N/2) log 2π` with the Nyström log-det.
    pub fn log_marginal_likelihood(&self, solver: SolverConfig) -> Result<Likelihood> {
        Ok(likelihood_parts(&self.k, &self.eigen, &self.data, self.sigma2(), solver)?.0)
    }

    /// `E[y*] = gᵀα`.
    pub fn predict_mean_point(&self, x_star: &[f64]) -> Result<f64> {
        let alpha = self.alpha()?;
        let g = self.hyper.kernel.cross_covariance_point(&self.data.grid, x_star)?;
        Ok(g.iter().zip(alpha).map(|(a, b)| a * b).sum())
    }

    /// Posterior means on every cell of `test_grid`, as `Gᵀα`.
    pub fn predict_mean_grid(&self, test_grid: &GridSpec) -> Result<Vec<f64>> {
        let alpha = self.alpha()?;
        let g = self.hyper.kernel.cross_covariance_grid(&self.data.grid, test_grid)?;
        g.mvm_transpose(alpha)
    }

    /// `V[y*] = k(x*, x*) − g_Xᵀ (K_XX + σ²I)⁻¹ g_X` with the inverse applied
    /// by `sys`. This is the latent variance; add `σ²` for a new observation.
    pub fn predict_var_exact(&self, sys: &GapSystem<'_>, x_star: &[f64]) -> Result<(Variance, SolveReport)> {
        let g = self.hyper.kernel.cross_covariance_point(&self.data.grid, x_star)?;
        let g_x = select_unchecked(&g, self.data.idx.observed());
        let sol = sys.solve(&g_x)?;
        let w = sol.alpha_observed(&self.data.idx);
        let quad: f64 = g_x.iter().zip(&w).map(|(a, b)| a * b).sum();
        let prior = self.hyper.kernel.prior_variance(x_star)?;
        Ok((Variance::from_raw(prior - quad), sol.report))
    }

    /// Rank-`p` Nyström inverse of `K_XX + σ²I` for approximate variances.
    pub fn nystrom_operator(&self, p: usize, mode: PreconMode) -> Result<LowRankPrecon<'_>> {
        ig_preconditioner(&self.eigen, &self.data.idx, p, self.sigma2(), mode)
    }

    /// Variance with `K_XX` replaced by its rank-`p` Nyström approximation.
    pub fn predict_var_nystrom(&self, op: &LowRankPrecon<'_>, x_star: &[f64]) -> Result<Variance> {
        let g = self.hyper.kernel.cross_covariance_point(&self.data.grid, x_star)?;
        let g_x = select_unchecked(&g, self.data.idx.observed());
        let w = op.apply(&g_x)?;
        let quad: f64 = g_x.iter().zip(&w).map(|(a, b)| a * b).sum();
        Ok(Variance::from_raw(self.hyper.kernel.prior_variance(x_star)? - quad))
    }

    /// Means and optional variances at arbitrary points.
    pub fn predict_points(
        &self,
        points: &[Vec<f64>],
        mode: VarianceMode,
    ) -> Result<(Vec<Prediction>, Vec<SolveReport>)> {
        let mut reports = Vec::new();
        let mut out = Vec::with_capacity(points.len());
        match mode {
            VarianceMode::None => {
                for p in points {
                    out.push(Prediction { point: p.clone(), mean: self.predict_mean_point(p)?, variance: None });
                }
            }
            VarianceMode::Exact { solver } => {
                let sys = self.gap_system(solver)?;
                for p in points {
                    let (v, report) = self.predict_var_exact(&sys, p)?;
                    reports.push(report);
                    out.push(Prediction { point: p.clone(), mean: self.predict_mean_point(p)?, variance: Some(v) });
                }
            }
            VarianceMode::Nystrom { rank } => {
                let op = self.nystrom_operator(rank, PreconMode::Explicit)?;
                for p in points {
                    let v = self.predict_var_nystrom(&op, p)?;
                    out.push(Prediction { point: p.clone(), mean: self.predict_mean_point(p)?, variance: Some(v) });
                }
            }
        }
        Ok((out, reports))
    }

    /// Maximizes the log marginal likelihood over the free log parameters by
    /// multi-start Nelder–Mead, then refits at the optimum.
    pub fn train(&mut self, cfg: &TrainConfig) -> Result<TrainReport> {
        let names = self.hyper.param_names();
        let x0 = self.hyper.to_log_params();
        let free = cfg.free.clone().unwrap_or_else(|| vec![true; x0.len()]);
        if free.len() != x0.len() {
            return Err(Error::DimensionMismatch { expected: x0.len(), got: free.len() });
        }
        let free_idx: Vec<usize> = (0..x0.len()).filter(|&i| free[i]).collect();

        let objective = Objective {
            data: &self.data,
            base: &self.hyper,
            x0: &x0,
            free_idx: &free_idx,
            solver: cfg.solver,
            noise_floor: cfg.noise_floor,
            evals: Cell::new(0),
            failed: Cell::new(0),
        };
        let initial = -objective.cost_of(&free_idx.iter().map(|&i| x0[i]).collect::<Vec<_>>());
        if !initial.is_finite() || initial <= -FAILED_COST {
            return Err(Error::Optimizer("likelihood cannot be evaluated at the initial hyperparameters".into()));
        }

        let mut best_x = x0.clone();
        let mut best_lml = initial;
        let mut converged = true;
        let mut per_start = Vec::new();
        if !free_idx.is_empty() {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            for s in 0..cfg.starts.max(1) {
                let mut start: Vec<f64> = free_idx.iter().map(|&i| x0[i]).collect();
                if s > 0 {
                    for v in &mut start {
                        *v += rng.random_range(-1.0..1.0);
                    }
                }
                let (x, lml, ok) = objective.minimize(start, cfg)?;
                converged &= ok;
                per_start.push(lml);
                if lml > best_lml {
                    best_lml = lml;
                    for (&i, v) in free_idx.iter().zip(&x) {
                        best_x[i] = *v;
                    }
                }
            }
        }
        let evaluations = objective.evals.get();
        let failed_evaluations = objective.failed.get();

        if best_x != x0 {
            let hyper = self.hyper.with_log_params(&best_x)?;
            self.set_hyper(hyper)?;
        }
        self.fit(cfg.solver)?;
        Ok(TrainReport {
            initial_log_likelihood: initial,
            final_log_likelihood: best_lml,
            evaluations,
            failed_evaluations,
            converged,
            start_log_likelihoods: per_start,
            param_names: names,
            log_params: best_x,
        })
    }
}

/// Negative log likelihood over the free subset of log parameters.
struct Objective<'a> {
    data: &'a GappyDataset,
    base: &'a Hyperparams,
    x0: &'a [f64],
    free_idx: &'a [usize],
    solver: SolverConfig,
    noise_floor: f64,
    evals: Cell<usize>,
    failed: Cell<usize>,
}

impl Objective<'_> {
    fn cost_of(&self, free: &[f64]) -> f64 {
        self.evals.set(self.evals.get() + 1);
        match self.try_cost(free) {
            Some(c) if c.is_finite() => c,
            _ => {
                self.failed.set(self.failed.get() + 1);
                FAILED_COST
            }
        }
    }

    fn try_cost(&self, free: &[f64]) -> Option<f64> {
        let mut x = self.x0.to_vec();
        for (&i, v) in self.free_idx.iter().zip(free) {
            x[i] = *v;
        }
        if x.iter().any(|v| !v.is_finite() || v.abs() > 50.0) {
            return None;
        }
        let hyper = self.base.with_log_params(&x).ok()?;
        if hyper.noise_variance < self.noise_floor {
            return None;
        }
        let k = hyper.kernel.grid_covariance(&self.data.grid).ok()?;
        let eigen = k.eigen().ok()?;
        let (lml, _, _) = likelihood_parts(&k, &eigen, self.data, hyper.noise_variance, self.solver).ok()?;
        Some(-lml.value)
    }

    /// Returns the best point, its log likelihood and whether the run converged.
    fn minimize(&self, start: Vec<f64>, cfg: &TrainConfig) -> Result<(Vec<f64>, f64, bool)> {
        let mut simplex = vec![start.clone()];
        for i in 0..start.len() {
            let mut v = start.clone();
            v[i] += cfg.initial_step;
            simplex.push(v);
        }
        let solver =
            NelderMead::new(simplex).with_sd_tolerance(cfg.tolerance).map_err(|e| Error::Optimizer(e.to_string()))?;
        // Each iteration costs at least one evaluation; the evaluation cap is
        // enforced through the iteration count.
        let max_iters = cfg.max_evals.saturating_sub(start.len() + 1).max(1) as u64;
        let res = Executor::new(ArgminCost(self), solver)
            .configure(|state| state.max_iters(max_iters))
            .run()
            .map_err(|e| Error::Optimizer(e.to_string()))?;
        let state = res.state();
        let x = state.get_best_param().cloned().unwrap_or(start);
        let cost = state.get_best_cost();
        let converged = matches!(state.get_termination_reason(), Some(TerminationReason::SolverConverged));
        Ok((x, -cost, converged))
    }
}

struct ArgminCost<'a, 'b>(&'a Objective<'b>);

impl CostFunction for ArgminCost<'_, '_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.0.cost_of(p))
    }
}

#[cfg(test)]
mod tests {
    use nalgebra::{DMatrix, DVector};
    use rand_distr::StandardNormal;

    use super::*;
    use crate::grid::IndexSets;
    use crate::kernels::{Kernel1D, ProductKernel};
    use crate::solvers::{CgConfig, Method};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn submatrix(a: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
    }

    /// Dense posterior pieces straight from the definitions.
    struct Dense {
        kxx_inv: DMatrix<f64>,
        alpha_x: DVector<f64>,
        log_det: f64,
    }

    fn dense(model: &GpModel) -> Dense {
        let obs = model.data().idx.observed();
        let kd = model.covariance().to_dense();
        let n = obs.len();
        let kxx = submatrix(&kd, obs, obs) + DMatrix::identity(n, n) * model.sigma2();
        let chol = kxx.cholesky().unwrap();
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let alpha_x = chol.solve(&DVector::from_vec(model.data().y_obs.clone()));
        Dense { kxx_inv: chol.inverse(), alpha_x, log_det }
    }

    fn random_model(shape: &[usize], gaps: usize, theta: f64, sigma2: f64, seed: u64) -> GpModel {
        let mut r = rng(seed);
        let grid = GridSpec::uniform(shape, 0.0, 1.0).unwrap();
        let m = grid.len();
        let y: Vec<f64> = (0..m).map(|_| r.sample(StandardNormal)).collect();
        let g: Vec<usize> = rand::seq::index::sample(&mut r, m, gaps).into_vec();
        let data =
            GappyDataset::fully_observed(grid, y).unwrap().with_mask(IndexSets::from_gaps(m, &g).unwrap()).unwrap();
        let hyper = Hyperparams::new(ProductKernel::isotropic_se(shape.len(), theta), sigma2);
        GpModel::new(data, hyper).unwrap()
    }

    fn tight(method: Method) -> SolverConfig {
        SolverConfig::new(method).with_cg(CgConfig::with_tolerance(1e-10))
    }

    #[test]
    fn scalar_likelihood_by_hand() {
        let grid = GridSpec::new(vec![vec![0.0]]).unwrap();
        let data = GappyDataset::fully_observed(grid, vec![2.0]).unwrap();
        let model = GpModel::new(data, Hyperparams::new(ProductKernel::isotropic_se(1, 1.0), 1.0)).unwrap();
        let lml = model.log_marginal_likelihood(SolverConfig::new(Method::Ig)).unwrap();
        let expect = -0.5 * 2f64.ln() - 1.0 - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((lml.value - expect).abs() < 1e-12);
    }

    #[test]
    fn full_grid_likelihood_matches_dense() {
        let model = random_model(&[7, 6], 0, 0.4, 0.05, 1);
        let d = dense(&model);
        let lml = model.log_marginal_likelihood(tight(Method::Fg)).unwrap();
        assert!((lml.log_det - d.log_det).abs() <= 1e-8 * d.log_det.abs());
        let quad = DVector::from_vec(model.data().y_obs.clone()).dot(&d.alpha_x);
        let n = 42.0;
        let expect = -0.5 * d.log_det - 0.5 * quad - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
        assert!((lml.value - expect).abs() <= 1e-8 * expect.abs());
    }

    #[test]
    fn gappy_quadratic_term_matches_dense_for_all_methods() {
        let model = random_model(&[15, 15], 90, 0.3, 0.1, 2);
        let d = dense(&model);
        let quad = DVector::from_vec(model.data().y_obs.clone()).dot(&d.alpha_x);
        for method in Method::ALL {
            let lml = model.log_marginal_likelihood(SolverConfig::new(method)).unwrap();
            assert!((lml.quadratic - quad).abs() <= 1e-4 * quad.abs(), "{method}");
            assert!(lml.log_det.is_finite());
        }
    }

    #[test]
    fn mean_predictions() {
        let mut model = random_model(&[15, 15], 90, 0.3, 0.1, 3);
        assert!(matches!(model.predict_mean_point(&[0.5, 0.5]), Err(Error::NotFitted)));
        let d = dense(&model);
        let obs = model.data().idx.observed().to_vec();
        let grid = model.data().grid.clone();
        let kern = model.hyper().kernel.clone();
        for method in Method::ALL {
            model.fit(SolverConfig::new(method)).unwrap();
            assert!(model.fit_residual().unwrap() <= 1e-5);
            for x in [[0.13, 0.77], [0.5, 0.5], [1.2, -0.1]] {
                let g = kern.cross_covariance_point(&grid, &x).unwrap();
                let g_x = DVector::from_iterator(obs.len(), obs.iter().map(|&i| g[i]));
                let expect = g_x.dot(&d.alpha_x);
                let got = model.predict_mean_point(&x).unwrap();
                assert!((got - expect).abs() <= 1e-5 * expect.abs().max(1e-3), "{method} {got} {expect}");
            }
        }
    }

    #[test]
    fn noise_free_interpolation() {
        let mut model = random_model(&[8, 8], 0, 0.3, 1e-10, 4);
        model.fit(tight(Method::Fg)).unwrap();
        let grid = model.data().grid.clone();
        for j in [0, 17, 63] {
            let y = model.data().y_obs[j];
            let got = model.predict_mean_point(&grid.point(j).unwrap()).unwrap();
            assert!((got - y).abs() <= 1e-4, "{got} {y}");
        }
        let on_grid = model.predict_mean_grid(&grid).unwrap();
        for (a, b) in on_grid.iter().zip(&model.data().y_obs) {
            assert!((a - b).abs() <= 1e-4);
        }
    }

    #[test]
    fn zero_responses_predict_zero() {
        let grid = GridSpec::uniform(&[5, 5], 0.0, 1.0).unwrap();
        let data = GappyDataset::fully_observed(grid, vec![0.0; 25]).unwrap();
        let mut model = GpModel::new(data, Hyperparams::new(ProductKernel::isotropic_se(2, 0.3), 0.1)).unwrap();
        model.fit(SolverConfig::new(Method::Ig)).unwrap();
        assert_eq!(model.predict_mean_point(&[0.3, 0.3]).unwrap(), 0.0);
    }

    #[test]
    fn grid_mean_matches_pointwise_loop() {
        let mut model = random_model(&[9, 9], 30, 0.3, 0.01, 5);
        model.fit(SolverConfig::new(Method::Fg)).unwrap();
        let test = GridSpec::new(vec![GridSpec::linspace(-0.2, 1.1, 7), GridSpec::linspace(0.05, 0.95, 7)]).unwrap();
        let batch = model.predict_mean_grid(&test).unwrap();
        for (q, b) in batch.iter().enumerate() {
            let p = model.predict_mean_point(&test.point(q).unwrap()).unwrap();
            assert!((b - p).abs() <= 1e-10);
        }
        let single = GridSpec::new(vec![vec![0.4], vec![0.6]]).unwrap();
        let one = model.predict_mean_grid(&single).unwrap();
        assert!((one[0] - model.predict_mean_point(&[0.4, 0.6]).unwrap()).abs() <= 1e-12);
        let three = GridSpec::uniform(&[2, 2, 2], 0.0, 1.0).unwrap();
        assert!(model.predict_mean_grid(&three).is_err());
    }

    #[test]
    fn exact_variance_matches_dense_across_methods() {
        let model = random_model(&[15, 15], 90, 0.3, 0.1, 6);
        let d = dense(&model);
        let obs = model.data().idx.observed().to_vec();
        let grid = model.data().grid.clone();
        let kern = model.hyper().kernel.clone();
        let x = [0.41, 0.58];
        let g = kern.cross_covariance_point(&grid, &x).unwrap();
        let g_x = DVector::from_iterator(obs.len(), obs.iter().map(|&i| g[i]));
        let expect = 1.0 - g_x.dot(&(&d.kxx_inv * &g_x));
        for method in Method::ALL {
            let sys = model.gap_system(SolverConfig::new(method)).unwrap();
            let (v, _) = model.predict_var_exact(&sys, &x).unwrap();
            assert!((v.value - expect).abs() <= 1e-4 * expect, "{method} {} {expect}", v.value);
        }
    }

    #[test]
    fn variance_limits() {
        let model = random_model(&[8, 8], 20, 0.2, 1e-4, 7);
        let sys = model.gap_system(tight(Method::Ig)).unwrap();
        let (far, _) = model.predict_var_exact(&sys, &[50.0, 50.0]).unwrap();
        assert!((far.value - 1.0).abs() <= 1e-6);
        let j = model.data().idx.observed()[5];
        let (near, _) = model.predict_var_exact(&sys, &model.data().grid.point(j).unwrap()).unwrap();
        assert!(near.value <= 1e-4 * (1.0 + 1e-3));
        for q in 0..20 {
            let x = [q as f64 * 0.07 - 0.2, 0.3 + 0.02 * q as f64];
            let (v, _) = model.predict_var_exact(&sys, &x).unwrap();
            assert!(v.value >= 0.0 && v.value <= 1.0 + 1e-8);
        }
    }

    #[test]
    fn nystrom_variance() {
        let model = random_model(&[8, 8], 16, 0.3, 0.05, 8);
        let sys = model.gap_system(tight(Method::Ig)).unwrap();
        let x = [0.33, 0.71];
        let (exact, _) = model.predict_var_exact(&sys, &x).unwrap();
        let full = model.nystrom_operator(64, PreconMode::Explicit).unwrap();
        let v = model.predict_var_nystrom(&full, &x).unwrap();
        assert!((v.value - exact.value).abs() <= 1e-6);

        let zero = model.nystrom_operator(0, PreconMode::Explicit).unwrap();
        let v = model.predict_var_nystrom(&zero, &x).unwrap();
        let g = model.hyper().kernel.cross_covariance_point(&model.data().grid, &x).unwrap();
        let gx2: f64 = model.data().idx.observed().iter().map(|&i| g[i] * g[i]).sum();
        assert!((v.raw - (1.0 - gx2 / 0.05)).abs() <= 1e-12 * v.raw.abs());
        assert_eq!(v.value, v.raw.max(0.0));
        assert_eq!(v.clamped, v.raw < 0.0);
    }

    #[test]
    fn nystrom_variance_improves_with_rank() {
        let model = random_model(&[15, 15], 90, 0.3, 0.1, 9);
        let sys = model.gap_system(tight(Method::Ig)).unwrap();
        let mut r = rng(10);
        let points: Vec<[f64; 2]> = (0..20).map(|_| [r.random_range(0.0..1.0), r.random_range(0.0..1.0)]).collect();
        let exact: Vec<f64> = points.iter().map(|p| model.predict_var_exact(&sys, p).unwrap().0.value).collect();
        let mut prev = f64::INFINITY;
        for p in [10, 67, 135, 225] {
            let op = model.nystrom_operator(p, PreconMode::Explicit).unwrap();
            let err: f64 = points
                .iter()
                .zip(&exact)
                .map(|(x, e)| (model.predict_var_nystrom(&op, x).unwrap().raw - e).abs())
                .sum::<f64>()
                / 20.0;
            assert!(err <= prev + 1e-9, "rank {p}: {err} > {prev}");
            prev = err;
        }
        assert!(prev <= 1e-6);
    }

    #[test]
    fn set_hyper_invalidates_fit() {
        let mut model = random_model(&[5, 5], 5, 0.3, 0.1, 11);
        model.fit(SolverConfig::new(Method::Ig)).unwrap();
        assert!(model.alpha().is_ok());
        let h = Hyperparams::new(ProductKernel::isotropic_se(2, 0.5), 0.1);
        model.set_hyper(h).unwrap();
        assert!(matches!(model.alpha(), Err(Error::NotFitted)));
    }

    #[test]
    fn train_without_free_parameters_is_identity() {
        let mut model = random_model(&[5, 5], 5, 0.3, 0.1, 12);
        let before = model.hyper().clone();
        let cfg = TrainConfig { free: Some(vec![false; 4]), ..TrainConfig::default() };
        let report = model.train(&cfg).unwrap();
        assert_eq!(report.evaluations, 1);
        assert_eq!(model.hyper(), &before);
        assert!(model.alpha().is_ok());
    }

    /// Draw from the GP prior with noise by dense Cholesky.
    fn sample_gp(grid: &GridSpec, kern: &ProductKernel, sigma2: f64, seed: u64) -> Vec<f64> {
        let k = kern.grid_covariance(grid).unwrap().to_dense();
        let m = k.nrows();
        let l = (k + DMatrix::identity(m, m) * 1e-10).cholesky().unwrap().l();
        let mut r = rng(seed);
        let z = DVector::from_iterator(m, (0..m).map(|_| r.sample::<f64, _>(StandardNormal)));
        let noise = DVector::from_iterator(m, (0..m).map(|_| sigma2.sqrt() * r.sample::<f64, _>(StandardNormal)));
        (l * z + noise).data.into()
    }

    #[test]
    fn train_recovers_noise_variance() {
        let grid = GridSpec::uniform(&[10, 10], 0.0, 1.0).unwrap();
        let kern = ProductKernel::isotropic_se(2, 0.3);
        let y = sample_gp(&grid, &kern, 0.1, 13);
        let data = GappyDataset::fully_observed(grid, y).unwrap();
        let mut model = GpModel::new(data, Hyperparams::new(kern, 1.0)).unwrap();
        let cfg = TrainConfig::default().free_only(model.hyper(), &["log_noise_variance"]).unwrap();
        let report = model.train(&cfg).unwrap();
        assert!(report.final_log_likelihood >= report.initial_log_likelihood);
        let s2 = model.sigma2();
        assert!(s2 > 0.05 && s2 < 0.2, "recovered {s2}");
        // The optimum is a stationary point of the dense likelihood too.
        let lml = |s: f64| {
            let mut m2 = model.clone();
            let mut h = m2.hyper().clone();
            h.noise_variance = s;
            m2.set_hyper(h).unwrap();
            let d = dense(&m2);
            -0.5 * d.log_det - 0.5 * DVector::from_vec(m2.data().y_obs.clone()).dot(&d.alpha_x)
        };
        assert!(lml(s2) >= lml(s2 * 1.2) && lml(s2) >= lml(s2 / 1.2));
    }

    #[test]
    fn train_lengthscale_beats_truth() {
        let grid = GridSpec::uniform(&[15, 15], 0.0, 1.0).unwrap();
        let truth = ProductKernel::isotropic_se(2, 0.3);
        let y = sample_gp(&grid, &truth, 0.01, 14);
        let mut r = rng(15);
        let gaps: Vec<usize> = rand::seq::index::sample(&mut r, 225, 68).into_vec();
        let data = GappyDataset::fully_observed(grid, y)
            .unwrap()
            .with_mask(IndexSets::from_gaps(225, &gaps).unwrap())
            .unwrap();
        let solver = SolverConfig::new(Method::Fg);
        let at_truth = GpModel::new(data.clone(), Hyperparams::new(truth, 0.01))
            .unwrap()
            .log_marginal_likelihood(solver)
            .unwrap()
            .value;
        let start = Hyperparams::new(ProductKernel::new(vec![Kernel1D::se(0.6), Kernel1D::se(0.15)]), 0.01);
        let mut model = GpModel::new(data, start).unwrap();
        let cfg = TrainConfig { solver, starts: 2, ..TrainConfig::default() }
            .free_only(model.hyper(), &["log_lengthscale[0]", "log_lengthscale[1]"])
            .unwrap();
        let report = model.train(&cfg).unwrap();
        assert!(report.final_log_likelihood >= at_truth - 1e-3, "{} < {at_truth}", report.final_log_likelihood);
        let again = model.log_marginal_likelihood(solver).unwrap().value;
        assert!((again - report.final_log_likelihood).abs() <= 1e-9 * again.abs());
    }

    #[test]
    fn train_is_deterministic() {
        let run = || {
            let mut model = random_model(&[6, 6], 8, 0.4, 0.2, 16);
            let cfg = TrainConfig { max_evals: 60, seed: 3, ..TrainConfig::default() };
            let report = model.train(&cfg).unwrap();
            (report.log_params, report.evaluations)
        };
        assert_eq!(run(), run());
    }
}
