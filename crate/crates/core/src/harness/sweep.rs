use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::oracle::{DenseOracle, DEFAULT_ORACLE_CAP};
use super::{apply_gaps, derive_seed, gen_rastrigin, gen_wave_membrane, gen_white_noise, rastrigin_grid, WaveConfig};
use crate::error::{Error, Result};
use crate::grid::{GappyDataset, GridSpec};
use crate::kernels::ProductKernel;
use crate::solvers::{CgConfig, GapSystem, Method, PreconMode, SolverConfig};

/// Column order of every sweep and study report.
pub const CSV_COLUMNS: [&str; 18] = [
    "run_id",
    "M",
    "N",
    "L",
    "gappiness",
    "method",
    "rank_p",
    "gamma",
    "theta",
    "sigma2",
    "seed",
    "rep",
    "setup_seconds",
    "solve_seconds",
    "cg_iters",
    "rel_residual",
    "alpha_err_vs_oracle",
    "status",
];

/// Workload a sweep reconstructs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Needs 2-d sizes; domain `[-2, 2]²`.
    Rastrigin,
    /// Needs 3-d sizes `[nx, ny, nt]`.
    Wave {
        #[serde(default = "one")]
        wave_speed: f64,
        #[serde(default = "ten")]
        smoothing_passes: usize,
    },
    /// Standard-normal responses on `[0, 1]^d`.
    WhiteNoise,
}

fn one() -> f64 {
    1.0
}

fn ten() -> usize {
    10
}

impl DataSource {
    fn generate(&self, shape: &[usize], seed: u64) -> Result<GappyDataset> {
        match self {
            DataSource::Rastrigin => {
                if shape.len() != 2 {
                    return Err(Error::InvalidArgument(format!("Rastrigin needs 2-d sizes, got {shape:?}")));
                }
                gen_rastrigin(&rastrigin_grid(shape[0], shape[1])?)
            }
            DataSource::Wave { wave_speed, smoothing_passes } => {
                if shape.len() != 3 {
                    return Err(Error::InvalidArgument(format!("wave needs [nx, ny, nt] sizes, got {shape:?}")));
                }
                gen_wave_membrane(&WaveConfig {
                    wave_speed: *wave_speed,
                    smoothing_passes: *smoothing_passes,
                    seed,
                    ..WaveConfig::new(shape[0], shape[1], shape[2])
                })
            }
            DataSource::WhiteNoise => gen_white_noise(&GridSpec::uniform(shape, 0.0, 1.0)?, seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub method: Method,
    #[serde(default)]
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub source: DataSource,
    /// Grid shapes, one sweep block each.
    pub sizes: Vec<Vec<usize>>,
    #[serde(default = "default_gappiness")]
    pub gappiness: Vec<f64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodSpec>,
    /// Isotropic SE lengthscale.
    pub theta: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
    pub sigma2: f64,
    /// PG penalty; defaults to `1e8·(λ_max + σ²)`.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub max_iters: Option<usize>,
    #[serde(default)]
    pub precon_mode: PreconMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one_usize")]
    pub repetitions: usize,
    #[serde(default = "default_cap")]
    pub oracle_cap: usize,
    #[serde(default = "one_usize")]
    pub jobs: usize,
}

fn default_gappiness() -> Vec<f64> {
    (1..=9).map(|k| f64::from(k) / 10.0).collect()
}

fn default_methods() -> Vec<MethodSpec> {
    Method::ALL.into_iter().map(|method| MethodSpec { method, rank: 0 }).collect()
}

fn default_tolerance() -> f64 {
    1e-6
}

fn one_usize() -> usize {
    1
}

fn default_cap() -> usize {
    DEFAULT_ORACLE_CAP
}

impl SweepConfig {
    pub fn new(source: DataSource, sizes: Vec<Vec<usize>>, theta: f64, sigma2: f64) -> Self {
        Self {
            source,
            sizes,
            gappiness: default_gappiness(),
            methods: default_methods(),
            theta,
            amplitude: 1.0,
            sigma2,
            gamma: None,
            tolerance: default_tolerance(),
            max_iters: None,
            precon_mode: PreconMode::default(),
            seed: 0,
            repetitions: 1,
            oracle_cap: DEFAULT_ORACLE_CAP,
            jobs: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(g) = self.gappiness.iter().find(|g| !(0.0..1.0).contains(*g)) {
            return Err(Error::InvalidArgument(format!("gappiness must lie in [0, 1), got {g}")));
        }
        if !(self.theta > 0.0 && self.amplitude > 0.0 && self.sigma2 >= 0.0) {
            return Err(Error::InvalidArgument("theta and amplitude must be positive, sigma2 non-negative".into()));
        }
        if self.sizes.iter().any(|s| s.is_empty() || s.contains(&0)) {
            return Err(Error::InvalidArgument("grid sizes must be non-empty and positive".into()));
        }
        self.cg().validate()
    }

    fn cg(&self) -> CgConfig {
        CgConfig { tolerance: self.tolerance, max_iters: self.max_iters, record_history: false }
    }
}

/// One solver run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub run_id: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub gappiness: f64,
    pub method: Method,
    pub rank_p: usize,
    pub gamma: Option<f64>,
    pub theta: f64,
    pub sigma2: f64,
    pub seed: u64,
    pub rep: usize,
    pub setup_seconds: f64,
    pub solve_seconds: f64,
    pub cg_iters: Option<usize>,
    pub rel_residual: Option<f64>,
    pub alpha_err_vs_oracle: Option<f64>,
    pub status: String,
}

impl SweepRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn total_seconds(&self) -> f64 {
        self.setup_seconds + self.solve_seconds
    }

    fn csv_record(&self) -> Vec<String> {
        vec![
            self.run_id.to_string(),
            self.m.to_string(),
            self.n.to_string(),
            self.l.to_string(),
            fmt_f64(self.gappiness),
            self.method.to_string(),
            self.rank_p.to_string(),
            self.gamma.map(fmt_f64).unwrap_or_default(),
            fmt_f64(self.theta),
            fmt_f64(self.sigma2),
            self.seed.to_string(),
            self.rep.to_string(),
            fmt_f64(self.setup_seconds),
            fmt_f64(self.solve_seconds),
            self.cg_iters.map(|v| v.to_string()).unwrap_or_default(),
            self.rel_residual.map(fmt_f64).unwrap_or_default(),
            self.alpha_err_vs_oracle.map(fmt_f64).unwrap_or_default(),
            self.status.clone(),
        ]
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_csv(header: &[&str], records: impl Iterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in records {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    write_csv(&CSV_COLUMNS, rows.iter().map(SweepRow::csv_record))
}

/// Runs `f` over `0..n` on up to `jobs` threads; results come back in index order.
fn run_indexed<T: Send>(n: usize, jobs: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let jobs = jobs.clamp(1, n.max(1));
    if jobs == 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = f(i);
                out.lock().unwrap()[i] = Some(r);
            });
        }
    });
    out.into_inner().unwrap().into_iter().map(|r| r.expect("every task ran")).collect()
}

struct CellContext<'a> {
    data: &'a GappyDataset,
    kernel: &'a ProductKernel,
    sigma2: f64,
    oracle_alpha: Option<&'a [f64]>,
}

/// Times one solve. Setup covers building `K`, its eigendecomposition when
/// the method needs it, and preconditioner construction.
fn run_method(ctx: &CellContext<'_>, solver: SolverConfig) -> RunOutcome {
    let start = Instant::now();
    let built = (|| {
        let k = ctx.kernel.grid_covariance(&ctx.data.grid)?;
        let eigen = if solver.needs_eigen() { Some(k.eigen()?) } else { None };
        Ok::<_, Error>((k, eigen))
    })();
    let (k, eigen) = match built {
        Ok(v) => v,
        Err(e) => return RunOutcome::failed(start.elapsed().as_secs_f64(), &e),
    };
    let sys = match GapSystem::new(&k, eigen.as_ref(), &ctx.data.idx, ctx.sigma2, solver) {
        Ok(s) => s,
        Err(e) => return RunOutcome::failed(start.elapsed().as_secs_f64(), &e),
    };
    let gamma = (solver.method == Method::Pg).then(|| sys.gamma());
    let setup_seconds = start.elapsed().as_secs_f64();
    let solve_start = Instant::now();
    let result = sys.solve(&ctx.data.y_obs);
    let solve_seconds = solve_start.elapsed().as_secs_f64();
    match result {
        Ok(sol) => {
            let alpha_x = sol.alpha_observed(&ctx.data.idx);
            RunOutcome {
                gamma,
                setup_seconds,
                solve_seconds,
                cg_iters: Some(sol.report.iterations),
                rel_residual: Some(sol.report.rel_residual),
                alpha_err: ctx.oracle_alpha.map(|o| rel_err(&alpha_x, o)),
                status: "ok".into(),
            }
        }
        Err(Error::NotConverged(partial)) => RunOutcome {
            gamma,
            setup_seconds,
            solve_seconds,
            cg_iters: Some(partial.report.iterations),
            rel_residual: Some(partial.report.rel_residual),
            alpha_err: None,
            status: "not_converged".into(),
        },
        Err(e) => RunOutcome { gamma, setup_seconds, solve_seconds, ..RunOutcome::failed(0.0, &e) },
    }
}

struct RunOutcome {
    gamma: Option<f64>,
    setup_seconds: f64,
    solve_seconds: f64,
    cg_iters: Option<usize>,
    rel_residual: Option<f64>,
    alpha_err: Option<f64>,
    status: String,
}

impl RunOutcome {
    fn failed(setup_seconds: f64, e: &Error) -> Self {
        Self {
            gamma: None,
            setup_seconds,
            solve_seconds: 0.0,
            cg_iters: None,
            rel_residual: None,
            alpha_err: None,
            status: format!("error: {e}"),
        }
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Oracle `α_X` when the grid is within the cap.
fn oracle_alpha(data: &GappyDataset, kernel: &ProductKernel, sigma2: f64, cap: usize) -> Result<Option<Vec<f64>>> {
    if data.len() > cap {
        return Ok(None);
    }
    let oracle = DenseOracle::new(&data.grid, kernel, &data.idx, sigma2, cap)?;
    Ok(Some(oracle.solve(&data.y_obs)?))
}

#[allow(clippy::too_many_arguments)]
fn make_row(
    run_id: usize,
    data: &GappyDataset,
    gappiness: f64,
    spec: MethodSpec,
    theta: f64,
    sigma2: f64,
    seed: u64,
    rep: usize,
    out: RunOutcome,
) -> SweepRow {
    SweepRow {
        run_id,
        m: data.len(),
        n: data.idx.n_observed(),
        l: data.idx.n_gaps(),
        gappiness,
        method: spec.method,
        rank_p: spec.rank,
        gamma: out.gamma,
        theta,
        sigma2,
        seed,
        rep,
        setup_seconds: out.setup_seconds,
        solve_seconds: out.solve_seconds,
        cg_iters: out.cg_iters,
        rel_residual: out.rel_residual,
        alpha_err_vs_oracle: out.alpha_err,
        status: out.status,
    }
}

/// One row per (size, gappiness, repetition, method). All methods within a
/// cell see the same gaps. Failing cells are reported, not propagated.
pub fn run_gappiness_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let kernel = |d: usize| ProductKernel::isotropic_se(d, cfg.theta).with_amplitude(cfg.amplitude);
    let datasets: Vec<Result<GappyDataset>> = cfg
        .sizes
        .iter()
        .enumerate()
        .map(|(si, shape)| cfg.source.generate(shape, derive_seed(cfg.seed, &[0, si as u64])))
        .collect();
    let cells: Vec<(usize, usize, usize)> = (0..cfg.sizes.len())
        .flat_map(|si| (0..cfg.gappiness.len()).flat_map(move |gi| (0..cfg.repetitions).map(move |rep| (si, gi, rep))))
        .collect();
    let per_cell = cfg.methods.len();
    let blocks = run_indexed(cells.len(), cfg.jobs, |c| {
        let (si, gi, rep) = cells[c];
        let g = cfg.gappiness[gi];
        let seed = derive_seed(cfg.seed, &[1, si as u64, gi as u64, rep as u64]);
        let base_id = c * per_cell;
        let shape = &cfg.sizes[si];
        let m: usize = shape.iter().product();
        let error_rows = |e: &Error| -> Vec<SweepRow> {
            cfg.methods
                .iter()
                .enumerate()
                .map(|(j, spec)| SweepRow {
                    run_id: base_id + j,
                    m,
                    n: 0,
                    l: 0,
                    gappiness: g,
                    method: spec.method,
                    rank_p: spec.rank,
                    gamma: None,
                    theta: cfg.theta,
                    sigma2: cfg.sigma2,
                    seed,
                    rep,
                    setup_seconds: 0.0,
                    solve_seconds: 0.0,
                    cg_iters: None,
                    rel_residual: None,
                    alpha_err_vs_oracle: None,
                    status: format!("error: {e}"),
                })
                .collect()
        };
        let data = match &datasets[si] {
            Ok(d) => match apply_gaps(d, g, seed) {
                Ok(d) => d,
                Err(e) => return error_rows(&e),
            },
            Err(e) => return error_rows(e),
        };
        let kernel = kernel(shape.len());
        let oracle = match oracle_alpha(&data, &kernel, cfg.sigma2, cfg.oracle_cap) {
            Ok(o) => o,
            Err(e) => return error_rows(&e),
        };
        let ctx = CellContext { data: &data, kernel: &kernel, sigma2: cfg.sigma2, oracle_alpha: oracle.as_deref() };
        cfg.methods
            .iter()
            .enumerate()
            .map(|(j, &spec)| {
                let solver = SolverConfig {
                    gamma: cfg.gamma,
                    precon_mode: cfg.precon_mode,
                    ..SolverConfig::new(spec.method).with_rank(spec.rank).with_cg(cfg.cg())
                };
                let out = run_method(&ctx, solver);
                make_row(base_id + j, &data, g, spec, cfg.theta, cfg.sigma2, seed, rep, out)
            })
            .collect()
    });
    Ok(blocks.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreconStudyConfig {
    /// Grid is `n × n` on `[0, 1]²`.
    pub n: usize,
    #[serde(default = "half")]
    pub gappiness: f64,
    #[serde(default = "default_study_sigma2")]
    pub sigma2: f64,
    pub thetas: Vec<f64>,
    /// Preconditioner ranks; rank 0 (no preconditioner) is always run as the baseline.
    pub ranks: Vec<usize>,
    #[serde(default = "default_study_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_study_reps")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub max_iters: Option<usize>,
    #[serde(default)]
    pub precon_mode: PreconMode,
    #[serde(default = "default_cap")]
    pub oracle_cap: usize,
    #[serde(default = "one_usize")]
    pub jobs: usize,
}

fn half() -> f64 {
    0.5
}

fn default_study_sigma2() -> f64 {
    1e-6
}

fn default_study_methods() -> Vec<Method> {
    vec![Method::Ig, Method::Fg]
}

fn default_study_reps() -> usize {
    5
}

impl PreconStudyConfig {
    pub fn new(n: usize, thetas: Vec<f64>, ranks: Vec<usize>) -> Self {
        Self {
            n,
            gappiness: half(),
            sigma2: default_study_sigma2(),
            thetas,
            ranks,
            methods: default_study_methods(),
            repetitions: default_study_reps(),
            seed: 0,
            tolerance: default_tolerance(),
            max_iters: None,
            precon_mode: PreconMode::default(),
            oracle_cap: DEFAULT_ORACLE_CAP,
            jobs: 1,
        }
    }

    fn resolved_ranks(&self) -> Vec<usize> {
        let mut r = self.ranks.clone();
        r.push(0);
        r.sort_unstable();
        r.dedup();
        r
    }
}

/// Averages over repetitions for one (method, rank, θ).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreconSummaryRow {
    pub method: Method,
    pub rank_p: usize,
    pub theta: f64,
    pub runs: usize,
    pub converged_runs: usize,
    pub mean_cg_iters: f64,
    /// Solve time over the unpreconditioned solve time.
    pub mean_rel_time_excl_setup: f64,
    /// Setup plus solve time over the same for the unpreconditioned run.
    pub mean_rel_time_incl_setup: f64,
}

const SUMMARY_COLUMNS: [&str; 8] = [
    "method",
    "rank_p",
    "theta",
    "runs",
    "converged_runs",
    "mean_cg_iters",
    "mean_rel_time_excl_setup",
    "mean_rel_time_incl_setup",
];

pub fn precon_summary_csv(rows: &[PreconSummaryRow]) -> Result<String> {
    write_csv(
        &SUMMARY_COLUMNS,
        rows.iter().map(|r| {
            vec![
                r.method.to_string(),
                r.rank_p.to_string(),
                fmt_f64(r.theta),
                r.runs.to_string(),
                r.converged_runs.to_string(),
                fmt_f64(r.mean_cg_iters),
                fmt_f64(r.mean_rel_time_excl_setup),
                fmt_f64(r.mean_rel_time_incl_setup),
            ]
        }),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreconStudy {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<PreconSummaryRow>,
}

/// White-noise responses on an `n × n` grid with a fraction of cells
/// removed, solved by each method at each preconditioner rank and θ.
pub fn run_precon_study(cfg: &PreconStudyConfig) -> Result<PreconStudy> {
    if !(0.0..1.0).contains(&cfg.gappiness) {
        return Err(Error::InvalidArgument(format!("gappiness must lie in [0, 1), got {}", cfg.gappiness)));
    }
    if cfg.n == 0 || cfg.repetitions == 0 {
        return Err(Error::InvalidArgument("grid size and repetitions must be positive".into()));
    }
    if cfg.thetas.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::InvalidArgument("lengthscales must be positive".into()));
    }
    let cg = CgConfig { tolerance: cfg.tolerance, max_iters: cfg.max_iters, record_history: false };
    cg.validate()?;
    let ranks = cfg.resolved_ranks();
    let grid = GridSpec::uniform(&[cfg.n, cfg.n], 0.0, 1.0)?;
    let cells: Vec<(usize, usize)> =
        (0..cfg.repetitions).flat_map(|rep| (0..cfg.thetas.len()).map(move |ti| (rep, ti))).collect();
    let per_cell = cfg.methods.len() * ranks.len();
    let blocks = run_indexed(cells.len(), cfg.jobs, |c| -> Result<Vec<SweepRow>> {
        let (rep, ti) = cells[c];
        let theta = cfg.thetas[ti];
        let seed = derive_seed(cfg.seed, &[2, rep as u64]);
        let data = apply_gaps(&gen_white_noise(&grid, seed)?, cfg.gappiness, derive_seed(seed, &[1]))?;
        let kernel = ProductKernel::isotropic_se(2, theta);
        let oracle = oracle_alpha(&data, &kernel, cfg.sigma2, cfg.oracle_cap).unwrap_or(None);
        let ctx = CellContext { data: &data, kernel: &kernel, sigma2: cfg.sigma2, oracle_alpha: oracle.as_deref() };
        let mut rows = Vec::with_capacity(per_cell);
        for &method in &cfg.methods {
            for &rank in &ranks {
                let solver = SolverConfig {
                    precon_mode: cfg.precon_mode,
                    ..SolverConfig::new(method).with_rank(rank).with_cg(cg)
                };
                let out = run_method(&ctx, solver);
                let spec = MethodSpec { method, rank };
                rows.push(make_row(
                    c * per_cell + rows.len(),
                    &data,
                    cfg.gappiness,
                    spec,
                    theta,
                    cfg.sigma2,
                    seed,
                    rep,
                    out,
                ));
            }
        }
        Ok(rows)
    });
    let mut rows = Vec::new();
    for b in blocks {
        rows.extend(b?);
    }
    let summary = summarize(cfg, &ranks, &rows);
    Ok(PreconStudy { rows, summary })
}

fn summarize(cfg: &PreconStudyConfig, ranks: &[usize], rows: &[SweepRow]) -> Vec<PreconSummaryRow> {
    let mut out = Vec::new();
    for &method in &cfg.methods {
        for &rank in ranks {
            for &theta in &cfg.thetas {
                let pick =
                    |p: usize| rows.iter().filter(move |r| r.method == method && r.rank_p == p && r.theta == theta);
                let runs: Vec<&SweepRow> = pick(rank).collect();
                let mut excl = 0.0;
                let mut incl = 0.0;
                for r in &runs {
                    if let Some(base) = pick(0).find(|b| b.rep == r.rep) {
                        excl += r.solve_seconds / base.solve_seconds;
                        incl += r.total_seconds() / base.total_seconds();
                    }
                }
                let count = runs.len().max(1) as f64;
                out.push(PreconSummaryRow {
                    method,
                    rank_p: rank,
                    theta,
                    runs: runs.len(),
                    converged_runs: runs.iter().filter(|r| r.is_ok()).count(),
                    mean_cg_iters: runs.iter().map(|r| r.cg_iters.unwrap_or(0) as f64).sum::<f64>() / count,
                    mean_rel_time_excl_setup: excl / count,
                    mean_rel_time_incl_setup: incl / count,
                });
            }
        }
    }
    out
}
