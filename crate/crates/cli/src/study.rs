use clap::ValueEnum;
use gpgrid::harness::{
    precon_summary_csv, run_gappiness_sweep, run_precon_study, sweep_csv, DataSource, MethodSpec, PreconStudyConfig,
    SweepConfig, SweepRow,
};
use gpgrid::Method;
use serde_json::json;

use crate::common::{ensure_dir, read_json, usage, write_json, write_text, CliResult};
use crate::{PreconStudyArgs, SweepArgs};

#[derive(Clone, Copy, ValueEnum)]
pub enum SourceKind {
    Rastrigin,
    Wave,
    WhiteNoise,
}

/// Defaults for the desk-scale Rastrigin sweep.
pub const DEFAULT_SWEEP_THETA: f64 = 0.2;
pub const DEFAULT_SWEEP_SIGMA2: f64 = 1e-4;

fn parse_size(s: &str) -> CliResult<Vec<usize>> {
    s.split(['x', 'X'])
        .map(|p| p.trim().parse::<usize>().map_err(|_| usage(format!("size {s:?} is not like 100x100"))))
        .collect()
}

fn parse_gappiness(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<f64>().map_err(|_| usage(format!("bad gappiness {p:?}"))))
        .collect()
}

fn parse_method_spec(s: &str) -> CliResult<MethodSpec> {
    let (m, r) = match s.split_once(':') {
        Some((m, r)) => (m, Some(r)),
        None => (s, None),
    };
    let method: Method = m.trim().parse()?;
    let rank = match r {
        Some(r) => r.trim().parse().map_err(|_| usage(format!("bad rank in {s:?}")))?,
        None => 0,
    };
    Ok(MethodSpec { method, rank })
}

/// Mean total time and iterations per (M, gappiness, method, rank) over
/// successful repetitions.
fn trend(rows: &[SweepRow]) -> Vec<serde_json::Value> {
    let mut keys: Vec<(usize, f64, Method, usize)> = Vec::new();
    for r in rows {
        let k = (r.m, r.gappiness, r.method, r.rank_p);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(m, g, method, rank)| {
            let sel: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| r.m == m && r.gappiness == g && r.method == method && r.rank_p == rank)
                .collect();
            let ok: Vec<&&SweepRow> = sel.iter().filter(|r| r.is_ok()).collect();
            let n = ok.len().max(1) as f64;
            json!({
                "M": m,
                "gappiness": g,
                "method": method,
                "rank_p": rank,
                "runs": sel.len(),
                "ok_runs": ok.len(),
                "mean_total_seconds": ok.iter().map(|r| r.total_seconds()).sum::<f64>() / n,
                "mean_cg_iters": ok.iter().map(|r| r.cg_iters.unwrap_or(0) as f64).sum::<f64>() / n,
            })
        })
        .collect()
}

pub fn run_sweep(a: SweepArgs) -> CliResult<()> {
    let mut cfg: SweepConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => {
            SweepConfig::new(DataSource::Rastrigin, vec![vec![100, 100]], DEFAULT_SWEEP_THETA, DEFAULT_SWEEP_SIGMA2)
        }
    };
    if let Some(s) = a.source {
        cfg.source = match s {
            SourceKind::Rastrigin => DataSource::Rastrigin,
            SourceKind::Wave => DataSource::Wave { wave_speed: 1.0, smoothing_passes: 10 },
            SourceKind::WhiteNoise => DataSource::WhiteNoise,
        };
    }
    if !a.size.is_empty() {
        cfg.sizes = a.size.iter().map(|s| parse_size(s)).collect::<CliResult<_>>()?;
    }
    if let Some(g) = &a.gappiness {
        cfg.gappiness = parse_gappiness(g)?;
    }
    if let Some(m) = &a.methods {
        cfg.methods = m.iter().map(|s| parse_method_spec(s)).collect::<CliResult<_>>()?;
    }
    cfg.theta = a.theta.unwrap_or(cfg.theta);
    cfg.amplitude = a.amplitude.unwrap_or(cfg.amplitude);
    cfg.sigma2 = a.sigma2.unwrap_or(cfg.sigma2);
    cfg.gamma = a.gamma.or(cfg.gamma);
    cfg.tolerance = a.tol.unwrap_or(cfg.tolerance);
    cfg.max_iters = a.max_iters.or(cfg.max_iters);
    cfg.repetitions = a.reps.unwrap_or(cfg.repetitions);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.jobs = a.jobs.unwrap_or(cfg.jobs).max(1);

    ensure_dir(&a.out_dir)?;
    let rows = run_gappiness_sweep(&cfg)?;
    let csv_path = a.out_dir.join("sweep.csv");
    write_text(&csv_path, &sweep_csv(&rows)?)?;
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    write_json(
        &a.out_dir.join("sweep.json"),
        &json!({ "resolved_config": cfg, "rows": rows.len(), "failed_rows": failed, "trend": trend(&rows) }),
    )?;
    println!("{} rows ({failed} not ok) written to {}", rows.len(), csv_path.display());
    Ok(())
}

pub fn run_precon(a: PreconStudyArgs) -> CliResult<()> {
    let mut cfg: PreconStudyConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => PreconStudyConfig::new(100, vec![0.05, 0.1, 0.2, 0.5], vec![100, 500, 1000]),
    };
    cfg.n = a.n.unwrap_or(cfg.n);
    cfg.gappiness = a.gappiness.unwrap_or(cfg.gappiness);
    cfg.sigma2 = a.sigma2.unwrap_or(cfg.sigma2);
    if let Some(t) = a.thetas {
        cfg.thetas = t;
    }
    if let Some(r) = a.ranks {
        cfg.ranks = r;
    }
    if let Some(m) = a.methods {
        cfg.methods = m;
    }
    cfg.repetitions = a.reps.unwrap_or(cfg.repetitions);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.tolerance = a.tol.unwrap_or(cfg.tolerance);
    cfg.max_iters = a.max_iters.or(cfg.max_iters);
    cfg.jobs = a.jobs.unwrap_or(cfg.jobs).max(1);

    ensure_dir(&a.out_dir)?;
    let study = run_precon_study(&cfg)?;
    write_text(&a.out_dir.join("precon_study.csv"), &sweep_csv(&study.rows)?)?;
    write_text(&a.out_dir.join("precon_summary.csv"), &precon_summary_csv(&study.summary)?)?;
    write_json(
        &a.out_dir.join("precon_study.json"),
        &json!({ "resolved_config": cfg, "rows": study.rows.len(), "summary": study.summary }),
    )?;
    for s in &study.summary {
        println!(
            "{} p={:<5} theta={:<6} iters {:>9.1}  rel time {:>8.3} (with setup {:>8.3})",
            s.method, s.rank_p, s.theta, s.mean_cg_iters, s.mean_rel_time_excl_setup, s.mean_rel_time_incl_setup
        );
    }
    Ok(())
}
