use std::path::PathBuf;

use gpgrid::harness::apply_gaps;
use gpgrid::io::{load_dataset_with_manifest, save_dataset, save_model};
use gpgrid::{CgConfig, Error, GpModel, Method, SolverConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::common::{merge_kernel, read_json, resolve_hyper, sibling, write_json, CliError, CliResult};
use crate::{KernelArgs, ReconstructArgs};

/// Settings file accepted by `--config`; keys mirror the long flags.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ReconstructFile {
    method: Option<Method>,
    gappiness: Option<f64>,
    rank: Option<usize>,
    gamma: Option<f64>,
    zeta: Option<f64>,
    tol: Option<f64>,
    max_iters: Option<usize>,
    seed: Option<u64>,
    train: Option<bool>,
    hyper: Option<PathBuf>,
    theta: Option<f64>,
    lengthscales: Option<Vec<f64>>,
    amplitude: Option<f64>,
    sigma2: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Resolved {
    dataset: PathBuf,
    method: Method,
    gappiness: Option<f64>,
    rank: usize,
    gamma: Option<f64>,
    zeta: Option<f64>,
    tol: f64,
    max_iters: Option<usize>,
    seed: u64,
    train: bool,
    hyperparameters: serde_json::Value,
}

pub fn run(a: ReconstructArgs) -> CliResult<()> {
    let file: ReconstructFile = match &a.config {
        Some(p) => read_json(p)?,
        None => ReconstructFile::default(),
    };
    let file_kernel = KernelArgs {
        hyper: file.hyper.clone(),
        theta: file.theta,
        lengthscales: file.lengthscales.clone(),
        amplitude: file.amplitude,
        sigma2: file.sigma2,
    };
    let kernel_args = merge_kernel(&a.kernel, &file_kernel);
    let method = a.method.or(file.method).unwrap_or(Method::Fg);
    let gappiness = a.gappiness.or(file.gappiness);
    let rank = a.rank.or(file.rank).unwrap_or(0);
    let gamma = a.gamma.or(file.gamma);
    let zeta = a.zeta.or(file.zeta);
    let tol = a.tol.or(file.tol).unwrap_or(1e-6);
    let max_iters = a.max_iters.or(file.max_iters);
    let seed = a.seed.or(file.seed).unwrap_or(0);
    let train = a.train || file.train.unwrap_or(false);

    let (mut data, _) = load_dataset_with_manifest(&a.dataset)?;
    let mut dataset_path = a.dataset.clone();
    if let Some(g) = gappiness {
        data = apply_gaps(&data, g, seed)?;
        dataset_path = sibling(&a.out, "data.json");
        save_dataset(&data, &dataset_path, json!({ "source": a.dataset, "gappiness": g, "gap_seed": seed }))?;
    }
    let hyper = resolve_hyper(&kernel_args, &data.grid)?;
    let solver = SolverConfig {
        gamma,
        zeta,
        ..SolverConfig::new(method).with_rank(rank).with_cg(CgConfig {
            tolerance: tol,
            max_iters,
            record_history: false,
        })
    };
    let (m, n, l) = (data.len(), data.idx.n_observed(), data.idx.n_gaps());
    let names = data.grid.names().to_vec();
    let mut model = GpModel::new(data, hyper)?;

    let train_report =
        if train { Some(model.train(&TrainConfig { solver, seed, ..TrainConfig::default() })?) } else { None };
    let resolved = Resolved {
        dataset: dataset_path.clone(),
        method,
        gappiness,
        rank,
        gamma,
        zeta,
        tol,
        max_iters,
        seed,
        train,
        hyperparameters: model.hyper().to_json(&names)?,
    };
    let report_path = sibling(&a.out, "report.json");
    let outcome = model.fit(solver).map(|f| f.report.clone());
    let (status, report, err) = match outcome {
        Ok(r) => ("ok", Some(r), None),
        Err(Error::NotConverged(partial)) => {
            ("not_converged", Some(partial.report.clone()), Some(Error::NotConverged(partial)))
        }
        Err(e) => ("error", None, Some(e)),
    };
    write_json(
        &report_path,
        &json!({
            "status": status,
            "M": m,
            "N": n,
            "L": l,
            "resolved_config": resolved,
            "solve": report,
            "train": train_report,
            "error": err.as_ref().map(|e| e.to_string()),
        }),
    )?;
    if let Some(e) = err {
        return Err(CliError::Core(e));
    }
    save_model(&model, &dataset_path, &a.out)?;
    let report = report.expect("set when the fit succeeded");
    println!(
        "{method}: M = {m}, N = {n}, L = {l}, cg_iters = {}, rel_residual = {:.3e}, setup {:.3}s, solve {:.3}s",
        report.iterations, report.rel_residual, report.setup_seconds, report.solve_seconds
    );
    println!("wrote {} and {}", a.out.display(), report_path.display());
    Ok(())
}
