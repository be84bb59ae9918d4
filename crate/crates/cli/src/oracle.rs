use gpgrid::harness::{apply_gaps, DenseOracle};
use gpgrid::io::load_dataset;
use gpgrid::{CgConfig, Error, GpModel, Method, SolverConfig};
use serde_json::json;

use crate::common::{read_points, rel_err, resolve_hyper, usage, write_json, CliError, CliResult};
use crate::OracleCheckArgs;

/// Tolerance for weights, filled gaps, means and variances.
const REL_TOL: f64 = 1e-4;
/// `‖α_Z‖∞ ≤ ALPHA_GAP_TOL · ‖α‖∞` for FG.
const ALPHA_GAP_TOL: f64 = 1e-5;
/// CG tolerance for the variance solves.
const VARIANCE_CG_TOL: f64 = 1e-10;

struct Check {
    name: String,
    value: f64,
    limit: f64,
}

impl Check {
    fn pass(&self) -> bool {
        self.value <= self.limit
    }
}

fn scalar_rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

pub fn run(a: OracleCheckArgs) -> CliResult<()> {
    let mut data = load_dataset(&a.dataset)?;
    if let Some(g) = a.gappiness {
        data = apply_gaps(&data, g, a.seed)?;
    }
    let hyper = resolve_hyper(&a.kernel, &data.grid)?;
    let sigma2 = hyper.noise_variance;
    let oracle = match DenseOracle::new(&data.grid, &hyper.kernel, &data.idx, sigma2, a.cap) {
        Err(Error::OracleCap { size, cap }) => {
            return Err(usage(format!("refusing dense oracle check: M = {size} exceeds the cap of {cap} cells")))
        }
        other => other?,
    };
    let truth = oracle.solution(&data.y_obs)?;
    let points = match &a.points {
        Some(p) => read_points(p, data.grid.ndim())?,
        None => {
            let mut pts = vec![data.grid.point(data.idx.observed()[0])?];
            if let Some(&z) = data.idx.gaps().first() {
                pts.push(data.grid.point(z)?);
            }
            pts.push(data.grid.axes().iter().map(|ax| 0.5 * (ax[0] + ax[ax.len() - 1])).collect());
            pts
        }
    };
    let (l, y_obs) = (data.idx.n_gaps(), data.y_obs.clone());
    let idx = data.idx.clone();
    let mut model = GpModel::new(data, hyper)?;

    let mut checks = Vec::new();
    for method in Method::ALL {
        let sys = model.gap_system(SolverConfig::new(method).with_cg(CgConfig::with_tolerance(a.tol)))?;
        let sol = sys.solve(&y_obs)?;
        checks.push(Check {
            name: format!("{method} alpha_x"),
            value: rel_err(&sol.alpha_observed(&idx), &truth.alpha_x),
            limit: REL_TOL,
        });
        if method == Method::Fg {
            if l == 0 {
                println!("note  fg: no gaps, direct eigen-solve ({} CG iterations)", sol.report.iterations);
            } else {
                let y_gaps = sol.y_gaps.as_ref().expect("fg fills gaps");
                checks.push(Check { name: "fg y_gaps".into(), value: rel_err(y_gaps, &truth.y_gaps), limit: REL_TOL });
                let inf = |v: &mut dyn Iterator<Item = f64>| v.fold(0.0f64, |m, x| m.max(x.abs()));
                let a_z = inf(&mut idx.gaps().iter().map(|&z| sol.alpha[z]));
                let a_all = inf(&mut sol.alpha.iter().copied());
                checks.push(Check {
                    name: "fg alpha_gaps".into(),
                    value: a_z / a_all.max(1e-300),
                    limit: ALPHA_GAP_TOL,
                });
            }
        }
    }

    model.fit(SolverConfig::new(Method::Fg).with_cg(CgConfig::with_tolerance(a.tol)))?;
    let sys = model.gap_system(SolverConfig::new(Method::Fg).with_cg(CgConfig::with_tolerance(VARIANCE_CG_TOL)))?;
    // Means are compared on the scale of the responses, since a posterior
    // mean can sit near zero.
    let y_scale = y_obs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut point_report = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let mean = model.predict_mean_point(p)?;
        let (var, _) = model.predict_var_exact(&sys, p)?;
        let o_mean = oracle.posterior_mean(p, &y_obs)?;
        let o_var = oracle.posterior_variance(p)?;
        let mean_err = (mean - o_mean).abs() / o_mean.abs().max(y_scale);
        checks.push(Check { name: format!("mean[{i}]"), value: mean_err, limit: REL_TOL });
        checks.push(Check { name: format!("variance[{i}]"), value: scalar_rel(var.raw, o_var), limit: REL_TOL });
        point_report.push(json!({
            "point": p,
            "mean": mean,
            "variance": var.value,
            "oracle_mean": o_mean,
            "oracle_variance": o_var,
        }));
    }

    let mut failed = 0;
    for c in &checks {
        let verdict = if c.pass() { "PASS" } else { "FAIL" };
        failed += usize::from(!c.pass());
        println!("{verdict}  {:<16} {:.3e} (limit {:.0e})", c.name, c.value, c.limit);
    }
    if let Some(out) = &a.out {
        write_json(
            out,
            &json!({
                "dataset": a.dataset,
                "gappiness": a.gappiness,
                "seed": a.seed,
                "tol": a.tol,
                "cap": a.cap,
                "log_det": truth.log_det,
                "checks": checks.iter().map(|c| json!({ "name": c.name, "value": c.value, "limit": c.limit, "pass": c.pass() })).collect::<Vec<_>>(),
                "points": point_report,
            }),
        )?;
    }
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} of {} oracle checks failed", checks.len())));
    }
    println!("all {} oracle checks passed", checks.len());
    Ok(())
}
