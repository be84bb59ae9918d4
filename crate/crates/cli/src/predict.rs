use gpgrid::io::load_model;
use gpgrid::model::Variance;
use gpgrid::solvers::PreconMode;
use gpgrid::{CgConfig, GridSpec, SolverConfig};
use serde_json::json;

use crate::common::{fmt_f64, parse_axis, read_points, sibling, usage, write_json, write_text, CliResult};
use crate::{PredictArgs, VarianceKind};

pub fn run(a: PredictArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let grid = &model.data().grid;
    let d = grid.ndim();
    let names = grid.names().to_vec();

    let (points, means, mode) = if !a.axis.is_empty() {
        if a.axis.len() != d {
            return Err(usage(format!("model has {d} axes, got {} --axis specs", a.axis.len())));
        }
        let axes = a.axis.iter().map(|s| parse_axis(s)).collect::<CliResult<Vec<_>>>()?;
        let test = GridSpec::with_names(names.clone(), axes)?;
        let means = model.predict_mean_grid(&test)?;
        let points = (0..test.len()).map(|i| test.point(i)).collect::<gpgrid::Result<Vec<_>>>()?;
        (points, means, "grid")
    } else if let Some(path) = &a.points {
        let points = read_points(path, d)?;
        let means = points.iter().map(|p| model.predict_mean_point(p)).collect::<gpgrid::Result<Vec<_>>>()?;
        (points, means, "points")
    } else {
        return Err(usage("give either --axis specs or --points"));
    };

    let mut max_iters = 0;
    let variances: Option<Vec<Variance>> = match a.variance {
        VarianceKind::None => None,
        VarianceKind::Exact => {
            let solver = SolverConfig::new(a.method).with_cg(CgConfig::with_tolerance(a.tol));
            let sys = model.gap_system(solver)?;
            let mut out = Vec::with_capacity(points.len());
            for p in &points {
                let (v, report) = model.predict_var_exact(&sys, p)?;
                max_iters = max_iters.max(report.iterations);
                out.push(v);
            }
            Some(out)
        }
        VarianceKind::Nystrom => {
            let op = model.nystrom_operator(a.rank, PreconMode::Explicit)?;
            Some(points.iter().map(|p| model.predict_var_nystrom(&op, p)).collect::<gpgrid::Result<_>>()?)
        }
    };

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = names.clone();
    header.push("mean".into());
    if variances.is_some() {
        header.extend(["variance", "variance_raw", "variance_clamped"].map(String::from));
    }
    let io = |e: csv::Error| gpgrid::Error::from(e);
    w.write_record(&header).map_err(io)?;
    for (i, p) in points.iter().enumerate() {
        let mut rec: Vec<String> = p.iter().map(|v| fmt_f64(*v)).collect();
        rec.push(fmt_f64(means[i]));
        if let Some(vs) = &variances {
            rec.push(fmt_f64(vs[i].value));
            rec.push(fmt_f64(vs[i].raw));
            rec.push(vs[i].clamped.to_string());
        }
        w.write_record(&rec).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| usage(e.to_string()))?;
    write_text(&a.out, &String::from_utf8(bytes).expect("utf-8"))?;

    let clamped = variances.as_ref().map(|v| v.iter().filter(|v| v.clamped).count()).unwrap_or(0);
    let suspect = variances.as_ref().map(|v| v.iter().filter(|v| v.is_suspect()).count()).unwrap_or(0);
    write_json(
        &sibling(&a.out, "manifest.json"),
        &json!({
            "resolved_config": {
                "model": a.model,
                "mode": mode,
                "axis": a.axis,
                "points": a.points,
                "variance": a.variance,
                "method": a.method,
                "rank": a.rank,
                "tol": a.tol,
            },
            "Q": points.len(),
            "clamped_variances": clamped,
            "suspect_variances": suspect,
            "max_variance_cg_iters": max_iters,
        }),
    )?;
    if suspect > 0 {
        eprintln!("warning: {suspect} variances were clearly negative before clamping");
    }
    println!("wrote {} predictions to {}", points.len(), a.out.display());
    Ok(())
}
