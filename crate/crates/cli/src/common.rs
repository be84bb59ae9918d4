use std::fmt;
use std::path::{Path, PathBuf};

use gpgrid::{GridSpec, Hyperparams, Kernel1D, ProductKernel};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::KernelArgs;

pub const DEFAULT_SIGMA2: f64 = 1e-2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(gpgrid::Error),
    /// A run finished but some checks did not pass.
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_numerical() => 1,
            CliError::Core(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failed(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<gpgrid::Error> for CliError {
    fn from(e: gpgrid::Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(gpgrid::Error::from)?;
    bytes.push(b'\n');
    Ok(gpgrid::io::write_atomic(path, &bytes)?)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    Ok(gpgrid::io::write_atomic(path, text.as_bytes())?)
}

/// `dir/model.json` with suffix `report.json` becomes `dir/model.report.json`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))
}

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Fills unset kernel flags from a settings file.
pub fn merge_kernel(flags: &KernelArgs, file: &KernelArgs) -> KernelArgs {
    KernelArgs {
        hyper: flags.hyper.clone().or_else(|| file.hyper.clone()),
        theta: flags.theta.or(file.theta),
        lengthscales: flags.lengthscales.clone().or_else(|| file.lengthscales.clone()),
        amplitude: flags.amplitude.or(file.amplitude),
        sigma2: flags.sigma2.or(file.sigma2),
    }
}

/// Hyperparameters from a JSON file and/or flags. Without either, every
/// axis gets an SE factor with lengthscale a tenth of its extent.
pub fn resolve_hyper(args: &KernelArgs, grid: &GridSpec) -> CliResult<Hyperparams> {
    let d = grid.ndim();
    let mut hyper = match &args.hyper {
        Some(path) => Hyperparams::from_json(&read_json::<serde_json::Value>(path)?, grid.names())?,
        None => {
            let factors = grid
                .axes()
                .iter()
                .map(|a| {
                    let extent = a.last().unwrap() - a.first().unwrap();
                    Kernel1D::se(if extent > 0.0 { extent / 10.0 } else { 1.0 })
                })
                .collect();
            Hyperparams::new(ProductKernel::new(factors), DEFAULT_SIGMA2)
        }
    };
    let lengthscales = match (&args.theta, &args.lengthscales) {
        (Some(t), _) => Some(vec![*t; d]),
        (None, Some(ls)) => Some(ls.clone()),
        _ => None,
    };
    if let Some(ls) = lengthscales {
        if ls.len() != d {
            return Err(usage(format!("expected {d} lengthscales, got {}", ls.len())));
        }
        for (f, l) in hyper.kernel.factors.iter_mut().zip(ls) {
            match f {
                Kernel1D::SquaredExponential { lengthscale } => *lengthscale = l,
                Kernel1D::Periodic { inner, .. } => **inner = Kernel1D::se(l),
                Kernel1D::DiscretePsd { .. } => {
                    return Err(usage("lengthscale flags cannot override a discrete factor"))
                }
            }
        }
    }
    if let Some(a) = args.amplitude {
        hyper.kernel.amplitude = a;
    }
    if let Some(s) = args.sigma2 {
        hyper.noise_variance = s;
    }
    hyper.validate()?;
    Ok(hyper)
}

/// Rows of `d` numbers; a non-numeric first line is taken as a header.
pub fn read_points(path: &Path, d: usize) -> CliResult<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(p) if p.len() == d => out.push(p),
            Ok(p) => {
                return Err(usage(format!("{}: row {} has {} values, expected {d}", path.display(), i + 1, p.len())))
            }
            Err(_) if i == 0 => continue,
            Err(e) => return Err(usage(format!("{}: row {}: {e}", path.display(), i + 1))),
        }
    }
    Ok(out)
}

/// `lo:hi:n`.
pub fn parse_axis(spec: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || usage(format!("axis {spec:?} is not lo:hi:n"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if n == 0 {
        return Err(bad());
    }
    Ok(GridSpec::linspace(lo, hi, n))
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}
