//! One-dimensional kernels, product kernels over grid axes and the Kronecker
//! covariance operators they induce.
//!
//! The squared-exponential kernel is `exp(-(x - z)² / θ²)` with unit amplitude.
//! A global amplitude `a²` multiplies the first factor only, so the full-grid
//! covariance stays a pure Kronecker product.

use indexmap::IndexMap;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::kron::{KroneckerOperator, RectKroneckerOperator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel1D {
    SquaredExponential {
        lengthscale: f64,
    },
    /// Stationary `inner` kernel applied to the warped input
    /// `u(x) = (sin 2πx/P, cos 2πx/P)`.
    Periodic {
        period: f64,
        inner: Box<Kernel1D>,
    },
    /// Covariance `B = L Lᵀ` over integer labels `0 … size-1`; `lower` holds the
    /// lower triangle of `L` row by row.
    DiscretePsd {
        size: usize,
        lower: Vec<f64>,
    },
}

impl Kernel1D {
    pub fn se(lengthscale: f64) -> Self {
        Kernel1D::SquaredExponential { lengthscale }
    }

    pub fn periodic_se(lengthscale: f64, period: f64) -> Self {
        Kernel1D::Periodic { period, inner: Box::new(Kernel1D::se(lengthscale)) }
    }

    /// Discrete kernel from its factor `L` (only the lower triangle is read).
    pub fn discrete_from_factor(factor: &DMatrix<f64>) -> Self {
        let size = factor.nrows();
        let lower = (0..size).flat_map(|i| (0..=i).map(move |j| factor[(i, j)])).collect();
        Kernel1D::DiscretePsd { size, lower }
    }

    /// Discrete kernel with `B = I`.
    pub fn independent_outputs(size: usize) -> Self {
        Self::discrete_from_factor(&DMatrix::identity(size, size))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Kernel1D::SquaredExponential { lengthscale } => positive("lengthscale", *lengthscale),
            Kernel1D::Periodic { period, inner } => {
                positive("period", *period)?;
                match inner.as_ref() {
                    Kernel1D::SquaredExponential { .. } => inner.validate(),
                    _ => {
                        Err(Error::InvalidArgument("periodic warping needs a squared-exponential inner kernel".into()))
                    }
                }
            }
            Kernel1D::DiscretePsd { size, lower } => {
                if *size == 0 || lower.len() != size * (size + 1) / 2 {
                    return Err(Error::InvalidArgument(format!(
                        "discrete kernel of size {size} needs {} factor entries, got {}",
                        size * (size + 1) / 2,
                        lower.len()
                    )));
                }
                if lower.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("discrete kernel factor".into()));
                }
                for i in 0..*size {
                    positive("discrete factor diagonal", lower[tri(i, i)])?;
                }
                Ok(())
            }
        }
    }

    /// `B = L Lᵀ` for a discrete kernel.
    pub fn discrete_covariance(&self) -> Option<DMatrix<f64>> {
        let Kernel1D::DiscretePsd { size, lower } = self else {
            return None;
        };
        let n = *size;
        let mut b = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = (0..=j).map(|k| lower[tri(i, k)] * lower[tri(j, k)]).sum();
                b[(i, j)] = v;
                b[(j, i)] = v;
            }
        }
        Some(b)
    }

    fn check_coordinate(&self, x: f64) -> Result<()> {
        if !x.is_finite() {
            return Err(Error::NonFinite("kernel input".into()));
        }
        if let Kernel1D::DiscretePsd { size, .. } = self {
            if x.fract() != 0.0 || x < 0.0 || x >= *size as f64 {
                return Err(Error::InvalidArgument(format!("label {x} is not an integer in 0..{size}")));
            }
        }
        Ok(())
    }

    /// Kernel value as a function of squared input distance (stationary kernels).
    fn eval_sq_dist(&self, r2: f64) -> f64 {
        match self {
            Kernel1D::SquaredExponential { lengthscale } => (-r2 / (lengthscale * lengthscale)).exp(),
            _ => unreachable!("validated: only SE is used as a distance kernel"),
        }
    }

    /// Assumes validated kernel and coordinates.
    fn eval_unchecked(&self, x: f64, z: f64, b: Option<&DMatrix<f64>>) -> f64 {
        match self {
            Kernel1D::SquaredExponential { .. } => self.eval_sq_dist((x - z) * (x - z)),
            Kernel1D::Periodic { period, inner } => {
                // |u(x) - u(z)|² = 4 sin²(π (x - z) / P), with the phase wrapped to [-½, ½].
                let t = (x - z) / period;
                let s = (std::f64::consts::PI * (t - t.round())).sin();
                inner.eval_sq_dist(4.0 * s * s)
            }
            Kernel1D::DiscretePsd { .. } => {
                let b = b.expect("discrete covariance precomputed");
                b[(x as usize, z as usize)]
            }
        }
    }

    /// `k(x, z)` for a single pair.
    pub fn eval(&self, x: f64, z: f64) -> Result<f64> {
        self.validate()?;
        self.check_coordinate(x)?;
        self.check_coordinate(z)?;
        let b = self.discrete_covariance();
        Ok(self.eval_unchecked(x, z, b.as_ref()))
    }

    /// Dense `|a| × |b|` matrix of kernel values.
    pub fn eval_factor(&self, a: &[f64], b: &[f64]) -> Result<DMatrix<f64>> {
        self.validate()?;
        for &x in a.iter().chain(b) {
            self.check_coordinate(x)?;
        }
        let cov = self.discrete_covariance();
        Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| self.eval_unchecked(a[i], b[j], cov.as_ref())))
    }

    /// Number of entries this kernel contributes to the "per-axis" block of the
    /// hyperparameter vector.
    fn n_axis_params(&self) -> usize {
        match self {
            Kernel1D::SquaredExponential { .. } | Kernel1D::Periodic { .. } => 1,
            Kernel1D::DiscretePsd { .. } => 0,
        }
    }

    fn lengthscale_mut(&mut self) -> Option<&mut f64> {
        match self {
            Kernel1D::SquaredExponential { lengthscale } => Some(lengthscale),
            Kernel1D::Periodic { inner, .. } => inner.lengthscale_mut(),
            Kernel1D::DiscretePsd { .. } => None,
        }
    }

    pub fn lengthscale(&self) -> Option<f64> {
        match self {
            Kernel1D::SquaredExponential { lengthscale } => Some(*lengthscale),
            Kernel1D::Periodic { inner, .. } => inner.lengthscale(),
            Kernel1D::DiscretePsd { .. } => None,
        }
    }
}

/// Packed index of `(i, j)` with `j <= i` in a row-major lower triangle.
fn tri(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

fn positive(what: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} must be positive and finite, got {v}")))
    }
}

/// `k(x, z) = a² ∏_l k_l(x_l, z_l)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductKernel {
    pub factors: Vec<Kernel1D>,
    pub amplitude: f64,
}

impl ProductKernel {
    pub fn new(factors: Vec<Kernel1D>) -> Self {
        Self { factors, amplitude: 1.0 }
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    /// Squared-exponential on every axis with a shared lengthscale.
    pub fn isotropic_se(d: usize, lengthscale: f64) -> Self {
        Self::new(vec![Kernel1D::se(lengthscale); d])
    }

    pub fn ndim(&self) -> usize {
        self.factors.len()
    }

    pub fn validate(&self) -> Result<()> {
        positive("amplitude", self.amplitude)?;
        self.factors.iter().try_for_each(Kernel1D::validate)
    }

    fn check_axes(&self, d: usize) -> Result<()> {
        if self.factors.len() != d {
            return Err(Error::DimensionMismatch { expected: self.factors.len(), got: d });
        }
        Ok(())
    }

    /// Per-axis matrices `k_l(a_l, b_l)` with the amplitude folded into axis 0.
    fn axis_factors(&self, a: &GridSpec, b: &GridSpec) -> Result<Vec<DMatrix<f64>>> {
        self.validate()?;
        self.check_axes(a.ndim())?;
        self.check_axes(b.ndim())?;
        let mut factors = self
            .factors
            .iter()
            .zip(a.axes().iter().zip(b.axes()))
            .map(|(k, (ax, bx))| k.eval_factor(ax, bx))
            .collect::<Result<Vec<_>>>()?;
        factors[0] *= self.amplitude;
        Ok(factors)
    }

    /// `K = ⊗ K_l` on the full grid.
    pub fn grid_covariance(&self, grid: &GridSpec) -> Result<KroneckerOperator> {
        KroneckerOperator::new(self.axis_factors(grid, grid)?)
    }

    /// `G = ⊗ G_l` between a training grid (rows) and a test grid (columns).
    pub fn cross_covariance_grid(&self, grid: &GridSpec, test_grid: &GridSpec) -> Result<RectKroneckerOperator> {
        RectKroneckerOperator::new(self.axis_factors(grid, test_grid)?)
    }

    /// Cross-covariance with a single point as an `M × 1` Kronecker operator.
    pub fn cross_covariance_point_operator(&self, grid: &GridSpec, x_star: &[f64]) -> Result<RectKroneckerOperator> {
        self.check_axes(x_star.len())?;
        let point = GridSpec::new(x_star.iter().map(|&x| vec![x]).collect())?;
        self.cross_covariance_grid(grid, &point)
    }

    /// `g_i = k(x_i, x_*)` for every grid cell, materialized.
    pub fn cross_covariance_point(&self, grid: &GridSpec, x_star: &[f64]) -> Result<Vec<f64>> {
        let op = self.cross_covariance_point_operator(grid, x_star)?;
        let mut g = vec![1.0];
        for f in op.factors() {
            g = g.iter().flat_map(|&a| f.column(0).iter().map(move |&b| a * b).collect::<Vec<_>>()).collect();
        }
        Ok(g)
    }

    /// `k(x, z)` for two points.
    pub fn eval(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        self.validate()?;
        self.check_axes(x.len())?;
        self.check_axes(z.len())?;
        let mut v = self.amplitude;
        for ((k, &xi), &zi) in self.factors.iter().zip(x).zip(z) {
            v *= k.eval(xi, zi)?;
        }
        Ok(v)
    }

    /// Prior variance `k(x_*, x_*)`.
    pub fn prior_variance(&self, x_star: &[f64]) -> Result<f64> {
        self.eval(x_star, x_star)
    }
}

/// Kernel plus observation-noise variance `σ²`.
///
/// The log-parameter vector has a fixed layout:
/// `[log θ for each axis with a lengthscale…, log a², log σ², discrete factor
/// entries…]`, where discrete factor diagonals are stored as logs and
/// off-diagonal entries as-is.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub kernel: ProductKernel,
    pub noise_variance: f64,
}

#[derive(Serialize, Deserialize)]
struct HyperparamsFile {
    axes: IndexMap<String, Kernel1D>,
    amplitude: f64,
    noise_variance: f64,
}

impl Hyperparams {
    pub fn new(kernel: ProductKernel, noise_variance: f64) -> Self {
        Self { kernel, noise_variance }
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise variance must be >= 0, got {}", self.noise_variance)));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.param_names().len()
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (l, k) in self.kernel.factors.iter().enumerate() {
            if k.n_axis_params() == 1 {
                names.push(format!("log_lengthscale[{l}]"));
            }
        }
        names.push("log_amplitude".into());
        names.push("log_noise_variance".into());
        for (l, k) in self.kernel.factors.iter().enumerate() {
            if let Kernel1D::DiscretePsd { size, .. } = k {
                for i in 0..*size {
                    for j in 0..=i {
                        let tag = if i == j { "log_factor" } else { "factor" };
                        names.push(format!("{tag}[{l}][{i},{j}]"));
                    }
                }
            }
        }
        names
    }

    pub fn to_log_params(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.kernel.factors.iter().filter_map(Kernel1D::lengthscale).map(f64::ln).collect();
        p.push(self.kernel.amplitude.ln());
        p.push(self.noise_variance.ln());
        for k in &self.kernel.factors {
            if let Kernel1D::DiscretePsd { size, lower } = k {
                for i in 0..*size {
                    for j in 0..=i {
                        let v = lower[tri(i, j)];
                        p.push(if i == j { v.ln() } else { v });
                    }
                }
            }
        }
        p
    }

    /// Copy of `self` with parameters taken from a log-parameter vector.
    pub fn with_log_params(&self, params: &[f64]) -> Result<Self> {
        let n = self.n_params();
        if params.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: params.len() });
        }
        let mut out = self.clone();
        let mut it = params.iter().copied();
        for k in &mut out.kernel.factors {
            if let Some(ls) = k.lengthscale_mut() {
                *ls = it.next().unwrap().exp();
            }
        }
        out.kernel.amplitude = it.next().unwrap().exp();
        out.noise_variance = it.next().unwrap().exp();
        for k in &mut out.kernel.factors {
            if let Kernel1D::DiscretePsd { size, lower } = k {
                for i in 0..*size {
                    for j in 0..=i {
                        let v = it.next().unwrap();
                        lower[tri(i, j)] = if i == j { v.exp() } else { v };
                    }
                }
            }
        }
        out.validate()?;
        Ok(out)
    }

    /// JSON object keyed by axis name.
    pub fn to_json(&self, axis_names: &[String]) -> Result<serde_json::Value> {
        self.kernel.check_axes(axis_names.len())?;
        let file = HyperparamsFile {
            axes: axis_names.iter().cloned().zip(self.kernel.factors.iter().cloned()).collect(),
            amplitude: self.kernel.amplitude,
            noise_variance: self.noise_variance,
        };
        Ok(serde_json::to_value(file)?)
    }

    /// Reads the JSON form, ordering axes to match `axis_names`.
    pub fn from_json(value: &serde_json::Value, axis_names: &[String]) -> Result<Self> {
        let mut file: HyperparamsFile = serde_json::from_value(value.clone())?;
        if file.axes.len() != axis_names.len() {
            return Err(Error::DimensionMismatch { expected: axis_names.len(), got: file.axes.len() });
        }
        let factors = axis_names
            .iter()
            .map(|name| {
                file.axes
                    .shift_remove(name)
                    .ok_or_else(|| Error::InvalidArgument(format!("hyperparameters missing axis {name:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let hyper = Hyperparams {
            kernel: ProductKernel { factors, amplitude: file.amplitude },
            noise_variance: file.noise_variance,
        };
        hyper.validate()?;
        Ok(hyper)
    }
}
