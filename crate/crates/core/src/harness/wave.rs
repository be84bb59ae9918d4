use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::rng_from_seed;
use crate::error::{Error, Result};
use crate::grid::{GappyDataset, GridSpec};

/// Largest admissible `c·Δt/Δx` for the 5-point leapfrog scheme.
const CFL_LIMIT: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Vibrating membrane on `[0, 1]²` with clamped edges, sampled at `nt`
/// frames spaced `dt` apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveConfig {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub wave_speed: f64,
    /// Defaults to `0.5·min(Δx, Δy)/c`.
    pub dt: Option<f64>,
    /// Damped Jacobi passes applied to the white-noise initial field.
    pub smoothing_passes: usize,
    pub seed: u64,
}

impl WaveConfig {
    pub fn new(nx: usize, ny: usize, nt: usize) -> Self {
        Self { nx, ny, nt, wave_speed: 1.0, dt: None, smoothing_passes: 10, seed: 0 }
    }

    fn spacing(&self) -> (f64, f64) {
        (1.0 / (self.nx - 1) as f64, 1.0 / (self.ny - 1) as f64)
    }

    pub fn resolved_dt(&self) -> f64 {
        let (hx, hy) = self.spacing();
        self.dt.unwrap_or(0.5 * hx.min(hy) / self.wave_speed)
    }

    fn validate(&self) -> Result<()> {
        if self.nx < 3 || self.ny < 3 || self.nt == 0 {
            return Err(Error::InvalidArgument(format!(
                "membrane needs nx, ny >= 3 and nt >= 1, got {}×{}×{}",
                self.nx, self.ny, self.nt
            )));
        }
        if !(self.wave_speed > 0.0 && self.wave_speed.is_finite()) {
            return Err(Error::InvalidArgument(format!("wave speed must be positive, got {}", self.wave_speed)));
        }
        let dt = self.resolved_dt();
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        let (hx, hy) = self.spacing();
        let courant = self.wave_speed * dt / hx.min(hy);
        if courant > CFL_LIMIT * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!("CFL violated: c·dt/dx = {courant:.6} exceeds 1/√2")));
        }
        Ok(())
    }
}

fn laplacian(u: &[f64], nx: usize, ny: usize, hx: f64, hy: f64, out: &mut [f64]) {
    out.fill(0.0);
    for i in 1..nx - 1 {
        for j in 1..ny - 1 {
            let c = u[i * ny + j];
            out[i * ny + j] = (u[(i - 1) * ny + j] - 2.0 * c + u[(i + 1) * ny + j]) / (hx * hx)
                + (u[i * ny + j - 1] - 2.0 * c + u[i * ny + j + 1]) / (hy * hy);
        }
    }
}

fn clamp_edges(u: &mut [f64], nx: usize, ny: usize) {
    for i in 0..nx {
        u[i * ny] = 0.0;
        u[i * ny + ny - 1] = 0.0;
    }
    for j in 0..ny {
        u[j] = 0.0;
        u[(nx - 1) * ny + j] = 0.0;
    }
}

/// Leapfrog integration from displacement `u0` (row-major `nx × ny`) at rest.
/// Returns `nt` frames, the first being `u0` with its edges clamped.
pub fn simulate_wave(u0: &[f64], cfg: &WaveConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let (nx, ny) = (cfg.nx, cfg.ny);
    if u0.len() != nx * ny {
        return Err(Error::DimensionMismatch { expected: nx * ny, got: u0.len() });
    }
    let (hx, hy) = cfg.spacing();
    let dt = cfg.resolved_dt();
    let c2dt2 = (cfg.wave_speed * dt).powi(2);

    let mut prev = u0.to_vec();
    clamp_edges(&mut prev, nx, ny);
    let mut frames = Vec::with_capacity(cfg.nt);
    frames.push(prev.clone());
    if cfg.nt == 1 {
        return Ok(frames);
    }
    let mut lap = vec![0.0; nx * ny];
    laplacian(&prev, nx, ny, hx, hy, &mut lap);
    let mut cur: Vec<f64> = prev.iter().zip(&lap).map(|(u, l)| u + 0.5 * c2dt2 * l).collect();
    frames.push(cur.clone());
    for _ in 2..cfg.nt {
        laplacian(&cur, nx, ny, hx, hy, &mut lap);
        let next: Vec<f64> = (0..nx * ny).map(|k| 2.0 * cur[k] - prev[k] + c2dt2 * lap[k]).collect();
        prev = std::mem::replace(&mut cur, next);
        frames.push(cur.clone());
    }
    Ok(frames)
}

/// Discrete energy between consecutive frames, the quantity leapfrog
/// conserves exactly:
/// `½‖(uⁿ⁺¹ − uⁿ)/Δt‖² + ½c²⟨∇uⁿ⁺¹, ∇uⁿ⟩`, cell-area weighted.
pub fn wave_energy(cur: &[f64], next: &[f64], cfg: &WaveConfig) -> f64 {
    let (nx, ny) = (cfg.nx, cfg.ny);
    let (hx, hy) = cfg.spacing();
    let dt = cfg.resolved_dt();
    let kinetic: f64 = cur.iter().zip(next).map(|(a, b)| ((b - a) / dt).powi(2)).sum();
    let mut potential = 0.0;
    for i in 0..nx {
        for j in 0..ny {
            let k = i * ny + j;
            if i + 1 < nx {
                let k2 = k + ny;
                potential += (cur[k2] - cur[k]) * (next[k2] - next[k]) / (hx * hx);
            }
            if j + 1 < ny {
                potential += (cur[k + 1] - cur[k]) * (next[k + 1] - next[k]) / (hy * hy);
            }
        }
    }
    0.5 * hx * hy * (kinetic + cfg.wave_speed.powi(2) * potential)
}

/// Seeded Gaussian field, smoothed with damped Jacobi passes
/// `u ← (u + mean of 4 neighbours)/2`, then scaled to unit peak.
fn smooth_initial_field(cfg: &WaveConfig) -> Vec<f64> {
    let (nx, ny) = (cfg.nx, cfg.ny);
    let mut rng = rng_from_seed(cfg.seed);
    let mut u: Vec<f64> = (0..nx * ny).map(|_| StandardNormal.sample(&mut rng)).collect();
    clamp_edges(&mut u, nx, ny);
    let mut next = vec![0.0; nx * ny];
    for _ in 0..cfg.smoothing_passes {
        for i in 1..nx - 1 {
            for j in 1..ny - 1 {
                let avg = 0.25 * (u[(i - 1) * ny + j] + u[(i + 1) * ny + j] + u[i * ny + j - 1] + u[i * ny + j + 1]);
                next[i * ny + j] = 0.5 * (u[i * ny + j] + avg);
            }
        }
        std::mem::swap(&mut u, &mut next);
    }
    let peak = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        u.iter_mut().for_each(|v| *v /= peak);
    }
    u
}

/// Fully observed `nx × ny × nt` membrane dataset on axes `x1, x2, t`.
pub fn gen_wave_membrane(cfg: &WaveConfig) -> Result<GappyDataset> {
    cfg.validate()?;
    let frames = simulate_wave(&smooth_initial_field(cfg), cfg)?;
    let (nx, ny, nt) = (cfg.nx, cfg.ny, cfg.nt);
    let mut y = vec![0.0; nx * ny * nt];
    for (t, frame) in frames.iter().enumerate() {
        for (s, v) in frame.iter().enumerate() {
            y[s * nt + t] = *v;
        }
    }
    let dt = cfg.resolved_dt();
    let grid = GridSpec::with_names(
        vec!["x1".into(), "x2".into(), "t".into()],
        vec![
            GridSpec::linspace(0.0, 1.0, nx),
            GridSpec::linspace(0.0, 1.0, ny),
            (0..nt).map(|k| k as f64 * dt).collect(),
        ],
    )?;
    GappyDataset::fully_observed(grid, y)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    #[test]
    fn edges_stay_clamped() {
        let cfg = WaveConfig { seed: 3, ..WaveConfig::new(9, 7, 12) };
        let data = gen_wave_membrane(&cfg).unwrap();
        assert_eq!(data.len(), 9 * 7 * 12);
        let y = data.y_full_oracle.as_ref().unwrap();
        for i in 0..9 {
            for j in 0..7 {
                if i == 0 || j == 0 || i == 8 || j == 6 {
                    assert!((0..12).all(|t| y[(i * 7 + j) * 12 + t] == 0.0));
                }
            }
        }
        assert!(y.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn zero_start_stays_zero() {
        let cfg = WaveConfig::new(8, 8, 10);
        let frames = simulate_wave(&[0.0; 64], &cfg).unwrap();
        assert!(frames.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn cfl_is_enforced() {
        let cfg = WaveConfig { dt: Some(0.75 / 8.0), ..WaveConfig::new(9, 9, 4) };
        assert!(matches!(gen_wave_membrane(&cfg), Err(Error::InvalidArgument(m)) if m.contains("CFL")));
        let ok = WaveConfig { dt: Some(0.7 / 8.0), ..WaveConfig::new(9, 9, 4) };
        assert!(gen_wave_membrane(&ok).is_ok());
    }

    #[test]
    fn single_mode_tracks_standing_wave() {
        let n = 33;
        let cfg = WaveConfig::new(n, n, 120);
        let x = GridSpec::linspace(0.0, 1.0, n);
        let u0: Vec<f64> = (0..n * n).map(|k| (PI * x[k / n]).sin() * (PI * x[k % n]).sin()).collect();
        let frames = simulate_wave(&u0, &cfg).unwrap();
        let omega = PI * 2f64.sqrt() * cfg.wave_speed;
        let dt = cfg.resolved_dt();
        let centre = (n / 2) * n + n / 2;
        let mut worst = 0.0f64;
        for (t, f) in frames.iter().enumerate() {
            let expected = (omega * t as f64 * dt).cos();
            worst = worst.max((f[centre] - expected).abs());
        }
        assert!(worst <= 0.02, "max deviation {worst}");
    }

    #[test]
    fn energy_is_conserved() {
        let cfg = WaveConfig { seed: 11, ..WaveConfig::new(20, 16, 300) };
        let u0 = smooth_initial_field(&cfg);
        let frames = simulate_wave(&u0, &cfg).unwrap();
        let e0 = wave_energy(&frames[0], &frames[1], &cfg);
        assert!(e0 > 0.0);
        for w in frames.windows(2) {
            let e = wave_energy(&w[0], &w[1], &cfg);
            assert!((e - e0).abs() <= 0.01 * e0, "{e} vs {e0}");
        }
    }

    #[test]
    fn generator_is_seeded() {
        let a = gen_wave_membrane(&WaveConfig { seed: 1, ..WaveConfig::new(6, 6, 5) }).unwrap();
        let b = gen_wave_membrane(&WaveConfig { seed: 1, ..WaveConfig::new(6, 6, 5) }).unwrap();
        let c = gen_wave_membrane(&WaveConfig { seed: 2, ..WaveConfig::new(6, 6, 5) }).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
