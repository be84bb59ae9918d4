//! Synthetic workloads, gap masking, dense reference solutions and the
//! experiment runners that time the gap formulations against each other.

mod oracle;
mod sweep;
mod wave;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::{GappyDataset, GridSpec, IndexSets};

pub use oracle::{DenseOracle, OracleSolution, DEFAULT_ORACLE_CAP};
pub use sweep::{
    precon_summary_csv, run_gappiness_sweep, run_precon_study, sweep_csv, DataSource, MethodSpec, PreconStudy,
    PreconStudyConfig, PreconSummaryRow, SweepConfig, SweepRow, CSV_COLUMNS,
};
pub use wave::{gen_wave_membrane, simulate_wave, wave_energy, WaveConfig};

/// Default Rastrigin domain `[-2, 2]²`.
pub const RASTRIGIN_DOMAIN: (f64, f64) = (-2.0, 2.0);

/// Seeded generator used for every stochastic step.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a base seed with stream identifiers (SplitMix64 finalizer).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// `20 + Σ (x_i² − 10 cos 2πx_i)` for `d = 2`.
pub fn rastrigin(x: &[f64]) -> f64 {
    20.0 + x.iter().map(|&v| v * v - 10.0 * (2.0 * std::f64::consts::PI * v).cos()).sum::<f64>()
}

/// `nx × ny` grid on the Rastrigin domain.
pub fn rastrigin_grid(nx: usize, ny: usize) -> Result<GridSpec> {
    let (lo, hi) = RASTRIGIN_DOMAIN;
    GridSpec::new(vec![GridSpec::linspace(lo, hi, nx), GridSpec::linspace(lo, hi, ny)])
}

pub fn gen_rastrigin(grid: &GridSpec) -> Result<GappyDataset> {
    if grid.ndim() != 2 {
        return Err(Error::InvalidArgument(format!("Rastrigin needs a 2-d grid, got d = {}", grid.ndim())));
    }
    let y = (0..grid.len()).map(|i| rastrigin(&grid.point(i).unwrap())).collect();
    GappyDataset::fully_observed(grid.clone(), y)
}

/// Independent standard-normal responses on every cell.
pub fn gen_white_noise(grid: &GridSpec, seed: u64) -> Result<GappyDataset> {
    let mut rng = rng_from_seed(seed);
    let y = (0..grid.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    GappyDataset::fully_observed(grid.clone(), y)
}

/// Marks `round(gappiness · M)` cells, drawn uniformly without replacement,
/// as gaps. Needs full-grid responses.
pub fn apply_gaps(data: &GappyDataset, gappiness: f64, seed: u64) -> Result<GappyDataset> {
    if !(0.0..1.0).contains(&gappiness) {
        return Err(Error::InvalidArgument(format!("gappiness must lie in [0, 1), got {gappiness}")));
    }
    let m = data.len();
    let l = (gappiness * m as f64).round() as usize;
    let l = l.min(m - 1);
    let mut rng = rng_from_seed(seed);
    let gaps = rand::seq::index::sample(&mut rng, m, l).into_vec();
    data.with_mask(IndexSets::from_gaps(m, &gaps)?)
}
