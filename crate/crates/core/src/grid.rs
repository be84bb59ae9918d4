//! Gappy grid datasets.
//!
//! A [`GridSpec`] is the full Cartesian product of per-axis coordinates. Grid
//! cells are addressed by a row-major linear index: axis 0 varies slowest and
//! the last axis fastest, which is the ordering under which `K_1 ⊗ … ⊗ K_d`
//! acts on a flattened vector. [`IndexSets`] splits the cells into observed
//! (`X`) and gap (`Z`) indices; [`select`] and [`scatter`] are the actions of
//! the selection matrices `W`/`V` and their transposes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    names: Vec<String>,
    axes: Vec<Vec<f64>>,
}

impl GridSpec {
    /// Builds a grid with default axis names `x1 … xd`.
    pub fn new(axes: Vec<Vec<f64>>) -> Result<Self> {
        let names = (1..=axes.len()).map(|l| format!("x{l}")).collect();
        Self::with_names(names, axes)
    }

    pub fn with_names(names: Vec<String>, axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidGrid("grid needs at least one axis".into()));
        }
        if names.len() != axes.len() {
            return Err(Error::InvalidGrid(format!("{} axis names for {} axes", names.len(), axes.len())));
        }
        for (l, name) in names.iter().enumerate() {
            if names[..l].contains(name) {
                return Err(Error::InvalidGrid(format!("duplicate axis name {name:?}")));
            }
        }
        for (l, axis) in axes.iter().enumerate() {
            if axis.is_empty() {
                return Err(Error::InvalidGrid(format!("axis {l} is empty")));
            }
            if axis.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidGrid(format!("axis {l} has non-finite coordinates")));
            }
            if axis.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidGrid(format!("axis {l} coordinates are not strictly increasing")));
            }
        }
        let total = axes
            .iter()
            .try_fold(1usize, |acc, a| acc.checked_mul(a.len()))
            .ok_or_else(|| Error::InvalidGrid("grid size overflows usize".into()))?;
        debug_assert!(total >= 1);
        Ok(Self { names, axes })
    }

    /// `n` evenly spaced points on `[lo, hi]` (a single point sits at `lo`).
    pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        match n {
            0 => Vec::new(),
            1 => vec![lo],
            _ => {
                let step = (hi - lo) / (n - 1) as f64;
                (0..n).map(|i| lo + step * i as f64).collect()
            }
        }
    }

    /// Uniform grid with `shape[l]` points on `[lo, hi]` along every axis.
    pub fn uniform(shape: &[usize], lo: f64, hi: f64) -> Result<Self> {
        Self::new(shape.iter().map(|&n| Self::linspace(lo, hi, n)).collect())
    }

    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn axis(&self, l: usize) -> &[f64] {
        &self.axes[l]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    /// Total number of grid cells `M`.
    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn flatten_index(&self, multi: &[usize]) -> Result<usize> {
        if multi.len() != self.ndim() {
            return Err(Error::DimensionMismatch { expected: self.ndim(), got: multi.len() });
        }
        let mut linear = 0;
        for (&i, axis) in multi.iter().zip(&self.axes) {
            if i >= axis.len() {
                return Err(Error::IndexOutOfRange { index: i, size: axis.len() });
            }
            linear = linear * axis.len() + i;
        }
        Ok(linear)
    }

    pub fn unflatten_index(&self, linear: usize) -> Result<Vec<usize>> {
        let size = self.len();
        if linear >= size {
            return Err(Error::IndexOutOfRange { index: linear, size });
        }
        Ok(unflatten(&self.shape(), linear))
    }

    /// Coordinates of grid cell `linear`.
    pub fn point(&self, linear: usize) -> Result<Vec<f64>> {
        let multi = self.unflatten_index(linear)?;
        Ok(multi.iter().zip(&self.axes).map(|(&i, a)| a[i]).collect())
    }
}

/// Row-major unflatten without bounds checks on `linear`.
pub(crate) fn unflatten(shape: &[usize], mut linear: usize) -> Vec<usize> {
    let mut multi = vec![0; shape.len()];
    for (slot, &m) in multi.iter_mut().zip(shape).rev() {
        *slot = linear % m;
        linear /= m;
    }
    multi
}

/// Partition of `{0, …, M-1}` into observed indices `X` and gap indices `Z`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSets {
    size: usize,
    observed: Vec<usize>,
    gaps: Vec<usize>,
}

impl IndexSets {
    /// Every cell observed.
    pub fn full(size: usize) -> Self {
        Self { size, observed: (0..size).collect(), gaps: Vec::new() }
    }

    /// `mask[i] == true` marks cell `i` as observed.
    pub fn from_mask(mask: &[bool]) -> Self {
        let (mut observed, mut gaps) = (Vec::new(), Vec::new());
        for (i, &m) in mask.iter().enumerate() {
            if m {
                observed.push(i);
            } else {
                gaps.push(i);
            }
        }
        Self { size: mask.len(), observed, gaps }
    }

    /// Builds the partition from an unordered list of gap indices.
    pub fn from_gaps(size: usize, gaps: &[usize]) -> Result<Self> {
        let mut mask = vec![true; size];
        for &g in gaps {
            if g >= size {
                return Err(Error::IndexOutOfRange { index: g, size });
            }
            if !mask[g] {
                return Err(Error::DuplicateIndex(g));
            }
            mask[g] = false;
        }
        Ok(Self::from_mask(&mask))
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Sorted observed indices `X` (length `N`).
    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    /// Sorted gap indices `Z` (length `L`).
    pub fn gaps(&self) -> &[usize] {
        &self.gaps
    }

    pub fn n_observed(&self) -> usize {
        self.observed.len()
    }

    pub fn n_gaps(&self) -> usize {
        self.gaps.len()
    }

    pub fn gappiness(&self) -> f64 {
        if self.size == 0 {
            0.0
        } else {
            self.gaps.len() as f64 / self.size as f64
        }
    }

    pub fn mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.size];
        for &i in &self.observed {
            mask[i] = true;
        }
        mask
    }
}

/// Gathers `v[idx[i]]` (the action of `W` or `V`).
pub fn select(v: &[f64], idx: &[usize]) -> Result<Vec<f64>> {
    idx.iter().map(|&i| v.get(i).copied().ok_or(Error::IndexOutOfRange { index: i, size: v.len() })).collect()
}

/// Places `s[i]` at `idx[i]` in a zero vector of length `size` (the action of
/// `Wᵀ` or `Vᵀ`).
pub fn scatter(s: &[f64], idx: &[usize], size: usize) -> Result<Vec<f64>> {
    if s.len() != idx.len() {
        return Err(Error::DimensionMismatch { expected: idx.len(), got: s.len() });
    }
    let mut out = vec![0.0; size];
    let mut seen = vec![false; size];
    for (&i, &value) in idx.iter().zip(s) {
        if i >= size {
            return Err(Error::IndexOutOfRange { index: i, size });
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::DuplicateIndex(i));
        }
        out[i] = value;
    }
    Ok(out)
}

// Unchecked variants for validated index sets in solver hot loops.

pub(crate) fn select_unchecked(v: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

pub(crate) fn scatter_unchecked(s: &[f64], idx: &[usize], size: usize) -> Vec<f64> {
    let mut out = vec![0.0; size];
    for (&i, &value) in idx.iter().zip(s) {
        out[i] = value;
    }
    out
}

/// A grid with responses observed on `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct GappyDataset {
    pub grid: GridSpec,
    pub idx: IndexSets,
    /// Responses on `X`, in grid order.
    pub y_obs: Vec<f64>,
    /// Ground truth on the full grid, kept for test harnesses.
    pub y_full_oracle: Option<Vec<f64>>,
}

impl GappyDataset {
    pub fn new(grid: GridSpec, idx: IndexSets, y_obs: Vec<f64>, y_full_oracle: Option<Vec<f64>>) -> Result<Self> {
        if idx.size() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: idx.size() });
        }
        if y_obs.len() != idx.n_observed() {
            return Err(Error::DimensionMismatch { expected: idx.n_observed(), got: y_obs.len() });
        }
        if y_obs.iter().any(|y| !y.is_finite()) {
            return Err(Error::NonFinite("observed responses".into()));
        }
        if let Some(full) = &y_full_oracle {
            if full.len() != grid.len() {
                return Err(Error::DimensionMismatch { expected: grid.len(), got: full.len() });
            }
        }
        Ok(Self { grid, idx, y_obs, y_full_oracle })
    }

    /// Fully observed dataset; the responses double as the oracle.
    pub fn fully_observed(grid: GridSpec, y: Vec<f64>) -> Result<Self> {
        let idx = IndexSets::full(grid.len());
        Self::new(grid, idx, y.clone(), Some(y))
    }

    /// Same responses under a different mask. Needs the full-grid oracle.
    pub fn with_mask(&self, idx: IndexSets) -> Result<Self> {
        let full = self
            .y_full_oracle
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("re-masking requires full-grid responses".into()))?;
        let y_obs = select(full, idx.observed())?;
        Self::new(self.grid.clone(), idx, y_obs, Some(full.clone()))
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(shape: &[usize]) -> GridSpec {
        GridSpec::uniform(shape, 0.0, 1.0).unwrap()
    }

    #[test]
    fn flatten_examples() {
        assert_eq!(grid(&[3, 4]).flatten_index(&[0, 0]).unwrap(), 0);
        assert_eq!(grid(&[3, 4]).flatten_index(&[1, 2]).unwrap(), 6);
        assert_eq!(grid(&[2, 2, 2]).flatten_index(&[1, 1, 1]).unwrap(), 7);
        assert!(matches!(grid(&[3, 4]).flatten_index(&[3, 0]), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn flatten_unflatten_exhaustive() {
        let g = grid(&[7, 3, 11, 4]);
        for i in 0..g.len() {
            let multi = g.unflatten_index(i).unwrap();
            assert_eq!(g.flatten_index(&multi).unwrap(), i);
        }
        assert!(g.unflatten_index(g.len()).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(vec![]).is_err());
        assert!(GridSpec::new(vec![vec![]]).is_err());
        assert!(GridSpec::new(vec![vec![0.0, 0.0]]).is_err());
        assert!(GridSpec::new(vec![vec![1.0, 0.0]]).is_err());
        assert!(GridSpec::new(vec![vec![0.0, f64::NAN]]).is_err());
        let g = GridSpec::new(vec![vec![0.0, 1.0], vec![2.0], vec![0.0, 1.0, 5.0]]).unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g.point(5).unwrap(), vec![1.0, 2.0, 5.0]);
    }

    #[test]
    fn select_examples() {
        let v = [5.0, 6.0, 7.0, 8.0];
        assert_eq!(select(&v, &[0, 2]).unwrap(), vec![5.0, 7.0]);
        assert_eq!(select(&v, &[0, 1, 2, 3]).unwrap(), v.to_vec());
        assert_eq!(select(&[1.0, 2.0, 3.0], &[]).unwrap(), Vec::<f64>::new());
        assert!(select(&v, &[4]).is_err());
    }

    #[test]
    fn scatter_examples() {
        assert_eq!(scatter(&[9.0], &[1], 3).unwrap(), vec![0.0, 9.0, 0.0]);
        assert_eq!(scatter(&[1.0, 2.0], &[0, 1], 2).unwrap(), vec![1.0, 2.0]);
        assert!(matches!(scatter(&[1.0, 2.0], &[1, 1], 3), Err(Error::DuplicateIndex(1))));
        assert!(scatter(&[1.0], &[3], 3).is_err());
        assert!(scatter(&[1.0], &[0, 1], 3).is_err());
    }

    #[test]
    fn index_sets_from_gaps() {
        let idx = IndexSets::from_gaps(6, &[4, 1]).unwrap();
        assert_eq!(idx.observed(), &[0, 2, 3, 5]);
        assert_eq!(idx.gaps(), &[1, 4]);
        assert!(IndexSets::from_gaps(6, &[1, 1]).is_err());
        assert!(IndexSets::from_gaps(6, &[6]).is_err());
        assert_eq!(IndexSets::from_mask(&idx.mask()), idx);
    }

    proptest! {
        #[test]
        fn scatter_select_round_trip(
            s in proptest::collection::vec(-1e3f64..1e3, 7),
            seed in any::<u64>(),
        ) {
            use rand::{seq::index::sample, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut idx = sample(&mut rng, 20, 7).into_vec();
            idx.sort_unstable();
            let full = scatter(&s, &idx, 20).unwrap();
            prop_assert_eq!(select(&full, &idx).unwrap(), s);
        }

        #[test]
        fn selections_partition_identity(
            v in proptest::collection::vec(-1e3f64..1e3, 1..40),
            bits in any::<u64>(),
        ) {
            let mask: Vec<bool> = (0..v.len()).map(|i| bits >> (i % 64) & 1 == 1).collect();
            let idx = IndexSets::from_mask(&mask);
            let m = v.len();
            let x = scatter(&select(&v, idx.observed()).unwrap(), idx.observed(), m).unwrap();
            let z = scatter(&select(&v, idx.gaps()).unwrap(), idx.gaps(), m).unwrap();
            let sum: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a + b).collect();
            prop_assert_eq!(sum, v);
            prop_assert_eq!(idx.n_observed() + idx.n_gaps(), m);
        }
    }
}
