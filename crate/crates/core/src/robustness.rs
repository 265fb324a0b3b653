//! Partition of the input space into `K = g³` cells through a random
//! nonnegative projection, plus the statistics computed over it: cell
//! occupancy, partition total-variation distance and the empirical
//! robustness constant.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datasets::LabeledDataset;
use crate::rng;
use crate::{Error, Result};

pub const DEFAULT_PROJ_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// `[p × d]`, rows nonnegative and summing to one.
    pub proj: Array2<f64>,
    /// Cells per projected axis.
    pub grid: usize,
    /// Per-input-dimension `(min, max)` taken from the reference set.
    pub feature_bounds: Vec<(f64, f64)>,
    pub k: usize,
    pub seed: u64,
}

/// Grid resolution for a target cell count: `round(K^{1/p})`, at least 1.
pub fn grid_for(k_target: usize, proj_dim: usize) -> usize {
    let g = (k_target as f64).powf(1.0 / proj_dim as f64).round() as usize;
    g.max(1)
}

/// Draws the projection with `U(0,1)` entries, row-normalized, and freezes the
/// per-dimension rescaling bounds of `reference`.
pub fn build_partition(reference: &LabeledDataset, k_target: usize, seed: u64) -> Result<Partition> {
    build_partition_with(reference, k_target, DEFAULT_PROJ_DIM, seed)
}

pub fn build_partition_with(reference: &LabeledDataset, k_target: usize, proj_dim: usize, seed: u64) -> Result<Partition> {
    if k_target == 0 {
        return Err(Error::invalid("K_target must be ≥ 1"));
    }
    if proj_dim == 0 {
        return Err(Error::invalid("projection dimension must be ≥ 1"));
    }
    let d = reference.dim();
    if d == 0 {
        return Err(Error::invalid("reference set has no input dimensions"));
    }
    let mut r = rng::stream(seed, "partition-projection");
    let mut proj = Array2::from_shape_simple_fn((proj_dim, d), || r.random::<f64>());
    for mut row in proj.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    let feature_bounds = if reference.is_empty() {
        vec![(0.0, 1.0); d]
    } else {
        reference
            .features()
            .axis_iter(Axis(1))
            .map(|col| {
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            })
            .collect()
    };
    let grid = grid_for(k_target, proj_dim);
    Ok(Partition { proj, grid, feature_bounds, k: grid.pow(proj_dim as u32), seed })
}

impl Partition {
    pub fn proj_dim(&self) -> usize {
        self.proj.nrows()
    }

    /// Rescales into `[0,1]^d` by the frozen bounds, clamping outliers.
    /// Constant dimensions use a unit-width interval.
    pub fn rescale(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        Array1::from_iter(x.iter().zip(&self.feature_bounds).map(|(&v, &(lo, hi))| {
            let width = if hi > lo { hi - lo } else { 1.0 };
            ((v - lo) / width).clamp(0.0, 1.0)
        }))
    }

    /// Projected coordinates `u = A·x̃ ∈ [0,1]^p`.
    pub fn project(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if x.len() != self.feature_bounds.len() {
            return Err(Error::dims(format!("input of length {} for a partition over {} dims", x.len(), self.feature_bounds.len())));
        }
        Ok(self.proj.dot(&self.rescale(x)))
    }

    /// Cell of a projected point: `Σₖ floor(min(uₖ·g, g−1))·gᵏ`.
    pub fn cell_of_projected(&self, u: ArrayView1<'_, f64>) -> usize {
        let g = self.grid;
        let mut id = 0;
        let mut stride = 1;
        for &uk in u {
            let bin = (uk * g as f64).floor().clamp(0.0, (g - 1) as f64) as usize;
            id += bin * stride;
            stride *= g;
        }
        id
    }
}

/// Cell id in `[0, K)` of an input point.
pub fn assign_cell(p: &Partition, x: ArrayView1<'_, f64>) -> Result<usize> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("input point".into()));
    }
    let u = p.project(x)?;
    Ok(p.cell_of_projected(u.view()))
}

/// Occupancy histogram over cells; only occupied cells are stored.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CellCounts {
    pub counts: BTreeMap<usize, usize>,
    pub total: usize,
}

impl CellCounts {
    pub fn from_cells(cells: impl IntoIterator<Item = usize>) -> Self {
        let mut counts = BTreeMap::new();
        let mut total = 0;
        for c in cells {
            *counts.entry(c).or_insert(0) += 1;
            total += 1;
        }
        Self { counts, total }
    }

    pub fn get(&self, cell: usize) -> usize {
        self.counts.get(&cell).copied().unwrap_or(0)
    }

    /// `cell_id,count` rows, ascending by cell.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        w.write_record(["cell_id", "count"])?;
        for (c, n) in &self.counts {
            w.write_record([c.to_string(), n.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Cell id of every row.
pub fn assign_cells(p: &Partition, data: &LabeledDataset) -> Result<Vec<usize>> {
    data.features().rows().into_iter().map(|row| assign_cell(p, row)).collect()
}

pub fn cell_counts(p: &Partition, data: &LabeledDataset) -> Result<CellCounts> {
    Ok(CellCounts::from_cells(assign_cells(p, data)?))
}

/// `Σᵢ |aᵢ/|a| − bᵢ/|b||` over the union of occupied cells, evaluated as
/// `Σᵢ |aᵢ|b| − bᵢ|a|| / (|a||b|)`.
pub fn tv_distance(a: &CellCounts, b: &CellCounts) -> Result<f64> {
    if a.total == 0 || b.total == 0 {
        return Err(Error::Empty("TV distance needs two nonempty count sets".into()));
    }
    // exact integer arithmetic up to the final division, symmetric in (a, b)
    let (na, nb) = (a.total as u128, b.total as u128);
    let cells: BTreeSet<usize> = a.counts.keys().chain(b.counts.keys()).copied().collect();
    let numerator: u128 = cells.into_iter().map(|c| (a.get(c) as u128 * nb).abs_diff(b.get(c) as u128 * na)).sum();
    Ok(numerator as f64 / (na * nb) as f64)
}

/// Empirical robustness constant with its coverage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonEstimate {
    /// Largest `|ℓ(s) − ℓ(z)|` over cells, `s` a train point and `z` a train or probe point in the same cell.
    pub epsilon: f64,
    /// Number of `(s, z)` pairs examined, counting `s = z`.
    pub pair_count: u64,
    /// Cells holding at least one train point.
    pub train_cells: usize,
}

/// Lower estimate of the robustness constant `ε(S)` from train and probe points.
pub fn empirical_epsilon<F>(p: &Partition, loss_of: F, train: &LabeledDataset, probe: &LabeledDataset) -> Result<EpsilonEstimate>
where
    F: Fn(ArrayView1<'_, f64>, f64) -> f64,
{
    #[derive(Clone, Copy)]
    struct Span {
        train_min: f64,
        train_max: f64,
        all_min: f64,
        all_max: f64,
        n_train: u64,
        n_all: u64,
    }
    let mut cells: BTreeMap<usize, Span> = BTreeMap::new();
    let empty =
        Span { train_min: f64::INFINITY, train_max: f64::NEG_INFINITY, all_min: f64::INFINITY, all_max: f64::NEG_INFINITY, n_train: 0, n_all: 0 };
    for (set, is_train) in [(train, true), (probe, false)] {
        for (i, row) in set.features().rows().into_iter().enumerate() {
            let cell = assign_cell(p, row)?;
            let loss = loss_of(row, set.labels()[i]);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("loss at sample {i}")));
            }
            let s = cells.entry(cell).or_insert(empty);
            if is_train {
                s.train_min = s.train_min.min(loss);
                s.train_max = s.train_max.max(loss);
                s.n_train += 1;
            }
            s.all_min = s.all_min.min(loss);
            s.all_max = s.all_max.max(loss);
            s.n_all += 1;
        }
    }
    let mut est = EpsilonEstimate { epsilon: 0.0, pair_count: 0, train_cells: 0 };
    for s in cells.values().filter(|s| s.n_train > 0) {
        let spread = (s.all_max - s.train_min).max(s.train_max - s.all_min);
        est.epsilon = est.epsilon.max(spread);
        est.pair_count += s.n_train * s.n_all;
        est.train_cells += 1;
    }
    Ok(est)
}
