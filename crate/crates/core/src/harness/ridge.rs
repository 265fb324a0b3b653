use rayon::prelude::*;

use super::config::RidgeGrid;
use super::{cell, Table};
use crate::datasets::{gen_linear_regression, rotate_theta, ShiftBasis};
use crate::models::fit_ridge;
use crate::rng::derive_seed;
use crate::sharpness::ridge_sharpness;
use crate::Result;

pub const RIDGE_HEADER: [&str; 5] = ["beta", "alpha", "test_loss", "kappa", "seed"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgeRow {
    pub beta: f64,
    pub alpha: f64,
    pub test_loss: f64,
    pub kappa: f64,
    pub seed: u64,
}

/// Fits ridge at `α = 0` for every `(seed, β)` and scores it on a fixed
/// test design relabeled by `θ*_α` for every `α`.
///
/// Rows are ordered seed-major, then `β`, then `α`.
pub fn run_ridge_shift(grid: &RidgeGrid, seeds: &[u64]) -> Result<Vec<RidgeRow>> {
    let jobs: Vec<(u64, f64)> = seeds.iter().flat_map(|&s| grid.betas.iter().map(move |&b| (s, b))).collect();
    let blocks = jobs
        .par_iter()
        .map(|&(seed, beta)| -> Result<Vec<RidgeRow>> {
            let basis = ShiftBasis::random(grid.d, derive_seed(seed, "ridge-basis"))?;
            let train = gen_linear_regression(basis.theta0(), grid.n, derive_seed(seed, "ridge-train"))?;
            let test = gen_linear_regression(basis.theta0(), grid.n_test, derive_seed(seed, "ridge-test"))?;
            let model = fit_ridge(train.features(), train.labels(), beta)?;
            let kappa = ridge_sharpness(&model, train.features(), grid.convention)?.kappa;
            Ok(grid
                .alphas
                .iter()
                .map(|&alpha| {
                    let y = test.features().dot(&rotate_theta(&basis, alpha));
                    RidgeRow { beta, alpha, test_loss: model.mse(test.features(), y.view()), kappa, seed }
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(blocks.into_iter().flatten().collect())
}

pub(super) fn table(rows: &[RidgeRow]) -> Table {
    let mut t = Table::new(&RIDGE_HEADER);
    for r in rows {
        t.push(vec![cell(r.beta), cell(r.alpha), cell(r.test_loss), cell(r.kappa), r.seed.to_string()]);
    }
    t
}
