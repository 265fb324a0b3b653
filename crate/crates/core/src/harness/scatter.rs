use rayon::prelude::*;

use super::config::ScatterGrid;
use super::{cell, spearman, Table};
use crate::datasets::{gen_spurious, worst_group_error};
use crate::models::{mean_logistic_loss, train_rf_logistic, RfTrainConfig};
use crate::rng::derive_seed;
use crate::sharpness::{rf_logistic_curvatures, rf_sharpness};
use crate::Result;

pub const SCATTER_HEADER: [&str; 8] = ["model_id", "seed", "m", "l2", "kappa", "ood_error", "train_loss", "spearman"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterRow {
    pub model_id: usize,
    pub seed: u64,
    pub width: usize,
    pub l2: f64,
    pub kappa: f64,
    /// Worst-group error on the shifted target.
    pub ood_error: f64,
    pub train_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterResult {
    pub rows: Vec<ScatterRow>,
    /// Spearman correlation between `kappa` and `ood_error`.
    pub spearman: f64,
}

/// Trains one model per `(seed, l2, width)` and pairs its sharpness with its
/// OOD worst-group error. Model ids follow that nesting order.
pub fn run_sharpness_scatter(grid: &ScatterGrid, seeds: &[u64]) -> Result<ScatterResult> {
    let mut jobs = Vec::new();
    for &seed in seeds {
        for &l2 in &grid.l2s {
            for &width in &grid.widths {
                jobs.push((seed, l2, width));
            }
        }
    }
    let rows = jobs
        .par_iter()
        .enumerate()
        .map(|(model_id, &(seed, l2, width))| -> Result<ScatterRow> {
            let train = gen_spurious(&grid.data.source(grid.data.p_maj_train, derive_seed(seed, "spurious-source")))?;
            let target = gen_spurious(&grid.data.target(derive_seed(seed, "spurious-target")))?;
            let cfg = RfTrainConfig {
                width,
                steps: grid.train.steps,
                step_size: grid.train.step_size,
                l2,
                seed: derive_seed(seed, &format!("rf-width-{width}")),
            };
            let net = train_rf_logistic(&train, &cfg)?;
            let kappa = rf_sharpness(&net, &train, &rf_logistic_curvatures(&net, &train))?.kappa;
            let preds: Vec<f64> = net.predict(target.features()).iter().map(|&f| if f >= 0.0 { 1.0 } else { -1.0 }).collect();
            let train_loss = mean_logistic_loss(net.features(train.features()).view(), train.labels(), net.head());
            Ok(ScatterRow { model_id, seed, width, l2, kappa, ood_error: worst_group_error(&preds, &target)?, train_loss })
        })
        .collect::<Result<Vec<_>>>()?;
    let kappas: Vec<f64> = rows.iter().map(|r| r.kappa).collect();
    let errors: Vec<f64> = rows.iter().map(|r| r.ood_error).collect();
    let rho = spearman(&kappas, &errors)?;
    Ok(ScatterResult { rows, spearman: rho })
}

/// Model rows with an empty `spearman` cell, then a `summary` row holding only `spearman`.
pub(super) fn table(result: &ScatterResult) -> Table {
    let mut t = Table::new(&SCATTER_HEADER);
    for r in &result.rows {
        t.push(vec![
            r.model_id.to_string(),
            r.seed.to_string(),
            r.width.to_string(),
            cell(r.l2),
            cell(r.kappa),
            cell(r.ood_error),
            cell(r.train_loss),
            String::new(),
        ]);
    }
    let mut summary = vec![String::new(); SCATTER_HEADER.len()];
    summary[0] = "summary".into();
    summary[7] = cell(result.spearman);
    t.push(summary);
    t
}
