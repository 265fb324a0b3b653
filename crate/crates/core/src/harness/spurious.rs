use rayon::prelude::*;
use serde_json::Value;

use super::config::{BoundCompareGrid, BoundLoss, BoundSettings, SpuriousData, SpuriousGrid, SweepKind, TrainSettings};
use super::{cell, Table};
use crate::bounds::{
    empirical_dis_rho, is_degenerate_partition, pacbayes_bound, proxy_a_distance, robust_ood_bound, sharpness_robustness_rhs_with, zhao_bound,
    BoundMethod, BoundReport, GaussianPosterior,
};
use crate::datasets::{gen_spurious, worst_group_error, zero_one_error};
use crate::models::{logistic_loss, train_rf_logistic, RfTrainConfig};
use crate::rng::derive_seed;
use crate::robustness::{build_partition_with, cell_counts, empirical_epsilon, tv_distance, EpsilonEstimate};
use crate::sharpness::{rf_logistic_curvatures, rf_sharpness};
use crate::Result;

pub const SWEEP_HEADER: [&str; 24] = [
    "sweep",
    "m",
    "p_maj",
    "seed",
    "overparameterized",
    "worst_group_error",
    "test_error",
    "source_risk",
    "M",
    "dtv",
    "epsilon_hat",
    "epsilon_pairs",
    "proxy_dist",
    "dis_hat",
    "kl",
    "kappa",
    "n_prime",
    "epsilon_sharpness_rhs",
    "robust_concentration",
    "zhao_concentration",
    "bound_robust",
    "bound_zhao",
    "bound_pacbayes",
    "degenerate",
];

/// Every measured ingredient and bound at one `(seed, width, p_maj)` point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub seed: u64,
    pub width: usize,
    pub p_maj: f64,
    pub worst_group_error: f64,
    pub test_error: f64,
    /// Mean training loss under the bound loss.
    pub source_risk: f64,
    /// Loss bound `M`: 1 for the 0-1 loss, the largest observed loss over train ∪ target for the logistic loss.
    pub m_loss: f64,
    pub dtv: f64,
    pub epsilon: EpsilonEstimate,
    pub proxy_dist: f64,
    pub dis_hat: f64,
    pub kl: f64,
    pub kappa: f64,
    pub n_prime: f64,
    pub epsilon_sharpness_rhs: f64,
    /// Whether the partition was fine enough to delegate to the Zhao baseline.
    pub degenerate: bool,
    pub robust: BoundReport,
    pub zhao: BoundReport,
    pub pacbayes: BoundReport,
}

fn sign(f: f64) -> f64 {
    if f >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Generates the source (at `p_maj`) and target samples, trains the
/// random-feature logistic head and evaluates all three bounds.
///
/// Data streams depend only on `seed` and the direction stream only on
/// `(seed, width)`, so points that share them see the same draws.
pub fn evaluate_point(
    data: &SpuriousData,
    train_cfg: &TrainSettings,
    bounds: &BoundSettings,
    width: usize,
    p_maj: f64,
    seed: u64,
) -> Result<PointResult> {
    let train = gen_spurious(&data.source(p_maj, derive_seed(seed, "spurious-source")))?;
    let target = gen_spurious(&data.target(derive_seed(seed, "spurious-target")))?;
    let net = train_rf_logistic(
        &train,
        &RfTrainConfig {
            width,
            steps: train_cfg.steps,
            step_size: train_cfg.step_size,
            l2: train_cfg.l2,
            seed: derive_seed(seed, &format!("rf-width-{width}")),
        },
    )?;

    let loss = |f: f64, y: f64| match bounds.loss {
        BoundLoss::ZeroOne => f64::from(sign(f) != y),
        BoundLoss::Logistic => logistic_loss(y * f),
    };
    let out_train = net.predict(train.features());
    let out_target = net.predict(target.features());
    let train_losses: Vec<f64> = out_train.iter().zip(train.labels()).map(|(&f, &y)| loss(f, y)).collect();
    let source_risk = train_losses.iter().sum::<f64>() / train.len() as f64;
    let m_loss = match bounds.loss {
        BoundLoss::ZeroOne => 1.0,
        BoundLoss::Logistic => {
            out_target.iter().zip(target.labels()).map(|(&f, &y)| loss(f, y)).chain(train_losses.iter().copied()).fold(0.0, f64::max)
        }
    };
    let target_preds: Vec<f64> = out_target.iter().map(|&f| sign(f)).collect();
    let worst = worst_group_error(&target_preds, &target)?;
    let test_error = zero_one_error(&target_preds, target.labels())?;

    let partition = build_partition_with(&train, bounds.k_target, bounds.proj_dim, derive_seed(seed, "partition"))?;
    let dtv = tv_distance(&cell_counts(&partition, &train)?, &cell_counts(&partition, &target)?)?;
    let loss_of = |x: ndarray::ArrayView1<'_, f64>, y: f64| -> f64 { loss(net.features(x.insert_axis(ndarray::Axis(0))).row(0).dot(&net.head()), y) };
    let epsilon = empirical_epsilon(&partition, loss_of, &train, &target)?;

    let sharp = rf_sharpness(&net, &train, &rf_logistic_curvatures(&net, &train))?;
    let epsilon_sharpness_rhs = sharpness_robustness_rhs_with(
        bounds.rho_max,
        bounds.lipschitz,
        sharp.n_prime_hat,
        net.input_dim(),
        width,
        sharp.kappa,
        bounds.dim_ratio_constant,
    )?;

    let n = train.len();
    let proxy_dist = proxy_a_distance(train.features(), target.features(), derive_seed(seed, "proxy"))?;
    let zhao = zhao_bound(source_risk, proxy_dist, width + 1, n, bounds.delta)?;
    let degenerate = is_degenerate_partition(partition.k, n, bounds.degenerate_ratio);
    let robust = if degenerate {
        BoundReport { method: BoundMethod::Robust, ..zhao.clone() }.with_extra("degenerate", true).with_extra("delegated_to", "zhao")
    } else {
        robust_ood_bound(source_risk, m_loss, dtv, epsilon.epsilon, partition.k, n, bounds.delta)?
            .with_extra("degenerate", false)
            .with_extra("loss", bounds.loss.name())
            .with_extra("epsilon_pairs", epsilon.pair_count)
    };

    let posterior = GaussianPosterior::relative(net.head().to_owned(), bounds.posterior_scale)?;
    let phi_train = net.features(train.features());
    let phi_target = net.features(target.features());
    let dis_hat = empirical_dis_rho(&posterior, phi_train.view(), phi_target.view(), bounds.dis_draws, derive_seed(seed, "dis-rho"))?;
    let kl = posterior.kl();
    let pacbayes = pacbayes_bound(source_risk, dis_hat, kl, n, bounds.pacbayes_alpha, bounds.delta)?;

    Ok(PointResult {
        seed,
        width,
        p_maj,
        worst_group_error: worst,
        test_error,
        source_risk,
        m_loss,
        dtv,
        epsilon,
        proxy_dist,
        dis_hat,
        kl,
        kappa: sharp.kappa,
        n_prime: sharp.n_prime_hat,
        epsilon_sharpness_rhs,
        degenerate,
        robust,
        zhao,
        pacbayes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sweep: SweepKind,
    pub overparameterized: bool,
    pub point: PointResult,
}

/// Model-size sweep at the training correlation, then the correlation sweep
/// at the fixed width; rows are ordered sweep, grid value, seed.
pub fn run_spurious_sweep(grid: &SpuriousGrid, seeds: &[u64]) -> Result<Vec<SweepRow>> {
    let mut jobs: Vec<(SweepKind, usize, f64, u64)> = Vec::new();
    for &sweep in &grid.sweeps {
        match sweep {
            SweepKind::Width => {
                for &m in &grid.widths {
                    jobs.extend(seeds.iter().map(|&s| (sweep, m, grid.data.p_maj_train, s)));
                }
            }
            SweepKind::PMaj => {
                for &p in &grid.p_majs {
                    jobs.extend(seeds.iter().map(|&s| (sweep, grid.fixed_width, p, s)));
                }
            }
        }
    }
    jobs.par_iter()
        .map(|&(sweep, m, p, s)| {
            let point = evaluate_point(&grid.data, &grid.train, &grid.bounds, m, p, s)?;
            Ok(SweepRow { sweep, overparameterized: m > grid.overparameterized_above, point })
        })
        .collect()
}

/// One robust, Zhao and PAC-Bayes report per seed, with the seed recorded in `extra_json`.
pub fn run_bound_compare(grid: &BoundCompareGrid, seeds: &[u64]) -> Result<Vec<BoundReport>> {
    let points = seeds
        .par_iter()
        .map(|&s| evaluate_point(&grid.data, &grid.train, &grid.bounds, grid.width, grid.data.p_maj_train, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(points
        .into_iter()
        .flat_map(|p| {
            let seed = Value::from(p.seed);
            [p.robust, p.zhao, p.pacbayes].map(|r| r.with_extra("seed", seed.clone()).with_extra("m", p.width))
        })
        .collect())
}

pub(super) fn sweep_table(rows: &[SweepRow]) -> Table {
    let mut t = Table::new(&SWEEP_HEADER);
    for r in rows {
        let p = &r.point;
        t.push(vec![
            r.sweep.name().to_string(),
            p.width.to_string(),
            cell(p.p_maj),
            p.seed.to_string(),
            r.overparameterized.to_string(),
            cell(p.worst_group_error),
            cell(p.test_error),
            cell(p.source_risk),
            cell(p.m_loss),
            cell(p.dtv),
            cell(p.epsilon.epsilon),
            p.epsilon.pair_count.to_string(),
            cell(p.proxy_dist),
            cell(p.dis_hat),
            cell(p.kl),
            cell(p.kappa),
            cell(p.n_prime),
            cell(p.epsilon_sharpness_rhs),
            cell(p.robust.concentration_term),
            cell(p.zhao.concentration_term),
            cell(p.robust.total),
            cell(p.zhao.total),
            cell(p.pacbayes.total),
            p.degenerate.to_string(),
        ]);
    }
    t
}
