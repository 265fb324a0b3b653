use ndarray::Array2;
use rayon::prelude::*;

use super::config::DiagGrid;
use super::{cell, Table};
use crate::datasets::gen_linear_regression;
use crate::models::{diag_step, diag_theta, exp_loss, DiagonalNetState};
use crate::rng::{derive_seed, stream};
use crate::sharpness::{diag_sharpness, estimate_n_prime};
use crate::{Error, Result};

pub const DIAG_HEADER: [&str; 6] = ["t", "loss", "kappa", "epsilon_proxy", "c2_times_sup_kappa", "seed"];

/// One logged step; the robustness columns are `None` before `T_ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagRow {
    pub t: usize,
    pub loss: f64,
    pub kappa: f64,
    pub epsilon_proxy: Option<f64>,
    pub c2_times_sup_kappa: Option<f64>,
    pub seed: u64,
}

/// Folded design `[d × n]` with columns `yᵢxᵢ`, `x ~ N(0, I)` and
/// `y = sign(⟨w*, x⟩)` for a Gaussian `w*`.
pub fn folded_design(n: usize, d: usize, seed: u64) -> Result<Array2<f64>> {
    let mut r = stream(seed, "diag-teacher");
    let teacher = ndarray::Array1::from_shape_simple_fn(d, || rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut r));
    let data = gen_linear_regression(teacher.view(), n, derive_seed(seed, "diag-inputs"))?;
    let mut x = data.features().t().to_owned();
    for (mut col, &y) in x.columns_mut().into_iter().zip(data.labels()) {
        if y < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
    Ok(x)
}

struct Logged {
    t: usize,
    loss: f64,
    kappa: f64,
    theta_sq: f64,
    r_l1: f64,
    r_min: f64,
    n_prime: f64,
}

/// Gradient descent on the exp-loss from `u₊ = u₋ = α·1`, logging loss and
/// sharpness every `log_every` steps.
///
/// After `T_ε`, `n′` is the largest per-step estimate, `C₁` the smallest
/// `‖θ‖²`, and `C₂ = n′/(C₁‖x_min‖)`. Each tail row carries the robustness
/// proxy `n′(‖r‖₁ − min r)` and `C₂ · sup κ` over the tail.
pub fn run_diag_trajectory(grid: &DiagGrid, seeds: &[u64]) -> Result<Vec<DiagRow>> {
    let blocks = seeds.par_iter().map(|&seed| trajectory(grid, seed)).collect::<Result<Vec<_>>>()?;
    Ok(blocks.into_iter().flatten().collect())
}

fn trajectory(grid: &DiagGrid, seed: u64) -> Result<Vec<DiagRow>> {
    let x = folded_design(grid.n, grid.d, seed)?;
    let mut state = DiagonalNetState::init(grid.d, grid.alpha_init)?;
    let mut log = Vec::new();
    for t in 0..=grid.steps {
        if t % grid.log_every == 0 || t == grid.steps {
            let theta = diag_theta(&state);
            let (loss, r) = exp_loss(theta.view(), x.view())?;
            let report = diag_sharpness(theta.view(), x.view(), r.view())?;
            log.push(Logged {
                t,
                loss,
                kappa: report.kappa,
                theta_sq: report.param_sq_norm,
                r_l1: r.sum(),
                r_min: r.iter().copied().fold(f64::INFINITY, f64::min),
                n_prime: estimate_n_prime(&report.per_sample_trace)?,
            });
        }
        if t < grid.steps {
            state = diag_step(&state, x.view(), grid.lr)?;
        }
    }

    let t_eps = (grid.t_eps_fraction * grid.steps as f64).ceil() as usize;
    let tail: Vec<&Logged> = log.iter().filter(|l| l.t >= t_eps).collect();
    let n_prime = tail.iter().map(|l| l.n_prime).fold(0.0, f64::max);
    let c1 = tail.iter().map(|l| l.theta_sq).fold(f64::INFINITY, f64::min);
    let x_min = x.columns().into_iter().map(|c| c.dot(&c).sqrt()).fold(f64::INFINITY, f64::min);
    if !(c1 > 0.0) || !(x_min > 0.0) {
        return Err(Error::NonFinite("C₂ undefined: ‖θ‖² or ‖x_min‖ vanishes after T_ε".into()));
    }
    let c2 = n_prime / (c1 * x_min);
    let sup_kappa = tail.iter().map(|l| l.kappa).fold(0.0, f64::max);

    Ok(log
        .iter()
        .map(|l| {
            let after = l.t >= t_eps;
            DiagRow {
                t: l.t,
                loss: l.loss,
                kappa: l.kappa,
                epsilon_proxy: after.then_some(n_prime * (l.r_l1 - l.r_min)),
                c2_times_sup_kappa: after.then_some(c2 * sup_kappa),
                seed,
            }
        })
        .collect())
}

pub(super) fn table(rows: &[DiagRow]) -> Table {
    let opt = |v: Option<f64>| v.map(cell).unwrap_or_default();
    let mut t = Table::new(&DIAG_HEADER);
    for r in rows {
        t.push(vec![r.t.to_string(), cell(r.loss), cell(r.kappa), opt(r.epsilon_proxy), opt(r.c2_times_sup_kappa), r.seed.to_string()]);
    }
    t
}
