//! The robust OOD bound, its sharpness-substituted robustness term, and the
//! two baselines it is compared against.

use std::f64::consts::{E, LN_2, PI};
use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::models::{gram_top_eigenvalue, logistic_gd};
use crate::rng;
use crate::{Error, Result};

pub const DEFAULT_DELTA: f64 = 0.05;
/// `K > ratio·n` switches the robust bound to its degenerate (Zhao) form.
pub const DEFAULT_DEGENERATE_RATIO: f64 = 100.0;
/// Constant standing in for `O(d/m)` in the sharpness RHS.
pub const DEFAULT_DIM_RATIO_CONSTANT: f64 = 1.0;

pub const BOUND_CSV_HEADER: [&str; 11] =
    ["method", "source_risk", "distance", "robustness", "concentration", "total", "M", "K", "n", "delta", "extra_json"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundMethod {
    Robust,
    Zhao,
    Pacbayes,
}

impl BoundMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundMethod::Robust => "robust",
            BoundMethod::Zhao => "zhao",
            BoundMethod::Pacbayes => "pacbayes",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    #[serde(rename = "M")]
    pub m_loss: Option<f64>,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub n: usize,
    pub delta: f64,
    /// Method-specific values (`d_prime`, `alpha`, `kl`, flags), key-sorted.
    pub extra: Map<String, Value>,
}

/// A bound split into its additive terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub method: BoundMethod,
    pub empirical_source_risk: f64,
    pub distance_term: f64,
    pub robustness_term: f64,
    pub concentration_term: f64,
    pub total: f64,
    pub params: BoundParams,
}

impl BoundReport {
    pub fn csv_record(&self) -> Vec<String> {
        let opt = |v: Option<String>| v.unwrap_or_default();
        vec![
            self.method.as_str().to_string(),
            self.empirical_source_risk.to_string(),
            self.distance_term.to_string(),
            self.robustness_term.to_string(),
            self.concentration_term.to_string(),
            self.total.to_string(),
            opt(self.params.m_loss.map(|v| v.to_string())),
            opt(self.params.k.map(|v| v.to_string())),
            self.params.n.to_string(),
            self.params.delta.to_string(),
            Value::Object(self.params.extra.clone()).to_string(),
        ]
    }

    pub fn with_extra(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.extra.insert(key.to_string(), value.into());
        self
    }
}

pub fn write_bound_csv<W: Write>(reports: &[BoundReport], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record(BOUND_CSV_HEADER)?;
    for r in reports {
        w.write_record(r.csv_record())?;
    }
    w.flush()?;
    Ok(())
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")))
    }
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be finite and ≥ 0, got {v}")))
    }
}

/// `3M √((2K ln 2 + 2 ln(2/δ)) / n)`.
pub fn concentration_term(m_loss: f64, k: usize, n: usize, delta: f64) -> Result<f64> {
    if !(m_loss > 0.0) || !m_loss.is_finite() {
        return Err(Error::invalid(format!("M must be positive, got {m_loss}")));
    }
    if k == 0 || n == 0 {
        return Err(Error::invalid("K and n must be ≥ 1"));
    }
    check_delta(delta)?;
    let inner = (2.0 * k as f64 * LN_2 + 2.0 * (2.0 / delta).ln()) / n as f64;
    Ok(3.0 * m_loss * inner.sqrt())
}

/// `L̂_S + M·d_tv + 2ε + 3M √((2K ln 2 + 2 ln(2/δ)) / n)`.
pub fn robust_ood_bound(source_risk: f64, m_loss: f64, dtv: f64, epsilon: f64, k: usize, n: usize, delta: f64) -> Result<BoundReport> {
    check_nonneg("source risk", source_risk)?;
    check_nonneg("epsilon", epsilon)?;
    if !(0.0..=2.0 + 1e-12).contains(&dtv) {
        return Err(Error::invalid(format!("TV distance must lie in [0, 2], got {dtv}")));
    }
    let concentration = concentration_term(m_loss, k, n, delta)?;
    let distance = m_loss * dtv;
    let robustness = 2.0 * epsilon;
    Ok(BoundReport {
        method: BoundMethod::Robust,
        empirical_source_risk: source_risk,
        distance_term: distance,
        robustness_term: robustness,
        concentration_term: concentration,
        total: source_risk + distance + robustness + concentration,
        params: BoundParams { m_loss: Some(m_loss), k: Some(k), n, delta, extra: Map::new() },
    })
}

/// Whether a partition is fine enough relative to `n` that the robust bound
/// degenerates to the distribution-distance baseline.
pub fn is_degenerate_partition(k: usize, n: usize, ratio: f64) -> bool {
    k as f64 > ratio * n as f64
}

/// `(ρ²/(2L²)) · ((n′ + c·d/m)·κ + 4ρ/3)`, with `c` standing in for the `O(d/m)` constant.
pub fn sharpness_robustness_rhs(rho_max: f64, lipschitz: f64, n_prime: f64, d: usize, m: usize, kappa: f64) -> Result<f64> {
    sharpness_robustness_rhs_with(rho_max, lipschitz, n_prime, d, m, kappa, DEFAULT_DIM_RATIO_CONSTANT)
}

pub fn sharpness_robustness_rhs_with(
    rho_max: f64,
    lipschitz: f64,
    n_prime: f64,
    d: usize,
    m: usize,
    kappa: f64,
    dim_ratio_constant: f64,
) -> Result<f64> {
    if !(rho_max > 0.0) || !(lipschitz > 0.0) {
        return Err(Error::invalid("rho_max and L must be positive"));
    }
    if m == 0 {
        return Err(Error::invalid("m must be ≥ 1"));
    }
    check_nonneg("n_prime", n_prime)?;
    check_nonneg("kappa", kappa)?;
    let lead = rho_max * rho_max / (2.0 * lipschitz * lipschitz);
    Ok(lead * ((n_prime + dim_ratio_constant * d as f64 / m as f64) * kappa + 4.0 * rho_max / 3.0))
}

/// `min{(2/π) arccos(R^{-1/2}), |1 − √(2d−4)/√(πR) · e^{1/(4d−9)}|}` clamped to
/// `[0, 1]`; the second branch is dropped when `2d − 4 ≤ 0`.
pub fn success_probability(d: usize, r: f64) -> Result<f64> {
    if d == 0 {
        return Err(Error::invalid("d must be ≥ 1"));
    }
    if !(r >= 1.0) {
        return Err(Error::invalid(format!("R must be ≥ 1, got {r}")));
    }
    let angle = 2.0 / PI * r.powf(-0.5).min(1.0).acos();
    let mut p = angle;
    let two_d_minus_4 = 2.0 * d as f64 - 4.0;
    if two_d_minus_4 > 0.0 {
        let tail = (1.0 - two_d_minus_4.sqrt() / (PI * r).sqrt() * (1.0 / (4.0 * d as f64 - 9.0)).exp()).abs();
        p = p.min(tail);
    }
    Ok(p.clamp(0.0, 1.0))
}

/// The three data-independent terms of the Zhao baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZhaoTerms {
    /// `√(2d′ log(en/d′) / n)`, with the log floored at 0.
    pub complexity: f64,
    /// `√(log(2/δ) / (2n))`.
    pub confidence: f64,
    /// `4 √((2d′ ln(2n) + ln(4/δ)) / n)`.
    pub divergence: f64,
}

impl ZhaoTerms {
    pub fn sum(&self) -> f64 {
        self.complexity + self.confidence + self.divergence
    }
}

pub fn zhao_terms(d_prime: usize, n: usize, delta: f64) -> Result<ZhaoTerms> {
    if d_prime == 0 || n == 0 {
        return Err(Error::invalid("d′ and n must be ≥ 1"));
    }
    check_delta(delta)?;
    let (dp, nf) = (d_prime as f64, n as f64);
    let log_growth = (E * nf / dp).ln().max(0.0);
    Ok(ZhaoTerms {
        complexity: (2.0 * dp * log_growth / nf).sqrt(),
        confidence: ((2.0 / delta).ln() / (2.0 * nf)).sqrt(),
        divergence: 4.0 * ((2.0 * dp * (2.0 * nf).ln() + (4.0 / delta).ln()) / nf).sqrt(),
    })
}

/// `L̂_S + ½ d̂ + ZhaoTerms`, with the best-hypothesis error taken as 0.
pub fn zhao_bound(source_risk: f64, proxy_dist: f64, d_prime: usize, n: usize, delta: f64) -> Result<BoundReport> {
    check_nonneg("source risk", source_risk)?;
    check_nonneg("proxy distance", proxy_dist)?;
    let terms = zhao_terms(d_prime, n, delta)?;
    let distance = 0.5 * proxy_dist;
    let mut extra = Map::new();
    extra.insert("d_prime".into(), d_prime.into());
    Ok(BoundReport {
        method: BoundMethod::Zhao,
        empirical_source_risk: source_risk,
        distance_term: distance,
        robustness_term: 0.0,
        concentration_term: terms.sum(),
        total: source_risk + distance + terms.sum(),
        params: BoundParams { m_loss: None, k: None, n, delta, extra },
    })
}

/// Discriminator settings for [`proxy_a_distance`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub steps: usize,
    pub l2: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { steps: 300, l2: 1e-2 }
    }
}

/// Proxy A-distance `2(1 − 2·err)` of a logistic domain discriminator,
/// clamped to `[0, 2]`.
///
/// Each domain is shuffled and split in half; the discriminator is fit on
/// the first halves with inputs standardized by the training statistics, and
/// `err` is the class-balanced error on the held-out halves.
pub fn proxy_a_distance(source_x: ArrayView2<'_, f64>, target_x: ArrayView2<'_, f64>, seed: u64) -> Result<f64> {
    proxy_a_distance_with(source_x, target_x, seed, DiscriminatorConfig::default())
}

pub fn proxy_a_distance_with(source_x: ArrayView2<'_, f64>, target_x: ArrayView2<'_, f64>, seed: u64, cfg: DiscriminatorConfig) -> Result<f64> {
    if source_x.nrows() < 4 || target_x.nrows() < 4 {
        return Err(Error::invalid("proxy A-distance needs at least 4 points per domain"));
    }
    if source_x.ncols() != target_x.ncols() {
        return Err(Error::dims("source and target dimensions differ"));
    }
    let mut r = rng::stream(seed, "proxy-a-distance");
    let mut split = |n: usize| {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut r);
        let fit = idx[..n / 2].to_vec();
        let hold = idx[n / 2..].to_vec();
        (fit, hold)
    };
    let (s_fit, s_hold) = split(source_x.nrows());
    let (t_fit, t_hold) = split(target_x.nrows());

    let fit_x = ndarray::concatenate(Axis(0), &[source_x.select(Axis(0), &s_fit).view(), target_x.select(Axis(0), &t_fit).view()])
        .map_err(|e| Error::dims(e.to_string()))?;
    let mean = fit_x.mean_axis(Axis(0)).ok_or_else(|| Error::Empty("fit split".into()))?;
    let std = fit_x.std_axis(Axis(0), 0.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
    let design = |x: ArrayView2<'_, f64>| -> Array2<f64> {
        let mut out = Array2::ones((x.nrows(), x.ncols() + 1));
        out.slice_mut(ndarray::s![.., ..x.ncols()]).assign(&((&x - &mean) / &std));
        out
    };
    let phi = design(fit_x.view());
    let labels = Array1::from_iter(s_fit.iter().map(|_| 1.0).chain(t_fit.iter().map(|_| -1.0)));
    let lr = 1.0 / (0.25 * gram_top_eigenvalue(phi.view()) + cfg.l2);
    let w = logistic_gd(phi.view(), labels.view(), cfg.l2, cfg.steps, lr)?;

    let miss_rate = |x: Array2<f64>, sign: f64| -> f64 {
        let out = design(x.view()).dot(&w);
        out.iter().filter(|&&f| sign * f <= 0.0).count() as f64 / out.len() as f64
    };
    let err = 0.5 * (miss_rate(source_x.select(Axis(0), &s_hold), 1.0) + miss_rate(target_x.select(Axis(0), &t_hold), -1.0));
    Ok((2.0 * (1.0 - 2.0 * err)).clamp(0.0, 2.0))
}

/// `(2α[dis + 2·KL·ln(2/δ)/(m·α) + 1] − 1) / (1 − e^{−2α})`.
pub fn pacbayes_dis_bound(dis_hat: f64, kl: f64, m_samples: usize, alpha: f64, delta: f64) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    if m_samples == 0 {
        return Err(Error::invalid("m must be ≥ 1"));
    }
    check_delta(delta)?;
    check_nonneg("dis_hat", dis_hat)?;
    check_nonneg("KL", kl)?;
    let deviation = 2.0 * kl * (2.0 / delta).ln() / (m_samples as f64 * alpha);
    Ok((2.0 * alpha * (dis_hat + deviation + 1.0) - 1.0) / (1.0 - (-2.0 * alpha).exp()))
}

/// `L̂_S + dis_ρ` bound, with the best-posterior disagreement terms taken as 0.
pub fn pacbayes_bound(source_risk: f64, dis_hat: f64, kl: f64, m_samples: usize, alpha: f64, delta: f64) -> Result<BoundReport> {
    check_nonneg("source risk", source_risk)?;
    let dis = pacbayes_dis_bound(dis_hat, kl, m_samples, alpha, delta)?;
    let mut extra = Map::new();
    extra.insert("alpha".into(), alpha.into());
    extra.insert("dis_hat".into(), dis_hat.into());
    extra.insert("kl".into(), kl.into());
    Ok(BoundReport {
        method: BoundMethod::Pacbayes,
        empirical_source_risk: source_risk,
        distance_term: dis,
        robustness_term: 0.0,
        concentration_term: 0.0,
        total: source_risk + dis,
        params: BoundParams { m_loss: None, k: None, n: m_samples, delta, extra },
    })
}

/// Spherical Gaussian posterior `N(center, s²I)` over linear heads, paired
/// with the prior `N(0, s²I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub center: Array1<f64>,
    pub scale: f64,
}

impl GaussianPosterior {
    pub fn new(center: Array1<f64>, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::invalid(format!("posterior scale must be positive, got {scale}")));
        }
        Ok(Self { center, scale })
    }

    /// Scale `s = rel·‖center‖`.
    pub fn relative(center: Array1<f64>, rel: f64) -> Result<Self> {
        let s = rel * center.dot(&center).sqrt();
        Self::new(center, s)
    }

    /// `‖center‖² / (2s²)`.
    pub fn kl(&self) -> f64 {
        self.center.dot(&self.center) / (2.0 * self.scale * self.scale)
    }

    /// `n_draws` heads as columns of an `[m × n_draws]` matrix.
    pub fn sample(&self, n_draws: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::stream(seed, "pacbayes-posterior");
        let m = self.center.len();
        let mut heads = Array2::zeros((m, n_draws));
        for mut col in heads.columns_mut() {
            for (v, &c) in col.iter_mut().zip(&self.center) {
                let z: f64 = StandardNormal.sample(&mut r);
                *v = c + self.scale * z;
            }
        }
        heads
    }
}

/// Mean pairwise agreement `E_{h≠h′}[⟨sign h(x), sign h′(x)⟩]` over the rows of
/// `features`, from the per-row column sums of the sign matrix.
fn mean_pairwise_agreement(features: ArrayView2<'_, f64>, heads: ArrayView2<'_, f64>) -> f64 {
    let k = heads.ncols() as f64;
    let out = features.dot(&heads);
    let n = out.nrows() as f64;
    let mut total = 0.0;
    for row in out.rows() {
        let s: f64 = row.iter().map(|&v| if v >= 0.0 { 1.0 } else { -1.0 }).sum();
        total += s * s - k;
    }
    total / (n * k * (k - 1.0))
}

/// Monte-Carlo `|E_{h,h′∼ρ}[R_T(h,h′) − R_S(h,h′)]|`, where `R_D` is the mean
/// disagreement rate of two heads on `D` and pairs are distinct draws.
pub fn empirical_dis_rho(
    posterior: &GaussianPosterior,
    source_features: ArrayView2<'_, f64>,
    target_features: ArrayView2<'_, f64>,
    n_draws: usize,
    seed: u64,
) -> Result<f64> {
    if n_draws < 2 {
        return Err(Error::invalid("need at least 2 posterior draws"));
    }
    if source_features.nrows() == 0 || target_features.nrows() == 0 {
        return Err(Error::Empty("dis_rho needs nonempty source and target".into()));
    }
    let m = posterior.center.len();
    if source_features.ncols() != m || target_features.ncols() != m {
        return Err(Error::dims(format!("features must have {m} columns")));
    }
    let heads = posterior.sample(n_draws, seed);
    // disagreement = (1 − agreement)/2
    let a_s = mean_pairwise_agreement(source_features, heads.view());
    let a_t = mean_pairwise_agreement(target_features, heads.view());
    Ok((0.5 * (a_s - a_t)).abs())
}

/// Fraction of points where the two heads' signs differ (`0` counted as `+`).
pub fn disagreement_rate(features: ArrayView2<'_, f64>, h: ArrayView1<'_, f64>, h_prime: ArrayView1<'_, f64>) -> f64 {
    let a = features.dot(&h);
    let b = features.dot(&h_prime);
    let diff = a.iter().zip(&b).filter(|(x, y)| (**x >= 0.0) != (**y >= 0.0)).count();
    diff as f64 / a.len() as f64
}
