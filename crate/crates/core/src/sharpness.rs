//! Sharpness `κ(w, S) = ‖w‖² · tr(H)` for each model family, a central
//! finite-difference trace oracle, feature-layer sharpness and the `n′`
//! concentration estimate.
//!
//! Every report stores per-sample trace contributions whose sum is the full
//! Hessian trace term, so `kappa = param_sq_norm × Σ per_sample_trace` holds
//! for all families.

use ndarray::{Array2, ArrayView1, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::datasets::LabeledDataset;
use crate::models::{logistic_curvature, RandomFeatureNet, RidgeModel};
use crate::{Error, Result};

pub const DEFAULT_FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpnessReport {
    pub kappa: f64,
    pub per_sample_trace: Vec<f64>,
    /// `n·max/Σ` of the per-sample traces; 0 when every trace is zero.
    pub n_prime_hat: f64,
    pub param_sq_norm: f64,
}

impl SharpnessReport {
    fn from_traces(param_sq_norm: f64, per_sample_trace: Vec<f64>) -> Self {
        let trace: f64 = per_sample_trace.iter().sum();
        let n_prime_hat = estimate_n_prime(&per_sample_trace).unwrap_or(0.0);
        Self { kappa: param_sq_norm * trace, per_sample_trace, n_prime_hat, param_sq_norm }
    }

    /// Hessian trace term `Σ per_sample_trace`.
    pub fn trace(&self) -> f64 {
        self.per_sample_trace.iter().sum()
    }

    /// Recomputes `kappa` from its parts.
    pub fn is_consistent(&self) -> bool {
        let expected = self.param_sq_norm * self.trace();
        (self.kappa - expected).abs() <= 1e-12 * expected.abs().max(1e-300)
    }
}

/// How `tr(βI)` enters the ridge trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceConvention {
    /// `tr(XᵀX/n) + β`.
    #[default]
    Scalar,
    /// `tr(XᵀX/n) + dβ`, the exact trace of the ridge objective's Hessian.
    Dimensional,
}

/// `κ = ‖θ̂‖² · ((1/n) Σⱼ ‖xⱼ‖² + β)` (or `+ dβ` under the dimensional convention).
pub fn ridge_sharpness(model: &RidgeModel, x: ArrayView2<'_, f64>, convention: TraceConvention) -> Result<SharpnessReport> {
    let (n, d) = x.dim();
    if d != model.theta_hat.len() {
        return Err(Error::dims(format!("design has {d} columns but θ̂ has {}", model.theta_hat.len())));
    }
    if n == 0 {
        return Err(Error::Empty("no samples".into()));
    }
    let ridge = match convention {
        TraceConvention::Scalar => model.beta,
        TraceConvention::Dimensional => d as f64 * model.beta,
    };
    let traces = x.rows().into_iter().map(|row| (row.dot(&row) + ridge) / n as f64).collect();
    Ok(SharpnessReport::from_traces(model.theta_hat.dot(&model.theta_hat), traces))
}

/// `κ = ‖w‖² (1/n) Σⱼ (D²ⱼ/d) Σᵢ (aᵢᵀxⱼ)² 1{aᵢᵀxⱼ ≥ 0}` where `D²ⱼ` is the
/// second derivative of the loss in the model output at sample `j`.
pub fn rf_sharpness(net: &RandomFeatureNet, data: &LabeledDataset, curvature: &[f64]) -> Result<SharpnessReport> {
    if data.dim() != net.input_dim() {
        return Err(Error::dims(format!("data dimension {} for a net with d = {}", data.dim(), net.input_dim())));
    }
    if curvature.len() != data.len() {
        return Err(Error::dims(format!("{} curvatures for {} samples", curvature.len(), data.len())));
    }
    if data.is_empty() {
        return Err(Error::Empty("no samples".into()));
    }
    let n = data.len() as f64;
    let d = net.input_dim() as f64;
    let pre = net.preactivations(data.features());
    let traces = pre
        .rows()
        .into_iter()
        .zip(curvature)
        .map(|(row, &c)| {
            let active: f64 = row.iter().filter(|&&v| v >= 0.0).map(|v| v * v).sum();
            c * active / (d * n)
        })
        .collect();
    Ok(SharpnessReport::from_traces(net.head().dot(&net.head()), traces))
}

/// Per-sample logistic curvature `p(1 − p)` of the trained net on `data`.
pub fn rf_logistic_curvatures(net: &RandomFeatureNet, data: &LabeledDataset) -> Vec<f64> {
    net.predict(data.features()).iter().map(|&f| logistic_curvature(f)).collect()
}

/// `κ = ‖θ‖² Σᵢ rᵢ‖xᵢ‖²` for the diagonal network, `x` is `[d × n]`.
pub fn diag_sharpness(theta: ArrayView1<'_, f64>, x: ArrayView2<'_, f64>, r: ArrayView1<'_, f64>) -> Result<SharpnessReport> {
    if x.nrows() != theta.len() || x.ncols() != r.len() {
        return Err(Error::dims("θ, X and r disagree in shape"));
    }
    let traces = x.columns().into_iter().zip(r).map(|(col, &ri)| ri * col.dot(&col)).collect();
    Ok(SharpnessReport::from_traces(theta.dot(&theta), traces))
}

/// `Σₖ (L(w₀ + h eₖ) − 2L(w₀) + L(w₀ − h eₖ)) / h²`.
pub fn hessian_trace_fd<F>(mut loss_at: F, w0: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let center = loss_at(w0);
    if !center.is_finite() {
        return Err(Error::NonFinite("loss at the base point".into()));
    }
    let mut w = w0.to_vec();
    let mut trace = 0.0;
    for k in 0..w.len() {
        let orig = w[k];
        w[k] = orig + h;
        let up = loss_at(&w);
        w[k] = orig - h;
        let down = loss_at(&w);
        w[k] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss along axis {k}")));
        }
        trace += (up - 2.0 * center + down) / (h * h);
    }
    Ok(trace)
}

/// Feature-layer sharpness `Σᵢⱼ Hᵢⱼ,ᵢⱼ · fᵢⱼ²` over a `[n × m]` feature matrix.
///
/// The Hessian is indexed `(sample, feature) × (sample, feature)`; the trace
/// block for entry `(i, j)` is its diagonal element, obtained by central
/// differences along `fᵢⱼ`.
pub fn feature_layer_sharpness<F>(features: ArrayView2<'_, f64>, mut loss_at_features: F, h: f64) -> Result<f64>
where
    F: FnMut(ArrayView2<'_, f64>) -> f64,
{
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature matrix".into()));
    }
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut f = features.to_owned();
    let center = loss_at_features(f.view());
    if !center.is_finite() {
        return Err(Error::NonFinite("loss at the base features".into()));
    }
    let (n, m) = f.dim();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            let orig = f[[i, j]];
            if orig == 0.0 {
                continue;
            }
            f[[i, j]] = orig + h;
            let up = loss_at_features(f.view());
            f[[i, j]] = orig - h;
            let down = loss_at_features(f.view());
            f[[i, j]] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite(format!("loss along feature ({i}, {j})")));
            }
            total += (up - 2.0 * center + down) / (h * h) * orig * orig;
        }
    }
    Ok(total)
}

/// `n̂ = n · max(trace) / Σ trace`, always in `[1, n]`.
pub fn estimate_n_prime(per_sample_trace: &[f64]) -> Result<f64> {
    if per_sample_trace.iter().any(|&t| t < 0.0 || !t.is_finite()) {
        return Err(Error::invalid("per-sample traces must be finite and ≥ 0"));
    }
    let sum: f64 = per_sample_trace.iter().sum();
    if sum == 0.0 {
        return Err(Error::Empty("all per-sample traces are zero".into()));
    }
    let max = per_sample_trace.iter().copied().fold(0.0, f64::max);
    Ok(per_sample_trace.len() as f64 * max / sum)
}

/// Mean loss of a random-feature model as a function of its head.
pub fn rf_head_loss<'a>(
    features: ArrayView2<'a, f64>,
    labels: ArrayView1<'a, f64>,
    loss: impl Fn(f64, f64) -> f64 + 'a,
) -> impl Fn(&[f64]) -> f64 + 'a {
    move |w: &[f64]| {
        let out = features.dot(&ArrayView1::from(w));
        Zip::from(&out).and(labels).fold(0.0, |acc, &f, &y| acc + loss(f, y)) / labels.len() as f64
    }
}

/// Scales each column of a feature matrix, used when mapping head weights into features.
pub fn scale_columns(features: ArrayView2<'_, f64>, scale: ArrayView1<'_, f64>) -> Array2<f64> {
    let mut out = features.to_owned();
    for (mut col, &s) in out.columns_mut().into_iter().zip(scale) {
        col *= s;
    }
    out
}
