//! Model families: closed-form ridge, random-feature ReLU heads trained by
//! gradient descent on the logistic loss, and depth-2 diagonal linear
//! networks under the exponential loss.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::datasets::{sample_sphere_from, LabeledDataset};
use crate::rng;
use crate::{Error, Result};

/// Closed-form ridge estimate `θ̂ = (XᵀX + nβI)⁻¹ Xᵀy`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub theta_hat: Array1<f64>,
    pub beta: f64,
    pub n_train: usize,
}

impl RidgeModel {
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        x.dot(&self.theta_hat)
    }

    /// Mean squared error `(1/n)‖Xθ̂ − y‖²`.
    pub fn mse(&self, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
        let r = self.predict(x) - y;
        r.dot(&r) / y.len() as f64
    }
}

/// Ridge regression with a symmetric positive-definite solve.
///
/// `beta = 0` is accepted only when `XᵀX` is numerically invertible.
pub fn fit_ridge(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, beta: f64) -> Result<RidgeModel> {
    let (n, d) = x.dim();
    if n == 0 || d == 0 {
        return Err(Error::Empty("ridge needs at least one sample and one feature".into()));
    }
    if y.len() != n {
        return Err(Error::dims(format!("{n} rows but {} targets", y.len())));
    }
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::invalid(format!("ridge penalty must be ≥ 0, got {beta}")));
    }
    if beta == 0.0 && n < d {
        return Err(Error::Singular(format!("XᵀX has rank ≤ {n} < {d} and beta = 0")));
    }
    let mut gram = x.t().dot(&x);
    gram.diag_mut().mapv_inplace(|v| v + n as f64 * beta);
    let rhs = x.t().dot(&y);

    let m = DMatrix::from_row_iterator(d, d, gram.iter().copied());
    let chol = m.cholesky().ok_or_else(|| Error::Singular("normal equations are not positive definite".into()))?;
    let pivots = chol.l_dirty().diagonal();
    let (lo, hi) = pivots.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &p| (lo.min(p), hi.max(p)));
    if lo * lo < 1e-13 * hi * hi {
        return Err(Error::Singular("normal equations are numerically rank deficient".into()));
    }
    let sol = chol.solve(&DVector::from_iterator(d, rhs.iter().copied()));
    Ok(RidgeModel { theta_hat: Array1::from_iter(sol.iter().copied()), beta, n_train: n })
}

/// Two-layer ReLU model with frozen sphere directions and a trainable head:
/// `f(x) = (1/√d) Σᵢ wᵢ max(0, aᵢᵀx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomFeatureNet {
    directions: Array2<f64>,
    head: Array1<f64>,
    seed: u64,
}

impl RandomFeatureNet {
    /// `directions` is `[d × m]`; each column must have norm `√d`.
    pub fn new(directions: Array2<f64>, head: Array1<f64>, seed: u64) -> Result<Self> {
        let (d, m) = directions.dim();
        if d == 0 || m == 0 {
            return Err(Error::invalid("random-feature net needs d ≥ 1 and m ≥ 1"));
        }
        if head.len() != m {
            return Err(Error::dims(format!("{m} directions but head of length {}", head.len())));
        }
        let target = (d as f64).sqrt();
        for (i, col) in directions.axis_iter(Axis(1)).enumerate() {
            let norm = col.dot(&col).sqrt();
            if (norm - target).abs() > 1e-9 {
                return Err(Error::invalid(format!("direction {i} has norm {norm}, expected √{d}")));
            }
        }
        Ok(Self { directions, head, seed })
    }

    /// Fresh directions drawn uniformly from the radius-`√d` sphere, zero head.
    pub fn init(d: usize, m: usize, seed: u64) -> Result<Self> {
        if d == 0 || m == 0 {
            return Err(Error::invalid("random-feature net needs d ≥ 1 and m ≥ 1"));
        }
        let mut rng = rng::stream(seed, "rf-directions");
        let radius = (d as f64).sqrt();
        let mut directions = Array2::<f64>::zeros((d, m));
        for mut col in directions.axis_iter_mut(Axis(1)) {
            col.assign(&sample_sphere_from(&mut rng, d, radius));
        }
        Self::new(directions, Array1::zeros(m), seed)
    }

    pub fn input_dim(&self) -> usize {
        self.directions.nrows()
    }

    pub fn width(&self) -> usize {
        self.directions.ncols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn directions(&self) -> ArrayView2<'_, f64> {
        self.directions.view()
    }

    pub fn head(&self) -> ArrayView1<'_, f64> {
        self.head.view()
    }

    pub fn with_head(&self, head: Array1<f64>) -> Result<Self> {
        Self::new(self.directions.clone(), head, self.seed)
    }

    /// Raw preactivations `XA`, `[n × m]`.
    pub fn preactivations(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.directions)
    }

    /// Scaled ReLU features `max(0, XA)/√d`, `[n × m]`; the model output is `features · w`.
    pub fn features(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let scale = 1.0 / (self.input_dim() as f64).sqrt();
        self.preactivations(x).mapv_into(|v| v.max(0.0) * scale)
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        self.features(x).dot(&self.head)
    }
}

/// Output of the random-feature model at a single input.
pub fn rf_forward(net: &RandomFeatureNet, x: ArrayView1<'_, f64>) -> Result<f64> {
    if x.len() != net.input_dim() {
        return Err(Error::dims(format!("input of length {} for d = {}", x.len(), net.input_dim())));
    }
    let pre = net.directions.t().dot(&x);
    let s: f64 = pre.iter().zip(&net.head).map(|(&p, &w)| w * p.max(0.0)).sum();
    Ok(s / (net.input_dim() as f64).sqrt())
}

/// `log(1 + exp(−margin))`, computed without overflow.
pub fn logistic_loss(margin: f64) -> f64 {
    if margin > 0.0 {
        (-margin).exp().ln_1p()
    } else {
        -margin + margin.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Second derivative of the logistic loss in the model output: `p(1 − p)`.
pub fn logistic_curvature(output: f64) -> f64 {
    let p = sigmoid(output);
    p * (1.0 - p)
}

/// Step-size rule for the logistic head trainer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum StepSize {
    /// Use the given learning rate as is.
    Fixed(f64),
    /// Learning rate `c / L`, where `L` bounds the curvature of the objective.
    Relative(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfTrainConfig {
    pub width: usize,
    pub steps: usize,
    pub step_size: StepSize,
    pub l2: f64,
    pub seed: u64,
}

/// Largest eigenvalue of `ΦᵀΦ/n` by power iteration from the all-ones vector.
pub(crate) fn gram_top_eigenvalue(features: ArrayView2<'_, f64>) -> f64 {
    let n = features.nrows() as f64;
    let m = features.ncols();
    let mut v = Array1::from_elem(m, 1.0 / (m as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..100 {
        let w = features.t().dot(&features.dot(&v)) / n;
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - lambda).abs() <= 1e-10 * next.abs() {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Mean logistic loss of head `w` on precomputed features.
pub fn mean_logistic_loss(features: ArrayView2<'_, f64>, labels: ArrayView1<'_, f64>, head: ArrayView1<'_, f64>) -> f64 {
    let out = features.dot(&head);
    out.iter().zip(labels).map(|(&f, &y)| logistic_loss(y * f)).sum::<f64>() / labels.len() as f64
}

/// Full-batch gradient descent on `mean log(1 + exp(−y f)) + (l2/2)‖w‖²`
/// with frozen directions and a zero-initialized head.
pub fn train_rf_logistic(data: &LabeledDataset, cfg: &RfTrainConfig) -> Result<RandomFeatureNet> {
    if data.is_empty() {
        return Err(Error::Empty("no training samples".into()));
    }
    if data.labels().iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(Error::invalid("logistic training needs labels in {−1, +1}"));
    }
    if !(cfg.l2 >= 0.0) {
        return Err(Error::invalid("l2 must be ≥ 0"));
    }
    let net = RandomFeatureNet::init(data.dim(), cfg.width, cfg.seed)?;
    if cfg.steps == 0 {
        return Ok(net);
    }
    let phi = net.features(data.features());
    let labels = data.labels();
    let lr = match cfg.step_size {
        StepSize::Fixed(lr) => lr,
        StepSize::Relative(c) => c / (0.25 * gram_top_eigenvalue(phi.view()) + cfg.l2),
    };
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::invalid(format!("learning rate must be positive and finite, got {lr}")));
    }

    let w = logistic_gd(phi.view(), labels, cfg.l2, cfg.steps, lr)?;
    net.with_head(w)
}

/// Full-batch gradient descent on `mean log(1 + exp(−y ⟨w, φ⟩)) + (l2/2)‖w‖²` from `w = 0`.
pub(crate) fn logistic_gd(phi: ArrayView2<'_, f64>, labels: ArrayView1<'_, f64>, l2: f64, steps: usize, lr: f64) -> Result<Array1<f64>> {
    let n = phi.nrows() as f64;
    let mut w = Array1::<f64>::zeros(phi.ncols());
    let mut coef = Array1::<f64>::zeros(phi.nrows());
    for step in 0..steps {
        let out = phi.dot(&w);
        let mut loss = 0.0;
        Zip::from(&mut coef).and(&out).and(labels).for_each(|c, &f, &y| {
            loss += logistic_loss(y * f);
            // d/df log(1 + exp(−yf)) = −y σ(−yf)
            *c = -y * sigmoid(-y * f) / n;
        });
        loss = loss / n + 0.5 * l2 * w.dot(&w);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("logistic loss diverged at step {step}")));
        }
        let mut grad = phi.t().dot(&coef);
        grad.scaled_add(l2, &w);
        w.scaled_add(-lr, &grad);
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("head weights diverged".into()));
    }
    Ok(w)
}

/// Depth-2 diagonal linear network `f(u, x) = ⟨u₊² − u₋², x⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalNetState {
    pub u_plus: Array1<f64>,
    pub u_minus: Array1<f64>,
    pub alpha_init: f64,
    pub t: usize,
}

impl DiagonalNetState {
    /// `u₊ = u₋ = α·1`, so the network starts at `θ = 0`.
    pub fn init(d: usize, alpha_init: f64) -> Result<Self> {
        if d == 0 || !(alpha_init > 0.0) {
            return Err(Error::invalid("diagonal net needs d ≥ 1 and alpha_init > 0"));
        }
        Ok(Self { u_plus: Array1::from_elem(d, alpha_init), u_minus: Array1::from_elem(d, alpha_init), alpha_init, t: 0 })
    }

    pub fn dim(&self) -> usize {
        self.u_plus.len()
    }
}

/// Effective linear predictor `u₊² − u₋²`.
pub fn diag_theta(state: &DiagonalNetState) -> Array1<f64> {
    Zip::from(&state.u_plus).and(&state.u_minus).map_collect(|&p, &m| p * p - m * m)
}

/// Exponential loss with labels folded into the columns of `x` (`[d × n]`).
///
/// Returns `(L, r)` with `rᵢ = exp(−xᵢᵀθ)/n` and `L = ‖r‖₁`.
pub fn exp_loss(theta: ArrayView1<'_, f64>, x: ArrayView2<'_, f64>) -> Result<(f64, Array1<f64>)> {
    if x.nrows() != theta.len() {
        return Err(Error::dims(format!("θ has length {} but samples have {} rows", theta.len(), x.nrows())));
    }
    let n = x.ncols();
    if n == 0 {
        return Err(Error::Empty("no samples".into()));
    }
    let margins = x.t().dot(&theta);
    let mut r = Array1::<f64>::zeros(n);
    for (ri, &mg) in r.iter_mut().zip(&margins) {
        let e = -mg;
        if e > 700.0 {
            return Err(Error::Overflow(e));
        }
        *ri = e.exp() / n as f64;
    }
    Ok((r.sum(), r))
}

/// Gradient of the exponential loss with respect to `(u₊, u₋)`.
pub fn diag_gradient(state: &DiagonalNetState, x: ArrayView2<'_, f64>) -> Result<(Array1<f64>, Array1<f64>)> {
    let theta = diag_theta(state);
    let (_, r) = exp_loss(theta.view(), x)?;
    // ∂L/∂θ = −Xr, ∂θ/∂u₊ = 2u₊, ∂θ/∂u₋ = −2u₋
    let xr = x.dot(&r);
    let g_plus = Zip::from(&state.u_plus).and(&xr).map_collect(|&u, &v| -2.0 * u * v);
    let g_minus = Zip::from(&state.u_minus).and(&xr).map_collect(|&u, &v| 2.0 * u * v);
    Ok((g_plus, g_minus))
}

/// One full-batch gradient step in `u`-space.
pub fn diag_step(state: &DiagonalNetState, x: ArrayView2<'_, f64>, lr: f64) -> Result<DiagonalNetState> {
    if !(lr > 0.0) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    let (g_plus, g_minus) = diag_gradient(state, x)?;
    let mut next = state.clone();
    next.u_plus.scaled_add(-lr, &g_plus);
    next.u_minus.scaled_add(-lr, &g_minus);
    next.t += 1;
    Ok(next)
}

/// Serialized form of any trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelRecord {
    Ridge {
        beta: f64,
        n_train: usize,
        theta_hat: Vec<f64>,
    },
    RandomFeature {
        d: usize,
        m: usize,
        /// Row-major `[d × m]`.
        directions: Vec<f64>,
        head: Vec<f64>,
        seed: u64,
    },
    DiagonalNet {
        alpha_init: f64,
        t: usize,
        u_plus: Vec<f64>,
        u_minus: Vec<f64>,
    },
}

impl From<&RidgeModel> for ModelRecord {
    fn from(m: &RidgeModel) -> Self {
        ModelRecord::Ridge { beta: m.beta, n_train: m.n_train, theta_hat: m.theta_hat.to_vec() }
    }
}

impl From<&RandomFeatureNet> for ModelRecord {
    fn from(net: &RandomFeatureNet) -> Self {
        ModelRecord::RandomFeature {
            d: net.input_dim(),
            m: net.width(),
            directions: net.directions.iter().copied().collect(),
            head: net.head.to_vec(),
            seed: net.seed,
        }
    }
}

impl From<&DiagonalNetState> for ModelRecord {
    fn from(s: &DiagonalNetState) -> Self {
        ModelRecord::DiagonalNet { alpha_init: s.alpha_init, t: s.t, u_plus: s.u_plus.to_vec(), u_minus: s.u_minus.to_vec() }
    }
}

impl ModelRecord {
    pub fn into_ridge(self) -> Result<RidgeModel> {
        match self {
            ModelRecord::Ridge { beta, n_train, theta_hat } => Ok(RidgeModel { theta_hat: theta_hat.into(), beta, n_train }),
            _ => Err(Error::invalid("model record is not a ridge model")),
        }
    }

    pub fn into_random_feature(self) -> Result<RandomFeatureNet> {
        match self {
            ModelRecord::RandomFeature { d, m, directions, head, seed } => {
                let a = Array2::from_shape_vec((d, m), directions).map_err(|e| Error::dims(e.to_string()))?;
                RandomFeatureNet::new(a, head.into(), seed)
            }
            _ => Err(Error::invalid("model record is not a random-feature model")),
        }
    }

    pub fn into_diagonal(self) -> Result<DiagonalNetState> {
        match self {
            ModelRecord::DiagonalNet { alpha_init, t, u_plus, u_minus } => {
                if u_plus.len() != u_minus.len() {
                    return Err(Error::dims("u₊ and u₋ differ in length"));
                }
                Ok(DiagonalNetState { u_plus: u_plus.into(), u_minus: u_minus.into(), alpha_init, t })
            }
            _ => Err(Error::invalid("model record is not a diagonal network")),
        }
    }
}
