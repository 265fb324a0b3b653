//! Synthetic source/target distributions and prediction scoring.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::rng::{self, Rng};
use crate::{Error, Result};

/// Group index for a `(label, attribute)` pair.
///
/// `(+,+) = 0`, `(+,−) = 1`, `(−,+) = 2`, `(−,−) = 3`.
pub fn group_index(label_positive: bool, attribute_positive: bool) -> u8 {
    match (label_positive, attribute_positive) {
        (true, true) => 0,
        (true, false) => 1,
        (false, true) => 2,
        (false, false) => 3,
    }
}

/// Whether a group is a majority group (label agrees with the attribute).
pub fn is_majority_group(group: u8) -> bool {
    group == 0 || group == 3
}

/// Feature matrix `[n × d]`, labels `[n]` and optional group ids in `0..4`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Array1<f64>,
    groups: Option<Vec<u8>>,
}

impl LabeledDataset {
    pub fn new(features: Array2<f64>, labels: Array1<f64>, groups: Option<Vec<u8>>) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n {
            return Err(Error::dims(format!("{} feature rows but {} labels", n, labels.len())));
        }
        if let Some(g) = &groups {
            if g.len() != n {
                return Err(Error::dims(format!("{} feature rows but {} group ids", n, g.len())));
            }
            if let Some(bad) = g.iter().find(|&&v| v > 3) {
                return Err(Error::invalid(format!("group id {bad} outside 0..=3")));
            }
        }
        Ok(Self { features, labels, groups })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Input dimension.
    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> ArrayView1<'_, f64> {
        self.labels.view()
    }

    pub fn groups(&self) -> Option<&[u8]> {
        self.groups.as_deref()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// Number of samples in each of the four groups, if groups are present.
    pub fn group_counts(&self) -> Option<[usize; 4]> {
        self.groups.as_ref().map(|g| {
            let mut counts = [0usize; 4];
            for &v in g {
                counts[v as usize] += 1;
            }
            counts
        })
    }

    /// Same samples with features shifted by a constant in every coordinate.
    pub fn shifted(&self, offset: f64) -> Self {
        Self { features: &self.features + offset, labels: self.labels.clone(), groups: self.groups.clone() }
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), rows),
            labels: self.labels.select(Axis(0), rows),
            groups: self.groups.as_ref().map(|g| rows.iter().map(|&i| g[i]).collect()),
        }
    }

    /// Writes `x0..x{d-1},y[,group]` with a header row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        if self.groups.is_some() {
            header.push("group".into());
        }
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.features.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.labels[i].to_string());
            if let Some(g) = &self.groups {
                rec.push(g[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format produced by [`LabeledDataset::write_csv`].
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let y_col = header.iter().position(|h| h == "y").ok_or_else(|| Error::invalid("dataset CSV has no `y` column"))?;
        let group_col = header.iter().position(|h| h == "group");
        for (j, h) in header.iter().take(y_col).enumerate() {
            if h != format!("x{j}") {
                return Err(Error::invalid(format!("unexpected feature column `{h}` at position {j}")));
            }
        }
        let d = y_col;
        let mut flat = Vec::new();
        let mut labels = Vec::new();
        let mut groups = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            for j in 0..d {
                flat.push(parse_field(&rec[j])?);
            }
            labels.push(parse_field(&rec[y_col])?);
            if let Some(gc) = group_col {
                let g: u8 = rec[gc].trim().parse().map_err(|_| Error::invalid(format!("bad group id `{}`", &rec[gc])))?;
                groups.push(g);
            }
        }
        let n = labels.len();
        let features = Array2::from_shape_vec((n, d), flat).map_err(|e| Error::dims(e.to_string()))?;
        Self::new(features, Array1::from(labels), group_col.map(|_| groups))
    }
}

fn parse_field(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::invalid(format!("cannot parse `{s}` as a number")))
}

/// Two-block spurious-correlation generator settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpuriousConfig {
    pub n: usize,
    /// Dimension of each feature block; inputs are `2d`-dimensional.
    pub d: usize,
    pub p_maj: f64,
    pub sigma_core: f64,
    pub sigma_spu: f64,
    pub seed: u64,
}

impl SpuriousConfig {
    /// `n = 500`, `d = 100`, `p_maj = 0.9`, `σ_core = 10`, `σ_spu = 1`.
    pub fn standard(seed: u64) -> Self {
        Self { n: 500, d: 100, p_maj: 0.9, sigma_core: 10.0, sigma_spu: 1.0, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::invalid("spurious config needs n ≥ 1 and d ≥ 1"));
        }
        if !(0.0..=1.0).contains(&self.p_maj) {
            return Err(Error::invalid(format!("p_maj = {} outside [0, 1]", self.p_maj)));
        }
        if !(self.sigma_core > 0.0 && self.sigma_spu > 0.0) {
            return Err(Error::invalid("noise scales must be positive"));
        }
        Ok(())
    }
}

/// Draws `[x_core, x_spu]` with `x_core ~ N(y·1, σ_core² I)` and
/// `x_spu ~ N(a·1, σ_spu² I)`, where `a = y` with probability `p_maj`.
pub fn gen_spurious(cfg: &SpuriousConfig) -> Result<LabeledDataset> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, "spurious");
    let (n, d) = (cfg.n, cfg.d);
    let mut features = Array2::<f64>::zeros((n, 2 * d));
    let mut labels = Array1::<f64>::zeros(n);
    let mut groups = Vec::with_capacity(n);
    for i in 0..n {
        let y_pos = rng.random_bool(0.5);
        let agrees = rng.random_bool(cfg.p_maj);
        let a_pos = if agrees { y_pos } else { !y_pos };
        let y = if y_pos { 1.0 } else { -1.0 };
        let a = if a_pos { 1.0 } else { -1.0 };
        let mut row = features.row_mut(i);
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            row[j] = y + cfg.sigma_core * z;
        }
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            row[d + j] = a + cfg.sigma_spu * z;
        }
        labels[i] = y;
        groups.push(group_index(y_pos, a_pos));
    }
    LabeledDataset::new(features, labels, Some(groups))
}

/// Orthonormal pair spanning the rotation plane of the shifted ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftBasis {
    theta0: Array1<f64>,
    theta_perp: Array1<f64>,
}

impl ShiftBasis {
    const TOL: f64 = 1e-12;

    pub fn new(theta0: Array1<f64>, theta_perp: Array1<f64>) -> Result<Self> {
        if theta0.len() != theta_perp.len() {
            return Err(Error::dims("basis vectors differ in length"));
        }
        let n0 = theta0.dot(&theta0).sqrt();
        let n1 = theta_perp.dot(&theta_perp).sqrt();
        let ip = theta0.dot(&theta_perp);
        if (n0 - 1.0).abs() > Self::TOL || (n1 - 1.0).abs() > Self::TOL || ip.abs() > Self::TOL {
            return Err(Error::invalid("shift basis is not orthonormal"));
        }
        Ok(Self { theta0, theta_perp })
    }

    /// Uniform unit `θ₀` and a uniform unit vector orthogonal to it.
    pub fn random(d: usize, seed: u64) -> Result<Self> {
        if d < 2 {
            return Err(Error::invalid("a shift basis needs d ≥ 2"));
        }
        let mut rng = rng::stream(seed, "shift-basis");
        let theta0 = sample_sphere_from(&mut rng, d, 1.0);
        let mut perp;
        loop {
            perp = Array1::from_iter((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
            // two Gram-Schmidt passes keep the residual overlap at rounding level
            for _ in 0..2 {
                let ip = perp.dot(&theta0);
                perp.scaled_add(-ip, &theta0);
            }
            let norm = perp.dot(&perp).sqrt();
            if norm > 1e-8 {
                perp /= norm;
                break;
            }
        }
        Self::new(theta0, perp)
    }

    pub fn theta0(&self) -> ArrayView1<'_, f64> {
        self.theta0.view()
    }

    pub fn theta_perp(&self) -> ArrayView1<'_, f64> {
        self.theta_perp.view()
    }
}

/// `θ₀·cos α + θ⊥·sin α`.
pub fn rotate_theta(basis: &ShiftBasis, alpha: f64) -> Array1<f64> {
    &basis.theta0 * alpha.cos() + &basis.theta_perp * alpha.sin()
}

/// Noiseless linear regression data: standard normal design, `y = Xθ*`.
pub fn gen_linear_regression(theta_star: ArrayView1<'_, f64>, n: usize, seed: u64) -> Result<LabeledDataset> {
    let d = theta_star.len();
    if d == 0 || n == 0 {
        return Err(Error::invalid("linear regression data needs d ≥ 1 and n ≥ 1"));
    }
    let mut rng = rng::stream(seed, "linear-regression");
    let features = Array2::from_shape_simple_fn((n, d), || rng.sample::<f64, _>(StandardNormal));
    let labels = features.dot(&theta_star);
    LabeledDataset::new(features, labels, None)
}

/// Re-labels a design with a new ground truth: `y = Xθ`.
pub fn relabel_linear(data: &LabeledDataset, theta: ArrayView1<'_, f64>) -> Result<LabeledDataset> {
    if theta.len() != data.dim() {
        return Err(Error::dims("ground truth length differs from input dimension"));
    }
    LabeledDataset::new(data.features.clone(), data.features.dot(&theta), None)
}

fn misclassified(pred: f64, label: f64) -> bool {
    (pred > 0.0) != (label > 0.0)
}

/// Mean 0-1 error of sign predictions.
pub fn zero_one_error(preds: &[f64], labels: ArrayView1<'_, f64>) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::dims(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    if preds.is_empty() {
        return Err(Error::Empty("no predictions".into()));
    }
    let wrong = preds.iter().zip(labels).filter(|(&p, &y)| misclassified(p, y)).count();
    Ok(wrong as f64 / preds.len() as f64)
}

/// Largest mean 0-1 error over the four groups. Empty groups are skipped.
pub fn worst_group_error(preds: &[f64], data: &LabeledDataset) -> Result<f64> {
    let groups = data.groups().ok_or_else(|| Error::invalid("worst-group error needs group labels"))?;
    if preds.len() != data.len() {
        return Err(Error::dims(format!("{} predictions for {} samples", preds.len(), data.len())));
    }
    let mut wrong = [0usize; 4];
    let mut total = [0usize; 4];
    for ((&p, &y), &g) in preds.iter().zip(data.labels()).zip(groups) {
        total[g as usize] += 1;
        if misclassified(p, y) {
            wrong[g as usize] += 1;
        }
    }
    (0..4)
        .filter(|&g| total[g] > 0)
        .map(|g| wrong[g] as f64 / total[g] as f64)
        .reduce(f64::max)
        .ok_or_else(|| Error::Empty("all four groups are empty".into()))
}

/// Standard-normal draw rescaled to norm `radius`.
pub fn sample_sphere_from(rng: &mut Rng, d: usize, radius: f64) -> Array1<f64> {
    loop {
        let v = Array1::from_iter((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let norm = v.dot(&v).sqrt();
        if norm > 0.0 {
            return v * (radius / norm);
        }
    }
}

/// Uniform point on the sphere of the given radius in `d` dimensions.
pub fn sample_sphere(d: usize, radius: f64, seed: u64) -> Result<Array1<f64>> {
    if d == 0 || !(radius > 0.0) {
        return Err(Error::invalid("sphere sampling needs d ≥ 1 and radius > 0"));
    }
    Ok(sample_sphere_from(&mut rng::stream(seed, "sphere"), d, radius))
}
