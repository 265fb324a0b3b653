//! JSON experiment configuration.
//!
//! A config file is an object `{"experiment", "seeds", "grid", "output_path"}`.
//! `grid` holds the experiment-specific settings; any field left out takes
//! its default, and unknown fields are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bounds::{DEFAULT_DEGENERATE_RATIO, DEFAULT_DELTA, DEFAULT_DIM_RATIO_CONSTANT};
use crate::datasets::SpuriousConfig;
use crate::models::StepSize;
use crate::robustness::DEFAULT_PROJ_DIM;
use crate::sharpness::TraceConvention;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    RidgeShift,
    SpuriousSweep,
    DiagTrajectory,
    SharpnessScatter,
    BoundCompare,
}

impl Experiment {
    pub const ALL: [Experiment; 5] =
        [Experiment::RidgeShift, Experiment::SpuriousSweep, Experiment::DiagTrajectory, Experiment::SharpnessScatter, Experiment::BoundCompare];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::RidgeShift => "ridge-shift",
            Experiment::SpuriousSweep => "spurious-sweep",
            Experiment::DiagTrajectory => "diag-trajectory",
            Experiment::SharpnessScatter => "sharpness-scatter",
            Experiment::BoundCompare => "bound-compare",
        }
    }

    fn default_seeds(self) -> Vec<u64> {
        match self {
            Experiment::RidgeShift => (0..10).collect(),
            Experiment::SpuriousSweep | Experiment::SharpnessScatter => (0..5).collect(),
            Experiment::DiagTrajectory | Experiment::BoundCompare => vec![0],
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}

fn default_alphas() -> Vec<f64> {
    (0..25).map(|i| i as f64 * std::f64::consts::TAU / 24.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RidgeGrid {
    pub d: usize,
    pub n: usize,
    pub n_test: usize,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub convention: TraceConvention,
}

impl Default for RidgeGrid {
    fn default() -> Self {
        Self { d: 100, n: 50, n_test: 2000, betas: vec![0.01, 0.1, 1.0, 2.0], alphas: default_alphas(), convention: TraceConvention::Scalar }
    }
}

/// Source and target generator settings shared by the spurious experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpuriousData {
    pub n: usize,
    /// Half-dimension: inputs have `2d` coordinates.
    pub d: usize,
    pub sigma_core: f64,
    pub sigma_spu: f64,
    pub p_maj_train: f64,
    pub p_maj_target: f64,
    /// Target sample size; `n` when absent.
    pub n_target: Option<usize>,
}

impl Default for SpuriousData {
    fn default() -> Self {
        let s = SpuriousConfig::standard(0);
        Self { n: s.n, d: s.d, sigma_core: s.sigma_core, sigma_spu: s.sigma_spu, p_maj_train: s.p_maj, p_maj_target: 0.5, n_target: None }
    }
}

impl SpuriousData {
    pub fn source(&self, p_maj: f64, seed: u64) -> SpuriousConfig {
        SpuriousConfig { n: self.n, d: self.d, p_maj, sigma_core: self.sigma_core, sigma_spu: self.sigma_spu, seed }
    }

    pub fn target(&self, seed: u64) -> SpuriousConfig {
        SpuriousConfig { n: self.n_target.unwrap_or(self.n), p_maj: self.p_maj_target, ..self.source(self.p_maj_target, seed) }
    }

    fn validate(&self) -> Result<()> {
        self.source(self.p_maj_train, 0).validate()?;
        self.target(0).validate()
    }
}

/// Gradient-descent settings for the random-feature logistic head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub steps: usize,
    pub step_size: StepSize,
    pub l2: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self { steps: 300, step_size: StepSize::Relative(1.0), l2: 0.1 }
    }
}

impl TrainSettings {
    fn validate(&self) -> Result<()> {
        if !(self.l2 >= 0.0) {
            return Err(Error::Config("l2 must be ≥ 0".into()));
        }
        match self.step_size {
            StepSize::Fixed(v) | StepSize::Relative(v) if v > 0.0 && v.is_finite() => Ok(()),
            _ => Err(Error::Config("step size must be positive".into())),
        }
    }
}

/// Loss the bounds are stated for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundLoss {
    /// 0-1 loss of the sign prediction, bounded by `M = 1`.
    #[default]
    ZeroOne,
    /// Logistic loss, with `M` the largest loss observed on train ∪ target.
    Logistic,
}

impl BoundLoss {
    pub fn name(self) -> &'static str {
        match self {
            BoundLoss::ZeroOne => "zero_one",
            BoundLoss::Logistic => "logistic",
        }
    }
}

/// Inputs of the three bounds that are not measured from data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundSettings {
    pub loss: BoundLoss,
    pub k_target: usize,
    pub delta: f64,
    pub proj_dim: usize,
    /// `K > ratio·n` reports the Zhao baseline in place of the robust bound.
    pub degenerate_ratio: f64,
    pub rho_max: f64,
    pub lipschitz: f64,
    pub dim_ratio_constant: f64,
    pub pacbayes_alpha: f64,
    /// Posterior scale relative to the trained head norm.
    pub posterior_scale: f64,
    pub dis_draws: usize,
}

impl Default for BoundSettings {
    fn default() -> Self {
        Self {
            loss: BoundLoss::ZeroOne,
            k_target: 1000,
            delta: DEFAULT_DELTA,
            proj_dim: DEFAULT_PROJ_DIM,
            degenerate_ratio: DEFAULT_DEGENERATE_RATIO,
            rho_max: 1.0,
            lipschitz: 1.0,
            dim_ratio_constant: DEFAULT_DIM_RATIO_CONSTANT,
            pacbayes_alpha: 1.0,
            posterior_scale: 0.1,
            dis_draws: 500,
        }
    }
}

impl BoundSettings {
    fn validate(&self) -> Result<()> {
        let checks = [
            (self.k_target >= 1, "k_target must be ≥ 1"),
            (self.delta > 0.0 && self.delta < 1.0, "delta must lie in (0, 1)"),
            (self.proj_dim >= 1, "proj_dim must be ≥ 1"),
            (self.degenerate_ratio > 0.0, "degenerate_ratio must be positive"),
            (self.rho_max > 0.0 && self.lipschitz > 0.0, "rho_max and lipschitz must be positive"),
            (self.dim_ratio_constant >= 0.0, "dim_ratio_constant must be ≥ 0"),
            (self.pacbayes_alpha > 0.0, "pacbayes_alpha must be positive"),
            (self.posterior_scale > 0.0, "posterior_scale must be positive"),
            (self.dis_draws >= 2, "dis_draws must be ≥ 2"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::Config((*msg).into())),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Width,
    PMaj,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Width => "width",
            SweepKind::PMaj => "p_maj",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpuriousGrid {
    pub data: SpuriousData,
    pub train: TrainSettings,
    pub bounds: BoundSettings,
    pub sweeps: Vec<SweepKind>,
    /// Widths of the model-size sweep, run at `data.p_maj_train`.
    pub widths: Vec<usize>,
    /// Training correlations of the shift sweep, run at `fixed_width`.
    pub p_majs: Vec<f64>,
    pub fixed_width: usize,
    /// Widths above this are flagged as overparameterized.
    pub overparameterized_above: usize,
}

impl Default for SpuriousGrid {
    fn default() -> Self {
        Self {
            data: SpuriousData::default(),
            train: TrainSettings::default(),
            bounds: BoundSettings::default(),
            sweeps: vec![SweepKind::Width, SweepKind::PMaj],
            widths: vec![100, 200, 500, 800, 1200],
            p_majs: vec![0.5, 0.6, 0.7, 0.8, 0.9],
            fixed_width: 500,
            overparameterized_above: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundCompareGrid {
    pub data: SpuriousData,
    pub train: TrainSettings,
    pub bounds: BoundSettings,
    pub width: usize,
}

impl Default for BoundCompareGrid {
    fn default() -> Self {
        Self { data: SpuriousData::default(), train: TrainSettings::default(), bounds: BoundSettings::default(), width: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagGrid {
    pub n: usize,
    pub d: usize,
    pub alpha_init: f64,
    pub lr: f64,
    pub steps: usize,
    pub log_every: usize,
    /// `T_ε` as a fraction of `steps`.
    pub t_eps_fraction: f64,
}

impl Default for DiagGrid {
    fn default() -> Self {
        Self { n: 20, d: 10, alpha_init: 1.0, lr: 1e-3, steps: 2000, log_every: 10, t_eps_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScatterGrid {
    pub data: SpuriousData,
    pub train: TrainSettings,
    pub l2s: Vec<f64>,
    pub widths: Vec<usize>,
}

impl Default for ScatterGrid {
    fn default() -> Self {
        Self { data: SpuriousData::default(), train: TrainSettings::default(), l2s: vec![1e-3, 1e-2, 1e-1], widths: vec![100, 500] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Grid {
    RidgeShift(RidgeGrid),
    SpuriousSweep(SpuriousGrid),
    DiagTrajectory(DiagGrid),
    SharpnessScatter(ScatterGrid),
    BoundCompare(BoundCompareGrid),
}

impl Grid {
    pub fn default_for(experiment: Experiment) -> Self {
        match experiment {
            Experiment::RidgeShift => Grid::RidgeShift(RidgeGrid::default()),
            Experiment::SpuriousSweep => Grid::SpuriousSweep(SpuriousGrid::default()),
            Experiment::DiagTrajectory => Grid::DiagTrajectory(DiagGrid::default()),
            Experiment::SharpnessScatter => Grid::SharpnessScatter(ScatterGrid::default()),
            Experiment::BoundCompare => Grid::BoundCompare(BoundCompareGrid::default()),
        }
    }

    pub fn experiment(&self) -> Experiment {
        match self {
            Grid::RidgeShift(_) => Experiment::RidgeShift,
            Grid::SpuriousSweep(_) => Experiment::SpuriousSweep,
            Grid::DiagTrajectory(_) => Experiment::DiagTrajectory,
            Grid::SharpnessScatter(_) => Experiment::SharpnessScatter,
            Grid::BoundCompare(_) => Experiment::BoundCompare,
        }
    }

    fn parse(experiment: Experiment, value: Value) -> Result<Self> {
        fn typed<T: DeserializeOwned + Default>(v: Value) -> Result<T> {
            if v.is_null() {
                return Ok(T::default());
            }
            serde_json::from_value(v).map_err(|e| Error::Config(format!("grid: {e}")))
        }
        Ok(match experiment {
            Experiment::RidgeShift => Grid::RidgeShift(typed(value)?),
            Experiment::SpuriousSweep => Grid::SpuriousSweep(typed(value)?),
            Experiment::DiagTrajectory => Grid::DiagTrajectory(typed(value)?),
            Experiment::SharpnessScatter => Grid::SharpnessScatter(typed(value)?),
            Experiment::BoundCompare => Grid::BoundCompare(typed(value)?),
        })
    }

    fn to_value(&self) -> Value {
        let v = match self {
            Grid::RidgeShift(g) => serde_json::to_value(g),
            Grid::SpuriousSweep(g) => serde_json::to_value(g),
            Grid::DiagTrajectory(g) => serde_json::to_value(g),
            Grid::SharpnessScatter(g) => serde_json::to_value(g),
            Grid::BoundCompare(g) => serde_json::to_value(g),
        };
        v.expect("grid structs serialize")
    }

    fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.into()));
        match self {
            Grid::RidgeShift(g) => {
                if g.d == 0 || g.n == 0 || g.n_test == 0 {
                    return fail("ridge-shift: d, n and n_test must be ≥ 1");
                }
                if g.betas.is_empty() || g.alphas.is_empty() {
                    return fail("ridge-shift: betas and alphas must be nonempty");
                }
                if g.betas.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) || g.alphas.iter().any(|a| !a.is_finite()) {
                    return fail("ridge-shift: betas must be finite and ≥ 0, alphas finite");
                }
                if g.betas.contains(&0.0) && g.n < g.d {
                    return fail("ridge-shift: beta = 0 needs n ≥ d");
                }
            }
            Grid::SpuriousSweep(g) => {
                g.data.validate()?;
                g.train.validate()?;
                g.bounds.validate()?;
                if g.sweeps.is_empty() {
                    return fail("spurious-sweep: sweeps must be nonempty");
                }
                if g.sweeps.contains(&SweepKind::Width) && (g.widths.is_empty() || g.widths.contains(&0)) {
                    return fail("spurious-sweep: widths must be nonempty and ≥ 1");
                }
                if g.sweeps.contains(&SweepKind::PMaj) && (g.p_majs.is_empty() || g.p_majs.iter().any(|p| !(0.0..=1.0).contains(p))) {
                    return fail("spurious-sweep: p_majs must be nonempty and in [0, 1]");
                }
                if g.fixed_width == 0 {
                    return fail("spurious-sweep: fixed_width must be ≥ 1");
                }
            }
            Grid::DiagTrajectory(g) => {
                if g.n == 0 || g.d == 0 || g.steps == 0 || g.log_every == 0 {
                    return fail("diag-trajectory: n, d, steps and log_every must be ≥ 1");
                }
                if !(g.alpha_init > 0.0) || !(g.lr > 0.0) {
                    return fail("diag-trajectory: alpha_init and lr must be positive");
                }
                if !(0.0..1.0).contains(&g.t_eps_fraction) {
                    return fail("diag-trajectory: t_eps_fraction must lie in [0, 1)");
                }
            }
            Grid::SharpnessScatter(g) => {
                g.data.validate()?;
                g.train.validate()?;
                if g.l2s.is_empty() || g.widths.is_empty() || g.widths.contains(&0) || g.l2s.iter().any(|l| !(*l >= 0.0)) {
                    return fail("sharpness-scatter: l2s and widths must be nonempty and valid");
                }
            }
            Grid::BoundCompare(g) => {
                g.data.validate()?;
                g.train.validate()?;
                g.bounds.validate()?;
                if g.width == 0 {
                    return fail("bound-compare: width must be ≥ 1");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConfig", into = "RawConfig")]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub grid: Grid,
    pub output_path: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Experiment,
    #[serde(default)]
    seeds: Option<Vec<u64>>,
    #[serde(default)]
    grid: Value,
    #[serde(default)]
    output_path: Option<PathBuf>,
}

impl TryFrom<RawConfig> for ExperimentConfig {
    type Error = Error;

    fn try_from(raw: RawConfig) -> Result<Self> {
        let cfg = ExperimentConfig {
            seeds: raw.seeds.unwrap_or_else(|| raw.experiment.default_seeds()),
            grid: Grid::parse(raw.experiment, raw.grid)?,
            output_path: raw.output_path,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<ExperimentConfig> for RawConfig {
    fn from(cfg: ExperimentConfig) -> Self {
        RawConfig { experiment: cfg.experiment(), seeds: Some(cfg.seeds), grid: cfg.grid.to_value(), output_path: cfg.output_path }
    }
}

impl ExperimentConfig {
    pub fn default_for(experiment: Experiment) -> Self {
        Self { seeds: experiment.default_seeds(), grid: Grid::default_for(experiment), output_path: None }
    }

    pub fn experiment(&self) -> Experiment {
        self.grid.experiment()
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be nonempty".into()));
        }
        self.grid.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file, or builds the defaults for `experiment` when `source` is `default`.
    pub fn load(source: &str, experiment: Experiment) -> Result<Self> {
        if source == "default" {
            return Ok(Self::default_for(experiment));
        }
        let text = std::fs::read_to_string(Path::new(source)).map_err(|e| Error::Config(format!("cannot read {source}: {e}")))?;
        let cfg = Self::from_json(&text)?;
        if cfg.experiment() != experiment {
            return Err(Error::Config(format!("config is for `{}`, not `{experiment}`", cfg.experiment())));
        }
        Ok(cfg)
    }

    /// Canonical JSON (sorted keys) used for hashing and the manifest.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(&serde_json::to_value(self).expect("config serializes")).expect("value serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        for e in Experiment::ALL {
            let cfg = ExperimentConfig::default_for(e);
            cfg.validate().unwrap();
            let back = ExperimentConfig::from_json(&cfg.to_canonical_json()).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
    }

    #[test]
    fn default_grids_follow_the_documented_values() {
        let Grid::RidgeShift(r) = Grid::default_for(Experiment::RidgeShift) else { unreachable!() };
        assert_eq!(r.betas, vec![0.01, 0.1, 1.0, 2.0]);
        assert_eq!(r.alphas.len(), 25);
        assert_eq!(r.alphas[12], std::f64::consts::PI);
        let Grid::SpuriousSweep(s) = Grid::default_for(Experiment::SpuriousSweep) else { unreachable!() };
        assert_eq!(s.widths, vec![100, 200, 500, 800, 1200]);
        assert_eq!(s.p_majs, vec![0.5, 0.6, 0.7, 0.8, 0.9]);
        assert_eq!((s.data.n, s.data.d, s.bounds.k_target, s.bounds.delta), (500, 100, 1000, 0.05));
        let Grid::SharpnessScatter(c) = Grid::default_for(Experiment::SharpnessScatter) else { unreachable!() };
        assert_eq!(c.l2s.len() * c.widths.len() * 5, 30);
    }

    #[test]
    fn partial_grid_takes_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"experiment":"ridge-shift","seeds":[3],"grid":{"betas":[1,2]}}"#).unwrap();
        let Grid::RidgeShift(g) = &cfg.grid else { panic!() };
        assert_eq!(g.betas, vec![1.0, 2.0]);
        assert_eq!(g.d, 100);
        assert_eq!(cfg.seeds, vec![3]);
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        let bad = [
            r#"{"experiment":"nope"}"#,
            r#"{"experiment":"ridge-shift","seeds":[]}"#,
            r#"{"experiment":"ridge-shift","grid":{"betas":[]}}"#,
            r#"{"experiment":"ridge-shift","grid":{"bogus":1}}"#,
            r#"{"experiment":"spurious-sweep","grid":{"bounds":{"delta":1.5}}}"#,
            r#"{"experiment":"diag-trajectory","grid":{"lr":0}}"#,
            r#"not json"#,
        ];
        for text in bad {
            assert!(matches!(ExperimentConfig::from_json(text), Err(Error::Config(_))), "{text}");
        }
    }
}
