//! `oodbound` command line.
//!
//! Every subcommand writes its artifacts into the `--out` directory together
//! with a `manifest.json`, and prints the manifest line on stdout. Exit codes:
//! 0 on success, 2 on usage or configuration errors, 1 on runtime errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::{Experiment, ExperimentConfig};
use super::{cell, run_experiment, Manifest, Table};
use crate::bounds::{pacbayes_bound, robust_ood_bound, write_bound_csv, zhao_bound, DEFAULT_DELTA};
use crate::datasets::{gen_linear_regression, gen_spurious, sample_sphere, LabeledDataset, SpuriousConfig};
use crate::models::{exp_loss, ModelRecord};
use crate::robustness::{build_partition_with, cell_counts, DEFAULT_PROJ_DIM};
use crate::sharpness::{diag_sharpness, rf_logistic_curvatures, rf_sharpness, ridge_sharpness, TraceConvention};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "oodbound", version, about = "Robustness, sharpness and OOD generalization bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config file, or `default`.
    #[arg(long, default_value = "default")]
    config: String,
    /// Overrides the config seed(s).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset CSV.
    Gen(Common),
    /// Build a partition from a reference dataset and count its cells.
    Partition {
        /// Reference dataset CSV.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Sharpness report of a saved model on a dataset.
    Sharpness {
        /// Model JSON.
        #[arg(long)]
        model: PathBuf,
        /// Dataset CSV.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate one bound from given ingredients.
    Bound(Common),
    /// Run an experiment.
    Run {
        /// ridge-shift, spurious-sweep, diag-trajectory, sharpness-scatter or bound-compare.
        experiment: String,
        #[command(flatten)]
        common: Common,
    },
    /// Summarize bound CSVs per method.
    Compare {
        /// Bound CSV files with the `method,...,extra_json` header.
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

/// Dataset generator config for `gen`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GenConfig {
    Spurious {
        n: usize,
        d: usize,
        p_maj: f64,
        sigma_core: f64,
        sigma_spu: f64,
        seed: u64,
    },
    /// `y = Xθ*` with `θ*` uniform on the unit sphere.
    LinearRegression {
        n: usize,
        d: usize,
        seed: u64,
    },
}

impl Default for GenConfig {
    fn default() -> Self {
        let s = SpuriousConfig::standard(0);
        GenConfig::Spurious { n: s.n, d: s.d, p_maj: s.p_maj, sigma_core: s.sigma_core, sigma_spu: s.sigma_spu, seed: s.seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub k_target: usize,
    pub proj_dim: usize,
    pub seed: u64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self { k_target: 1000, proj_dim: DEFAULT_PROJ_DIM, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SharpnessConfig {
    pub convention: TraceConvention,
}

/// Ingredients for `bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase", deny_unknown_fields)]
pub enum BoundInput {
    Robust {
        source_risk: f64,
        #[serde(rename = "M")]
        m_loss: f64,
        dtv: f64,
        epsilon: f64,
        #[serde(rename = "K")]
        k: usize,
        n: usize,
        delta: f64,
    },
    Zhao {
        source_risk: f64,
        proxy_dist: f64,
        d_prime: usize,
        n: usize,
        delta: f64,
    },
    Pacbayes {
        source_risk: f64,
        dis_hat: f64,
        kl: f64,
        m: usize,
        alpha: f64,
        delta: f64,
    },
}

impl Default for BoundInput {
    fn default() -> Self {
        BoundInput::Robust { source_risk: 0.0, m_loss: 1.0, dtv: 0.0, epsilon: 0.0, k: 1000, n: 500, delta: DEFAULT_DELTA }
    }
}

enum Failure {
    Usage(Error),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e),
            other => Failure::Runtime(other),
        }
    }
}

fn load_json<T: DeserializeOwned + Default>(source: &str) -> Result<T> {
    if source == "default" {
        return Ok(T::default());
    }
    let text = std::fs::read_to_string(source).map_err(|e| Error::Config(format!("cannot read {source}: {e}")))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{source}: {e}")))
}

fn read_dataset(path: &Path) -> Result<LabeledDataset> {
    let file = File::open(path).map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    LabeledDataset::read_csv(file)
}

fn prepare_out(out: &Option<PathBuf>, fallback: &str) -> Result<PathBuf> {
    let dir = out.clone().unwrap_or_else(|| PathBuf::from(fallback));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn finish(dir: &Path, manifest: Manifest) -> Result<()> {
    manifest.write(dir)?;
    println!("{}", manifest.line());
    Ok(())
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

fn cmd_gen(common: &Common) -> std::result::Result<(), Failure> {
    let mut cfg: GenConfig = load_json(&common.config)?;
    if let Some(s) = common.seed {
        match &mut cfg {
            GenConfig::Spurious { seed, .. } | GenConfig::LinearRegression { seed, .. } => *seed = s,
        }
    }
    let (data, seed) = match cfg {
        GenConfig::Spurious { n, d, p_maj, sigma_core, sigma_spu, seed } => {
            let c = SpuriousConfig { n, d, p_maj, sigma_core, sigma_spu, seed };
            c.validate().map_err(|e| Failure::Usage(Error::Config(e.to_string())))?;
            (gen_spurious(&c)?, seed)
        }
        GenConfig::LinearRegression { n, d, seed } => {
            if n == 0 || d == 0 {
                return Err(Failure::Usage(Error::Config("n and d must be ≥ 1".into())));
            }
            let theta = sample_sphere(d, 1.0, seed)?;
            (gen_linear_regression(theta.view(), n, seed)?, seed)
        }
    };
    let dir = prepare_out(&common.out, "out")?;
    data.write_csv(BufWriter::new(File::create(dir.join("dataset.csv")).map_err(Error::from)?))?;
    finish(&dir, Manifest::new("gen", to_value(&cfg), vec![seed], vec!["dataset.csv".into()]))?;
    Ok(())
}

fn cmd_partition(data: &Path, common: &Common) -> std::result::Result<(), Failure> {
    let mut cfg: PartitionConfig = load_json(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if cfg.k_target == 0 || cfg.proj_dim == 0 {
        return Err(Failure::Usage(Error::Config("k_target and proj_dim must be ≥ 1".into())));
    }
    let reference = read_dataset(data)?;
    let partition = build_partition_with(&reference, cfg.k_target, cfg.proj_dim, cfg.seed)?;
    let counts = cell_counts(&partition, &reference)?;
    let dir = prepare_out(&common.out, "out")?;
    let mut text = serde_json::to_string_pretty(&partition).map_err(Error::from)?;
    text.push('\n');
    std::fs::write(dir.join("partition.json"), text).map_err(Error::from)?;
    counts.write_csv(BufWriter::new(File::create(dir.join("cell_counts.csv")).map_err(Error::from)?))?;
    finish(&dir, Manifest::new("partition", to_value(&cfg), vec![cfg.seed], vec!["partition.json".into(), "cell_counts.csv".into()]))?;
    Ok(())
}

fn cmd_sharpness(model: &Path, data: &Path, common: &Common) -> std::result::Result<(), Failure> {
    let cfg: SharpnessConfig = load_json(&common.config)?;
    let text = std::fs::read_to_string(model).map_err(|e| Error::Config(format!("cannot read {}: {e}", model.display())))?;
    let record: ModelRecord = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", model.display())))?;
    let data = read_dataset(data)?;
    let report = match record {
        ModelRecord::Ridge { .. } => ridge_sharpness(&record.into_ridge()?, data.features(), cfg.convention)?,
        ModelRecord::RandomFeature { .. } => {
            let net = record.into_random_feature()?;
            rf_sharpness(&net, &data, &rf_logistic_curvatures(&net, &data))?
        }
        ModelRecord::DiagonalNet { .. } => {
            let state = record.into_diagonal()?;
            let mut x = data.features().t().to_owned();
            for (mut col, &y) in x.columns_mut().into_iter().zip(data.labels()) {
                col *= y;
            }
            let theta = crate::models::diag_theta(&state);
            let (_, r) = exp_loss(theta.view(), x.view())?;
            diag_sharpness(theta.view(), x.view(), r.view())?
        }
    };
    let dir = prepare_out(&common.out, "out")?;
    let mut out = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    out.push('\n');
    std::fs::write(dir.join("sharpness.json"), out).map_err(Error::from)?;
    finish(&dir, Manifest::new("sharpness", to_value(&cfg), vec![], vec!["sharpness.json".into()]))?;
    Ok(())
}

fn cmd_bound(common: &Common) -> std::result::Result<(), Failure> {
    let cfg: BoundInput = load_json(&common.config)?;
    let report = match cfg {
        BoundInput::Robust { source_risk, m_loss, dtv, epsilon, k, n, delta } => robust_ood_bound(source_risk, m_loss, dtv, epsilon, k, n, delta),
        BoundInput::Zhao { source_risk, proxy_dist, d_prime, n, delta } => zhao_bound(source_risk, proxy_dist, d_prime, n, delta),
        BoundInput::Pacbayes { source_risk, dis_hat, kl, m, alpha, delta } => pacbayes_bound(source_risk, dis_hat, kl, m, alpha, delta),
    }
    .map_err(|e| Failure::Usage(Error::Config(e.to_string())))?;
    let dir = prepare_out(&common.out, "out")?;
    write_bound_csv(&[report], BufWriter::new(File::create(dir.join("bound.csv")).map_err(Error::from)?))?;
    finish(&dir, Manifest::new("bound", to_value(&cfg), vec![], vec!["bound.csv".into()]))?;
    Ok(())
}

fn cmd_run(experiment: &str, common: &Common) -> std::result::Result<(), Failure> {
    let experiment: Experiment = experiment.parse()?;
    let mut cfg = ExperimentConfig::load(&common.config, experiment)?;
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    let fallback = format!("out/{experiment}");
    let out = common.out.clone().or_else(|| cfg.output_path.clone());
    let dir = prepare_out(&out, &fallback)?;
    let table = run_experiment(&cfg)?;
    let name = format!("{experiment}.csv");
    table.write_csv(BufWriter::new(File::create(dir.join(&name)).map_err(Error::from)?))?;
    finish(&dir, Manifest::new(&format!("run {experiment}"), to_value(&cfg), cfg.seeds.clone(), vec![name]))?;
    Ok(())
}

pub const COMPARE_HEADER: [&str; 6] = ["method", "count", "mean_total", "min_total", "max_total", "tightest_count"];

/// Per-method totals across bound CSVs; rows sharing an `extra_json` seed
/// and file are grouped to count which method was tightest.
pub fn compare_bound_tables(inputs: &[String]) -> Result<Table> {
    let mut totals: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut groups: BTreeMap<(usize, String), Vec<(String, f64)>> = BTreeMap::new();
    for (file_idx, text) in inputs.iter().enumerate() {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header != crate::bounds::BOUND_CSV_HEADER {
            return Err(Error::Config(format!("not a bound CSV: header {}", header.join(","))));
        }
        for rec in reader.records() {
            let rec = rec?;
            let method = rec[0].to_string();
            let total: f64 = rec[5].parse().map_err(|_| Error::Config(format!("bad total `{}`", &rec[5])))?;
            let extra: serde_json::Value = serde_json::from_str(&rec[10]).map_err(|e| Error::Config(format!("bad extra_json: {e}")))?;
            let key = extra.get("seed").map(|v| v.to_string()).unwrap_or_default();
            totals.entry(method.clone()).or_default().push(total);
            groups.entry((file_idx, key)).or_default().push((method, total));
        }
    }
    let mut tightest: BTreeMap<String, usize> = BTreeMap::new();
    for rows in groups.values() {
        if let Some((m, _)) = rows.iter().min_by(|a, b| a.1.total_cmp(&b.1)) {
            *tightest.entry(m.clone()).or_default() += 1;
        }
    }
    let mut t = Table::new(&COMPARE_HEADER);
    for (method, v) in &totals {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        t.push(vec![method.clone(), v.len().to_string(), cell(mean), cell(min), cell(max), tightest.get(method).copied().unwrap_or(0).to_string()]);
    }
    Ok(t)
}

fn cmd_compare(input: &[PathBuf], common: &Common) -> std::result::Result<(), Failure> {
    let texts = input
        .iter()
        .map(|p| std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display()))))
        .collect::<Result<Vec<_>>>()?;
    let table = compare_bound_tables(&texts)?;
    let dir = prepare_out(&common.out, "out")?;
    table.write_csv(BufWriter::new(File::create(dir.join("compare.csv")).map_err(Error::from)?))?;
    let inputs: Vec<String> = input.iter().map(|p| p.display().to_string()).collect();
    finish(&dir, Manifest::new("compare", serde_json::json!({ "inputs": inputs }), vec![], vec!["compare.csv".into()]))?;
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Gen(c) => cmd_gen(c),
        Command::Partition { data, common } => cmd_partition(data, common),
        Command::Sharpness { model, data, common } => cmd_sharpness(model, data, common),
        Command::Bound(c) => cmd_bound(c),
        Command::Run { experiment, common } => cmd_run(experiment, common),
        Command::Compare { input, common } => cmd_compare(input, common),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}
