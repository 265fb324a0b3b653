//! Experiment runners, artifacts and the command-line front end.
//!
//! Every runner is a pure function of its [`ExperimentConfig`]: grid points
//! fan out over a rayon pool, each point draws from streams keyed on its
//! seed, and results are collected back in grid order, so the emitted CSV is
//! byte-identical across runs and thread counts.

pub mod cli;
pub mod config;
mod diag;
mod ridge;
mod scatter;
mod spurious;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{Experiment, ExperimentConfig, Grid};
pub use diag::{run_diag_trajectory, DiagRow, DIAG_HEADER};
pub use ridge::{run_ridge_shift, RidgeRow, RIDGE_HEADER};
pub use scatter::{run_sharpness_scatter, ScatterResult, ScatterRow, SCATTER_HEADER};
pub use spurious::{evaluate_point, run_bound_compare, run_spurious_sweep, PointResult, SweepRow, SWEEP_HEADER};

use crate::bounds::BOUND_CSV_HEADER;
use crate::{Error, Result};

pub const BUILD_ID: &str = concat!(env!("CARGO_PKG_NAME"), "-", env!("CARGO_PKG_VERSION"));

/// Header plus string cells, written as UTF-8 CSV with LF line endings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }
}

pub(crate) fn cell(v: f64) -> String {
    v.to_string()
}

/// Runs the configured experiment and returns its CSV table.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Table> {
    match &cfg.grid {
        Grid::RidgeShift(g) => Ok(ridge::table(&run_ridge_shift(g, &cfg.seeds)?)),
        Grid::SpuriousSweep(g) => Ok(spurious::sweep_table(&run_spurious_sweep(g, &cfg.seeds)?)),
        Grid::DiagTrajectory(g) => Ok(diag::table(&run_diag_trajectory(g, &cfg.seeds)?)),
        Grid::SharpnessScatter(g) => Ok(scatter::table(&run_sharpness_scatter(g, &cfg.seeds)?)),
        Grid::BoundCompare(g) => {
            let mut t = Table::new(&BOUND_CSV_HEADER);
            for r in run_bound_compare(g, &cfg.seeds)? {
                t.push(r.csv_record());
            }
            Ok(t)
        }
    }
}

/// Golden CSV header of each experiment.
pub fn experiment_header(e: Experiment) -> &'static [&'static str] {
    match e {
        Experiment::RidgeShift => &RIDGE_HEADER,
        Experiment::SpuriousSweep => &SWEEP_HEADER,
        Experiment::DiagTrajectory => &DIAG_HEADER,
        Experiment::SharpnessScatter => &SCATTER_HEADER,
        Experiment::BoundCompare => &BOUND_CSV_HEADER,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Run record written as `manifest.json` next to the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub build: String,
    pub outputs: Vec<String>,
    pub config: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, config: serde_json::Value, seeds: Vec<u64>, outputs: Vec<String>) -> Self {
        let canonical = serde_json::to_string(&config).expect("value serializes");
        Self { command: command.to_string(), config_sha256: sha256_hex(canonical.as_bytes()), seeds, build: BUILD_ID.to_string(), outputs, config }
    }

    /// One-line summary printed after every run.
    pub fn line(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(|s| s.to_string()).collect();
        format!(
            "manifest command={} config_sha256={} seeds={} build={} outputs={}",
            self.command,
            self.config_sha256,
            if seeds.is_empty() { "-".to_string() } else { seeds.join(",") },
            self.build,
            self.outputs.join(",")
        )
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }
}

/// Ranks with ties sharing their average rank (1-based).
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dims("spearman inputs differ in length"));
    }
    if x.len() < 2 {
        return Err(Error::invalid("spearman needs at least 2 points"));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("spearman undefined for a constant input"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn spearman_hand_values() {
        assert_relative_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_relative_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        // no ties: 1 − 6Σd²/(n(n²−1)) with d = (0, 1, −1, 0) gives 1 − 12/60
        assert_relative_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap(), 0.8, max_relative = 1e-12);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn table_uses_lf_and_quotes_when_needed() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["1".into(), "x,y".into()]);
        assert_eq!(t.to_csv_string().unwrap(), "a,b\n1,\"x,y\"\n");
    }

    #[test]
    fn manifest_hash_is_stable() {
        let m = Manifest::new("run ridge-shift", serde_json::json!({"b": 1, "a": 2}), vec![0, 1], vec!["x.csv".into()]);
        assert_eq!(m.config_sha256, sha256_hex(br#"{"a":2,"b":1}"#));
        assert!(m.line().starts_with("manifest command=run ridge-shift config_sha256="));
        assert!(m.line().contains("seeds=0,1 build=oodbound-0.1.0"));
    }
}
