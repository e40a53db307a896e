//! Grid sweeps over constraint ratios and the VDW length scale, summarized as
//! one CSV row per (cell, seed).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::rewards::NUM_GROUPS;
use crate::trainer::{resolve_expert_values, train, EvalReport, RunPaths};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub alphas: Vec<[f64; NUM_GROUPS]>,
    /// Empty keeps the base configuration's `ell0`.
    #[serde(default)]
    pub ell0: Vec<f64>,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub seed: u64,
    pub alpha: [f64; NUM_GROUPS],
    pub ell0: f64,
}

impl SweepCell {
    /// Directory-safe run id suffix.
    pub fn label(&self) -> String {
        let a: Vec<String> = self.alpha.iter().map(|x| format!("{x}")).collect();
        format!("s{}_a{}_l{}", self.seed, a.join("-"), self.ell0)
    }
}

/// One row of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub seed: u64,
    pub alpha_t: f64,
    pub alpha_r: f64,
    pub alpha_s: f64,
    pub ell0: f64,
    /// Mean over skills of the evaluated return divided by the expert value.
    pub frac_task: Option<f64>,
    pub frac_regularizer: Option<f64>,
    pub frac_style: Option<f64>,
    pub diversity: Option<f64>,
    pub status: String,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config(
                "sweep: need at least one alpha triple and one seed".into(),
            ));
        }
        if self.alphas.iter().flatten().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(Error::Config("sweep: alpha values must lie in (0, 1]".into()));
        }
        if self.ell0.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::Config("sweep: ell0 values must be positive".into()));
        }
        Ok(())
    }

    /// Cells in row-major order: alpha, then ell0, then seed.
    pub fn cells(&self, base: &RunConfig) -> Vec<SweepCell> {
        let ells = if self.ell0.is_empty() {
            vec![base.diversity.ell0]
        } else {
            self.ell0.clone()
        };
        let mut out = Vec::new();
        for &alpha in &self.alphas {
            for &ell0 in &ells {
                for &seed in &self.seeds {
                    out.push(SweepCell { seed, alpha, ell0 });
                }
            }
        }
        out
    }
}

/// Base configuration specialized to one cell; runs land in `<run_id>/<cell label>`.
pub fn cell_config(base: &RunConfig, cell: &SweepCell) -> RunConfig {
    let mut cfg = base.clone();
    cfg.seed = cell.seed;
    cfg.lagrange.alpha = cell.alpha.to_vec();
    cfg.diversity.ell0 = cell.ell0;
    cfg.output_dir = Path::new(&base.output_dir)
        .join(&base.run_id)
        .to_string_lossy()
        .into_owned();
    cfg.run_id = cell.label();
    cfg
}

fn fraction(report: &EvalReport, j: usize) -> Option<f64> {
    let v = *report.expert_values.get(j)?;
    if report.skills.is_empty() || v == 0.0 {
        return None;
    }
    Some(report.skills.iter().map(|s| s.mean_returns[j] / v).sum::<f64>() / report.skills.len() as f64)
}

pub fn row_from_report(cell: &SweepCell, report: &EvalReport) -> SweepRow {
    SweepRow {
        seed: cell.seed,
        alpha_t: cell.alpha[0],
        alpha_r: cell.alpha[1],
        alpha_s: cell.alpha[2],
        ell0: cell.ell0,
        frac_task: fraction(report, 0),
        frac_regularizer: fraction(report, 1),
        frac_style: fraction(report, 2),
        diversity: report.diversity_metric,
        status: "ok".into(),
    }
}

pub fn failed_row(cell: &SweepCell, err: &Error) -> SweepRow {
    SweepRow {
        seed: cell.seed,
        alpha_t: cell.alpha[0],
        alpha_r: cell.alpha[1],
        alpha_s: cell.alpha[2],
        ell0: cell.ell0,
        frac_task: None,
        frac_regularizer: None,
        frac_style: None,
        diversity: None,
        status: format!("failed: {}", err.to_string().replace(['\n', '\r'], " ")),
    }
}

/// Trains one cell in-process; failures become a row rather than an error.
pub fn run_cell(base: &RunConfig, cell: &SweepCell, write: bool) -> SweepRow {
    let cfg = cell_config(base, cell);
    let paths = write.then(|| RunPaths::new(cfg.run_dir()));
    let result = resolve_expert_values(&cfg, paths.as_ref()).and_then(|v| train(&cfg, &v, paths.as_ref()));
    match result {
        Ok(out) => row_from_report(cell, &out.report),
        Err(e) => failed_row(cell, &e),
    }
}

/// Sequential sweep over every cell.
pub fn run_sweep(base: &RunConfig, grid: &SweepGrid, write: bool) -> Result<Vec<SweepRow>> {
    base.validate()?;
    grid.validate()?;
    Ok(grid.cells(base).iter().map(|c| run_cell(base, c, write)).collect())
}

pub fn write_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Io(std::io::Error::other(e))))
        .collect()
}
