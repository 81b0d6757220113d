//! Cartesian parameter sweeps over `lambda`, `epsilon`, `n_nodes` and `seed`.
//!
//! A grid spec is a `;`-separated list of axes, each `name=values`, where
//! values are comma-separated numbers or an inclusive integer range `a..b`:
//!
//! ```text
//! seed=1..10;lambda=1e-5,1e-4
//! ```

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_to_dir, ExperimentConfig, RunSummary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Lambda,
    Epsilon,
    NNodes,
    Seed,
}

impl Axis {
    fn parse(name: &str) -> Result<Self> {
        match name {
            "lambda" => Ok(Axis::Lambda),
            "epsilon" => Ok(Axis::Epsilon),
            "n_nodes" => Ok(Axis::NNodes),
            "seed" => Ok(Axis::Seed),
            other => Err(Error::Config(format!(
                "unknown sweep axis {other:?} (expected lambda, epsilon, n_nodes or seed)"
            ))),
        }
    }

    fn integral(self) -> bool {
        matches!(self, Axis::NNodes | Axis::Seed)
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::Lambda => "lambda",
            Axis::Epsilon => "epsilon",
            Axis::NNodes => "n_nodes",
            Axis::Seed => "seed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub axes: Vec<(Axis, Vec<f64>)>,
}

impl std::str::FromStr for GridSpec {
    type Err = Error;

    fn from_str(spec: &str) -> Result<Self> {
        let mut axes: Vec<(Axis, Vec<f64>)> = Vec::new();
        for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, values) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("grid axis {part:?} is not of the form name=values")))?;
            let axis = Axis::parse(name.trim())?;
            if axes.iter().any(|(a, _)| *a == axis) {
                return Err(Error::Config(format!("grid axis {} given twice", axis.name())));
            }
            let values = parse_values(axis, values.trim())?;
            axes.push((axis, values));
        }
        if axes.is_empty() {
            return Err(Error::Config("empty sweep grid".into()));
        }
        Ok(GridSpec { axes })
    }
}

fn parse_values(axis: Axis, text: &str) -> Result<Vec<f64>> {
    let bad = |what: &str| Error::Config(format!("{}: invalid value {what:?}", axis.name()));
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| bad(lo))?;
        let hi: u64 = hi.trim().parse().map_err(|_| bad(hi))?;
        if hi < lo {
            return Err(bad(text));
        }
        return Ok((lo..=hi).map(|v| v as f64).collect());
    }
    let values = text
        .split(',')
        .map(|v| {
            let x: f64 = v.trim().parse().map_err(|_| bad(v))?;
            if !x.is_finite() || (axis.integral() && (x < 0.0 || x.fract() != 0.0)) {
                return Err(bad(v));
            }
            Ok(x)
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(bad(text));
    }
    Ok(values)
}

impl GridSpec {
    /// All cells in row-major order (last axis fastest).
    pub fn cells(&self) -> Vec<Vec<(Axis, f64)>> {
        let mut cells = vec![Vec::new()];
        for (axis, values) in &self.axes {
            cells = cells
                .into_iter()
                .flat_map(|cell| {
                    values.iter().map(move |&v| {
                        let mut c = cell.clone();
                        c.push((*axis, v));
                        c
                    })
                })
                .collect();
        }
        cells
    }
}

pub fn apply(base: &ExperimentConfig, cell: &[(Axis, f64)]) -> ExperimentConfig {
    let mut cfg = base.clone();
    for &(axis, v) in cell {
        match axis {
            Axis::Lambda => cfg.lambda = v,
            Axis::Epsilon => {
                cfg.noise.epsilon = v;
                cfg.noise.enabled = v > 0.0;
            }
            Axis::NNodes => cfg.grid.n_nodes = v as usize,
            Axis::Seed => cfg.seed = v as u64,
        }
    }
    cfg
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub index: usize,
    pub params: Vec<(Axis, f64)>,
    pub dir: PathBuf,
    pub outcome: std::result::Result<RunSummary, String>,
}

impl CellResult {
    pub fn failed(&self) -> bool {
        match &self.outcome {
            Ok(s) => s.failed(),
            Err(_) => true,
        }
    }
}

/// Run every cell (concurrently, at most `jobs` at a time; `0` means the
/// default pool size) and write `aggregate.csv` under `out`.
pub fn sweep(base: &ExperimentConfig, grid: &GridSpec, out: &Path, jobs: usize) -> Result<Vec<CellResult>> {
    let cells = grid.cells();
    std::fs::create_dir_all(out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let results: Vec<CellResult> = pool.install(|| {
        cells
            .par_iter()
            .enumerate()
            .map(|(index, params)| {
                let cfg = apply(base, params);
                let dir = out.join(format!("cell-{index:03}"));
                let outcome = cfg
                    .validate()
                    .and_then(|_| run_to_dir(&cfg, &dir))
                    .map_err(|e| e.to_string());
                CellResult { index, params: params.clone(), dir, outcome }
            })
            .collect()
    });
    write_aggregate(&out.join("aggregate.csv"), grid, &results)?;
    if results.iter().all(CellResult::failed) {
        return Err(Error::IntegrationFailure {
            t: 0.0,
            reason: format!("all {} sweep cells failed", results.len()),
        });
    }
    Ok(results)
}

fn write_aggregate(path: &Path, grid: &GridSpec, results: &[CellResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["cell".to_string()];
    header.extend(grid.axes.iter().map(|(a, _)| a.name().to_string()));
    header.extend(
        ["status", "total_cost_uncontrolled", "total_cost_controlled", "cost_ratio", "error"].map(String::from),
    );
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in results {
        let mut row = vec![r.index.to_string()];
        row.extend(r.params.iter().map(|(_, v)| v.to_string()));
        match &r.outcome {
            Ok(s) => {
                row.push(if s.failed() { "failed" } else { "ok" }.to_string());
                row.push(opt(s.total_cost_uncontrolled));
                row.push(opt(s.total_cost_controlled));
                row.push(opt(s.cost_ratio));
                row.push(s.errors.join("; "));
            }
            Err(e) => {
                row.push("failed".to_string());
                row.extend([String::new(), String::new(), String::new()]);
                row.push(e.clone());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
