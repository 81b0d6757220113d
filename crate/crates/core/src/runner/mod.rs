//! Experiment configuration, the canonical presets, paired execution and
//! persistence of records.

mod config;
pub mod sweep;
pub mod verify;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

pub use config::{DiscretizationSettings, ExperimentConfig, NoiseSettings, OutputSettings, RunMode};

use crate::error::{Error, Result};
use crate::integrate::{simulate, ControlMode, RunTotals, SimulationRecord};

const PRESETS: [(&str, &str); 4] = [
    ("test1", include_str!("../../presets/test1.toml")),
    ("test2", include_str!("../../presets/test2.toml")),
    ("test3", include_str!("../../presets/test3.toml")),
    ("test4", include_str!("../../presets/test4.toml")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(name, _)| *name)
}

/// Verbatim text of an embedded preset.
pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let text = preset_text(name).ok_or_else(|| {
        let known: Vec<_> = preset_names().collect();
        Error::Config(format!("unknown preset {name:?} (known: {})", known.join(", ")))
    })?;
    ExperimentConfig::from_toml_str(text)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepCounts {
    pub controlled: Option<RunTotals>,
    pub uncontrolled: Option<RunTotals>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub mode: RunMode,
    pub total_cost_controlled: Option<f64>,
    pub total_cost_uncontrolled: Option<f64>,
    /// Uncontrolled over controlled total cost.
    pub cost_ratio: Option<f64>,
    pub final_mean_uptake_controlled: Option<f64>,
    pub final_mean_uptake_uncontrolled: Option<f64>,
    pub wall_time: f64,
    pub step_counts: StepCounts,
    /// Failure descriptions, one per failed simulation.
    pub errors: Vec<String>,
    pub version: String,
    pub config: ExperimentConfig,
}

impl RunSummary {
    pub fn failed(&self) -> bool {
        !self.errors.is_empty()
    }
}

/// Records of a paired run; `None` when the mode was not requested.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub uncontrolled: Option<Result<SimulationRecord>>,
    pub controlled: Option<Result<SimulationRecord>>,
    pub summary: RunSummary,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let started = Instant::now();
    let sys = cfg.system()?;
    let cm = cfg.cost_model()?;
    let noise = cfg.noise();
    let run = |mode: ControlMode| -> Option<Result<SimulationRecord>> {
        if !cfg.mode.includes(mode) {
            return None;
        }
        info!("{}: starting {:?} run", cfg.name, mode);
        let rec = simulate(&sys, &cm, &cfg.integrator_for(mode), &noise);
        match &rec {
            Ok(r) => info!(
                "{}: {:?} run finished, total cost {:e}, {} steps",
                cfg.name, mode, r.totals.total_cost, r.totals.accepted_steps
            ),
            Err(e) => info!("{}: {:?} run failed: {e}", cfg.name, mode),
        }
        Some(rec)
    };
    let uncontrolled = run(ControlMode::Uncontrolled);
    let controlled = run(ControlMode::Sdre);

    let ok = |r: &Option<Result<SimulationRecord>>| r.as_ref().and_then(|r| r.as_ref().ok()).cloned();
    let (unc, con) = (ok(&uncontrolled), ok(&controlled));
    let mut errors = Vec::new();
    for (label, r) in [("uncontrolled", &uncontrolled), ("controlled", &controlled)] {
        if let Some(Err(e)) = r {
            errors.push(format!("{label}: {e}"));
        }
    }
    let total = |r: &Option<SimulationRecord>| r.as_ref().map(|r| r.totals.total_cost);
    let last_uptake = |r: &Option<SimulationRecord>| r.as_ref().and_then(|r| r.mean_uptake.last().copied());
    let cost_ratio = match (total(&unc), total(&con)) {
        (Some(u), Some(c)) => Some(u / c),
        _ => None,
    };
    let summary = RunSummary {
        name: cfg.name.clone(),
        seed: cfg.seed,
        mode: cfg.mode,
        total_cost_controlled: total(&con),
        total_cost_uncontrolled: total(&unc),
        cost_ratio,
        final_mean_uptake_controlled: last_uptake(&con),
        final_mean_uptake_uncontrolled: last_uptake(&unc),
        wall_time: started.elapsed().as_secs_f64(),
        step_counts: StepCounts {
            controlled: con.map(|r| r.totals),
            uncontrolled: unc.map(|r| r.totals),
        },
        errors,
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
    };
    Ok(Outcome { uncontrolled, controlled, summary })
}

/// Fixed CSV header for a state of dimension `d`.
pub fn csv_header(d: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    cols.extend((0..d).map(|i| format!("y{i}")));
    cols.extend(["u", "running_cost", "mean_uptake"].map(String::from));
    cols
}

pub fn write_csv(path: &Path, rec: &SimulationRecord) -> Result<()> {
    let d = rec.states.first().map_or(0, |y| y.len());
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(csv_header(d))?;
    for k in 0..rec.len() {
        let mut row = Vec::with_capacity(d + 4);
        row.push(rec.times[k].to_string());
        row.extend(rec.states[k].iter().map(|v| v.to_string()));
        row.push(rec.controls[k].to_string());
        row.push(rec.running_costs[k].to_string());
        row.push(rec.mean_uptake[k].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary(path: &Path, summary: &RunSummary) -> Result<()> {
    let json = serde_json::to_string_pretty(summary).map_err(|e| Error::Io(e.to_string()))?;
    let mut f = fs::File::create(path)?;
    f.write_all(json.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Run and persist `uncontrolled.csv`, `controlled.csv` (as requested) and
/// `summary.json` under `dir`. Simulation failures are reported in the
/// summary rather than as an `Err`.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<RunSummary> {
    let outcome = run_experiment(cfg)?;
    fs::create_dir_all(dir)?;
    for (name, rec) in [("uncontrolled.csv", &outcome.uncontrolled), ("controlled.csv", &outcome.controlled)] {
        if let Some(Ok(rec)) = rec {
            write_csv(&dir.join(name), rec)?;
        }
    }
    write_summary(&dir.join("summary.json"), &outcome.summary)?;
    Ok(outcome.summary)
}
