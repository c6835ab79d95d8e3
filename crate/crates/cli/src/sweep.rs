//! Grid runs over seeds, sample sizes, confidence levels and bandwidths.

use std::fs::{self, OpenOptions};
use std::path::Path;
use std::time::Instant;

use kbope::mdp::sample_transitions;
use kbope::numeric::{mean, median};
use kbope::solver::SolveStatus;
use kbope::ope::{compute_bounds, init_state_sample, BoundsMode};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::commands::{bounds_outcome, write_json, BoundsOutcome, INIT_SALT};
use crate::config::{oracle_rho, true_value, ExperimentConfig, Resolved};
use crate::CliError;

/// One CSV row. Interval columns are empty when the class was rejected or the cell errored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub seed: u64,
    pub n: usize,
    pub delta: f64,
    pub h0: f64,
    pub eta_lower: Option<f64>,
    pub eta_upper: Option<f64>,
    pub eta_true: Option<f64>,
    pub covered: Option<bool>,
    pub width: Option<f64>,
    pub status: String,
    pub wall_ms: u64,
}

impl SweepRow {
    pub fn from_outcome(
        seed: u64,
        n: usize,
        delta: f64,
        h0: f64,
        outcome: &BoundsOutcome,
        eta_true: Option<f64>,
        wall_ms: u64,
    ) -> Self {
        let mut row = SweepRow {
            seed,
            n,
            delta,
            h0,
            eta_lower: None,
            eta_upper: None,
            eta_true,
            covered: None,
            width: None,
            status: "infeasible".into(),
            wall_ms,
        };
        if let BoundsOutcome::Bounds(b) = outcome {
            row.eta_lower = Some(b.eta_lower);
            row.eta_upper = Some(b.eta_upper);
            row.width = Some(b.width());
            row.covered = eta_true.map(|t| b.contains(t));
            row.status = match b.status {
                SolveStatus::Optimal => "optimal",
                SolveStatus::Infeasible => "infeasible",
                SolveStatus::MaxIters => "max_iters",
            }
            .into();
        }
        row
    }

    fn error(seed: u64, n: usize, delta: f64, h0: f64, eta_true: Option<f64>) -> Self {
        SweepRow {
            seed,
            n,
            delta,
            h0,
            eta_lower: None,
            eta_upper: None,
            eta_true,
            covered: None,
            width: None,
            status: "error".into(),
            wall_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub n: usize,
    pub delta: f64,
    pub h0: f64,
    pub runs: usize,
    /// Fraction of runs with a known truth whose interval contains it.
    pub coverage: Option<f64>,
    pub median_width: Option<f64>,
    pub infeasible: usize,
    pub errors: usize,
}

/// Appends rows, writing the header only when the file is new or empty.
pub fn append_rows(path: &Path, rows: &[SweepRow]) -> Result<(), CliError> {
    let io = |e: &dyn std::fmt::Display| CliError::Io(format!("{}: {e}", path.display()));
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io(&e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for row in rows {
        w.serialize(row).map_err(|e| io(&e))?;
    }
    w.flush().map_err(|e| io(&e))
}

pub fn summarize(rows: &[SweepRow]) -> Vec<CellSummary> {
    let mut out: Vec<CellSummary> = Vec::new();
    for chunk in rows.chunk_by(|a, b| (a.n, a.delta, a.h0) == (b.n, b.delta, b.h0)) {
        let covered: Vec<f64> = chunk
            .iter()
            .filter_map(|r| r.covered)
            .map(|c| if c { 1.0 } else { 0.0 })
            .collect();
        let widths: Vec<f64> = chunk.iter().filter_map(|r| r.width).collect();
        out.push(CellSummary {
            n: chunk[0].n,
            delta: chunk[0].delta,
            h0: chunk[0].h0,
            runs: chunk.len(),
            coverage: (!covered.is_empty()).then(|| mean(&covered)),
            median_width: (!widths.is_empty()).then(|| median(&widths)),
            infeasible: chunk.iter().filter(|r| r.status == "infeasible").count(),
            errors: chunk.iter().filter(|r| r.status == "error").count(),
        });
    }
    out
}

fn run_cell(r: &Resolved, seed: u64, n: usize, delta: f64, h0: f64, rho: f64, eta_true: Option<f64>, timing: bool) -> SweepRow {
    let mut cfg = r.config.bounds.clone();
    cfg.delta = delta;
    cfg.features.h0 = h0;
    cfg.rho = rho;
    let start = Instant::now();
    let result = (|| -> Result<BoundsOutcome, CliError> {
        let ds = sample_transitions(&r.env, &r.behavior, n, r.config.sampling, seed)?;
        let init = match cfg.mode {
            BoundsMode::Discounted => init_state_sample(&r.env, &r.target, cfg.n_init_samples, seed ^ INIT_SALT)?,
            BoundsMode::Average => Vec::new(),
        };
        bounds_outcome(compute_bounds(&ds, &r.target, &init, &cfg))
    })();
    let wall_ms = if timing { start.elapsed().as_millis() as u64 } else { 0 };
    match result {
        Ok(outcome) => SweepRow::from_outcome(seed, n, delta, h0, &outcome, eta_true, wall_ms),
        Err(e) => {
            eprintln!("kbope: cell seed={seed} n={n} delta={delta} h0={h0}: {e}");
            SweepRow::error(seed, n, delta, h0, eta_true)
        }
    }
}

pub fn run(config: &Path, out: &Path, summary: &Path, jobs: usize, base_seed: u64, timing: bool) -> Result<(), CliError> {
    let r = ExperimentConfig::load(config)?;
    let c = &r.config;
    let or_default = |grid: &[f64], d: f64| if grid.is_empty() { vec![d] } else { grid.to_vec() };
    let ns = if c.n_grid.is_empty() { vec![c.n] } else { c.n_grid.clone() };
    let deltas = or_default(&c.delta_grid, c.bounds.delta);
    let h0s = or_default(&c.h0_grid, c.bounds.features.h0);
    let rhos = h0s
        .iter()
        .map(|&h0| match c.rho_oracle_factor {
            Some(f) => oracle_rho(&r, f, h0),
            None => Ok(c.bounds.rho),
        })
        .collect::<Result<Vec<f64>, CliError>>()?;
    let eta_true = true_value(&r);

    let mut cells = Vec::new();
    for &n in &ns {
        for &delta in &deltas {
            for (hi, &h0) in h0s.iter().enumerate() {
                for &s in &c.seeds {
                    cells.push((base_seed.wrapping_add(s), n, delta, h0, rhos[hi]));
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut rows: Vec<SweepRow> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(seed, n, delta, h0, rho)| run_cell(&r, seed, n, delta, h0, rho, eta_true, timing))
            .collect()
    });
    rows.sort_by(|a, b| {
        (a.n.cmp(&b.n))
            .then(a.delta.total_cmp(&b.delta))
            .then(a.h0.total_cmp(&b.h0))
            .then(a.seed.cmp(&b.seed))
    });

    if out.exists() {
        fs::remove_file(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    }
    append_rows(out, &rows)?;
    write_json(Some(summary), &summarize(&rows))
}
