//! Run reports: per-iteration history, summary totals and TR diagnostics.

use std::fs::{self, File};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{io, CoefficientField, StructuredGrid};
use crate::forward::ForwardModel;

/// One row of `history.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub k: usize,
    pub time_s: f64,
    pub discrepancy: f64,
    pub alpha: Option<f64>,
    pub eta: Option<f64>,
    #[serde(rename = "n_Q")]
    pub n_q: Option<usize>,
    #[serde(rename = "n_V")]
    pub n_v: Option<usize>,
    pub fom_solves: u64,
    pub bu_apps: u64,
    pub riesz_solves: u64,
    pub accepted: bool,
}

/// How the TR acceptance decision was reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    AcceptCheap,
    RejectCheap,
    AcceptFom,
    RejectFom,
}

impl Branch {
    pub fn accepted(self) -> bool {
        matches!(self, Branch::AcceptCheap | Branch::AcceptFom)
    }
}

/// Diagnostics of one TR outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrStep {
    pub k: usize,
    pub eta: f64,
    pub eta_next: f64,
    /// Relative estimator at the trial point, evaluated before enrichment.
    pub r_trial: f64,
    pub rho: Option<f64>,
    pub branch: Branch,
    /// `Ĵ(q^k)` and, when known, `Ĵ(q_trial)`.
    pub j_current: f64,
    pub j_trial: Option<f64>,
    pub j_r_agc: f64,
    pub agc_iterations: usize,
    pub inner_iterations: usize,
    pub n_q: usize,
    pub n_v: usize,
    pub assembled: bool,
    /// Predicted Riesz count of the estimator update and the count performed.
    pub k_ass: u64,
    pub k_ass_counted: u64,
    pub k_online: u64,
}

/// One α search of an IRGNM step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRecord {
    pub k: usize,
    pub alpha: f64,
    pub j: f64,
    pub lin_residual_sq: f64,
    pub lower: f64,
    pub upper: f64,
    pub trials: usize,
    pub degenerate: bool,
}

impl AlphaRecord {
    pub fn in_bracket(&self) -> bool {
        self.lower <= self.lin_residual_sq && self.lin_residual_sq <= self.upper
    }
}

/// Totals mirroring the benchmark tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub algorithm: String,
    pub problem: String,
    pub estimator: Option<String>,
    pub n: usize,
    pub delta: f64,
    pub tau: f64,
    pub converged: bool,
    pub outer_iterations: usize,
    pub time_s: f64,
    pub fom_solves: u64,
    pub bu_apps: u64,
    pub riesz_solves: u64,
    #[serde(rename = "n_Q")]
    pub n_q: Option<usize>,
    #[serde(rename = "n_V")]
    pub n_v: Option<usize>,
    pub final_discrepancy: f64,
    pub degenerate_alpha_events: usize,
    pub inadmissible_iterates: usize,
    /// Counts seen by the solver-level instrumentation.
    pub hook_system_solves: u64,
    pub hook_riesz_solves: u64,
    pub hook_b_applications: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Details {
    pub alpha_records: Vec<AlphaRecord>,
    pub tr_steps: Vec<TrStep>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub summary: Summary,
    pub history: Vec<HistoryRow>,
    pub details: Details,
    pub q: CoefficientField,
}

impl RunReport {
    pub fn grid(&self) -> Result<StructuredGrid> {
        StructuredGrid::new(self.summary.n)
    }

    /// Whether every counting path agrees on the totals.
    pub fn counters_agree(&self) -> bool {
        let s = &self.summary;
        s.fom_solves == s.hook_system_solves && s.riesz_solves == s.hook_riesz_solves && s.bu_apps == s.hook_b_applications
    }

    /// Write `history.csv`, `summary.json`, `details.json` and `q_reconstructed.csv`.
    pub fn emit(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut w = csv::Writer::from_path(dir.join("history.csv"))?;
        for row in &self.history {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(dir.join("history.csv"), e))?;
        write_json(&dir.join("summary.json"), &self.summary)?;
        write_json(&dir.join("details.json"), &self.details)?;
        io::write_grid_field(&dir.join("q_reconstructed.csv"), &self.grid()?, self.q.0.as_slice())
    }

    pub fn parse(dir: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(dir.join("history.csv"))?;
        let history = r.deserialize().collect::<std::result::Result<Vec<HistoryRow>, _>>()?;
        let summary: Summary = read_json(&dir.join("summary.json"))?;
        let details: Details = read_json(&dir.join("details.json"))?;
        let (grid, q) = io::read_grid_field(&dir.join("q_reconstructed.csv"))?;
        if grid.n_cells_per_side() != summary.n {
            return Err(Error::Config(format!(
                "reconstruction grid n={} does not match summary n={}",
                grid.n_cells_per_side(),
                summary.n
            )));
        }
        Ok(Self {
            summary,
            history,
            details,
            q: CoefficientField(q.into()),
        })
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(f, value)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

/// Collects history rows with cumulative counters read from a model.
pub struct Recorder<'a> {
    model: &'a ForwardModel,
    start: Instant,
    rows: Vec<HistoryRow>,
    details: Details,
    inadmissible: usize,
}

/// Per-row values supplied by the algorithms.
#[derive(Debug, Clone, Copy, Default)]
pub struct RowData {
    pub k: usize,
    pub discrepancy: f64,
    pub alpha: Option<f64>,
    pub eta: Option<f64>,
    pub n_q: Option<usize>,
    pub n_v: Option<usize>,
    pub accepted: bool,
}

impl<'a> Recorder<'a> {
    pub fn new(model: &'a ForwardModel) -> Self {
        Self {
            model,
            start: Instant::now(),
            rows: Vec::new(),
            details: Details::default(),
            inadmissible: 0,
        }
    }

    pub fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    pub fn push(&mut self, d: RowData) {
        let t = self.model.tally();
        self.rows.push(HistoryRow {
            k: d.k,
            time_s: self.elapsed(),
            discrepancy: d.discrepancy,
            alpha: d.alpha,
            eta: d.eta,
            n_q: d.n_q,
            n_v: d.n_v,
            fom_solves: t.fom_solves(),
            bu_apps: t.b_total(),
            riesz_solves: t.riesz_solves,
            accepted: d.accepted,
        });
    }

    pub fn alpha(&mut self, record: AlphaRecord) {
        self.details.alpha_records.push(record);
    }

    pub fn tr_step(&mut self, step: TrStep) {
        self.details.tr_steps.push(step);
    }

    /// Log and count iterates that leave `q ≥ q_a`.
    pub fn check_admissible(&mut self, k: usize, q: &CoefficientField) {
        if !self.model.is_admissible(q) {
            self.inadmissible += 1;
            log::warn!("iterate {k} violates the lower bound: min q = {:.4e}", q.min());
        }
    }

    pub fn finish(self, algorithm: &str, estimator: Option<&str>, tau: f64, converged: bool, q: CoefficientField) -> RunReport {
        let t = self.model.tally();
        let hook = self.model.instrumentation().snapshot();
        let last = self.rows.last().cloned();
        let summary = Summary {
            algorithm: algorithm.to_string(),
            problem: self.model.kind().name().to_string(),
            estimator: estimator.map(str::to_string),
            n: self.model.grid().n_cells_per_side(),
            delta: self.model.delta(),
            tau,
            converged,
            outer_iterations: last.as_ref().map_or(0, |r| r.k),
            time_s: self.elapsed(),
            fom_solves: t.fom_solves(),
            bu_apps: t.b_total(),
            riesz_solves: t.riesz_solves,
            n_q: last.as_ref().and_then(|r| r.n_q),
            n_v: last.as_ref().and_then(|r| r.n_v),
            final_discrepancy: last.as_ref().map_or(f64::NAN, |r| r.discrepancy),
            degenerate_alpha_events: self.details.alpha_records.iter().filter(|a| a.degenerate).count(),
            inadmissible_iterates: self.inadmissible,
            hook_system_solves: hook.system_solves,
            hook_riesz_solves: hook.riesz_solves,
            hook_b_applications: hook.b_total(),
        };
        RunReport {
            summary,
            history: self.rows,
            details: self.details,
            q,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::FemSpace;
    use crate::forward::{ModelOptions, ProblemKind};

    fn sample() -> RunReport {
        let grid = StructuredGrid::new(3).unwrap();
        let model = ForwardModel::new(FemSpace::new(grid), ProblemKind::Reaction, ModelOptions::default()).unwrap();
        let q = CoefficientField::from_fn(&grid, |x, y| 3.0 + x.sin() * y / 7.0);
        model.solve_state(&q).unwrap();
        let mut rec = Recorder::new(&model);
        rec.push(RowData {
            k: 0,
            discrepancy: 0.1234567890123,
            ..Default::default()
        });
        rec.alpha(AlphaRecord {
            k: 0,
            alpha: 0.5,
            j: 1.0 / 3.0,
            lin_residual_sq: 0.2,
            lower: 0.1,
            upper: 0.3,
            trials: 2,
            degenerate: false,
        });
        rec.tr_step(TrStep {
            k: 0,
            eta: 0.1,
            eta_next: 0.2,
            r_trial: 0.05,
            rho: None,
            branch: Branch::AcceptFom,
            j_current: 1.0,
            j_trial: Some(0.5),
            j_r_agc: 0.7,
            agc_iterations: 1,
            inner_iterations: 3,
            n_q: 2,
            n_v: 2,
            assembled: true,
            k_ass: 4,
            k_ass_counted: 4,
            k_online: 2,
        });
        rec.push(RowData {
            k: 1,
            discrepancy: 1e-7 / 3.0,
            alpha: Some(0.5),
            eta: Some(0.2),
            n_q: Some(3),
            n_v: Some(4),
            accepted: true,
        });
        rec.finish("qr-vr", Some("mixed"), 3.5, true, q)
    }

    #[test]
    fn emit_parse_round_trip() {
        let report = sample();
        let dir = tempfile::tempdir().unwrap();
        report.emit(dir.path()).unwrap();
        assert_eq!(RunReport::parse(dir.path()).unwrap(), report);
    }

    #[test]
    fn summary_matches_last_row() {
        let r = sample();
        let last = r.history.last().unwrap();
        assert_eq!(r.summary.fom_solves, last.fom_solves);
        assert_eq!(r.summary.n_v, last.n_v);
        assert_eq!(r.summary.outer_iterations, 1);
        assert!(r.counters_agree());
    }

    #[test]
    fn history_header_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        sample().emit(dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("history.csv")).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "k,time_s,discrepancy,alpha,eta,n_Q,n_V,fom_solves,bu_apps,riesz_solves,accepted"
        );
    }
}
