//! Benchmark driver, estimator case study and reconstruction comparison.

use std::path::Path;

use super::config::RunConfig;
use crate::algorithm::AlgorithmRegistry;
use crate::error::{check_len, Error, Result};
use crate::fem::{io, CoefficientField, FemSpace, InnerProductKind, StructuredGrid};
use crate::forward::{generate_noisy_data, ForwardModel, ModelOptions, NoisySetup, ProblemKind};
use crate::irgnm::StartPoint;
use crate::report::RunReport;
use crate::state_reduction::EstimatorMode;

/// Model with synthetic data, start point and the exact parameter.
pub struct Prepared {
    pub model: ForwardModel,
    pub start: StartPoint,
    pub exact: CoefficientField,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let grid = StructuredGrid::new(cfg.n)?;
    let space = FemSpace::new(grid);
    let kind = cfg.problem();
    let spec = cfg.exact_spec();
    let setup = NoisySetup::new(&grid, |x, y| spec.eval(x, y), cfg.seed, cfg.delta)?;
    let data = generate_noisy_data(&setup, kind, &space)?;
    let options = ModelOptions {
        q_lower: cfg.q_lower,
        h1_metric: cfg.h1_metric,
        ..Default::default()
    };
    let model = ForwardModel::new(space, kind, options)?.with_data(data.observation, cfg.delta)?;
    let q0 = CoefficientField::constant(&grid, cfg.background);
    Ok(Prepared {
        model,
        start: StartPoint {
            q_circ: q0.clone(),
            q0,
        },
        exact: CoefficientField::from_fn(&grid, |x, y| spec.eval(x, y)),
    })
}

/// Run the configured algorithm and write its report when `out` is set.
pub fn run_benchmark(cfg: &RunConfig, registry: &AlgorithmRegistry) -> Result<RunReport> {
    let alg = registry.get(&cfg.algorithm)?;
    let p = prepare(cfg)?;
    let report = alg.run(&p.model, &p.start, &cfg.resolved_settings())?;
    if let Some(dir) = &cfg.out {
        report.emit(dir)?;
    }
    Ok(report)
}

/// The diffusion setup of run 2 with `η⁰ = 10`, once per estimator mode.
pub fn estimator_case_study(cfg: &RunConfig) -> Result<Vec<(EstimatorMode, RunReport)>> {
    let mut base = cfg.clone();
    base.run = Some(2);
    base.problem = Some(ProblemKind::Diffusion);
    base.algorithm = "qr-vr".into();
    base.tr.eta0 = 10.0;
    let registry = AlgorithmRegistry::with_builtin();
    let mut out = Vec::new();
    for mode in EstimatorMode::ALL {
        let mut c = base.clone();
        c.estimator = mode;
        c.out = cfg.out.as_ref().map(|d| d.join(mode.name()));
        out.push((mode, run_benchmark(&c, &registry)?));
    }
    Ok(out)
}

/// Relative distances of reconstruction `a` to reference `b`.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub relative_l2: f64,
    pub relative_q: f64,
    pub pointwise: Vec<f64>,
    grid: StructuredGrid,
}

impl Comparison {
    pub fn write_pointwise(&self, path: &Path) -> Result<()> {
        io::write_grid_field(path, &self.grid, &self.pointwise)
    }
}

pub fn compare_reconstructions(a: &RunReport, b: &RunReport) -> Result<Comparison> {
    if a.summary.n != b.summary.n {
        return Err(Error::Config(format!(
            "cannot compare reconstructions on n={} and n={}",
            a.summary.n, b.summary.n
        )));
    }
    let kind: ProblemKind = b.summary.problem.parse()?;
    compare_fields(&a.q, &b.q, &b.grid()?, kind)
}

pub fn compare_fields(a: &CoefficientField, b: &CoefficientField, grid: &StructuredGrid, kind: ProblemKind) -> Result<Comparison> {
    check_len(grid.n_nodes(), a.0.len())?;
    check_len(grid.n_nodes(), b.0.len())?;
    let space = FemSpace::new(*grid);
    let diff = &a.0 - &b.0;
    let rel = |kind: InnerProductKind| {
        let m = space.inner_product_matrix(kind);
        let den = m.bilinear(&b.0, &b.0).sqrt();
        m.bilinear(&diff, &diff).sqrt() / den
    };
    Ok(Comparison {
        relative_l2: rel(InnerProductKind::L2),
        relative_q: rel(kind.parameter_metric()),
        pointwise: diff.iter().zip(b.0.iter()).map(|(d, r)| d.abs() / r.abs()).collect(),
        grid: *grid,
    })
}
