//! Reduced parameter space `Q_r` spanned by gradient snapshots, its induced
//! affine operator decomposition and the `Q_r`-IRGNM built on top of it.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cg::{pcg_with_side, CgSettings};
use crate::error::{check_len, Error, Result};
use crate::fem::{io, CoefficientField, SparseMatrix, StructuredGrid};
use crate::forward::ForwardModel;
use crate::irgnm::{alpha_backtracking, AlphaRule, IrgnmConfig, StartPoint, TikhonovSolution, TikhonovSubproblem};
use crate::report::{write_json, AlphaRecord, Recorder, RowData, RunReport};

/// Relative norm below which a projected candidate counts as dependent.
pub const DISCARD_TOL: f64 = 1e-10;

/// Gram-Schmidt against an orthonormal basis in the metric `m`, applied twice.
/// Returns the normalized remainder, or `None` when the candidate is dependent.
pub fn orthonormalize_against(
    basis: &[DVector<f64>],
    m: &SparseMatrix,
    candidate: &DVector<f64>,
    tol: f64,
) -> Option<DVector<f64>> {
    let norm0 = m.bilinear(candidate, candidate).max(0.0).sqrt();
    if norm0 == 0.0 || !norm0.is_finite() {
        return None;
    }
    let mut v = candidate.clone();
    for _ in 0..2 {
        let mv = m.mul_vec(&v);
        for b in basis {
            let c = b.dot(&mv);
            v.axpy(-c, b, 1.0);
        }
    }
    let norm = m.bilinear(&v, &v).max(0.0).sqrt();
    if norm < tol * norm0 {
        None
    } else {
        Some(v / norm)
    }
}

/// `Q_r` with its affine operator components `a_2(·,·;ϕ_i)` on the state dofs.
#[derive(Debug, Clone)]
pub struct ReducedParameterSpace {
    grid: StructuredGrid,
    metric: SparseMatrix,
    basis: Vec<DVector<f64>>,
    components: Vec<SparseMatrix>,
    fixed: Option<SparseMatrix>,
    origin: Vec<usize>,
    tol: f64,
}

impl ReducedParameterSpace {
    /// Orthonormalize `q∘, q⁰, g⁰` in that order.
    pub fn init_space(
        model: &ForwardModel,
        q_circ: &CoefficientField,
        q0: &CoefficientField,
        g0: &CoefficientField,
    ) -> Result<Self> {
        let mut space = Self {
            grid: *model.grid(),
            metric: model.parameter_metric().matrix().clone(),
            basis: Vec::new(),
            components: Vec::new(),
            fixed: model.fixed_operator().cloned(),
            origin: Vec::new(),
            tol: DISCARD_TOL,
        };
        for c in [q_circ, q0, g0] {
            space.enrich(model, c, 0)?;
        }
        if space.basis.is_empty() {
            return Err(Error::EmptySpace);
        }
        Ok(space)
    }

    /// Append a snapshot unless it is numerically dependent. Returns whether
    /// the dimension grew.
    pub fn enrich(&mut self, model: &ForwardModel, snapshot: &CoefficientField, iteration: usize) -> Result<bool> {
        check_len(self.grid.n_nodes(), snapshot.0.len())?;
        let Some(v) = orthonormalize_against(&self.basis, &self.metric, &snapshot.0, self.tol) else {
            return Ok(false);
        };
        let field = CoefficientField(v);
        self.components.push(model.parameter_operator(&field)?);
        self.basis.push(field.0);
        self.origin.push(iteration);
        Ok(true)
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[DVector<f64>] {
        &self.basis
    }

    pub fn components(&self) -> &[SparseMatrix] {
        &self.components
    }

    /// Outer iteration at which each basis vector was added.
    pub fn origin(&self) -> &[usize] {
        &self.origin
    }

    pub fn lift(&self, coeffs: &DVector<f64>) -> Result<CoefficientField> {
        check_len(self.dim(), coeffs.len())?;
        let mut q = DVector::zeros(self.grid.n_nodes());
        for (c, b) in coeffs.iter().zip(&self.basis) {
            q.axpy(*c, b, 1.0);
        }
        Ok(CoefficientField(q))
    }

    /// Coefficients of the `Q`-orthogonal projection onto `Q_r`.
    pub fn project(&self, q: &CoefficientField) -> Result<DVector<f64>> {
        check_len(self.grid.n_nodes(), q.0.len())?;
        let mq = self.metric.mul_vec(&q.0);
        Ok(DVector::from_iterator(self.dim(), self.basis.iter().map(|b| b.dot(&mq))))
    }

    /// `a_1 + Σ c_i a_{2,i}` on the state dofs.
    pub fn assemble(&self, coeffs: &DVector<f64>) -> Result<SparseMatrix> {
        check_len(self.dim(), coeffs.len())?;
        let mut a = match &self.fixed {
            Some(a1) => a1.clone(),
            None => SparseMatrix::zeros(self.components[0].pattern().clone()),
        };
        for (c, ai) in coeffs.iter().zip(&self.components) {
            a.add_scaled(*c, ai)?;
        }
        Ok(a)
    }

    /// Columns `a_{2,i} u`, i.e. `B_u` restricted to `Q_r`.
    pub fn derivative_columns(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(u.len(), self.dim());
        for (i, ai) in self.components.iter().enumerate() {
            w.set_column(i, &ai.mul_vec(u));
        }
        w
    }

    /// One grid CSV per basis vector plus `manifest.json`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::new();
        for (i, (b, it)) in self.basis.iter().zip(&self.origin).enumerate() {
            let file = format!("basis_{i:03}.csv");
            io::write_grid_field(&dir.join(&file), &self.grid, b.as_slice())?;
            entries.push(ManifestEntry {
                file,
                enriched_at: *it,
            });
        }
        write_json(
            &dir.join("manifest.json"),
            &Manifest {
                n: self.grid.n_cells_per_side(),
                vectors: entries,
            },
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    enriched_at: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    n: usize,
    vectors: Vec<ManifestEntry>,
}

/// Tikhonov subproblem over `Q_r` coefficients with full-order states.
pub struct QrTikhonov<'a> {
    model: &'a ForwardModel,
    solver: std::sync::Arc<crate::fem::SpdSolver>,
    w: DMatrix<f64>,
    c_circ: DVector<f64>,
    x0: DVector<f64>,
    wt_p: DVector<f64>,
    residual: DVector<f64>,
    cg: CgSettings,
}

impl<'a> QrTikhonov<'a> {
    pub fn new(
        model: &'a ForwardModel,
        space: &ReducedParameterSpace,
        s_k: &DVector<f64>,
        c_circ: &DVector<f64>,
        cg: CgSettings,
    ) -> Result<Self> {
        let q = space.lift(s_k)?;
        let u = model.solve_state(&q)?;
        let p = model.solve_adjoint(&q, &u)?;
        let w = space.derivative_columns(&u.0);
        Ok(Self {
            model,
            solver: model.system_solver(&q)?,
            wt_p: w.tr_mul(&p.0),
            w,
            c_circ: c_circ.clone(),
            x0: s_k - c_circ,
            residual: &u.0 - &model.data().0,
            cg,
        })
    }

    /// Reduced gradient coefficients at `s_k`.
    pub fn gradient(&self) -> &DVector<f64> {
        &self.wt_p
    }
}

impl TikhonovSubproblem for QrTikhonov<'_> {
    type Point = DVector<f64>;

    fn solve(&mut self, alpha: f64) -> Result<TikhonovSolution<DVector<f64>>> {
        let model = self.model;
        let (w, solver) = (&self.w, &self.solver);
        let mass = model.space().mass_free();
        let r0 = -&self.wt_p - &self.x0 * alpha;
        let out = pcg_with_side(
            |d| {
                let gd = model.solve_linearized(solver, &(-(w * d)))?;
                let z = model.solve_linearized(solver, &mass.mul_vec(&gd))?;
                Ok((-w.tr_mul(&z) + d * alpha, gd))
            },
            |r| Ok(r.clone()),
            self.x0.clone(),
            r0,
            self.residual.clone(),
            self.cg,
        )?;
        Ok(TikhonovSolution {
            lin_residual_sq: model.obs_inner(&out.side, &out.side),
            point: &self.c_circ + out.x,
            cg_iterations: out.iterations,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QrConfig {
    pub inner_max: usize,
    pub tau_tilde: f64,
    /// Use `Ĵ(q^k)` instead of `δ` as inner noise level.
    pub delta_from_discrepancy: bool,
}

impl Default for QrConfig {
    fn default() -> Self {
        Self {
            inner_max: 2,
            tau_tilde: 1.0,
            delta_from_discrepancy: false,
        }
    }
}

/// IRGNM whose updates are restricted to an adaptively enriched `Q_r`.
pub fn qr_irgnm(model: &ForwardModel, start: &StartPoint, config: &IrgnmConfig, qr: &QrConfig) -> Result<RunReport> {
    config.validate()?;
    if qr.inner_max == 0 {
        return Err(Error::Config("inner_max must be at least 1".into()));
    }
    let tol = config.tau * model.delta();
    let rule = AlphaRule::from(config);
    let mut rec = Recorder::new(model);
    let g0 = model.smoothed_snapshot(&start.q0)?;
    let mut space = ReducedParameterSpace::init_space(model, &start.q_circ, &start.q0, &g0)?;
    let mut q = start.q0.clone();
    let mut res = model.residual_norm(&q)?;
    let mut alpha = config.alpha0;
    rec.push(RowData {
        k: 0,
        discrepancy: res,
        n_q: Some(space.dim()),
        accepted: true,
        ..Default::default()
    });
    let mut k = 0;
    while res > tol && k < config.max_outer {
        let c_circ = space.project(&start.q_circ)?;
        let mut s = space.project(&q)?;
        let delta_tilde = if qr.delta_from_discrepancy {
            0.5 * res * res
        } else {
            model.delta()
        };
        let mut inner_res = res;
        let mut inner_alpha = alpha;
        let mut first_alpha = None;
        for _ in 0..qr.inner_max {
            if inner_res <= qr.tau_tilde * delta_tilde {
                break;
            }
            let j = 0.5 * inner_res * inner_res;
            let mut sub = QrTikhonov::new(model, &space, &s, &c_circ, config.cg())?;
            let search = alpha_backtracking(&mut sub, inner_alpha, j, rule)?;
            rec.alpha(AlphaRecord {
                k,
                alpha: search.alpha,
                j,
                lin_residual_sq: search.solution.lin_residual_sq,
                lower: rule.theta * j,
                upper: rule.big_theta * j,
                trials: search.trials,
                degenerate: search.degenerate,
            });
            first_alpha.get_or_insert(search.alpha);
            inner_alpha = search.alpha;
            s = search.solution.point;
            inner_res = model.residual_norm(&space.lift(&s)?)?;
        }
        q = space.lift(&s)?;
        res = inner_res;
        alpha = first_alpha.unwrap_or(alpha);
        k += 1;
        rec.check_admissible(k, &q);
        if res > tol {
            let g = model.smoothed_snapshot(&q)?;
            if !space.enrich(model, &g, k)? {
                log::warn!("gradient snapshot at k={k} is dependent on Q_r");
            }
        }
        log::info!("qr k={k} |F-y|={res:.4e} n_Q={} alpha={alpha:.3e}", space.dim());
        rec.push(RowData {
            k,
            discrepancy: res,
            alpha: Some(alpha),
            n_q: Some(space.dim()),
            accepted: true,
            ..Default::default()
        });
    }
    Ok(rec.finish("qr", None, config.tau, res <= tol, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::FemSpace;
    use crate::forward::{ModelOptions, ProblemKind};

    fn model(n: usize, kind: ProblemKind) -> ForwardModel {
        ForwardModel::new(FemSpace::new(StructuredGrid::new(n).unwrap()), kind, ModelOptions::default()).unwrap()
    }

    fn fields(g: &StructuredGrid) -> [CoefficientField; 3] {
        [
            CoefficientField::constant(g, 3.0),
            CoefficientField::from_fn(g, |x, y| x * y),
            CoefficientField::from_fn(g, |x, y| (4.0 * x).sin() + y * y),
        ]
    }

    #[test]
    fn duplicate_start_gives_two_dimensions() {
        let m = model(4, ProblemKind::Reaction);
        let [a, _, c] = fields(m.grid());
        let s = ReducedParameterSpace::init_space(&m, &a, &a, &c).unwrap();
        assert_eq!(s.dim(), 2);
    }

    #[test]
    fn basis_is_orthonormal_and_round_trips() {
        for kind in [ProblemKind::Reaction, ProblemKind::Diffusion] {
            let m = model(5, kind);
            let [a, b, c] = fields(m.grid());
            let s = ReducedParameterSpace::init_space(&m, &a, &b, &c).unwrap();
            assert_eq!(s.dim(), 3);
            for i in 0..3 {
                for j in 0..3 {
                    let ip = m.q_inner(&s.basis()[i], &s.basis()[j]);
                    assert!((ip - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
                }
                let e = s.project(&CoefficientField(s.basis()[i].clone())).unwrap();
                assert!((e[i] - 1.0).abs() < 1e-12 && e.amax() < 1.0 + 1e-12);
            }
            let back = s.lift(&s.project(&b).unwrap()).unwrap();
            assert!((&back.0 - &b.0).amax() < 1e-10);
        }
    }

    #[test]
    fn dependent_snapshot_is_discarded() {
        let m = model(4, ProblemKind::Reaction);
        let [a, b, c] = fields(m.grid());
        let mut s = ReducedParameterSpace::init_space(&m, &a, &b, &c).unwrap();
        let combo = CoefficientField(&a.0 * 2.0 - &c.0 * 0.5);
        assert!(!s.enrich(&m, &combo, 1).unwrap());
        assert_eq!((s.dim(), s.components().len()), (3, 3));
    }

    #[test]
    fn zero_candidates_give_empty_space() {
        let m = model(3, ProblemKind::Reaction);
        let z = CoefficientField::constant(m.grid(), 0.0);
        assert!(matches!(ReducedParameterSpace::init_space(&m, &z, &z, &z), Err(Error::EmptySpace)));
    }

    #[test]
    fn affine_assembly_matches_direct() {
        for kind in [ProblemKind::Reaction, ProblemKind::Diffusion] {
            let m = model(4, kind);
            let [a, b, c] = fields(m.grid());
            let s = ReducedParameterSpace::init_space(&m, &a, &b, &c).unwrap();
            let coeffs = DVector::from_vec(vec![0.3, -1.2, 0.7]);
            let q = s.lift(&coeffs).unwrap();
            let direct = m.system_matrix(&q).unwrap();
            let reduced = s.assemble(&coeffs).unwrap();
            let diff = direct.values().iter().zip(reduced.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-12, "{diff}");
        }
    }

    #[test]
    fn export_writes_manifest() {
        let m = model(3, ProblemKind::Reaction);
        let [a, b, c] = fields(m.grid());
        let s = ReducedParameterSpace::init_space(&m, &a, &b, &c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.export(dir.path()).unwrap();
        assert!(dir.path().join("basis_002.csv").exists());
        let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        assert!(text.contains("enriched_at"));
    }
}
