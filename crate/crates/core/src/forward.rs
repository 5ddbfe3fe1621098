//! Parameter-to-observation map `F = C ∘ S`, its derivatives and the
//! synthetic noisy data used by the experiments.

use std::cell::{Cell, RefCell};
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fem::{
    interp, CoefficientField, Event, FemSpace, InnerProduct, InnerProductKind, Instrumentation, SparseMatrix,
    SpdSolver, StateField, StructuredGrid, WeightedForm,
};

/// Which coefficient is identified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    /// `-Δu + q u = f`, parameters measured in `L²`.
    Reaction,
    /// `-∇·(q∇u) = f`, parameters measured in `H¹`.
    Diffusion,
}

impl ProblemKind {
    pub fn form(self) -> WeightedForm {
        match self {
            ProblemKind::Reaction => WeightedForm::Reaction,
            ProblemKind::Diffusion => WeightedForm::Diffusion,
        }
    }

    pub fn parameter_metric(self) -> InnerProductKind {
        match self {
            ProblemKind::Reaction => InnerProductKind::L2,
            ProblemKind::Diffusion => InnerProductKind::H1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Reaction => "reaction",
            ProblemKind::Diffusion => "diffusion",
        }
    }
}

impl std::str::FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "reaction" => Ok(ProblemKind::Reaction),
            "diffusion" => Ok(ProblemKind::Diffusion),
            other => Err(Error::Unknown {
                kind: "problem",
                name: other.to_string(),
            }),
        }
    }
}

/// Operator used to smooth diffusion gradient snapshots.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum H1Metric {
    /// Stiffness plus mass: the `H¹` Gram matrix itself.
    #[default]
    Full,
    /// Neumann stiffness with a `1e-6` mass shift.
    NeumannShifted,
}

const NEUMANN_SHIFT: f64 = 1e-6;

/// Per-model counts of algorithmic events, tallied at the forward-model API.
/// Independent of the [`Instrumentation`] hook inside the solvers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub state_solves: u64,
    pub adjoint_solves: u64,
    pub linearized_solves: u64,
    pub riesz_solves: u64,
    pub b_applications: u64,
    pub bt_applications: u64,
}

impl Tally {
    pub fn fom_solves(&self) -> u64 {
        self.state_solves + self.adjoint_solves + self.linearized_solves
    }

    pub fn b_total(&self) -> u64 {
        self.b_applications + self.bt_applications
    }
}

#[derive(Debug)]
struct CacheEntry {
    q: DVector<f64>,
    solver: Arc<SpdSolver>,
    state: Option<StateField>,
    adjoint: Option<StateField>,
}

const CACHE_SLOTS: usize = 2;

/// Options fixed at model construction.
#[derive(Debug, Clone)]
pub struct ModelOptions {
    /// Nodal source term; `f ≡ 1` by default.
    pub source: Option<CoefficientField>,
    /// Lower admissibility bound `q_a`, only checked, never enforced.
    pub q_lower: f64,
    pub h1_metric: H1Metric,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            source: None,
            q_lower: 0.001,
            h1_metric: H1Metric::Full,
        }
    }
}

/// The discrete forward model for one grid, problem kind and data set.
///
/// Evaluation uses interior mutability for its memo cache and tallies, so a
/// model is meant to be driven from one thread. Distinct models are independent.
#[derive(Debug)]
pub struct ForwardModel {
    space: FemSpace,
    kind: ProblemKind,
    load: DVector<f64>,
    data: StateField,
    delta: f64,
    q_lower: f64,
    hook: Instrumentation,
    state_metric: InnerProduct,
    parameter_metric: InnerProduct,
    smoother: Option<InnerProduct>,
    tally: Cell<Tally>,
    cache: RefCell<Vec<CacheEntry>>,
}

impl ForwardModel {
    pub fn new(space: FemSpace, kind: ProblemKind, options: ModelOptions) -> Result<Self> {
        let grid = *space.grid();
        let hook = Instrumentation::new();
        let source = options
            .source
            .unwrap_or_else(|| CoefficientField::constant(&grid, 1.0));
        check_len(grid.n_nodes(), source.0.len())?;
        let full_load = space.mass_all().mul_vec(&source.0);
        let load = DVector::from_vec(grid.restrict_to_free(full_load.as_slice()));
        let state_metric = InnerProduct::new(&space, InnerProductKind::H01, hook.clone())?;
        let parameter_metric = InnerProduct::new(&space, kind.parameter_metric(), hook.clone())?;
        let smoother = match (kind, options.h1_metric) {
            (ProblemKind::Diffusion, H1Metric::NeumannShifted) => {
                let mut s = space.stiffness_all().clone();
                s.add_scaled(NEUMANN_SHIFT, space.mass_all())?;
                Some(InnerProduct::from_matrix(InnerProductKind::H1, s, hook.clone(), Event::MetricSolve)?)
            }
            _ => None,
        };
        Ok(Self {
            data: StateField::zeros(&grid),
            space,
            kind,
            load,
            delta: 0.0,
            q_lower: options.q_lower,
            hook,
            state_metric,
            parameter_metric,
            smoother,
            tally: Cell::new(Tally::default()),
            cache: RefCell::new(Vec::new()),
        })
    }

    /// Attach observations `y^δ` and their noise level.
    pub fn with_data(mut self, data: StateField, delta: f64) -> Result<Self> {
        check_len(self.grid().n_free(), data.0.len())?;
        self.data = data;
        self.delta = delta;
        Ok(self)
    }

    pub fn space(&self) -> &FemSpace {
        &self.space
    }

    pub fn grid(&self) -> &StructuredGrid {
        self.space.grid()
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn load(&self) -> &DVector<f64> {
        &self.load
    }

    pub fn data(&self) -> &StateField {
        &self.data
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn q_lower(&self) -> f64 {
        self.q_lower
    }

    pub fn instrumentation(&self) -> &Instrumentation {
        &self.hook
    }

    pub fn tally(&self) -> Tally {
        self.tally.get()
    }

    fn bump(&self, f: impl FnOnce(&mut Tally)) {
        let mut t = self.tally.get();
        f(&mut t);
        self.tally.set(t);
    }

    pub fn state_metric(&self) -> &InnerProduct {
        &self.state_metric
    }

    pub fn parameter_metric(&self) -> &InnerProduct {
        &self.parameter_metric
    }

    /// Parameter-independent part `a_1` on the free dofs (`None` for diffusion).
    pub fn fixed_operator(&self) -> Option<&SparseMatrix> {
        match self.kind {
            ProblemKind::Reaction => Some(self.space.stiffness_free()),
            ProblemKind::Diffusion => None,
        }
    }

    /// `a_2(·,·;q)` on the free dofs.
    pub fn parameter_operator(&self, q: &CoefficientField) -> Result<SparseMatrix> {
        self.space.weighted_free(self.kind.form(), q)
    }

    /// Full system matrix `a(·,·;q)` on the free dofs.
    pub fn system_matrix(&self, q: &CoefficientField) -> Result<SparseMatrix> {
        let mut a = self.parameter_operator(q)?;
        if let Some(a1) = self.fixed_operator() {
            a.add_scaled(1.0, a1)?;
        }
        Ok(a)
    }

    pub fn check_parameter(&self, q: &CoefficientField) -> Result<()> {
        check_len(self.grid().n_nodes(), q.0.len())?;
        if !q.is_finite() {
            return Err(Error::InadmissibleParameter("non-finite nodal value".into()));
        }
        if self.kind == ProblemKind::Diffusion && q.min() <= 0.0 {
            return Err(Error::InadmissibleParameter(format!(
                "diffusion coefficient has nonpositive nodal minimum {:.3e}",
                q.min()
            )));
        }
        Ok(())
    }

    /// Whether `q ≥ q_a` nodewise. Logged by the algorithms, never enforced.
    pub fn is_admissible(&self, q: &CoefficientField) -> bool {
        q.min() >= self.q_lower
    }

    fn with_entry<T>(&self, q: &CoefficientField, f: impl FnOnce(&mut CacheEntry) -> T) -> Result<T> {
        let mut cache = self.cache.borrow_mut();
        if let Some(pos) = cache.iter().position(|e| e.q == q.0) {
            let mut entry = cache.remove(pos);
            let out = f(&mut entry);
            cache.push(entry);
            return Ok(out);
        }
        self.check_parameter(q)?;
        let a = self.system_matrix(q)?;
        let solver = Arc::new(SpdSolver::new(&a, self.hook.clone(), Event::SystemSolve)?);
        let mut entry = CacheEntry {
            q: q.0.clone(),
            solver,
            state: None,
            adjoint: None,
        };
        let out = f(&mut entry);
        if cache.len() == CACHE_SLOTS {
            cache.remove(0);
        }
        cache.push(entry);
        Ok(out)
    }

    /// Factored `a(·,·;q)`, memoized on the exact nodal values of `q`.
    pub fn system_solver(&self, q: &CoefficientField) -> Result<Arc<SpdSolver>> {
        self.with_entry(q, |e| e.solver.clone())
    }

    /// Drop memoized factorizations and solutions.
    pub fn clear_cache(&self) {
        self.cache.borrow_mut().clear();
    }

    /// Solve `a(u,v;q) = ℓ(v)`.
    pub fn solve_state(&self, q: &CoefficientField) -> Result<StateField> {
        if let Some(u) = self.with_entry(q, |e| e.state.clone())? {
            return Ok(u);
        }
        let solver = self.system_solver(q)?;
        self.bump(|t| t.state_solves += 1);
        let u = StateField(solver.solve(&self.load)?);
        self.with_entry(q, |e| e.state = Some(u.clone()))?;
        Ok(u)
    }

    /// Solve `a(v,p;q) = -(Cu - y^δ, Cv)`.
    pub fn solve_adjoint(&self, q: &CoefficientField, u: &StateField) -> Result<StateField> {
        let cached_state = self.with_entry(q, |e| e.state.clone())?;
        let is_true_state = cached_state.as_ref() == Some(u);
        if is_true_state {
            if let Some(p) = self.with_entry(q, |e| e.adjoint.clone())? {
                return Ok(p);
            }
        }
        let rhs = -self.space.mass_free().mul_vec(&(&u.0 - &self.data.0));
        let solver = self.system_solver(q)?;
        self.bump(|t| t.adjoint_solves += 1);
        let p = StateField(solver.solve(&rhs)?);
        if is_true_state {
            self.with_entry(q, |e| e.adjoint = Some(p.clone()))?;
        }
        Ok(p)
    }

    /// Solve with `a(·,·;q)` for a linearized (sensitivity-type) right-hand side.
    pub fn solve_linearized(&self, solver: &SpdSolver, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        self.bump(|t| t.linearized_solves += 1);
        solver.solve(rhs)
    }

    /// `(a, b)_{L²}` of two observations.
    pub fn obs_inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        self.space.mass_free().bilinear(a, b)
    }

    pub fn obs_norm(&self, a: &DVector<f64>) -> f64 {
        self.obs_inner(a, a).max(0.0).sqrt()
    }

    /// `Ĵ(q) = ½‖F(q) - y^δ‖²`.
    pub fn discrepancy(&self, q: &CoefficientField) -> Result<f64> {
        let u = self.solve_state(q)?;
        Ok(self.discrepancy_of_state(&u))
    }

    pub fn discrepancy_of_state(&self, u: &StateField) -> f64 {
        let r = &u.0 - &self.data.0;
        0.5 * self.obs_inner(&r, &r)
    }

    /// `‖F(q) - y^δ‖`.
    pub fn residual_norm(&self, q: &CoefficientField) -> Result<f64> {
        Ok((2.0 * self.discrepancy(q)?).sqrt())
    }

    pub fn apply_b(&self, u: &StateField, d: &CoefficientField) -> Result<DVector<f64>> {
        self.bump(|t| t.b_applications += 1);
        self.space.apply_b(self.kind.form(), u, d, &self.hook)
    }

    pub fn apply_b_transpose(&self, u: &StateField, p: &StateField) -> Result<DVector<f64>> {
        self.bump(|t| t.bt_applications += 1);
        self.space.apply_b_transpose(self.kind.form(), u, p, &self.hook)
    }

    /// Parameter-space Riesz map (`M_Q^{-1}`); not a state solve.
    pub fn parameter_riesz(&self, functional: &DVector<f64>) -> Result<DVector<f64>> {
        self.parameter_metric.riesz_representative(functional)
    }

    pub fn q_inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        self.parameter_metric.inner(a, b)
    }

    pub fn q_norm(&self, a: &DVector<f64>) -> f64 {
        self.parameter_metric.norm(a)
    }

    /// Riesz solve in the state inner product; tallied as an estimator solve.
    pub fn state_riesz(&self, functional: &DVector<f64>) -> Result<DVector<f64>> {
        self.bump(|t| t.riesz_solves += 1);
        self.state_metric.riesz_representative(functional)
    }

    /// Dual functional `B_u^T p` of the gradient at `q`.
    pub fn gradient_functional(&self, q: &CoefficientField) -> Result<DVector<f64>> {
        let u = self.solve_state(q)?;
        let p = self.solve_adjoint(q, &u)?;
        self.apply_b_transpose(&u, &p)
    }

    /// `∇Ĵ(q)` in the parameter inner product.
    pub fn gradient(&self, q: &CoefficientField) -> Result<CoefficientField> {
        let f = self.gradient_functional(q)?;
        Ok(CoefficientField(self.parameter_riesz(&f)?))
    }

    /// Snapshot used to enrich the reduced parameter space: the plain gradient
    /// for reaction, `S^{-1} B_u^T p` for diffusion.
    pub fn smoothed_snapshot(&self, q: &CoefficientField) -> Result<CoefficientField> {
        match (&self.smoother, self.kind) {
            (Some(s), ProblemKind::Diffusion) => {
                let f = self.gradient_functional(q)?;
                Ok(CoefficientField(s.riesz_representative(&f)?))
            }
            _ => self.gradient(q),
        }
    }

    /// Lower bound of the coercivity constant in the `H¹₀` norm.
    pub fn coercivity_lb(&self, q: &CoefficientField) -> Result<f64> {
        match self.kind {
            ProblemKind::Reaction => Ok(1.0),
            ProblemKind::Diffusion => {
                let m = q.min();
                if m > 0.0 {
                    Ok(m)
                } else {
                    Err(Error::InadmissibleParameter(format!(
                        "diffusion coercivity bound {m:.3e} is not positive"
                    )))
                }
            }
        }
    }
}

/// Exact parameter on a twice refined grid together with the noise recipe.
#[derive(Debug, Clone)]
pub struct NoisySetup {
    pub fine_grid: StructuredGrid,
    pub exact_fine: CoefficientField,
    pub seed: u64,
    pub delta: f64,
}

/// Observations plus the noise-free interpolated observation they came from.
#[derive(Debug, Clone)]
pub struct NoisyData {
    pub observation: StateField,
    pub exact_observation: StateField,
}

impl NoisySetup {
    pub fn new(coarse: &StructuredGrid, exact: impl Fn(f64, f64) -> f64, seed: u64, delta: f64) -> Result<Self> {
        let fine_grid = StructuredGrid::new(2 * coarse.n_cells_per_side())?;
        Ok(Self {
            exact_fine: CoefficientField::from_fn(&fine_grid, exact),
            fine_grid,
            seed,
            delta,
        })
    }
}

/// Uniform nodal noise on the free dofs, rescaled to `L²` norm `delta`.
pub fn scaled_noise(space: &FemSpace, seed: u64, delta: f64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = space.grid().n_free();
    loop {
        let xi = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let norm = space.mass_free().bilinear(&xi, &xi).sqrt();
        if norm > 0.0 {
            return xi * (delta / norm);
        }
    }
}

/// Solve the exact state on the fine grid, restrict it to the computational
/// grid and add noise of `L²` norm exactly `δ`.
pub fn generate_noisy_data(setup: &NoisySetup, kind: ProblemKind, coarse: &FemSpace) -> Result<NoisyData> {
    let fine = ForwardModel::new(FemSpace::new(setup.fine_grid), kind, ModelOptions::default())?;
    let u_fine = fine.solve_state(&setup.exact_fine)?;
    let exact = interp::interpolate_free(&setup.fine_grid, u_fine.0.as_slice(), coarse.grid())?;
    let exact = DVector::from_vec(exact);
    let observation = if setup.delta > 0.0 {
        &exact + scaled_noise(coarse, setup.seed, setup.delta)
    } else {
        exact.clone()
    };
    Ok(NoisyData {
        observation: StateField(observation),
        exact_observation: StateField(exact),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(n: usize, kind: ProblemKind) -> ForwardModel {
        ForwardModel::new(FemSpace::new(StructuredGrid::new(n).unwrap()), kind, ModelOptions::default()).unwrap()
    }

    #[test]
    fn n2_reaction_hand_solve() {
        let m = model(2, ProblemKind::Reaction);
        let q = CoefficientField::constant(m.grid(), 0.0);
        let u = m.solve_state(&q).unwrap();
        assert!((u.0[0] - 3.0 / 32.0).abs() < 1e-15);
    }

    #[test]
    fn diffusion_scaling() {
        let m = model(8, ProblemKind::Diffusion);
        let u1 = m.solve_state(&CoefficientField::constant(m.grid(), 1.0)).unwrap();
        let u2 = m.solve_state(&CoefficientField::constant(m.grid(), 2.0)).unwrap();
        assert!((&u1.0 * 0.5 - &u2.0).amax() <= 1e-12 * u1.0.amax());
    }

    #[test]
    fn state_is_memoized() {
        let m = model(6, ProblemKind::Reaction);
        let q = CoefficientField::constant(m.grid(), 1.0);
        m.solve_state(&q).unwrap();
        m.discrepancy(&q).unwrap();
        m.gradient(&q).unwrap();
        m.gradient(&q).unwrap();
        let t = m.tally();
        assert_eq!((t.state_solves, t.adjoint_solves), (1, 1));
        assert_eq!(m.instrumentation().snapshot().system_solves, 2);
    }

    #[test]
    fn coercivity_bounds() {
        let r = model(3, ProblemKind::Reaction);
        assert_eq!(r.coercivity_lb(&CoefficientField::constant(r.grid(), 5.0)).unwrap(), 1.0);
        let d = model(3, ProblemKind::Diffusion);
        assert_eq!(d.coercivity_lb(&CoefficientField::constant(d.grid(), 3.0)).unwrap(), 3.0);
        let mut q = CoefficientField::constant(d.grid(), 2.0);
        q.0[5] = 0.7;
        assert_eq!(d.coercivity_lb(&q).unwrap(), 0.7);
        q.0[5] = 0.0;
        assert!(matches!(d.coercivity_lb(&q), Err(Error::InadmissibleParameter(_))));
    }

    #[test]
    fn diffusion_rejects_nonpositive_parameter() {
        let d = model(3, ProblemKind::Diffusion);
        let q = CoefficientField::constant(d.grid(), -1.0);
        assert!(d.solve_state(&q).is_err());
    }

    #[test]
    fn zero_residual_gives_zero_adjoint() {
        let m = model(5, ProblemKind::Reaction);
        let q = CoefficientField::constant(m.grid(), 2.0);
        let u = m.solve_state(&q).unwrap();
        let m = m.with_data(u.clone(), 0.0).unwrap();
        let p = m.solve_adjoint(&q, &u).unwrap();
        assert_eq!(p.0.amax(), 0.0);
        assert!(m.discrepancy(&q).unwrap() <= 1e-20);
    }

    #[test]
    fn noise_has_exact_norm_and_is_deterministic() {
        let g = StructuredGrid::new(8).unwrap();
        let space = FemSpace::new(g);
        let setup = NoisySetup::new(&g, |x, y| 3.0 + x * y, 7, 1e-5).unwrap();
        let a = generate_noisy_data(&setup, ProblemKind::Reaction, &space).unwrap();
        let b = generate_noisy_data(&setup, ProblemKind::Reaction, &space).unwrap();
        assert_eq!(a.observation, b.observation);
        let e = &a.observation.0 - &a.exact_observation.0;
        let norm = space.mass_free().bilinear(&e, &e).sqrt();
        assert!((norm - 1e-5).abs() <= 1e-14 * 1e-5 * 10.0);
        let clean = NoisySetup { delta: 0.0, ..setup };
        let c = generate_noisy_data(&clean, ProblemKind::Reaction, &space).unwrap();
        assert_eq!(c.observation, c.exact_observation);
    }
}
