//! Q1 finite elements on the unit square: grid, assembly, linear solves,
//! Riesz maps and inter-grid transfer.

pub mod assembly;
pub mod grid;
pub mod instrument;
pub mod interp;
pub mod io;
pub mod solver;
pub mod sparse;

use std::sync::Arc;

use nalgebra::DVector;

pub use assembly::{DofSet, WeightedForm};
pub use grid::StructuredGrid;
pub use instrument::{Event, InstrumentCounts, Instrumentation};
pub use solver::{solve_spd, BandedCholesky, SpdSolver, SOLVER_TOL};
pub use sparse::{CsrPattern, SparseMatrix};

use crate::error::{check_len, Result};

/// Nodal parameter values on every grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField(pub DVector<f64>);

/// Nodal state values on the interior nodes; the trace is implicitly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct StateField(pub DVector<f64>);

impl CoefficientField {
    pub fn constant(grid: &StructuredGrid, value: f64) -> Self {
        Self(DVector::from_element(grid.n_nodes(), value))
    }

    pub fn from_fn(grid: &StructuredGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        Self(DVector::from_vec(grid.interpolate_fn(f)))
    }

    pub fn min(&self) -> f64 {
        self.0.min()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl StateField {
    pub fn zeros(grid: &StructuredGrid) -> Self {
        Self(DVector::zeros(grid.n_free()))
    }

    pub fn extended(&self, grid: &StructuredGrid) -> Vec<f64> {
        grid.extend_by_zero(self.0.as_slice())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerProductKind {
    /// Mass matrix on all nodes.
    L2,
    /// Stiffness plus mass on all nodes.
    H1,
    /// Stiffness on the interior nodes.
    H01,
}

/// The grid together with its constant (parameter-independent) operators.
#[derive(Debug, Clone)]
pub struct FemSpace {
    grid: StructuredGrid,
    all: Arc<CsrPattern>,
    free: Arc<CsrPattern>,
    stiffness_all: SparseMatrix,
    mass_all: SparseMatrix,
    stiffness_free: SparseMatrix,
    mass_free: SparseMatrix,
}

impl FemSpace {
    pub fn new(grid: StructuredGrid) -> Self {
        let all = Arc::new(assembly::pattern(&grid, DofSet::All));
        let free = Arc::new(assembly::pattern(&grid, DofSet::Free));
        Self {
            stiffness_all: assembly::assemble_stiffness(&grid, all.clone(), DofSet::All),
            mass_all: assembly::assemble_mass(&grid, all.clone(), DofSet::All),
            stiffness_free: assembly::assemble_stiffness(&grid, free.clone(), DofSet::Free),
            mass_free: assembly::assemble_mass(&grid, free.clone(), DofSet::Free),
            grid,
            all,
            free,
        }
    }

    pub fn grid(&self) -> &StructuredGrid {
        &self.grid
    }

    pub fn all_pattern(&self) -> &Arc<CsrPattern> {
        &self.all
    }

    pub fn free_pattern(&self) -> &Arc<CsrPattern> {
        &self.free
    }

    pub fn stiffness_all(&self) -> &SparseMatrix {
        &self.stiffness_all
    }

    pub fn mass_all(&self) -> &SparseMatrix {
        &self.mass_all
    }

    pub fn stiffness_free(&self) -> &SparseMatrix {
        &self.stiffness_free
    }

    pub fn mass_free(&self) -> &SparseMatrix {
        &self.mass_free
    }

    pub fn inner_product_matrix(&self, kind: InnerProductKind) -> SparseMatrix {
        match kind {
            InnerProductKind::L2 => self.mass_all.clone(),
            InnerProductKind::H1 => {
                let mut m = self.stiffness_all.clone();
                m.add_scaled(1.0, &self.mass_all).expect("shared pattern");
                m
            }
            InnerProductKind::H01 => self.stiffness_free.clone(),
        }
    }

    /// Parameter-weighted form on the free dofs, `a_2(·,·;w)`.
    pub fn weighted_free(&self, form: WeightedForm, weight: &CoefficientField) -> Result<SparseMatrix> {
        assembly::assemble_weighted_form(&self.grid, self.free.clone(), DofSet::Free, form, weight.0.as_slice())
    }

    /// Weighted form on all nodes.
    pub fn weighted_all(&self, form: WeightedForm, weight: &[f64]) -> Result<SparseMatrix> {
        assembly::assemble_weighted_form(&self.grid, self.all.clone(), DofSet::All, form, weight)
    }

    /// `B_u d` as a functional on the free dofs; recorded on `hook`.
    pub fn apply_b(
        &self,
        form: WeightedForm,
        u: &StateField,
        d: &CoefficientField,
        hook: &Instrumentation,
    ) -> Result<DVector<f64>> {
        check_len(self.grid.n_free(), u.0.len())?;
        check_len(self.grid.n_nodes(), d.0.len())?;
        hook.record(Event::BApply);
        Ok(assembly::apply_parameter_derivative(
            &self.grid,
            form,
            &u.extended(&self.grid),
            d.0.as_slice(),
        ))
    }

    /// `B_u^T p` as a functional on the parameter nodes; recorded on `hook`.
    pub fn apply_b_transpose(
        &self,
        form: WeightedForm,
        u: &StateField,
        p: &StateField,
        hook: &Instrumentation,
    ) -> Result<DVector<f64>> {
        check_len(self.grid.n_free(), u.0.len())?;
        check_len(self.grid.n_free(), p.0.len())?;
        hook.record(Event::BtApply);
        Ok(assembly::apply_parameter_derivative_transpose(
            &self.grid,
            form,
            &u.extended(&self.grid),
            &p.extended(&self.grid),
        ))
    }
}

/// A factored inner product: Riesz representatives and dual norms.
#[derive(Debug, Clone)]
pub struct InnerProduct {
    kind: InnerProductKind,
    matrix: SparseMatrix,
    solver: SpdSolver,
}

impl InnerProduct {
    pub fn new(space: &FemSpace, kind: InnerProductKind, hook: Instrumentation) -> Result<Self> {
        let matrix = space.inner_product_matrix(kind);
        let event = match kind {
            InnerProductKind::H01 => Event::RieszSolve,
            _ => Event::MetricSolve,
        };
        Self::from_matrix(kind, matrix, hook, event)
    }

    pub fn from_matrix(kind: InnerProductKind, matrix: SparseMatrix, hook: Instrumentation, event: Event) -> Result<Self> {
        let solver = SpdSolver::new(&matrix, hook, event)?;
        Ok(Self { kind, matrix, solver })
    }

    pub fn kind(&self) -> InnerProductKind {
        self.kind
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        self.matrix.bilinear(a, b)
    }

    pub fn norm(&self, a: &DVector<f64>) -> f64 {
        self.inner(a, a).max(0.0).sqrt()
    }

    /// Solve `(z, ·) = functional`.
    pub fn riesz_representative(&self, functional: &DVector<f64>) -> Result<DVector<f64>> {
        self.solver.solve(functional)
    }

    pub fn dual_norm(&self, functional: &DVector<f64>) -> Result<f64> {
        let z = self.riesz_representative(functional)?;
        Ok(functional.dot(&z).max(0.0).sqrt())
    }
}
