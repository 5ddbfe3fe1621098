#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rbirgnm::param_reduction::ReducedParameterSpace;
use rbirgnm::state_reduction::{EstimatorData, ReducedStateModel};
use rbirgnm::fem::{CoefficientField, FemSpace, StateField, StructuredGrid};
use rbirgnm::forward::{ForwardModel, ModelOptions, ProblemKind};

pub const KINDS: [ProblemKind; 2] = [ProblemKind::Reaction, ProblemKind::Diffusion];

pub fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn exact_field(x: f64, y: f64) -> f64 {
    3.0 + 1.5 * (-((x - 0.4).powi(2) + (y - 0.6).powi(2)) / 0.05).exp() - 0.5 * (x * y * 5.0).sin()
}

/// Model whose data is the state of [`exact_field`] with a smooth perturbation.
pub fn synthetic_model(n: usize, kind: ProblemKind, delta: f64) -> ForwardModel {
    let grid = StructuredGrid::new(n).unwrap();
    let m = ForwardModel::new(FemSpace::new(grid), kind, ModelOptions::default()).unwrap();
    let u = m.solve_state(&CoefficientField::from_fn(&grid, exact_field)).unwrap();
    let scale = 1e-3 * u.0.amax();
    let y = DVector::from_fn(grid.n_free(), |i, _| u.0[i] + scale * ((i as f64) * 1.7).sin());
    m.clear_cache();
    m.with_data(StateField(y), delta).unwrap()
}

/// Independent dense Q1 discretization used as an oracle.
pub struct DenseQ1 {
    pub n: usize,
    pub kind: ProblemKind,
}

impl DenseQ1 {
    pub fn nodes(&self) -> usize {
        (self.n + 1) * (self.n + 1)
    }

    pub fn free_nodes(&self) -> Vec<usize> {
        let m = self.n + 1;
        let mut out = Vec::new();
        for iy in 1..self.n {
            for ix in 1..self.n {
                out.push(iy * m + ix);
            }
        }
        out
    }

    /// `∫ w φ_i φ_j` (`gradient = false`) or `∫ w ∇φ_i·∇φ_j` on all nodes,
    /// by a 3x3 Gauss rule per cell.
    pub fn weighted(&self, w: &[f64], gradient: bool) -> DMatrix<f64> {
        let n = self.n;
        let h = 1.0 / n as f64;
        let gp = [0.5 - 0.5 * (0.6f64).sqrt(), 0.5, 0.5 + 0.5 * (0.6f64).sqrt()];
        let gw = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];
        let mut a = DMatrix::zeros(self.nodes(), self.nodes());
        for cy in 0..n {
            for cx in 0..n {
                let base = cy * (n + 1) + cx;
                let idx = [base, base + 1, base + n + 1, base + n + 2];
                for (s, ws) in gp.iter().zip(gw) {
                    for (t, wt) in gp.iter().zip(gw) {
                        let phi = [(1.0 - s) * (1.0 - t), s * (1.0 - t), (1.0 - s) * t, s * t];
                        let dphi = [
                            [-(1.0 - t) / h, -(1.0 - s) / h],
                            [(1.0 - t) / h, -s / h],
                            [-t / h, (1.0 - s) / h],
                            [t / h, s / h],
                        ];
                        let wq: f64 = (0..4).map(|k| w[idx[k]] * phi[k]).sum();
                        let jw = ws * wt * h * h;
                        for i in 0..4 {
                            for j in 0..4 {
                                let v = if gradient {
                                    dphi[i][0] * dphi[j][0] + dphi[i][1] * dphi[j][1]
                                } else {
                                    phi[i] * phi[j]
                                };
                                a[(idx[i], idx[j])] += jw * wq * v;
                            }
                        }
                    }
                }
            }
        }
        a
    }

    pub fn restrict(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let f = self.free_nodes();
        DMatrix::from_fn(f.len(), f.len(), |i, j| a[(f[i], f[j])])
    }

    pub fn ones(&self) -> Vec<f64> {
        vec![1.0; self.nodes()]
    }

    pub fn mass_free(&self) -> DMatrix<f64> {
        self.restrict(&self.weighted(&self.ones(), false))
    }

    pub fn stiffness_free(&self) -> DMatrix<f64> {
        self.restrict(&self.weighted(&self.ones(), true))
    }

    pub fn parameter_metric(&self) -> DMatrix<f64> {
        let m = self.weighted(&self.ones(), false);
        match self.kind {
            ProblemKind::Reaction => m,
            ProblemKind::Diffusion => m + self.weighted(&self.ones(), true),
        }
    }

    /// `∂A/∂q` applied to `w` on the free dofs.
    pub fn derivative(&self, w: &[f64]) -> DMatrix<f64> {
        self.restrict(&self.weighted(w, self.kind == ProblemKind::Diffusion))
    }

    pub fn system(&self, q: &[f64]) -> DMatrix<f64> {
        match self.kind {
            ProblemKind::Reaction => self.stiffness_free() + self.derivative(q),
            ProblemKind::Diffusion => self.derivative(q),
        }
    }

    pub fn load(&self) -> DVector<f64> {
        let full = self.weighted(&self.ones(), false) * DVector::from_element(self.nodes(), 1.0);
        DVector::from_iterator(self.free_nodes().len(), self.free_nodes().iter().map(|&i| full[i]))
    }

    pub fn state(&self, q: &[f64]) -> DVector<f64> {
        self.system(q).lu().solve(&self.load()).unwrap()
    }

    /// Columns `-A⁻¹ (∂A/∂q_j) u`: the sensitivity matrix of `q ↦ u`.
    pub fn sensitivity(&self, q: &[f64]) -> DMatrix<f64> {
        let a = self.system(q).lu();
        let u = self.state(q);
        let mut s = DMatrix::zeros(self.free_nodes().len(), self.nodes());
        for j in 0..self.nodes() {
            let mut e = vec![0.0; self.nodes()];
            e[j] = 1.0;
            let col = -a.solve(&(self.derivative(&e) * &u)).unwrap();
            s.set_column(j, &col);
        }
        s
    }

    pub fn discrepancy(&self, q: &[f64], y: &DVector<f64>) -> f64 {
        let r = self.state(q) - y;
        0.5 * r.dot(&(self.mass_free() * &r))
    }

    /// Riesz representative of the derivative of the discrepancy.
    pub fn gradient(&self, q: &[f64], y: &DVector<f64>) -> DVector<f64> {
        let s = self.sensitivity(q);
        let r = self.state(q) - y;
        let functional = s.transpose() * (self.mass_free() * r);
        self.parameter_metric().lu().solve(&functional).unwrap()
    }

    /// Minimizer of the linearized Tikhonov functional at `q_k`, with
    /// `‖F'(q_k)(q - q_k) + F(q_k) - y‖²`.
    pub fn tikhonov(&self, q_k: &[f64], q_circ: &[f64], y: &DVector<f64>, alpha: f64) -> (DVector<f64>, f64) {
        let s = self.sensitivity(q_k);
        let m = self.mass_free();
        let mq = self.parameter_metric();
        let r = self.state(q_k) - y;
        let qk = DVector::from_column_slice(q_k);
        let qc = DVector::from_column_slice(q_circ);
        let lhs = s.transpose() * &m * &s + &mq * alpha;
        let rhs = -(s.transpose() * (&m * &r)) - &mq * (&qk - &qc) * alpha;
        let d = lhs.lu().solve(&rhs).unwrap();
        let lin = &s * &d + r;
        (qk + d, lin.dot(&(m * &lin)))
    }
}

/// `Q_r` from `q∘ = q⁰ ≡ 3`, its gradient and `extra` snapshots; `V_r` from
/// the states and adjoints at the same parameters; representatives assembled.
pub fn reduced_setup(
    model: &ForwardModel,
    extra: &[CoefficientField],
) -> (ReducedParameterSpace, ReducedStateModel, EstimatorData) {
    let grid = *model.grid();
    let q0 = CoefficientField::constant(&grid, 3.0);
    let g0 = model.gradient(&q0).unwrap();
    let mut space = ReducedParameterSpace::init_space(model, &q0, &q0, &g0).unwrap();
    let mut rsm = ReducedStateModel::new(model);
    let mut params = vec![q0];
    for (k, q) in extra.iter().enumerate() {
        space.enrich(model, q, k + 1).unwrap();
        params.push(q.clone());
    }
    for q in &params {
        let u = model.solve_state(q).unwrap();
        let p = model.solve_adjoint(q, &u).unwrap();
        rsm.enrich_state_space(model, &space, &[&u, &p]).unwrap();
    }
    let mut est = EstimatorData::new();
    est.extend(model, &space, &rsm).unwrap();
    (space, rsm, est)
}

/// Random reduced parameters around the projection of `q ≡ 3` whose lifts stay
/// above `floor`.
pub fn sample_reduced(
    grid: &StructuredGrid,
    space: &ReducedParameterSpace,
    count: usize,
    radius: f64,
    floor: f64,
    seed: u64,
) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centre = space.project(&CoefficientField::constant(grid, 3.0)).unwrap();
    let mut out = Vec::new();
    while out.len() < count {
        let scale = radius * rng.random_range(0.0..1.0);
        let dir = DVector::from_fn(space.dim(), |_, _| rng.random_range(-1.0..1.0));
        let c = &centre + dir.normalize() * scale;
        if space.lift(&c).unwrap().min() > floor {
            out.push(c);
        }
    }
    out
}

/// Accepted TR steps that increased `Ĵ` or left the trust region.
pub fn tr_violations(report: &rbirgnm::report::RunReport) -> Vec<String> {
    let mut out = Vec::new();
    for s in &report.details.tr_steps {
        if s.r_trial > s.eta {
            out.push(format!("k={}: R={:e} > η={:e}", s.k, s.r_trial, s.eta));
        }
        if s.branch.accepted() {
            match s.j_trial {
                Some(j) if j <= s.j_current => {}
                other => out.push(format!("k={}: Ĵ went from {:e} to {other:?}", s.k, s.j_current)),
            }
        }
    }
    out
}

/// Steps whose recorded `K_ass` disagrees with the dimensions before and after
/// enrichment, or whose assembled pair count differs from it.
pub fn k_ass_violations(report: &rbirgnm::report::RunReport) -> Vec<String> {
    let steps = &report.details.tr_steps;
    let mut out = Vec::new();
    let mut stopped = false;
    for (i, s) in steps.iter().enumerate() {
        if let Some(next) = steps.get(i + 1) {
            let expect = rbirgnm::state_reduction::k_ass((s.n_q, s.n_v), (next.n_q, next.n_v));
            if s.k_ass != expect {
                out.push(format!("k={}: K_ass {} vs {expect}", s.k, s.k_ass));
            }
        }
        let counted = if s.assembled { s.k_ass } else { 0 };
        if s.k_ass_counted != counted {
            out.push(format!("k={}: assembled {} pairs, K_ass {}", s.k, s.k_ass_counted, s.k_ass));
        }
        if s.assembled && stopped {
            out.push(format!("k={}: assembly resumed after stopping", s.k));
        }
        stopped |= s.branch.accepted() && s.k_ass > 0 && !s.assembled;
    }
    out
}
