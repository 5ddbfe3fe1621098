//! Reduced-basis state space `V_r` over `Q_r`: Galerkin-projected reduced
//! model, reduced adjoint and gradient, and the a-posteriori estimate of the
//! discrepancy error with its offline and online evaluation paths.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fem::{SparseMatrix, StateField};
use crate::forward::ForwardModel;
use crate::param_reduction::{orthonormalize_against, ReducedParameterSpace, DISCARD_TOL};

/// Projected blocks of the forward model onto an `H¹₀`-orthonormal `V_r`.
#[derive(Debug, Clone)]
pub struct ReducedStateModel {
    psi: Vec<DVector<f64>>,
    a1: Option<DMatrix<f64>>,
    a2: Vec<DMatrix<f64>>,
    load: DVector<f64>,
    mass: DMatrix<f64>,
    data: DVector<f64>,
    data_norm_sq: f64,
    my: DVector<f64>,
}

/// Reduced state, adjoint and derivatives at one reduced parameter.
#[derive(Debug, Clone)]
pub struct ReducedPoint {
    pub coeffs: DVector<f64>,
    pub u: DVector<f64>,
    pub p: DVector<f64>,
    /// `Ĵ_r`.
    pub j: f64,
    /// Gradient coefficients over the orthonormal `Q_r` basis.
    pub gradient: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl ReducedPoint {
    /// `‖F_r(q) - y^δ‖`.
    pub fn residual_norm(&self) -> f64 {
        (2.0 * self.j).max(0.0).sqrt()
    }
}

impl ReducedStateModel {
    pub fn new(model: &ForwardModel) -> Self {
        let y = &model.data().0;
        let my = model.space().mass_free().mul_vec(y);
        Self {
            psi: Vec::new(),
            a1: model.fixed_operator().map(|_| DMatrix::zeros(0, 0)),
            a2: Vec::new(),
            load: DVector::zeros(0),
            mass: DMatrix::zeros(0, 0),
            data: DVector::zeros(0),
            data_norm_sq: y.dot(&my),
            my,
        }
    }

    pub fn dim(&self) -> usize {
        self.psi.len()
    }

    pub fn n_q(&self) -> usize {
        self.a2.len()
    }

    pub fn basis(&self) -> &[DVector<f64>] {
        &self.psi
    }

    pub fn a2_blocks(&self) -> &[DMatrix<f64>] {
        &self.a2
    }

    pub fn mass_block(&self) -> &DMatrix<f64> {
        &self.mass
    }

    /// `Σ c_j ψ_j` on the state dofs.
    pub fn reconstruct(&self, c: &DVector<f64>) -> Result<StateField> {
        check_len(self.dim(), c.len())?;
        let mut v = DVector::zeros(self.my.len());
        for (cj, psi) in c.iter().zip(&self.psi) {
            v.axpy(*cj, psi, 1.0);
        }
        Ok(StateField(v))
    }

    fn project_pair(&self, a: &SparseMatrix) -> DMatrix<f64> {
        let images: Vec<_> = self.psi.iter().map(|p| a.mul_vec(p)).collect();
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| self.psi[i].dot(&images[j]))
    }

    /// Project the `a_{2,i}` of any newly added `Q_r` directions.
    pub fn sync_parameter_space(&mut self, space: &ReducedParameterSpace) {
        for comp in &space.components()[self.a2.len()..] {
            let block = self.project_pair(comp);
            self.a2.push(block);
        }
    }

    /// Append `H¹₀`-orthonormalized snapshots and extend every projected block
    /// by the new rows and columns. Returns the number of vectors added.
    pub fn enrich_state_space(
        &mut self,
        model: &ForwardModel,
        space: &ReducedParameterSpace,
        snapshots: &[&StateField],
    ) -> Result<usize> {
        self.sync_parameter_space(space);
        let k = model.state_metric().matrix();
        let mass = model.space().mass_free();
        let mut added = 0;
        for s in snapshots {
            check_len(self.my.len(), s.0.len())?;
            let Some(psi) = orthonormalize_against(&self.psi, k, &s.0, DISCARD_TOL) else {
                continue;
            };
            let m = self.dim();
            self.psi.push(psi);
            let new = &self.psi[m];
            if let (Some(block), Some(a1)) = (self.a1.as_mut(), model.fixed_operator()) {
                extend_symmetric(block, &self.psi, &a1.mul_vec(new));
            }
            for (block, comp) in self.a2.iter_mut().zip(space.components()) {
                extend_symmetric(block, &self.psi, &comp.mul_vec(new));
            }
            extend_symmetric(&mut self.mass, &self.psi, &mass.mul_vec(new));
            self.load = push(&self.load, new.dot(model.load()));
            self.data = push(&self.data, new.dot(&self.my));
            added += 1;
        }
        Ok(added)
    }

    /// Reduced system matrix `â_1 + Σ c_i â_{2,i}`.
    pub fn system_matrix(&self, coeffs: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_len(self.n_q(), coeffs.len())?;
        let mut a = self.a1.clone().unwrap_or_else(|| DMatrix::zeros(self.dim(), self.dim()));
        for (c, block) in coeffs.iter().zip(&self.a2) {
            a += block * *c;
        }
        Ok(a)
    }

    fn factor(&self, coeffs: &DVector<f64>) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.system_matrix(coeffs)?).ok_or(Error::IndefiniteReducedSystem { dim: self.dim() })
    }

    pub fn reduced_solve_state(&self, coeffs: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.factor(coeffs)?.solve(&self.load))
    }

    /// `Ĵ_r` for reduced state coefficients `u`.
    pub fn reduced_discrepancy(&self, u: &DVector<f64>) -> f64 {
        let v = 0.5 * (u.dot(&(&self.mass * u)) - 2.0 * u.dot(&self.data) + self.data_norm_sq);
        v.max(0.0)
    }

    /// Full reduced evaluation: state, adjoint, `Ĵ_r` and gradient.
    pub fn evaluate(&self, coeffs: &DVector<f64>) -> Result<ReducedPoint> {
        let chol = self.factor(coeffs)?;
        let u = chol.solve(&self.load);
        let p = chol.solve(&-(&self.mass * &u - &self.data));
        let gradient = DVector::from_iterator(self.n_q(), self.a2.iter().map(|b| p.dot(&(b * &u))));
        Ok(ReducedPoint {
            coeffs: coeffs.clone(),
            j: self.reduced_discrepancy(&u),
            u,
            p,
            gradient,
            chol,
        })
    }

    /// Reduced sensitivity `-Â⁻¹ [â_{2,i} û]`, one column per `Q_r` direction.
    pub fn jacobian(&self, point: &ReducedPoint) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(self.dim(), self.n_q());
        for (i, b) in self.a2.iter().enumerate() {
            w.set_column(i, &(b * &point.u));
        }
        -point.chol.solve(&w)
    }

    /// Observation-space Gram data: `M̂`, `ŷ`, `‖y‖²`.
    pub fn observation_data(&self) -> (&DMatrix<f64>, &DVector<f64>, f64) {
        (&self.mass, &self.data, self.data_norm_sq)
    }

    /// Primal and dual residual functionals at a reduced point, built
    /// explicitly on the state dofs.
    pub fn residual_functionals(
        &self,
        model: &ForwardModel,
        space: &ReducedParameterSpace,
        point: &ReducedPoint,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let a = space.assemble(&point.coeffs)?;
        let u = self.reconstruct(&point.u)?;
        let p = self.reconstruct(&point.p)?;
        let r_pr = model.load() - a.mul_vec(&u.0);
        let r_du = &self.my - model.space().mass_free().mul_vec(&u.0) - a.mul_vec(&p.0);
        Ok((r_pr, r_du))
    }
}

fn push(v: &DVector<f64>, x: f64) -> DVector<f64> {
    let n = v.len();
    v.clone().insert_row(n, x)
}

fn extend_symmetric(block: &mut DMatrix<f64>, psi: &[DVector<f64>], image_of_new: &DVector<f64>) {
    let m = psi.len() - 1;
    let mut grown = DMatrix::zeros(m + 1, m + 1);
    grown.view_mut((0, 0), (m, m)).copy_from(block);
    for (j, pj) in psi.iter().enumerate() {
        let v = pj.dot(image_of_new);
        grown[(m, j)] = v;
        grown[(j, m)] = v;
    }
    *block = grown;
}

/// Dual norms of the primal and dual residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualNorms {
    pub primal: f64,
    pub dual: f64,
}

/// `Δ_Ĵ` with its ingredients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorEstimate {
    pub delta_j: f64,
    pub delta_pr: f64,
    pub norms: ResidualNorms,
    pub coercivity: f64,
}

impl ErrorEstimate {
    pub fn from_norms(norms: ResidualNorms, coercivity: f64) -> Result<Self> {
        if coercivity <= 0.0 || !coercivity.is_finite() {
            return Err(Error::InadmissibleParameter(format!(
                "coercivity bound {coercivity:.3e} is not positive"
            )));
        }
        let delta_pr = norms.primal / coercivity;
        Ok(Self {
            delta_j: 0.5 * delta_pr * delta_pr + norms.dual * delta_pr,
            delta_pr,
            norms,
            coercivity,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rep {
    Load,
    Data,
    Mass(usize),
    Fixed(usize),
    Pair(usize, usize),
}

/// Riesz representatives of every affine residual term, stored through their
/// coefficients in a `V`-orthonormal basis of their span. The Gram matrix of
/// the representatives is `TᵀT`; norms are evaluated as `‖T c‖` without
/// forming it, which keeps small residuals accurate.
#[derive(Debug, Clone, Default)]
pub struct EstimatorData {
    z: Vec<DVector<f64>>,
    t: Vec<(Rep, DVector<f64>)>,
    n_q: usize,
    n_v: usize,
    pair_solves: u64,
}

impl EstimatorData {
    pub fn new() -> Self {
        Self::default()
    }

    /// Dimensions `(n_Q, n_V)` for which the data is complete.
    pub fn coverage(&self) -> (usize, usize) {
        (self.n_q, self.n_v)
    }

    pub fn covers(&self, rsm: &ReducedStateModel) -> bool {
        self.n_q == rsm.n_q() && self.n_v == rsm.dim() && self.n_v > 0
    }

    pub fn n_representatives(&self) -> usize {
        self.t.len()
    }

    /// Riesz solves spent on `a_{2,i} ψ_j` pairs so far.
    pub fn pair_solves(&self) -> u64 {
        self.pair_solves
    }

    fn add(&mut self, model: &ForwardModel, rep: Rep, functional: &DVector<f64>) -> Result<()> {
        let r = model.state_riesz(functional)?;
        let k = model.state_metric().matrix();
        let norm0 = functional.dot(&r).max(0.0).sqrt();
        let mut coeff = DVector::zeros(self.z.len());
        let mut rem = r;
        for _ in 0..2 {
            let krem = k.mul_vec(&rem);
            for (i, z) in self.z.iter().enumerate() {
                let c = z.dot(&krem);
                coeff[i] += c;
                rem.axpy(-c, z, 1.0);
            }
        }
        let norm = k.bilinear(&rem, &rem).max(0.0).sqrt();
        if norm > 1e-14 * norm0 && norm > 0.0 {
            self.z.push(rem / norm);
            coeff = push(&coeff, norm);
        }
        self.t.push((rep, coeff));
        Ok(())
    }

    /// Compute the representatives missing for the current spaces. Returns the
    /// number of `a_{2,i} ψ_j` pairs solved in this call.
    pub fn extend(&mut self, model: &ForwardModel, space: &ReducedParameterSpace, rsm: &ReducedStateModel) -> Result<u64> {
        let before = self.pair_solves;
        if self.t.is_empty() {
            self.add(model, Rep::Load, model.load())?;
            let my = rsm.my.clone();
            self.add(model, Rep::Data, &my)?;
        }
        let mass = model.space().mass_free();
        let (nq_old, nv_old) = (self.n_q, self.n_v);
        let (nq, nv) = (rsm.n_q(), rsm.dim());
        for j in nv_old..nv {
            let psi = &rsm.psi[j];
            self.add(model, Rep::Mass(j), &mass.mul_vec(psi))?;
            if let Some(a1) = model.fixed_operator() {
                self.add(model, Rep::Fixed(j), &a1.mul_vec(psi))?;
            }
        }
        for i in 0..nq {
            let comp = &space.components()[i];
            let first_j = if i < nq_old { nv_old } else { 0 };
            for j in first_j..nv {
                self.add(model, Rep::Pair(i, j), &comp.mul_vec(&rsm.psi[j]))?;
                self.pair_solves += 1;
            }
        }
        self.n_q = nq;
        self.n_v = nv;
        Ok(self.pair_solves - before)
    }

    fn combine(&self, weight: impl Fn(Rep) -> f64) -> f64 {
        let mut acc = DVector::zeros(self.z.len());
        for (rep, t) in &self.t {
            let w = weight(*rep);
            if w != 0.0 {
                acc.rows_mut(0, t.len()).axpy(w, t, 1.0);
            }
        }
        acc.norm()
    }

    /// Residual dual norms from the stored representatives.
    pub fn residual_norms(&self, point: &ReducedPoint) -> Result<ResidualNorms> {
        check_len(self.n_q, point.coeffs.len())?;
        check_len(self.n_v, point.u.len())?;
        let (c, u, p) = (&point.coeffs, &point.u, &point.p);
        let primal = self.combine(|rep| match rep {
            Rep::Load => 1.0,
            Rep::Data | Rep::Mass(_) => 0.0,
            Rep::Fixed(j) => -u[j],
            Rep::Pair(i, j) => -c[i] * u[j],
        });
        let dual = self.combine(|rep| match rep {
            Rep::Load => 0.0,
            Rep::Data => 1.0,
            Rep::Mass(j) => -u[j],
            Rep::Fixed(j) => -p[j],
            Rep::Pair(i, j) => -c[i] * p[j],
        });
        Ok(ResidualNorms { primal, dual })
    }
}

/// Residual dual norms by two explicit Riesz solves.
pub fn residual_norms_online(
    model: &ForwardModel,
    space: &ReducedParameterSpace,
    rsm: &ReducedStateModel,
    point: &ReducedPoint,
) -> Result<ResidualNorms> {
    let (r_pr, r_du) = rsm.residual_functionals(model, space, point)?;
    let z_pr = model.state_riesz(&r_pr)?;
    let z_du = model.state_riesz(&r_du)?;
    Ok(ResidualNorms {
        primal: r_pr.dot(&z_pr).max(0.0).sqrt(),
        dual: r_du.dot(&z_du).max(0.0).sqrt(),
    })
}

/// Coercivity lower bound at a reduced parameter.
pub fn reduced_coercivity(model: &ForwardModel, space: &ReducedParameterSpace, coeffs: &DVector<f64>) -> Result<f64> {
    match model.kind() {
        crate::forward::ProblemKind::Reaction => Ok(1.0),
        crate::forward::ProblemKind::Diffusion => Ok(space.lift(coeffs)?.min()),
    }
}

/// `Δ_Ĵ`, using the stored representatives when they cover the current
/// spaces and explicit Riesz solves otherwise.
pub fn estimate_error(
    model: &ForwardModel,
    space: &ReducedParameterSpace,
    rsm: &ReducedStateModel,
    est: Option<&EstimatorData>,
    point: &ReducedPoint,
) -> Result<ErrorEstimate> {
    let coercivity = reduced_coercivity(model, space, &point.coeffs)?;
    if coercivity <= 0.0 {
        return Err(Error::InadmissibleParameter(format!(
            "coercivity bound {coercivity:.3e} is not positive"
        )));
    }
    let norms = match est {
        Some(e) if e.covers(rsm) => e.residual_norms(point)?,
        _ => residual_norms_online(model, space, rsm, point)?,
    };
    ErrorEstimate::from_norms(norms, coercivity)
}

/// `n_V^k (n_Q^k − n_Q^{k−1}) + n_Q^{k−1} (n_V^k − n_V^{k−1})`.
pub fn k_ass(prev: (usize, usize), next: (usize, usize)) -> u64 {
    let (nq0, nv0) = (prev.0 as u64, prev.1 as u64);
    let (nq1, nv1) = (next.0 as u64, next.1 as u64);
    nv1 * (nq1 - nq0) + nq0 * (nv1 - nv0)
}

/// How the estimator is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorMode {
    Offline,
    Online,
    #[default]
    Mixed,
}

impl EstimatorMode {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorMode::Offline => "offline",
            EstimatorMode::Online => "online",
            EstimatorMode::Mixed => "mixed",
        }
    }

    pub fn policy(self) -> Box<dyn AssemblyPolicy> {
        match self {
            EstimatorMode::Offline => Box::new(AlwaysAssemble),
            EstimatorMode::Online => Box::new(NeverAssemble),
            EstimatorMode::Mixed => Box::new(CostSwitch::default()),
        }
    }

    pub const ALL: [EstimatorMode; 3] = [EstimatorMode::Offline, EstimatorMode::Online, EstimatorMode::Mixed];
}

impl std::str::FromStr for EstimatorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorMode::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Unknown {
                kind: "estimator mode",
                name: s.to_string(),
            })
    }
}

/// Decides, after each enrichment, whether the representatives are updated.
pub trait AssemblyPolicy {
    fn name(&self) -> &'static str;

    /// `k` is the index of the iterate the spaces were enriched at.
    fn should_assemble(&mut self, k: usize, k_ass: u64, k_online: u64) -> bool;
}

#[derive(Debug, Default)]
pub struct AlwaysAssemble;

impl AssemblyPolicy for AlwaysAssemble {
    fn name(&self) -> &'static str {
        "offline"
    }

    fn should_assemble(&mut self, _: usize, _: u64, _: u64) -> bool {
        true
    }
}

#[derive(Debug, Default)]
pub struct NeverAssemble;

impl AssemblyPolicy for NeverAssemble {
    fn name(&self) -> &'static str {
        "online"
    }

    fn should_assemble(&mut self, _: usize, _: u64, _: u64) -> bool {
        false
    }
}

/// Assemble while cheaper than online evaluation; the switch is permanent.
#[derive(Debug, Default)]
pub struct CostSwitch {
    stopped: bool,
}

impl AssemblyPolicy for CostSwitch {
    fn name(&self) -> &'static str {
        "mixed"
    }

    fn should_assemble(&mut self, k: usize, k_ass: u64, k_online: u64) -> bool {
        if k <= 2 {
            return true;
        }
        if !self.stopped && k_ass > k_online {
            self.stopped = true;
            log::info!("estimator assembly stopped at k={k}: K_ass={k_ass} > K_online={k_online}");
        }
        !self.stopped
    }
}
