//! Error-aware trust-region IRGNM on adaptively enriched parameter and state
//! spaces.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::ForwardModel;
use crate::irgnm::{alpha_backtracking, AlphaRule, IrgnmConfig, StartPoint, TikhonovSolution, TikhonovSubproblem};
use crate::param_reduction::ReducedParameterSpace;
use crate::report::{AlphaRecord, Branch, Recorder, RowData, RunReport, TrStep};
use crate::state_reduction::{estimate_error, k_ass, EstimatorData, EstimatorMode, ReducedPoint, ReducedStateModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrConfig {
    pub eta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub kappa_arm: f64,
    pub max_armijo: usize,
    pub max_line_search: usize,
    pub inner_max: usize,
    pub tau_tilde: f64,
    pub delta_from_discrepancy: bool,
    pub estimator: EstimatorMode,
}

impl Default for TrConfig {
    fn default() -> Self {
        Self {
            eta0: 0.1,
            beta1: 0.95,
            beta2: 0.75,
            beta3: 0.5,
            kappa_arm: 1e-12,
            max_armijo: 60,
            max_line_search: 40,
            inner_max: 20,
            tau_tilde: 1.0,
            delta_from_discrepancy: false,
            estimator: EstimatorMode::Mixed,
        }
    }
}

impl TrConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.eta0 > 0.0
            && 0.0 < self.beta1
            && self.beta1 < 1.0
            && (0.75..1.0).contains(&self.beta2)
            && 0.0 < self.beta3
            && self.beta3 < 1.0
            && self.kappa_arm > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid trust-region parameters: {self:?}")))
        }
    }
}

/// Accepted AGC step.
#[derive(Debug, Clone)]
pub struct AgcStep {
    pub s: DVector<f64>,
    pub t: f64,
    pub iterations: usize,
    pub j: f64,
    pub r: f64,
}

/// Backtrack `s - t g` by halving `t` until the Armijo and TR conditions hold.
/// `eval` returns `(Ĵ_r, R_Ĵ)`.
#[allow(clippy::too_many_arguments)]
pub fn compute_agc(
    mut eval: impl FnMut(&DVector<f64>) -> Result<(f64, f64)>,
    s: &DVector<f64>,
    j_k: f64,
    gradient: &DVector<f64>,
    t_init: f64,
    eta: f64,
    kappa: f64,
    max_iter: usize,
) -> Result<AgcStep> {
    let gg = gradient.norm_squared();
    let mut t = t_init;
    let mut iterations = 0;
    loop {
        let trial = s - gradient * t;
        let (j, r) = eval(&trial)?;
        iterations += 1;
        let armijo = j - j_k <= -kappa * t * gg;
        if (armijo && r <= eta) || iterations >= max_iter {
            if !(armijo && r <= eta) {
                log::warn!("AGC backtracking stopped after {iterations} halvings");
            }
            return Ok(AgcStep {
                s: trial,
                t,
                iterations,
                j,
                r,
            });
        }
        t *= 0.5;
    }
}

/// Cheap sufficient and necessary tests first, the FOM value only if needed.
pub fn acceptance_decision(
    j_r_trial: f64,
    delta: f64,
    j_r_agc: f64,
    fom: impl FnOnce() -> Result<f64>,
) -> Result<(Branch, Option<f64>)> {
    if j_r_trial + delta < j_r_agc {
        return Ok((Branch::AcceptCheap, None));
    }
    if j_r_trial - delta > j_r_agc {
        return Ok((Branch::RejectCheap, None));
    }
    let j = fom()?;
    let branch = if j <= j_r_agc { Branch::AcceptFom } else { Branch::RejectFom };
    Ok((branch, Some(j)))
}

/// `ρ > β₂` enlarges, rejection shrinks, otherwise the radius is kept.
pub fn update_radius(eta: f64, accepted: bool, rho: Option<f64>, cfg: &TrConfig) -> f64 {
    if !accepted {
        return eta * cfg.beta3;
    }
    match rho {
        Some(r) if r > cfg.beta2 => eta / cfg.beta3,
        _ => eta,
    }
}

/// Reduced model plus estimator, counting estimator evaluations.
pub struct Surrogate<'a> {
    pub model: &'a ForwardModel,
    pub space: &'a ReducedParameterSpace,
    pub rsm: &'a ReducedStateModel,
    pub est: Option<&'a EstimatorData>,
    pub evaluations: usize,
}

/// A reduced point together with its certified relative error.
#[derive(Debug, Clone)]
pub struct Certified {
    pub point: ReducedPoint,
    pub delta: f64,
    pub r: f64,
}

impl Surrogate<'_> {
    /// `None` where the reduced model is not coercive.
    pub fn evaluate(&mut self, s: &DVector<f64>) -> Result<Option<Certified>> {
        let point = match self.rsm.evaluate(s) {
            Ok(p) => p,
            Err(Error::IndefiniteReducedSystem { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        self.evaluations += 1;
        match estimate_error(self.model, self.space, self.rsm, self.est, &point) {
            Ok(e) => {
                let r = if point.j > 0.0 { e.delta_j / point.j } else { f64::INFINITY };
                Ok(Some(Certified {
                    delta: e.delta_j,
                    r,
                    point,
                }))
            }
            Err(Error::InadmissibleParameter(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// Dense Tikhonov subproblem of the fully reduced model.
pub struct ReducedTikhonov {
    h: DMatrix<f64>,
    gradient: DVector<f64>,
    x0: DVector<f64>,
    c_circ: DVector<f64>,
    j: f64,
}

impl ReducedTikhonov {
    pub fn new(rsm: &ReducedStateModel, point: &ReducedPoint, c_circ: &DVector<f64>) -> Self {
        let jac = rsm.jacobian(point);
        let h = jac.tr_mul(&(rsm.mass_block() * &jac));
        Self {
            h,
            gradient: point.gradient.clone(),
            x0: &point.coeffs - c_circ,
            c_circ: c_circ.clone(),
            j: point.j,
        }
    }
}

impl TikhonovSubproblem for ReducedTikhonov {
    type Point = DVector<f64>;

    fn solve(&mut self, alpha: f64) -> Result<TikhonovSolution<DVector<f64>>> {
        let n = self.h.nrows();
        let lhs = &self.h + DMatrix::identity(n, n) * alpha;
        let rhs = -&self.gradient + &self.h * &self.x0;
        let x = lhs
            .cholesky()
            .ok_or(Error::IndefiniteReducedSystem { dim: n })?
            .solve(&rhs);
        let d = &x - &self.x0;
        let lin = 2.0 * self.j + 2.0 * self.gradient.dot(&d) + d.dot(&(&self.h * &d));
        Ok(TikhonovSolution {
            point: &self.c_circ + x,
            lin_residual_sq: lin.max(0.0),
            cg_iterations: 0,
        })
    }
}

/// Result of the TR subproblem.
#[derive(Debug, Clone)]
pub struct SubproblemResult {
    pub trial: Certified,
    pub inner_iterations: usize,
    pub first_alpha: Option<f64>,
    pub alpha_records: Vec<AlphaRecord>,
}

/// Inner IRGNM on the reduced model from the AGC point.
#[allow(clippy::too_many_arguments)]
pub fn solve_tr_subproblem(
    sur: &mut Surrogate<'_>,
    agc: Certified,
    c_circ: &DVector<f64>,
    eta: f64,
    target: f64,
    alpha_start: f64,
    rule: AlphaRule,
    cfg: &TrConfig,
    k: usize,
) -> Result<SubproblemResult> {
    let mut cur = agc;
    let mut alpha = alpha_start;
    let mut first_alpha = None;
    let mut records = Vec::new();
    let mut l = 0;
    while l < cfg.inner_max {
        if cur.point.residual_norm() <= target || (cfg.beta1 * eta <= cur.r && cur.r <= eta) {
            break;
        }
        let mut sub = ReducedTikhonov::new(sur.rsm, &cur.point, c_circ);
        let search = alpha_backtracking(&mut sub, alpha, cur.point.j, rule)?;
        records.push(AlphaRecord {
            k,
            alpha: search.alpha,
            j: cur.point.j,
            lin_residual_sq: search.solution.lin_residual_sq,
            lower: rule.theta * cur.point.j,
            upper: rule.big_theta * cur.point.j,
            trials: search.trials,
            degenerate: search.degenerate,
        });
        first_alpha.get_or_insert(search.alpha);
        alpha = search.alpha;
        let dir = &search.solution.point - &cur.point.coeffs;
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..cfg.max_line_search {
            if let Some(c) = sur.evaluate(&(&cur.point.coeffs + &dir * t))? {
                if c.r <= eta {
                    next = Some(c);
                    break;
                }
            }
            t *= 0.5;
        }
        l += 1;
        match next {
            Some(c) => cur = c,
            None => {
                log::warn!("inner line search found no point inside the trust region");
                break;
            }
        }
    }
    Ok(SubproblemResult {
        trial: cur,
        inner_iterations: l,
        first_alpha,
        alpha_records: records,
    })
}

fn certify(sur: &mut Surrogate<'_>, s: &DVector<f64>) -> Result<(f64, f64, Option<Certified>)> {
    Ok(match sur.evaluate(s)? {
        Some(c) => (c.point.j, c.r, Some(c)),
        None => (f64::INFINITY, f64::INFINITY, None),
    })
}

/// The trust-region IRGNM on `Q_r` and `V_r`.
pub fn tr_irgnm(model: &ForwardModel, start: &StartPoint, config: &IrgnmConfig, tr: &TrConfig) -> Result<RunReport> {
    config.validate()?;
    tr.validate()?;
    let tol = config.tau * model.delta();
    let rule = AlphaRule::from(config);
    let mut policy = tr.estimator.policy();
    let mut rec = Recorder::new(model);

    let mut q = start.q0.clone();
    let mut u = model.solve_state(&q)?;
    let mut res = (2.0 * model.discrepancy_of_state(&u)).sqrt();
    if res <= tol {
        rec.push(RowData {
            k: 0,
            discrepancy: res,
            eta: Some(tr.eta0),
            accepted: true,
            ..Default::default()
        });
        return Ok(rec.finish("qr-vr", Some(tr.estimator.name()), config.tau, true, q));
    }
    let p = model.solve_adjoint(&q, &u)?;
    let g0 = model.gradient(&q)?;
    let snapshot = match model.smoothed_snapshot(&q) {
        Ok(s) if model.kind() == crate::forward::ProblemKind::Diffusion => s,
        _ => g0.clone(),
    };
    let mut space = ReducedParameterSpace::init_space(model, &start.q_circ, &q, &snapshot)?;
    let mut rsm = ReducedStateModel::new(model);
    rsm.enrich_state_space(model, &space, &[&u, &p])?;
    let mut est = EstimatorData::new();
    let mut dims = (space.dim(), rsm.dim());
    let mut assembling = policy.should_assemble(0, k_ass((0, 0), dims), 0);
    if assembling {
        est.extend(model, &space, &rsm)?;
    }
    rec.push(RowData {
        k: 0,
        discrepancy: res,
        eta: Some(tr.eta0),
        n_q: Some(dims.0),
        n_v: Some(dims.1),
        accepted: true,
        ..Default::default()
    });

    let mut t = 0.5 / model.q_norm(&g0.0);
    let mut eta = tr.eta0;
    let mut alpha = config.alpha0;
    let mut j_cur = 0.5 * res * res;
    let mut s = space.project(&q)?;
    let mut k = 0;
    while res > tol && k < config.max_outer {
        let c_circ = space.project(&start.q_circ)?;
        let delta_tilde = if tr.delta_from_discrepancy { j_cur } else { model.delta() };
        let mut sur = Surrogate {
            model,
            space: &space,
            rsm: &rsm,
            est: est.covers(&rsm).then_some(&est),
            evaluations: 0,
        };
        let here = rsm.evaluate(&s)?;
        let mut agc_point = None;
        let agc = compute_agc(
            |x| {
                let (j, r, c) = certify(&mut sur, x)?;
                agc_point = c;
                Ok((j, r))
            },
            &s,
            here.j,
            &here.gradient,
            t,
            eta,
            tr.kappa_arm,
            tr.max_armijo,
        )?;
        t = agc.t;
        let Some(agc_point) = agc_point else {
            return Err(Error::InadmissibleParameter("no certified AGC point".into()));
        };
        let j_r_agc = agc_point.point.j;
        let sub = solve_tr_subproblem(
            &mut sur,
            agc_point,
            &c_circ,
            eta,
            tr.tau_tilde * delta_tilde,
            alpha,
            rule,
            tr,
            k,
        )?;
        let k_online = 2 * sur.evaluations as u64;
        for a in sub.alpha_records {
            rec.alpha(a);
        }
        let trial = sub.trial;
        let q_trial = space.lift(&trial.point.coeffs)?;
        let (branch, j_fom) = acceptance_decision(trial.point.j, trial.delta, j_r_agc, || model.discrepancy(&q_trial))?;
        let accepted = branch.accepted();
        k += 1;
        let eta_used = eta;
        let mut step = TrStep {
            k,
            eta: eta_used,
            eta_next: eta,
            r_trial: trial.r,
            rho: None,
            branch,
            j_current: j_cur,
            j_trial: j_fom,
            j_r_agc,
            agc_iterations: agc.iterations,
            inner_iterations: sub.inner_iterations,
            n_q: dims.0,
            n_v: dims.1,
            assembled: false,
            k_ass: 0,
            k_ass_counted: 0,
            k_online,
        };
        if accepted {
            q = q_trial;
            u = model.solve_state(&q)?;
            let j_new = model.discrepancy_of_state(&u);
            res = (2.0 * j_new).sqrt();
            let denom = here.j - trial.point.j;
            let rho = (denom != 0.0).then(|| (j_cur - j_new) / denom);
            eta = update_radius(eta, true, rho, tr);
            step.rho = rho;
            step.j_trial = Some(j_new);
            j_cur = j_new;
            alpha = sub.first_alpha.unwrap_or(alpha);
            rec.check_admissible(k, &q);
            if res > tol {
                let p = model.solve_adjoint(&q, &u)?;
                let snap = model.smoothed_snapshot(&q)?;
                space.enrich(model, &snap, k)?;
                rsm.enrich_state_space(model, &space, &[&u, &p])?;
                let next = (space.dim(), rsm.dim());
                step.k_ass = k_ass(dims, next);
                assembling = assembling && policy.should_assemble(k, step.k_ass, k_online);
                if assembling {
                    step.k_ass_counted = est.extend(model, &space, &rsm)?;
                    step.assembled = true;
                }
                dims = next;
            }
            s = space.project(&q)?;
        } else {
            eta = update_radius(eta, false, None, tr);
        }
        step.eta_next = eta;
        log::info!(
            "tr k={k} {:?} |F-y|={res:.4e} eta={eta:.3e} n_Q={} n_V={} R={:.3e}",
            branch,
            dims.0,
            dims.1,
            trial.r
        );
        rec.tr_step(step);
        rec.push(RowData {
            k,
            discrepancy: res,
            alpha: Some(alpha),
            eta: Some(eta_used),
            n_q: Some(dims.0),
            n_v: Some(dims.1),
            accepted,
        });
    }
    Ok(rec.finish("qr-vr", Some(tr.estimator.name()), config.tau, res <= tol, q))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn acceptance_branches() {
        let never = || -> Result<f64> { panic!("FOM evaluated") };
        assert_eq!(acceptance_decision(1.0, 0.5, 2.0, never).unwrap().0, Branch::AcceptCheap);
        assert_eq!(acceptance_decision(3.0, 0.5, 2.0, never).unwrap().0, Branch::RejectCheap);
        assert_eq!(acceptance_decision(2.1, 0.5, 2.0, || Ok(1.9)).unwrap(), (Branch::AcceptFom, Some(1.9)));
        assert_eq!(acceptance_decision(2.1, 0.5, 2.0, || Ok(2.05)).unwrap().0, Branch::RejectFom);
        // equality in the necessary test is not a rejection
        assert_eq!(acceptance_decision(2.5, 0.5, 2.0, || Ok(1.0)).unwrap().0, Branch::AcceptFom);
    }

    #[test]
    fn radius_updates() {
        let c = TrConfig::default();
        assert_eq!(update_radius(0.1, true, Some(0.9), &c), 0.2);
        assert_eq!(update_radius(0.1, false, None, &c), 0.05);
        assert_eq!(update_radius(0.1, true, Some(0.5), &c), 0.1);
        assert_eq!(update_radius(0.1, true, None, &c), 0.1);
    }

    #[test]
    fn agc_on_quadratic_matches_hand_sequence() {
        // J(s) = 2 s², gradient at s = 1 is 4, R(s) = |s|.
        let s = DVector::from_element(1, 1.0);
        let g = DVector::from_element(1, 4.0);
        let mut seen = Vec::new();
        let out = compute_agc(
            |x| {
                seen.push(x[0]);
                Ok((2.0 * x[0] * x[0], x[0].abs()))
            },
            &s,
            2.0,
            &g,
            1.0,
            0.5,
            1e-12,
            50,
        )
        .unwrap();
        // t = 1 → -3 (no decrease), 0.5 → -1 (R = 1), 0.25 → 0 (accepted)
        assert_eq!(seen, vec![-3.0, -1.0, 0.0]);
        assert_eq!((out.t, out.iterations), (0.25, 3));
    }
}
