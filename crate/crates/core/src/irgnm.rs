//! Full-order IRGNM: Tikhonov-regularized Gauss-Newton steps with α chosen
//! by a bracket on the linearized residual, stopped by the discrepancy principle.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::cg::{pcg_with_side, CgSettings};
use crate::error::{check_len, Error, Result};
use crate::fem::{CoefficientField, SpdSolver, StateField};
use crate::forward::ForwardModel;
use crate::report::{AlphaRecord, Recorder, RowData, RunReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrgnmConfig {
    pub tau: f64,
    pub theta: f64,
    pub big_theta: f64,
    pub alpha0: f64,
    pub alpha_factor: f64,
    pub max_alpha_steps: usize,
    pub max_outer: usize,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl Default for IrgnmConfig {
    fn default() -> Self {
        Self {
            tau: 3.5,
            theta: 0.4,
            big_theta: 0.9,
            alpha0: 1.0,
            alpha_factor: 2.0,
            max_alpha_steps: 40,
            max_outer: 200,
            cg_tol: 1e-10,
            cg_max_iter: 500,
        }
    }
}

impl IrgnmConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.theta
            && self.theta < self.big_theta
            && self.big_theta < 1.0
            && self.tau > 1.0
            && self.alpha0 > 0.0
            && self.alpha_factor > 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid IRGNM parameters: {self:?}")))
        }
    }

    pub fn cg(&self) -> CgSettings {
        CgSettings {
            rel_tol: self.cg_tol,
            max_iter: self.cg_max_iter,
        }
    }
}

/// Regularization center and initial guess.
#[derive(Debug, Clone, PartialEq)]
pub struct StartPoint {
    pub q_circ: CoefficientField,
    pub q0: CoefficientField,
}

/// `F'(q)` and its Hilbert adjoint with `u = S(q)` frozen.
pub struct LinearizedOperator<'a> {
    model: &'a ForwardModel,
    u: StateField,
    solver: Arc<SpdSolver>,
}

impl<'a> LinearizedOperator<'a> {
    pub fn new(model: &'a ForwardModel, q: &CoefficientField) -> Result<Self> {
        let u = model.solve_state(q)?;
        let solver = model.system_solver(q)?;
        Ok(Self { model, u, solver })
    }

    pub fn state(&self) -> &StateField {
        &self.u
    }

    pub fn solver(&self) -> &SpdSolver {
        &self.solver
    }

    /// `C du` with `a(du, v; q) = -⟨B_u d, v⟩`.
    pub fn apply(&self, d: &CoefficientField) -> Result<DVector<f64>> {
        let rhs = -self.model.apply_b(&self.u, d)?;
        self.model.solve_linearized(&self.solver, &rhs)
    }

    /// `Gᵀ M r` as a functional on the parameter nodes.
    pub fn adjoint_functional(&self, r: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.u.0.len(), r.len())?;
        let rhs = self.model.space().mass_free().mul_vec(r);
        let w = StateField(self.model.solve_linearized(&self.solver, &rhs)?);
        Ok(-self.model.apply_b_transpose(&self.u, &w)?)
    }

    /// `F'(q)* r` in the parameter inner product.
    pub fn apply_adjoint(&self, r: &DVector<f64>) -> Result<CoefficientField> {
        let f = self.adjoint_functional(r)?;
        Ok(CoefficientField(self.model.parameter_riesz(&f)?))
    }
}

/// Minimizer of one Tikhonov subproblem.
#[derive(Debug, Clone)]
pub struct TikhonovSolution<P> {
    pub point: P,
    /// `‖F'(q^k)(q(α) - q^k) + F(q^k) - y^δ‖²`.
    pub lin_residual_sq: f64,
    pub cg_iterations: usize,
}

/// A family of Tikhonov subproblems parametrized by α.
pub trait TikhonovSubproblem {
    type Point: Clone;

    fn solve(&mut self, alpha: f64) -> Result<TikhonovSolution<Self::Point>>;
}

/// Outcome of the α search.
#[derive(Debug, Clone)]
pub struct AlphaSearch<P> {
    pub solution: TikhonovSolution<P>,
    pub alpha: f64,
    pub trials: usize,
    pub degenerate: bool,
}

/// Bracket parameters for the α search.
#[derive(Debug, Clone, Copy)]
pub struct AlphaRule {
    pub theta: f64,
    pub big_theta: f64,
    pub factor: f64,
    pub max_steps: usize,
}

impl From<&IrgnmConfig> for AlphaRule {
    fn from(c: &IrgnmConfig) -> Self {
        Self {
            theta: c.theta,
            big_theta: c.big_theta,
            factor: c.alpha_factor,
            max_steps: c.max_alpha_steps,
        }
    }
}

/// Adjust α until `θ Ĵ ≤ lin² ≤ Θ Ĵ`, multiplying or dividing by the factor
/// and bisecting geometrically once both sides of the bracket were seen.
pub fn alpha_backtracking<S: TikhonovSubproblem>(
    sub: &mut S,
    alpha_start: f64,
    j: f64,
    rule: AlphaRule,
) -> Result<AlphaSearch<S::Point>> {
    let lower = rule.theta * j;
    let upper = rule.big_theta * j;
    let mut alpha = alpha_start;
    let mut too_small: Option<f64> = None;
    let mut too_large: Option<f64> = None;
    let mut trials = 0;
    // last value and last change while moving one way by a constant factor
    let mut previous: Option<(f64, Option<f64>)> = None;
    loop {
        let sol = sub.solve(alpha)?;
        trials += 1;
        let lin = sol.lin_residual_sq;
        if (lower..=upper).contains(&lin) {
            return Ok(AlphaSearch {
                solution: sol,
                alpha,
                trials,
                degenerate: false,
            });
        }
        // Shrinking changes form a geometric tail; stop once its sum cannot
        // reach the bracket.
        let gap = if lin < lower { lower - lin } else { lin - upper };
        let change = previous.map(|(prev, _)| (lin - prev).abs());
        let stalled = match (change, previous.and_then(|(_, c)| c)) {
            (Some(d), Some(d_prev)) if d < d_prev => {
                let ratio = d / d_prev;
                d * ratio / (1.0 - ratio) < gap
            }
            _ => false,
        };
        if trials >= rule.max_steps || stalled {
            log::warn!("α search left the bracket unreached after {trials} trials, keeping α = {alpha:.3e}");
            return Ok(AlphaSearch {
                solution: sol,
                alpha,
                trials,
                degenerate: true,
            });
        }
        if lin < lower {
            too_small = Some(too_small.map_or(alpha, |a: f64| a.max(alpha)));
        } else {
            too_large = Some(too_large.map_or(alpha, |a: f64| a.min(alpha)));
        }
        (alpha, previous) = match (too_small, too_large) {
            (Some(a), Some(b)) => ((a * b).sqrt(), None),
            (Some(a), None) => (a * rule.factor, Some((lin, change))),
            (None, Some(b)) => (b / rule.factor, Some((lin, change))),
            (None, None) => unreachable!(),
        };
    }
}

/// The full-order subproblem at `q^k`, solved by CG in the parameter metric.
pub struct FomTikhonov<'a> {
    lin: LinearizedOperator<'a>,
    model: &'a ForwardModel,
    q_circ: CoefficientField,
    x0: DVector<f64>,
    mq_x0: DVector<f64>,
    bt_p: DVector<f64>,
    residual: DVector<f64>,
    cg: CgSettings,
}

impl<'a> FomTikhonov<'a> {
    /// Prepares the α-independent data; costs the adjoint solve and one `B_uᵀ`.
    pub fn new(model: &'a ForwardModel, q_k: &CoefficientField, q_circ: &CoefficientField, cg: CgSettings) -> Result<Self> {
        let lin = LinearizedOperator::new(model, q_k)?;
        let p = model.solve_adjoint(q_k, lin.state())?;
        let bt_p = model.apply_b_transpose(lin.state(), &p)?;
        let x0 = &q_k.0 - &q_circ.0;
        let mq_x0 = model.parameter_metric().matrix().mul_vec(&x0);
        let residual = &lin.state().0 - &model.data().0;
        Ok(Self {
            lin,
            model,
            q_circ: q_circ.clone(),
            x0,
            mq_x0,
            bt_p,
            residual,
            cg,
        })
    }

    /// `B_uᵀ p` at `q^k`, i.e. the gradient functional.
    pub fn gradient_functional(&self) -> &DVector<f64> {
        &self.bt_p
    }

    pub fn linearization(&self) -> &LinearizedOperator<'a> {
        &self.lin
    }
}

impl TikhonovSubproblem for FomTikhonov<'_> {
    type Point = CoefficientField;

    fn solve(&mut self, alpha: f64) -> Result<TikhonovSolution<CoefficientField>> {
        let model = self.model;
        let lin = &self.lin;
        let mq = model.parameter_metric().matrix();
        let r0 = -&self.bt_p - &self.mq_x0 * alpha;
        let out = pcg_with_side(
            |d| {
                let gd = lin.apply(&CoefficientField(d.clone()))?;
                let mut hd = lin.adjoint_functional(&gd)?;
                hd.axpy(alpha, &mq.mul_vec(d), 1.0);
                Ok((hd, gd))
            },
            |r| model.parameter_riesz(r),
            self.x0.clone(),
            r0,
            self.residual.clone(),
            self.cg,
        )?;
        Ok(TikhonovSolution {
            lin_residual_sq: model.obs_inner(&out.side, &out.side),
            point: CoefficientField(&self.q_circ.0 + out.x),
            cg_iterations: out.iterations,
        })
    }
}

/// Full-order IRGNM from `start.q0`.
pub fn fom_irgnm(model: &ForwardModel, start: &StartPoint, config: &IrgnmConfig) -> Result<RunReport> {
    config.validate()?;
    let tol = config.tau * model.delta();
    let rule = AlphaRule::from(config);
    let mut rec = Recorder::new(model);
    let mut q = start.q0.clone();
    let mut alpha = config.alpha0;
    let mut res = model.residual_norm(&q)?;
    rec.push(RowData {
        k: 0,
        discrepancy: res,
        accepted: true,
        ..Default::default()
    });
    let mut k = 0;
    while res > tol && k < config.max_outer {
        let j = 0.5 * res * res;
        let mut sub = FomTikhonov::new(model, &q, &start.q_circ, config.cg())?;
        let search = alpha_backtracking(&mut sub, alpha, j, rule)?;
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
        alpha = search.alpha;
        q = search.solution.point;
        k += 1;
        rec.check_admissible(k, &q);
        res = model.residual_norm(&q)?;
        log::info!("fom k={k} |F-y|={res:.4e} alpha={alpha:.3e}");
        rec.push(RowData {
            k,
            discrepancy: res,
            alpha: Some(alpha),
            accepted: true,
            ..Default::default()
        });
    }
    Ok(rec.finish("fom", None, config.tau, res <= tol, q))
}
