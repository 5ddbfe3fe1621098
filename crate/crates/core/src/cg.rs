//! Preconditioned conjugate gradients for the Tikhonov normal equations.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Result of one CG run.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: DVector<f64>,
    /// `side0 + Σ step_j · side(p_j)`, an auxiliary image of `x - x0`.
    pub side: DVector<f64>,
    pub iterations: usize,
    /// Final residual measured in the preconditioner norm `sqrt(rᵀ P⁻¹ r)`.
    pub residual: f64,
    /// False when the iteration cap was hit first.
    pub converged: bool,
}

/// Stopping rule shared by all CG calls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgSettings {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for CgSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_iter: 500,
        }
    }
}

/// PCG started from `x0` with initial residual `r0 = b - H x0` supplied by
/// the caller.
///
/// `apply(p)` returns `(H p, side(p))` where `side` is any linear map that the
/// caller wants accumulated along the iterates. `precond(r)` applies `P⁻¹`.
/// Convergence is declared once the preconditioned residual norm has dropped
/// by `rel_tol` relative to its starting value. Hitting `max_iter` returns the
/// last iterate with `converged = false`.
pub fn pcg_with_side<A, P>(
    mut apply: A,
    mut precond: P,
    x0: DVector<f64>,
    r0: DVector<f64>,
    side0: DVector<f64>,
    settings: CgSettings,
) -> Result<CgOutcome>
where
    A: FnMut(&DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)>,
    P: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut x = x0;
    let mut r = r0;
    let mut side = side0;
    let mut z = precond(&r)?;
    let mut rz = r.dot(&z);
    let start = rz.max(0.0).sqrt();
    if start == 0.0 {
        return Ok(CgOutcome {
            x,
            side,
            iterations: 0,
            residual: 0.0,
            converged: true,
        });
    }
    let target = settings.rel_tol * start;
    let mut p = z.clone();
    for it in 1..=settings.max_iter {
        let (hp, sp) = apply(&p)?;
        let curvature = p.dot(&hp);
        if curvature <= 0.0 || !curvature.is_finite() {
            return Err(Error::CgFailure {
                iterations: it,
                residual: rz.max(0.0).sqrt(),
            });
        }
        let step = rz / curvature;
        x.axpy(step, &p, 1.0);
        side.axpy(step, &sp, 1.0);
        r.axpy(-step, &hp, 1.0);
        z = precond(&r)?;
        let rz_new = r.dot(&z);
        let norm = rz_new.max(0.0).sqrt();
        if norm <= target {
            return Ok(CgOutcome {
                x,
                side,
                iterations: it,
                residual: norm,
                converged: true,
            });
        }
        let beta = rz_new / rz;
        rz = rz_new;
        p = &z + &p * beta;
    }
    let residual = rz.max(0.0).sqrt();
    log::warn!(
        "CG stopped at the cap of {} iterations (residual {:.3e}, target {:.3e})",
        settings.max_iter,
        residual,
        target
    );
    Ok(CgOutcome {
        x,
        side,
        iterations: settings.max_iter,
        residual,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn solves_small_spd_and_accumulates_side() {
        let h = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let s = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let x0 = DVector::from_vec(vec![0.3, 0.1, -0.2]);
        let r0 = &b - &h * &x0;
        let out = pcg_with_side(
            |p| Ok((&h * p, &s * p)),
            |r| Ok(r.clone()),
            x0.clone(),
            r0,
            DVector::zeros(2),
            CgSettings {
                rel_tol: 1e-14,
                max_iter: 10,
            },
        )
        .unwrap();
        let exact = h.clone().cholesky().unwrap().solve(&b);
        assert!((&out.x - &exact).amax() < 1e-12);
        assert!((&out.side - &s * (&exact - &x0)).amax() < 1e-12);
        assert!(out.iterations <= 3);
    }

    #[test]
    fn zero_residual_returns_immediately() {
        let out = pcg_with_side(
            |_| unreachable!(),
            |r| Ok(r.clone()),
            DVector::from_element(2, 1.0),
            DVector::zeros(2),
            DVector::zeros(1),
            CgSettings::default(),
        )
        .unwrap();
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn indefinite_operator_fails() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let err = pcg_with_side(
            |p| Ok((&h * p, DVector::zeros(0))),
            |r| Ok(r.clone()),
            DVector::zeros(2),
            DVector::from_vec(vec![0.0, 1.0]),
            DVector::zeros(0),
            CgSettings::default(),
        );
        assert!(matches!(err, Err(Error::CgFailure { .. })));
    }

    #[test]
    fn iteration_cap_returns_truncated_iterate() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 10.0, 100.0]));
        let out = pcg_with_side(
            |p| Ok((&h * p, DVector::zeros(0))),
            |r| Ok(r.clone()),
            DVector::zeros(3),
            DVector::from_element(3, 1.0),
            DVector::zeros(0),
            CgSettings {
                rel_tol: 1e-12,
                max_iter: 1,
            },
        )
        .unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 1);
        assert!(out.x.iter().all(|v| *v > 0.0));
    }
}
