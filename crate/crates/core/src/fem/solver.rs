use nalgebra::DVector;

use super::instrument::{Event, Instrumentation};
use super::sparse::SparseMatrix;
use crate::error::{check_len, Error, Result};

/// Relative residual tolerance for full-order linear solves.
pub const SOLVER_TOL: f64 = 1e-12;

/// Band storage limit (number of stored doubles) above which [`SpdSolver`]
/// falls back to preconditioned CG.
pub const DIRECT_BAND_LIMIT: usize = 120_000_000;

/// Cholesky factorization in lower band storage.
///
/// The lexicographic ordering of a structured grid gives bandwidth `n+1`, so
/// the fill stays inside the band and no reordering is needed.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    dim: usize,
    bw: usize,
    // row i holds L[i, i-bw..=i] at offsets 0..=bw
    band: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        let dim = a.dim();
        let bw = a.pattern().bandwidth();
        let w = bw + 1;
        let mut band = vec![0.0; dim * w];
        for i in 0..dim {
            for &j in a.pattern().row(i) {
                if j <= i {
                    band[i * w + (j + bw - i)] = a.get(i, j);
                }
            }
        }
        for i in 0..dim {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let kl = lo.max(j.saturating_sub(bw));
                let mut s = band[i * w + (j + bw - i)];
                let ri = i * w + bw - i;
                let rj = j * w + bw - j;
                for k in kl..j {
                    s -= band[ri + k] * band[rj + k];
                }
                if j == i {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite { row: i, pivot: s });
                    }
                    band[ri + i] = s.sqrt();
                } else {
                    band[ri + j] = s / band[rj + j];
                }
            }
        }
        Ok(Self { dim, bw, band })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let w = self.bw + 1;
        for i in 0..self.dim {
            let lo = i.saturating_sub(self.bw);
            let ri = i * w + self.bw - i;
            let mut s = x[i];
            for k in lo..i {
                s -= self.band[ri + k] * x[k];
            }
            x[i] = s / self.band[ri + i];
        }
        for i in (0..self.dim).rev() {
            let lo = i.saturating_sub(self.bw);
            let ri = i * w + self.bw - i;
            let xi = x[i] / self.band[ri + i];
            x[i] = xi;
            for k in lo..i {
                x[k] -= self.band[ri + k] * xi;
            }
        }
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut x = rhs.clone();
        self.solve_in_place(x.as_mut_slice());
        x
    }
}

/// Jacobi-preconditioned conjugate gradients for SPD sparse systems.
pub fn pcg(a: &SparseMatrix, rhs: &DVector<f64>, tol: f64, max_iter: usize) -> Result<DVector<f64>> {
    check_len(a.dim(), rhs.len())?;
    let diag = a.diagonal();
    let bnorm = rhs.norm();
    let mut x = DVector::zeros(a.dim());
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = rhs.clone();
    let mut z = r.component_div(&diag);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for it in 0..max_iter {
        let ap = a.mul_vec(&p);
        let step = rz / p.dot(&ap);
        x.axpy(step, &p, 1.0);
        r.axpy(-step, &ap, 1.0);
        let res = r.norm() / bnorm;
        if res <= tol {
            return Ok(x);
        }
        if it + 1 == max_iter {
            return Err(Error::SolverFailure {
                iterations: max_iter,
                residual: res,
            });
        }
        z = r.component_div(&diag);
        let rz_new = r.dot(&z);
        p = &z + (rz_new / rz) * &p;
        rz = rz_new;
    }
    Err(Error::SolverFailure {
        iterations: max_iter,
        residual: r.norm() / bnorm,
    })
}

#[derive(Debug, Clone)]
enum Backend {
    Direct(BandedCholesky),
    Iterative(SparseMatrix),
}

/// SPD solver that factors once and serves repeated right-hand sides.
/// Every solve is recorded on the attached [`Instrumentation`].
#[derive(Debug, Clone)]
pub struct SpdSolver {
    backend: Backend,
    hook: Instrumentation,
    event: Event,
}

impl SpdSolver {
    pub fn new(a: &SparseMatrix, hook: Instrumentation, event: Event) -> Result<Self> {
        let bw = a.pattern().bandwidth();
        let backend = if a.dim().saturating_mul(bw + 1) <= DIRECT_BAND_LIMIT {
            Backend::Direct(BandedCholesky::factor(a)?)
        } else {
            Backend::Iterative(a.clone())
        };
        Ok(Self { backend, hook, event })
    }

    pub fn dim(&self) -> usize {
        match &self.backend {
            Backend::Direct(c) => c.dim(),
            Backend::Iterative(a) => a.dim(),
        }
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.dim(), rhs.len())?;
        self.hook.record(self.event);
        match &self.backend {
            Backend::Direct(c) => Ok(c.solve(rhs)),
            Backend::Iterative(a) => pcg(a, rhs, SOLVER_TOL, 20 * a.dim().max(100)),
        }
    }
}

/// One-shot SPD solve: direct factorization when the band fits in memory,
/// otherwise Jacobi-PCG at relative tolerance `tol`.
pub fn solve_spd(a: &SparseMatrix, rhs: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    check_len(a.dim(), rhs.len())?;
    let bw = a.pattern().bandwidth();
    if a.dim().saturating_mul(bw + 1) <= DIRECT_BAND_LIMIT {
        Ok(BandedCholesky::factor(a)?.solve(rhs))
    } else {
        pcg(a, rhs, tol, 20 * a.dim().max(100))
    }
}
