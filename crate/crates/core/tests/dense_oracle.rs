mod common;

use common::{rel, synthetic_model, DenseQ1, KINDS};
use nalgebra::DVector;
use rbirgnm::cg::CgSettings;
use rbirgnm::fem::CoefficientField;
use rbirgnm::forward::ForwardModel;
use rbirgnm::irgnm::{fom_irgnm, FomTikhonov, IrgnmConfig, StartPoint, TikhonovSubproblem};

const N: usize = 4;
const TOL: f64 = 1e-8;

fn setup(kind: rbirgnm::forward::ProblemKind) -> (ForwardModel, DenseQ1, CoefficientField) {
    let model = synthetic_model(N, kind, 1e-8);
    let q = CoefficientField::from_fn(model.grid(), |x, y| 2.0 + x + 0.5 * (4.0 * y).cos());
    (model, DenseQ1 { n: N, kind }, q)
}

#[test]
fn state_solve_matches_dense() {
    for kind in KINDS {
        let (model, dense, q) = setup(kind);
        let u = model.solve_state(&q).unwrap();
        let e = rel(&u.0, &dense.state(q.0.as_slice()));
        assert!(e < TOL, "{kind:?}: {e:e}");
        let j = model.discrepancy(&q).unwrap();
        let jd = dense.discrepancy(q.0.as_slice(), &model.data().0);
        assert!((j - jd).abs() <= TOL * jd, "{kind:?}: {j} vs {jd}");
    }
}

#[test]
fn gradient_matches_dense() {
    for kind in KINDS {
        let (model, dense, q) = setup(kind);
        let g = model.gradient(&q).unwrap();
        let e = rel(&g.0, &dense.gradient(q.0.as_slice(), &model.data().0));
        assert!(e < TOL, "{kind:?}: {e:e}");
    }
}

#[test]
fn tikhonov_subproblem_matches_dense() {
    let cg = CgSettings {
        rel_tol: 1e-14,
        max_iter: 500,
    };
    for kind in KINDS {
        let (model, dense, q) = setup(kind);
        let q_circ = CoefficientField::constant(model.grid(), 3.0);
        let mut sub = FomTikhonov::new(&model, &q, &q_circ, cg).unwrap();
        for alpha in [1e-3, 1e-1, 1.0, 10.0] {
            let sol = sub.solve(alpha).unwrap();
            let (qd, lin) = dense.tikhonov(q.0.as_slice(), q_circ.0.as_slice(), &model.data().0, alpha);
            let e = rel(&sol.point.0, &qd);
            assert!(e < TOL, "{kind:?} α={alpha}: {e:e}");
            assert!((sol.lin_residual_sq - lin).abs() <= TOL * lin, "{kind:?} α={alpha}");
        }
    }
}

/// Dense α search: multiply or divide by 2 until `θĴ ≤ lin² ≤ ΘĴ`, then bisect
/// geometrically between the tightest values seen on both sides.
fn dense_irgnm_step(dense: &DenseQ1, q0: &[f64], y: &DVector<f64>, cfg: &IrgnmConfig) -> (DVector<f64>, f64) {
    let j = dense.discrepancy(q0, y);
    let (lower, upper) = (cfg.theta * j, cfg.big_theta * j);
    let mut alpha = cfg.alpha0;
    let (mut small, mut large): (Option<f64>, Option<f64>) = (None, None);
    for _ in 0..cfg.max_alpha_steps {
        let (q, lin) = dense.tikhonov(q0, q0, y, alpha);
        if lin >= lower && lin <= upper {
            return (q, alpha);
        }
        if lin < lower {
            small = Some(small.map_or(alpha, |a| a.max(alpha)));
        } else {
            large = Some(large.map_or(alpha, |b| b.min(alpha)));
        }
        alpha = match (small, large) {
            (Some(a), Some(b)) => (a * b).sqrt(),
            (Some(a), None) => 2.0 * a,
            (None, Some(b)) => b / 2.0,
            (None, None) => unreachable!(),
        };
    }
    panic!("dense α search did not reach the bracket");
}

#[test]
fn one_irgnm_step_matches_dense() {
    for kind in KINDS {
        let (model, dense, _) = setup(kind);
        let q0 = CoefficientField::constant(model.grid(), 3.0);
        let cfg = IrgnmConfig {
            max_outer: 1,
            alpha0: if kind == rbirgnm::forward::ProblemKind::Reaction { 1.0 } else { 1e-3 },
            cg_tol: 1e-14,
            ..Default::default()
        };
        let start = StartPoint {
            q_circ: q0.clone(),
            q0: q0.clone(),
        };
        let report = fom_irgnm(&model, &start, &cfg).unwrap();
        assert_eq!(report.summary.outer_iterations, 1);
        let rec = &report.details.alpha_records[0];
        assert!(!rec.degenerate);
        let (qd, alpha) = dense_irgnm_step(&dense, q0.0.as_slice(), &model.data().0, &cfg);
        assert_eq!(rec.alpha, alpha, "{kind:?}");
        let e = rel(&report.q.0, &qd);
        assert!(e < TOL, "{kind:?}: {e:e}");
    }
}
