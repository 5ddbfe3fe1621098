//! Bilinear Q1 element integrals and global assembly on a [`StructuredGrid`].
//!
//! Weighted integrands are evaluated with a 2x2 tensor Gauss rule per cell.
//! The rule is exact for every integrand assembled here: products of three
//! bilinear functions, or a bilinear weight times a product of two Q1 gradients.

use std::sync::{Arc, OnceLock};

use nalgebra::DVector;

use super::grid::StructuredGrid;
use super::sparse::{CsrPattern, SparseMatrix};
use crate::error::{check_len, Result};

/// Which nodes carry dofs: all nodes (parameter space) or interior nodes
/// (Dirichlet-constrained state space).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DofSet {
    All,
    Free,
}

/// Integrand family of the parameter-dependent form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightedForm {
    /// `∫ w φ_i φ_j`
    Reaction,
    /// `∫ w ∇φ_i · ∇φ_j`
    Diffusion,
}

/// Cell-local trilinear tables, scaled to the unit square.
///
/// `mass[a][b][c] = ∫ φ_a φ_b φ_c` and `grad[a][b][c] = ∫ ∇φ_a·∇φ_b φ_c`
/// on the reference cell. Physical values pick up `h²` and `1` respectively.
struct Tables {
    mass: [[[f64; 4]; 4]; 4],
    grad: [[[f64; 4]; 4]; 4],
}

fn shape(s: f64, t: f64) -> [f64; 4] {
    [(1.0 - s) * (1.0 - t), s * (1.0 - t), (1.0 - s) * t, s * t]
}

fn shape_grad(s: f64, t: f64) -> [[f64; 2]; 4] {
    [
        [-(1.0 - t), -(1.0 - s)],
        [1.0 - t, -s],
        [-t, 1.0 - s],
        [t, s],
    ]
}

pub(crate) fn gauss_points() -> [(f64, f64); 4] {
    let d = 0.5 / 3f64.sqrt();
    let (a, b) = (0.5 - d, 0.5 + d);
    [(a, a), (b, a), (a, b), (b, b)]
}

fn tables() -> &'static Tables {
    static TABLES: OnceLock<Tables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let mut mass = [[[0.0; 4]; 4]; 4];
        let mut grad = [[[0.0; 4]; 4]; 4];
        for (s, t) in gauss_points() {
            let phi = shape(s, t);
            let dphi = shape_grad(s, t);
            for a in 0..4 {
                for b in 0..4 {
                    let gg = dphi[a][0] * dphi[b][0] + dphi[a][1] * dphi[b][1];
                    for c in 0..4 {
                        mass[a][b][c] += 0.25 * phi[a] * phi[b] * phi[c];
                        grad[a][b][c] += 0.25 * gg * phi[c];
                    }
                }
            }
        }
        Tables { mass, grad }
    })
}

/// Closed-form element stiffness of a square Q1 cell (independent of `h`).
pub fn element_stiffness() -> [[f64; 4]; 4] {
    let d = 2.0 / 3.0;
    let e = -1.0 / 6.0;
    let x = -1.0 / 3.0;
    [[d, e, e, x], [e, d, x, e], [e, x, d, e], [x, e, e, d]]
}

/// Closed-form element mass of a square Q1 cell of width `h`.
pub fn element_mass(h: f64) -> [[f64; 4]; 4] {
    let s = h * h / 36.0;
    [
        [4.0 * s, 2.0 * s, 2.0 * s, s],
        [2.0 * s, 4.0 * s, s, 2.0 * s],
        [2.0 * s, s, 4.0 * s, 2.0 * s],
        [s, 2.0 * s, 2.0 * s, 4.0 * s],
    ]
}

fn weighted_element(form: WeightedForm, h: f64, w: &[f64; 4]) -> [[f64; 4]; 4] {
    let t = tables();
    let (table, scale) = match form {
        WeightedForm::Reaction => (&t.mass, h * h),
        WeightedForm::Diffusion => (&t.grad, 1.0),
    };
    let mut e = [[0.0; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            e[a][b] = scale * (0..4).map(|c| table[a][b][c] * w[c]).sum::<f64>();
        }
    }
    e
}

fn dof_of(grid: &StructuredGrid, dofs: DofSet, node: usize) -> Option<usize> {
    match dofs {
        DofSet::All => Some(node),
        DofSet::Free => grid.free_index(node),
    }
}

/// Nine-point sparsity pattern on the chosen dof set.
pub fn pattern(grid: &StructuredGrid, dofs: DofSet) -> CsrPattern {
    let side = grid.nodes_per_side();
    let dim = match dofs {
        DofSet::All => grid.n_nodes(),
        DofSet::Free => grid.n_free(),
    };
    let mut rows = vec![Vec::with_capacity(9); dim];
    for node in 0..grid.n_nodes() {
        let Some(i) = dof_of(grid, dofs, node) else {
            continue;
        };
        let (ix, iy) = grid.node_lattice(node);
        for jy in iy.saturating_sub(1)..=(iy + 1).min(side - 1) {
            for jx in ix.saturating_sub(1)..=(ix + 1).min(side - 1) {
                if let Some(j) = dof_of(grid, dofs, grid.node_index(jx, jy)) {
                    rows[i].push(j);
                }
            }
        }
    }
    CsrPattern::from_rows(rows)
}

/// Generic cell-by-cell assembly of a symmetric element operator.
pub fn assemble_with(
    grid: &StructuredGrid,
    pattern: Arc<CsrPattern>,
    dofs: DofSet,
    mut element: impl FnMut(&[usize; 4]) -> [[f64; 4]; 4],
) -> SparseMatrix {
    let mut m = SparseMatrix::zeros(pattern);
    for nodes in grid.cells() {
        let local = element(&nodes);
        let ids = nodes.map(|n| dof_of(grid, dofs, n));
        for a in 0..4 {
            let Some(i) = ids[a] else { continue };
            for b in 0..4 {
                if let Some(j) = ids[b] {
                    m.add_at(i, j, local[a][b]);
                }
            }
        }
    }
    m
}

pub fn assemble_stiffness(grid: &StructuredGrid, pattern: Arc<CsrPattern>, dofs: DofSet) -> SparseMatrix {
    let k = element_stiffness();
    assemble_with(grid, pattern, dofs, |_| k)
}

pub fn assemble_mass(grid: &StructuredGrid, pattern: Arc<CsrPattern>, dofs: DofSet) -> SparseMatrix {
    let m = element_mass(grid.h());
    assemble_with(grid, pattern, dofs, |_| m)
}

/// `∫ w φ_i φ_j` or `∫ w ∇φ_i·∇φ_j` for a nodal weight on all grid nodes.
pub fn assemble_weighted_form(
    grid: &StructuredGrid,
    pattern: Arc<CsrPattern>,
    dofs: DofSet,
    form: WeightedForm,
    weight: &[f64],
) -> Result<SparseMatrix> {
    check_len(grid.n_nodes(), weight.len())?;
    let h = grid.h();
    Ok(assemble_with(grid, pattern, dofs, |nodes| {
        let w = nodes.map(|n| weight[n]);
        weighted_element(form, h, &w)
    }))
}

fn gather(values: &[f64], nodes: &[usize; 4]) -> [f64; 4] {
    nodes.map(|n| values[n])
}

/// Matrix-free `(B_u d)_i = ∂_q a(u, φ_i; d)` for interior test functions.
///
/// `u_full` and `d` are all-node vectors (`u_full` zero on the boundary).
pub fn apply_parameter_derivative(
    grid: &StructuredGrid,
    form: WeightedForm,
    u_full: &[f64],
    d: &[f64],
) -> DVector<f64> {
    let t = tables();
    let h = grid.h();
    let mut out = vec![0.0; grid.n_nodes()];
    for nodes in grid.cells() {
        let ul = gather(u_full, &nodes);
        let dl = gather(d, &nodes);
        for a in 0..4 {
            let mut acc = 0.0;
            for b in 0..4 {
                for c in 0..4 {
                    let tv = match form {
                        WeightedForm::Reaction => t.mass[a][b][c] * h * h,
                        WeightedForm::Diffusion => t.grad[a][b][c],
                    };
                    acc += tv * ul[b] * dl[c];
                }
            }
            out[nodes[a]] += acc;
        }
    }
    DVector::from_vec(grid.restrict_to_free(&out))
}

/// Matrix-free `(B_u^T p)_j = ∂_q a(u, p; φ_j)` for every parameter node `j`.
pub fn apply_parameter_derivative_transpose(
    grid: &StructuredGrid,
    form: WeightedForm,
    u_full: &[f64],
    p_full: &[f64],
) -> DVector<f64> {
    let t = tables();
    let h = grid.h();
    let mut out = DVector::zeros(grid.n_nodes());
    for nodes in grid.cells() {
        let ul = gather(u_full, &nodes);
        let pl = gather(p_full, &nodes);
        for c in 0..4 {
            let mut acc = 0.0;
            for a in 0..4 {
                for b in 0..4 {
                    let tv = match form {
                        WeightedForm::Reaction => t.mass[a][b][c] * h * h,
                        WeightedForm::Diffusion => t.grad[a][b][c],
                    };
                    acc += tv * ul[a] * pl[b];
                }
            }
            out[nodes[c]] += acc;
        }
    }
    out
}
