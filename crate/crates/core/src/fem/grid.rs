use crate::error::{Error, Result};

/// Uniform quadrilateral grid on the unit square with `n` cells per side.
///
/// Nodes are numbered lexicographically, `x` fastest. Interior ("free") nodes
/// carry the Dirichlet-constrained state dofs and get their own lexicographic
/// numbering over the `(n-1)^2` interior lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StructuredGrid {
    n: usize,
}

impl StructuredGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 cells per side, got {n}"
            )));
        }
        Ok(Self { n })
    }

    pub fn n_cells_per_side(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn nodes_per_side(&self) -> usize {
        self.n + 1
    }

    pub fn n_nodes(&self) -> usize {
        (self.n + 1) * (self.n + 1)
    }

    pub fn n_free(&self) -> usize {
        (self.n - 1) * (self.n - 1)
    }

    pub fn n_cells(&self) -> usize {
        self.n * self.n
    }

    pub fn node_index(&self, ix: usize, iy: usize) -> usize {
        iy * (self.n + 1) + ix
    }

    pub fn node_lattice(&self, node: usize) -> (usize, usize) {
        (node % (self.n + 1), node / (self.n + 1))
    }

    /// Coordinates as `ix/n`, so that `n * h == 1` holds exactly at the corners.
    pub fn coords(&self, node: usize) -> (f64, f64) {
        let (ix, iy) = self.node_lattice(node);
        (ix as f64 / self.n as f64, iy as f64 / self.n as f64)
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        let (ix, iy) = self.node_lattice(node);
        ix == 0 || iy == 0 || ix == self.n || iy == self.n
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&i| self.is_boundary(i)).collect()
    }

    /// Free-dof index of a node, `None` on the boundary.
    pub fn free_index(&self, node: usize) -> Option<usize> {
        let (ix, iy) = self.node_lattice(node);
        if ix == 0 || iy == 0 || ix == self.n || iy == self.n {
            None
        } else {
            Some((iy - 1) * (self.n - 1) + (ix - 1))
        }
    }

    pub fn free_to_node(&self, free: usize) -> usize {
        let m = self.n - 1;
        self.node_index(free % m + 1, free / m + 1)
    }

    /// The four nodes of cell `(cx, cy)` in local order
    /// `(0,0), (1,0), (0,1), (1,1)`.
    pub fn cell_nodes(&self, cx: usize, cy: usize) -> [usize; 4] {
        let base = self.node_index(cx, cy);
        let row = self.n + 1;
        [base, base + 1, base + row, base + row + 1]
    }

    pub fn cells(&self) -> impl Iterator<Item = [usize; 4]> + '_ {
        (0..self.n).flat_map(move |cy| (0..self.n).map(move |cx| self.cell_nodes(cx, cy)))
    }

    /// Expand free-dof values to all nodes, zero on the boundary.
    pub fn extend_by_zero(&self, free_values: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_nodes()];
        for (f, &v) in free_values.iter().enumerate() {
            full[self.free_to_node(f)] = v;
        }
        full
    }

    /// Restrict all-node values to the free dofs.
    pub fn restrict_to_free(&self, full: &[f64]) -> Vec<f64> {
        (0..self.n_free()).map(|f| full[self.free_to_node(f)]).collect()
    }

    /// Evaluate `f` at every node.
    pub fn interpolate_fn(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        (0..self.n_nodes())
            .map(|i| {
                let (x, y) = self.coords(i);
                f(x, y)
            })
            .collect()
    }
}
