use super::grid::StructuredGrid;
use crate::error::{check_len, Error, Result};

/// Nodal restriction of an all-node field from a nested fine grid.
pub fn interpolate(fine: &StructuredGrid, values: &[f64], coarse: &StructuredGrid) -> Result<Vec<f64>> {
    check_len(fine.n_nodes(), values.len())?;
    let nf = fine.n_cells_per_side();
    let nc = coarse.n_cells_per_side();
    if !nf.is_multiple_of(nc) {
        return Err(Error::NonNestedGrids { fine: nf, coarse: nc });
    }
    let ratio = nf / nc;
    Ok((0..coarse.n_nodes())
        .map(|i| {
            let (ix, iy) = coarse.node_lattice(i);
            values[fine.node_index(ix * ratio, iy * ratio)]
        })
        .collect())
}

/// Nodal restriction of a free-dof (zero-trace) field.
pub fn interpolate_free(fine: &StructuredGrid, values: &[f64], coarse: &StructuredGrid) -> Result<Vec<f64>> {
    check_len(fine.n_free(), values.len())?;
    let full = fine.extend_by_zero(values);
    Ok(coarse.restrict_to_free(&interpolate(fine, &full, coarse)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let f = StructuredGrid::new(8).unwrap();
        let c = StructuredGrid::new(4).unwrap();
        let v = interpolate(&f, &vec![2.5; f.n_nodes()], &c).unwrap();
        assert!(v.iter().all(|&x| x == 2.5));
    }

    #[test]
    fn picks_every_second_node() {
        let f = StructuredGrid::new(4).unwrap();
        let c = StructuredGrid::new(2).unwrap();
        let v: Vec<f64> = (0..f.n_nodes()).map(|i| i as f64).collect();
        let r = interpolate(&f, &v, &c).unwrap();
        assert_eq!(r, vec![0.0, 2.0, 4.0, 10.0, 12.0, 14.0, 20.0, 22.0, 24.0]);
    }

    #[test]
    fn reproduces_bilinear_fields() {
        let f = StructuredGrid::new(12).unwrap();
        let c = StructuredGrid::new(3).unwrap();
        let bil = |x: f64, y: f64| 1.0 + 2.0 * x - 0.5 * y + 3.0 * x * y;
        let r = interpolate(&f, &f.interpolate_fn(bil), &c).unwrap();
        for (i, v) in r.iter().enumerate() {
            let (x, y) = c.coords(i);
            assert!((v - bil(x, y)).abs() < 1e-14);
        }
    }

    #[test]
    fn non_nested_is_rejected() {
        let f = StructuredGrid::new(5).unwrap();
        let c = StructuredGrid::new(2).unwrap();
        assert!(matches!(
            interpolate(&f, &vec![0.0; f.n_nodes()], &c),
            Err(Error::NonNestedGrids { .. })
        ));
    }
}
