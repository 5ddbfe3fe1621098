use std::path::Path;

use super::grid::StructuredGrid;
use crate::error::{check_len, Error, Result};

/// Write an all-node field as `x,y,value` rows in lexicographic node order.
pub fn write_grid_field(path: &Path, grid: &StructuredGrid, values: &[f64]) -> Result<()> {
    check_len(grid.n_nodes(), values.len())?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "value"])?;
    for (i, v) in values.iter().enumerate() {
        let (x, y) = grid.coords(i);
        w.write_record([fmt17(x), fmt17(y), fmt17(*v)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a field written by [`write_grid_field`]; returns the inferred grid.
pub fn read_grid_field(path: &Path) -> Result<(StructuredGrid, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let v: f64 = rec
            .get(2)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Config(format!("bad value row in {}", path.display())))?;
        values.push(v);
    }
    let side = (values.len() as f64).sqrt().round() as usize;
    if side * side != values.len() || side < 3 {
        return Err(Error::InvalidGrid(format!(
            "{} rows do not form a square grid",
            values.len()
        )));
    }
    Ok((StructuredGrid::new(side - 1)?, values))
}

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let g = StructuredGrid::new(3).unwrap();
        let vals: Vec<f64> = (0..g.n_nodes()).map(|i| (i as f64).sqrt() / 3.0 + 1e-17).collect();
        let path = dir.path().join("f.csv");
        write_grid_field(&path, &g, &vals).unwrap();
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("x,y,value\n"));
        let (g2, back) = read_grid_field(&path).unwrap();
        assert_eq!(g2, g);
        assert_eq!(back, vals);
    }
}
