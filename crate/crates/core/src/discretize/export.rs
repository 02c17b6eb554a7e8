use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;

use super::grid::StructuredGrid;

/// CSV with one row per grid node in x-fastest order: coordinates followed by
/// one column per named field. Fields hold full nodal values.
pub fn nodes_to_csv(grid: &StructuredGrid, fields: &[(&str, &[f64])]) -> String {
    let axes = ["x", "y", "z"];
    let mut out = String::new();
    let mut header: Vec<&str> = axes[..grid.dim()].to_vec();
    header.extend(fields.iter().map(|f| f.0));
    out.push_str(&header.join(","));
    out.push('\n');
    for n in 0..grid.n_nodes() {
        let x = grid.node_coords(n);
        let mut row: Vec<String> = x[..grid.dim()].iter().map(|v| format!("{v}")).collect();
        row.extend(fields.iter().map(|f| format!("{}", f.1[n])));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Legacy VTK structured-points text file with point scalars.
pub fn nodes_to_vtk(grid: &StructuredGrid, title: &str, fields: &[(&str, &[f64])]) -> String {
    let nc = grid.node_counts();
    let dims = [nc[0], nc[1], if grid.dim() == 3 { nc[2] } else { 1 }];
    let h = grid.spacings();
    let mut out = String::new();
    let _ = writeln!(out, "# vtk DataFile Version 3.0");
    let _ = writeln!(out, "{}", title.replace('\n', " "));
    let _ = writeln!(out, "ASCII");
    let _ = writeln!(out, "DATASET STRUCTURED_POINTS");
    let _ = writeln!(out, "DIMENSIONS {} {} {}", dims[0], dims[1], dims[2]);
    let _ = writeln!(out, "ORIGIN 0 0 0");
    let hz = if grid.dim() == 3 { h[2] } else { 1.0 };
    let _ = writeln!(out, "SPACING {} {} {}", h[0], h[1], hz);
    let _ = writeln!(out, "POINT_DATA {}", grid.n_nodes());
    for (name, values) in fields {
        let _ = writeln!(out, "SCALARS {name} double 1");
        let _ = writeln!(out, "LOOKUP_TABLE default");
        for v in values.iter() {
            let _ = writeln!(out, "{v}");
        }
    }
    out
}

pub fn write_csv(path: &Path, grid: &StructuredGrid, fields: &[(&str, &[f64])]) -> Result<()> {
    std::fs::write(path, nodes_to_csv(grid, fields))?;
    Ok(())
}

pub fn write_vtk(
    path: &Path,
    grid: &StructuredGrid,
    title: &str,
    fields: &[(&str, &[f64])],
) -> Result<()> {
    std::fs::write(path, nodes_to_vtk(grid, title, fields))?;
    Ok(())
}
