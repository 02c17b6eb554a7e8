use super::grid::StructuredGrid;

/// Trapezoidal integral of a dof field against a cell weight,
/// `Σ_cells w(cell) |cell| mean_of_corner_values`. Exact for multilinear
/// integrands with constant weight on each cell.
pub fn integrate(grid: &StructuredGrid, dofs: &[f64], weight: impl Fn(usize) -> f64) -> f64 {
    let w = grid.lumped_weights(weight);
    w.iter().zip(dofs).map(|(a, b)| a * b).sum()
}

/// Trapezoidal integral of the pointwise product of two dof fields.
pub fn integrate_product(
    grid: &StructuredGrid,
    a: &[f64],
    b: &[f64],
    weight: impl Fn(usize) -> f64,
) -> f64 {
    let w = grid.lumped_weights(weight);
    w.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum()
}

/// Midpoint rule over active cells for a cell-centered integrand.
pub fn integrate_cells(grid: &StructuredGrid, f: impl Fn(usize) -> f64) -> f64 {
    let vol = grid.cell_volume();
    (0..grid.n_cells())
        .filter(|&c| grid.is_active(c))
        .map(|c| f(c) * vol)
        .sum()
}

/// Measure of the active region.
pub fn active_measure(grid: &StructuredGrid) -> f64 {
    grid.n_active_cells() as f64 * grid.cell_volume()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cellgeo::{build_cell_geometry, GeometrySpec, ShapeSpec};

    #[test]
    fn constant_over_unit_cell() {
        let g = StructuredGrid::periodic_unit(2, 10, None).unwrap();
        let one = vec![1.0; g.n_dofs()];
        assert!((integrate(&g, &one, |_| 1.0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn constant_over_masked_cell_is_the_solid_measure() {
        let geom = build_cell_geometry(&GeometrySpec {
            dim: 2,
            fractures: vec![],
            pores: vec![ShapeSpec::centered_box(2, 0.5)],
            n_y: 8,
            n_z: 16,
            trivial_medium: false,
        })
        .unwrap();
        let g = StructuredGrid::periodic_unit(2, 16, Some(&geom.solid)).unwrap();
        let one = vec![1.0; g.n_dofs()];
        assert!((integrate(&g, &one, |_| 1.0) - 0.75).abs() < 1e-14);
        assert!((active_measure(&g) - 0.75).abs() < 1e-14);
    }

    #[test]
    fn sine_mode_integrates_to_zero() {
        for n in [8, 16, 30] {
            let g = StructuredGrid::periodic_unit(2, n, None).unwrap();
            let f: Vec<f64> = (0..g.n_dofs())
                .map(|d| (2.0 * std::f64::consts::PI * g.node_coords(g.node_of(d))[0]).sin())
                .collect();
            assert!(integrate(&g, &f, |_| 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_for_bilinear_integrand() {
        let g = StructuredGrid::new(&[3, 5], &[1.0, 2.0], &[false, false], false, None).unwrap();
        let f: Vec<f64> = (0..g.n_dofs())
            .map(|d| {
                let x = g.node_coords(g.node_of(d));
                1.0 + x[0] + 2.0 * x[1] + x[0] * x[1]
            })
            .collect();
        // ∫_0^1∫_0^2 (1 + x + 2y + xy) dy dx = 2 + 1 + 4 + 1
        assert!((integrate(&g, &f, |_| 1.0) - 8.0).abs() < 1e-12);
    }
}
