//! Shared fixtures for the benchmarks.

use triscale_core::cellgeo::{build_cell_geometry, GeometrySpec, ShapeSpec};
use triscale_core::coefficients::{CoefficientData, DensityPreset, DiffusionPreset};
use triscale_core::CellGeometry;

/// Square fracture and square pore.
pub fn box_cells(n_y: usize, n_z: usize) -> CellGeometry {
    build_cell_geometry(&GeometrySpec {
        dim: 2,
        fractures: vec![ShapeSpec::centered_box(2, 0.25)],
        pores: vec![ShapeSpec::centered_box(2, 0.5)],
        n_y,
        n_z,
        trivial_medium: false,
    })
    .expect("valid cells")
}

pub fn oscillating_coefficients() -> CoefficientData {
    CoefficientData {
        diffusion: DiffusionPreset::Trigonometric {
            base: 1.0,
            amplitude: 0.5,
            time_amplitude: 0.5,
            anisotropy: None,
        },
        density: DensityPreset::default(),
    }
}
