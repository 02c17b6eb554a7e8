//! Structured grids, Q1 assembly, quadrature and sparse solvers.

pub mod assembly;
pub mod export;
pub mod field;
pub mod grid;
pub mod quadrature;
pub mod solver;
pub mod sparse;

pub use assembly::{assemble_stiffness, flux_divergence_load, gradient_load, Assembler, RefElement};
pub use field::FieldOnGrid;
pub use grid::StructuredGrid;
pub use quadrature::{integrate, integrate_cells, integrate_product};
pub use solver::{pcg, solve_spd, LinearOperator, RankOne, SolveReport, SparseSystem, Stabilized};
pub use sparse::{dot, norm2, CsrMatrix};
