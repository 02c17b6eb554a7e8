//! Three-scale periodic homogenization of a reaction-diffusion equation with a
//! large reaction term in a fractured porous medium: cell problems, effective
//! coefficients, the limit problem and direct fine-scale simulation.

pub mod cellgeo;
pub mod coefficients;
pub mod discretize;
pub mod dns;
pub mod error;
pub mod macrosolve;
pub mod mesocell;
pub mod microcell;
pub mod pipeline;
pub mod reaction;
pub mod tensor;
pub mod upscale;

pub use cellgeo::{build_cell_geometry, perforated_indicator, CellGeometry, GeometrySpec, Raster, ShapeSpec};
pub use coefficients::{CoefficientData, DensityPreset, DiffusionPreset};
pub use discretize::{FieldOnGrid, SparseSystem, StructuredGrid};
pub use dns::{compare_to_macro, corrector_error, msconv_probe, solve_dns, CorrectorSet, DnsProblem, DnsSolution, ErrorReport};
pub use error::{Error, Result};
pub use macrosolve::{solve_macro, MacroProblem, MacroSolution};
pub use mesocell::{MesoCorrectorOmega, MesoCorrectorTheta, MesoOptions, MesoSetup};
pub use microcell::{PoreTensorTable, PoreTensors};
pub use pipeline::{homogenize, HomogenizeOptions, Homogenization};
pub use reaction::{ReactionSpec, ReactionTerm, SpatialProfile, StateFunction, VectorPotential};
pub use tensor::SmallMat;
pub use upscale::{EffectiveModel, LValues};
