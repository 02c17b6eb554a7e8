//! The full upscaling chain: pore tensors, meso correctors, effective model.

use serde::{Deserialize, Serialize};

use crate::cellgeo::CellGeometry;
use crate::coefficients::CoefficientData;
use crate::error::Result;
use crate::mesocell::{solve_omega, solve_theta, MesoCorrectorOmega, MesoCorrectorTheta, MesoOptions, MesoSetup};
use crate::microcell::{tabulate_pore_tensors, PoreTensorTable};
use crate::reaction::{build_potential, ReactionTerm, VectorPotential};
use crate::upscale::{build_effective_model, r_grid, EffectiveModel, DEFAULT_R_NODES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogenizeOptions {
    /// Time levels per fast period.
    pub n_tau: usize,
    /// State grid `[-r_range, r_range]`.
    pub r_range: f64,
    pub r_nodes: usize,
    pub meso: MesoOptions,
}

impl Default for HomogenizeOptions {
    fn default() -> Self {
        Self {
            n_tau: 32,
            r_range: 2.0,
            r_nodes: DEFAULT_R_NODES,
            meso: MesoOptions::default(),
        }
    }
}

/// Every intermediate of the chain, kept for diagnostics and correctors.
#[derive(Debug)]
pub struct Homogenization {
    pub table: PoreTensorTable,
    pub setup: MesoSetup,
    pub theta: MesoCorrectorTheta,
    pub omega: MesoCorrectorOmega,
    pub potential: VectorPotential,
    pub r_grid: Vec<f64>,
    pub model: EffectiveModel,
}

pub fn homogenize(
    geom: &CellGeometry,
    coeffs: &CoefficientData,
    g: &ReactionTerm,
    opts: &HomogenizeOptions,
) -> Result<Homogenization> {
    coeffs.validate(geom.dim)?;
    let table = tabulate_pore_tensors(coeffs, geom, opts.n_tau)?;
    let setup = MesoSetup::new(&table, &coeffs.density, geom)?;
    let theta = solve_theta(&setup, &opts.meso)?;
    let r_grid = r_grid(opts.r_range, opts.r_nodes);
    let omega = solve_omega(&setup, g, &r_grid, &opts.meso)?;
    let potential = build_potential(g, geom.dim, geom.matrix.n, opts.n_tau, &r_grid)?;
    let model = build_effective_model(&setup, &table, &theta, &omega, &potential, &r_grid)?;
    Ok(Homogenization {
        table,
        setup,
        theta,
        omega,
        potential,
        r_grid,
        model,
    })
}
