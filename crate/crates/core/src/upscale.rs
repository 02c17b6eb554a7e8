use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesocell::{MesoCorrectorOmega, MesoCorrectorTheta, MesoSetup};
use crate::microcell::PoreTensorTable;
use crate::reaction::{dr_potential, VectorPotential};
use crate::tensor::SmallMat;

/// Relative asymmetry of `Â` accepted before symmetrization.
pub const AHAT_ASYMMETRY_TOL: f64 = 1e-6;

/// Default number of nodes of the state grid.
pub const DEFAULT_R_NODES: usize = 33;

/// Uniform state grid over `[-range, range]`.
pub fn r_grid(range: f64, nodes: usize) -> Vec<f64> {
    let nodes = nodes.max(2);
    (0..nodes)
        .map(|i| -range + 2.0 * range * i as f64 / (nodes - 1) as f64)
        .collect()
}

/// Coefficients of the limit problem
/// `|Z_s| ρ̄ ∂_t u = div(Â∇u) + div L₁(u) − L₂(u)·∇u − L₃(u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveModel {
    pub dim: usize,
    /// `Â`, row-major.
    pub a_hat: Vec<f64>,
    pub r_grid: Vec<f64>,
    /// `L₁(r_k)` per grid node.
    pub l1: Vec<Vec<f64>>,
    /// `L₂(r_k)` per grid node.
    pub l2: Vec<Vec<f64>>,
    /// `L₃(r_k)` per grid node.
    pub l3: Vec<f64>,
    pub zs_measure: f64,
    /// `∫_{Y_m} ρ`.
    pub rho_bar: f64,
    /// Coefficients do not depend on `(x, t)`.
    pub xt_independent: bool,
    pub interpolation: String,
    /// Asymmetry of `Â` before symmetrization, relative to its largest entry.
    pub a_hat_asymmetry: f64,
    /// Largest divided differences of `L₁`, `L₂`, `L₃` on the grid.
    pub lipschitz: [f64; 3],
}

/// `(L₁(r), L₂(r), L₃(r))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LValues {
    pub l1: [f64; 3],
    pub l2: [f64; 3],
    pub l3: f64,
}

impl EffectiveModel {
    /// Model with `Â` and zero `L`-tables over the given state grid.
    pub fn diffusion_only(a_hat: SmallMat, zs_measure: f64, rho_bar: f64, r_grid: Vec<f64>) -> Self {
        let dim = a_hat.dim;
        let n = r_grid.len();
        Self {
            dim,
            a_hat: a_hat.row_major(),
            r_grid,
            l1: vec![vec![0.0; dim]; n],
            l2: vec![vec![0.0; dim]; n],
            l3: vec![0.0; n],
            zs_measure,
            rho_bar,
            xt_independent: true,
            interpolation: "piecewise_linear".into(),
            a_hat_asymmetry: 0.0,
            lipschitz: [0.0; 3],
        }
    }

    pub fn a_hat(&self) -> SmallMat {
        SmallMat::from_row_major(&self.a_hat)
    }

    /// `|Z_s| ρ̄`, the capacity of the limit equation.
    pub fn capacity(&self) -> f64 {
        self.zs_measure * self.rho_bar
    }

    pub fn has_reaction_terms(&self) -> bool {
        self.l1.iter().chain(&self.l2).flatten().any(|v| *v != 0.0) || self.l3.iter().any(|v| *v != 0.0)
    }

    /// Recomputes the divided-difference constants of the tables.
    pub fn update_lipschitz(&mut self) {
        let mut lip = [0.0f64; 3];
        for i in 1..self.r_grid.len() {
            let h = self.r_grid[i] - self.r_grid[i - 1];
            let d1 = vec_diff(&self.l1[i], &self.l1[i - 1]) / h;
            let d2 = vec_diff(&self.l2[i], &self.l2[i - 1]) / h;
            let d3 = (self.l3[i] - self.l3[i - 1]).abs() / h;
            lip[0] = lip[0].max(d1);
            lip[1] = lip[1].max(d2);
            lip[2] = lip[2].max(d3);
        }
        self.lipschitz = lip;
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.r_grid.len();
        if self.a_hat.len() != self.dim * self.dim
            || self.l1.len() != n
            || self.l2.len() != n
            || self.l3.len() != n
            || n < 2
            || self.l1.iter().chain(&self.l2).any(|v| v.len() != self.dim)
        {
            return Err(Error::InvalidInput("effective model tables are inconsistent".into()));
        }
        if self.r_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("state grid must be strictly increasing".into()));
        }
        let a = self.a_hat();
        if a.asymmetry() > 1e-8 * a.max_abs() || !a.is_spd(1e-12) {
            return Err(Error::EffectiveNotSpd {
                min_eigenvalue: a.symmetrized().min_eigenvalue_sym(),
            });
        }
        if !(self.zs_measure > 0.0 && self.rho_bar > 0.0) {
            return Err(Error::InvalidInput("capacity must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn vec_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Piecewise-linear evaluation of the `L`-tables, clamped (with a warning)
/// outside the grid. Exact at grid nodes.
pub fn eval_effective(model: &EffectiveModel, r: f64) -> LValues {
    let (v, clamped) = eval_clamped(model, r);
    if clamped {
        warn!(
            "state value {r} outside [{}, {}]; clamping",
            model.r_grid[0],
            model.r_grid[model.r_grid.len() - 1]
        );
    }
    v
}

/// Like [`eval_effective`] but reports clamping instead of logging it.
pub fn eval_clamped(model: &EffectiveModel, r: f64) -> (LValues, bool) {
    let g = &model.r_grid;
    let (lo, hi) = (g[0], g[g.len() - 1]);
    let clamped = r < lo || r > hi;
    let rc = r.clamp(lo, hi);
    let i = g.partition_point(|v| *v <= rc).clamp(1, g.len() - 1) - 1;
    let t = ((rc - g[i]) / (g[i + 1] - g[i])).clamp(0.0, 1.0);
    let mut out = LValues {
        l1: [0.0; 3],
        l2: [0.0; 3],
        l3: (1.0 - t) * model.l3[i] + t * model.l3[i + 1],
    };
    for k in 0..model.dim {
        out.l1[k] = (1.0 - t) * model.l1[i][k] + t * model.l1[i + 1][k];
        out.l2[k] = (1.0 - t) * model.l2[i][k] + t * model.l2[i + 1][k];
    }
    (out, clamped)
}

/// `(I + ∇θ)` at level `n` and cell, with `(∇θ)_{ki} = ∂_k θ_i`.
fn grad_theta(setup: &MesoSetup, theta: &MesoCorrectorTheta, n: usize, cell: usize) -> SmallMat {
    let dim = setup.grid.dim();
    let mut j = SmallMat::identity(dim);
    for (i, f) in theta.fields.iter().enumerate() {
        let g = setup.gradient(f, n, cell);
        for k in 0..dim {
            j.m[k][i] += g[k];
        }
    }
    j
}

/// `Â = ∬_{Y_m×T} Ã(I + ∇θ)`, symmetrized after the asymmetry check.
/// Returns `Â` and its relative asymmetry.
pub fn assemble_a_hat(
    setup: &MesoSetup,
    table: &PoreTensorTable,
    theta: &MesoCorrectorTheta,
) -> Result<(SmallMat, f64)> {
    let dim = setup.grid.dim();
    let w = setup.grid.cell_volume() * setup.dtau();
    let mut a = SmallMat::zeros(dim);
    for n in 0..setup.n_tau {
        for c in 0..setup.grid.n_cells() {
            if !setup.grid.is_active(c) {
                continue;
            }
            let m = table.get(n, c).a_tilde.mul(&grad_theta(setup, theta, n, c));
            a = a.add(&m.scale(w));
        }
    }
    let asymmetry = a.asymmetry() / a.max_abs();
    if asymmetry > AHAT_ASYMMETRY_TOL {
        return Err(Error::Asymmetric {
            asymmetry,
            tolerance: AHAT_ASYMMETRY_TOL,
        });
    }
    let a = a.symmetrized();
    let min_eigenvalue = a.min_eigenvalue_sym();
    if !(min_eigenvalue > 0.0) {
        return Err(Error::EffectiveNotSpd { min_eigenvalue });
    }
    Ok((a, asymmetry))
}

/// Evaluates `L₁`, `L₂`, `L₃` on the state grid:
/// `L₁ = ∬ Ã ∇ω₁`, `L₂ = ∬ [|Z_s| ∂_rG + ∂_rG·B̃(I+∇θ)]`,
/// `L₃ = ∬ ∂_rG·B̃(I+∇θ)∇ω₁`, all over `Y_m × T`. The row vector
/// `∂_rG` multiplies `B̃(I+∇θ)` from the left.
pub fn assemble_l_tables(
    setup: &MesoSetup,
    table: &PoreTensorTable,
    theta: &MesoCorrectorTheta,
    omega: &MesoCorrectorOmega,
    potential: &VectorPotential,
    r_grid: &[f64],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>)> {
    let dim = setup.grid.dim();
    let n_cells = setup.grid.n_cells();
    let n_tau = setup.n_tau;
    if potential.grid.n_cells() != n_cells || potential.n_tau != n_tau {
        return Err(Error::GridMismatch(format!(
            "potential grid {} cells × {} levels vs meso grid {} cells × {} levels",
            potential.grid.n_cells(),
            potential.n_tau,
            n_cells,
            n_tau
        )));
    }
    let zero = (
        vec![vec![0.0; dim]; r_grid.len()],
        vec![vec![0.0; dim]; r_grid.len()],
        vec![0.0; r_grid.len()],
    );
    if potential.is_zero() && matches!(omega, MesoCorrectorOmega::Zero) {
        return Ok(zero);
    }
    let w = setup.grid.cell_volume() * setup.dtau();
    // B̃(I + ∇θ) per level and cell.
    let bj: Vec<SmallMat> = (0..n_tau * n_cells)
        .into_par_iter()
        .map(|idx| {
            let (n, c) = (idx / n_cells, idx % n_cells);
            if setup.grid.is_active(c) {
                table.get(n, c).b_tilde.mul(&grad_theta(setup, theta, n, c))
            } else {
                SmallMat::zeros(dim)
            }
        })
        .collect();

    let rows: Vec<([f64; 3], [f64; 3], f64)> = r_grid
        .par_iter()
        .map(|&r| {
            let om = omega.at(setup, r)?;
            let mut l1 = [0.0; 3];
            let mut l2 = [0.0; 3];
            let mut l3 = 0.0;
            for n in 0..n_tau {
                let dg = dr_potential(potential, n, r)?;
                for c in 0..n_cells {
                    if !setup.grid.is_active(c) {
                        continue;
                    }
                    let gw = setup.gradient(&om, n, c);
                    let a = &table.get(n, c).a_tilde;
                    let aw = a.mul_vec(&gw);
                    let m = &bj[n * n_cells + c];
                    let gm = m.left_mul_vec(&dg[c]);
                    let mw = m.mul_vec(&gw);
                    for k in 0..dim {
                        l1[k] += w * aw[k];
                        l2[k] += w * (setup.zs_measure * dg[c][k] + gm[k]);
                        l3 += w * dg[c][k] * mw[k];
                    }
                }
            }
            Ok((l1, l2, l3))
        })
        .collect::<Result<_>>()?;
    let mut out = zero;
    for (i, (a, b, c)) in rows.into_iter().enumerate() {
        out.0[i] = a[..dim].to_vec();
        out.1[i] = b[..dim].to_vec();
        out.2[i] = c;
    }
    Ok(out)
}

/// Full effective model from converged correctors.
pub fn build_effective_model(
    setup: &MesoSetup,
    table: &PoreTensorTable,
    theta: &MesoCorrectorTheta,
    omega: &MesoCorrectorOmega,
    potential: &VectorPotential,
    r_grid: &[f64],
) -> Result<EffectiveModel> {
    let (a_hat, asym) = assemble_a_hat(setup, table, theta)?;
    let (l1, l2, l3) = assemble_l_tables(setup, table, theta, omega, potential, r_grid)?;
    let mut model = EffectiveModel {
        dim: setup.grid.dim(),
        a_hat: a_hat.row_major(),
        r_grid: r_grid.to_vec(),
        l1,
        l2,
        l3,
        zs_measure: setup.zs_measure,
        rho_bar: setup.rho_bar,
        xt_independent: true,
        interpolation: "piecewise_linear".into(),
        a_hat_asymmetry: asym,
        lipschitz: [0.0; 3],
    };
    model.update_lipschitz();
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_is_exact_at_nodes_and_clamps() {
        let mut m = EffectiveModel::diffusion_only(SmallMat::identity(2), 1.0, 1.0, r_grid(1.0, 5));
        for (i, r) in m.r_grid.clone().iter().enumerate() {
            m.l1[i] = vec![*r, 2.0 * r];
            m.l3[i] = r * r;
        }
        m.update_lipschitz();
        let v = eval_effective(&m, 0.5);
        assert_eq!(v.l1[1], 1.0);
        assert_eq!(v.l3, 0.25);
        let mid = eval_effective(&m, 0.25);
        assert!((mid.l3 - 0.125).abs() < 1e-15);
        let out = eval_effective(&m, 3.0);
        assert_eq!(out.l1[0], 1.0);
        assert!((m.lipschitz[0] - 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut m = EffectiveModel::diffusion_only(
            SmallMat::from_row_major(&[1.0 / 3.0, 0.1, 0.1, 2.0f64.sqrt()]),
            0.75,
            0.9,
            r_grid(2.0, 33),
        );
        m.l3[3] = std::f64::consts::PI * 1e-7;
        let back = EffectiveModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
