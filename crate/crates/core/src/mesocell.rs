use std::sync::Arc;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cellgeo::CellGeometry;
use crate::coefficients::DensityPreset;
use crate::discretize::{
    dot, gradient_load, norm2, pcg, Assembler, CsrMatrix, RankOne, RefElement, SparseSystem,
    Stabilized, StructuredGrid,
};
use crate::error::{Error, Result};
use crate::microcell::PoreTensorTable;
use crate::reaction::ReactionTerm;
use crate::tensor::SmallMat;

/// Threshold on `|∬_{Y_m×T} g|` above which a compatibility warning is logged.
pub const COMPATIBILITY_WARN: f64 = 1e-6;

/// Period-iteration controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MesoOptions {
    /// Bound on `‖u(·,1) − u(·,0)‖_{L²(Y_m)}`.
    pub tol_period: f64,
    pub max_periods: usize,
    /// Relative residual of each implicit step.
    pub step_tol: f64,
    /// Start from zero instead of the steady solution of the `τ`-averaged problem.
    pub zero_initial_guess: bool,
}

impl Default for MesoOptions {
    fn default() -> Self {
        Self {
            tol_period: 1e-10,
            max_periods: 200,
            step_tol: 1e-12,
            zero_initial_guess: false,
        }
    }
}

/// Convergence record of one time-periodic solve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PeriodReport {
    pub periods: usize,
    pub defect: f64,
    /// Ratio of the last two period defects.
    pub contraction: f64,
    /// Largest `|∫_{Y_m} ρ u|` over all steps after normalization.
    pub max_weighted_mean: f64,
    /// Mass removed from the sources by the weighted-mean projection
    /// (`∬_{Y_m×T}` of the source).
    pub projected_mass: f64,
}

/// A `τ`-periodic field: `levels[n]` holds the dofs at `τ = n / n_tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicField {
    pub levels: Vec<Vec<f64>>,
    pub report: PeriodReport,
}

impl PeriodicField {
    pub fn zeros(n_tau: usize, n_dofs: usize) -> Self {
        Self {
            levels: vec![vec![0.0; n_dofs]; n_tau],
            report: PeriodReport::default(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            levels: self
                .levels
                .iter()
                .map(|l| l.iter().map(|v| s * v).collect())
                .collect(),
            report: self.report,
        }
    }
}

/// Discretized meso cell: the `Y_m`-masked periodic grid, the lumped
/// `ρ`-mass and the per-level operators `(1/|Z_s|) ∫ Ã ∇u·∇v`.
#[derive(Debug, Clone)]
pub struct MesoSetup {
    pub grid: Arc<StructuredGrid>,
    pub element: RefElement,
    pub n_tau: usize,
    pub zs_measure: f64,
    /// `ρ` at cell centers.
    pub rho_cells: Vec<f64>,
    /// Lumped `ρ`-weights per dof.
    pub mass: Vec<f64>,
    /// `∫_{Y_m} ρ`.
    pub rho_bar: f64,
    /// Scaled stiffness per level (levels with identical data share storage).
    pub stiffness: Vec<Arc<CsrMatrix>>,
    /// `Ã / |Z_s|` per level and cell.
    pub coef: Vec<Vec<SmallMat>>,
    /// True when the pore tensors do not depend on `τ`.
    pub stationary: bool,
}

impl MesoSetup {
    pub fn new(table: &PoreTensorTable, density: &DensityPreset, geom: &CellGeometry) -> Result<Self> {
        let dim = geom.dim;
        if table.n_y != geom.matrix.n || table.dim != dim {
            return Err(Error::GridMismatch(format!(
                "pore tensor table is {}^{} but the fracture cell is {}^{}",
                table.n_y, table.dim, geom.matrix.n, dim
            )));
        }
        let grid = StructuredGrid::periodic_unit(dim, geom.matrix.n, Some(&geom.matrix))?;
        if !grid.is_mask_connected() {
            return Err(Error::Disconnected {
                phase: "fracture cell matrix Y_m",
            });
        }
        let grid = Arc::new(grid);
        let n_tau = table.n_tau;
        let inv_zs = 1.0 / table.zs_measure;
        let rho_cells: Vec<f64> = (0..grid.n_cells())
            .map(|c| density.eval(&grid.cell_center(c)[..dim]))
            .collect();
        let mass = grid.lumped_weights(|c| rho_cells[c]);
        let rho_bar = mass.iter().sum();
        let coef: Vec<Vec<SmallMat>> = (0..n_tau)
            .map(|n| {
                (0..grid.n_cells())
                    .map(|c| table.get(n, c).a_tilde.scale(inv_zs))
                    .collect()
            })
            .collect();
        let stationary = coef.iter().all(|lvl| *lvl == coef[0]);
        let asm = Assembler::new(&grid);
        let stiffness: Vec<Arc<CsrMatrix>> = if stationary {
            let k = Arc::new(asm.stiffness(&grid, |c| coef[0][c])?);
            vec![k; n_tau]
        } else {
            (0..n_tau)
                .into_par_iter()
                .map(|n| asm.stiffness(&grid, |c| coef[n][c]).map(Arc::new))
                .collect::<Result<_>>()?
        };
        Ok(Self {
            element: asm.element.clone(),
            grid,
            n_tau,
            zs_measure: table.zs_measure,
            rho_cells,
            mass,
            rho_bar,
            stiffness,
            coef,
            stationary,
        })
    }

    pub fn dtau(&self) -> f64 {
        1.0 / self.n_tau as f64
    }

    pub fn n_dofs(&self) -> usize {
        self.grid.n_dofs()
    }

    /// `Σ_i m_i u_i = ∫_{Y_m} ρ u`.
    pub fn weighted_mean(&self, u: &[f64]) -> f64 {
        dot(&self.mass, u)
    }

    fn normalize(&self, u: &mut [f64]) {
        let shift = self.weighted_mean(u) / self.rho_bar;
        u.iter_mut().for_each(|v| *v -= shift);
    }

    /// Removes the weighted mass of a load: `F − (ΣF / Σm) m`.
    fn project(&self, f: &mut [f64]) -> f64 {
        let total: f64 = f.iter().sum();
        let s = total / self.rho_bar;
        for (fi, mi) in f.iter_mut().zip(&self.mass) {
            *fi -= s * mi;
        }
        total
    }

    /// Load of the `θ_i` problem at level `n`: `−(1/|Z_s|) ∫ Ã e_i·∇φ`.
    pub fn theta_load(&self, i: usize, n: usize) -> Vec<f64> {
        let coef = &self.coef[n];
        gradient_load(&self.grid, &self.element, |c| {
            let m = &coef[c];
            [-m.m[0][i], -m.m[1][i], -m.m[2][i]]
        })
    }

    /// Lumped load `∫ s(cell) φ` of a cell-centered source.
    pub fn source_load(&self, s: impl Fn(usize) -> f64) -> Vec<f64> {
        self.grid.lumped_weights(s)
    }

    /// Solves `ρ ∂_τ u + K(τ) u = F(τ)` for a `τ`-periodic `u` with zero
    /// weighted mean. `loads[n]` is the load at level `n`.
    pub fn solve_periodic(&self, loads: &[Vec<f64>], opts: &MesoOptions) -> Result<PeriodicField> {
        let n_tau = self.n_tau;
        let n = self.n_dofs();
        let mut loads: Vec<Vec<f64>> = loads.to_vec();
        let mut mass_removed = 0.0;
        for f in loads.iter_mut() {
            mass_removed += self.project(f) / n_tau as f64;
        }
        if loads.iter().all(|f| f.iter().all(|v| *v == 0.0)) {
            return Ok(PeriodicField::zeros(n_tau, n));
        }
        let inv_dt = 1.0 / self.dtau();
        let lumped = self.grid.lumped_weights(|_| 1.0);
        let l2 = |a: &[f64], b: &[f64]| -> f64 {
            a.iter()
                .zip(b)
                .zip(&lumped)
                .map(|((x, y), w)| w * (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        };

        let mut start = vec![0.0; n];
        if !opts.zero_initial_guess {
            start = self.steady_guess(&loads, opts.step_tol)?;
        }
        let systems: Vec<Arc<CsrMatrix>> = if self.stationary {
            let mut s = (*self.stiffness[0]).clone();
            s.add_diagonal(&self.mass.iter().map(|m| m * inv_dt).collect::<Vec<_>>());
            vec![Arc::new(s); n_tau]
        } else {
            self.stiffness
                .par_iter()
                .map(|k| {
                    let mut s = (**k).clone();
                    s.add_diagonal(&self.mass.iter().map(|m| m * inv_dt).collect::<Vec<_>>());
                    Arc::new(s)
                })
                .collect()
        };

        let mut levels = vec![vec![0.0; n]; n_tau];
        let mut prev_defect = f64::NAN;
        let mut contraction = 0.0;
        let mut max_mean = 0.0f64;
        for period in 1..=opts.max_periods {
            let mut u = start.clone();
            let mut period_mean = 0.0f64;
            // Steps to levels 1..n_tau; level n_tau is stored as level 0.
            for step in 1..=n_tau {
                let lvl = step % n_tau;
                let rhs: Vec<f64> = (0..n)
                    .map(|i| self.mass[i] * inv_dt * u[i] + loads[lvl][i])
                    .collect();
                let mut next = u.clone();
                pcg(&*systems[lvl], &rhs, &mut next, opts.step_tol, crate::discretize::solver::default_max_iter(n))?;
                self.normalize(&mut next);
                period_mean = period_mean.max(self.weighted_mean(&next).abs());
                levels[lvl].copy_from_slice(&next);
                u = next;
            }
            let defect = l2(&u, &start);
            if period > 1 && prev_defect > 0.0 {
                contraction = defect / prev_defect;
            }
            prev_defect = defect;
            max_mean = period_mean;
            debug!("period {period}: defect {defect:e}");
            if defect <= opts.tol_period {
                return Ok(PeriodicField {
                    levels,
                    report: PeriodReport {
                        periods: period,
                        defect,
                        contraction,
                        max_weighted_mean: max_mean,
                        projected_mass: mass_removed,
                    },
                });
            }
            start = u;
        }
        let _ = max_mean;
        Err(Error::PeriodNonConvergence {
            periods: opts.max_periods,
            defect: prev_defect,
            contraction,
        })
    }

    /// Steady solution of the `τ`-averaged problem, used as the first guess.
    fn steady_guess(&self, loads: &[Vec<f64>], tol: f64) -> Result<Vec<f64>> {
        let n_tau = self.n_tau as f64;
        let n = self.n_dofs();
        let mut f = vec![0.0; n];
        for l in loads {
            for (a, b) in f.iter_mut().zip(l) {
                *a += b / n_tau;
            }
        }
        let k = if self.stationary {
            (*self.stiffness[0]).clone()
        } else {
            let mut vals = vec![0.0; self.stiffness[0].nnz()];
            for k in &self.stiffness {
                for (a, b) in vals.iter_mut().zip(&k.values) {
                    *a += b / n_tau;
                }
            }
            self.stiffness[0].with_values(vals)
        };
        let term = RankOne::mean_constraint(&k, &self.mass);
        let system = SparseSystem {
            matrix: k,
            rhs: f,
            stabilization: Some(term),
        };
        let mut u = vec![0.0; n];
        if norm2(&system.rhs) > 0.0 {
            let op = Stabilized {
                matrix: &system.matrix,
                term: system.stabilization.as_ref().unwrap(),
            };
            pcg(&op, &system.rhs, &mut u, tol, crate::discretize::solver::default_max_iter(n))?;
        }
        self.normalize(&mut u);
        Ok(u)
    }

    /// Relative residual of the whole discrete periodic system
    /// `m (u_n − u_{n−1})/Δτ + K_n u_n = F̂_n` over all levels.
    pub fn periodic_residual(&self, field: &PeriodicField, loads: &[Vec<f64>]) -> f64 {
        let n_tau = self.n_tau;
        let inv_dt = 1.0 / self.dtau();
        let mut res = 0.0;
        let mut scale = 0.0;
        for lvl in 0..n_tau {
            let prev = &field.levels[(lvl + n_tau - 1) % n_tau];
            let u = &field.levels[lvl];
            let mut f = loads[lvl].clone();
            self.project(&mut f);
            let ku = self.stiffness[lvl].matvec(u);
            for i in 0..u.len() {
                let r = self.mass[i] * inv_dt * (u[i] - prev[i]) + ku[i] - f[i];
                res += r * r;
                scale += f[i] * f[i] + ku[i] * ku[i];
            }
        }
        if scale > 0.0 {
            (res / scale).sqrt()
        } else {
            res.sqrt()
        }
    }

    /// Cell-center gradient of a periodic field at level `n`.
    pub fn gradient(&self, field: &PeriodicField, n: usize, cell: usize) -> [f64; 3] {
        self.grid.cell_gradient(&field.levels[n], cell)
    }
}

/// Correctors `θ_i`, one periodic field per axis.
#[derive(Debug, Clone)]
pub struct MesoCorrectorTheta {
    pub fields: Vec<PeriodicField>,
    /// Relative residuals of the discrete periodic systems.
    pub residuals: Vec<f64>,
}

/// Solves `ρ ∂_τ θ_i − (1/|Z_s|) div(Ã(e_i + ∇θ_i)) = 0`, periodic in `y`
/// and `τ`, with zero `ρ`-weighted mean over `Y_m`.
pub fn solve_theta(setup: &MesoSetup, opts: &MesoOptions) -> Result<MesoCorrectorTheta> {
    let dim = setup.grid.dim();
    let out: Vec<(PeriodicField, f64)> = (0..dim)
        .into_par_iter()
        .map(|i| {
            let loads: Vec<Vec<f64>> = (0..setup.n_tau).map(|n| setup.theta_load(i, n)).collect();
            let field = setup.solve_periodic(&loads, opts)?;
            let res = setup.periodic_residual(&field, &loads);
            Ok((field, res))
        })
        .collect::<Result<_>>()?;
    let (fields, residuals) = out.into_iter().unzip();
    Ok(MesoCorrectorTheta { fields, residuals })
}

/// `ω_1(·,·; r)` for every sample of the state variable.
#[derive(Debug, Clone)]
pub enum MesoCorrectorOmega {
    Zero,
    /// `ω_1(r) = f(r) ω_c` with `ω_c` solved for the spatial factor `c`.
    Separable {
        state: crate::reaction::StateFunction,
        base: PeriodicField,
        residual: f64,
    },
    /// One solve per `r` in `r_grid`, interpolated linearly in between.
    Tabulated {
        r_grid: Vec<f64>,
        fields: Vec<PeriodicField>,
        residuals: Vec<f64>,
    },
}

fn reaction_loads(setup: &MesoSetup, value: impl Fn(&[f64], f64) -> f64 + Sync) -> Vec<Vec<f64>> {
    let dim = setup.grid.dim();
    (0..setup.n_tau)
        .map(|n| {
            let tau = n as f64 / setup.n_tau as f64;
            setup.source_load(|c| value(&setup.grid.cell_center(c)[..dim], tau))
        })
        .collect()
}

fn warn_compatibility(loads: &[Vec<f64>]) -> f64 {
    let total: f64 = loads.iter().map(|f| f.iter().sum::<f64>()).sum::<f64>() / loads.len() as f64;
    if total.abs() > COMPATIBILITY_WARN {
        warn!(
            "reaction source has nonzero mass {total:e} over the fracture-cell matrix; \
             solving in the weighted-mean-zero quotient"
        );
    }
    total
}

/// Solves `ρ ∂_τ ω − (1/|Z_s|) div(Ã ∇ω) = g(·,·,r)` on `Y_m × T` with the
/// same periodicity and normalization as `θ`.
pub fn solve_omega(
    setup: &MesoSetup,
    g: &ReactionTerm,
    r_grid: &[f64],
    opts: &MesoOptions,
) -> Result<MesoCorrectorOmega> {
    if g.is_zero() {
        return Ok(MesoCorrectorOmega::Zero);
    }
    if let Some(state) = g.state_function() {
        let loads = reaction_loads(setup, |y, tau| g.spatial(y, tau).unwrap_or(0.0));
        warn_compatibility(&loads);
        let base = setup.solve_periodic(&loads, opts)?;
        let residual = setup.periodic_residual(&base, &loads);
        return Ok(MesoCorrectorOmega::Separable {
            state,
            base,
            residual,
        });
    }
    let mut grid = r_grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    let out: Vec<(PeriodicField, f64)> = grid
        .par_iter()
        .map(|&r| {
            let loads = reaction_loads(setup, |y, tau| g.eval(y, tau, r));
            warn_compatibility(&loads);
            let f = setup.solve_periodic(&loads, opts)?;
            let res = setup.periodic_residual(&f, &loads);
            Ok((f, res))
        })
        .collect::<Result<_>>()?;
    let (fields, residuals) = out.into_iter().unzip();
    Ok(MesoCorrectorOmega::Tabulated {
        r_grid: grid,
        fields,
        residuals,
    })
}

impl MesoCorrectorOmega {
    /// `ω_1(·,·; r)`; tabulated families interpolate linearly in `r`.
    pub fn at(&self, setup: &MesoSetup, r: f64) -> Result<PeriodicField> {
        match self {
            MesoCorrectorOmega::Zero => Ok(PeriodicField::zeros(setup.n_tau, setup.n_dofs())),
            MesoCorrectorOmega::Separable { state, base, .. } => Ok(base.scaled(state.eval(r))),
            MesoCorrectorOmega::Tabulated { r_grid, fields, .. } => {
                let (lo, hi) = (r_grid[0], *r_grid.last().unwrap());
                if r < lo - 1e-12 || r > hi + 1e-12 {
                    return Err(Error::OutOfRange {
                        value: r,
                        min: lo,
                        max: hi,
                    });
                }
                let i = r_grid.partition_point(|v| *v <= r).clamp(1, r_grid.len() - 1) - 1;
                let t = ((r - r_grid[i]) / (r_grid[i + 1] - r_grid[i])).clamp(0.0, 1.0);
                let levels = fields[i]
                    .levels
                    .iter()
                    .zip(&fields[i + 1].levels)
                    .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect())
                    .collect();
                Ok(PeriodicField {
                    levels,
                    report: fields[i].report,
                })
            }
        }
    }

    pub fn max_residual(&self) -> f64 {
        match self {
            MesoCorrectorOmega::Zero => 0.0,
            MesoCorrectorOmega::Separable { residual, .. } => *residual,
            MesoCorrectorOmega::Tabulated { residuals, .. } => residuals.iter().copied().fold(0.0, f64::max),
        }
    }

    pub fn reports(&self) -> Vec<PeriodReport> {
        match self {
            MesoCorrectorOmega::Zero => vec![],
            MesoCorrectorOmega::Separable { base, .. } => vec![base.report],
            MesoCorrectorOmega::Tabulated { fields, .. } => fields.iter().map(|f| f.report).collect(),
        }
    }
}

/// Both sides of the discrete duality `[ρ ∂_τ u, v] = −[ρ ∂_τ v, u]` with
/// centered `τ` differences and periodic trapezoidal quadrature; `mass`
/// holds the lumped `ρ`-weights.
pub fn discrete_duality_check(u: &[Vec<f64>], v: &[Vec<f64>], mass: &[f64]) -> (f64, f64) {
    let n_tau = u.len();
    let dt = 1.0 / n_tau as f64;
    let bracket = |a: &[Vec<f64>], b: &[Vec<f64>]| -> f64 {
        let mut s = 0.0;
        for n in 0..n_tau {
            let up = &a[(n + 1) % n_tau];
            let um = &a[(n + n_tau - 1) % n_tau];
            let mut inner = 0.0;
            for i in 0..mass.len() {
                inner += mass[i] * (up[i] - um[i]) / (2.0 * dt) * b[n][i];
            }
            s += dt * inner;
        }
        s
    };
    (bracket(u, v), -bracket(v, u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cellgeo::{build_cell_geometry, GeometrySpec, ShapeSpec};
    use crate::coefficients::{CoefficientData, DiffusionPreset};
    use crate::microcell::tabulate_pore_tensors;

    fn setup(fractures: Vec<ShapeSpec>, diffusion: DiffusionPreset, n_y: usize, n_tau: usize) -> MesoSetup {
        let geom = build_cell_geometry(&GeometrySpec {
            dim: 2,
            fractures,
            pores: vec![],
            n_y,
            n_z: 8,
            trivial_medium: true,
        })
        .unwrap();
        let coeffs = CoefficientData {
            diffusion,
            density: DensityPreset::Trigonometric {
                base: 1.0,
                amplitude: 0.2,
            },
        };
        let table = tabulate_pore_tensors(&coeffs, &geom, n_tau).unwrap();
        MesoSetup::new(&table, &coeffs.density, &geom).unwrap()
    }

    #[test]
    fn full_cell_with_constant_data_gives_zero_theta() {
        let s = setup(
            vec![],
            DiffusionPreset::Constant {
                matrix: SmallMat::from_row_major(&[2.0, 0.5, 0.5, 1.0]),
            },
            16,
            8,
        );
        let th = solve_theta(&s, &MesoOptions::default()).unwrap();
        for f in &th.fields {
            assert!(f.levels.iter().flatten().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn stationary_data_gives_stationary_theta() {
        let s = setup(
            vec![ShapeSpec::centered_box(2, 0.25)],
            DiffusionPreset::Checkerboard { values: [1.0, 2.0] },
            16,
            8,
        );
        let th = solve_theta(&s, &MesoOptions::default()).unwrap();
        let f = &th.fields[0];
        assert!(f.report.periods <= 2);
        let diff: f64 = f.levels[3].iter().zip(&f.levels[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-9);
        assert!(f.levels[0].iter().any(|v| v.abs() > 1e-3));
        assert!(th.residuals[0] < 1e-8);
    }

    #[test]
    fn time_dependent_theta_is_periodic_and_normalized() {
        let s = setup(
            vec![ShapeSpec::centered_box(2, 0.25)],
            DiffusionPreset::Trigonometric {
                base: 1.0,
                amplitude: 0.5,
                time_amplitude: 0.5,
                anisotropy: None,
            },
            16,
            16,
        );
        let opts = MesoOptions::default();
        let th = solve_theta(&s, &opts).unwrap();
        for (f, r) in th.fields.iter().zip(&th.residuals) {
            assert!(f.report.defect <= opts.tol_period);
            assert!(f.report.max_weighted_mean <= 1e-12);
            assert!(*r <= 1e-8, "residual {r}");
        }
        // A different initial guess converges to the same field.
        let zero = MesoOptions {
            zero_initial_guess: true,
            ..opts
        };
        let th0 = solve_theta(&s, &zero).unwrap();
        let w = s.grid.lumped_weights(|_| 1.0);
        let d = th0.fields[0]
            .levels
            .iter()
            .zip(&th.fields[0].levels)
            .map(|(a, b)| {
                a.iter().zip(b).zip(&w).map(|((x, y), w)| w * (x - y) * (x - y)).sum::<f64>().sqrt()
            })
            .fold(0.0, f64::max);
        assert!(d <= 10.0 * opts.tol_period, "{d}");
    }

    #[test]
    fn duality_is_antisymmetric() {
        let n_tau = 16;
        let phi: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).sin()).collect();
        let mass = vec![0.1; 10];
        let mk = |f: fn(f64) -> f64| -> Vec<Vec<f64>> {
            (0..n_tau)
                .map(|n| {
                    let t = 2.0 * std::f64::consts::PI * n as f64 / n_tau as f64;
                    phi.iter().map(|p| p * f(t)).collect()
                })
                .collect()
        };
        let u = mk(f64::sin);
        let v = mk(f64::cos);
        let (a, b) = discrete_duality_check(&u, &v, &mass);
        assert!((a - b).abs() < 1e-12 && a.abs() > 1e-3);
        let (c, d) = discrete_duality_check(&u, &u, &mass);
        assert!(c.abs() < 1e-12 && d.abs() < 1e-12);
    }
}
