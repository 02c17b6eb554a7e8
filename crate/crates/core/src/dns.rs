use std::sync::Arc;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cellgeo::{flood_fill_connected, perforated_indicator, CellGeometry};
use crate::coefficients::CoefficientData;
use crate::discretize::{pcg, solver::default_max_iter, Assembler, CsrMatrix, StructuredGrid};
use crate::error::{Error, Result};
use crate::macrosolve::{Diagnostic, EnergyReport, MacroSolution, SpaceFn};
use crate::mesocell::{MesoCorrectorOmega, MesoCorrectorTheta, MesoSetup};
use crate::reaction::{ReactionTerm, StateFunction};
use crate::tensor::SmallMat;

pub const DEFAULT_DOF_CAP: usize = 2_000_000;
const MAX_HALVINGS: usize = 5;

/// The fine-scale problem on `Ω^ε` for one `ε = 1/k`.
#[derive(Clone)]
pub struct DnsProblem {
    pub eps: f64,
    pub geometry: CellGeometry,
    pub coefficients: CoefficientData,
    pub reaction: ReactionTerm,
    pub lengths: Vec<f64>,
    pub initial: SpaceFn,
    pub t_final: f64,
    /// Grid cells per pore cell, `h = ε²/cells_per_pore_cell`.
    pub cells_per_pore_cell: usize,
    /// Time steps per fast period, `Δt = ε²/steps_per_period`.
    pub steps_per_period: usize,
    /// Steps between stored snapshots; defaults to `min(ε²/8, T/32)` in time.
    pub snapshot_every: Option<usize>,
    pub dof_cap: usize,
    pub solver_tol: f64,
    pub picard_tol: f64,
    pub picard_max: usize,
}

impl std::fmt::Debug for DnsProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DnsProblem")
            .field("eps", &self.eps)
            .field("lengths", &self.lengths)
            .field("t_final", &self.t_final)
            .field("cells_per_pore_cell", &self.cells_per_pore_cell)
            .field("steps_per_period", &self.steps_per_period)
            .finish()
    }
}

impl DnsProblem {
    pub fn new(
        eps: f64,
        geometry: CellGeometry,
        coefficients: CoefficientData,
        reaction: ReactionTerm,
        initial: SpaceFn,
        t_final: f64,
    ) -> Self {
        let dim = geometry.dim;
        Self {
            eps,
            geometry,
            coefficients,
            reaction,
            lengths: vec![1.0; dim],
            initial,
            t_final,
            cells_per_pore_cell: 8,
            steps_per_period: 64,
            snapshot_every: None,
            dof_cap: DEFAULT_DOF_CAP,
            solver_tol: 1e-10,
            picard_tol: 1e-8,
            picard_max: 40,
        }
    }

    /// `k` with `ε = 1/k`.
    pub fn inverse_eps(&self) -> Result<usize> {
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(Error::InvalidInput(format!("ε = {} must lie in (0, 1]", self.eps)));
        }
        let k = (1.0 / self.eps).round();
        if (1.0 / self.eps - k).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("ε = {} is not 1/k for an integer k", self.eps)));
        }
        Ok(k as usize)
    }

    /// Cells per axis of the resolving grid.
    pub fn grid_cells(&self) -> Result<Vec<usize>> {
        let k = self.inverse_eps()? as f64;
        self.lengths
            .iter()
            .map(|&l| {
                let periods = l * k;
                if (periods - periods.round()).abs() > 1e-9 || periods.round() < 1.0 {
                    return Err(Error::NotGridExact(format!(
                        "domain length {l} is not a multiple of ε = {}",
                        self.eps
                    )));
                }
                Ok(periods.round() as usize * k as usize * self.cells_per_pore_cell)
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let dim = self.geometry.dim;
        if dim != 2 {
            return Err(Error::InvalidInput("direct simulation is two-dimensional only".into()));
        }
        if self.lengths.len() != dim {
            return Err(Error::InvalidInput("domain lengths do not match the geometry".into()));
        }
        if !(self.t_final > 0.0) || self.steps_per_period == 0 || self.cells_per_pore_cell == 0 {
            return Err(Error::InvalidInput("final time and resolutions must be positive".into()));
        }
        let k = self.inverse_eps()?;
        let g = &self.geometry;
        if !g.is_trivial() {
            if g.fractures.iter().chain(&g.pores).any(|s| matches!(s, crate::cellgeo::ShapeSpec::Disk { .. })) {
                return Err(Error::NotGridExact("disks cannot be meshed exactly".into()));
            }
            let per_z = self.cells_per_pore_cell;
            if !g.is_grid_exact(k * per_z, per_z) {
                return Err(Error::NotGridExact(format!(
                    "shape faces are not on the grid lines at h = ε²/{per_z}"
                )));
            }
            if !g.is_grid_exact(g.matrix.n, g.solid.n) {
                return Err(Error::NotGridExact("shape faces are not on the raster lines".into()));
            }
        }
        self.coefficients.validate(dim)
    }
}

/// Snapshots and energy series of one fine-scale run. Snapshots hold all
/// grid nodes; nodes outside `Ω^ε` and on `∂Ω` are zero.
#[derive(Debug, Clone)]
pub struct DnsSolution {
    pub eps: f64,
    pub grid: Arc<StructuredGrid>,
    pub times: Vec<f64>,
    pub snapshots: Vec<Vec<f64>>,
    pub energy: Vec<Diagnostic>,
    pub steps: usize,
    pub halvings: usize,
    pub picard_iterations: usize,
    pub t_final: f64,
}

impl DnsSolution {
    pub fn mask(&self) -> &[bool] {
        self.grid.active()
    }

    pub fn energy_report(&self) -> EnergyReport {
        let sup_l2 = self.energy.iter().map(|r| r.l2).fold(0.0, f64::max);
        let grad_sq_integral = self.energy.windows(2).map(|w| (w[1].t - w[0].t) * w[1].grad_sq).sum();
        EnergyReport {
            sup_l2,
            grad_sq_integral,
        }
    }
}

/// Mask of `Ω^ε` on the resolving grid, by cell centers.
pub fn perforated_mask(geom: &CellGeometry, eps: f64, grid_cells: &[usize], lengths: &[f64]) -> Vec<bool> {
    let probe = StructuredGrid::dirichlet_box(grid_cells, lengths, None).expect("valid box");
    (0..probe.n_cells())
        .map(|c| perforated_indicator(geom, eps, &probe.cell_center(c)[..geom.dim]) == 1)
        .collect()
}

fn fract(v: f64) -> f64 {
    v - v.floor()
}

struct Dns<'a> {
    p: &'a DnsProblem,
    grid: &'a StructuredGrid,
    asm: Assembler,
    rho_w: Vec<f64>,
    unit_w: Vec<f64>,
    node_y: Vec<[f64; 3]>,
    cell_y: Vec<[f64; 3]>,
    fixed: Option<CsrMatrix>,
    picard_iterations: usize,
}

impl Dns<'_> {
    fn stiffness(&self, tau: f64) -> Result<CsrMatrix> {
        if let Some(k) = &self.fixed {
            return Ok(k.clone());
        }
        let dim = self.grid.dim();
        self.asm
            .stiffness(self.grid, |c| self.p.coefficients.a(dim, &self.cell_y[c][..dim], tau))
    }

    fn try_step(&mut self, u: &[f64], guess: &[f64], t: f64, dt: f64) -> Result<Option<Vec<f64>>> {
        let eps = self.p.eps;
        let dim = self.grid.dim();
        let tau = fract((t + dt) / (eps * eps));
        let mut system = self.stiffness(tau)?;
        let md: Vec<f64> = self.rho_w.iter().map(|w| w / dt).collect();
        system.add_diagonal(&md);
        let n = u.len();
        let base: Vec<f64> = (0..n).map(|i| md[i] * u[i]).collect();
        let max_iter = default_max_iter(n);
        let mut x = guess.to_vec();
        if self.p.reaction.is_zero() {
            pcg(&system, &base, &mut x, self.p.solver_tol, max_iter)?;
            self.picard_iterations += 1;
            return Ok(Some(x));
        }
        let mut prev_inc = f64::INFINITY;
        for m in 0..self.p.picard_max {
            let rhs: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|i| {
                    base[i] + self.unit_w[i] * self.p.reaction.eval(&self.node_y[i][..dim], tau, x[i]) / eps
                })
                .collect();
            let mut next = x.clone();
            pcg(&system, &rhs, &mut next, self.p.solver_tol, max_iter)?;
            self.picard_iterations += 1;
            if !next.iter().all(|v| v.is_finite()) {
                return Ok(None);
            }
            let inc = next.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let scale = next.iter().map(|v| v * v).sum::<f64>().sqrt();
            x = next;
            if inc <= self.p.picard_tol * scale || inc == 0.0 {
                return Ok(Some(x));
            }
            // A posteriori bound `q/(1-q)·inc` from the observed contraction.
            if m >= 1 {
                let q = inc / prev_inc;
                if q < 0.5 && q / (1.0 - q) * inc <= self.p.picard_tol * scale {
                    return Ok(Some(x));
                }
            }
            if m >= 2 && inc > prev_inc {
                return Ok(None);
            }
            prev_inc = inc;
        }
        Ok(None)
    }

    fn advance(
        &mut self,
        u: &[f64],
        guess: &[f64],
        t: f64,
        dt: f64,
        depth: usize,
        halvings: &mut usize,
    ) -> Result<Vec<f64>> {
        if let Some(v) = self.try_step(u, guess, t, dt)? {
            return Ok(v);
        }
        if depth >= MAX_HALVINGS {
            return Err(Error::PicardDivergence {
                time: t,
                retries: depth,
            });
        }
        *halvings += 1;
        debug!("ε = {}: Picard iteration diverged at t = {t}; halving the step", self.p.eps);
        let mid = self.advance(u, u, t, dt / 2.0, depth + 1, halvings)?;
        self.advance(&mid, &mid, t + dt / 2.0, dt / 2.0, depth + 1, halvings)
    }
}

/// Implicit Euler with Picard iteration on the `(1/ε) g` term; Neumann on the
/// perforation boundaries, homogeneous Dirichlet on `∂Ω`.
pub fn solve_dns(problem: &DnsProblem) -> Result<DnsSolution> {
    problem.validate()?;
    let dim = problem.geometry.dim;
    let eps = problem.eps;
    let cells = problem.grid_cells()?;
    let n_cells: usize = cells.iter().product();
    if n_cells > 4 * problem.dof_cap {
        return Err(Error::CostCap {
            dofs: n_cells,
            cap: problem.dof_cap,
        });
    }
    let mask = perforated_mask(&problem.geometry, eps, &cells, &problem.lengths);
    if !flood_fill_connected(&mask, &cells, &vec![false; dim]) {
        return Err(Error::Disconnected {
            phase: "perforated domain",
        });
    }
    let grid = Arc::new(StructuredGrid::dirichlet_box(&cells, &problem.lengths, Some(mask))?);
    if grid.n_dofs() > problem.dof_cap {
        return Err(Error::CostCap {
            dofs: grid.n_dofs(),
            cap: problem.dof_cap,
        });
    }
    let wrap = |x: [f64; 3]| {
        let mut y = [0.0; 3];
        for k in 0..dim {
            y[k] = fract(x[k] / eps);
        }
        y
    };
    let cell_y: Vec<[f64; 3]> = (0..grid.n_cells()).map(|c| wrap(grid.cell_center(c))).collect();
    let node_y: Vec<[f64; 3]> = (0..grid.n_dofs()).map(|d| wrap(grid.node_coords(grid.node_of(d)))).collect();
    let rho_w = grid.lumped_weights(|c| problem.coefficients.rho(&cell_y[c][..dim]));
    let unit_w = grid.lumped_weights(|_| 1.0);
    let asm = Assembler::new(&grid);
    let laplacian = asm.scaled_stiffness(&grid, &SmallMat::identity(dim), |_| 1.0)?;
    let mut dns = Dns {
        p: problem,
        grid: &grid,
        asm,
        rho_w,
        unit_w,
        node_y,
        cell_y,
        fixed: None,
        picard_iterations: 0,
    };
    if problem.coefficients.diffusion.is_time_independent() {
        dns.fixed = Some(dns.stiffness(0.0)?);
    }

    let dt_nominal = eps * eps / problem.steps_per_period as f64;
    let steps = ((problem.t_final / dt_nominal) - 1e-9).ceil().max(1.0) as usize;
    let dt = problem.t_final / steps as f64;
    let every = problem.snapshot_every.unwrap_or_else(|| {
        let interval = (eps * eps / 8.0).min(problem.t_final / 32.0);
        ((interval / dt).round() as usize).max(1)
    });

    let energy_row = |u: &[f64], t: f64, w: &[f64]| {
        let l2 = u.iter().zip(w).map(|(v, w)| w * v * v).sum::<f64>().sqrt();
        let ku = laplacian.matvec(u);
        let grad_sq = u.iter().zip(&ku).map(|(a, b)| a * b).sum();
        Diagnostic { t, l2, grad_sq }
    };

    let mut u: Vec<f64> = (0..grid.n_dofs())
        .map(|d| (problem.initial)(&grid.node_coords(grid.node_of(d))[..dim]))
        .collect();
    let mut times = vec![0.0];
    let mut snapshots = vec![grid.to_nodes(&u)];
    let mut energy = vec![energy_row(&u, 0.0, &dns.unit_w)];
    let mut halvings = 0;
    let mut prev: Option<Vec<f64>> = None;
    for k in 0..steps {
        let t = k as f64 * dt;
        // Linear extrapolation of the last two states starts the iteration.
        let guess: Vec<f64> = match &prev {
            Some(p) => u.iter().zip(p).map(|(a, b)| 2.0 * a - b).collect(),
            None => u.clone(),
        };
        let next = dns.advance(&u, &guess, t, dt, 0, &mut halvings)?;
        prev = Some(std::mem::replace(&mut u, next));
        let t1 = (k + 1) as f64 * dt;
        energy.push(energy_row(&u, t1, &dns.unit_w));
        if (k + 1) % every == 0 || k + 1 == steps {
            times.push(t1);
            snapshots.push(grid.to_nodes(&u));
        }
    }
    if halvings > 0 {
        warn!("ε = {eps}: the time step was halved {halvings} times");
    }
    let picard_iterations = dns.picard_iterations;
    Ok(DnsSolution {
        eps,
        grid,
        times,
        snapshots,
        energy,
        steps,
        halvings,
        picard_iterations,
        t_final: problem.t_final,
    })
}

/// Runs several fine-scale problems concurrently, one per task.
pub fn solve_dns_batch(problems: &[DnsProblem]) -> Vec<Result<DnsSolution>> {
    problems.par_iter().map(solve_dns).collect()
}

/// Discrete `L²(Ω^ε × (0,T))` distance between a fine-scale run and a
/// reference evaluated at its nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub eps: f64,
    pub l2_error: f64,
    pub dns_norm: f64,
    pub relative_error: f64,
    /// `(t, ‖e(t)‖_{L²(Ω^ε)})` at the stored snapshots.
    pub series: Vec<(f64, f64)>,
}

fn check_compatible(dns: &DnsSolution, macro_: &MacroSolution) -> Result<()> {
    let a = dns.grid.lengths();
    let b = macro_.grid.lengths();
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| (x - y).abs() > 1e-12) {
        return Err(Error::GridMismatch("fine-scale and macroscopic domains differ".into()));
    }
    let tm = *macro_.times.last().unwrap();
    if (tm - dns.t_final).abs() > 1e-9 * dns.t_final.max(1.0) {
        return Err(Error::GridMismatch(format!(
            "final times differ: {} versus {tm}",
            dns.t_final
        )));
    }
    Ok(())
}

fn space_time_error(dns: &DnsSolution, reference: impl Fn(usize, &[f64], f64) -> f64 + Sync) -> ErrorReport {
    let grid = &dns.grid;
    let dim = grid.dim();
    let w = grid.lumped_node_weights(|_| 1.0);
    let nodes: Vec<usize> = (0..grid.n_nodes()).filter(|&n| w[n] > 0.0).collect();
    let mut series = Vec::with_capacity(dns.times.len());
    let mut norms = Vec::with_capacity(dns.times.len());
    for (s, &t) in dns.times.iter().enumerate() {
        let snap = &dns.snapshots[s];
        let (e2, u2) = nodes
            .par_iter()
            .map(|&n| {
                let x = grid.node_coords(n);
                let e = snap[n] - reference(n, &x[..dim], t);
                (w[n] * e * e, w[n] * snap[n] * snap[n])
            })
            .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        series.push((t, e2.sqrt()));
        norms.push(u2);
    }
    let trapezoid = |v: &[f64]| -> f64 {
        dns.times
            .windows(2)
            .zip(v.windows(2))
            .map(|(t, f)| 0.5 * (t[1] - t[0]) * (f[0] + f[1]))
            .sum()
    };
    let e2: Vec<f64> = series.iter().map(|(_, e)| e * e).collect();
    let l2_error = trapezoid(&e2).sqrt();
    let dns_norm = trapezoid(&norms).sqrt();
    ErrorReport {
        eps: dns.eps,
        l2_error,
        dns_norm,
        relative_error: if dns_norm > 0.0 { l2_error / dns_norm } else { l2_error },
        series,
    }
}

/// `‖u_ε − u_0‖_{L²(Ω^ε_T)}` with `u_0` interpolated onto the fine grid.
pub fn compare_to_macro(dns: &DnsSolution, macro_: &MacroSolution) -> Result<ErrorReport> {
    check_compatible(dns, macro_)?;
    Ok(space_time_error(dns, |_, x, t| macro_.eval(x, t)))
}

enum OmegaNodal {
    Zero,
    Separable { state: StateFunction, levels: Vec<Vec<f64>> },
    Tabulated { r_grid: Vec<f64>, fields: Vec<Vec<Vec<f64>>> },
}

/// Meso correctors `θ_i` and `ω_1` as nodal values on the fracture cell,
/// ready for evaluation at `(y, τ)`.
pub struct CorrectorSet {
    grid: Arc<StructuredGrid>,
    n_tau: usize,
    theta: Vec<Vec<Vec<f64>>>,
    omega: OmegaNodal,
}

impl CorrectorSet {
    pub fn new(setup: &MesoSetup, theta: &MesoCorrectorTheta, omega: &MesoCorrectorOmega) -> Self {
        let grid = setup.grid.clone();
        let nodal = |levels: &[Vec<f64>]| -> Vec<Vec<f64>> { levels.iter().map(|l| grid.to_nodes(l)).collect() };
        let theta = theta.fields.iter().map(|f| nodal(&f.levels)).collect();
        let omega = match omega {
            MesoCorrectorOmega::Zero => OmegaNodal::Zero,
            MesoCorrectorOmega::Separable { state, base, .. } => OmegaNodal::Separable {
                state: *state,
                levels: nodal(&base.levels),
            },
            MesoCorrectorOmega::Tabulated { r_grid, fields, .. } => OmegaNodal::Tabulated {
                r_grid: r_grid.clone(),
                fields: fields.iter().map(|f| nodal(&f.levels)).collect(),
            },
        };
        Self {
            grid,
            n_tau: setup.n_tau,
            theta,
            omega,
        }
    }

    fn interp(&self, levels: &[Vec<f64>], y: &[f64], tau: f64) -> f64 {
        let s = fract(tau) * self.n_tau as f64;
        let n0 = (s.floor() as usize).min(self.n_tau - 1);
        let f = s - n0 as f64;
        let n1 = (n0 + 1) % self.n_tau;
        let a = self.grid.interpolate_nodes(&levels[n0], y);
        if f == 0.0 {
            return a;
        }
        (1.0 - f) * a + f * self.grid.interpolate_nodes(&levels[n1], y)
    }

    /// `θ_i(y, τ)`.
    pub fn theta(&self, i: usize, y: &[f64], tau: f64) -> f64 {
        self.interp(&self.theta[i], y, tau)
    }

    /// `ω_1(y, τ; r)`; tabulated families clamp `r` to their grid.
    pub fn omega(&self, y: &[f64], tau: f64, r: f64) -> f64 {
        match &self.omega {
            OmegaNodal::Zero => 0.0,
            OmegaNodal::Separable { state, levels } => state.eval(r) * self.interp(levels, y, tau),
            OmegaNodal::Tabulated { r_grid, fields } => {
                let r = r.clamp(r_grid[0], *r_grid.last().unwrap());
                let i = r_grid.partition_point(|v| *v <= r).clamp(1, r_grid.len() - 1) - 1;
                let s = (r - r_grid[i]) / (r_grid[i + 1] - r_grid[i]);
                let a = self.interp(&fields[i], y, tau);
                let b = self.interp(&fields[i + 1], y, tau);
                (1.0 - s) * a + s * b
            }
        }
    }
}

/// Error of the first-order reconstruction
/// `u_0 + ε (θ·∇_x u_0 + ω_1(u_0))` at `y = x/ε`, `τ = t/ε²`.
pub fn corrector_error(dns: &DnsSolution, macro_: &MacroSolution, correctors: &CorrectorSet) -> Result<ErrorReport> {
    check_compatible(dns, macro_)?;
    let eps = dns.eps;
    let dim = dns.grid.dim();
    let grads = macro_.gradient_series();
    Ok(space_time_error(dns, |_, x, t| {
        let u0 = macro_.eval(x, t);
        let mut y = [0.0; 3];
        for k in 0..dim {
            y[k] = fract(x[k] / eps);
        }
        let tau = fract(t / (eps * eps));
        let mut u1 = correctors.omega(&y[..dim], tau, u0);
        for (i, g) in grads.iter().enumerate() {
            u1 += correctors.theta(i, &y[..dim], tau) * macro_.eval_series(g, x, t);
        }
        u0 + eps * u1
    }))
}

/// Point at which a multi-scale test function is evaluated.
#[derive(Debug, Clone, Copy)]
pub struct ScalePoint<'a> {
    pub x: &'a [f64],
    pub t: f64,
    pub y: &'a [f64],
    pub z: &'a [f64],
    pub tau: f64,
}

/// Weight `v_ε` in the probe integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeWeight {
    One,
    Perforated,
}

/// Quadrature resolution of the probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSetup {
    pub lengths: Vec<f64>,
    pub t_final: f64,
    /// Midpoint cells per pore cell `ε²` along each axis.
    pub cells_per_pore_cell: usize,
    /// Midpoint samples per fast period `ε²` in time; zero for a single
    /// sample when the test function does not depend on `t` or `τ`.
    pub samples_per_period: usize,
    /// Lower bound on the number of time samples when sampling in time.
    #[serde(default)]
    pub min_time_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub eps: f64,
    pub value: f64,
    pub limit: f64,
    pub error: f64,
}

/// `∫_{Ω_T} v_ε φ(x, t, x/ε, x/ε², t/ε²)` by composite midpoint quadrature,
/// compared with the supplied multi-scale limit.
pub fn msconv_probe(
    geom: &CellGeometry,
    eps_list: &[f64],
    phi: &(dyn Fn(&ScalePoint) -> f64 + Sync),
    weight: ProbeWeight,
    limit: f64,
    setup: &ProbeSetup,
) -> Result<Vec<ProbeRow>> {
    let dim = geom.dim;
    if setup.lengths.len() != dim || setup.cells_per_pore_cell == 0 || !(setup.t_final > 0.0) {
        return Err(Error::InvalidInput("probe setup does not match the geometry".into()));
    }
    eps_list
        .iter()
        .map(|&eps| {
            if !(eps > 0.0 && eps <= 1.0) {
                return Err(Error::InvalidInput(format!("ε = {eps} must lie in (0, 1]")));
            }
            let h = eps * eps / setup.cells_per_pore_cell as f64;
            let cells: Vec<usize> = setup.lengths.iter().map(|l| (l / h).round().max(1.0) as usize).collect();
            let grid = StructuredGrid::dirichlet_box(&cells, &setup.lengths, None)?;
            let (nt, dt) = if setup.samples_per_period == 0 {
                (1, setup.t_final)
            } else {
                let n = ((setup.t_final / (eps * eps)) * setup.samples_per_period as f64)
                    .ceil()
                    .max(setup.min_time_samples.max(1) as f64) as usize;
                (n, setup.t_final / n as f64)
            };
            let vol = grid.cell_volume();
            let value: f64 = (0..grid.n_cells())
                .into_par_iter()
                .map(|c| {
                    let x = grid.cell_center(c);
                    if weight == ProbeWeight::Perforated && perforated_indicator(geom, eps, &x[..dim]) == 0 {
                        return 0.0;
                    }
                    let mut y = [0.0; 3];
                    let mut z = [0.0; 3];
                    for k in 0..dim {
                        y[k] = fract(x[k] / eps);
                        z[k] = fract(x[k] / (eps * eps));
                    }
                    let mut s = 0.0;
                    for j in 0..nt {
                        let t = (j as f64 + 0.5) * dt;
                        s += phi(&ScalePoint {
                            x: &x[..dim],
                            t,
                            y: &y[..dim],
                            z: &z[..dim],
                            tau: fract(t / (eps * eps)),
                        });
                    }
                    s * dt * vol
                })
                .sum();
            Ok(ProbeRow {
                eps,
                value,
                limit,
                error: (value - limit).abs(),
            })
        })
        .collect()
}
