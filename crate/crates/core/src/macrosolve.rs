use std::sync::Arc;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::discretize::{
    flux_divergence_load, pcg, solver::default_max_iter, Assembler, CsrMatrix, RefElement,
    StructuredGrid,
};
use crate::error::{Error, Result};
use crate::tensor::SmallMat;
use crate::upscale::{eval_clamped, EffectiveModel};

/// Scalar function of space.
pub type SpaceFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Scalar function of space and time.
pub type SpaceTimeFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// Cell Péclet number above which `L₂·∇u` switches to upwind differences.
pub const UPWIND_PECLET: f64 = 2.0;
const MAX_HALVINGS: usize = 5;

/// The homogenized problem on a box `Π (0, L_k)` with homogeneous Dirichlet data.
#[derive(Clone)]
pub struct MacroProblem {
    pub lengths: Vec<f64>,
    pub cells: Vec<usize>,
    pub t_final: f64,
    pub dt: f64,
    pub initial: SpaceFn,
    pub model: EffectiveModel,
    /// Extra source for manufactured solutions.
    pub source: Option<SpaceTimeFn>,
    /// Snapshot spacing in time; `None` keeps only the initial and final states.
    pub snapshot_interval: Option<f64>,
    pub solver_tol: f64,
}

impl std::fmt::Debug for MacroProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MacroProblem")
            .field("lengths", &self.lengths)
            .field("cells", &self.cells)
            .field("t_final", &self.t_final)
            .field("dt", &self.dt)
            .field("has_source", &self.source.is_some())
            .finish()
    }
}

impl MacroProblem {
    pub fn new(lengths: Vec<f64>, cells: Vec<usize>, t_final: f64, dt: f64, initial: SpaceFn, model: EffectiveModel) -> Self {
        Self {
            lengths,
            cells,
            t_final,
            dt,
            initial,
            model,
            source: None,
            snapshot_interval: None,
            solver_tol: 1e-12,
        }
    }
}

/// One row of the diagnostic series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub t: f64,
    /// `‖u‖_{L²(Ω)}`.
    pub l2: f64,
    /// `‖∇u‖²_{L²(Ω)}`.
    pub grad_sq: f64,
}

/// Snapshots and diagnostics of a macroscopic run. Snapshots hold values at
/// every grid node (boundary nodes are zero).
#[derive(Debug, Clone)]
pub struct MacroSolution {
    pub grid: Arc<StructuredGrid>,
    pub times: Vec<f64>,
    pub snapshots: Vec<Vec<f64>>,
    pub diagnostics: Vec<Diagnostic>,
    pub steps: usize,
    pub halvings: usize,
    pub clamped_evaluations: usize,
}

impl MacroSolution {
    /// Snapshot interpolated linearly in time and bilinearly in space.
    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        self.eval_series(&self.snapshots, x, t)
    }

    /// Same interpolation for any nodal series aligned with `times`.
    pub fn eval_series(&self, series: &[Vec<f64>], x: &[f64], t: f64) -> f64 {
        let (k0, k1, s) = self.bracket(t);
        let a = self.grid.interpolate_nodes(&series[k0], x);
        if s == 0.0 {
            return a;
        }
        let b = self.grid.interpolate_nodes(&series[k1], x);
        (1.0 - s) * a + s * b
    }

    fn bracket(&self, t: f64) -> (usize, usize, f64) {
        let k = self.times.partition_point(|s| *s <= t);
        if k == 0 {
            return (0, 0, 0.0);
        }
        if k >= self.times.len() {
            let last = self.times.len() - 1;
            return (last, last, 0.0);
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let s = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
        (k - 1, k, s)
    }

    /// Nodal gradients of every snapshot, `out[k][snapshot]`.
    pub fn gradient_series(&self) -> Vec<Vec<Vec<f64>>> {
        let dim = self.grid.dim();
        let mut out = vec![Vec::with_capacity(self.snapshots.len()); dim];
        for s in &self.snapshots {
            for (k, g) in nodal_gradient(&self.grid, s).into_iter().enumerate() {
                out[k].push(g);
            }
        }
        out
    }

    pub fn final_state(&self) -> &[f64] {
        self.snapshots.last().unwrap()
    }
}

/// Central-difference gradient of full nodal values on a non-periodic grid,
/// one-sided at the boundary.
pub fn nodal_gradient(grid: &StructuredGrid, nodes: &[f64]) -> Vec<Vec<f64>> {
    let dim = grid.dim();
    let h = grid.spacings();
    let counts = grid.node_counts().to_vec();
    (0..dim)
        .map(|k| {
            (0..grid.n_nodes())
                .map(|n| {
                    let idx = grid.node_multi_index(n);
                    let i = idx[k];
                    let (lo, hi) = (i.saturating_sub(1), (i + 1).min(counts[k] - 1));
                    let mut a = idx;
                    a[k] = lo;
                    let mut b = idx;
                    b[k] = hi;
                    let va = nodes[grid.node_index(&a[..dim])];
                    let vb = nodes[grid.node_index(&b[..dim])];
                    (vb - va) / ((hi - lo) as f64 * h[k])
                })
                .collect()
        })
        .collect()
}

/// `sup_t ‖u‖_{L²}` and `∫_0^T ‖∇u‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub sup_l2: f64,
    pub grad_sq_integral: f64,
}

pub fn energy_report(solution: &MacroSolution) -> EnergyReport {
    let d = &solution.diagnostics;
    let sup_l2 = d.iter().map(|r| r.l2).fold(0.0, f64::max);
    let mut grad_sq_integral = 0.0;
    for w in d.windows(2) {
        grad_sq_integral += (w[1].t - w[0].t) * w[1].grad_sq;
    }
    EnergyReport {
        sup_l2,
        grad_sq_integral,
    }
}

struct Stepper<'a> {
    problem: &'a MacroProblem,
    grid: &'a StructuredGrid,
    element: RefElement,
    stiffness: CsrMatrix,
    laplacian: CsrMatrix,
    weights: Vec<f64>,
    a_hat: SmallMat,
    reactive: bool,
    clamped: usize,
}

impl Stepper<'_> {
    /// Explicit right-hand side `−∫L₁(u)·∇φ − ∫(L₂(u)·∇u + L₃(u))φ + ∫Sφ`.
    fn explicit(&mut self, u: &[f64], t: f64) -> Vec<f64> {
        let grid = self.grid;
        let n = grid.n_dofs();
        let mut out = vec![0.0; n];
        if let Some(src) = &self.problem.source {
            for d in 0..n {
                let x = grid.node_coords(grid.node_of(d));
                out[d] += self.weights[d] * src(&x[..grid.dim()], t);
            }
        }
        if !self.reactive {
            return out;
        }
        let dim = grid.dim();
        let model = &self.problem.model;
        let nodes = grid.to_nodes(u);
        let mut lv = Vec::with_capacity(nodes.len());
        for &v in &nodes {
            let (l, c) = eval_clamped(model, v);
            if c {
                self.clamped += 1;
            }
            lv.push(l);
        }
        let flux: Vec<Vec<f64>> = (0..dim).map(|k| lv.iter().map(|l| l.l1[k]).collect()).collect();
        let div = flux_divergence_load(grid, &self.element, &flux);
        let h = grid.spacings();
        for d in 0..n {
            let node = grid.node_of(d);
            let idx = grid.node_multi_index(node);
            let l = &lv[node];
            let mut conv = 0.0;
            for k in 0..dim {
                let c = l.l2[k];
                if c == 0.0 {
                    continue;
                }
                let mut lo = idx;
                lo[k] -= 1;
                let mut hi = idx;
                hi[k] += 1;
                let um = nodes[grid.node_index(&lo[..dim])];
                let up = nodes[grid.node_index(&hi[..dim])];
                let uc = nodes[node];
                let grad = if c.abs() * h[k] / self.a_hat.m[k][k] > UPWIND_PECLET {
                    if c > 0.0 {
                        (uc - um) / h[k]
                    } else {
                        (up - uc) / h[k]
                    }
                } else {
                    (up - um) / (2.0 * h[k])
                };
                conv += c * grad;
            }
            out[d] += -div[d] - self.weights[d] * (conv + l.l3);
        }
        out
    }

    fn diagnostic(&self, u: &[f64], t: f64) -> Diagnostic {
        let l2 = u.iter().zip(&self.weights).map(|(v, w)| w * v * v).sum::<f64>().sqrt();
        let ku = self.laplacian.matvec(u);
        let grad_sq = u.iter().zip(&ku).map(|(a, b)| a * b).sum();
        Diagnostic { t, l2, grad_sq }
    }

    /// One step of size `dt` from `u` at time `t`; `None` when the Picard
    /// correction fails to contract.
    fn try_step(&mut self, u: &[f64], t: f64, dt: f64) -> Result<Option<Vec<f64>>> {
        let cap = self.problem.model.capacity();
        let n = u.len();
        let mut system = self.stiffness.clone();
        let md: Vec<f64> = self.weights.iter().map(|w| cap * w / dt).collect();
        system.add_diagonal(&md);
        let tol = self.problem.solver_tol;
        let solve = |rhs_extra: &[f64], guess: &[f64]| -> Result<Vec<f64>> {
            let rhs: Vec<f64> = (0..n).map(|i| md[i] * u[i] + rhs_extra[i]).collect();
            let mut x = guess.to_vec();
            pcg(&system, &rhs, &mut x, tol, default_max_iter(n))?;
            Ok(x)
        };
        let e0 = self.explicit(u, t + dt);
        let u1 = solve(&e0, u)?;
        if !self.reactive {
            return Ok(Some(u1));
        }
        let e1 = self.explicit(&u1, t + dt);
        let u2 = solve(&e1, &u1)?;
        let step: f64 = u1.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let corr: f64 = u2.iter().zip(&u1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let scale = u2.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !u2.iter().all(|v| v.is_finite()) || (corr > step && corr > 1e-12 * scale.max(1e-300)) {
            return Ok(None);
        }
        Ok(Some(u2))
    }

    fn advance(&mut self, u: &[f64], t: f64, dt: f64, depth: usize, halvings: &mut usize) -> Result<Vec<f64>> {
        if let Some(v) = self.try_step(u, t, dt)? {
            return Ok(v);
        }
        if depth >= MAX_HALVINGS {
            return Err(Error::PicardDivergence {
                time: t,
                retries: depth,
            });
        }
        *halvings += 1;
        debug!("Picard correction diverged at t = {t}; halving the step");
        let mid = self.advance(u, t, dt / 2.0, depth + 1, halvings)?;
        self.advance(&mid, t + dt / 2.0, dt / 2.0, depth + 1, halvings)
    }
}

/// Semi-implicit time stepping of the limit problem: implicit diffusion,
/// reaction-induced terms at the previous iterate plus one Picard correction.
pub fn solve_macro(problem: &MacroProblem) -> Result<MacroSolution> {
    problem.model.validate()?;
    let dim = problem.model.dim;
    if problem.cells.len() != dim || problem.lengths.len() != dim {
        return Err(Error::InvalidInput(format!(
            "macro grid needs {dim} axes to match the effective model"
        )));
    }
    if !(problem.t_final > 0.0 && problem.dt > 0.0) {
        return Err(Error::InvalidInput("final time and time step must be positive".into()));
    }
    let grid = Arc::new(StructuredGrid::dirichlet_box(&problem.cells, &problem.lengths, None)?);
    let asm = Assembler::new(&grid);
    let a_hat = problem.model.a_hat();
    let stiffness = asm.scaled_stiffness(&grid, &a_hat, |_| 1.0)?;
    let laplacian = asm.scaled_stiffness(&grid, &SmallMat::identity(dim), |_| 1.0)?;
    let weights = grid.lumped_weights(|_| 1.0);
    let mut stepper = Stepper {
        problem,
        grid: &grid,
        element: asm.element.clone(),
        stiffness,
        laplacian,
        weights,
        a_hat,
        reactive: problem.model.has_reaction_terms(),
        clamped: 0,
    };

    let mut u: Vec<f64> = (0..grid.n_dofs())
        .map(|d| (problem.initial)(&grid.node_coords(grid.node_of(d))[..dim]))
        .collect();
    let steps = (problem.t_final / problem.dt).round().max(1.0) as usize;
    let dt = problem.t_final / steps as f64;
    let every = problem
        .snapshot_interval
        .map(|s| ((s / dt).round() as usize).max(1))
        .unwrap_or(steps);

    let mut times = vec![0.0];
    let mut snapshots = vec![grid.to_nodes(&u)];
    let mut diagnostics = vec![stepper.diagnostic(&u, 0.0)];
    let mut halvings = 0;
    for k in 0..steps {
        let t = k as f64 * dt;
        u = stepper.advance(&u, t, dt, 0, &mut halvings)?;
        let t1 = (k + 1) as f64 * dt;
        diagnostics.push(stepper.diagnostic(&u, t1));
        if (k + 1) % every == 0 || k + 1 == steps {
            times.push(t1);
            snapshots.push(grid.to_nodes(&u));
        }
    }
    if stepper.clamped > 0 {
        warn!(
            "{} effective-coefficient evaluations fell outside the state grid and were clamped",
            stepper.clamped
        );
    }
    let clamped_evaluations = stepper.clamped;
    Ok(MacroSolution {
        grid,
        times,
        snapshots,
        diagnostics,
        steps,
        halvings,
        clamped_evaluations,
    })
}

/// Discrete `L²(Ω)` distance between a nodal snapshot and a function.
pub fn l2_error_at(solution: &MacroSolution, snapshot: usize, exact: impl Fn(&[f64]) -> f64) -> f64 {
    let grid = &solution.grid;
    let w = grid.lumped_node_weights(|_| 1.0);
    let s = &solution.snapshots[snapshot];
    (0..grid.n_nodes())
        .map(|n| {
            let x = grid.node_coords(n);
            let e = s[n] - exact(&x[..grid.dim()]);
            w[n] * e * e
        })
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::upscale::r_grid;
    use std::f64::consts::PI;

    fn sine() -> SpaceFn {
        Arc::new(|x: &[f64]| (PI * x[0]).sin() * (PI * x[1]).sin())
    }

    #[test]
    fn heat_solution_decays_at_the_analytic_rate() {
        let model = EffectiveModel::diffusion_only(SmallMat::identity(2), 1.0, 1.0, r_grid(2.0, 33));
        let p = MacroProblem::new(vec![1.0, 1.0], vec![32, 32], 0.05, 1e-3, sine(), model);
        let sol = solve_macro(&p).unwrap();
        let decay = (-2.0 * PI * PI * 0.05f64).exp();
        let err = l2_error_at(&sol, sol.snapshots.len() - 1, |x| decay * (PI * x[0]).sin() * (PI * x[1]).sin());
        assert!(err < 5e-3, "{err}");
        // Implicit diffusion is dissipative.
        assert!(sol.diagnostics.windows(2).all(|w| w[1].l2 <= w[0].l2));
    }

    #[test]
    fn capacity_slows_the_decay() {
        let model = EffectiveModel::diffusion_only(SmallMat::identity(2), 0.5, 2.0, r_grid(2.0, 33));
        assert_eq!(model.capacity(), 1.0);
        let model = EffectiveModel::diffusion_only(SmallMat::identity(2), 1.0, 2.0, r_grid(2.0, 33));
        let p = MacroProblem::new(vec![1.0, 1.0], vec![16, 16], 0.05, 1e-3, sine(), model);
        let sol = solve_macro(&p).unwrap();
        let l2_0 = sol.diagnostics[0].l2;
        let l2_t = sol.diagnostics.last().unwrap().l2;
        let rate = -(l2_t / l2_0).ln() / 0.05;
        assert!((rate - PI * PI).abs() < 0.2, "{rate}");
    }

    #[test]
    fn solution_eval_interpolates_in_time() {
        let model = EffectiveModel::diffusion_only(SmallMat::identity(2), 1.0, 1.0, r_grid(2.0, 3));
        let mut p = MacroProblem::new(vec![1.0, 1.0], vec![8, 8], 0.01, 1e-3, sine(), model);
        p.snapshot_interval = Some(2e-3);
        let sol = solve_macro(&p).unwrap();
        assert_eq!(sol.times.len(), 6);
        let x = [0.5, 0.5];
        let mid = sol.eval(&x, 1e-3);
        let a = sol.eval(&x, 0.0);
        let b = sol.eval(&x, 2e-3);
        assert!((mid - 0.5 * (a + b)).abs() < 1e-14);
    }
}
