use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::{
    solve_spd, Assembler, RankOne, SparseSystem, StructuredGrid,
};
use crate::error::{Error, Result};
use crate::tensor::SmallMat;

/// Spatial profile `p(y)` of a separable reaction term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpatialProfile {
    /// `g ≡ 0`.
    Zero,
    /// `sin 2πy_axis`.
    Sine {
        #[serde(default)]
        axis: usize,
    },
    /// `Π_k sin 2πy_k`.
    SineProduct,
    /// `Σ_k sin 2πy_k`.
    SineSum,
}

impl SpatialProfile {
    pub fn eval(&self, y: &[f64]) -> f64 {
        match self {
            SpatialProfile::Zero => 0.0,
            SpatialProfile::Sine { axis } => (2.0 * PI * y[*axis]).sin(),
            SpatialProfile::SineProduct => y.iter().map(|v| (2.0 * PI * v).sin()).product(),
            SpatialProfile::SineSum => y.iter().map(|v| (2.0 * PI * v).sin()).sum(),
        }
    }

    pub fn sup(&self, dim: usize) -> f64 {
        match self {
            SpatialProfile::Zero => 0.0,
            SpatialProfile::Sine { .. } | SpatialProfile::SineProduct => 1.0,
            SpatialProfile::SineSum => dim as f64,
        }
    }
}

/// State dependence `f(r)` of a separable reaction term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateFunction {
    /// `κ r`.
    Linear { kappa: f64 },
    /// `κ tanh r`.
    Tanh { kappa: f64 },
    /// `κ r²`; Lipschitz only on bounded state ranges.
    Quadratic { kappa: f64 },
}

impl StateFunction {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            StateFunction::Linear { kappa } => kappa * r,
            StateFunction::Tanh { kappa } => kappa * r.tanh(),
            StateFunction::Quadratic { kappa } => kappa * r * r,
        }
    }

    pub fn derivative(&self, r: f64) -> f64 {
        match *self {
            StateFunction::Linear { kappa } => kappa,
            StateFunction::Tanh { kappa } => kappa / r.cosh().powi(2),
            StateFunction::Quadratic { kappa } => 2.0 * kappa * r,
        }
    }

    /// `sup |f'|` over `[-range, range]`.
    pub fn lipschitz(&self, range: f64) -> f64 {
        match *self {
            StateFunction::Linear { kappa } | StateFunction::Tanh { kappa } => kappa.abs(),
            StateFunction::Quadratic { kappa } => 2.0 * kappa.abs() * range,
        }
    }
}

/// Declarative reaction term `g(y,τ,r) = p(y)·(1 + b cos 2πτ)·f(r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReactionSpec {
    pub profile: SpatialProfile,
    #[serde(default)]
    pub time_amplitude: f64,
    pub state: StateFunction,
    /// Declared Lipschitz constant; derived from the presets when absent.
    #[serde(default)]
    pub lipschitz: Option<f64>,
}

impl ReactionSpec {
    pub fn zero() -> Self {
        Self {
            profile: SpatialProfile::Zero,
            time_amplitude: 0.0,
            state: StateFunction::Linear { kappa: 0.0 },
            lipschitz: None,
        }
    }
}

type GeneralFn = Arc<dyn Fn(&[f64], f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Form {
    Separable {
        profile: SpatialProfile,
        time_amplitude: f64,
        state: StateFunction,
    },
    General(GeneralFn),
}

/// Reaction term `g(y, τ, r)` with its declared Lipschitz constant `C`.
#[derive(Clone)]
pub struct ReactionTerm {
    form: Form,
    pub lipschitz: f64,
}

impl std::fmt::Debug for ReactionTerm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.form {
            Form::Separable {
                profile,
                time_amplitude,
                state,
            } => f
                .debug_struct("ReactionTerm")
                .field("profile", profile)
                .field("time_amplitude", time_amplitude)
                .field("state", state)
                .field("lipschitz", &self.lipschitz)
                .finish(),
            Form::General(_) => f
                .debug_struct("ReactionTerm")
                .field("form", &"general")
                .field("lipschitz", &self.lipschitz)
                .finish(),
        }
    }
}

impl ReactionTerm {
    /// Builds from a spec; `state_range` bounds `|r|` when deriving `C`.
    pub fn from_spec(spec: &ReactionSpec, dim: usize, state_range: f64) -> Self {
        let derived = spec.profile.sup(dim)
            * (1.0 + spec.time_amplitude.abs())
            * spec.state.lipschitz(state_range);
        Self {
            form: Form::Separable {
                profile: spec.profile,
                time_amplitude: spec.time_amplitude,
                state: spec.state,
            },
            lipschitz: spec.lipschitz.unwrap_or(derived),
        }
    }

    pub fn zero() -> Self {
        Self::from_spec(&ReactionSpec::zero(), 2, 1.0)
    }

    /// Arbitrary (possibly nonseparable) reaction term.
    pub fn general(g: impl Fn(&[f64], f64, f64) -> f64 + Send + Sync + 'static, lipschitz: f64) -> Self {
        Self {
            form: Form::General(Arc::new(g)),
            lipschitz,
        }
    }

    pub fn eval(&self, y: &[f64], tau: f64, r: f64) -> f64 {
        match &self.form {
            Form::Separable {
                profile,
                time_amplitude,
                state,
            } => profile.eval(y) * (1.0 + time_amplitude * (2.0 * PI * tau).cos()) * state.eval(r),
            Form::General(g) => g(y, tau, r),
        }
    }

    pub fn is_zero(&self) -> bool {
        match &self.form {
            Form::Separable { profile, state, .. } => {
                matches!(profile, SpatialProfile::Zero) || state.lipschitz(1.0) == 0.0
            }
            Form::General(_) => false,
        }
    }

    /// `c(y,τ)` of a separable term.
    pub fn spatial(&self, y: &[f64], tau: f64) -> Option<f64> {
        match &self.form {
            Form::Separable {
                profile,
                time_amplitude,
                ..
            } => Some(profile.eval(y) * (1.0 + time_amplitude * (2.0 * PI * tau).cos())),
            Form::General(_) => None,
        }
    }

    pub fn state_function(&self) -> Option<StateFunction> {
        match &self.form {
            Form::Separable { state, .. } => Some(*state),
            Form::General(_) => None,
        }
    }
}

/// Sampling lattice for hypothesis checks.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationLattice {
    pub dim: usize,
    pub n_y: usize,
    pub n_tau: usize,
    pub r_values: Vec<f64>,
    pub tolerance: f64,
}

impl ValidationLattice {
    /// `r` sampled uniformly on `[-r_max, r_max]`.
    pub fn bounded(dim: usize, n_y: usize, n_tau: usize, r_max: f64) -> Self {
        let r_values = (0..=16).map(|i| -r_max + 2.0 * r_max * i as f64 / 16.0).collect();
        Self {
            dim,
            n_y,
            n_tau,
            r_values,
            tolerance: 1e-8,
        }
    }

    /// `r` probed geometrically up to `|r| = 10⁶` for unbounded state ranges.
    pub fn unbounded(dim: usize, n_y: usize, n_tau: usize) -> Self {
        let mut r_values = vec![0.0];
        for k in -3..=6 {
            let r = 10f64.powi(k);
            r_values.push(r);
            r_values.push(-r);
        }
        Self {
            dim,
            n_y,
            n_tau,
            r_values,
            tolerance: 1e-8,
        }
    }
}

/// Measured hypothesis quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReactionValidation {
    pub max_dr: f64,
    pub declared_lipschitz: f64,
    pub max_at_zero: f64,
    pub max_cell_mean: f64,
}

fn lattice_point(dim: usize, n: usize, idx: usize) -> [f64; 3] {
    let mut y = [0.0; 3];
    let mut rem = idx;
    for v in y.iter_mut().take(dim) {
        *v = ((rem % n) as f64 + 0.5) / n as f64;
        rem /= n;
    }
    y
}

/// Checks `|∂_r g| ≤ C`, `g(·,·,0) = 0` and `∫_Y g dy = 0` on the lattice.
pub fn validate_reaction(g: &ReactionTerm, lattice: &ValidationLattice) -> Result<ReactionValidation> {
    let dim = lattice.dim;
    let n_pts = lattice.n_y.pow(dim as u32);
    let tol = lattice.tolerance;
    let mut rep = ReactionValidation {
        max_dr: 0.0,
        declared_lipschitz: g.lipschitz,
        max_at_zero: 0.0,
        max_cell_mean: 0.0,
    };
    for t in 0..lattice.n_tau.max(1) {
        let tau = (t as f64 + 0.5) / lattice.n_tau.max(1) as f64;
        for &r in &lattice.r_values {
            let delta = 1e-6 * r.abs().max(1.0);
            let mut mean = 0.0;
            let mut scale = 0.0f64;
            for i in 0..n_pts {
                let y = lattice_point(dim, lattice.n_y, i);
                let y = &y[..dim];
                let v = g.eval(y, tau, r);
                mean += v;
                scale = scale.max(v.abs());
                let d = (g.eval(y, tau, r + delta) - g.eval(y, tau, r - delta)) / (2.0 * delta);
                rep.max_dr = rep.max_dr.max(d.abs());
                if r == 0.0 {
                    rep.max_at_zero = rep.max_at_zero.max(v.abs());
                }
            }
            mean /= n_pts as f64;
            rep.max_cell_mean = rep.max_cell_mean.max(mean.abs() / scale.max(1.0));
        }
        let zero_probe = lattice.r_values.contains(&0.0);
        if !zero_probe {
            for i in 0..n_pts {
                let y = lattice_point(dim, lattice.n_y, i);
                rep.max_at_zero = rep.max_at_zero.max(g.eval(&y[..dim], tau, 0.0).abs());
            }
        }
    }
    if rep.max_dr > g.lipschitz * (1.0 + tol) + tol {
        return Err(Error::HypothesisViolation {
            hypothesis: "A2",
            detail: format!(
                "max |∂r g| = {:e} exceeds the declared constant {:e}",
                rep.max_dr, g.lipschitz
            ),
        });
    }
    if rep.max_at_zero > tol {
        return Err(Error::HypothesisViolation {
            hypothesis: "A3",
            detail: format!("max |g(y,τ,0)| = {:e}", rep.max_at_zero),
        });
    }
    if rep.max_cell_mean > tol {
        return Err(Error::HypothesisViolation {
            hypothesis: "A4(i)",
            detail: format!("max |∫_Y g dy| = {:e}", rep.max_cell_mean),
        });
    }
    Ok(rep)
}

#[derive(Debug, Clone)]
enum PotentialData {
    Zero,
    /// Potentials of `c(·,τ)` per level; `G(r) = f(r)·G1`.
    Separable {
        state: StateFunction,
        r: Vec<Vec<f64>>,
        grad: Vec<Vec<[f64; 3]>>,
    },
    /// `R` and `G` for each `(τ, r)` sample.
    Tabulated {
        r_grid: Vec<f64>,
        r: Vec<Vec<Vec<f64>>>,
        grad: Vec<Vec<Vec<[f64; 3]>>>,
    },
}

/// Potentials `R` with `Δ_y R = g`, zero cell mean, and `G = ∇_y R` at cell
/// centers of the full periodic fracture-cell grid, for `τ = n / n_tau`.
#[derive(Debug, Clone)]
pub struct VectorPotential {
    pub grid: StructuredGrid,
    pub n_tau: usize,
    data: PotentialData,
    /// Measured `C_G` with `|G(y,τ,r)| ≤ C_G |r|` on the samples.
    pub c_g: f64,
    /// Largest relative residual of the discrete Poisson equations.
    pub laplacian_residual: f64,
    /// Largest `|Σ b|` removed from a load to make it compatible.
    pub projected_mass: f64,
}

struct PoissonOutcome {
    r: Vec<f64>,
    grad: Vec<[f64; 3]>,
    residual: f64,
    projected: f64,
}

fn poisson(
    grid: &StructuredGrid,
    stiffness: &crate::discretize::CsrMatrix,
    weights: &[f64],
    term: &RankOne,
    nodal_g: &[f64],
) -> Result<PoissonOutcome> {
    // Weak form of Δ R = g: K R = −M g with lumped M.
    let mut b: Vec<f64> = weights.iter().zip(nodal_g).map(|(w, g)| -w * g).collect();
    let total_w: f64 = weights.iter().sum();
    let mass: f64 = b.iter().sum();
    for (bi, w) in b.iter_mut().zip(weights) {
        *bi -= mass / total_w * w;
    }
    let system = SparseSystem {
        matrix: stiffness.clone(),
        rhs: b,
        stabilization: Some(term.clone()),
    };
    let (r, _) = solve_spd(&system, 1e-13)?;
    let kr = stiffness.matvec(&r);
    let bnorm = crate::discretize::norm2(&system.rhs);
    let res: f64 = kr
        .iter()
        .zip(&system.rhs)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let residual = if bnorm > 0.0 { res / bnorm } else { res };
    let grad = (0..grid.n_cells()).map(|c| grid.cell_gradient(&r, c)).collect();
    Ok(PoissonOutcome {
        r,
        grad,
        residual,
        projected: mass.abs(),
    })
}

/// Solves the periodic Poisson problems defining `R` and `G`. Separable terms
/// need one solve per `τ` level; general terms one per `(τ, r)` sample.
pub fn build_potential(
    g: &ReactionTerm,
    dim: usize,
    n_y: usize,
    n_tau: usize,
    r_samples: &[f64],
) -> Result<VectorPotential> {
    let grid = StructuredGrid::periodic_unit(dim, n_y, None)?;
    let n_cells = grid.n_cells();
    if g.is_zero() {
        return Ok(VectorPotential {
            grid,
            n_tau,
            data: PotentialData::Zero,
            c_g: 0.0,
            laplacian_residual: 0.0,
            projected_mass: 0.0,
        });
    }
    let asm = Assembler::new(&grid);
    let k = asm.stiffness(&grid, |_| SmallMat::identity(dim))?;
    let weights = grid.lumped_weights(|_| 1.0);
    let term = RankOne::mean_constraint(&k, &weights);
    let coords: Vec<[f64; 3]> = (0..grid.n_dofs()).map(|d| grid.node_coords(grid.node_of(d))).collect();
    let tau_of = |n: usize| n as f64 / n_tau as f64;

    match g.state_function() {
        Some(state) => {
            let outcomes: Vec<PoissonOutcome> = (0..n_tau)
                .into_par_iter()
                .map(|n| {
                    let nodal: Vec<f64> = coords
                        .iter()
                        .map(|x| g.spatial(&x[..dim], tau_of(n)).unwrap_or(0.0))
                        .collect();
                    poisson(&grid, &k, &weights, &term, &nodal)
                })
                .collect::<Result<_>>()?;
            let g1_max = outcomes
                .iter()
                .flat_map(|o| o.grad.iter())
                .map(|v| norm3(v))
                .fold(0.0, f64::max);
            let ratio = r_samples
                .iter()
                .filter(|r| **r != 0.0)
                .map(|&r| (state.eval(r) / r).abs())
                .fold(state.derivative(0.0).abs(), f64::max);
            let laplacian_residual = outcomes.iter().map(|o| o.residual).fold(0.0, f64::max);
            let projected_mass = outcomes.iter().map(|o| o.projected).fold(0.0, f64::max);
            let (r, grad) = outcomes.into_iter().map(|o| (o.r, o.grad)).unzip();
            Ok(VectorPotential {
                grid,
                n_tau,
                data: PotentialData::Separable { state, r, grad },
                c_g: g1_max * ratio,
                laplacian_residual,
                projected_mass,
            })
        }
        None => {
            let mut r_grid = r_samples.to_vec();
            r_grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
            r_grid.dedup();
            if r_grid.len() < 2 {
                return Err(Error::InvalidInput("tabulated potentials need at least two r samples".into()));
            }
            let nr = r_grid.len();
            let outcomes: Vec<PoissonOutcome> = (0..n_tau * nr)
                .into_par_iter()
                .map(|idx| {
                    let (n, i) = (idx / nr, idx % nr);
                    let nodal: Vec<f64> =
                        coords.iter().map(|x| g.eval(&x[..dim], tau_of(n), r_grid[i])).collect();
                    poisson(&grid, &k, &weights, &term, &nodal)
                })
                .collect::<Result<_>>()?;
            let mut c_g = 0.0f64;
            let mut laplacian_residual = 0.0f64;
            let mut projected_mass = 0.0f64;
            let mut r_tab = vec![Vec::with_capacity(nr); n_tau];
            let mut g_tab = vec![Vec::with_capacity(nr); n_tau];
            for (idx, o) in outcomes.into_iter().enumerate() {
                let (n, i) = (idx / nr, idx % nr);
                laplacian_residual = laplacian_residual.max(o.residual);
                projected_mass = projected_mass.max(o.projected);
                if r_grid[i] != 0.0 {
                    let gmax = o.grad.iter().map(norm3).fold(0.0, f64::max);
                    c_g = c_g.max(gmax / r_grid[i].abs());
                }
                r_tab[n].push(o.r);
                g_tab[n].push(o.grad);
            }
            debug_assert!(g_tab.iter().all(|v| v.iter().all(|f| f.len() == n_cells)));
            Ok(VectorPotential {
                grid,
                n_tau,
                data: PotentialData::Tabulated {
                    r_grid,
                    r: r_tab,
                    grad: g_tab,
                },
                c_g,
                laplacian_residual,
                projected_mass,
            })
        }
    }
}

fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn bracket(r_grid: &[f64], r: f64) -> Result<(usize, f64)> {
    let (lo, hi) = (r_grid[0], *r_grid.last().unwrap());
    if !(r >= lo - 1e-12 * lo.abs().max(1.0) && r <= hi + 1e-12 * hi.abs().max(1.0)) {
        return Err(Error::OutOfRange {
            value: r,
            min: lo,
            max: hi,
        });
    }
    let i = r_grid.partition_point(|v| *v <= r).clamp(1, r_grid.len() - 1) - 1;
    let t = ((r - r_grid[i]) / (r_grid[i + 1] - r_grid[i])).clamp(0.0, 1.0);
    Ok((i, t))
}

impl VectorPotential {
    pub fn is_zero(&self) -> bool {
        matches!(self.data, PotentialData::Zero)
    }

    pub fn is_separable(&self) -> bool {
        matches!(self.data, PotentialData::Separable { .. })
    }

    /// Range of `r` supported by [`Self::g`] and [`dr_potential`].
    pub fn r_range(&self) -> (f64, f64) {
        match &self.data {
            PotentialData::Tabulated { r_grid, .. } => (r_grid[0], *r_grid.last().unwrap()),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// Nodal values of `R(·, τ_n, r)` on the full grid.
    pub fn potential(&self, n: usize, r: f64) -> Result<Vec<f64>> {
        match &self.data {
            PotentialData::Zero => Ok(vec![0.0; self.grid.n_dofs()]),
            PotentialData::Separable { state, r: rr, .. } => {
                let f = state.eval(r);
                Ok(rr[n].iter().map(|v| f * v).collect())
            }
            PotentialData::Tabulated { r_grid, r: rr, .. } => {
                let (i, t) = bracket(r_grid, r)?;
                Ok(rr[n][i]
                    .iter()
                    .zip(&rr[n][i + 1])
                    .map(|(a, b)| (1.0 - t) * a + t * b)
                    .collect())
            }
        }
    }

    /// Cell-center `G(·, τ_n, r)`.
    pub fn g(&self, n: usize, r: f64) -> Result<Vec<[f64; 3]>> {
        let n_cells = self.grid.n_cells();
        match &self.data {
            PotentialData::Zero => Ok(vec![[0.0; 3]; n_cells]),
            PotentialData::Separable { state, grad, .. } => {
                let f = state.eval(r);
                Ok(grad[n].iter().map(|v| [f * v[0], f * v[1], f * v[2]]).collect())
            }
            PotentialData::Tabulated { r_grid, grad, .. } => {
                let (i, t) = bracket(r_grid, r)?;
                Ok(grad[n][i]
                    .iter()
                    .zip(&grad[n][i + 1])
                    .map(|(a, b)| {
                        let mut v = [0.0; 3];
                        for k in 0..3 {
                            v[k] = (1.0 - t) * a[k] + t * b[k];
                        }
                        v
                    })
                    .collect())
            }
        }
    }
}

/// Cell-center `∂_r G(·, τ_n, r)`: exact `f'(r)` scaling for separable terms,
/// centered differences of the `r`-table otherwise.
pub fn dr_potential(pot: &VectorPotential, n: usize, r: f64) -> Result<Vec<[f64; 3]>> {
    let n_cells = pot.grid.n_cells();
    match &pot.data {
        PotentialData::Zero => Ok(vec![[0.0; 3]; n_cells]),
        PotentialData::Separable { state, grad, .. } => {
            let d = state.derivative(r);
            Ok(grad[n].iter().map(|v| [d * v[0], d * v[1], d * v[2]]).collect())
        }
        PotentialData::Tabulated { r_grid, grad, .. } => {
            let (i, t) = bracket(r_grid, r)?;
            let m = r_grid.len();
            // Centered difference at each table node, one-sided at the ends.
            let node_diff = |j: usize| -> Vec<[f64; 3]> {
                let (a, b) = if j == 0 {
                    (0, 1)
                } else if j == m - 1 {
                    (m - 2, m - 1)
                } else {
                    (j - 1, j + 1)
                };
                let h = r_grid[b] - r_grid[a];
                grad[n][b]
                    .iter()
                    .zip(&grad[n][a])
                    .map(|(p, q)| [(p[0] - q[0]) / h, (p[1] - q[1]) / h, (p[2] - q[2]) / h])
                    .collect()
            };
            let (d0, d1) = (node_diff(i), node_diff(i + 1));
            Ok(d0
                .iter()
                .zip(&d1)
                .map(|(a, b)| {
                    let mut v = [0.0; 3];
                    for k in 0..3 {
                        v[k] = (1.0 - t) * a[k] + t * b[k];
                    }
                    v
                })
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine_r() -> ReactionTerm {
        ReactionTerm::from_spec(
            &ReactionSpec {
                profile: SpatialProfile::Sine { axis: 0 },
                time_amplitude: 0.0,
                state: StateFunction::Linear { kappa: 1.0 },
                lipschitz: None,
            },
            2,
            1.0,
        )
    }

    #[test]
    fn sine_reaction_passes_validation() {
        let rep = validate_reaction(&sine_r(), &ValidationLattice::unbounded(2, 16, 4)).unwrap();
        assert!(rep.max_dr <= 1.0 + 1e-8);
        assert!(rep.max_at_zero == 0.0);
    }

    #[test]
    fn constant_mean_fails_a4() {
        let g = ReactionTerm::general(|_, _, r| r, 1.0);
        let err = validate_reaction(&g, &ValidationLattice::bounded(2, 8, 2, 1.0)).unwrap_err();
        assert!(matches!(err, Error::HypothesisViolation { hypothesis: "A4(i)", .. }));
    }

    #[test]
    fn quadratic_state_depends_on_range() {
        let spec = ReactionSpec {
            profile: SpatialProfile::Sine { axis: 0 },
            time_amplitude: 0.0,
            state: StateFunction::Quadratic { kappa: 1.0 },
            lipschitz: Some(2.0),
        };
        let g = ReactionTerm::from_spec(&spec, 2, 1.0);
        let err = validate_reaction(&g, &ValidationLattice::unbounded(2, 8, 2)).unwrap_err();
        assert!(matches!(err, Error::HypothesisViolation { hypothesis: "A2", .. }));
        assert!(validate_reaction(&g, &ValidationLattice::bounded(2, 8, 2, 1.0)).is_ok());
    }

    #[test]
    fn zero_reaction_has_zero_potential() {
        let p = build_potential(&ReactionTerm::zero(), 2, 8, 4, &[-1.0, 1.0]).unwrap();
        assert!(p.is_zero());
        assert!(p.g(2, 0.5).unwrap().iter().all(|v| *v == [0.0; 3]));
        assert_eq!(p.c_g, 0.0);
    }

    #[test]
    fn sine_potential_matches_fourier_solution() {
        let p = build_potential(&sine_r(), 2, 64, 1, &[-1.0, 1.0]).unwrap();
        let r = 0.7;
        let g = p.g(0, r).unwrap();
        let mut err = 0.0f64;
        for (c, v) in g.iter().enumerate() {
            let y = p.grid.cell_center(c);
            let exact = -r * (2.0 * PI * y[0]).cos() / (2.0 * PI);
            err = err.max((v[0] - exact).abs()).max(v[1].abs());
        }
        assert!(err < 5e-3 * r, "err {err}");
        assert!(p.laplacian_residual < 1e-10);
        assert!((p.c_g - 1.0 / (2.0 * PI)).abs() < 1e-2);
    }

    #[test]
    fn tabulated_derivative_matches_separable() {
        let sep = sine_r();
        let gen = ReactionTerm::general(|y, _, r| (2.0 * PI * y[0]).sin() * r, 1.0);
        let rs: Vec<f64> = (0..=8).map(|i| -1.0 + 0.25 * i as f64).collect();
        let a = build_potential(&sep, 2, 16, 2, &rs).unwrap();
        let b = build_potential(&gen, 2, 16, 2, &rs).unwrap();
        let da = dr_potential(&a, 1, 0.3).unwrap();
        let db = dr_potential(&b, 1, 0.3).unwrap();
        for (u, v) in da.iter().zip(&db) {
            assert!((u[0] - v[0]).abs() < 1e-9);
        }
        assert!(matches!(dr_potential(&b, 0, 2.0), Err(Error::OutOfRange { .. })));
    }
}
