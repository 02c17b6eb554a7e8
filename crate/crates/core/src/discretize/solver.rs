use rayon::prelude::*;

use crate::error::{Error, Result};

const CHUNK: usize = 4096;

use super::sparse::{dot, norm2, CsrMatrix};

/// Default relative residual for linear solves.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Rank-one term `σ (w·u)(w·v)` with unit `w`.
#[derive(Debug, Clone)]
pub struct RankOne {
    pub sigma: f64,
    pub w: Vec<f64>,
}

impl RankOne {
    /// Stabilization fixing the weighted mean `weights · u`, scaled by the
    /// mean diagonal of `matrix`.
    pub fn mean_constraint(matrix: &CsrMatrix, weights: &[f64]) -> Self {
        let norm = norm2(weights);
        let w = weights.iter().map(|x| x / norm).collect();
        let diag = matrix.diagonal();
        let sigma = diag.iter().sum::<f64>() / diag.len().max(1) as f64;
        Self { sigma, w }
    }
}

/// Symmetric sparse system with an optional rank-one stabilization.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub stabilization: Option<RankOne>,
}

/// Outcome of a converged solve.
#[derive(Debug, Clone, Default)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
}

/// Matrix-free symmetric operator.
pub trait LinearOperator {
    fn size(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn diagonal(&self) -> Vec<f64>;
}

impl LinearOperator for CsrMatrix {
    fn size(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec_into(x, y);
    }
    fn diagonal(&self) -> Vec<f64> {
        CsrMatrix::diagonal(self)
    }
}

/// `A + σ w wᵀ`.
pub struct Stabilized<'a> {
    pub matrix: &'a CsrMatrix,
    pub term: &'a RankOne,
}

impl LinearOperator for Stabilized<'_> {
    fn size(&self) -> usize {
        self.matrix.n
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matrix.matvec_into(x, y);
        let s = self.term.sigma * dot(&self.term.w, x);
        for (yi, wi) in y.iter_mut().zip(&self.term.w) {
            *yi += s * wi;
        }
    }
    fn diagonal(&self) -> Vec<f64> {
        let mut d = CsrMatrix::diagonal(self.matrix);
        for (di, wi) in d.iter_mut().zip(&self.term.w) {
            *di += self.term.sigma * wi * wi;
        }
        d
    }
}

/// Jacobi-preconditioned conjugate gradients. `x` holds the initial guess on
/// entry and the solution on exit.
pub fn pcg(
    op: &impl LinearOperator,
    rhs: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<SolveReport> {
    let n = op.size();
    let bnorm = norm2(rhs);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveReport::default());
    }
    let inv_diag: Vec<f64> = op
        .diagonal()
        .iter()
        .map(|d| if *d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = vec![0.0; n];
    op.apply(x, &mut r);
    for i in 0..n {
        r[i] = rhs[i] - r[i];
    }
    let mut res = norm2(&r) / bnorm;
    let mut history = vec![res];
    if res <= tol {
        return Ok(SolveReport {
            iterations: 0,
            residual: res,
        });
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        op.apply(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            break;
        }
        let alpha = rz / pq;
        res = update_residual(x, &mut r, &p, &q, alpha).sqrt() / bnorm;
        history.push(res);
        if res <= tol {
            return Ok(SolveReport {
                iterations: it,
                residual: res,
            });
        }
        let rz_new = precondition(&r, &inv_diag, &mut z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NonConvergence {
        iterations: history.len() - 1,
        residual: res,
        history,
    })
}

/// `x += αp`, `r -= αq`; returns `|r|²` summed in fixed chunks.
fn update_residual(x: &mut [f64], r: &mut [f64], p: &[f64], q: &[f64], alpha: f64) -> f64 {
    let partial: Vec<f64> = x
        .par_chunks_mut(CHUNK)
        .zip(r.par_chunks_mut(CHUNK))
        .zip(p.par_chunks(CHUNK).zip(q.par_chunks(CHUNK)))
        .map(|((x, r), (p, q))| {
            let mut s = 0.0;
            for i in 0..x.len() {
                x[i] += alpha * p[i];
                r[i] -= alpha * q[i];
                s += r[i] * r[i];
            }
            s
        })
        .collect();
    partial.iter().sum()
}

/// `z = D⁻¹r`; returns `r·z` summed in fixed chunks.
fn precondition(r: &[f64], inv_diag: &[f64], z: &mut [f64]) -> f64 {
    let partial: Vec<f64> = z
        .par_chunks_mut(CHUNK)
        .zip(r.par_chunks(CHUNK).zip(inv_diag.par_chunks(CHUNK)))
        .map(|(z, (r, d))| {
            let mut s = 0.0;
            for i in 0..z.len() {
                z[i] = r[i] * d[i];
                s += r[i] * z[i];
            }
            s
        })
        .collect();
    partial.iter().sum()
}

pub fn default_max_iter(n: usize) -> usize {
    (10 * n).max(2000)
}

/// Solves the system to relative residual `tol`.
pub fn solve_spd(system: &SparseSystem, tol: f64) -> Result<(Vec<f64>, SolveReport)> {
    let n = system.matrix.n;
    let mut x = vec![0.0; n];
    let report = match &system.stabilization {
        Some(term) => pcg(
            &Stabilized {
                matrix: &system.matrix,
                term,
            },
            &system.rhs,
            &mut x,
            tol,
            default_max_iter(n),
        )?,
        None => pcg(&system.matrix, &system.rhs, &mut x, tol, default_max_iter(n))?,
    };
    Ok((x, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::assembly::assemble_stiffness;
    use crate::discretize::grid::StructuredGrid;
    use crate::tensor::SmallMat;

    #[test]
    fn solves_dirichlet_poisson() {
        let g = StructuredGrid::dirichlet_box(&[16, 16], &[1.0, 1.0], None).unwrap();
        let k = assemble_stiffness(&g, |_| SmallMat::identity(2)).unwrap();
        let w = g.lumped_weights(|_| 1.0);
        let sys = SparseSystem {
            matrix: k.clone(),
            rhs: w.clone(),
            stabilization: None,
        };
        let (x, rep) = solve_spd(&sys, 1e-12).unwrap();
        let r = k.matvec(&x);
        let res: f64 = r.iter().zip(&w).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(res <= 1e-11 * norm2(&w));
        assert!(rep.iterations > 0);
        // Determinism.
        let (x2, _) = solve_spd(&sys, 1e-12).unwrap();
        assert_eq!(x, x2);
    }

    #[test]
    fn rank_one_stabilization_fixes_the_mean() {
        let g = StructuredGrid::periodic_unit(2, 16, None).unwrap();
        let k = assemble_stiffness(&g, |_| SmallMat::identity(2)).unwrap();
        let w = g.lumped_weights(|_| 1.0);
        let rhs: Vec<f64> = (0..g.n_dofs())
            .map(|d| {
                let x = g.node_coords(g.node_of(d));
                (2.0 * std::f64::consts::PI * x[0]).sin() * w[d]
            })
            .collect();
        let term = RankOne::mean_constraint(&k, &w);
        let sys = SparseSystem {
            matrix: k,
            rhs,
            stabilization: Some(term),
        };
        let (x, _) = solve_spd(&sys, 1e-12).unwrap();
        assert!(dot(&x, &w).abs() < 1e-12);
    }

    #[test]
    fn non_convergence_carries_history() {
        let g = StructuredGrid::dirichlet_box(&[32, 32], &[1.0, 1.0], None).unwrap();
        let k = assemble_stiffness(&g, |_| SmallMat::identity(2)).unwrap();
        let rhs = vec![1.0; k.n];
        let mut x = vec![0.0; k.n];
        match pcg(&k, &rhs, &mut x, 1e-14, 3) {
            Err(Error::NonConvergence { history, iterations, .. }) => {
                assert_eq!(iterations, 3);
                assert_eq!(history.len(), 4);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
