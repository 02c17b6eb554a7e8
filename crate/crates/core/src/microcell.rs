use std::collections::HashMap;
use std::sync::Arc;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cellgeo::CellGeometry;
use crate::coefficients::CoefficientData;
use crate::discretize::{
    gradient_load, norm2, solve_spd, Assembler, RankOne, SparseSystem, StructuredGrid,
};
use crate::error::{Error, Result};
use crate::tensor::SmallMat;

/// Relative asymmetry accepted before `Ã` is symmetrized.
pub const PORE_ASYMMETRY_TOL: f64 = 1e-8;
const SOLVE_TOL: f64 = 1e-13;
const KEY_GRANULARITY: f64 = 1e-14;

/// Correctors `χ^j` of the pore-cell problem for one constant matrix.
/// They are computed for `M / (tr M / N)`, which leaves them unchanged.
#[derive(Debug, Clone)]
pub struct MicroCorrector {
    pub grid: Arc<StructuredGrid>,
    /// Normalized matrix the correctors were computed for.
    pub matrix: SmallMat,
    /// `chi[j]` over the dofs of `grid`, zero mean over `Z_s`.
    pub chi: Vec<Vec<f64>>,
    /// Relative weak-form residual of each solve.
    pub residuals: Vec<f64>,
}

/// `Ã` and `B̃` at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoreTensors {
    pub a_tilde: SmallMat,
    pub b_tilde: SmallMat,
    /// Asymmetry of `Ã` (relative to its largest entry) before symmetrization.
    pub asymmetry: f64,
}

fn normalize(m: &SmallMat) -> (SmallMat, f64) {
    let s = m.trace() / m.dim as f64;
    (m.scale(1.0 / s), s)
}

/// Masked periodic grid of the solid part `Z_s`.
pub fn micro_grid(geom: &CellGeometry) -> Result<StructuredGrid> {
    let grid = StructuredGrid::periodic_unit(geom.dim, geom.solid.n, Some(&geom.solid))?;
    if !grid.is_mask_connected() {
        return Err(Error::Disconnected {
            phase: "pore cell solid Z_s",
        });
    }
    Ok(grid)
}

/// Solves `∫_{Z_s} M ∇χ^j·∇w = −∫_{Z_s} M e_j·∇w` for all `w` periodic on
/// `Z`, with `∫_{Z_s} χ^j = 0`.
pub fn solve_micro(m: &SmallMat, geom: &CellGeometry) -> Result<MicroCorrector> {
    let grid = Arc::new(micro_grid(geom)?);
    solve_micro_on(m, &grid)
}

fn solve_micro_on(m: &SmallMat, grid: &Arc<StructuredGrid>) -> Result<MicroCorrector> {
    let dim = grid.dim();
    if m.dim != dim || !m.is_spd(crate::discretize::assembly::SPD_TOL) {
        return Err(Error::NotSpd { cell: 0 });
    }
    let (mn, _) = normalize(m);
    let asm = Assembler::new(grid);
    let k = asm.scaled_stiffness(grid, &mn, |_| 1.0)?;
    let weights = grid.lumped_weights(|_| 1.0);
    let total: f64 = weights.iter().sum();
    let term = RankOne::mean_constraint(&k, &weights);
    let solved: Vec<(Vec<f64>, f64)> = (0..dim)
        .into_par_iter()
        .map(|j| {
            let col = [mn.m[0][j], mn.m[1][j], mn.m[2][j]];
            let rhs: Vec<f64> = gradient_load(grid, &asm.element, |_| col)
                .into_iter()
                .map(|v| -v)
                .collect();
            let system = SparseSystem {
                matrix: k.clone(),
                rhs,
                stabilization: Some(term.clone()),
            };
            let (mut chi, _) = solve_spd(&system, SOLVE_TOL)?;
            let mean = chi.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>() / total;
            chi.iter_mut().for_each(|v| *v -= mean);
            let r = k.matvec(&chi);
            let bn = norm2(&system.rhs);
            let res = norm2(
                &r.iter().zip(&system.rhs).map(|(a, b)| a - b).collect::<Vec<_>>(),
            );
            Ok((chi, if bn > 0.0 { res / bn } else { res }))
        })
        .collect::<Result<_>>()?;
    let (chi, residuals) = solved.into_iter().unzip();
    Ok(MicroCorrector {
        grid: grid.clone(),
        matrix: mn,
        chi,
        residuals,
    })
}

/// `Ã = ∫_{Z_s} M(I + ∇χ)` and `B̃ = ∫_{Z_s}(I + ∇χ)` with
/// `(∇χ)_{kj} = ∂_k χ^j`.
pub fn assemble_pore_tensors(m: &SmallMat, corr: &MicroCorrector) -> Result<PoreTensors> {
    let grid = &corr.grid;
    let dim = grid.dim();
    let vol = grid.cell_volume();
    // B̃ first: it does not depend on the scale of M.
    let mut b = SmallMat::zeros(dim);
    for c in 0..grid.n_cells() {
        if !grid.is_active(c) {
            continue;
        }
        for j in 0..dim {
            let g = grid.cell_gradient(&corr.chi[j], c);
            for k in 0..dim {
                b.m[k][j] += vol * (if k == j { 1.0 } else { 0.0 } + g[k]);
            }
        }
    }
    let a = m.mul(&b);
    let asymmetry = a.asymmetry() / a.max_abs();
    if asymmetry > PORE_ASYMMETRY_TOL {
        return Err(Error::Asymmetric {
            asymmetry,
            tolerance: PORE_ASYMMETRY_TOL,
        });
    }
    let a_tilde = a.symmetrized();
    let min_eig = a_tilde.min_eigenvalue_sym();
    if !(min_eig > 0.0) {
        return Err(Error::EffectiveNotSpd {
            min_eigenvalue: min_eig,
        });
    }
    Ok(PoreTensors {
        a_tilde,
        b_tilde: b,
        asymmetry,
    })
}

/// Convenience: corrector solve followed by tensor assembly.
pub fn pore_tensors(m: &SmallMat, geom: &CellGeometry) -> Result<PoreTensors> {
    let corr = solve_micro(m, geom)?;
    assemble_pore_tensors(m, &corr)
}

/// Micro-solve cache statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub lookups: usize,
    pub solves: usize,
    pub hits: usize,
}

/// `Ã`, `B̃` at every fracture-cell grid cell and `τ` level
/// (`τ_n = n / n_tau`); entries outside `Y_m` are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoreTensorTable {
    pub dim: usize,
    pub n_y: usize,
    pub n_tau: usize,
    pub zs_measure: f64,
    /// Active fracture-cell grid cells (the matrix part `Y_m`).
    pub active: Vec<bool>,
    /// Indexed `n * n_y^N + cell`.
    pub entries: Vec<PoreTensors>,
    pub stats: CacheStats,
    pub max_residual: f64,
    pub max_asymmetry: f64,
}

impl PoreTensorTable {
    pub fn n_cells(&self) -> usize {
        self.active.len()
    }

    pub fn get(&self, n: usize, cell: usize) -> &PoreTensors {
        &self.entries[n * self.n_cells() + cell]
    }

    /// Rows `(y-index, τ-index, Ã row-major, B̃ row-major)` for active cells.
    pub fn to_csv(&self) -> String {
        let d2 = self.dim * self.dim;
        let mut header = vec!["y_index".to_string(), "tau_index".to_string()];
        header.extend((0..d2).map(|k| format!("a{}{}", k / self.dim, k % self.dim)));
        header.extend((0..d2).map(|k| format!("b{}{}", k / self.dim, k % self.dim)));
        let mut out = header.join(",");
        out.push('\n');
        for n in 0..self.n_tau {
            for c in 0..self.n_cells() {
                if !self.active[c] {
                    continue;
                }
                let e = self.get(n, c);
                let mut row = vec![c.to_string(), n.to_string()];
                row.extend(e.a_tilde.row_major().iter().map(|v| format!("{v:e}")));
                row.extend(e.b_tilde.row_major().iter().map(|v| format!("{v:e}")));
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
        out
    }
}

type Key = Vec<i64>;

fn key_of(m: &SmallMat) -> Key {
    let (mn, _) = normalize(m);
    mn.row_major()
        .iter()
        .map(|v| (v / KEY_GRANULARITY).round() as i64)
        .collect()
}

/// Tabulates pore tensors over the fracture-cell grid (`n_y` per axis, cell
/// centers) and `n_tau` time levels. Micro solves are keyed by the
/// normalized matrix value, so coefficients that differ by a scalar factor
/// share one solve.
pub fn tabulate_pore_tensors(
    coeffs: &CoefficientData,
    geom: &CellGeometry,
    n_tau: usize,
) -> Result<PoreTensorTable> {
    let dim = geom.dim;
    let n_y = geom.matrix.n;
    let micro = Arc::new(micro_grid(geom)?);
    let ygrid = StructuredGrid::periodic_unit(dim, n_y, Some(&geom.matrix))?;
    let n_cells = ygrid.n_cells();
    let active = ygrid.active().to_vec();

    let mut values = Vec::with_capacity(n_tau * n_cells);
    let mut order: Vec<Key> = Vec::new();
    let mut slot: HashMap<Key, usize> = HashMap::new();
    let mut which = vec![usize::MAX; n_tau * n_cells];
    let mut lookups = 0;
    for n in 0..n_tau {
        let tau = n as f64 / n_tau as f64;
        for c in 0..n_cells {
            let m = coeffs.a(dim, &ygrid.cell_center(c)[..dim], tau);
            values.push(m);
            if !active[c] {
                continue;
            }
            lookups += 1;
            let key = key_of(&m);
            let next = order.len();
            let s = *slot.entry(key.clone()).or_insert_with(|| {
                order.push(key);
                next
            });
            which[n * n_cells + c] = s;
        }
    }
    // Representative matrix for each distinct key, in first-occurrence order.
    let mut reps: Vec<Option<SmallMat>> = vec![None; order.len()];
    for (i, &s) in which.iter().enumerate() {
        if s != usize::MAX && reps[s].is_none() {
            reps[s] = Some(values[i]);
        }
    }
    let correctors: Vec<MicroCorrector> = reps
        .par_iter()
        .map(|m| solve_micro_on(m.as_ref().expect("representative"), &micro))
        .collect::<Result<_>>()?;
    let stats = CacheStats {
        lookups,
        solves: correctors.len(),
        hits: lookups - correctors.len(),
    };
    debug!(
        "pore tensors: {} lookups, {} micro solves, {} cache hits",
        stats.lookups, stats.solves, stats.hits
    );
    let max_residual = correctors
        .iter()
        .flat_map(|c| c.residuals.iter().copied())
        .fold(0.0, f64::max);

    // Ã(M) = s·Ã(M/s) with the normalized corrector; B̃ is shared.
    let base: Vec<PoreTensors> = correctors
        .iter()
        .map(|c| assemble_pore_tensors(&c.matrix, c))
        .collect::<Result<_>>()?;
    let zero = PoreTensors {
        a_tilde: SmallMat::zeros(dim),
        b_tilde: SmallMat::zeros(dim),
        asymmetry: 0.0,
    };
    let mut max_asymmetry = 0.0f64;
    let entries: Vec<PoreTensors> = which
        .iter()
        .zip(&values)
        .map(|(&s, m)| {
            if s == usize::MAX {
                return Ok(zero);
            }
            let corr = &correctors[s];
            // Exact scalar multiples reuse the normalized result; otherwise
            // (values equal only to key granularity) assemble with M itself.
            let (mn, scale) = normalize(m);
            let t = if mn == corr.matrix {
                PoreTensors {
                    a_tilde: base[s].a_tilde.scale(scale),
                    ..base[s]
                }
            } else {
                assemble_pore_tensors(m, corr)?
            };
            max_asymmetry = max_asymmetry.max(t.asymmetry);
            Ok(t)
        })
        .collect::<Result<_>>()?;
    Ok(PoreTensorTable {
        dim,
        n_y,
        n_tau,
        zs_measure: geom.zs_measure,
        active,
        entries,
        stats,
        max_residual,
        max_asymmetry,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cellgeo::{build_cell_geometry, GeometrySpec, ShapeSpec};
    use crate::coefficients::{DensityPreset, DiffusionPreset};

    fn geom(pores: Vec<ShapeSpec>, n_z: usize) -> CellGeometry {
        build_cell_geometry(&GeometrySpec {
            dim: 2,
            fractures: vec![],
            trivial_medium: pores.is_empty(),
            pores,
            n_y: 8,
            n_z,
        })
        .unwrap()
    }

    #[test]
    fn full_cell_gives_zero_corrector() {
        let g = geom(vec![], 8);
        let m = SmallMat::from_row_major(&[2.0, 0.3, 0.3, 1.0]);
        let t = pore_tensors(&m, &g).unwrap();
        assert!(t.a_tilde.max_abs_diff(&m) < 1e-12);
        assert!(t.b_tilde.max_abs_diff(&SmallMat::identity(2)) < 1e-12);
    }

    #[test]
    fn square_pore_is_isotropic_and_bounded() {
        let g = geom(vec![ShapeSpec::centered_box(2, 0.5)], 32);
        let t = pore_tensors(&SmallMat::identity(2), &g).unwrap();
        let a = t.a_tilde;
        assert!(a.get(0, 1).abs() < 1e-10);
        assert!((a.get(0, 0) - a.get(1, 1)).abs() < 1e-10);
        // Between the series and parallel arrangements of the two phases.
        assert!(a.get(0, 0) < 0.75 && a.get(0, 0) > 0.5);
    }

    #[test]
    fn tabulation_caches_scalar_multiples() {
        let g = geom(vec![ShapeSpec::centered_box(2, 0.5)], 16);
        let coeffs = CoefficientData {
            diffusion: DiffusionPreset::Trigonometric {
                base: 1.0,
                amplitude: 0.5,
                time_amplitude: 0.5,
                anisotropy: Some(vec![1.0, 2.0]),
            },
            density: DensityPreset::default(),
        };
        let table = tabulate_pore_tensors(&coeffs, &g, 4).unwrap();
        assert_eq!(table.stats.solves, 1);
        assert_eq!(table.stats.lookups, 4 * 64);
        let single = pore_tensors(&coeffs.a(2, &[0.1875, 0.1875], 0.25), &g).unwrap();
        let cell = 1 + 8;
        assert!(table.get(1, cell).a_tilde.max_abs_diff(&single.a_tilde) < 1e-12);
    }
}
