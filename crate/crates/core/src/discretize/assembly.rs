use crate::error::{Error, Result};
use crate::tensor::SmallMat;

use super::grid::{StructuredGrid, NO_DOF};
use super::sparse::CsrMatrix;

/// SPD tolerance applied to cell coefficients during assembly.
pub const SPD_TOL: f64 = 1e-12;

/// Integrals of Q1 shape functions over one box cell with the given spacing.
/// Local node `a` carries the axis-`k` offset in bit `k`.
#[derive(Debug, Clone)]
pub struct RefElement {
    pub dim: usize,
    pub nloc: usize,
    /// `∫ ∂_k φ_a`.
    pub grad_int: [[f64; 8]; 3],
    /// `∫ ∂_i φ_a ∂_j φ_b`, indexed `[i][j][a][b]`.
    pub stiff: [[[[f64; 8]; 8]; 3]; 3],
    /// `∫ φ_b ∂_k φ_a`, indexed `[k][a][b]`.
    pub conv: [[[f64; 8]; 8]; 3],
    pub volume: f64,
}

impl RefElement {
    pub fn new(dim: usize, h: &[f64]) -> Self {
        let nloc = 1 << dim;
        let g = 0.5 / 3f64.sqrt();
        let gauss = [0.5 - g, 0.5 + g];
        let volume: f64 = h[..dim].iter().product();
        let mut out = Self {
            dim,
            nloc,
            grad_int: [[0.0; 8]; 3],
            stiff: [[[[0.0; 8]; 8]; 3]; 3],
            conv: [[[0.0; 8]; 8]; 3],
            volume,
        };
        // 2-point Gauss per axis is exact for all products used here.
        let npts = 1 << dim;
        let w = volume / npts as f64;
        for q in 0..npts {
            let mut xi = [0.0; 3];
            for k in 0..dim {
                xi[k] = gauss[(q >> k) & 1];
            }
            let mut phi = [0.0; 8];
            let mut dphi = [[0.0; 8]; 3];
            for a in 0..nloc {
                let mut p = 1.0;
                for k in 0..dim {
                    p *= if (a >> k) & 1 == 1 { xi[k] } else { 1.0 - xi[k] };
                }
                phi[a] = p;
                for k in 0..dim {
                    let mut d = if (a >> k) & 1 == 1 { 1.0 } else { -1.0 } / h[k];
                    for m in 0..dim {
                        if m != k {
                            d *= if (a >> m) & 1 == 1 { xi[m] } else { 1.0 - xi[m] };
                        }
                    }
                    dphi[k][a] = d;
                }
            }
            for k in 0..dim {
                for a in 0..nloc {
                    out.grad_int[k][a] += w * dphi[k][a];
                    for b in 0..nloc {
                        out.conv[k][a][b] += w * phi[b] * dphi[k][a];
                    }
                }
            }
            for i in 0..dim {
                for j in 0..dim {
                    for a in 0..nloc {
                        for b in 0..nloc {
                            out.stiff[i][j][a][b] += w * dphi[i][a] * dphi[j][b];
                        }
                    }
                }
            }
        }
        out
    }

    pub fn for_grid(grid: &StructuredGrid) -> Self {
        Self::new(grid.dim(), &grid.spacings()[..grid.dim()])
    }

    /// Element matrix `∫ M ∇φ_b · ∇φ_a` for a cell-constant `M`.
    pub fn stiffness(&self, m: &SmallMat, out: &mut [[f64; 8]; 8]) {
        for row in out.iter_mut() {
            *row = [0.0; 8];
        }
        for i in 0..self.dim {
            for j in 0..self.dim {
                let mij = m.m[i][j];
                if mij == 0.0 {
                    continue;
                }
                for a in 0..self.nloc {
                    for b in 0..self.nloc {
                        out[a][b] += mij * self.stiff[i][j][a][b];
                    }
                }
            }
        }
    }
}

/// Sparsity pattern of the Q1 operator on a grid, with the CSR slot of every
/// local `(a, b)` pair of every active cell. Slots of pairs touching a
/// non-dof node hold `NO_DOF`.
#[derive(Debug, Clone)]
pub struct Assembler {
    pub element: RefElement,
    pattern: CsrMatrix,
    slots: Vec<usize>,
}

impl Assembler {
    pub fn new(grid: &StructuredGrid) -> Self {
        let element = RefElement::for_grid(grid);
        let nloc = element.nloc;
        let n = grid.n_dofs();
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for c in 0..grid.n_cells() {
            if !grid.is_active(c) {
                continue;
            }
            let (nodes, _) = grid.cell_nodes(c);
            for a in 0..nloc {
                let Some(da) = grid.dof_of(nodes[a]) else { continue };
                for b in 0..nloc {
                    if let Some(db) = grid.dof_of(nodes[b]) {
                        rows[da].push(db);
                    }
                }
            }
        }
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        for (i, r) in rows.iter_mut().enumerate() {
            r.push(i);
            r.sort_unstable();
            r.dedup();
            col_idx.extend_from_slice(r);
            row_ptr.push(col_idx.len());
        }
        let pattern = CsrMatrix {
            n,
            values: vec![0.0; col_idx.len()],
            row_ptr,
            col_idx,
        };

        let mut slots = vec![NO_DOF; grid.n_cells() * nloc * nloc];
        for c in 0..grid.n_cells() {
            if !grid.is_active(c) {
                continue;
            }
            let (nodes, _) = grid.cell_nodes(c);
            for a in 0..nloc {
                let Some(da) = grid.dof_of(nodes[a]) else { continue };
                let row = &pattern.col_idx[pattern.row_ptr[da]..pattern.row_ptr[da + 1]];
                for b in 0..nloc {
                    if let Some(db) = grid.dof_of(nodes[b]) {
                        let p = row.binary_search(&db).expect("pattern entry");
                        slots[(c * nloc + a) * nloc + b] = pattern.row_ptr[da] + p;
                    }
                }
            }
        }
        Self {
            element,
            pattern,
            slots,
        }
    }

    pub fn pattern(&self) -> &CsrMatrix {
        &self.pattern
    }

    /// Assembles `∫ M(cell) ∇u · ∇v`; every active cell's tensor must be SPD.
    pub fn stiffness(
        &self,
        grid: &StructuredGrid,
        coef: impl Fn(usize) -> SmallMat,
    ) -> Result<CsrMatrix> {
        let nloc = self.element.nloc;
        let mut values = vec![0.0; self.pattern.nnz()];
        let mut ke = [[0.0; 8]; 8];
        for c in 0..grid.n_cells() {
            if !grid.is_active(c) {
                continue;
            }
            let m = coef(c);
            if !m.is_spd(SPD_TOL) {
                return Err(Error::NotSpd { cell: c });
            }
            self.element.stiffness(&m, &mut ke);
            let base = c * nloc * nloc;
            for a in 0..nloc {
                for b in 0..nloc {
                    let s = self.slots[base + a * nloc + b];
                    if s != NO_DOF {
                        values[s] += ke[a][b];
                    }
                }
            }
        }
        Ok(self.pattern.with_values(values))
    }

    /// Stiffness for a scalar multiple of a fixed tensor per cell,
    /// `∫ s(cell) M ∇u·∇v`. Skips the per-cell SPD test (checked once).
    pub fn scaled_stiffness(
        &self,
        grid: &StructuredGrid,
        m: &SmallMat,
        scale: impl Fn(usize) -> f64,
    ) -> Result<CsrMatrix> {
        if !m.is_spd(SPD_TOL) {
            return Err(Error::NotSpd { cell: 0 });
        }
        let nloc = self.element.nloc;
        let mut ke = [[0.0; 8]; 8];
        self.element.stiffness(m, &mut ke);
        let mut values = vec![0.0; self.pattern.nnz()];
        for c in 0..grid.n_cells() {
            if !grid.is_active(c) {
                continue;
            }
            let s = scale(c);
            if !(s > 0.0) {
                return Err(Error::NotSpd { cell: c });
            }
            let base = c * nloc * nloc;
            for a in 0..nloc {
                for b in 0..nloc {
                    let slot = self.slots[base + a * nloc + b];
                    if slot != NO_DOF {
                        values[slot] += s * ke[a][b];
                    }
                }
            }
        }
        Ok(self.pattern.with_values(values))
    }
}

/// `∫ M ∇u · ∇v` on the grid's active cells.
pub fn assemble_stiffness(
    grid: &StructuredGrid,
    coef: impl Fn(usize) -> SmallMat,
) -> Result<CsrMatrix> {
    Assembler::new(grid).stiffness(grid, coef)
}

/// Load vector `b_a = ∫ v(cell) · ∇φ_a` for a cell-constant vector field.
pub fn gradient_load(
    grid: &StructuredGrid,
    element: &RefElement,
    v: impl Fn(usize) -> [f64; 3],
) -> Vec<f64> {
    let mut b = vec![0.0; grid.n_dofs()];
    for c in 0..grid.n_cells() {
        if !grid.is_active(c) {
            continue;
        }
        let vc = v(c);
        let (nodes, count) = grid.cell_nodes(c);
        for a in 0..count {
            if let Some(d) = grid.dof_of(nodes[a]) {
                let mut s = 0.0;
                for k in 0..grid.dim() {
                    s += vc[k] * element.grad_int[k][a];
                }
                b[d] += s;
            }
        }
    }
    b
}

/// Load vector `b_a = ∫ F_h · ∇φ_a` where `F_h` is the Q1 interpolant of a
/// nodal vector field given on all nodes (`flux[k][node]`).
pub fn flux_divergence_load(
    grid: &StructuredGrid,
    element: &RefElement,
    flux: &[Vec<f64>],
) -> Vec<f64> {
    let mut b = vec![0.0; grid.n_dofs()];
    for c in 0..grid.n_cells() {
        if !grid.is_active(c) {
            continue;
        }
        let (nodes, count) = grid.cell_nodes(c);
        for a in 0..count {
            let Some(d) = grid.dof_of(nodes[a]) else { continue };
            let mut s = 0.0;
            for (k, fk) in flux.iter().enumerate().take(grid.dim()) {
                for bb in 0..count {
                    s += element.conv[k][a][bb] * fk[nodes[bb]];
                }
            }
            b[d] += s;
        }
    }
    b
}
