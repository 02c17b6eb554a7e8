use serde::{Deserialize, Serialize};

use crate::cellgeo::{flood_fill_connected, Raster};
use crate::error::{Error, Result};

pub const NO_DOF: usize = usize::MAX;

/// Uniform tensor-product grid of boxes with optional periodic axes and an
/// active-cell mask. Nodes on non-periodic boundary faces are removed from
/// the dof set when `dirichlet` is set (homogeneous Dirichlet); otherwise the
/// masked weak form imposes the natural zero-flux condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructuredGrid {
    dim: usize,
    cells: Vec<usize>,
    lengths: Vec<f64>,
    periodic: Vec<bool>,
    dirichlet: bool,
    active: Vec<bool>,
    node_counts: Vec<usize>,
    node_dof: Vec<usize>,
    dof_node: Vec<usize>,
}

impl PartialEq for StructuredGrid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.cells == other.cells
            && self.lengths == other.lengths
            && self.periodic == other.periodic
            && self.dirichlet == other.dirichlet
            && self.active == other.active
    }
}

impl StructuredGrid {
    pub fn new(
        cells: &[usize],
        lengths: &[f64],
        periodic: &[bool],
        dirichlet: bool,
        active: Option<Vec<bool>>,
    ) -> Result<Self> {
        let dim = cells.len();
        if !(dim == 2 || dim == 3) || lengths.len() != dim || periodic.len() != dim {
            return Err(Error::InvalidInput(
                "grid needs 2 or 3 axes with matching lengths and periodicity flags".into(),
            ));
        }
        if cells.iter().any(|&n| n == 0) || lengths.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::InvalidInput("empty grid axis".into()));
        }
        let n_cells: usize = cells.iter().product();
        let active = active.unwrap_or_else(|| vec![true; n_cells]);
        if active.len() != n_cells {
            return Err(Error::GridMismatch(format!(
                "mask has {} entries for {n_cells} cells",
                active.len()
            )));
        }
        let node_counts: Vec<usize> = (0..dim)
            .map(|k| if periodic[k] { cells[k] } else { cells[k] + 1 })
            .collect();
        let n_nodes: usize = node_counts.iter().product();

        let mut grid = Self {
            dim,
            cells: cells.to_vec(),
            lengths: lengths.to_vec(),
            periodic: periodic.to_vec(),
            dirichlet,
            active,
            node_counts,
            node_dof: vec![NO_DOF; n_nodes],
            dof_node: Vec::new(),
        };

        let mut touched = vec![false; n_nodes];
        for c in 0..n_cells {
            if grid.active[c] {
                let (nodes, count) = grid.cell_nodes(c);
                for &n in &nodes[..count] {
                    touched[n] = true;
                }
            }
        }
        for (n, &t) in touched.iter().enumerate() {
            if t && !(dirichlet && grid.is_boundary_node(n)) {
                grid.node_dof[n] = grid.dof_node.len();
                grid.dof_node.push(n);
            }
        }
        Ok(grid)
    }

    /// Fully periodic unit cell `[0,1)^N` with `n` cells per axis.
    pub fn periodic_unit(dim: usize, n: usize, mask: Option<&Raster>) -> Result<Self> {
        if let Some(m) = mask {
            if m.dim != dim || m.n != n {
                return Err(Error::GridMismatch(format!(
                    "raster {}^{} does not match grid {n}^{dim}",
                    m.n, m.dim
                )));
            }
        }
        Self::new(
            &vec![n; dim],
            &vec![1.0; dim],
            &vec![true; dim],
            false,
            mask.map(|m| m.cells.clone()),
        )
    }

    /// Box `Π (0, L_k)` with homogeneous Dirichlet data on its boundary.
    pub fn dirichlet_box(cells: &[usize], lengths: &[f64], active: Option<Vec<bool>>) -> Result<Self> {
        Self::new(cells, lengths, &vec![false; cells.len()], true, active)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn cells(&self) -> &[usize] {
        &self.cells
    }
    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }
    pub fn periodic(&self) -> &[bool] {
        &self.periodic
    }
    pub fn is_dirichlet(&self) -> bool {
        self.dirichlet
    }
    pub fn n_cells(&self) -> usize {
        self.active.len()
    }
    pub fn n_nodes(&self) -> usize {
        self.node_dof.len()
    }
    pub fn n_dofs(&self) -> usize {
        self.dof_node.len()
    }
    pub fn node_counts(&self) -> &[usize] {
        &self.node_counts
    }
    pub fn active(&self) -> &[bool] {
        &self.active
    }
    pub fn is_active(&self, cell: usize) -> bool {
        self.active[cell]
    }
    pub fn n_active_cells(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn spacing(&self, k: usize) -> f64 {
        self.lengths[k] / self.cells[k] as f64
    }

    pub fn spacings(&self) -> [f64; 3] {
        let mut h = [0.0; 3];
        for k in 0..self.dim {
            h[k] = self.spacing(k);
        }
        h
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|k| self.spacing(k)).product()
    }

    pub fn dof_of(&self, node: usize) -> Option<usize> {
        let d = self.node_dof[node];
        (d != NO_DOF).then_some(d)
    }

    pub fn node_of(&self, dof: usize) -> usize {
        self.dof_node[dof]
    }

    pub fn node_dof_map(&self) -> &[usize] {
        &self.node_dof
    }

    pub fn cell_multi_index(&self, cell: usize) -> [usize; 3] {
        let mut idx = [0; 3];
        let mut rem = cell;
        for k in 0..self.dim {
            idx[k] = rem % self.cells[k];
            rem /= self.cells[k];
        }
        idx
    }

    pub fn node_multi_index(&self, node: usize) -> [usize; 3] {
        let mut idx = [0; 3];
        let mut rem = node;
        for k in 0..self.dim {
            idx[k] = rem % self.node_counts[k];
            rem /= self.node_counts[k];
        }
        idx
    }

    pub fn node_index(&self, idx: &[usize]) -> usize {
        let mut n = 0;
        let mut stride = 1;
        for k in 0..self.dim {
            n += idx[k] * stride;
            stride *= self.node_counts[k];
        }
        n
    }

    pub fn cell_index(&self, idx: &[usize]) -> usize {
        let mut n = 0;
        let mut stride = 1;
        for k in 0..self.dim {
            n += idx[k] * stride;
            stride *= self.cells[k];
        }
        n
    }

    pub fn cell_center(&self, cell: usize) -> [f64; 3] {
        let idx = self.cell_multi_index(cell);
        let mut x = [0.0; 3];
        for k in 0..self.dim {
            x[k] = (idx[k] as f64 + 0.5) * self.spacing(k);
        }
        x
    }

    pub fn node_coords(&self, node: usize) -> [f64; 3] {
        let idx = self.node_multi_index(node);
        let mut x = [0.0; 3];
        for k in 0..self.dim {
            x[k] = idx[k] as f64 * self.spacing(k);
        }
        x
    }

    /// Local nodes of a cell; local index `a` carries the axis-`k` offset in
    /// bit `k`. Returns the node array and the count `2^N`.
    pub fn cell_nodes(&self, cell: usize) -> ([usize; 8], usize) {
        let idx = self.cell_multi_index(cell);
        let count = 1 << self.dim;
        let mut out = [0; 8];
        for (a, slot) in out.iter_mut().enumerate().take(count) {
            let mut nidx = [0; 3];
            for k in 0..self.dim {
                let mut i = idx[k] + ((a >> k) & 1);
                if self.periodic[k] && i == self.cells[k] {
                    i = 0;
                }
                nidx[k] = i;
            }
            *slot = self.node_index(&nidx[..self.dim]);
        }
        (out, count)
    }

    pub fn is_boundary_node(&self, node: usize) -> bool {
        let idx = self.node_multi_index(node);
        (0..self.dim).any(|k| !self.periodic[k] && (idx[k] == 0 || idx[k] == self.cells[k]))
    }

    /// Flood fill over active cells respecting the grid periodicity.
    pub fn is_mask_connected(&self) -> bool {
        flood_fill_connected(&self.active, &self.cells, &self.periodic)
    }

    /// Lumped (trapezoidal) nodal weights `Σ_{active cells ∋ a} w(cell)·|cell|/2^N`.
    pub fn lumped_weights(&self, weight: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_dofs()];
        let share = self.cell_volume() / (1 << self.dim) as f64;
        for c in 0..self.n_cells() {
            if !self.active[c] {
                continue;
            }
            let w = weight(c) * share;
            let (nodes, count) = self.cell_nodes(c);
            for &n in &nodes[..count] {
                if let Some(d) = self.dof_of(n) {
                    out[d] += w;
                }
            }
        }
        out
    }

    /// Lumped weights over all nodes, including Dirichlet nodes.
    pub fn lumped_node_weights(&self, weight: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_nodes()];
        let share = self.cell_volume() / (1 << self.dim) as f64;
        for c in 0..self.n_cells() {
            if !self.active[c] {
                continue;
            }
            let w = weight(c) * share;
            let (nodes, count) = self.cell_nodes(c);
            for &n in &nodes[..count] {
                out[n] += w;
            }
        }
        out
    }

    /// Expands dof values to all nodes, filling non-dof nodes with zero.
    pub fn to_nodes(&self, dofs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_nodes()];
        for (d, &n) in self.dof_node.iter().enumerate() {
            out[n] = dofs[d];
        }
        out
    }

    pub fn from_nodes(&self, nodes: &[f64]) -> Vec<f64> {
        self.dof_node.iter().map(|&n| nodes[n]).collect()
    }

    /// Cell-center gradient of a nodal scalar field (exact cell average of the
    /// Q1 gradient). Nodes without a dof count as zero.
    pub fn cell_gradient(&self, dofs: &[f64], cell: usize) -> [f64; 3] {
        let (nodes, count) = self.cell_nodes(cell);
        let h = self.spacings();
        let scale = 1.0 / (1 << (self.dim - 1)) as f64;
        let mut g = [0.0; 3];
        for (a, &n) in nodes[..count].iter().enumerate() {
            let u = self.dof_of(n).map_or(0.0, |d| dofs[d]);
            for k in 0..self.dim {
                let sign = if (a >> k) & 1 == 1 { 1.0 } else { -1.0 };
                g[k] += sign * u * scale / h[k];
            }
        }
        g
    }

    /// Evaluates the Q1 interpolant of full nodal values at a physical point.
    /// Periodic axes wrap; points outside non-periodic axes are clamped.
    pub fn interpolate_nodes(&self, nodes: &[f64], x: &[f64]) -> f64 {
        let (base, frac) = self.locate(x);
        let mut v = 0.0;
        for a in 0..(1 << self.dim) {
            let mut w = 1.0;
            let mut nidx = [0; 3];
            for k in 0..self.dim {
                let bit = (a >> k) & 1;
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                let mut i = base[k] + bit;
                if self.periodic[k] && i == self.cells[k] {
                    i = 0;
                }
                nidx[k] = i;
            }
            if w != 0.0 {
                v += w * nodes[self.node_index(&nidx[..self.dim])];
            }
        }
        v
    }

    /// Cell containing `x` and the local coordinates in `[0,1]^N`.
    pub fn locate(&self, x: &[f64]) -> ([usize; 3], [f64; 3]) {
        let mut base = [0; 3];
        let mut frac = [0.0; 3];
        for k in 0..self.dim {
            let mut s = x[k] / self.spacing(k);
            if self.periodic[k] {
                let n = self.cells[k] as f64;
                s -= (s / n).floor() * n;
            }
            let n = self.cells[k];
            let i = (s.floor().max(0.0) as usize).min(n - 1);
            base[k] = i;
            frac[k] = (s - i as f64).clamp(0.0, 1.0);
        }
        (base, frac)
    }
}
