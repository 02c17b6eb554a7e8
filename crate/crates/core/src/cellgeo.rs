//! Periodic unit cells for the fracture scale (`Y = Y_m ∪ Y_c`) and the pore
//! scale (`Z = Z_s ∪ Z_p`), rasterized on structured grids, and the
//! perforated-domain indicator `χ_{Y_m}(x/ε) χ_{Z_s}(x/ε²)`.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when testing whether a box face sits on a grid line.
const GRID_EXACT_TOL: f64 = 1e-9;

/// A shape inside the periodic unit cell `[0,1)^N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeSpec {
    /// Axis-aligned box given by its center and per-axis half-widths.
    Box {
        center: Vec<f64>,
        half_widths: Vec<f64>,
    },
    /// Disk (ball in 3-D).
    Disk { center: Vec<f64>, radius: f64 },
}

impl ShapeSpec {
    pub fn centered_box(dim: usize, side: f64) -> Self {
        ShapeSpec::Box {
            center: vec![0.5; dim],
            half_widths: vec![side / 2.0; dim],
        }
    }

    pub fn centered_disk(dim: usize, radius: f64) -> Self {
        ShapeSpec::Disk {
            center: vec![0.5; dim],
            radius,
        }
    }

    fn center(&self) -> &[f64] {
        match self {
            ShapeSpec::Box { center, .. } | ShapeSpec::Disk { center, .. } => center,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let center = self.center();
        if center.len() != dim {
            return Err(Error::InvalidInput(format!(
                "shape center has {} coordinates, expected {dim}",
                center.len()
            )));
        }
        if center.iter().any(|c| !(0.0..1.0).contains(c)) {
            return Err(Error::InvalidInput(
                "shape center must lie in [0,1)^N".into(),
            ));
        }
        match self {
            ShapeSpec::Box { half_widths, .. } => {
                if half_widths.len() != dim {
                    return Err(Error::InvalidInput(format!(
                        "box has {} half-widths, expected {dim}",
                        half_widths.len()
                    )));
                }
                if half_widths.iter().any(|h| !(*h > 0.0 && *h <= 0.5)) {
                    return Err(Error::InvalidInput(
                        "box half-widths must lie in (0, 1/2]".into(),
                    ));
                }
            }
            ShapeSpec::Disk { radius, .. } => {
                if !(*radius > 0.0 && *radius <= 0.5) {
                    return Err(Error::InvalidInput(
                        "disk radius must lie in (0, 1/2]".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Membership of a cell-coordinate point, using the minimal periodic image.
    pub fn contains(&self, p: &[f64]) -> bool {
        let center = self.center();
        let wrapped = |k: usize| {
            let d = p[k] - center[k];
            d - d.round()
        };
        match self {
            ShapeSpec::Box { half_widths, .. } => {
                (0..center.len()).all(|k| wrapped(k).abs() < half_widths[k])
            }
            ShapeSpec::Disk { radius, .. } => {
                let r2: f64 = (0..center.len()).map(|k| wrapped(k).powi(2)).sum();
                r2 < radius * radius
            }
        }
    }

    /// Exact volume fraction of the shape inside the unit cell.
    pub fn exact_measure(&self, dim: usize) -> f64 {
        match self {
            ShapeSpec::Box { half_widths, .. } => half_widths.iter().map(|h| 2.0 * h).product(),
            ShapeSpec::Disk { radius, .. } => match dim {
                2 => std::f64::consts::PI * radius * radius,
                _ => 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3),
            },
        }
    }

    /// True when every face lies on a line of the uniform grid with `n`
    /// cells per unit length. Disks are never grid-exact.
    pub fn is_grid_exact(&self, n: usize) -> bool {
        match self {
            ShapeSpec::Disk { .. } => false,
            ShapeSpec::Box {
                center,
                half_widths,
            } => center.iter().zip(half_widths).all(|(c, h)| {
                [c - h, c + h].iter().all(|face| {
                    let s = face * n as f64;
                    (s - s.round()).abs() < GRID_EXACT_TOL
                })
            }),
        }
    }
}

/// Sum of the exact shape measures; assumes the shapes do not overlap.
pub fn analytic_union_measure(shapes: &[ShapeSpec], dim: usize) -> f64 {
    shapes.iter().map(|s| s.exact_measure(dim)).sum()
}

/// Boolean cell raster of the unit cube with `n` cells per axis, x-fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster {
    pub dim: usize,
    pub n: usize,
    pub cells: Vec<bool>,
}

impl Raster {
    /// Marks a cell when its center satisfies `pred`.
    pub fn from_predicate(dim: usize, n: usize, pred: impl Fn(&[f64]) -> bool) -> Self {
        let total = n.pow(dim as u32);
        let mut cells = Vec::with_capacity(total);
        let mut p = [0.0; 3];
        for c in 0..total {
            let mut rem = c;
            for k in 0..dim {
                p[k] = ((rem % n) as f64 + 0.5) / n as f64;
                rem /= n;
            }
            cells.push(pred(&p[..dim]));
        }
        Self { dim, n, cells }
    }

    pub fn measure(&self) -> f64 {
        self.cells.iter().filter(|&&c| c).count() as f64 / self.cells.len() as f64
    }

    /// Value at a cell-coordinate point, wrapped into `[0,1)^N`.
    pub fn at_point(&self, p: &[f64]) -> bool {
        let mut idx = 0;
        let mut stride = 1;
        for &x in p.iter().take(self.dim) {
            let f = x - x.floor();
            let i = ((f * self.n as f64) as usize).min(self.n - 1);
            idx += i * stride;
            stride *= self.n;
        }
        self.cells[idx]
    }

    /// Face-adjacency flood fill of the `true` cells with periodic wrap.
    pub fn is_connected_periodic(&self) -> bool {
        flood_fill_connected(&self.cells, &vec![self.n; self.dim], &vec![true; self.dim])
    }

    /// Portable graymap (ASCII P2); 3-D rasters export the mid-plane slice.
    pub fn to_pgm(&self) -> String {
        let n = self.n;
        let offset = if self.dim == 3 { (n / 2) * n * n } else { 0 };
        let mut s = format!("P2\n{n} {n}\n255\n");
        for row in (0..n).rev() {
            let line: Vec<&str> = (0..n)
                .map(|col| {
                    if self.cells[offset + row * n + col] {
                        "255"
                    } else {
                        "0"
                    }
                })
                .collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pgm())?;
        Ok(())
    }
}

/// Flood fill over the `true` entries of a cell array with the given shape.
/// Returns true when the set is empty or forms a single component.
pub(crate) fn flood_fill_connected(cells: &[bool], shape: &[usize], periodic: &[bool]) -> bool {
    let dim = shape.len();
    let Some(start) = cells.iter().position(|&c| c) else {
        return true;
    };
    let mut strides = vec![1usize; dim];
    for k in 1..dim {
        strides[k] = strides[k - 1] * shape[k - 1];
    }
    let mut seen = vec![false; cells.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    let mut count = 1;
    while let Some(c) = queue.pop_front() {
        for k in 0..dim {
            let i = (c / strides[k]) % shape[k];
            let mut neighbours = [None, None];
            if i + 1 < shape[k] {
                neighbours[0] = Some(c + strides[k]);
            } else if periodic[k] && shape[k] > 1 {
                neighbours[0] = Some(c - i * strides[k]);
            }
            if i > 0 {
                neighbours[1] = Some(c - strides[k]);
            } else if periodic[k] && shape[k] > 1 {
                neighbours[1] = Some(c + (shape[k] - 1) * strides[k]);
            }
            for nb in neighbours.into_iter().flatten() {
                if cells[nb] && !seen[nb] {
                    seen[nb] = true;
                    count += 1;
                    queue.push_back(nb);
                }
            }
        }
    }
    count == cells.iter().filter(|&&c| c).count()
}

/// Declarative description of the two unit cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometrySpec {
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Fracture shapes `Y_c` in the fracture cell.
    #[serde(default)]
    pub fractures: Vec<ShapeSpec>,
    /// Pore shapes `Z_p` in the pore cell.
    #[serde(default)]
    pub pores: Vec<ShapeSpec>,
    pub n_y: usize,
    pub n_z: usize,
    /// Accept `|Z_s| = 1` when no pores are given.
    #[serde(default)]
    pub trivial_medium: bool,
}

fn default_dim() -> usize {
    2
}

/// Rasterized fracture and pore cells with their measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellGeometry {
    pub dim: usize,
    pub fractures: Vec<ShapeSpec>,
    pub pores: Vec<ShapeSpec>,
    /// Indicator of the matrix part `Y_m` at `n_y` cells per axis.
    pub matrix: Raster,
    /// Indicator of the solid part `Z_s` at `n_z` cells per axis.
    pub solid: Raster,
    pub ym_measure: f64,
    pub zs_measure: f64,
    pub matrix_connected: bool,
    pub solid_connected: bool,
}

/// Rasterizes and validates the fracture and pore cells.
pub fn build_cell_geometry(spec: &GeometrySpec) -> Result<CellGeometry> {
    let dim = spec.dim;
    if !(dim == 2 || dim == 3) {
        return Err(Error::InvalidInput(format!("dimension {dim} not supported")));
    }
    if spec.n_y < 8 || spec.n_z < 8 {
        return Err(Error::InvalidInput(
            "cell resolutions must be at least 8".into(),
        ));
    }
    for s in spec.fractures.iter().chain(&spec.pores) {
        s.validate(dim)?;
    }

    let matrix = Raster::from_predicate(dim, spec.n_y, |p| {
        !spec.fractures.iter().any(|s| s.contains(p))
    });
    let solid = Raster::from_predicate(dim, spec.n_z, |p| {
        !spec.pores.iter().any(|s| s.contains(p))
    });
    let ym_measure = matrix.measure();
    let zs_measure = solid.measure();

    if ym_measure == 0.0 || (ym_measure == 1.0 && !spec.fractures.is_empty()) {
        return Err(Error::EmptyPhase {
            phase: "fracture cell matrix Y_m",
            measure: ym_measure,
        });
    }
    if zs_measure == 0.0 || (zs_measure == 1.0 && !spec.pores.is_empty()) {
        return Err(Error::EmptyPhase {
            phase: "pore cell solid Z_s",
            measure: zs_measure,
        });
    }
    if zs_measure == 1.0 && !spec.trivial_medium {
        return Err(Error::EmptyPhase {
            phase: "pore cell solid Z_s (no pores; enable trivial_medium)",
            measure: zs_measure,
        });
    }

    let matrix_connected = matrix.is_connected_periodic();
    if !matrix_connected {
        return Err(Error::Disconnected {
            phase: "fracture cell matrix Y_m",
        });
    }
    let solid_connected = solid.is_connected_periodic();
    if !solid_connected {
        return Err(Error::Disconnected {
            phase: "pore cell solid Z_s",
        });
    }

    Ok(CellGeometry {
        dim,
        fractures: spec.fractures.clone(),
        pores: spec.pores.clone(),
        matrix,
        solid,
        ym_measure,
        zs_measure,
        matrix_connected,
        solid_connected,
    })
}

impl CellGeometry {
    pub fn is_trivial(&self) -> bool {
        self.fractures.is_empty() && self.pores.is_empty()
    }

    /// True when every box face lies on the grid lines of `per_y` cells per
    /// fracture cell and `per_z` cells per pore cell. Disks fail.
    pub fn is_grid_exact(&self, per_y: usize, per_z: usize) -> bool {
        self.fractures.iter().all(|s| s.is_grid_exact(per_y))
            && self.pores.iter().all(|s| s.is_grid_exact(per_z))
    }

    /// Indicator of the matrix part at a fracture-cell coordinate.
    pub fn in_matrix(&self, y: &[f64]) -> bool {
        self.matrix.at_point(y)
    }

    /// Indicator of the solid part at a pore-cell coordinate.
    pub fn in_solid(&self, z: &[f64]) -> bool {
        self.solid.at_point(z)
    }
}

/// `χ_{Y_m}(x/ε mod 1) · χ_{Z_s}(x/ε² mod 1)`.
pub fn perforated_indicator(geom: &CellGeometry, eps: f64, x: &[f64]) -> u8 {
    let mut y = [0.0; 3];
    let mut z = [0.0; 3];
    for k in 0..geom.dim {
        y[k] = x[k] / eps;
        z[k] = x[k] / (eps * eps);
    }
    u8::from(geom.in_matrix(&y[..geom.dim]) && geom.in_solid(&z[..geom.dim]))
}
