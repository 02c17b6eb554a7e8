use std::sync::Arc;

use crate::error::{Error, Result};

use super::grid::StructuredGrid;

/// Nodal scalar or vector field over the dofs of a grid. Vector fields are
/// stored component-major: `values[c * n_dofs + dof]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldOnGrid {
    pub grid: Arc<StructuredGrid>,
    pub components: usize,
    pub values: Vec<f64>,
}

impl FieldOnGrid {
    pub fn new(grid: Arc<StructuredGrid>, components: usize, values: Vec<f64>) -> Result<Self> {
        if components == 0 || values.len() != components * grid.n_dofs() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} component(s) on {} dofs",
                values.len(),
                components,
                grid.n_dofs()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite field value at index {i}")));
        }
        Ok(Self {
            grid,
            components,
            values,
        })
    }

    pub fn scalar(grid: Arc<StructuredGrid>, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, 1, values)
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.grid.n_dofs();
        &self.values[c * n..(c + 1) * n]
    }

    /// Component `c` expanded to every grid node (zero off the dof set).
    pub fn node_values(&self, c: usize) -> Vec<f64> {
        self.grid.to_nodes(self.component(c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length_and_nan() {
        let g = Arc::new(StructuredGrid::periodic_unit(2, 4, None).unwrap());
        assert!(FieldOnGrid::scalar(g.clone(), vec![0.0; 15]).is_err());
        let mut v = vec![0.0; 16];
        v[3] = f64::NAN;
        assert!(FieldOnGrid::scalar(g.clone(), v).is_err());
        let f = FieldOnGrid::new(g, 2, (0..32).map(f64::from).collect()).unwrap();
        assert_eq!(f.component(1)[0], 16.0);
    }
}
