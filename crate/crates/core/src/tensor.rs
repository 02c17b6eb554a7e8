//! Small dense `N x N` matrices (N = 2 or 3) used for cell coefficients and
//! effective tensors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// A dense square matrix of dimension 2 or 3 stored inline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallMat {
    pub dim: usize,
    pub m: [[f64; 3]; 3],
}

impl SmallMat {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim == 2 || dim == 3, "dimension must be 2 or 3");
        Self {
            dim,
            m: [[0.0; 3]; 3],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scalar(dim, 1.0)
    }

    pub fn scalar(dim: usize, s: f64) -> Self {
        let mut out = Self::zeros(dim);
        for i in 0..dim {
            out.m[i][i] = s;
        }
        out
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut out = Self::zeros(values.len());
        for (i, v) in values.iter().enumerate() {
            out.m[i][i] = *v;
        }
        out
    }

    /// Builds from row-major entries; `entries.len()` must be 4 or 9.
    pub fn from_row_major(entries: &[f64]) -> Self {
        let dim = match entries.len() {
            4 => 2,
            9 => 3,
            n => panic!("row-major matrix needs 4 or 9 entries, got {n}"),
        };
        let mut out = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                out.m[i][j] = entries[i * dim + j];
            }
        }
        out
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        let dim = rows.len();
        if !(dim == 2 || dim == 3) || rows.iter().any(|r| r.len() != dim) {
            return None;
        }
        let mut out = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                out.m[i][j] = rows[i][j];
            }
        }
        Some(out)
    }

    pub fn row_major(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim * self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                v.push(self.m[i][j]);
            }
        }
        v
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i][j]
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.m[i][j] = self.m[j][i];
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = *self;
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.m[i][j] *= s;
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = *self;
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.m[i][j] += other.m[i][j];
            }
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.m[i][j] = (0..self.dim).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..self.dim {
            out[i] = (0..self.dim).map(|k| self.m[i][k] * v[k]).sum();
        }
        out
    }

    /// `vᵀ M`, the left multiplication of a row vector.
    pub fn left_mul_vec(&self, v: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for j in 0..self.dim {
            out[j] = (0..self.dim).map(|k| v[k] * self.m[k][j]).sum();
        }
        out
    }

    pub fn quad_form(&self, v: &[f64]) -> f64 {
        let mv = self.mul_vec(v);
        (0..self.dim).map(|i| v[i] * mv[i]).sum()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.m[i][i]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.row_major().iter().fold(0.0f64, |a, b| a.max(b.abs()))
    }

    /// Largest entry of `|M - Mᵀ|`.
    pub fn asymmetry(&self) -> f64 {
        let mut a = 0.0f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                a = a.max((self.m[i][j] - self.m[j][i]).abs());
            }
        }
        a
    }

    pub fn symmetrized(&self) -> Self {
        self.add(&self.transpose()).scale(0.5)
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        match self.dim {
            2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
            _ => {
                m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                    - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                    + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
            }
        }
    }

    /// Sylvester test on the leading principal minors plus a symmetry check,
    /// both relative to the largest entry.
    pub fn is_spd(&self, tol: f64) -> bool {
        let scale = self.max_abs();
        if scale == 0.0 || !scale.is_finite() {
            return false;
        }
        if self.asymmetry() > tol * scale.max(1.0) {
            return false;
        }
        let m = &self.m;
        if m[0][0] <= tol * scale {
            return false;
        }
        let minor2 = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if minor2 <= tol * scale * scale {
            return false;
        }
        if self.dim == 3 && self.det() <= tol * scale * scale * scale {
            return false;
        }
        true
    }

    pub fn eigenvalues_sym(&self) -> Vec<f64> {
        let d = self.to_dmatrix().symmetric_eigen();
        let mut v: Vec<f64> = d.eigenvalues.iter().copied().collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    pub fn min_eigenvalue_sym(&self) -> f64 {
        self.eigenvalues_sym()[0]
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.m[i][j])
    }

    pub fn from_dmatrix(d: &DMatrix<f64>) -> Self {
        let mut out = Self::zeros(d.nrows());
        for i in 0..d.nrows() {
            for j in 0..d.ncols() {
                out.m[i][j] = d[(i, j)];
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut a = 0.0f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                a = a.max((self.m[i][j] - other.m[i][j]).abs());
            }
        }
        a
    }
}

impl Serialize for SmallMat {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..self.dim)
            .map(|i| self.m[i][..self.dim].to_vec())
            .collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SmallMat {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        SmallMat::from_rows(&rows)
            .ok_or_else(|| serde::de::Error::custom("expected a 2x2 or 3x3 matrix"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_detection() {
        assert!(SmallMat::identity(2).is_spd(1e-12));
        assert!(SmallMat::from_row_major(&[2.0, 1.0, 1.0, 2.0]).is_spd(1e-12));
        assert!(!SmallMat::from_row_major(&[1.0, 2.0, 2.0, 1.0]).is_spd(1e-12));
        assert!(!SmallMat::from_row_major(&[1.0, 0.5, 0.0, 1.0]).is_spd(1e-12));
        assert!(!SmallMat::diag(&[1.0, 1.0, -1.0]).is_spd(1e-12));
    }

    #[test]
    fn left_and_right_products() {
        let m = SmallMat::from_row_major(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(&m.mul_vec(&[1.0, 1.0])[..2], &[3.0, 7.0]);
        assert_eq!(&m.left_mul_vec(&[1.0, 1.0])[..2], &[4.0, 6.0]);
    }

    #[test]
    fn json_rows() {
        let m = SmallMat::from_row_major(&[1.5, 0.25, 0.25, 2.0]);
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, "[[1.5,0.25],[0.25,2.0]]");
        let back: SmallMat = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }
}
