use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::SmallMat;

/// Periodic diffusion matrix `A(y, τ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiffusionPreset {
    /// Constant SPD matrix (rows).
    Constant { matrix: SmallMat },
    /// `a(y_axis)·I` with value `values[0]` below `fraction` and `values[1]` above.
    Laminate {
        values: [f64; 2],
        #[serde(default)]
        axis: usize,
        #[serde(default = "half")]
        fraction: f64,
    },
    /// `a·I` alternating between `values` on a `2×2(×2)` checkerboard.
    Checkerboard { values: [f64; 2] },
    /// `base·(1 + amplitude·Π cos 2πy_k·(1 + time_amplitude·sin 2πτ))·D`
    /// with `D = diag(anisotropy)` (identity by default).
    Trigonometric {
        base: f64,
        amplitude: f64,
        #[serde(default)]
        time_amplitude: f64,
        #[serde(default)]
        anisotropy: Option<Vec<f64>>,
    },
}

fn half() -> f64 {
    0.5
}

/// Periodic density `ρ(y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityPreset {
    Constant { value: f64 },
    /// `base·(1 + amplitude·Π cos 2πy_k)`.
    Trigonometric { base: f64, amplitude: f64 },
}

impl Default for DensityPreset {
    fn default() -> Self {
        DensityPreset::Constant { value: 1.0 }
    }
}

/// Diffusion and density data of the fine-scale problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientData {
    pub diffusion: DiffusionPreset,
    #[serde(default)]
    pub density: DensityPreset,
}

fn cos_product(y: &[f64]) -> f64 {
    y.iter().map(|v| (2.0 * PI * v).cos()).product()
}

impl DiffusionPreset {
    /// True when `A` does not depend on `τ`.
    pub fn is_time_independent(&self) -> bool {
        !matches!(self, DiffusionPreset::Trigonometric { time_amplitude, amplitude, .. }
            if *time_amplitude != 0.0 && *amplitude != 0.0)
    }

    pub fn eval(&self, dim: usize, y: &[f64], tau: f64) -> SmallMat {
        match self {
            DiffusionPreset::Constant { matrix } => *matrix,
            DiffusionPreset::Laminate {
                values,
                axis,
                fraction,
            } => {
                let s = y[*axis].rem_euclid(1.0);
                SmallMat::scalar(dim, if s < *fraction { values[0] } else { values[1] })
            }
            DiffusionPreset::Checkerboard { values } => {
                let parity: usize = y[..dim]
                    .iter()
                    .map(|v| (2.0 * v.rem_euclid(1.0)).floor() as usize)
                    .sum();
                SmallMat::scalar(dim, values[parity % 2])
            }
            DiffusionPreset::Trigonometric {
                base,
                amplitude,
                time_amplitude,
                anisotropy,
            } => {
                let a = base
                    * (1.0
                        + amplitude
                            * cos_product(&y[..dim])
                            * (1.0 + time_amplitude * (2.0 * PI * tau).sin()));
                match anisotropy {
                    Some(d) => SmallMat::diag(&d[..dim]).scale(a),
                    None => SmallMat::scalar(dim, a),
                }
            }
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        match self {
            DiffusionPreset::Constant { matrix } => {
                if matrix.dim != dim {
                    return bad(format!("constant matrix is {}x{}, expected {dim}x{dim}", matrix.dim, matrix.dim));
                }
                if matrix.asymmetry() > 1e-12 * matrix.max_abs() || !matrix.is_spd(1e-12) {
                    return bad("constant diffusion matrix must be symmetric positive definite".into());
                }
            }
            DiffusionPreset::Laminate {
                values,
                axis,
                fraction,
            } => {
                if values.iter().any(|v| !(*v > 0.0)) {
                    return bad("laminate values must be positive".into());
                }
                if *axis >= dim || !(*fraction > 0.0 && *fraction < 1.0) {
                    return bad("laminate axis or fraction out of range".into());
                }
            }
            DiffusionPreset::Checkerboard { values } => {
                if values.iter().any(|v| !(*v > 0.0)) {
                    return bad("checkerboard values must be positive".into());
                }
            }
            DiffusionPreset::Trigonometric {
                base,
                amplitude,
                time_amplitude,
                anisotropy,
            } => {
                if !(*base > 0.0) || amplitude.abs() * (1.0 + time_amplitude.abs()) >= 1.0 {
                    return bad(
                        "trigonometric diffusion needs base > 0 and |amplitude|(1+|time_amplitude|) < 1".into(),
                    );
                }
                if let Some(d) = anisotropy {
                    if d.len() < dim || d[..dim].iter().any(|v| !(*v > 0.0)) {
                        return bad("anisotropy needs one positive entry per axis".into());
                    }
                }
            }
        }
        Ok(())
    }
}

impl DensityPreset {
    pub fn eval(&self, y: &[f64]) -> f64 {
        match self {
            DensityPreset::Constant { value } => *value,
            DensityPreset::Trigonometric { base, amplitude } => base * (1.0 + amplitude * cos_product(y)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            DensityPreset::Constant { value } => *value > 0.0,
            DensityPreset::Trigonometric { base, amplitude } => *base > 0.0 && amplitude.abs() < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("density must stay bounded away from zero".into()))
        }
    }
}

/// Measured bounds of the coefficient data on a sampling lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticityReport {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub min_density: f64,
    pub max_density: f64,
    /// Single constant `Λ` with `Λ⁻¹ ≤ eig(A), ρ ≤ Λ`.
    pub lambda: f64,
}

impl CoefficientData {
    pub fn validate(&self, dim: usize) -> Result<()> {
        self.diffusion.validate(dim)?;
        self.density.validate()
    }

    pub fn a(&self, dim: usize, y: &[f64], tau: f64) -> SmallMat {
        self.diffusion.eval(dim, y, tau)
    }

    pub fn rho(&self, y: &[f64]) -> f64 {
        self.density.eval(y)
    }

    /// Samples eigenvalues of `A` and values of `ρ` at cell centers of an
    /// `n`-per-axis lattice and `n_tau` time levels.
    pub fn ellipticity(&self, dim: usize, n: usize, n_tau: usize) -> Result<EllipticityReport> {
        let mut rep = EllipticityReport {
            min_eigenvalue: f64::INFINITY,
            max_eigenvalue: 0.0,
            min_density: f64::INFINITY,
            max_density: 0.0,
            lambda: 1.0,
        };
        let total = n.pow(dim as u32);
        for idx in 0..total {
            let mut y = [0.0; 3];
            let mut rem = idx;
            for v in y.iter_mut().take(dim) {
                *v = ((rem % n) as f64 + 0.5) / n as f64;
                rem /= n;
            }
            let r = self.rho(&y[..dim]);
            rep.min_density = rep.min_density.min(r);
            rep.max_density = rep.max_density.max(r);
            for t in 0..n_tau.max(1) {
                let a = self.a(dim, &y[..dim], t as f64 / n_tau.max(1) as f64);
                let e = a.eigenvalues_sym();
                for v in e {
                    rep.min_eigenvalue = rep.min_eigenvalue.min(v);
                    rep.max_eigenvalue = rep.max_eigenvalue.max(v);
                }
            }
        }
        if !(rep.min_eigenvalue > 0.0) || !(rep.min_density > 0.0) {
            return Err(Error::HypothesisViolation {
                hypothesis: "A1",
                detail: format!(
                    "coefficients lose positivity (min eigenvalue {:e}, min density {:e})",
                    rep.min_eigenvalue, rep.min_density
                ),
            });
        }
        rep.lambda = [
            1.0 / rep.min_eigenvalue,
            rep.max_eigenvalue,
            1.0 / rep.min_density,
            rep.max_density,
        ]
        .into_iter()
        .fold(1.0, f64::max);
        Ok(rep)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laminate_switches_at_fraction() {
        let p = DiffusionPreset::Laminate {
            values: [1.0, 4.0],
            axis: 0,
            fraction: 0.5,
        };
        assert_eq!(p.eval(2, &[0.25, 0.9], 0.0).get(0, 0), 1.0);
        assert_eq!(p.eval(2, &[0.75, 0.1], 0.0).get(1, 1), 4.0);
        assert!(p.is_time_independent());
    }

    #[test]
    fn checkerboard_alternates() {
        let p = DiffusionPreset::Checkerboard { values: [1.0, 3.0] };
        assert_eq!(p.eval(2, &[0.1, 0.1], 0.0).get(0, 0), 1.0);
        assert_eq!(p.eval(2, &[0.6, 0.1], 0.0).get(0, 0), 3.0);
        assert_eq!(p.eval(2, &[0.6, 0.6], 0.0).get(0, 0), 1.0);
    }

    #[test]
    fn trigonometric_bounds_are_checked() {
        let ok = DiffusionPreset::Trigonometric {
            base: 1.0,
            amplitude: 0.5,
            time_amplitude: 0.5,
            anisotropy: None,
        };
        assert!(ok.validate(2).is_ok());
        assert!(!ok.is_time_independent());
        let bad = DiffusionPreset::Trigonometric {
            base: 1.0,
            amplitude: 0.8,
            time_amplitude: 0.5,
            anisotropy: None,
        };
        assert!(bad.validate(2).is_err());
    }

    #[test]
    fn ellipticity_of_laminate() {
        let c = CoefficientData {
            diffusion: DiffusionPreset::Laminate {
                values: [1.0, 4.0],
                axis: 0,
                fraction: 0.5,
            },
            density: DensityPreset::Constant { value: 0.5 },
        };
        let rep = c.ellipticity(2, 8, 1).unwrap();
        assert_eq!(rep.min_eigenvalue, 1.0);
        assert_eq!(rep.max_eigenvalue, 4.0);
        assert_eq!(rep.lambda, 4.0);
    }

    #[test]
    fn serde_tags() {
        let p: DiffusionPreset =
            serde_json::from_str(r#"{"kind":"constant","matrix":[[2.0,0.5],[0.5,1.0]]}"#).unwrap();
        assert_eq!(p.eval(2, &[0.0, 0.0], 0.0).get(0, 1), 0.5);
    }
}
