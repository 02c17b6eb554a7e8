use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use triscale_core::coefficients::{CoefficientData, EllipticityReport};
use triscale_core::macrosolve::SpaceFn;
use triscale_core::mesocell::MesoOptions;
use triscale_core::pipeline::HomogenizeOptions;
use triscale_core::reaction::{validate_reaction, ReactionSpec, ReactionTerm, ReactionValidation, ValidationLattice};
use triscale_core::{build_cell_geometry, CellGeometry, GeometrySpec, ShapeSpec};

use crate::error::CliError;

/// Declarative description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Seed for randomized checks.
    #[serde(default)]
    pub seed: u64,
    pub geometry: GeometrySpec,
    pub coefficients: CoefficientData,
    #[serde(default)]
    pub reaction: ReactionConfig,
    #[serde(default)]
    pub discretization: Discretization,
    #[serde(default)]
    pub initial: InitialCondition,
    #[serde(default)]
    pub dns: DnsConfig,
    #[serde(default)]
    pub msconv: MsconvConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactionConfig {
    #[serde(flatten)]
    pub spec: ReactionSpec,
    /// Bound on `|r|` used to derive and check the Lipschitz constant.
    #[serde(default = "default_state_range")]
    pub state_range: f64,
}

fn default_state_range() -> f64 {
    2.0
}

impl Default for ReactionConfig {
    fn default() -> Self {
        Self {
            spec: ReactionSpec::zero(),
            state_range: default_state_range(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Discretization {
    pub n_tau: usize,
    pub r_nodes: usize,
    pub r_range: f64,
    pub lengths: Vec<f64>,
    pub macro_cells: usize,
    pub dt: f64,
    pub t_final: f64,
    /// Macro snapshot spacing; every step when absent.
    pub snapshot_interval: Option<f64>,
    pub tol_period: f64,
    pub max_periods: usize,
    pub step_tol: f64,
    pub macro_solver_tol: f64,
}

impl Default for Discretization {
    fn default() -> Self {
        Self {
            n_tau: 32,
            r_nodes: 33,
            r_range: 2.0,
            lengths: vec![1.0, 1.0],
            macro_cells: 64,
            dt: 1e-3,
            t_final: 0.05,
            snapshot_interval: None,
            tol_period: 1e-10,
            max_periods: 200,
            step_tol: 1e-12,
            macro_solver_tol: 1e-12,
        }
    }
}

/// Initial state `u⁰`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// `a Π sin(π x_k / L_k)`.
    SineProduct { amplitude: f64 },
    /// `a Π 4 x_k (L_k − x_k) / L_k²`.
    Parabolic { amplitude: f64 },
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition::SineProduct { amplitude: 1.0 }
    }
}

impl InitialCondition {
    pub fn sup(&self) -> f64 {
        match self {
            InitialCondition::SineProduct { amplitude } | InitialCondition::Parabolic { amplitude } => amplitude.abs(),
        }
    }

    pub fn function(&self, lengths: &[f64]) -> SpaceFn {
        let lengths = lengths.to_vec();
        match *self {
            InitialCondition::SineProduct { amplitude } => Arc::new(move |x: &[f64]| {
                amplitude * x.iter().zip(&lengths).map(|(v, l)| (PI * v / l).sin()).product::<f64>()
            }),
            InitialCondition::Parabolic { amplitude } => Arc::new(move |x: &[f64]| {
                amplitude * x.iter().zip(&lengths).map(|(v, l)| 4.0 * v * (l - v) / (l * l)).product::<f64>()
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DnsConfig {
    pub eps: Vec<f64>,
    pub cells_per_pore_cell: usize,
    pub steps_per_period: usize,
    pub dof_cap: usize,
    pub picard_tol: f64,
    pub solver_tol: f64,
}

impl Default for DnsConfig {
    fn default() -> Self {
        Self {
            eps: vec![0.5, 0.25, 0.125],
            cells_per_pore_cell: 8,
            steps_per_period: 64,
            dof_cap: triscale_core::dns::DEFAULT_DOF_CAP,
            picard_tol: 1e-8,
            solver_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MsconvConfig {
    /// Defaults to the DNS sequence.
    pub eps: Option<Vec<f64>>,
    pub cells_per_pore_cell: usize,
    pub samples_per_period: usize,
    pub min_time_samples: usize,
    pub t_final: f64,
}

impl Default for MsconvConfig {
    fn default() -> Self {
        Self {
            eps: None,
            cells_per_pore_cell: 4,
            samples_per_period: 4,
            min_time_samples: 64,
            t_final: 1.0,
        }
    }
}

/// Constants derived while validating a configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub ym_measure: f64,
    pub zs_measure: f64,
    pub ellipticity: EllipticityReport,
    pub reaction: ReactionValidation,
    pub dns_eligible: bool,
    pub dns_note: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }

    pub fn dim(&self) -> usize {
        self.geometry.dim
    }

    pub fn reaction_term(&self) -> ReactionTerm {
        ReactionTerm::from_spec(&self.reaction.spec, self.dim(), self.reaction.state_range)
    }

    pub fn homogenize_options(&self) -> HomogenizeOptions {
        let d = &self.discretization;
        HomogenizeOptions {
            n_tau: d.n_tau,
            r_range: d.r_range,
            r_nodes: d.r_nodes,
            meso: MesoOptions {
                tol_period: d.tol_period,
                max_periods: d.max_periods,
                step_tol: d.step_tol,
                zero_initial_guess: false,
            },
        }
    }

    pub fn msconv_eps(&self) -> Vec<f64> {
        self.msconv.eps.clone().unwrap_or_else(|| self.dns.eps.clone())
    }

    pub fn build_geometry(&self) -> Result<CellGeometry, CliError> {
        Ok(build_cell_geometry(&self.geometry)?)
    }

    /// Checks ranges, builds the cells and verifies the coefficient hypotheses.
    pub fn validate(&self) -> Result<(CellGeometry, ValidationSummary), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        let d = &self.discretization;
        let dim = self.dim();
        if d.n_tau < 2 {
            return bad("discretization.n_tau must be at least 2");
        }
        if d.r_nodes < 3 || !(d.r_range > 0.0) {
            return bad("discretization.r_nodes must be at least 3 and r_range positive");
        }
        if d.lengths.len() != dim || d.lengths.iter().any(|l| !(*l > 0.0)) {
            return bad("discretization.lengths needs one positive length per axis");
        }
        if d.macro_cells < 4 || !(d.dt > 0.0) || !(d.t_final > 0.0) || d.dt > d.t_final {
            return bad("discretization needs macro_cells >= 4 and 0 < dt <= t_final");
        }
        if !(d.tol_period > 0.0 && d.step_tol > 0.0 && d.macro_solver_tol > 0.0) || d.max_periods == 0 {
            return bad("solver tolerances must be positive");
        }
        if !(self.reaction.state_range > 0.0) {
            return bad("reaction.state_range must be positive");
        }
        if self.initial.sup() > d.r_range {
            return bad("the initial state exceeds the tabulated state range r_range");
        }
        let geom = self.build_geometry()?;
        self.coefficients.validate(dim)?;
        let ellipticity = self.coefficients.ellipticity(dim, geom.matrix.n, d.n_tau)?;
        let lattice = ValidationLattice::bounded(dim, geom.matrix.n.min(32), d.n_tau.min(16), self.reaction.state_range);
        let reaction = validate_reaction(&self.reaction_term(), &lattice)?;
        let (dns_eligible, dns_note) = match self.check_dns(&geom) {
            Ok(()) => (true, None),
            Err(e) => (false, Some(e.to_string())),
        };
        Ok((
            geom.clone(),
            ValidationSummary {
                ym_measure: geom.ym_measure,
                zs_measure: geom.zs_measure,
                ellipticity,
                reaction,
                dns_eligible,
                dns_note,
            },
        ))
    }

    /// Restrictions of the fine-scale solver: 2-D, boxes on grid lines,
    /// `ε = 1/k` with `k ≤ 16`.
    pub fn check_dns(&self, geom: &CellGeometry) -> Result<(), CliError> {
        let c = &self.dns;
        if self.dim() != 2 {
            return Err(CliError::Config("direct simulation needs dim = 2".into()));
        }
        if c.eps.is_empty() || c.cells_per_pore_cell < 8 || c.steps_per_period < 64 {
            return Err(CliError::Config(
                "dns needs at least one ε, cells_per_pore_cell >= 8 and steps_per_period >= 64".into(),
            ));
        }
        for &e in &c.eps {
            let k = (1.0 / e).round();
            if !(e > 0.0) || (1.0 / e - k).abs() > 1e-9 || k > 16.0 {
                return Err(CliError::Config(format!("ε = {e} must be 1/k with 1 <= k <= 16")));
            }
            for l in &self.discretization.lengths {
                if ((l * k) - (l * k).round()).abs() > 1e-9 {
                    return Err(CliError::Config(format!("domain length {l} is not a multiple of ε = {e}")));
                }
            }
            if !geom.is_trivial() {
                if geom.fractures.iter().chain(&geom.pores).any(|s| matches!(s, ShapeSpec::Disk { .. })) {
                    return Err(CliError::Config("disks cannot be used in direct simulation".into()));
                }
                let per_z = c.cells_per_pore_cell;
                if !geom.is_grid_exact(k as usize * per_z, per_z) || !geom.is_grid_exact(geom.matrix.n, geom.solid.n) {
                    return Err(CliError::Config(format!("shapes are not grid-exact for ε = {e}")));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [geometry]
        n_y = 16
        n_z = 16
        pores = [{ kind = "box", center = [0.5, 0.5], half_widths = [0.25, 0.25] }]

        [coefficients.diffusion]
        kind = "constant"
        matrix = [[1.0, 0.0], [0.0, 1.0]]
    "#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.dns.eps, vec![0.5, 0.25, 0.125]);
        assert_eq!(c.discretization.n_tau, 32);
        let (geom, summary) = c.validate().unwrap();
        assert_eq!(geom.zs_measure, 0.75);
        assert!(summary.dns_eligible);
    }

    #[test]
    fn hash_changes_with_content() {
        let a = RunConfig::from_toml(MINIMAL).unwrap();
        let mut b = a.clone();
        b.seed = 1;
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[dns]\nepsilon = [0.5]\n");
        assert!(matches!(RunConfig::from_toml(&text), Err(CliError::Config(_))));
    }

    #[test]
    fn disks_are_not_dns_eligible() {
        let text = MINIMAL.replace(
            r#"pores = [{ kind = "box", center = [0.5, 0.5], half_widths = [0.25, 0.25] }]"#,
            r#"pores = [{ kind = "disk", center = [0.5, 0.5], radius = 0.25 }]"#,
        );
        let c = RunConfig::from_toml(&text).unwrap();
        let (_, summary) = c.validate().unwrap();
        assert!(!summary.dns_eligible);
    }
}
