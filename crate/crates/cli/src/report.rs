use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use triscale_core::EffectiveModel;

use crate::config::RunConfig;

/// Effective coefficients in a compact form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveSummary {
    pub a_hat: Vec<f64>,
    pub a_hat_asymmetry: f64,
    pub zs_measure: f64,
    pub rho_bar: f64,
    pub capacity: f64,
    /// Largest `|L₁|`, `|L₂|`, `|L₃|` over the state grid.
    pub l_sup: [f64; 3],
    pub l_lipschitz: [f64; 3],
    /// `C_G` and the Poisson residual, when the potential was built in this run.
    pub potential: Option<(f64, f64)>,
}

impl EffectiveSummary {
    pub fn new(model: &EffectiveModel, potential: Option<(f64, f64)>) -> Self {
        let sup_vec = |t: &[Vec<f64>]| t.iter().flat_map(|v| v.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        Self {
            a_hat: model.a_hat.clone(),
            a_hat_asymmetry: model.a_hat_asymmetry,
            zs_measure: model.zs_measure,
            rho_bar: model.rho_bar,
            capacity: model.capacity(),
            l_sup: [
                sup_vec(&model.l1),
                sup_vec(&model.l2),
                model.l3.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            ],
            l_lipschitz: model.lipschitz,
            potential,
        }
    }
}

/// Errors and energies of one fine-scale run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsRow {
    pub eps: f64,
    pub plain_error: f64,
    pub relative_error: f64,
    pub corrector_error: f64,
    pub sup_l2: f64,
    pub grad_sq_integral: f64,
    pub steps: usize,
    pub halvings: usize,
    pub picard_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsconvRow {
    pub function: String,
    pub eps: f64,
    pub value: f64,
    pub limit: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Largest factor between the energy bounds allowed across the ε-sequence.
pub const ENERGY_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub config_hash: String,
    pub micro_max_residual: Option<f64>,
    pub micro_max_asymmetry: Option<f64>,
    pub meso_max_residual: Option<f64>,
    pub meso_max_defect: Option<f64>,
    pub effective: Option<EffectiveSummary>,
    /// `(sup ‖u₀‖, ∫‖∇u₀‖²)`.
    pub macro_energy: Option<(f64, f64)>,
    /// `(steps, halvings, clamped table lookups)`.
    pub macro_steps: Option<(usize, usize, usize)>,
    pub eps_rows: Vec<EpsRow>,
    /// `(ε, [(t, ‖u_ε(t)‖)])`.
    pub energy_series: Vec<(f64, Vec<(f64, f64)>)>,
    pub msconv: Vec<MsconvRow>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
}

impl ConvergenceReport {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            config_hash: config.hash(),
            micro_max_residual: None,
            micro_max_asymmetry: None,
            meso_max_residual: None,
            meso_max_defect: None,
            effective: None,
            macro_energy: None,
            macro_steps: None,
            eps_rows: Vec::new(),
            energy_series: Vec::new(),
            msconv: Vec::new(),
            timings: BTreeMap::new(),
            checks: Vec::new(),
        }
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }

    /// Recomputes the checks from the collected rows. In a trivial medium
    /// every `u_ε` equals `u₀`, so only the discretization level is checked.
    pub fn finish(&mut self, trivial_medium: bool) {
        self.checks = if trivial_medium {
            discretization_checks(&self.eps_rows)
        } else {
            convergence_checks(&self.eps_rows)
        };
        self.checks.extend(msconv_checks(&self.msconv));
    }
}

fn by_decreasing_eps(rows: &[EpsRow]) -> Vec<&EpsRow> {
    let mut v: Vec<&EpsRow> = rows.iter().collect();
    v.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    v
}

/// Strict decrease of the plain error, corrector gain at the smallest ε and
/// uniform energy bounds.
pub fn convergence_checks(rows: &[EpsRow]) -> Vec<Check> {
    if rows.len() < 2 {
        return Vec::new();
    }
    let rows = by_decreasing_eps(rows);
    let errors: Vec<String> = rows.iter().map(|r| format!("{:.3e}", r.plain_error)).collect();
    let monotone = rows.windows(2).all(|w| w[1].plain_error < w[0].plain_error);
    let last = rows[rows.len() - 1];
    let sup: Vec<f64> = rows.iter().map(|r| r.sup_l2).collect();
    let grad: Vec<f64> = rows.iter().map(|r| r.grad_sq_integral).collect();
    let ratio = |v: &[f64]| {
        let max = v.iter().copied().fold(f64::MIN, f64::max);
        let min = v.iter().copied().fold(f64::MAX, f64::min);
        if min > 0.0 {
            max / min
        } else {
            f64::INFINITY
        }
    };
    let sup_ratio = ratio(&sup);
    vec![
        Check {
            name: "plain error decreases with eps".into(),
            passed: monotone,
            detail: errors.join(" > "),
        },
        Check {
            name: "corrector error below plain error at smallest eps".into(),
            passed: last.corrector_error <= last.plain_error,
            detail: format!(
                "eps = {}: corrector {:.3e}, plain {:.3e}",
                last.eps, last.corrector_error, last.plain_error
            ),
        },
        Check {
            name: "energy sup-norms within a factor 2".into(),
            passed: sup_ratio <= ENERGY_FACTOR,
            detail: format!("max/min sup = {sup_ratio:.4}, gradient integral max/min = {:.4}", ratio(&grad)),
        },
    ]
}

/// Relative error allowed when the fine-scale and effective problems coincide.
pub const DISCRETIZATION_LEVEL: f64 = 5e-2;

pub fn discretization_checks(rows: &[EpsRow]) -> Vec<Check> {
    if rows.is_empty() {
        return Vec::new();
    }
    let worst = rows.iter().map(|r| r.relative_error).fold(0.0, f64::max);
    vec![Check {
        name: "fine-scale and effective solutions agree to discretization level".into(),
        passed: worst <= DISCRETIZATION_LEVEL,
        detail: format!("largest relative error {worst:.3e}"),
    }]
}

/// Error at the smallest ε below half the error at the largest, per function.
pub fn msconv_checks(rows: &[MsconvRow]) -> Vec<Check> {
    let mut names: Vec<&str> = rows.iter().map(|r| r.function.as_str()).collect();
    names.dedup();
    names
        .into_iter()
        .filter_map(|name| {
            let mut sel: Vec<&MsconvRow> = rows.iter().filter(|r| r.function == name).collect();
            if sel.len() < 2 {
                return None;
            }
            sel.sort_by(|a, b| b.eps.total_cmp(&a.eps));
            let (first, last) = (sel[0], sel[sel.len() - 1]);
            Some(Check {
                name: format!("probe {name} converges"),
                passed: last.error < 0.5 * first.error || last.error <= 1e-12 * last.limit.abs().max(1.0),
                detail: format!(
                    "error {:.3e} at eps = {}, {:.3e} at eps = {}",
                    first.error, first.eps, last.error, last.eps
                ),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(eps: f64, plain: f64, corr: f64, sup: f64) -> EpsRow {
        EpsRow {
            eps,
            plain_error: plain,
            relative_error: plain,
            corrector_error: corr,
            sup_l2: sup,
            grad_sq_integral: 1.0,
            steps: 1,
            halvings: 0,
            picard_iterations: 0,
        }
    }

    #[test]
    fn checks_pass_on_a_converging_sequence() {
        let rows = vec![row(0.125, 1e-3, 5e-4, 0.4), row(0.5, 1e-2, 8e-3, 0.41), row(0.25, 5e-3, 4e-3, 0.42)];
        let checks = convergence_checks(&rows);
        assert_eq!(checks.len(), 3);
        assert!(checks.iter().all(|c| c.passed), "{checks:?}");
    }

    #[test]
    fn stagnation_and_energy_growth_fail() {
        let rows = vec![row(0.5, 1e-2, 8e-3, 0.1), row(0.25, 1e-2, 4e-3, 0.3)];
        let checks = convergence_checks(&rows);
        assert!(!checks[0].passed);
        assert!(checks[1].passed);
        assert!(!checks[2].passed);
    }

    #[test]
    fn probe_check_needs_halving() {
        let mk = |eps, error| MsconvRow {
            function: "one".into(),
            eps,
            value: 0.0,
            limit: 1.0,
            error,
        };
        assert!(msconv_checks(&[mk(0.5, 0.1), mk(0.125, 0.04)])[0].passed);
        assert!(!msconv_checks(&[mk(0.5, 0.1), mk(0.125, 0.06)])[0].passed);
    }
}
