//! Stage driver: each stage persists its artifacts and later stages reuse
//! in-memory results or load them back from the output directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use triscale_core::discretize::export::{write_csv, write_vtk};
use triscale_core::dns::{corrector_error, ProbeRow, ProbeSetup, ProbeWeight, ScalePoint};
use triscale_core::macrosolve::{energy_report, MacroProblem};
use triscale_core::mesocell::{solve_omega, solve_theta, MesoCorrectorOmega, MesoCorrectorTheta, MesoSetup};
use triscale_core::microcell::{tabulate_pore_tensors, PoreTensorTable};
use triscale_core::reaction::build_potential;
use triscale_core::upscale::{build_effective_model, r_grid};
use triscale_core::{
    compare_to_macro, msconv_probe, solve_dns, solve_macro, CellGeometry, CorrectorSet, DnsProblem, DnsSolution,
    EffectiveModel, ErrorReport, MacroSolution,
};

use crate::artifacts::{self, dns_stem};
use crate::config::{RunConfig, ValidationSummary};
use crate::error::CliError;
use crate::report::{ConvergenceReport, EffectiveSummary, EpsRow, MsconvRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    CellMicro,
    CellMeso,
    Upscale,
    Macro,
    Dns,
    Compare,
    Msconv,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::CellMicro,
        Stage::CellMeso,
        Stage::Upscale,
        Stage::Macro,
        Stage::Dns,
        Stage::Compare,
        Stage::Msconv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::CellMicro => "cell-micro",
            Stage::CellMeso => "cell-meso",
            Stage::Upscale => "upscale",
            Stage::Macro => "macro",
            Stage::Dns => "dns",
            Stage::Compare => "compare",
            Stage::Msconv => "msconv",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown stage {s}")))
    }
}

/// A stage failure with the artifacts it was reading or writing.
#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub out_dir: PathBuf,
    pub source: CliError,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {} failed (artifacts in {}): {}", self.stage, self.out_dir.display(), self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        self.source.exit_code()
    }
}

/// Holds the configuration and whatever the stages have produced so far.
pub struct Pipeline {
    pub config: RunConfig,
    pub out: PathBuf,
    pub geometry: CellGeometry,
    pub validation: ValidationSummary,
    pub table: Option<PoreTensorTable>,
    pub setup: Option<MesoSetup>,
    pub theta: Option<MesoCorrectorTheta>,
    pub omega: Option<MesoCorrectorOmega>,
    pub model: Option<EffectiveModel>,
    pub macro_solution: Option<MacroSolution>,
    pub dns: Vec<DnsSolution>,
    pub report: ConvergenceReport,
}

impl Pipeline {
    pub fn new(config: RunConfig, out: &Path) -> Result<Self, CliError> {
        let (geometry, validation) = config.validate()?;
        std::fs::create_dir_all(out)?;
        // Stages run one at a time add to the report of the same configuration.
        let report = match artifacts::read_json::<ConvergenceReport>(&out.join("report.json")) {
            Ok(r) if r.config_hash == config.hash() => r,
            _ => ConvergenceReport::new(&config),
        };
        Ok(Self {
            config,
            out: out.to_path_buf(),
            geometry,
            validation,
            table: None,
            setup: None,
            theta: None,
            omega: None,
            model: None,
            macro_solution: None,
            dns: Vec::new(),
            report,
        })
    }

    /// Runs the given stages in pipeline order and writes `report.json`.
    pub fn run(&mut self, stages: &[Stage]) -> Result<&ConvergenceReport, StageError> {
        let mut stages = stages.to_vec();
        stages.sort();
        stages.dedup();
        for stage in stages {
            let start = Instant::now();
            info!("stage {stage}");
            self.run_stage(stage).map_err(|source| StageError {
                stage,
                out_dir: self.out.clone(),
                source,
            })?;
            self.report.timings.insert(stage.name().to_string(), start.elapsed().as_secs_f64());
        }
        self.report.finish(self.geometry.is_trivial());
        artifacts::write_json(&self.out.join("report.json"), &self.report).map_err(|source| StageError {
            stage: Stage::Compare,
            out_dir: self.out.clone(),
            source,
        })?;
        Ok(&self.report)
    }

    fn run_stage(&mut self, stage: Stage) -> Result<(), CliError> {
        match stage {
            Stage::CellMicro => self.cell_micro(),
            Stage::CellMeso => self.cell_meso(),
            Stage::Upscale => self.upscale(),
            Stage::Macro => self.run_macro(),
            Stage::Dns => self.run_dns(),
            Stage::Compare => self.compare(),
            Stage::Msconv => self.msconv(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn cell_micro(&mut self) -> Result<(), CliError> {
        let cfg = &self.config;
        self.geometry.matrix.write_pgm(&self.path("geometry_fracture_cell.pgm"))?;
        self.geometry.solid.write_pgm(&self.path("geometry_pore_cell.pgm"))?;
        artifacts::write_json(&self.path("validation.json"), &self.validation)?;
        let table = tabulate_pore_tensors(&cfg.coefficients, &self.geometry, cfg.discretization.n_tau)?;
        artifacts::write_json(&self.path("pore_tensors.json"), &table)?;
        std::fs::write(self.path("pore_tensors.csv"), table.to_csv())?;
        self.report.micro_max_residual = Some(table.max_residual);
        self.report.micro_max_asymmetry = Some(table.max_asymmetry);
        self.table = Some(table);
        Ok(())
    }

    fn ensure_table(&mut self) -> Result<(), CliError> {
        if self.table.is_none() {
            self.table = Some(artifacts::read_json(&self.path("pore_tensors.json"))?);
        }
        Ok(())
    }

    fn ensure_setup(&mut self) -> Result<(), CliError> {
        if self.setup.is_none() {
            self.ensure_table()?;
            let table = self.table.as_ref().expect("table");
            self.setup = Some(MesoSetup::new(table, &self.config.coefficients.density, &self.geometry)?);
        }
        Ok(())
    }

    pub fn cell_meso(&mut self) -> Result<(), CliError> {
        self.ensure_setup()?;
        let setup = self.setup.as_ref().expect("setup");
        let opts = self.config.homogenize_options();
        let theta = solve_theta(setup, &opts.meso)?;
        let grid = r_grid(opts.r_range, opts.r_nodes);
        let omega = solve_omega(setup, &self.config.reaction_term(), &grid, &opts.meso)?;
        artifacts::save_theta(&self.out, &theta)?;
        artifacts::save_omega(&self.out, &omega)?;

        let mut w = csv::Writer::from_path(self.path("meso_diagnostics.csv"))?;
        w.write_record(["field", "index", "periods", "defect", "contraction", "max_weighted_mean", "projected_mass", "residual"])?;
        for (i, (f, res)) in theta.fields.iter().zip(&theta.residuals).enumerate() {
            let r = f.report;
            w.serialize(("theta", i, r.periods, r.defect, r.contraction, r.max_weighted_mean, r.projected_mass, res))?;
        }
        let omega_res = omega.max_residual();
        for (i, r) in omega.reports().iter().enumerate() {
            w.serialize(("omega", i, r.periods, r.defect, r.contraction, r.max_weighted_mean, r.projected_mass, omega_res))?;
        }
        w.flush()?;

        let nodal: Vec<Vec<f64>> = theta.fields.iter().map(|f| setup.grid.to_nodes(&f.levels[0])).collect();
        let names: Vec<String> = (0..nodal.len()).map(|i| format!("theta_{i}")).collect();
        let fields: Vec<(&str, &[f64])> = names.iter().map(String::as_str).zip(nodal.iter().map(Vec::as_slice)).collect();
        write_vtk(&self.path("meso_theta_tau0.vtk"), &setup.grid, "theta at tau = 0", &fields)?;

        let max_theta = theta.residuals.iter().copied().fold(0.0, f64::max);
        self.report.meso_max_residual = Some(max_theta.max(omega_res));
        self.report.meso_max_defect = Some(
            theta
                .fields
                .iter()
                .map(|f| f.report.defect)
                .chain(omega.reports().iter().map(|r| r.defect))
                .fold(0.0, f64::max),
        );
        self.theta = Some(theta);
        self.omega = Some(omega);
        Ok(())
    }

    fn ensure_correctors(&mut self) -> Result<(), CliError> {
        self.ensure_setup()?;
        if self.theta.is_none() {
            self.theta = Some(artifacts::load_theta(&self.out)?);
        }
        if self.omega.is_none() {
            self.omega = Some(artifacts::load_omega(&self.out)?);
        }
        Ok(())
    }

    pub fn upscale(&mut self) -> Result<(), CliError> {
        self.ensure_correctors()?;
        let opts = self.config.homogenize_options();
        let grid = r_grid(opts.r_range, opts.r_nodes);
        let potential = build_potential(
            &self.config.reaction_term(),
            self.geometry.dim,
            self.geometry.matrix.n,
            opts.n_tau,
            &grid,
        )?;
        let model = build_effective_model(
            self.setup.as_ref().expect("setup"),
            self.table.as_ref().expect("table"),
            self.theta.as_ref().expect("theta"),
            self.omega.as_ref().expect("omega"),
            &potential,
            &grid,
        )?;
        model.save(&self.path("effective_model.json"))?;
        write_tables_csv(&self.path("effective_tables.csv"), &model)?;
        self.report.effective = Some(EffectiveSummary::new(&model, Some((potential.c_g, potential.laplacian_residual))));
        self.model = Some(model);
        Ok(())
    }

    fn ensure_model(&mut self) -> Result<(), CliError> {
        if self.model.is_none() {
            let path = self.path("effective_model.json");
            if !path.exists() {
                return Err(CliError::MissingArtifact(path.display().to_string()));
            }
            let model = EffectiveModel::load(&path)?;
            if self.report.effective.is_none() {
                self.report.effective = Some(EffectiveSummary::new(&model, None));
            }
            self.model = Some(model);
        }
        Ok(())
    }

    pub fn macro_problem(&self) -> Result<MacroProblem, CliError> {
        let model = self.model.clone().ok_or_else(|| CliError::MissingArtifact("effective_model.json".into()))?;
        let d = &self.config.discretization;
        let mut p = MacroProblem::new(
            d.lengths.clone(),
            vec![d.macro_cells; self.config.dim()],
            d.t_final,
            d.dt,
            self.config.initial.function(&d.lengths),
            model,
        );
        p.snapshot_interval = d.snapshot_interval;
        p.solver_tol = d.macro_solver_tol;
        Ok(p)
    }

    pub fn run_macro(&mut self) -> Result<(), CliError> {
        self.ensure_model()?;
        let sol = solve_macro(&self.macro_problem()?)?;
        artifacts::save_macro(&self.out, &sol)?;
        write_diagnostics_csv(&self.path("macro_diagnostics.csv"), &sol.diagnostics)?;
        let last = sol.final_state();
        write_csv(&self.path("macro_final.csv"), &sol.grid, &[("u0", last)])?;
        write_vtk(&self.path("macro_final.vtk"), &sol.grid, "macro solution at T", &[("u0", last)])?;
        let e = energy_report(&sol);
        self.report.macro_energy = Some((e.sup_l2, e.grad_sq_integral));
        self.report.macro_steps = Some((sol.steps, sol.halvings, sol.clamped_evaluations));
        self.macro_solution = Some(sol);
        Ok(())
    }

    fn dns_problem(&self, eps: f64) -> DnsProblem {
        let cfg = &self.config;
        let c = &cfg.dns;
        let mut p = DnsProblem::new(
            eps,
            self.geometry.clone(),
            cfg.coefficients.clone(),
            cfg.reaction_term(),
            cfg.initial.function(&cfg.discretization.lengths),
            cfg.discretization.t_final,
        );
        p.lengths = cfg.discretization.lengths.clone();
        p.cells_per_pore_cell = c.cells_per_pore_cell;
        p.steps_per_period = c.steps_per_period;
        p.dof_cap = c.dof_cap;
        p.picard_tol = c.picard_tol;
        p.solver_tol = c.solver_tol;
        p
    }

    pub fn run_dns(&mut self) -> Result<(), CliError> {
        self.config.check_dns(&self.geometry)?;
        self.dns.clear();
        let eps_list = self.config.dns.eps.clone();
        for eps in eps_list {
            info!("direct simulation at eps = {eps}");
            let sol = solve_dns(&self.dns_problem(eps))?;
            let stem = dns_stem(eps);
            artifacts::save_dns(&self.out, &sol)?;
            write_diagnostics_csv(&self.path(&format!("{stem}_energy.csv")), &sol.energy)?;
            write_mask_pgm(&self.path(&format!("{stem}_mask.pgm")), &sol)?;
            let last = sol.snapshots.last().expect("snapshot");
            write_vtk(&self.path(&format!("{stem}_final.vtk")), &sol.grid, "fine-scale solution at T", &[("u_eps", last)])?;
            self.dns.push(sol);
        }
        Ok(())
    }

    fn ensure_dns(&mut self) -> Result<(), CliError> {
        if self.dns.is_empty() {
            for &eps in &self.config.dns.eps {
                let sol = artifacts::load_dns(&self.out, eps, &self.geometry)?;
                self.dns.push(sol);
            }
        }
        Ok(())
    }

    fn ensure_macro(&mut self) -> Result<(), CliError> {
        if self.macro_solution.is_none() {
            self.macro_solution = Some(artifacts::load_macro(&self.out)?);
        }
        Ok(())
    }

    pub fn compare(&mut self) -> Result<(), CliError> {
        self.ensure_macro()?;
        self.ensure_dns()?;
        self.ensure_correctors()?;
        let macro_ = self.macro_solution.as_ref().expect("macro");
        let correctors = CorrectorSet::new(
            self.setup.as_ref().expect("setup"),
            self.theta.as_ref().expect("theta"),
            self.omega.as_ref().expect("omega"),
        );
        let mut rows = Vec::new();
        let mut series: Vec<(f64, Vec<(f64, f64)>)> = Vec::new();
        for dns in &self.dns {
            let plain: ErrorReport = compare_to_macro(dns, macro_)?;
            let corrected = corrector_error(dns, macro_, &correctors)?;
            let e = dns.energy_report();
            rows.push(EpsRow {
                eps: dns.eps,
                plain_error: plain.l2_error,
                relative_error: plain.relative_error,
                corrector_error: corrected.l2_error,
                sup_l2: e.sup_l2,
                grad_sq_integral: e.grad_sq_integral,
                steps: dns.steps,
                halvings: dns.halvings,
                picard_iterations: dns.picard_iterations,
            });
            series.push((dns.eps, dns.energy.iter().map(|d| (d.t, d.l2)).collect()));
        }
        let mut w = csv::Writer::from_path(self.path("errors.csv"))?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
        self.report.eps_rows = rows;
        self.report.energy_series = series;
        Ok(())
    }

    pub fn msconv(&mut self) -> Result<(), CliError> {
        let m = &self.config.msconv;
        let lengths = self.config.discretization.lengths.clone();
        let setup = ProbeSetup {
            lengths: lengths.clone(),
            t_final: m.t_final,
            cells_per_pore_cell: m.cells_per_pore_cell,
            samples_per_period: m.samples_per_period,
            min_time_samples: m.min_time_samples,
        };
        let eps_list = self.config.msconv_eps();
        let measure = self.geometry.ym_measure * self.geometry.zs_measure;
        let mut rows = Vec::new();
        for probe in standard_probes(&lengths, m.t_final) {
            let limit = measure * probe.integral;
            let out: Vec<ProbeRow> =
                msconv_probe(&self.geometry, &eps_list, probe.phi.as_ref(), ProbeWeight::Perforated, limit, &setup)?;
            rows.extend(out.into_iter().map(|r| MsconvRow {
                function: probe.name.to_string(),
                eps: r.eps,
                value: r.value,
                limit: r.limit,
                error: r.error,
            }));
        }
        let mut w = csv::Writer::from_path(self.path("msconv.csv"))?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
        self.report.msconv = rows;
        Ok(())
    }
}

type Phi = Box<dyn Fn(&ScalePoint) -> f64 + Sync>;

/// A slow test function with its exact integral over `Ω × (0, T)`.
pub struct Probe {
    pub name: &'static str,
    pub phi: Phi,
    pub integral: f64,
}

/// `1`, `x₁x₂(1 + t)` and `Π sin(πx_k/L_k) e^{−t}` on `Ω = Π (0, L_k)`.
pub fn standard_probes(lengths: &[f64], t_final: f64) -> Vec<Probe> {
    use std::f64::consts::PI;
    let vol: f64 = lengths.iter().product();
    let ls = lengths.to_vec();
    let poly_space: f64 = lengths.iter().map(|l| l * l / 2.0).product();
    let sine_space: f64 = lengths.iter().map(|l| 2.0 * l / PI).product();
    vec![
        Probe {
            name: "one",
            phi: Box::new(|_| 1.0),
            integral: vol * t_final,
        },
        Probe {
            name: "poly",
            phi: Box::new(|p| p.x.iter().product::<f64>() * (1.0 + p.t)),
            integral: poly_space * (t_final + t_final * t_final / 2.0),
        },
        Probe {
            name: "sine",
            phi: Box::new(move |p| {
                p.x.iter().zip(&ls).map(|(x, l)| (PI * x / l).sin()).product::<f64>() * (-p.t).exp()
            }),
            integral: sine_space * (1.0 - (-t_final).exp()),
        },
    ]
}

fn write_tables_csv(path: &Path, model: &EffectiveModel) -> Result<(), CliError> {
    let dim = model.dim;
    let mut w = csv::Writer::from_path(path)?;
    let mut head = vec!["r".to_string()];
    head.extend((0..dim).map(|k| format!("l1_{k}")));
    head.extend((0..dim).map(|k| format!("l2_{k}")));
    head.push("l3".into());
    w.write_record(&head)?;
    for (i, r) in model.r_grid.iter().enumerate() {
        let mut row = vec![*r];
        row.extend_from_slice(&model.l1[i][..dim]);
        row.extend_from_slice(&model.l2[i][..dim]);
        row.push(model.l3[i]);
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_diagnostics_csv(path: &Path, rows: &[triscale_core::macrosolve::Diagnostic]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_mask_pgm(path: &Path, sol: &DnsSolution) -> Result<(), CliError> {
    let cells = sol.grid.cells();
    let (nx, ny) = (cells[0], cells[1]);
    let mut s = format!("P2\n{nx} {ny}\n255\n");
    for j in (0..ny).rev() {
        let row: Vec<&str> = (0..nx).map(|i| if sol.mask()[j * nx + i] { "255" } else { "0" }).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}
