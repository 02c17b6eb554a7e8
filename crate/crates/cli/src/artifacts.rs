//! Binary frame files with JSON sidecars, and typed load/save for each stage.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use triscale_core::dns::perforated_mask;
use triscale_core::macrosolve::Diagnostic;
use triscale_core::mesocell::{MesoCorrectorOmega, MesoCorrectorTheta, PeriodReport, PeriodicField};
use triscale_core::reaction::StateFunction;
use triscale_core::{CellGeometry, DnsSolution, MacroSolution, StructuredGrid};

use crate::error::CliError;

/// Sidecar of a `.bin` file: `n_frames` arrays of `frame_len` little-endian `f64`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameHeader<H> {
    pub n_frames: usize,
    pub frame_len: usize,
    pub meta: H,
}

pub fn write_frames<H: Serialize>(dir: &Path, stem: &str, meta: &H, frames: &[Vec<f64>]) -> Result<(), CliError> {
    let frame_len = frames.first().map_or(0, Vec::len);
    if frames.iter().any(|f| f.len() != frame_len) {
        return Err(CliError::Config(format!("{stem}: frames of unequal length")));
    }
    let mut w = BufWriter::new(File::create(dir.join(format!("{stem}.bin")))?);
    for f in frames {
        for v in f {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    let header = FrameHeader {
        n_frames: frames.len(),
        frame_len,
        meta,
    };
    std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&header)?)?;
    Ok(())
}

pub fn read_frames<H: DeserializeOwned>(dir: &Path, stem: &str) -> Result<(H, Vec<Vec<f64>>), CliError> {
    let json = dir.join(format!("{stem}.json"));
    let bin = dir.join(format!("{stem}.bin"));
    if !json.exists() || !bin.exists() {
        return Err(CliError::MissingArtifact(bin.display().to_string()));
    }
    let header: FrameHeader<H> = serde_json::from_str(&std::fs::read_to_string(json)?)?;
    let mut bytes = Vec::new();
    BufReader::new(File::open(&bin)?).read_to_end(&mut bytes)?;
    if bytes.len() != 8 * header.n_frames * header.frame_len {
        return Err(CliError::Config(format!("{} has the wrong size", bin.display())));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let frames = if header.frame_len == 0 {
        vec![Vec::new(); header.n_frames]
    } else {
        values.chunks(header.frame_len).map(<[f64]>::to_vec).collect()
    };
    Ok((header.meta, frames))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    if !path.exists() {
        return Err(CliError::MissingArtifact(path.display().to_string()));
    }
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn flatten_field(field: &PeriodicField, out: &mut Vec<Vec<f64>>) {
    out.extend(field.levels.iter().cloned());
}

fn take_field(frames: &mut impl Iterator<Item = Vec<f64>>, n_tau: usize, report: PeriodReport) -> PeriodicField {
    PeriodicField {
        levels: frames.take(n_tau).collect(),
        report,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ThetaMeta {
    n_tau: usize,
    residuals: Vec<f64>,
    reports: Vec<PeriodReport>,
}

pub fn save_theta(dir: &Path, theta: &MesoCorrectorTheta) -> Result<(), CliError> {
    let mut frames = Vec::new();
    for f in &theta.fields {
        flatten_field(f, &mut frames);
    }
    let meta = ThetaMeta {
        n_tau: theta.fields.first().map_or(0, |f| f.levels.len()),
        residuals: theta.residuals.clone(),
        reports: theta.fields.iter().map(|f| f.report).collect(),
    };
    write_frames(dir, "meso_theta", &meta, &frames)
}

pub fn load_theta(dir: &Path) -> Result<MesoCorrectorTheta, CliError> {
    let (meta, frames): (ThetaMeta, _) = read_frames(dir, "meso_theta")?;
    let mut it = frames.into_iter();
    let fields = meta.reports.iter().map(|r| take_field(&mut it, meta.n_tau, *r)).collect();
    Ok(MesoCorrectorTheta {
        fields,
        residuals: meta.residuals,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum OmegaMeta {
    Zero,
    Separable {
        state: StateFunction,
        n_tau: usize,
        residual: f64,
        report: PeriodReport,
    },
    Tabulated {
        r_grid: Vec<f64>,
        n_tau: usize,
        residuals: Vec<f64>,
        reports: Vec<PeriodReport>,
    },
}

pub fn save_omega(dir: &Path, omega: &MesoCorrectorOmega) -> Result<(), CliError> {
    let mut frames = Vec::new();
    let meta = match omega {
        MesoCorrectorOmega::Zero => OmegaMeta::Zero,
        MesoCorrectorOmega::Separable { state, base, residual } => {
            flatten_field(base, &mut frames);
            OmegaMeta::Separable {
                state: *state,
                n_tau: base.levels.len(),
                residual: *residual,
                report: base.report,
            }
        }
        MesoCorrectorOmega::Tabulated {
            r_grid,
            fields,
            residuals,
        } => {
            for f in fields {
                flatten_field(f, &mut frames);
            }
            OmegaMeta::Tabulated {
                r_grid: r_grid.clone(),
                n_tau: fields.first().map_or(0, |f| f.levels.len()),
                residuals: residuals.clone(),
                reports: fields.iter().map(|f| f.report).collect(),
            }
        }
    };
    write_frames(dir, "meso_omega", &meta, &frames)
}

pub fn load_omega(dir: &Path) -> Result<MesoCorrectorOmega, CliError> {
    let (meta, frames): (OmegaMeta, _) = read_frames(dir, "meso_omega")?;
    let mut it = frames.into_iter();
    Ok(match meta {
        OmegaMeta::Zero => MesoCorrectorOmega::Zero,
        OmegaMeta::Separable {
            state,
            n_tau,
            residual,
            report,
        } => MesoCorrectorOmega::Separable {
            state,
            base: take_field(&mut it, n_tau, report),
            residual,
        },
        OmegaMeta::Tabulated {
            r_grid,
            n_tau,
            residuals,
            reports,
        } => MesoCorrectorOmega::Tabulated {
            r_grid,
            fields: reports.iter().map(|r| take_field(&mut it, n_tau, *r)).collect(),
            residuals,
        },
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MacroMeta {
    lengths: Vec<f64>,
    cells: Vec<usize>,
    times: Vec<f64>,
    diagnostics: Vec<Diagnostic>,
    steps: usize,
    halvings: usize,
    clamped_evaluations: usize,
}

pub fn save_macro(dir: &Path, sol: &MacroSolution) -> Result<(), CliError> {
    let meta = MacroMeta {
        lengths: sol.grid.lengths().to_vec(),
        cells: sol.grid.cells().to_vec(),
        times: sol.times.clone(),
        diagnostics: sol.diagnostics.clone(),
        steps: sol.steps,
        halvings: sol.halvings,
        clamped_evaluations: sol.clamped_evaluations,
    };
    write_frames(dir, "macro_solution", &meta, &sol.snapshots)
}

pub fn load_macro(dir: &Path) -> Result<MacroSolution, CliError> {
    let (meta, snapshots): (MacroMeta, _) = read_frames(dir, "macro_solution")?;
    let grid = StructuredGrid::dirichlet_box(&meta.cells, &meta.lengths, None)?;
    Ok(MacroSolution {
        grid: Arc::new(grid),
        times: meta.times,
        snapshots,
        diagnostics: meta.diagnostics,
        steps: meta.steps,
        halvings: meta.halvings,
        clamped_evaluations: meta.clamped_evaluations,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DnsMeta {
    eps: f64,
    lengths: Vec<f64>,
    cells: Vec<usize>,
    times: Vec<f64>,
    energy: Vec<Diagnostic>,
    steps: usize,
    halvings: usize,
    picard_iterations: usize,
    t_final: f64,
}

pub fn dns_stem(eps: f64) -> String {
    format!("dns_eps{}", (1.0 / eps).round() as usize)
}

pub fn save_dns(dir: &Path, sol: &DnsSolution) -> Result<(), CliError> {
    let meta = DnsMeta {
        eps: sol.eps,
        lengths: sol.grid.lengths().to_vec(),
        cells: sol.grid.cells().to_vec(),
        times: sol.times.clone(),
        energy: sol.energy.clone(),
        steps: sol.steps,
        halvings: sol.halvings,
        picard_iterations: sol.picard_iterations,
        t_final: sol.t_final,
    };
    write_frames(dir, &dns_stem(sol.eps), &meta, &sol.snapshots)
}

/// The mask is not stored; it is rebuilt from the geometry.
pub fn load_dns(dir: &Path, eps: f64, geom: &CellGeometry) -> Result<DnsSolution, CliError> {
    let (meta, snapshots): (DnsMeta, _) = read_frames(dir, &dns_stem(eps))?;
    let mask = perforated_mask(geom, meta.eps, &meta.cells, &meta.lengths);
    let grid = StructuredGrid::dirichlet_box(&meta.cells, &meta.lengths, Some(mask))?;
    Ok(DnsSolution {
        eps: meta.eps,
        grid: Arc::new(grid),
        times: meta.times,
        snapshots,
        energy: meta.energy,
        steps: meta.steps,
        halvings: meta.halvings,
        picard_iterations: meta.picard_iterations,
        t_final: meta.t_final,
    })
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let frames = vec![vec![1.0, -2.5, f64::MIN_POSITIVE], vec![0.0, 3.0, 1e300]];
        write_frames(dir.path(), "x", &"meta", &frames).unwrap();
        let (meta, back): (String, _) = read_frames(dir.path(), "x").unwrap();
        assert_eq!(meta, "meta");
        assert_eq!(back, frames);
    }

    #[test]
    fn missing_frames_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let r: Result<(String, _), _> = read_frames(dir.path(), "absent");
        assert!(matches!(r, Err(CliError::MissingArtifact(_))));
    }
}
