//! SVG figures of a convergence report.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::CliError;
use crate::report::ConvergenceReport;

const SIZE: (u32, u32) = (720, 480);
const PALETTE: [RGBColor; 4] = [RGBColor(31, 119, 180), RGBColor(214, 39, 40), RGBColor(44, 160, 44), RGBColor(148, 103, 189)];

fn plot_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Plot(e.to_string())
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(v), b.max(v)));
    if lo > hi {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5 * lo.abs().max(1.0), hi + 0.5 * hi.abs().max(1.0))
    } else {
        (lo, hi)
    }
}

/// Log-log plain and corrected error against `ε`.
pub fn convergence_plot(report: &ConvergenceReport, path: &Path) -> Result<(), CliError> {
    let rows = &report.eps_rows;
    let (elo, ehi) = bounds(rows.iter().map(|r| r.eps));
    let (vlo, vhi) = bounds(rows.iter().flat_map(|r| [r.plain_error, r.corrector_error]).filter(|v| *v > 0.0));
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("error against eps", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d((elo / 1.5..ehi * 1.5).log_scale(), (vlo / 2.0..vhi * 2.0).log_scale())
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("eps")
        .y_desc("L2 error")
        .draw()
        .map_err(plot_err)?;
    let mut sorted = rows.clone();
    sorted.sort_by(|a, b| a.eps.total_cmp(&b.eps));
    for (k, (label, pick)) in [("plain", 0usize), ("corrector", 1)].into_iter().enumerate() {
        let pts: Vec<(f64, f64)> = sorted
            .iter()
            .map(|r| (r.eps, if pick == 0 { r.plain_error } else { r.corrector_error }))
            .collect();
        let color = PALETTE[k];
        chart
            .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(label)
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 20, y)], color));
        chart
            .draw_series(pts.into_iter().map(|p| Circle::new(p, 4, color.filled())))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// `‖u_ε(t)‖` for every ε.
pub fn energy_plot(report: &ConvergenceReport, path: &Path) -> Result<(), CliError> {
    let series = &report.energy_series;
    let (tlo, thi) = bounds(series.iter().flat_map(|(_, s)| s.iter().map(|p| p.0)));
    let (_, vhi) = bounds(series.iter().flat_map(|(_, s)| s.iter().map(|p| p.1)));
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("L2 norm of the fine-scale solution", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(tlo..thi, 0.0..vhi * 1.1)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("t").y_desc("norm").draw().map_err(plot_err)?;
    for (k, (eps, s)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(s.iter().copied(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(format!("eps = {eps}"))
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 20, y)], color));
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Paired bars of plain and corrected error per ε.
pub fn corrector_bars(report: &ConvergenceReport, path: &Path) -> Result<(), CliError> {
    let mut rows = report.eps_rows.clone();
    rows.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    let (_, vhi) = bounds(rows.iter().flat_map(|r| [r.plain_error, r.corrector_error]));
    let n = rows.len().max(1) as f64;
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("plain and corrected error", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(0.0..n, 0.0..vhi * 1.12)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(0)
        .y_desc("L2 error")
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(rows.iter().enumerate().map(|(i, r)| {
            Text::new(format!("eps = {}", r.eps), (i as f64 + 0.3, vhi * 1.06), ("sans-serif", 14))
        }))
        .map_err(plot_err)?;
    for (k, label) in ["plain", "corrector"].into_iter().enumerate() {
        let color = PALETTE[k];
        chart
            .draw_series(rows.iter().enumerate().map(|(i, r)| {
                let v = if k == 0 { r.plain_error } else { r.corrector_error };
                let x0 = i as f64 + 0.1 + 0.4 * k as f64;
                Rectangle::new([(x0, 0.0), (x0 + 0.4, v)], color.filled())
            }))
            .map_err(plot_err)?
            .label(label)
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 12, y + 5)], color.filled()));
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Probe error against `ε` per test function.
pub fn msconv_plot(report: &ConvergenceReport, path: &Path) -> Result<(), CliError> {
    let rows = &report.msconv;
    let (elo, ehi) = bounds(rows.iter().map(|r| r.eps));
    let floor = 1e-16;
    let (vlo, vhi) = bounds(rows.iter().map(|r| r.error.max(floor)));
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("probe error against eps", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d((elo / 1.5..ehi * 1.5).log_scale(), (vlo / 2.0..vhi * 2.0).log_scale())
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("eps").y_desc("error").draw().map_err(plot_err)?;
    let mut names: Vec<&str> = rows.iter().map(|r| r.function.as_str()).collect();
    names.dedup();
    for (k, name) in names.into_iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.function == name)
            .map(|r| (r.eps, r.error.max(floor)))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        chart
            .draw_series(LineSeries::new(pts, color.stroke_width(2)))
            .map_err(plot_err)?
            .label(name.to_string())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 20, y)], color));
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Writes every figure the report has data for and returns their paths.
pub fn emit_plots(report: &ConvergenceReport, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    if !report.eps_rows.is_empty() {
        for (name, f) in [
            ("convergence.svg", convergence_plot as fn(&ConvergenceReport, &Path) -> Result<(), CliError>),
            ("energy.svg", energy_plot),
            ("corrector.svg", corrector_bars),
        ] {
            let p = dir.join(name);
            f(report, &p)?;
            out.push(p);
        }
    }
    if !report.msconv.is_empty() {
        let p = dir.join("msconv.svg");
        msconv_plot(report, &p)?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::{EpsRow, MsconvRow};

    #[test]
    fn figures_are_written() {
        let cfg = crate::RunConfig::from_toml(
            "[geometry]\nn_y = 8\nn_z = 8\ntrivial_medium = true\n\
             [coefficients.diffusion]\nkind = \"constant\"\nmatrix = [[1.0, 0.0], [0.0, 1.0]]\n",
        )
        .unwrap();
        let mut report = ConvergenceReport::new(&cfg);
        for (eps, e) in [(0.5, 1e-2), (0.25, 5e-3)] {
            report.eps_rows.push(EpsRow {
                eps,
                plain_error: e,
                relative_error: e,
                corrector_error: 0.8 * e,
                sup_l2: 0.4,
                grad_sq_integral: 0.1,
                steps: 10,
                halvings: 0,
                picard_iterations: 20,
            });
            report.energy_series.push((eps, vec![(0.0, 0.5), (0.1, 0.4)]));
            report.msconv.push(MsconvRow {
                function: "one".into(),
                eps,
                value: 1.0,
                limit: 1.0 + e,
                error: e,
            });
        }
        let dir = tempfile::tempdir().unwrap();
        let files = emit_plots(&report, dir.path()).unwrap();
        assert_eq!(files.len(), 4);
        for f in files {
            let s = std::fs::read_to_string(f).unwrap();
            assert!(s.contains("<svg") && s.contains("eps"));
        }
    }
}
