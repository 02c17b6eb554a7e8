//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use triscale_cli::{Pipeline, RunConfig, Stage};
use triscale_core::cellgeo::{build_cell_geometry, GeometrySpec, ShapeSpec};
use triscale_core::coefficients::{CoefficientData, DensityPreset, DiffusionPreset};
use triscale_core::macrosolve::{l2_error_at, solve_macro, MacroProblem, SpaceFn, SpaceTimeFn};
use triscale_core::mesocell::{discrete_duality_check, solve_theta, MesoOptions, MesoSetup};
use triscale_core::microcell::{pore_tensors, solve_micro, tabulate_pore_tensors};
use triscale_core::pipeline::{homogenize, HomogenizeOptions};
use triscale_core::reaction::{build_potential, ReactionSpec, ReactionTerm, SpatialProfile, StateFunction};
use triscale_core::upscale::{r_grid, EffectiveModel};
use triscale_core::{CellGeometry, SmallMat};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn desk_config() -> RunConfig {
    RunConfig::load(&configs_dir().join("desk.toml")).expect("desk config")
}

fn trivial_cell(n_y: usize) -> CellGeometry {
    build_cell_geometry(&GeometrySpec {
        dim: 2,
        fractures: vec![],
        pores: vec![],
        n_y,
        n_z: 8,
        trivial_medium: true,
    })
    .unwrap()
}

fn max_abs(t: &[Vec<f64>]) -> f64 {
    t.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()))
}

fn identity_chain() -> Outcome {
    let geom = trivial_cell(16);
    let opts = HomogenizeOptions {
        n_tau: 4,
        ..Default::default()
    };
    let m = SmallMat::from_row_major(&[1.7, 0.4, 0.4, 0.9]);
    let coeffs = |matrix: SmallMat, rho: f64| CoefficientData {
        diffusion: DiffusionPreset::Constant { matrix },
        density: DensityPreset::Constant { value: rho },
    };
    let h = homogenize(&geom, &coeffs(m, 1.0), &ReactionTerm::zero(), &opts).unwrap();
    let a_err = h.model.a_hat().max_abs_diff(&m);
    let l_max = max_abs(&h.model.l1).max(max_abs(&h.model.l2)).max(h.model.l3.iter().fold(0.0, |a, v| a.max(v.abs())));

    let rho = 1.5;
    let heat = homogenize(&geom, &coeffs(SmallMat::identity(2), rho), &ReactionTerm::zero(), &opts).unwrap();
    let t_final = 0.1;
    let init: SpaceFn = Arc::new(|x: &[f64]| (PI * x[0]).sin() * (PI * x[1]).sin());
    let sol = solve_macro(&MacroProblem::new(vec![1.0, 1.0], vec![128, 128], t_final, 1e-4, init, heat.model.clone())).unwrap();
    let rho_bar = heat.model.rho_bar;
    let worst = (0..sol.snapshots.len())
        .map(|k| {
            let t = sol.times[k];
            l2_error_at(&sol, k, |x| (-2.0 * PI * PI * t / rho_bar).exp() * (PI * x[0]).sin() * (PI * x[1]).sin())
        })
        .fold(0.0, f64::max);
    outcome(
        a_err <= 1e-10 && l_max == 0.0 && worst <= 5e-3 && (rho_bar - rho).abs() < 1e-12,
        format!("|Â - M| = {a_err:.1e}, max |L| = {l_max:.1e}, heat L2 error {worst:.2e}"),
    )
}

/// Harmonic and arithmetic means of a two-phase layered coefficient by
/// midpoint quadrature across the layers.
fn layered_means(values: [f64; 2], fraction: f64) -> (f64, f64) {
    let n = 100_000;
    let (mut inv, mut mean) = (0.0, 0.0);
    for i in 0..n {
        let s = (i as f64 + 0.5) / n as f64;
        let a = if s < fraction { values[0] } else { values[1] };
        inv += 1.0 / a / n as f64;
        mean += a / n as f64;
    }
    (1.0 / inv, mean)
}

fn laminate() -> Outcome {
    let (harm, arith) = layered_means([1.0, 4.0], 0.5);
    let coeffs = CoefficientData {
        diffusion: DiffusionPreset::Laminate {
            values: [1.0, 4.0],
            axis: 0,
            fraction: 0.5,
        },
        density: DensityPreset::default(),
    };
    let opts = HomogenizeOptions {
        n_tau: 2,
        ..Default::default()
    };
    let h = homogenize(&trivial_cell(256), &coeffs, &ReactionTerm::zero(), &opts).unwrap();
    let a = h.model.a_hat();
    let e0 = (a.m[0][0] - harm).abs() / harm;
    let e1 = (a.m[1][1] - arith).abs() / arith;
    outcome(
        e0 < 1e-2 && e1 < 1e-2 && a.m[0][1].abs() < 1e-10,
        format!("Â = diag({:.6}, {:.6}) against ({harm:.6}, {arith:.6})", a.m[0][0], a.m[1][1]),
    )
}

fn pore_geometries() -> Vec<CellGeometry> {
    [
        vec![ShapeSpec::centered_box(2, 0.5)],
        vec![ShapeSpec::Box {
            center: vec![0.375, 0.5],
            half_widths: vec![0.125, 0.3125],
        }],
        vec![ShapeSpec::centered_disk(2, 0.3)],
    ]
    .into_iter()
    .map(|pores| {
        build_cell_geometry(&GeometrySpec {
            dim: 2,
            fractures: vec![],
            pores,
            n_y: 8,
            n_z: 32,
            trivial_medium: false,
        })
        .unwrap()
    })
    .collect()
}

fn spd_property_suite(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geoms = pore_geometries();
    let (mut asym, mut min_eig, mut voigt, mut homog) = (0.0f64, f64::MAX, f64::MIN, 0.0f64);
    for _ in 0..20 {
        let l = SmallMat::from_row_major(&[
            rng.random_range(0.2..3.0),
            0.0,
            rng.random_range(-1.0..1.0),
            rng.random_range(0.2..3.0),
        ]);
        let m = l.mul(&l.transpose());
        let c = rng.random_range(0.1..10.0);
        for g in &geoms {
            let t = pore_tensors(&m, g).unwrap();
            asym = asym.max(t.asymmetry);
            min_eig = min_eig.min(t.a_tilde.min_eigenvalue_sym());
            // Voigt bound: |Z_s| M - Ã is positive semidefinite.
            let gap = m.scale(g.zs_measure).add(&t.a_tilde.scale(-1.0));
            voigt = voigt.max(-gap.min_eigenvalue_sym() / m.max_abs());
            let scaled = pore_tensors(&m.scale(c), g).unwrap();
            homog = homog.max(scaled.a_tilde.max_abs_diff(&t.a_tilde.scale(c)) / (c * t.a_tilde.max_abs()));
        }
    }
    outcome(
        asym <= 1e-8 && min_eig > 0.0 && voigt <= 1e-12 && homog <= 1e-12,
        format!(
            "asymmetry {asym:.1e}, min eigenvalue {min_eig:.3}, Voigt violation {:.1e}, homogeneity {homog:.1e}",
            voigt.max(0.0)
        ),
    )
}

fn residuals(seed: u64) -> Outcome {
    let cfg = desk_config();
    let geom = cfg.build_geometry().unwrap();
    let m = SmallMat::from_row_major(&[1.3, 0.2, 0.2, 0.8]);
    let micro = solve_micro(&m, &geom).unwrap();
    let micro_res = micro.residuals.iter().copied().fold(0.0, f64::max);

    let opts = MesoOptions {
        tol_period: 1e-10,
        ..Default::default()
    };
    let table = tabulate_pore_tensors(&cfg.coefficients, &geom, cfg.discretization.n_tau).unwrap();
    let setup = MesoSetup::new(&table, &cfg.coefficients.density, &geom).unwrap();
    let theta = solve_theta(&setup, &opts).unwrap();
    let omega = triscale_core::mesocell::solve_omega(&setup, &cfg.reaction_term(), &[-1.0, 0.0, 1.0], &opts).unwrap();
    let meso_res = theta.residuals.iter().copied().fold(omega.max_residual(), f64::max);
    let reports: Vec<_> = theta.fields.iter().map(|f| f.report).chain(omega.reports()).collect();
    let defect = reports.iter().map(|r| r.defect).fold(0.0, f64::max);
    let mean = reports.iter().map(|r| r.max_weighted_mean).fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut duality = 0.0f64;
    for n_tau in [4, 8, 16, 32] {
        let n = 200;
        let mut field = || -> Vec<Vec<f64>> { (0..n_tau).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect() };
        let u = field();
        let v = field();
        let mass: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let (a, b) = discrete_duality_check(&u, &v, &mass);
        duality = duality.max((a - b).abs());
    }
    outcome(
        micro_res <= 1e-8 && meso_res <= 1e-8 && defect <= 1e-8 && mean <= 1e-12 && duality <= 1e-10,
        format!(
            "micro {micro_res:.1e}, meso {meso_res:.1e}, period defect {defect:.1e}, weighted mean {mean:.1e}, duality {duality:.1e}"
        ),
    )
}

fn potential() -> Outcome {
    let g = ReactionTerm::from_spec(
        &ReactionSpec {
            profile: SpatialProfile::Sine { axis: 0 },
            time_amplitude: 0.0,
            state: StateFunction::Linear { kappa: 1.0 },
            lipschitz: None,
        },
        2,
        2.0,
    );
    let samples = r_grid(1.0, 9);
    let mut errors = Vec::new();
    let (mut lap, mut bound_ok, mut c_g) = (0.0f64, true, 0.0f64);
    for n in [32, 64, 128] {
        let p = build_potential(&g, 2, n, 1, &samples).unwrap();
        lap = lap.max(p.laplacian_residual);
        c_g = c_g.max(p.c_g);
        let r = 0.8;
        let gr = p.g(0, r).unwrap();
        let err = gr
            .iter()
            .enumerate()
            .map(|(c, v)| {
                let y = p.grid.cell_center(c);
                // Δ R = sin(2π y₁) r  gives  ∂₁R = −r cos(2π y₁) / (2π).
                let exact = -r * (2.0 * PI * y[0]).cos() / (2.0 * PI);
                (v[0] - exact).abs().max(v[1].abs())
            })
            .fold(0.0, f64::max);
        errors.push(err);
        for &r in &samples {
            let sup = p.g(0, r).unwrap().iter().map(|v| v[0].hypot(v[1])).fold(0.0, f64::max);
            bound_ok &= sup <= p.c_g * r.abs() * (1.0 + 1e-12) + 1e-15;
        }
    }
    let rates: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    outcome(
        rates.iter().all(|r| *r >= 1.9) && lap <= 1e-10 && bound_ok,
        format!("rates {:.3}, {:.3}; Laplacian residual {lap:.1e}; C_G = {c_g:.4}", rates[0], rates[1]),
    )
}

fn msconv(out: &std::path::Path) -> Outcome {
    let cfg = desk_config();
    let mut p = Pipeline::new(cfg, out).unwrap();
    let report = match p.run(&[Stage::Msconv]) {
        Ok(r) => r.clone(),
        Err(e) => return outcome(false, e.to_string()),
    };
    let checks: Vec<_> = report.checks.iter().filter(|c| c.name.starts_with("probe")).collect();
    let detail = checks.iter().map(|c| format!("{}: {}", c.name, c.detail)).collect::<Vec<_>>().join("; ");
    outcome(checks.len() == 3 && checks.iter().all(|c| c.passed), detail)
}

fn main_theorem(out: &std::path::Path) -> Outcome {
    let cfg = desk_config();
    let mut p = Pipeline::new(cfg, out).unwrap();
    let stages = [Stage::CellMicro, Stage::CellMeso, Stage::Upscale, Stage::Macro, Stage::Dns, Stage::Compare];
    let report = match p.run(&stages) {
        Ok(r) => r.clone(),
        Err(e) => return outcome(false, e.to_string()),
    };
    let rows: Vec<String> = report
        .eps_rows
        .iter()
        .map(|r| format!("eps {}: plain {:.3e}, corrector {:.3e}, sup {:.4}", r.eps, r.plain_error, r.corrector_error, r.sup_l2))
        .collect();
    let checks: Vec<_> = report.checks.iter().filter(|c| !c.name.starts_with("probe")).collect();
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    outcome(
        report.eps_rows.len() == 3 && checks.len() == 3 && failed.is_empty(),
        format!("{}{}", rows.join("; "), if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }),
    )
}

const A: [f64; 2] = [1.0, 0.7];
const CAP: f64 = 0.8;
const L1: [f64; 2] = [0.6, -0.4];
const L2: [f64; 2] = [0.5, 0.3];
const L3: f64 = 0.9;

/// Linear tables, so interpolation in `r` is exact.
fn manufactured_model() -> EffectiveModel {
    let mut m = EffectiveModel::diffusion_only(SmallMat::diag(&A), CAP, 1.0, r_grid(2.0, 33));
    for (i, r) in m.r_grid.clone().into_iter().enumerate() {
        m.l1[i] = vec![L1[0] * r, L1[1] * r];
        m.l2[i] = vec![L2[0] * r, L2[1] * r];
        m.l3[i] = L3 * r;
    }
    m.update_lipschitz();
    m
}

fn exact(x: &[f64], t: f64) -> f64 {
    0.5 * (3.0 * t).exp() * (PI * x[0]).sin() * (PI * x[1]).sin()
}

/// Source for `C u_t − div(Â∇u + L₁(u)) + L₂(u)·∇u + L₃(u) = S`.
fn manufactured_source() -> SpaceTimeFn {
    Arc::new(|x: &[f64], t: f64| {
        let e = 0.5 * (3.0 * t).exp();
        let u = exact(x, t);
        let ux = e * PI * (PI * x[0]).cos() * (PI * x[1]).sin();
        let uy = e * PI * (PI * x[0]).sin() * (PI * x[1]).cos();
        let dt = 3.0 * u;
        let lap = (A[0] + A[1]) * PI * PI * u;
        CAP * dt + lap - (L1[0] * ux + L1[1] * uy) + u * (L2[0] * ux + L2[1] * uy) + L3 * u
    })
}

fn manufactured_error(n: usize, dt: f64, t_final: f64) -> f64 {
    let init: SpaceFn = Arc::new(|x: &[f64]| exact(x, 0.0));
    let mut p = MacroProblem::new(vec![1.0, 1.0], vec![n, n], t_final, dt, init, manufactured_model());
    p.source = Some(manufactured_source());
    let sol = solve_macro(&p).unwrap();
    l2_error_at(&sol, sol.snapshots.len() - 1, |x| exact(x, t_final))
}

fn manufactured_order() -> Outcome {
    let space: Vec<f64> = [8, 16, 32].iter().map(|&n| manufactured_error(n, 2e-4, 0.1)).collect();
    let time: Vec<f64> = [0.05, 0.025, 0.0125].iter().map(|&dt| manufactured_error(128, dt, 0.3)).collect();
    let rates = |e: &[f64]| e.windows(2).map(|w| (w[0] / w[1]).log2()).collect::<Vec<_>>();
    let (rs, rt) = (rates(&space), rates(&time));
    let min = |v: &[f64]| v.iter().copied().fold(f64::MAX, f64::min);
    outcome(
        min(&rs) >= 1.9 && min(&rt) >= 0.9,
        format!("spatial rates {:.3}, {:.3}; temporal rates {:.3}, {:.3}", rs[0], rs[1], rt[0], rt[1]),
    )
}

fn main() -> ExitCode {
    let seed = desk_config().seed;
    let dir = tempfile::tempdir().expect("temporary directory");
    let out = dir.path().join("desk");
    let criteria: Vec<(&str, f64, Box<dyn Fn() -> Outcome>)> = vec![
        ("identity chain", 60.0, Box::new(identity_chain)),
        ("laminate oracle", 60.0, Box::new(laminate)),
        ("SPD and bounds", 300.0, Box::new(move || spd_property_suite(seed))),
        ("cell-problem residuals", f64::INFINITY, Box::new(move || residuals(seed))),
        ("reaction potential", f64::INFINITY, Box::new(potential)),
        ("multi-scale probe", 120.0, Box::new({
            let out = out.clone();
            move || msconv(&out)
        })),
        ("main theorem at desk scale", 900.0, Box::new({
            let out = out.clone();
            move || main_theorem(&out)
        })),
        ("manufactured-solution order", f64::INFINITY, Box::new(manufactured_order)),
    ];
    let mut failures = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        let secs = start.elapsed().as_secs_f64();
        let within = secs <= *limit;
        let passed = o.passed && within;
        if !passed {
            failures += 1;
        }
        let budget = if limit.is_finite() { format!(", budget {limit:.0} s") } else { String::new() };
        println!(
            "criterion {} ({name}): {} ({}; {secs:.1} s{budget})",
            i + 1,
            if passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criterion(s) failed");
        ExitCode::FAILURE
    }
}
