use std::f64::consts::PI;
use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};

use triscale_bench::{box_cells, oscillating_coefficients};
use triscale_core::discretize::{assemble_stiffness, StructuredGrid};
use triscale_core::macrosolve::{solve_macro, MacroProblem, SpaceFn};
use triscale_core::mesocell::{solve_theta, MesoOptions, MesoSetup};
use triscale_core::microcell::{solve_micro, tabulate_pore_tensors};
use triscale_core::upscale::{r_grid, EffectiveModel};
use triscale_core::SmallMat;

fn assembly(c: &mut Criterion) {
    let grid = StructuredGrid::dirichlet_box(&[256, 256], &[1.0, 1.0], None).unwrap();
    let m = SmallMat::from_row_major(&[1.2, 0.1, 0.1, 0.8]);
    c.bench_function("stiffness assembly 256x256", |b| {
        b.iter(|| black_box(assemble_stiffness(&grid, |_| m).unwrap()))
    });
}

fn micro_solve(c: &mut Criterion) {
    let geom = box_cells(16, 64);
    let m = SmallMat::from_row_major(&[1.3, 0.2, 0.2, 0.8]);
    c.bench_function("pore-cell correctors n_z = 64", |b| b.iter(|| black_box(solve_micro(&m, &geom).unwrap())));
}

fn meso_period(c: &mut Criterion) {
    let geom = box_cells(32, 16);
    let coeffs = oscillating_coefficients();
    let table = tabulate_pore_tensors(&coeffs, &geom, 16).unwrap();
    let setup = MesoSetup::new(&table, &coeffs.density, &geom).unwrap();
    let opts = MesoOptions::default();
    let mut group = c.benchmark_group("meso");
    group.sample_size(10);
    group.bench_function("periodic correctors n_y = 32, n_tau = 16", |b| {
        b.iter(|| black_box(solve_theta(&setup, &opts).unwrap()))
    });
    group.finish();
}

fn macro_step(c: &mut Criterion) {
    let mut model = EffectiveModel::diffusion_only(SmallMat::diag(&[0.5, 0.4]), 0.75, 1.0, r_grid(2.0, 33));
    for (i, r) in model.r_grid.clone().into_iter().enumerate() {
        model.l1[i] = vec![0.1 * r, 0.0];
        model.l2[i] = vec![0.05 * r, 0.02 * r];
        model.l3[i] = -0.05 * r;
    }
    model.update_lipschitz();
    let init: SpaceFn = Arc::new(|x: &[f64]| (PI * x[0]).sin() * (PI * x[1]).sin());
    let dt = 1e-3;
    let problem = MacroProblem::new(vec![1.0, 1.0], vec![128, 128], dt, dt, init, model);
    c.bench_function("macro step 128x128", |b| b.iter(|| black_box(solve_macro(&problem).unwrap())));
}

criterion_group!(benches, assembly, micro_solve, meso_period, macro_step);
criterion_main!(benches);
