use std::f64::consts::PI;
use std::sync::Arc;

use triscale_core::macrosolve::{l2_error_at, solve_macro, MacroProblem, SpaceFn, SpaceTimeFn};
use triscale_core::upscale::{r_grid, EffectiveModel};
use triscale_core::SmallMat;

const A: [f64; 2] = [1.0, 0.7];
const CAP: f64 = 0.8;
const L1: [f64; 2] = [0.6, -0.4];
const L2: [f64; 2] = [0.5, 0.3];
const L3: f64 = 0.9;

/// Tables `L₁ = a r`, `L₂ = b r`, `L₃ = c r`; linear, so interpolation is exact.
fn model() -> EffectiveModel {
    let mut m = EffectiveModel::diffusion_only(SmallMat::diag(&A), CAP, 1.0, r_grid(2.0, 33));
    for (i, r) in m.r_grid.clone().into_iter().enumerate() {
        m.l1[i] = vec![L1[0] * r, L1[1] * r];
        m.l2[i] = vec![L2[0] * r, L2[1] * r];
        m.l3[i] = L3 * r;
    }
    m.update_lipschitz();
    m
}

fn phase(t: f64) -> (f64, f64) {
    (0.5 * (3.0 * t).exp(), 1.5 * (3.0 * t).exp())
}

fn exact(x: &[f64], t: f64) -> f64 {
    phase(t).0 * (PI * x[0]).sin() * (PI * x[1]).sin()
}

/// Source making `exact` solve
/// `C u_t − div(Â∇u + L₁(u)) + L₂(u)·∇u + L₃(u) = S`.
fn source() -> SpaceTimeFn {
    Arc::new(|x: &[f64], t: f64| {
        let (e, de) = phase(t);
        let u = exact(x, t);
        let ux = e * PI * (PI * x[0]).cos() * (PI * x[1]).sin();
        let uy = e * PI * (PI * x[0]).sin() * (PI * x[1]).cos();
        let dt = de * (PI * x[0]).sin() * (PI * x[1]).sin();
        let lap = (A[0] + A[1]) * PI * PI * u;
        let div_l1 = L1[0] * ux + L1[1] * uy;
        let conv = u * (L2[0] * ux + L2[1] * uy);
        CAP * dt + lap - div_l1 + conv + L3 * u
    })
}

fn run(n: usize, dt: f64, t_final: f64) -> f64 {
    let init: SpaceFn = Arc::new(|x: &[f64]| exact(x, 0.0));
    let mut p = MacroProblem::new(vec![1.0, 1.0], vec![n, n], t_final, dt, init, model());
    p.source = Some(source());
    let sol = solve_macro(&p).unwrap();
    assert_eq!(sol.clamped_evaluations, 0);
    l2_error_at(&sol, sol.snapshots.len() - 1, |x| exact(x, t_final))
}

#[test]
fn spatial_order_with_reaction_terms() {
    let errors: Vec<f64> = [8, 16, 32].iter().map(|&n| run(n, 2e-4, 0.1)).collect();
    for w in errors.windows(2) {
        let rate = (w[0] / w[1]).log2();
        assert!(rate >= 1.9, "rate {rate} from {errors:?}");
    }
}

#[test]
fn temporal_order_with_reaction_terms() {
    let errors: Vec<f64> = [0.05, 0.025, 0.0125].iter().map(|&dt| run(128, dt, 0.3)).collect();
    for w in errors.windows(2) {
        let rate = (w[0] / w[1]).log2();
        assert!(rate >= 0.9, "rate {rate} from {errors:?}");
    }
}
