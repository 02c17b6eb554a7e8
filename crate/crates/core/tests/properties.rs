use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use triscale_core::cellgeo::{build_cell_geometry, perforated_indicator, GeometrySpec, ShapeSpec};
use triscale_core::mesocell::discrete_duality_check;
use triscale_core::microcell::{pore_tensors, solve_micro};
use triscale_core::{CellGeometry, SmallMat};

fn pore_geometries() -> Vec<CellGeometry> {
    let shapes = vec![
        vec![ShapeSpec::centered_box(2, 0.5)],
        vec![ShapeSpec::Box {
            center: vec![0.375, 0.5],
            half_widths: vec![0.125, 0.3125],
        }],
        vec![ShapeSpec::Box {
            center: vec![0.25, 0.25],
            half_widths: vec![0.125, 0.125],
        }],
    ];
    shapes
        .into_iter()
        .map(|pores| {
            build_cell_geometry(&GeometrySpec {
                dim: 2,
                fractures: vec![],
                pores,
                n_y: 8,
                n_z: 16,
                trivial_medium: false,
            })
            .unwrap()
        })
        .collect()
}

fn spd() -> impl Strategy<Value = SmallMat> {
    (0.2f64..3.0, 0.2f64..3.0, -1.0f64..1.0).prop_map(|(a, b, c)| {
        // L Lᵀ with a positive diagonal.
        let l = SmallMat::from_row_major(&[a, 0.0, c, b]);
        l.mul(&l.transpose())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn pore_tensor_is_symmetric_spd_and_below_voigt(m in spd(), xi in (-1.0f64..1.0, -1.0f64..1.0), c in 0.1f64..10.0) {
        for geom in pore_geometries() {
            let t = pore_tensors(&m, &geom).unwrap();
            prop_assert!(t.asymmetry <= 1e-8);
            prop_assert!(t.a_tilde.is_spd(0.0));
            let v = [xi.0, xi.1, 0.0];
            prop_assert!(t.a_tilde.quad_form(&v) <= geom.zs_measure * m.quad_form(&v) * (1.0 + 1e-12));
            let scaled = pore_tensors(&m.scale(c), &geom).unwrap();
            let diff = scaled.a_tilde.max_abs_diff(&t.a_tilde.scale(c));
            prop_assert!(diff <= 1e-12 * c * t.a_tilde.max_abs());
        }
    }

    #[test]
    fn duality_is_antisymmetric_on_random_fields(seed in any::<u64>(), n_tau in 4usize..24) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 50;
        let mut field = || -> Vec<Vec<f64>> {
            (0..n_tau).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
        };
        let u = field();
        let v = field();
        let mass: Vec<f64> = (0..n).map(|i| 0.5 + (i as f64 * 0.37).sin().abs()).collect();
        let (a, b) = discrete_duality_check(&u, &v, &mass);
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn indicator_is_lattice_consistent(x in (0.0f64..1.0, 0.0f64..1.0), i in -3i32..3, j in -3i32..3, k in 1usize..5) {
        let geom = build_cell_geometry(&GeometrySpec {
            dim: 2,
            fractures: vec![ShapeSpec::centered_box(2, 0.25)],
            pores: vec![ShapeSpec::centered_box(2, 0.5)],
            n_y: 16,
            n_z: 16,
            trivial_medium: false,
        })
        .unwrap();
        let eps = 1.0 / k as f64;
        let p = [x.0, x.1];
        let z_shift = [x.0 + eps * eps * i as f64, x.1 + eps * eps * j as f64];
        let y_shift = [x.0 + eps * i as f64, x.1 + eps * j as f64];
        let pore = |q: &[f64]| geom.in_solid(&[q[0] / (eps * eps), q[1] / (eps * eps)]);
        let frac = |q: &[f64]| geom.in_matrix(&[q[0] / eps, q[1] / eps]);
        // Points within 1e-9 of a raster line may round either way.
        let near_line = |q: &[f64], s: f64| q.iter().any(|v| {
            let t = v / s * 16.0;
            (t - t.round()).abs() < 1e-6
        });
        if !near_line(&p, eps * eps) && !near_line(&z_shift, eps * eps) {
            prop_assert_eq!(pore(&p), pore(&z_shift));
        }
        if !near_line(&p, eps) && !near_line(&y_shift, eps) && !near_line(&p, eps * eps) && !near_line(&y_shift, eps * eps) {
            prop_assert_eq!(frac(&p), frac(&y_shift));
            prop_assert_eq!(
                perforated_indicator(&geom, eps, &p),
                u8::from(frac(&p) && pore(&p))
            );
        }
    }
}

#[test]
fn mirror_symmetric_pore_decouples_axes() {
    let geom = &pore_geometries()[0];
    let m = SmallMat::diag(&[2.0, 0.5]);
    let t = pore_tensors(&m, geom).unwrap();
    assert!(t.a_tilde.m[0][1].abs() < 1e-12);
    // Swapping the axes of M swaps the diagonal of Ã for a square pore.
    let swapped = pore_tensors(&SmallMat::diag(&[0.5, 2.0]), geom).unwrap();
    assert!((t.a_tilde.m[0][0] - swapped.a_tilde.m[1][1]).abs() < 1e-12);
}

#[test]
fn micro_residuals_are_small() {
    for geom in pore_geometries() {
        let c = solve_micro(&SmallMat::from_row_major(&[1.5, 0.4, 0.4, 1.0]), &geom).unwrap();
        assert!(c.residuals.iter().all(|r| *r <= 1e-8), "{:?}", c.residuals);
    }
}
