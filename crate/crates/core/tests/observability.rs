mod common;

use mixtraffic::ltv::{
    anti_diagonal, anti_triangular_determinant, build_system_measured,
    build_system_unmeasured_offramps, check_observability, observability_matrix,
    observability_matrix_with_output, selector_output, zero_columns,
};
use nalgebra::DMatrix;
use rand::Rng;

use common::*;

fn lu_determinant(obs: &DMatrix<f64>) -> f64 {
    obs.clone().lu().determinant()
}

#[test]
fn determinant_is_anti_diagonal_product_on_random_frames() {
    let mut rng = rng(11);
    for trial in 0..100 {
        let n = rng.random_range(2..=20);
        let geom = geometry(n);
        let systems: Vec<_> = (0..n - 1)
            .map(|_| build_system_measured(&random_frame(&mut rng, n), &geom).unwrap())
            .collect();
        let obs = observability_matrix(&systems).unwrap();
        let det = anti_triangular_determinant(&obs);
        let lu = lu_determinant(&obs);
        assert!(det != 0.0 && det.is_finite(), "trial {trial}");
        assert!(
            ((lu - det) / det).abs() < 1e-9,
            "trial {trial} n={n}: {lu:e} vs {det:e}"
        );
    }
}

#[test]
fn observability_matrix_is_anti_lower_triangular() {
    let mut rng = rng(3);
    let geom = geometry(8);
    let systems: Vec<_> = (0..7)
        .map(|_| build_system_measured(&random_frame(&mut rng, 8), &geom).unwrap())
        .collect();
    let obs = observability_matrix(&systems).unwrap();
    for j in 0..8 {
        for c in 0..8 {
            if c + j < 7 {
                assert_eq!(obs[(j, c)], 0.0, "({j},{c})");
            }
        }
    }
    assert!(anti_diagonal(&obs).iter().all(|a| *a > 0.0));
}

#[test]
fn interior_sensor_leaves_downstream_unobservable() {
    let mut rng = rng(5);
    for n in [2, 5, 12, 20] {
        let geom = geometry(n);
        let rates: Vec<f64> = (0..n).map(|i| if i % 4 == 3 { 0.1 } else { 0.0 }).collect();
        let systems: Vec<_> = (0..n - 1)
            .map(|_| {
                build_system_unmeasured_offramps(&random_frame(&mut rng, n), &geom, &rates).unwrap()
            })
            .collect();
        for j in 1..n {
            let obs = observability_matrix_with_output(&systems, &selector_output(n, j).unwrap())
                .unwrap();
            assert_eq!(
                zero_columns(&obs),
                ((j + 1)..=n).collect::<Vec<_>>(),
                "n={n} J={j}"
            );
        }
        let report = check_observability(&systems).unwrap();
        assert!(report.observable);
        assert!(report.interior_sensor_unobservable);
    }
}
