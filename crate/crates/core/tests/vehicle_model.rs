//! Bicycle-model construction against an independent transcription of the
//! error-dynamics formulas.

#![allow(clippy::needless_range_loop)]

use nalgebra::Matrix4;
use neurodob::vehicle::{build_continuous, discretize, VehicleParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rajamani-style lateral error dynamics, written out element by element.
fn reference_a_b(p: &VehicleParams) -> ([[f64; 4]; 4], [f64; 4], [f64; 4]) {
    let (m, iz, lf, lr, cf, cr, v) = (p.mass, p.yaw_inertia, p.lf, p.lr, p.caf, p.car, p.vx);
    let mut a = [[0.0; 4]; 4];
    a[0][1] = 1.0;
    a[1][1] = -(2.0 * cf + 2.0 * cr) / (m * v);
    a[1][2] = (2.0 * cf + 2.0 * cr) / m;
    a[1][3] = (-2.0 * cf * lf + 2.0 * cr * lr) / (m * v);
    a[2][3] = 1.0;
    a[3][1] = -(2.0 * lf * cf - 2.0 * lr * cr) / (iz * v);
    a[3][2] = (2.0 * lf * cf - 2.0 * lr * cr) / iz;
    a[3][3] = -(2.0 * lf * lf * cf + 2.0 * lr * lr * cr) / (iz * v);
    let b = [0.0, 2.0 * cf / m, 0.0, 2.0 * lf * cf / iz];
    let b2 = [
        0.0,
        -(2.0 * cf * lf - 2.0 * cr * lr) / (m * v) - v,
        0.0,
        -(2.0 * lf * lf * cf + 2.0 * lr * lr * cr) / (iz * v),
    ];
    (a, b, b2)
}

fn rel_err(got: f64, want: f64) -> f64 {
    if want == 0.0 {
        got.abs()
    } else {
        ((got - want) / want).abs()
    }
}

fn random_params(rng: &mut ChaCha8Rng) -> VehicleParams {
    VehicleParams {
        mass: rng.random_range(800.0..3000.0),
        yaw_inertia: rng.random_range(800.0..6000.0),
        lf: rng.random_range(0.8..1.8),
        lr: rng.random_range(0.8..1.8),
        caf: rng.random_range(4e4..2e5),
        car: rng.random_range(4e4..2e5),
        vx: rng.random_range(3.0..40.0),
        ts: rng.random_range(0.001..0.05),
    }
}

#[test]
fn continuous_model_matches_reference_on_random_vehicles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let p = random_params(&mut rng);
        let cm = build_continuous(&p).unwrap();
        let (a, b, b2) = reference_a_b(&p);
        for i in 0..4 {
            for j in 0..4 {
                assert!(rel_err(cm.a[(i, j)], a[i][j]) <= 1e-12, "A[{i}][{j}] for {p:?}");
            }
            assert!(rel_err(cm.b[i], b[i]) <= 1e-12);
            assert!(rel_err(cm.b2[i], b2[i]) <= 1e-12);
        }
        let dm = discretize(&cm, p.ts);
        assert_eq!(dm.phi, Matrix4::identity() + cm.a * p.ts);
        assert_eq!(dm.gamma, cm.b * p.ts);
        assert_eq!(dm.gamma2, cm.b2 * p.ts);
    }
}

#[test]
fn reference_vehicle_understeers() {
    let p = VehicleParams::default();
    // Rear axle stiffer in moment terms → positive understeer gradient.
    assert!(p.understeer_gradient() > 0.0);
    assert!((p.wheelbase() - 2.578).abs() < 1e-12);
}
