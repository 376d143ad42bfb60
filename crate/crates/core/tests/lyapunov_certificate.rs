use nalgebra::{DMatrix, Matrix4};
use neurodob::linalg::spectral_radius;
use neurodob::lqr::{design, LqrWeights};
use neurodob::road::builtin_maps;
use neurodob::sim::{simulate, Assets, ControllerStack, ScenarioConfig, SequenceCompensator};
use neurodob::stability::{certify, check_decrement, empirical_bound_check, solve_discrete_lyapunov, LYAPUNOV_TOL};
use neurodob::vehicle::{discrete_model, PlantConfig, VehicleParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `Σ (Φᵀ)^k Q0 Φ^k` until the terms vanish.
fn series(phi: &DMatrix<f64>, q0: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = q0.clone();
    let mut a = phi.clone();
    for _ in 0..100_000 {
        let term = a.transpose() * q0 * &a;
        p += &term;
        if term.norm() < 1e-18 * p.norm() {
            break;
        }
        a = &a * phi;
    }
    p
}

#[test]
fn lyapunov_matches_truncated_series() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut done = 0;
    while done < 50 {
        let n = 1 + done % 4;
        let mut phi = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let rho = spectral_radius(&phi);
        if rho == 0.0 {
            continue;
        }
        phi *= rng.random_range(0.1..0.95) / rho;
        let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let q0 = &l * l.transpose() + DMatrix::identity(n, n);
        let p = solve_discrete_lyapunov(&phi, &q0, LYAPUNOV_TOL).unwrap();
        let oracle = series(&phi, &q0);
        let err = (&p - &oracle).norm() / oracle.norm();
        assert!(err < 1e-8, "n = {n}, rel err {err}");
        done += 1;
    }
}

#[test]
fn bounded_compensation_respects_certificate() {
    let v = VehicleParams::default();
    let model = discrete_model(&v).unwrap();
    let lqr = design(&model, &LqrWeights::default()).unwrap();
    let maps = builtin_maps();
    let map = &maps.map1;
    let eps1 = 0.05;
    let eps2 = v.vx * map.max_abs_curvature();
    let cert = certify(&model, &lqr, eps1, eps2, &Matrix4::identity()).unwrap();
    let assets = Assets {
        vehicle: &v,
        lqr: &lqr,
        dob: None,
        neurodob: None,
        map,
    };
    let mut cfg = ScenarioConfig::new("map1", ControllerStack::LqrNeuroDob);
    cfg.plant = PlantConfig::nominal();
    cfg.duration = 20.0;
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..cfg.steps(v.ts)).map(|_| rng.random_range(-eps1..=eps1)).collect();
        let log = simulate(&cfg, &assets, Some(&mut SequenceCompensator(w))).unwrap();
        let dec = check_decrement(&cert, &log);
        assert_eq!(dec.violations, 0, "worst margin {}", dec.worst_margin);
        assert!(empirical_bound_check(&cert, &log, 0.0).within_bound);
    }
}
