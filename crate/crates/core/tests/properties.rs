use std::f64::consts::PI;

use ftnog::datagen::{read_dataset, write_dataset, Sample};
use ftnog::guidance::{command_nn, pn_command_polar, GuidanceQuery};
use ftnog::kinematics::{cartesian_to_polar, step_cartesian, step_polar, wrap_angle, CartesianState};
use ftnog::mlp::{model_from_str, model_to_string, CommandModel, DEFAULT_LAYERS};
use ftnog::pmp::{hamiltonian, propagate_param, AdjointParams};
use ftnog::sim::control_effort;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model(seed: u64) -> CommandModel {
    CommandModel::glorot(&DEFAULT_LAYERS, 4.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wrap_lands_in_half_open_interval(a in -100.0f64..100.0) {
        let w = wrap_angle(a);
        prop_assert!(w > -PI && w <= PI);
        let turns = (a - w) / (2.0 * PI);
        prop_assert!((turns - turns.round()).abs() < 1e-9);
    }

    #[test]
    fn polar_and_cartesian_steps_agree(
        x in -2e4f64..2e4, y in -2e4f64..2e4, theta in -PI..PI,
        u in -0.2f64..0.2, speed in 100.0f64..800.0,
    ) {
        let s = CartesianState::new(x, y, theta);
        prop_assume!(s.range() > 2000.0);
        let dt = 0.01;
        let next = cartesian_to_polar(&step_cartesian(&s, u, dt, speed).unwrap()).unwrap();
        let direct = step_polar(&cartesian_to_polar(&s).unwrap(), u, dt, speed).unwrap();
        prop_assert!((next.r - direct.r).abs() <= 1e-8 * s.range());
        prop_assert!(wrap_angle(next.sigma - direct.sigma).abs() <= 1e-10);
    }

    #[test]
    fn hamiltonian_is_constant_along_extremals(alpha in 0.05f64..10.0, beta in 0.01f64..PI) {
        let p = AdjointParams { alpha, beta };
        let traj = propagate_param(p, 3.0, 0.005).unwrap();
        let h0 = alpha * beta.cos();
        for s in &traj.samples {
            prop_assert!((hamiltonian(&s.state(), &p) - h0).abs() <= 1e-6 * (1.0 + h0.abs()));
        }
    }

    #[test]
    fn mirrored_costates_mirror_the_command(alpha in 0.05f64..5.0, beta in 0.01f64..3.1) {
        let p = AdjointParams { alpha, beta };
        let a = propagate_param(p, 2.0, 0.01).unwrap();
        let b = propagate_param(p.mirrored(), 2.0, 0.01).unwrap();
        prop_assert_eq!(a.samples.len(), b.samples.len());
        for (s, m) in a.samples.iter().zip(&b.samples) {
            prop_assert!((s.command + m.command).abs() <= 1e-12 * (1.0 + s.command.abs()));
            prop_assert!((s.y + m.y).abs() <= 1e-12 * (1.0 + s.y.abs()));
        }
    }

    #[test]
    fn network_command_is_odd(
        seed in 0u64..1000, t_go in 0.05f64..3.5, frac in 0.01f64..0.999,
        sigma in 1e-6f64..PI, speed in 50.0f64..900.0,
    ) {
        let m = model(seed);
        let q = GuidanceQuery::new(frac * speed * t_go, sigma, t_go, speed);
        let a = command_nn(&m, &q).unwrap();
        let b = command_nn(&m, &GuidanceQuery { sigma: -sigma, ..q }).unwrap();
        prop_assert_eq!(a.to_bits(), (-b).to_bits());
    }

    #[test]
    fn pn_command_is_odd(r in 10.0f64..5e4, sigma in -PI..PI, speed in 50.0f64..900.0) {
        let a = pn_command_polar(&ftnog::kinematics::PolarState::new(r, sigma), speed, 3.0).unwrap();
        let b = pn_command_polar(&ftnog::kinematics::PolarState::new(r, -sigma), speed, 3.0).unwrap();
        prop_assert!((a + b).abs() <= 1e-15 * (1.0 + a.abs()));
    }

    #[test]
    fn model_text_round_trip_is_exact(seed in 0u64..10_000) {
        let m = model(seed);
        let back = model_from_str(&model_to_string(&m)).unwrap();
        prop_assert_eq!(&back, &m);
    }

    #[test]
    fn effort_is_nonnegative_and_quadratic(us in prop::collection::vec(-1.0f64..1.0, 2..50), k in 0.1f64..5.0) {
        let times: Vec<f64> = (0..us.len()).map(|i| 0.01 * i as f64).collect();
        let j = control_effort(&times, &us, 300.0);
        prop_assert!(j >= 0.0);
        let scaled: Vec<f64> = us.iter().map(|u| k * u).collect();
        let js = control_effort(&times, &scaled, 300.0);
        prop_assert!((js - k * k * j).abs() <= 1e-9 * (1.0 + js));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn dataset_file_round_trip_is_exact(rows in prop::collection::vec(
        (0.0f64..10.0, 0.0f64..PI, 0.0f64..10.0, -1e3f64..1e3), 0..40,
    )) {
        let samples: Vec<Sample> = rows.iter().map(|&(r, sigma, t_go, u)| Sample { r, sigma, t_go, u }).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_dataset(&samples, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        prop_assert_eq!(back.len(), samples.len());
        for (a, b) in back.iter().zip(&samples) {
            prop_assert_eq!(
                [a.r, a.sigma, a.t_go, a.u].map(f64::to_bits),
                [b.r, b.sigma, b.t_go, b.u].map(f64::to_bits)
            );
        }
    }
}
