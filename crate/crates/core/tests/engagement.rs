use std::f64::consts::PI;

use ftnog::datagen::{generate_dataset, DatagenConfig};
use ftnog::guidance::{command_oracle, solve_ocp, GuidanceQuery, OracleOptions};
use ftnog::kinematics::CartesianState;
use ftnog::sim::{salvo, simulate, write_trajectory_to, GuidanceLaw, Scenario, TRAJECTORY_HEADER};
use ftnog::Error;

#[test]
fn collision_course_needs_no_turning() {
    let start = CartesianState::new(-6000.0, 0.0, 0.0);
    let sol = solve_ocp(&start, 300.0, 20.0, 0.01, &OracleOptions::default()).unwrap();
    assert!(sol.effort.abs() < 1e-9, "J = {}", sol.effort);
    assert!(sol.miss_distance < 1e-6);
    let pn = simulate(&Scenario::new(start, 300.0, 20.0, GuidanceLaw::Pn), None).unwrap();
    assert_eq!(pn.effort, 0.0);
    assert!((pn.impact_time - 20.0).abs() <= 0.01);
}

#[test]
fn open_and_closed_loop_oracle_agree() {
    let start = CartesianState::new(-8000.0, 3000.0, -0.3);
    let sc = Scenario::new(start, 400.0, 30.0, GuidanceLaw::Oracle);
    let open = solve_ocp(&start, sc.speed, sc.t_f, sc.dt, &sc.oracle).unwrap();
    let closed = simulate(&sc, None).unwrap();
    assert!((open.effort - closed.effort).abs() <= 2e-3 * open.effort);
    assert!(closed.miss_distance <= 1.0);
    assert!((closed.impact_time - 30.0).abs() <= 0.02);
}

#[test]
fn longer_impact_time_costs_more_near_the_direct_path() {
    let start = CartesianState::new(-10000.0, 0.0, 0.2);
    let j = |t_f: f64| solve_ocp(&start, 500.0, t_f, 0.01, &OracleOptions::default()).unwrap().effort;
    let (a, b, c) = (j(21.0), j(24.0), j(27.0));
    assert!(a < b && b < c, "{a} {b} {c}");
}

#[test]
fn oracle_rejects_unreachable_queries() {
    let q = GuidanceQuery::new(5000.0, 0.4, 9.0, 500.0);
    assert!(matches!(command_oracle(&q, &OracleOptions::default()), Err(Error::TargetUnreachable { .. })));
}

#[test]
fn network_law_without_model_is_reported() {
    let sc = Scenario::new(CartesianState::new(-5000.0, 0.0, 0.3), 500.0, 12.0, GuidanceLaw::Nn);
    assert!(matches!(simulate(&sc, None), Err(Error::MissingModel)));
}

#[test]
fn salvo_needs_a_shared_impact_time() {
    let a = Scenario::new(CartesianState::new(-5000.0, 0.0, 0.3), 500.0, 12.0, GuidanceLaw::Pn);
    let b = Scenario { t_f: 13.0, ..a.clone() };
    assert!(matches!(salvo(&[a, b], None), Err(Error::InvalidConfig(_))));
}

#[test]
fn trajectory_csv_has_one_row_per_point() {
    let sc = Scenario::new(CartesianState::new(-3000.0, 1000.0, PI / 6.0), 300.0, 12.0, GuidanceLaw::Pn);
    let res = simulate(&sc, None).unwrap();
    let mut buf = Vec::new();
    write_trajectory_to(&res, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(TRAJECTORY_HEADER));
    assert_eq!(lines.count(), res.trajectory.len());
}

#[test]
fn dataset_targets_stay_inside_the_grid_horizon() {
    let cfg = DatagenConfig {
        n_i: 8,
        n_j: 8,
        ..DatagenConfig::reduced()
    };
    let data = generate_dataset(&cfg).unwrap();
    assert!(!data.is_empty());
    for s in &data {
        assert!(s.t_go > 0.0 && s.t_go <= cfg.t_bar + 1e-12);
        assert!(s.r > 0.0 && s.r < s.t_go * (1.0 + 1e-12));
        assert!(s.sigma > 0.0 && s.sigma < PI);
    }
}
