use std::sync::OnceLock;

use ftnog::acceptance::{self, Check};
use ftnog::datagen::generate_dataset;
use ftnog::guidance::{command_nn, command_oracle, GuidanceQuery, OracleOptions};
use ftnog::mlp::{CommandModel, TrainReport};
use ftnog::sim::{simulate, GuidanceLaw, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn trained() -> &'static (CommandModel, TrainReport) {
    static MODEL: OnceLock<(CommandModel, TrainReport)> = OnceLock::new();
    MODEL.get_or_init(|| acceptance::train_reduced(0).expect("training failed"))
}

fn report(checks: &[Check]) {
    for c in checks {
        println!("{c}");
    }
    let failed: Vec<_> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
}

#[test]
fn criterion_1_oracle_impact_time_sweep() {
    report(&acceptance::criterion_1().unwrap());
}

#[test]
fn criterion_2_network_impact_time_sweep() {
    report(&acceptance::criterion_2(&trained().0).unwrap());
}

#[test]
fn criterion_3_salvo() {
    report(&acceptance::criterion_3().unwrap());
}

#[test]
fn criterion_4_offset_start() {
    report(&acceptance::criterion_4().unwrap());
}

#[test]
fn criterion_5_dataset() {
    report(&acceptance::criterion_5().unwrap());
}

#[test]
fn criterion_6_properties() {
    report(&acceptance::criterion_6(Some(&trained().0)).unwrap());
}

#[test]
fn criterion_7_training() {
    report(&acceptance::criterion_7(&trained().1));
}

#[test]
fn network_commands_track_oracle() {
    let model = &trained().0;
    let data = generate_dataset(&acceptance::reduced_grid()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let opts = OracleOptions::default();
    let mut errors = Vec::new();
    let mut unsolved = 0;
    while errors.len() < 1000 {
        let s = data[rng.random_range(0..data.len())];
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let q = GuidanceQuery::new(s.r, sign * s.sigma, s.t_go, 1.0);
        let Ok(sol) = command_oracle(&q, &opts) else {
            unsolved += 1;
            continue;
        };
        let nn = command_nn(model, &q).unwrap();
        errors.push((nn - sol.command).abs() / sol.command.abs());
    }
    errors.sort_by(f64::total_cmp);
    let (median, p95) = (errors[499], errors[949]);
    println!("relative command error: median {median:.4}, 95th percentile {p95:.4} ({unsolved} queries without an oracle root skipped)");
    assert!(median <= 0.02 && p95 <= 0.10);
}

#[test]
fn network_effort_close_to_oracle_over_headings() {
    let model = &trained().0;
    let mut worst = 0.0f64;
    for deg in (10..=170).step_by(10) {
        let theta = (deg as f64).to_radians();
        let make = |law| Scenario::with_target((-5000.0, 0.0), theta, (0.0, 0.0), 500.0, 40.0, law);
        let oracle = simulate(&make(GuidanceLaw::Oracle), None).unwrap();
        let nn = simulate(&make(GuidanceLaw::Nn), Some(model)).unwrap().with_reference(oracle.effort);
        let dj = nn.delta_j.unwrap();
        println!("heading {deg:>3} deg: oracle J {:.1}, network J {:.1}, dJ {:+.3}%", oracle.effort, nn.effort, 100.0 * dj);
        worst = worst.max(dj.abs());
    }
    assert!(worst <= 0.01, "worst dJ {worst}");
}
