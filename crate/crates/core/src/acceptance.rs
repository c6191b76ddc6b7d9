//! End-to-end checks against reference engagement results, shared by the
//! `acceptance` test target and `ftnog verify`.

use std::f64::consts::PI;
use std::hash::Hasher;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datagen::{generate_cells, generate_dataset, read_dataset, write_dataset, write_dataset_to, DatagenConfig, Sample};
use crate::guidance::{command_nn, command_oracle, solve_ocp, GuidanceQuery, OracleOptions};
use crate::kinematics::CartesianState;
use crate::mlp::{load_model, save_model, train, CommandModel, TrainConfig, TrainReport, DEFAULT_LAYERS};
use crate::pmp::{hamiltonian, propagate_param, AdjointParams};
use crate::sim::{salvo, simulate, GuidanceLaw, Scenario};
use crate::Result;

/// One pass/fail line.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub criterion: u32,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(criterion: u32, name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            criterion,
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mark = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{mark}] {}: {} ({})", self.criterion, self.name, self.detail)
    }
}

fn within(value: f64, reference: f64, rel: f64) -> bool {
    ((value - reference) / reference).abs() <= rel
}

fn pct(value: f64, reference: f64) -> f64 {
    100.0 * (value - reference) / reference
}

/// Interceptor at the origin heading 60 degrees, target 10 km east, 500 m/s.
pub fn impact_time_sweep(t_f: f64, law: GuidanceLaw) -> Scenario {
    Scenario::with_target((0.0, 0.0), PI / 3.0, (10000.0, 0.0), 500.0, t_f, law)
}

/// `(t_f, optimal effort)` for [`impact_time_sweep`].
pub const SWEEP_EFFORT: [(f64, f64); 4] = [
    (25.0, 2.1350e4),
    (30.0, 3.0563e4),
    (40.0, 3.8738e4),
    (50.0, 3.9625e4),
];

pub fn offset_start(law: GuidanceLaw) -> Scenario {
    Scenario::new(CartesianState::new(-20000.0, -10000.0, PI / 4.0), 600.0, 50.0, law)
}

pub const OFFSET_START_EFFORT: f64 = 2.9158e4;

/// Four interceptors attacking the origin at a common impact time of 100 s.
pub fn salvo_scenarios(law: GuidanceLaw) -> Vec<Scenario> {
    [
        (-15000.0, 15000.0, -PI / 2.0, 300.0),
        (-22000.0, -10000.0, -11.0 * PI / 18.0, 350.0),
        (9000.0, -12000.0, PI / 2.0, 400.0),
        (10000.0, 28000.0, -4.0 * PI / 5.0, 450.0),
    ]
    .iter()
    .map(|&(x, y, th, v)| Scenario::new(CartesianState::new(x, y, th), v, 100.0, law))
    .collect()
}

pub const SALVO_OPTIMAL_EFFORT: [f64; 4] = [3.0916e3, 9.4638e3, 1.5813e4, 9.4364e3];
pub const SALVO_PN_EFFORT: [f64; 4] = [1.1610e3, 6.9592e3, 6.4474e3, 1.8474e3];
pub const SALVO_PN_IMPACT: [f64; 4] = [75.40, 140.61, 39.11, 68.52];

pub const DATASET_MAX_ROWS: usize = 4_590_000;
pub const DATASET_MIN_ROWS: usize = 4_000_000;

/// Grid used for the quick training run.
pub fn reduced_grid() -> DatagenConfig {
    DatagenConfig::reduced()
}

/// Generate the reduced grid and train with the default configuration.
pub fn train_reduced(seed: u64) -> Result<(CommandModel, TrainReport)> {
    let cfg = reduced_grid();
    let data = generate_dataset(&cfg)?;
    let tc = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    train(&data, cfg.t_bar, &tc)
}

/// Oracle closed loop over the impact-time sweep.
pub fn criterion_1() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let start = Instant::now();
    for (t_f, want) in SWEEP_EFFORT {
        let res = simulate(&impact_time_sweep(t_f, GuidanceLaw::Oracle), None)?;
        checks.push(Check::new(
            1,
            format!("oracle effort, t_f = {t_f} s"),
            within(res.effort, want, 0.01),
            format!("J = {:.1} vs {want:.1} ({:+.3}%)", res.effort, pct(res.effort, want)),
        ));
        checks.push(Check::new(
            1,
            format!("oracle miss and timing, t_f = {t_f} s"),
            res.miss_distance <= 5.0 && (res.impact_time - t_f).abs() <= 0.05,
            format!("miss {:.3e} m, impact {:.4} s", res.miss_distance, res.impact_time),
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    checks.push(Check::new(1, "oracle sweep runtime", secs <= 10.0, format!("{secs:.2} s of 10 s")));
    Ok(checks)
}

/// Network closed loop over the impact-time sweep.
pub fn criterion_2(model: &CommandModel) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for (t_f, want) in SWEEP_EFFORT {
        let res = simulate(&impact_time_sweep(t_f, GuidanceLaw::Nn), Some(model))?;
        checks.push(Check::new(
            2,
            format!("network effort, t_f = {t_f} s"),
            within(res.effort, want, 0.03),
            format!("J = {:.1} vs {want:.1} ({:+.2}%)", res.effort, pct(res.effort, want)),
        ));
        checks.push(Check::new(
            2,
            format!("network miss, t_f = {t_f} s"),
            res.miss_distance <= 20.0,
            format!("miss {:.3} m", res.miss_distance),
        ));
    }
    Ok(checks)
}

/// Salvo with the oracle and with proportional navigation.
pub fn criterion_3() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let oracle = salvo(&salvo_scenarios(GuidanceLaw::Oracle), None)?;
    let pn = salvo(&salvo_scenarios(GuidanceLaw::Pn), None)?;
    for k in 0..4 {
        let o = oracle[k].as_ref().map_err(|e| crate::Error::InvalidState(e.to_string()))?;
        let p = pn[k].as_ref().map_err(|e| crate::Error::InvalidState(e.to_string()))?;
        let n = k + 1;
        let (jo, jp, tp) = (SALVO_OPTIMAL_EFFORT[k], SALVO_PN_EFFORT[k], SALVO_PN_IMPACT[k]);
        checks.push(Check::new(
            3,
            format!("salvo #{n} oracle effort"),
            within(o.effort, jo, 0.01),
            format!("J = {:.1} vs {jo:.1} ({:+.3}%)", o.effort, pct(o.effort, jo)),
        ));
        checks.push(Check::new(
            3,
            format!("salvo #{n} PN effort"),
            within(p.effort, jp, 0.01),
            format!("J = {:.1} vs {jp:.1} ({:+.2}%)", p.effort, pct(p.effort, jp)),
        ));
        checks.push(Check::new(
            3,
            format!("salvo #{n} PN impact time"),
            within(p.impact_time, tp, 0.005),
            format!("{:.2} s vs {tp:.2} s ({:+.3}%)", p.impact_time, pct(p.impact_time, tp)),
        ));
    }
    Ok(checks)
}

/// Offset start: least-effort root selection and look-angle interiority.
pub fn criterion_4() -> Result<Vec<Check>> {
    let sc = offset_start(GuidanceLaw::Oracle);
    let res = simulate(&sc, None)?;
    let ocp = solve_ocp(&sc.initial, sc.speed, sc.t_f, sc.dt, &sc.oracle)?;
    // Sample the selected extremal itself over the unit time-to-go; the
    // physical replay cannot resolve look angles below its position residual
    // divided by the range in the last few metres.
    let extremal = propagate_param(ocp.oracle.normalized, 1.0, 1e-4)?;
    let angles: Vec<f64> = extremal
        .samples
        .iter()
        .skip(1)
        .filter_map(|s| s.state().signed_look_angle())
        .collect();
    let side = angles.first().copied().unwrap_or(0.0).signum();
    let interior = angles.len() + 1 == extremal.samples.len()
        && side != 0.0
        && angles.iter().all(|a| a * side > 0.0 && a * side < PI);
    let min_abs = angles
        .iter()
        .map(|a| (a * side).min(PI - a * side))
        .fold(f64::INFINITY, f64::min);
    let replay_min = ocp.trajectory[1..ocp.trajectory.len() - 1]
        .iter()
        .map(|p| (p.sigma * ocp.oracle.sign).min(PI - p.sigma * ocp.oracle.sign))
        .fold(f64::INFINITY, f64::min);
    Ok(vec![
        Check::new(
            4,
            "offset start oracle effort",
            within(res.effort, OFFSET_START_EFFORT, 0.01),
            format!(
                "J = {:.1} vs {OFFSET_START_EFFORT:.1} ({:+.3}%), {} admissible roots",
                res.effort,
                pct(res.effort, OFFSET_START_EFFORT),
                ocp.oracle.admissible_roots
            ),
        ),
        Check::new(
            4,
            "offset start look angle interior",
            interior,
            format!(
                "{} extremal samples, closest to 0 or pi {min_abs:.3e} rad; replay minimum {replay_min:.3e} rad",
                angles.len()
            ),
        ),
    ])
}

struct HashWriter(std::collections::hash_map::DefaultHasher);

impl Write for HashWriter {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.write(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

fn dataset_digest(samples: &[Sample]) -> Result<u64> {
    let mut w = HashWriter(Default::default());
    write_dataset_to(samples, &mut w)?;
    Ok(w.0.finish())
}

/// Dataset size on the full grid, determinism, and generation time.
pub fn criterion_5() -> Result<Vec<Check>> {
    let full = DatagenConfig::default();
    let start = Instant::now();
    let first = generate_dataset(&full)?;
    let digest = dataset_digest(&first)?;
    let secs = start.elapsed().as_secs_f64();
    let rows = first.len();
    drop(first);
    let again = dataset_digest(&generate_dataset(&full)?)?;

    let start = Instant::now();
    let reduced = generate_dataset(&reduced_grid())?;
    let _ = dataset_digest(&reduced)?;
    let reduced_secs = start.elapsed().as_secs_f64();

    Ok(vec![
        Check::new(
            5,
            "full-grid rows upper bound",
            rows <= DATASET_MAX_ROWS,
            format!("{rows} rows, bound {DATASET_MAX_ROWS}"),
        ),
        Check::new(
            5,
            "full-grid rows lower bound",
            rows >= DATASET_MIN_ROWS,
            format!("{rows} rows, bound {DATASET_MIN_ROWS}"),
        ),
        Check::new(5, "byte-identical regeneration", digest == again, format!("digest {digest:016x}")),
        Check::new(5, "full-grid runtime", secs <= 1800.0, format!("{secs:.1} s of 1800 s")),
        Check::new(
            5,
            "reduced-grid runtime",
            reduced_secs <= 60.0,
            format!("{} rows in {reduced_secs:.2} s", reduced.len()),
        ),
    ])
}

/// Maximum relative Hamiltonian drift over random extremals.
pub fn hamiltonian_drift(count: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let alpha = 10.0 * (1.0 - rng.random::<f64>());
        let beta = PI * (1.0 - rng.random::<f64>());
        let p = AdjointParams { alpha, beta };
        let traj = propagate_param(p, 10.0, 0.005)?;
        let h0 = alpha * beta.cos();
        for s in &traj.samples {
            let drift = (hamiltonian(&s.state(), &p) - h0).abs() / (1.0 + h0.abs());
            worst = worst.max(drift);
        }
    }
    Ok(worst)
}

/// Largest relative trajectory mismatch between a solve at unit speed (and a
/// stretched time scale) mapped back, and a direct solve.
pub fn rescaling_mismatch() -> Result<f64> {
    let opts = OracleOptions::default();
    let (speed, t_f, dt) = (500.0, 30.0, 0.01);
    let start = CartesianState::new(-10000.0, 0.0, PI / 3.0);
    let direct = solve_ocp(&start, speed, t_f, dt, &opts)?;
    let r0 = start.range();
    let mut worst = 0.0f64;
    // Unit speed, same time scale: positions shrink by `speed`.
    let unit = CartesianState::new(start.x / speed, start.y / speed, start.theta);
    let scaled = solve_ocp(&unit, 1.0, t_f, dt, &opts)?;
    // Half speed over twice the time: same path, time stretched by 2.
    let slow = solve_ocp(&start, speed / 2.0, 2.0 * t_f, 2.0 * dt, &opts)?;
    for ((d, s), w) in direct.trajectory.iter().zip(&scaled.trajectory).zip(&slow.trajectory) {
        let e1 = (d.x - speed * s.x).hypot(d.y - speed * s.y) / r0;
        let e2 = (d.x - w.x).hypot(d.y - w.y) / r0;
        worst = worst.max(e1).max(e2).max((d.theta - s.theta).abs()).max((d.theta - w.theta).abs());
    }
    Ok(worst)
}

/// `(extremals checked, interiority violations, sign-structure violations)`
/// over every extremal of the grid.
pub fn extremal_structure(cfg: &DatagenConfig) -> Result<(usize, usize, usize)> {
    let cells = generate_cells(cfg)?;
    let mut bad_interior = 0;
    let mut bad_sign = 0;
    for c in &cells {
        let traj = propagate_param(c.params, cfg.t_bar, cfg.h)?;
        if !traj.look_angle_interior() {
            bad_interior += 1;
        }
        if traj.command_sign_changes(1e-9) > 1 {
            bad_sign += 1;
        }
    }
    Ok((cells.len(), bad_interior, bad_sign))
}

/// Largest relative error between analytic and central-difference gradients.
pub fn gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = CommandModel::glorot(&DEFAULT_LAYERS, 4.0, &mut rng);
    for l in &mut model.layers {
        l.biases.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    let batch: Vec<Sample> = (0..20)
        .map(|_| Sample {
            r: rng.random_range(0.0..4.0),
            sigma: rng.random_range(0.0..PI),
            t_go: rng.random_range(0.01..4.0),
            u: rng.random_range(-3.0..3.0),
        })
        .collect();
    let (_, grad) = model.loss_and_gradient(&batch);
    let base = model.params_flat();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for k in 0..base.len() {
        let mut p = base.clone();
        p[k] = base[k] + h;
        model.set_params_flat(&p);
        let up = model.mse(&batch);
        p[k] = base[k] - h;
        model.set_params_flat(&p);
        let down = model.mse(&batch);
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - grad[k]).abs() / grad[k].abs().max(fd.abs()).max(1e-6));
    }
    worst
}

/// Random queries with `t_go` inside the network's horizon.
fn random_queries(n: usize, seed: u64, t_bar: f64) -> Vec<GuidanceQuery> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let t_go = rng.random_range(0.1..0.9 * t_bar);
            let speed = rng.random_range(100.0..800.0);
            let r = speed * t_go * rng.random_range(0.3..0.999);
            let sigma = rng.random_range(-PI..PI);
            GuidanceQuery::new(r, sigma, t_go, speed)
        })
        .collect()
}

/// Property suites. Without a model the network symmetry check uses random
/// weights, which the identity does not depend on.
pub fn criterion_6(model: Option<&CommandModel>) -> Result<Vec<Check>> {
    let mut checks = Vec::new();

    let drift = hamiltonian_drift(500, 1)?;
    checks.push(Check::new(6, "Hamiltonian conservation", drift <= 1e-6, format!("max drift {drift:.3e}")));

    let fallback;
    let net = match model {
        Some(m) => m,
        None => {
            fallback = CommandModel::glorot(&DEFAULT_LAYERS, 4.0, &mut ChaCha8Rng::seed_from_u64(2));
            &fallback
        }
    };
    let mut odd = true;
    for q in random_queries(1000, 3, net.t_bar) {
        let a = command_nn(net, &q)?;
        let b = command_nn(net, &GuidanceQuery { sigma: -q.sigma, ..q })?;
        odd &= a.to_bits() == (-b).to_bits();
    }
    checks.push(Check::new(6, "network command odd in look angle", odd, "1000 random queries, bitwise"));

    let mut worst_oracle = 0.0f64;
    for q in random_queries(20, 4, 4.0) {
        let opts = OracleOptions::default();
        let a = command_oracle(&q, &opts).map(|s| s.command);
        let b = command_oracle(&GuidanceQuery { sigma: -q.sigma, ..q }, &opts).map(|s| s.command);
        match (a, b) {
            (Ok(a), Ok(b)) => worst_oracle = worst_oracle.max((a + b).abs() / a.abs().max(1e-12)),
            (Err(_), Err(_)) => {}
            _ => worst_oracle = f64::INFINITY,
        }
    }
    checks.push(Check::new(
        6,
        "oracle command odd in look angle",
        worst_oracle <= 1e-9,
        format!("max relative asymmetry {worst_oracle:.1e}"),
    ));

    let mismatch = rescaling_mismatch()?;
    checks.push(Check::new(
        6,
        "speed and time rescaling",
        mismatch <= 1e-6,
        format!("max relative mismatch {mismatch:.3e}"),
    ));

    let (n, bad_interior, bad_sign) = extremal_structure(&DatagenConfig::default())?;
    checks.push(Check::new(
        6,
        "look angle interior before terminal time",
        bad_interior == 0,
        format!("{bad_interior} of {n} extremals violate"),
    ));
    checks.push(Check::new(
        6,
        "at most one command sign change",
        bad_sign == 0,
        format!("{bad_sign} of {n} extremals violate"),
    ));

    let grad = gradient_error(5);
    checks.push(Check::new(6, "network gradient", grad <= 1e-5, format!("max relative error {grad:.3e}")));

    checks.push(round_trip_check()?);
    Ok(checks)
}

fn round_trip_check() -> Result<Check> {
    let dir = std::env::temp_dir().join(format!("ftnog-roundtrip-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let data = generate_dataset(&DatagenConfig {
        n_i: 10,
        n_j: 10,
        ..reduced_grid()
    })?;
    let data_path = dir.join("data.csv");
    write_dataset(&data, &data_path)?;
    let back = read_dataset(&data_path)?;
    let data_ok = back.len() == data.len()
        && back.iter().zip(&data).all(|(a, b)| {
            [a.r, a.sigma, a.t_go, a.u]
                .iter()
                .zip([b.r, b.sigma, b.t_go, b.u])
                .all(|(x, y)| x.to_bits() == y.to_bits())
        });
    let model = CommandModel::glorot(&DEFAULT_LAYERS, 4.0, &mut ChaCha8Rng::seed_from_u64(6));
    let model_path = dir.join("model.json");
    save_model(&model, &model_path)?;
    let loaded = load_model(&model_path)?;
    let mut model_ok = loaded == model;
    for q in random_queries(100, 7, 4.0) {
        let a = model.forward(q.r / q.speed, q.sigma.abs(), q.t_go)?;
        let b = loaded.forward(q.r / q.speed, q.sigma.abs(), q.t_go)?;
        model_ok &= a.to_bits() == b.to_bits();
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok(Check::new(
        6,
        "dataset and model round trip",
        data_ok && model_ok,
        format!("{} rows, model bitwise {}", data.len(), if model_ok { "equal" } else { "different" }),
    ))
}

/// Validation MSE of the reduced-grid model.
pub fn criterion_7(report: &TrainReport) -> Vec<Check> {
    vec![Check::new(
        7,
        "reduced-grid validation MSE",
        report.validation_mse <= 1e-3,
        format!(
            "{:.3e} after {} epochs (train {:.3e})",
            report.validation_mse, report.epochs, report.train_mse
        ),
    )]
}

/// Run everything. Trains the reduced-grid model unless one is supplied.
pub fn run_all(model: Option<CommandModel>, seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    checks.extend(criterion_1()?);
    let model = match model {
        Some(m) => m,
        None => {
            let (m, report) = train_reduced(seed)?;
            checks.extend(criterion_7(&report));
            m
        }
    };
    checks.extend(criterion_2(&model)?);
    checks.extend(criterion_3()?);
    checks.extend(criterion_4()?);
    checks.extend(criterion_5()?);
    checks.extend(criterion_6(Some(&model))?);
    checks.sort_by_key(|c| c.criterion);
    Ok(checks)
}
