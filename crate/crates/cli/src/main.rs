use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use ftnog::acceptance;
use ftnog::datagen::{generate_dataset, read_dataset, write_dataset, DatagenConfig};
use ftnog::guidance::{command_nn, command_oracle, pn_command_polar, solve_ocp, GuidanceQuery};
use ftnog::kinematics::{CartesianState, PolarState};
use ftnog::mlp::{load_model, save_model, train, CommandModel, TrainConfig};
use ftnog::sim::{
    impact_time_spread, salvo, simulate, write_trajectory, ControlSample, GuidanceLaw, Scenario, SimResult,
};

/// Impact-time-constrained guidance toolkit.
#[derive(Parser)]
#[command(name = "ftnog", version)]
struct Cli {
    /// TOML file with the subcommand's parameters.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file (or directory for `salvo`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for training and random checks.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate the extremal grid and write the training dataset CSV.
    GenData(GenDataArgs),
    /// Fit the command network to a dataset.
    Train(TrainArgs),
    /// Solve one engagement open loop and write the optimal trajectory.
    Solve(ScenarioArgs),
    /// Evaluate a single guidance command.
    Guide(GuideArgs),
    /// Fly one closed-loop engagement.
    Simulate(SimulateArgs),
    /// Fly several engagements with a shared impact time.
    Salvo(ModelArg),
    /// Run the acceptance checks and print a pass/fail table.
    Verify(ModelArg),
}

#[derive(Args)]
struct GenDataArgs {
    /// Start from the reduced grid instead of the full one.
    #[arg(long)]
    reduced: bool,
    #[arg(long)]
    alpha_bar: Option<f64>,
    #[arg(long)]
    n_i: Option<usize>,
    #[arg(long)]
    n_j: Option<usize>,
    #[arg(long)]
    t_bar: Option<f64>,
    /// Sampling step along each extremal.
    #[arg(long)]
    h: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset CSV.
    #[arg(long)]
    data: PathBuf,
    /// Time-to-go horizon of the data; defaults to the largest t_go present.
    #[arg(long)]
    t_bar: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    target_mse: Option<f64>,
    /// Where to write the training report (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Interceptor position relative to the target, m.
    #[arg(long, allow_hyphen_values = true)]
    x: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    y: Option<f64>,
    /// Heading, rad.
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<f64>,
    #[arg(long)]
    speed: Option<f64>,
    /// Desired impact time, s.
    #[arg(long)]
    t_f: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    /// nn, oracle or pn.
    #[arg(long)]
    guidance: Option<GuidanceLaw>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    model: ModelArg,
    /// Reference effort for reporting the relative deviation.
    #[arg(long)]
    reference: Option<f64>,
}

#[derive(Args)]
struct GuideArgs {
    #[arg(long)]
    r: f64,
    #[arg(long, allow_hyphen_values = true)]
    sigma: f64,
    #[arg(long)]
    t_go: f64,
    #[arg(long)]
    speed: f64,
    #[arg(long, default_value = "oracle")]
    law: GuidanceLaw,
    #[command(flatten)]
    model: ModelArg,
}

#[derive(Args)]
struct ModelArg {
    /// Trained network (JSON).
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SalvoFile {
    scenario: Vec<Scenario>,
}

fn read_config<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).map_err(|e| ftnog::Error::InvalidConfig(format!("{}: {e}", path.display())).into())
}

/// Fail early if the output location cannot be written.
fn check_out(path: &Path) -> anyhow::Result<()> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !parent.is_dir() {
        bail!(ftnog::Error::InvalidConfig(format!("output directory {} does not exist", parent.display())));
    }
    Ok(())
}

fn require_out(cli: &Cli) -> anyhow::Result<&Path> {
    let out = cli
        .out
        .as_deref()
        .ok_or_else(|| ftnog::Error::InvalidConfig("--out is required".into()))?;
    check_out(out)?;
    Ok(out)
}

fn load_optional_model(arg: &ModelArg) -> anyhow::Result<Option<CommandModel>> {
    arg.model
        .as_deref()
        .map(|p| load_model(p).with_context(|| format!("loading {}", p.display())))
        .transpose()
}

fn build_scenario(config: Option<&Path>, args: &ScenarioArgs) -> anyhow::Result<Scenario> {
    let mut sc = match config {
        Some(path) => read_config::<Scenario>(path)?,
        None => {
            let missing = |name: &str| ftnog::Error::InvalidConfig(format!("--{name} is required without --config"));
            let initial = CartesianState::new(
                args.x.ok_or_else(|| missing("x"))?,
                args.y.ok_or_else(|| missing("y"))?,
                args.theta.ok_or_else(|| missing("theta"))?,
            );
            Scenario::new(
                initial,
                args.speed.ok_or_else(|| missing("speed"))?,
                args.t_f.ok_or_else(|| missing("t-f"))?,
                args.guidance.unwrap_or(GuidanceLaw::Oracle),
            )
        }
    };
    if config.is_some() {
        if let Some(v) = args.x {
            sc.initial.x = v;
        }
        if let Some(v) = args.y {
            sc.initial.y = v;
        }
        if let Some(v) = args.theta {
            sc.initial.theta = v;
        }
        if let Some(v) = args.speed {
            sc.speed = v;
        }
        if let Some(v) = args.t_f {
            sc.t_f = v;
        }
        if let Some(v) = args.guidance {
            sc.guidance = v;
        }
    }
    if let Some(v) = args.dt {
        sc.dt = v;
    }
    sc.initial = CartesianState::new(sc.initial.x, sc.initial.y, sc.initial.theta);
    sc.validate()?;
    Ok(sc)
}

fn summary(r: &SimResult) -> String {
    let mut s = format!(
        "J = {:.6e} m^2/s^3, miss = {:.3e} m, impact = {:.4} s",
        r.effort, r.miss_distance, r.impact_time
    );
    if let Some(dj) = r.delta_j {
        s += &format!(", dJ = {:+.4}%", 100.0 * dj);
    }
    s
}

fn gen_data(cli: &Cli, args: &GenDataArgs) -> anyhow::Result<()> {
    let out = require_out(cli)?;
    let mut cfg = match &cli.config {
        Some(p) => read_config::<DatagenConfig>(p)?,
        None if args.reduced => DatagenConfig::reduced(),
        None => DatagenConfig::default(),
    };
    if let Some(v) = args.alpha_bar {
        cfg.alpha_bar = v;
    }
    if let Some(v) = args.n_i {
        cfg.n_i = v;
    }
    if let Some(v) = args.n_j {
        cfg.n_j = v;
    }
    if let Some(v) = args.t_bar {
        cfg.t_bar = v;
    }
    if let Some(v) = args.h {
        cfg.h = v;
    }
    cfg.validate()?;
    let start = Instant::now();
    let data = generate_dataset(&cfg)?;
    write_dataset(&data, out)?;
    println!(
        "wrote {} rows to {} in {:.2} s",
        data.len(),
        out.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn train_cmd(cli: &Cli, args: &TrainArgs) -> anyhow::Result<()> {
    let out = require_out(cli)?;
    if let Some(r) = &args.report {
        check_out(r)?;
    }
    let mut cfg = match &cli.config {
        Some(p) => read_config::<TrainConfig>(p)?,
        None => TrainConfig::default(),
    };
    cfg.seed = cli.seed;
    if let Some(v) = args.epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.target_mse {
        cfg.target_mse = v;
    }
    cfg.validate()?;
    let data = read_dataset(&args.data)?;
    let t_bar = match args.t_bar {
        Some(t) => t,
        None => data.iter().map(|s| s.t_go).fold(0.0, f64::max),
    };
    let start = Instant::now();
    let (model, report) = train(&data, t_bar, &cfg)?;
    save_model(&model, out)?;
    if let Some(path) = &args.report {
        fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    println!(
        "epochs = {}, train MSE = {:.4e}, validation MSE = {:.4e}, {:.1} s",
        report.epochs,
        report.train_mse,
        report.validation_mse,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn solve_cmd(cli: &Cli, args: &ScenarioArgs) -> anyhow::Result<()> {
    if let Some(out) = &cli.out {
        check_out(out)?;
    }
    let sc = build_scenario(cli.config.as_deref(), args)?;
    let sol = solve_ocp(&sc.initial, sc.speed, sc.t_f, sc.dt, &sc.oracle)?;
    let result = SimResult {
        controls: sol
            .trajectory
            .iter()
            .zip(&sol.controls)
            .map(|(p, &u)| ControlSample {
                t: p.t,
                u,
                a: sc.speed * u,
            })
            .collect(),
        trajectory: sol.trajectory,
        effort: sol.effort,
        miss_distance: sol.miss_distance,
        impact_time: sol.impact_time,
        delta_j: None,
    };
    if let Some(out) = &cli.out {
        write_trajectory(&result, out)?;
    }
    println!(
        "alpha = {:.6e}, beta = {:.6}, {}",
        sol.oracle.params.alpha,
        sol.oracle.params.beta,
        summary(&result)
    );
    Ok(())
}

fn guide_cmd(args: &GuideArgs) -> anyhow::Result<()> {
    let q = GuidanceQuery::new(args.r, args.sigma, args.t_go, args.speed);
    let u = match args.law {
        GuidanceLaw::Oracle => command_oracle(&q, &Default::default())?.command,
        GuidanceLaw::Nn => {
            let model = load_optional_model(&args.model)?.ok_or(ftnog::Error::MissingModel)?;
            command_nn(&model, &q)?
        }
        GuidanceLaw::Pn => pn_command_polar(&PolarState::new(args.r, args.sigma), args.speed, ftnog::guidance::PN_GAIN)?,
    };
    println!("u = {u:.12e} rad/s");
    println!("a = {:.12e} m/s^2", u * args.speed);
    Ok(())
}

fn simulate_cmd(cli: &Cli, args: &SimulateArgs) -> anyhow::Result<()> {
    if let Some(out) = &cli.out {
        check_out(out)?;
    }
    let sc = build_scenario(cli.config.as_deref(), &args.scenario)?;
    let model = load_optional_model(&args.model)?;
    let mut result = simulate(&sc, model.as_ref())?;
    if let Some(j) = args.reference {
        result = result.with_reference(j);
    }
    if let Some(out) = &cli.out {
        write_trajectory(&result, out)?;
    }
    println!("{}", summary(&result));
    Ok(())
}

fn salvo_cmd(cli: &Cli, args: &ModelArg) -> anyhow::Result<()> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| ftnog::Error::InvalidConfig("salvo needs --config".into()))?;
    if let Some(dir) = &cli.out {
        if !dir.is_dir() {
            bail!(ftnog::Error::InvalidConfig(format!("output directory {} does not exist", dir.display())));
        }
    }
    let file: SalvoFile = read_config(path)?;
    for sc in &file.scenario {
        sc.validate()?;
    }
    let model = load_optional_model(args)?;
    let results = salvo(&file.scenario, model.as_ref())?;
    let mut failed = 0;
    for (k, r) in results.iter().enumerate() {
        match r {
            Ok(r) => {
                println!("#{}: {}", k + 1, summary(r));
                if let Some(dir) = &cli.out {
                    write_trajectory(r, &dir.join(format!("salvo_{}.csv", k + 1)))?;
                }
            }
            Err(e) => {
                failed += 1;
                println!("#{}: failed: {e}", k + 1);
            }
        }
    }
    if let Some(spread) = impact_time_spread(&results) {
        println!("impact time spread = {spread:.4} s");
    }
    if failed > 0 {
        bail!("{failed} of {} engagements failed", results.len());
    }
    Ok(())
}

fn verify_cmd(cli: &Cli, args: &ModelArg) -> anyhow::Result<()> {
    let model = load_optional_model(args)?;
    let checks = acceptance::run_all(model, cli.seed)?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    for c in &checks {
        println!("{c}");
    }
    println!("{} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        bail!("{failed} acceptance checks failed");
    }
    Ok(())
}

fn category(err: &anyhow::Error) -> &'static str {
    use ftnog::Error as E;
    match err.chain().find_map(|e| e.downcast_ref::<E>()) {
        Some(E::InvalidConfig(_)) => "config",
        Some(E::MalformedRow { .. }) => "data",
        Some(E::UnsupportedModelVersion(_) | E::InvalidModel(_) | E::MissingModel | E::Json(_)) => "model",
        Some(E::TrainingDiverged { .. }) => "training",
        Some(E::Io(_)) => "io",
        Some(_) => "guidance",
        None if err.chain().any(|e| e.is::<std::io::Error>()) => "io",
        None => "runtime",
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }
    match &cli.command {
        Command::GenData(a) => gen_data(cli, a),
        Command::Train(a) => train_cmd(cli, a),
        Command::Solve(a) => solve_cmd(cli, a),
        Command::Guide(a) => guide_cmd(a),
        Command::Simulate(a) => simulate_cmd(cli, a),
        Command::Salvo(a) => salvo_cmd(cli, a),
        Command::Verify(a) => verify_cmd(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e:#}", category(&e));
            ExitCode::FAILURE
        }
    }
}
