use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use gridweave::mpc::ControllerModel;
use gridweave::plant::{
    compute_metrics, format_metrics, read_metrics, read_output_dir, run_closed_loop, write_metrics, write_output_dir,
    NoiseConfig, PlantError, SimConfig, SimResult,
};
use gridweave::powerflow::{deviation_report, replay, Network, PowerFlowSolution};
use gridweave::profile::TariffSchedule;
use gridweave::scenario::Scenario;
use gridweave::transport::{self, DistributedError, TcpConnection, DEFAULT_ISO_ADDR};

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "gridweave",
    version,
    about = "Distributed MPC simulator for low-voltage microgrids"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a closed-loop simulation and write its output directory.
    Simulate(SimulateArgs),
    /// Solve the AC power flow for every step of a run's bus loads.
    Powerflow(PowerflowArgs),
    /// Act as the ISO for controllers connecting over TCP.
    ServeIso(ServeArgs),
    /// Run one building controller against a remote ISO.
    Controller(ControllerArgs),
    /// Recompute the metrics table from a run's CSV files.
    Report(ReportArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// day-night or ahead24; defaults to the scenario's tariff.
    #[arg(long)]
    tariff: Option<String>,
    /// Series to use; defaults to the scenario's season.
    #[arg(long)]
    season: Option<String>,
    #[arg(long, value_enum, default_value = "on")]
    coordination: OnOff,
    #[arg(long)]
    days: Option<usize>,
    /// Convergence threshold on the aggregate change, kW.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long = "max-iters")]
    max_iters: Option<usize>,
    /// Hard cap on |slack power| in the MPC problems, kW.
    #[arg(long = "global-limit")]
    global_limit: Option<f64>,
    /// Half-width of the committed band, kW.
    #[arg(long = "half-width")]
    half_width: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Apply the forecasts as the realized series.
    #[arg(long)]
    perfect_forecast: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Run the grid of --seeds × --tariffs in parallel, one subdirectory each.
    #[arg(long)]
    sweep: bool,
    #[arg(long, value_delimiter = ',', requires = "sweep")]
    seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', requires = "sweep")]
    tariffs: Vec<String>,
}

#[derive(Args)]
struct PowerflowArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory of an earlier run.
    #[arg(long)]
    run: PathBuf,
    /// Voltage table; defaults to RUN/voltages.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, env = "GRIDWEAVE_ISO_ADDR", default_value = DEFAULT_ISO_ADDR)]
    addr: String,
    /// Seconds to wait for registration and for each controller message.
    #[arg(long, default_value_t = 30)]
    timeout: u64,
}

#[derive(Args)]
struct ControllerArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Bus id of the building to control.
    #[arg(long)]
    id: u32,
    #[arg(long)]
    tariff: Option<String>,
    #[arg(long)]
    season: Option<String>,
    #[arg(long, env = "GRIDWEAVE_ISO_ADDR", default_value = DEFAULT_ISO_ADDR)]
    addr: String,
    /// Seconds to keep retrying the initial connection.
    #[arg(long, default_value_t = 30)]
    timeout: u64,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    run: PathBuf,
    /// Also recompute the power-flow rows against this scenario's network.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

/// An error and the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait Classify<T> {
    fn validation(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn validation(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_VALIDATION,
            error: e.into(),
        })
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_RUNTIME,
            error: e.into(),
        })
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Powerflow(a) => powerflow(a),
        Command::ServeIso(a) => serve_iso(a),
        Command::Controller(a) => controller(a),
        Command::Report(a) => report(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    Scenario::load(path)
        .with_context(|| format!("loading scenario {}", path.display()))
        .validation()
}

fn tariff_named(name: &str) -> Result<TariffSchedule, Failure> {
    TariffSchedule::by_name(name)
        .ok_or_else(|| anyhow!("unknown tariff {name:?} (expected day-night or ahead24)"))
        .validation()
}

fn build_models(
    scenario: &Scenario,
    season: Option<&str>,
    tariff: Option<&str>,
) -> Result<(Vec<ControllerModel>, TariffSchedule), Failure> {
    let tariff = tariff_named(tariff.unwrap_or(&scenario.tariff))?;
    let season = season.unwrap_or(&scenario.season);
    let series = scenario.load_season(season).validation()?;
    let models = scenario.controllers(&series, &tariff).validation()?;
    Ok((models, tariff))
}

/// A run fully resolved from scenario defaults and flag overrides.
struct Prepared {
    network: Network,
    models: Vec<ControllerModel>,
    config: SimConfig,
}

fn prepare(args: &RunArgs, tariff: Option<&str>, seed: Option<u64>) -> Result<Prepared, Failure> {
    let scenario = load_scenario(&args.scenario)?;
    let (models, _) = build_models(&scenario, args.season.as_deref(), tariff.or(args.tariff.as_deref()))?;
    let mut config = scenario.sim_config(args.coordination == OnOff::On);
    if let Some(d) = args.days {
        config.days = d;
    }
    if let Some(e) = args.epsilon {
        config.convergence.epsilon = e;
    }
    if let Some(m) = args.max_iters {
        config.convergence.max_iterations = m;
    }
    if args.global_limit.is_some() {
        config.global_limit = args.global_limit;
    }
    if let Some(hw) = args.half_width {
        config.half_width = hw;
    }
    if let Some(s) = seed.or(args.seed) {
        config.seed = s;
    }
    if args.perfect_forecast {
        config.noise = NoiseConfig::perfect();
    }
    config.validate().validation()?;
    Ok(Prepared {
        network: scenario.network,
        models,
        config,
    })
}

fn plant_failure(e: PlantError) -> Failure {
    let code = match e {
        PlantError::Config(_) => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    };
    Failure { code, error: e.into() }
}

fn bus_load_log(result: &SimResult) -> Vec<Vec<(u32, f64)>> {
    result.steps.iter().map(|s| result.bus_loads(s.step)).collect()
}

fn power_flow_rows(
    network: &Network,
    result: &SimResult,
) -> Result<(Vec<PowerFlowSolution>, [(&'static str, f64); 2]), Failure> {
    let solutions = replay(network, &bus_load_log(result))
        .context("power flow on realized bus loads")
        .runtime()?;
    let r = deviation_report(&solutions);
    Ok((
        solutions,
        [
            ("max_voltage_dev_pu", r.max_voltage_dev),
            ("max_angle_deg", r.max_angle_deg),
        ],
    ))
}

/// Write the output directory with metrics and power-flow rows.
fn finish_run(dir: &Path, network: &Network, result: &SimResult) -> Result<Vec<(String, f64)>, Failure> {
    let metrics = compute_metrics(result, &result.meta.tariff);
    let (_, pf) = power_flow_rows(network, result)?;
    let mut rows: Vec<(&str, f64)> = metrics.rows();
    rows.extend(pf);
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .runtime()?;
    write_output_dir(dir, result, None).runtime()?;
    write_metrics(dir, &rows).runtime()?;
    if metrics.nonconverged_rounds > 0 {
        log::warn!("{} coordination rounds did not converge", metrics.nonconverged_rounds);
    }
    Ok(rows.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
}

fn print_rows(rows: &[(String, f64)]) {
    print!("{}", format_metrics(rows));
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    if !args.sweep {
        let p = prepare(&args.run, None, None)?;
        let result = run_closed_loop(&p.models, &p.config).map_err(plant_failure)?;
        let rows = finish_run(&args.run.out, &p.network, &result)?;
        print_rows(&rows);
        return Ok(());
    }
    let scenario = load_scenario(&args.run.scenario)?;
    let seeds = if args.seeds.is_empty() {
        vec![args.run.seed.unwrap_or(scenario.seed)]
    } else {
        args.seeds.clone()
    };
    let tariffs = if args.tariffs.is_empty() {
        vec!["day-night".to_string(), "ahead24".to_string()]
    } else {
        args.tariffs.clone()
    };
    let mut jobs = Vec::new();
    for t in &tariffs {
        for &s in &seeds {
            let p = prepare(&args.run, Some(t), Some(s))?;
            jobs.push((t.clone(), s, p));
        }
    }
    let outcomes: Vec<Result<Vec<(String, f64)>, Failure>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(t, s, p)| {
                let dir = args.run.out.join(format!("{t}-seed{s}"));
                scope.spawn(move || {
                    let result = run_closed_loop(&p.models, &p.config).map_err(plant_failure)?;
                    finish_run(&dir, &p.network, &result)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    let mut summary = csv::Writer::from_writer(Vec::new());
    for (n, ((t, s, _), outcome)) in jobs.iter().zip(outcomes).enumerate() {
        let rows = outcome.map_err(|f| Failure {
            code: f.code,
            error: f.error.context(format!("tariff {t}, seed {s}")),
        })?;
        if n == 0 {
            let header = ["tariff", "seed"].into_iter().chain(rows.iter().map(|r| r.0.as_str()));
            summary.write_record(header).context("formatting sweep.csv").runtime()?;
        }
        let values: Vec<f64> = rows.iter().map(|r| r.1).collect();
        summary
            .serialize((t, s, values))
            .context("formatting sweep.csv")
            .runtime()?;
    }
    let summary = summary.into_inner().context("formatting sweep.csv").runtime()?;
    std::fs::write(args.run.out.join("sweep.csv"), &summary)
        .context("writing sweep.csv")
        .runtime()?;
    print!("{}", String::from_utf8_lossy(&summary));
    Ok(())
}

fn powerflow(args: PowerflowArgs) -> Result<(), Failure> {
    let scenario = load_scenario(&args.scenario)?;
    let result = read_output_dir(&args.run)
        .with_context(|| format!("reading run {}", args.run.display()))
        .validation()?;
    let (solutions, rows) = power_flow_rows(&scenario.network, &result)?;
    let out = args.out.unwrap_or_else(|| args.run.join("voltages.csv"));
    let write = || -> anyhow::Result<()> {
        let mut w = csv::Writer::from_path(&out)?;
        w.write_record(["step", "bus", "v_pu", "angle_deg"])?;
        for (s, sol) in result.steps.iter().zip(&solutions) {
            for ((bus, v), a) in sol.buses.iter().zip(&sol.v_pu).zip(&sol.angle_deg) {
                w.serialize((s.step, bus, v, a))?;
            }
        }
        w.flush()?;
        Ok(())
    };
    write()
        .with_context(|| format!("writing {}", out.display()))
        .runtime()?;
    print_rows(&rows.map(|(k, v)| (k.to_string(), v)));
    Ok(())
}

fn serve_iso(args: ServeArgs) -> Result<(), Failure> {
    let p = prepare(&args.run, None, None)?;
    let timeout = Duration::from_secs(args.timeout);
    let listener = TcpListener::bind(&args.addr)
        .with_context(|| format!("binding {}", args.addr))
        .runtime()?;
    let ids: Vec<u32> = p.models.iter().map(|m| m.id).collect();
    eprintln!("waiting for controllers {ids:?} on {}", args.addr);
    let remotes = transport::serve_iso(&listener, &ids, p.config.horizon, timeout).runtime()?;
    let result = transport::run_with_remotes(&p.models, remotes, &p.config).map_err(|e| match e {
        DistributedError::Plant(pe) => plant_failure(pe),
        other => Failure {
            code: EXIT_RUNTIME,
            error: other.into(),
        },
    })?;
    let rows = finish_run(&args.run.out, &p.network, &result)?;
    print_rows(&rows);
    Ok(())
}

fn controller(args: ControllerArgs) -> Result<(), Failure> {
    let scenario = load_scenario(&args.scenario)?;
    let (models, _) = build_models(&scenario, args.season.as_deref(), args.tariff.as_deref())?;
    let model = models
        .into_iter()
        .find(|m| m.id == args.id)
        .ok_or_else(|| anyhow!("scenario has no building on bus {}", args.id))
        .validation()?;
    let conn = TcpConnection::connect(args.addr.as_str(), Duration::from_secs(args.timeout))
        .with_context(|| format!("connecting to {}", args.addr))
        .runtime()?;
    let summary = transport::run_controller(conn, &model, scenario.horizon)
        .with_context(|| format!("controller {}", args.id))
        .runtime()?;
    eprintln!(
        "controller {}: {} solves; last round {} after {} iterations",
        summary.controller,
        summary.solves,
        if summary.last_round_converged {
            "converged"
        } else {
            "did not converge"
        },
        summary.last_round_iterations
    );
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), Failure> {
    let result = read_output_dir(&args.run)
        .with_context(|| format!("reading run {}", args.run.display()))
        .validation()?;
    let mut rows: Vec<(String, f64)> = compute_metrics(&result, &result.meta.tariff)
        .rows()
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    if let Some(path) = &args.scenario {
        let scenario = load_scenario(path)?;
        let (_, pf) = power_flow_rows(&scenario.network, &result)?;
        rows.extend(pf.map(|(k, v)| (k.to_string(), v)));
    }
    let stored = read_metrics(&args.run).validation()?;
    let mut mismatched = Vec::new();
    for (name, value) in &stored {
        match rows.iter().find(|r| &r.0 == name) {
            Some((_, v)) if v.to_bits() != value.to_bits() => {
                mismatched.push(format!("{name}: stored {value}, recomputed {v}"))
            }
            Some(_) => {}
            None => rows.push((name.clone(), *value)),
        }
    }
    print_rows(&rows);
    if !mismatched.is_empty() {
        return Err(Failure {
            code: EXIT_RUNTIME,
            error: anyhow!("metrics.csv disagrees with the logs:\n  {}", mismatched.join("\n  ")),
        });
    }
    Ok(())
}
