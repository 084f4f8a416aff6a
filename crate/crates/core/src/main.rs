use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use gridarb::augment::{augment_dataset, AugmentFamily, AugmentOptions};
use gridarb::config::{load_scenario, Scenario};
use gridarb::data::{format_timestamp, load_timeseries, select_day, PriceUnit};
use gridarb::env::{slot_injections, Environment, Selector};
use gridarb::network::build_admittance;
use gridarb::oracle::{
    evaluate_schedule, performance_bound, solve_optimal_dp, CostReport, DispatchSchedule, DpGrid,
    DpSolution,
};
use gridarb::power_flow::{solve_fixed_point, solve_reference, SolveOptions};
use gridarb::protocol::{serve_stream, serve_tcp, Session};

#[derive(Parser)]
#[command(
    name = "gridarb",
    version,
    about = "Energy-storage dispatch environment engine"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the power flow of one data slot with idle storage.
    Powerflow {
        #[arg(long, env = "GRIDARB_CONFIG")]
        config: PathBuf,
        /// Row of the time series.
        #[arg(long, default_value_t = 0)]
        slot: usize,
        #[arg(long, value_enum, default_value_t = Solver::FixedPoint)]
        solver: Solver,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate synthetic days from a time-series CSV.
    Augment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Family::Gaussian)]
        family: Family,
        #[arg(long)]
        days: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 15)]
        resolution_minutes: u32,
        #[arg(long, value_enum, default_value_t = Unit::EurPerKwh)]
        price_unit: Unit,
        #[arg(long, default_value_t = gridarb::augment::DEFAULT_K_MAX)]
        k_max: usize,
        #[arg(long)]
        include_pv: bool,
        #[arg(long)]
        include_price: bool,
    },
    /// Run a baseline policy and write a per-step trace.
    Simulate {
        #[arg(long, env = "GRIDARB_CONFIG")]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Policy::Random)]
        policy: Policy,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive days to run.
        #[arg(long, default_value_t = 1)]
        days: usize,
        #[arg(long, default_value_t = 0)]
        start_day: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Solve the DP optimum for a range of days and report bounds.
    Benchmark {
        #[arg(long, env = "GRIDARB_CONFIG")]
        config: PathBuf,
        /// Inclusive day range, `a..b`.
        #[arg(long, default_value = "0..0", value_parser = parse_day_range)]
        days: (usize, usize),
        #[arg(long, default_value_t = 41)]
        grid_soc: usize,
        #[arg(long, default_value_t = 11)]
        grid_act: usize,
        /// Trace written by `simulate`; its realized powers are scored per day.
        #[arg(long)]
        policy_trace: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Serve the line-delimited JSON protocol on stdio or TCP.
    Serve {
        #[arg(long, env = "GRIDARB_CONFIG")]
        config: PathBuf,
        /// Listen on TCP instead of stdio.
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Emit the numeric series behind figures as CSV.
    PlotData {
        #[arg(long, value_enum)]
        kind: PlotKind,
        #[arg(long, env = "GRIDARB_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        day: usize,
        /// Trace written by `simulate` (reward-trace only).
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    FixedPoint,
    Newton,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Gmm,
    Gaussian,
    T,
}

#[derive(Clone, Copy, ValueEnum)]
enum Unit {
    EurPerKwh,
    EurPerMwh,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Zero,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKind {
    Voltage,
    RewardTrace,
}

fn parse_day_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected `a..b`, got `{s}`"))?;
    let a: usize = a
        .trim()
        .parse()
        .map_err(|e| format!("bad start day: {e}"))?;
    let b: usize = b.trim().parse().map_err(|e| format!("bad end day: {e}"))?;
    if b < a {
        return Err(format!("empty day range {a}..{b}"));
    }
    Ok((a, b))
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut out = sink(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn scenario(path: &Path) -> Result<Scenario> {
    load_scenario(path).with_context(|| format!("loading {}", path.display()))
}

fn powerflow(config: &Path, slot: usize, solver: Solver, output: Option<&Path>) -> Result<()> {
    let s = scenario(config)?;
    if slot >= s.data.len() {
        bail!(
            "slot {slot} out of range (dataset has {} rows)",
            s.data.len()
        );
    }
    let adm = build_admittance(&s.config.network)?;
    let zeros = vec![0.0; s.config.fleet.len()];
    let inj = slot_injections(&s.config, &s.data.record(slot), &zeros);
    let opt = SolveOptions::default();
    let sol = match solver {
        Solver::FixedPoint => solve_fixed_point(&adm, &inj, &opt)?,
        Solver::Newton => solve_reference(&adm, &inj, &opt)?,
    };
    let ids: Vec<usize> = s.config.network.nodes.iter().map(|n| n.id).collect();
    write_json(output, &sol.report(&ids))
}

#[allow(clippy::too_many_arguments)]
fn augment(
    input: &Path,
    family: Family,
    days: usize,
    seed: u64,
    output: Option<&Path>,
    resolution: u32,
    unit: Unit,
    opts: AugmentOptions,
) -> Result<()> {
    let unit = match unit {
        Unit::EurPerKwh => PriceUnit::EurPerKwh,
        Unit::EurPerMwh => PriceUnit::EurPerMwh,
    };
    let ds = load_timeseries(input, resolution, unit)
        .with_context(|| format!("loading {}", input.display()))?;
    let family = match family {
        Family::Gmm => AugmentFamily::GmmIndependent,
        Family::Gaussian => AugmentFamily::GaussianCopula,
        Family::T => AugmentFamily::TCopula,
    };
    let out = augment_dataset(&ds, family, days, seed, &opts)?;
    let mut w = sink(output)?;
    out.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn simulate(
    config: &Path,
    policy: Policy,
    seed: u64,
    days: usize,
    start_day: usize,
    output: Option<&Path>,
) -> Result<()> {
    let s = scenario(config)?;
    let cfg = Arc::new(s.config);
    let mut env = Environment::new(Arc::clone(&cfg), Arc::new(s.data))?;
    if start_day + days > env.day_count() {
        bail!(
            "days {start_day}..{} exceed the {} days in the dataset",
            start_day + days,
            env.day_count()
        );
    }
    let nb = cfg.fleet.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = csv::Writer::from_writer(sink(output)?);
    let mut header = vec!["day".to_string(), "t".to_string()];
    header.extend((1..=nb).map(|i| format!("a_{i}")));
    header.extend((1..=nb).map(|i| format!("p_{i}")));
    header.extend(["reward", "arbitrage", "penalty", "min_v", "max_v"].map(String::from));
    w.write_record(&header)?;
    for day in start_day..start_day + days {
        env.reset(Selector::Day(day))?;
        let mut t = 0;
        loop {
            let action: Vec<f64> = match policy {
                Policy::Zero => vec![0.0; nb],
                Policy::Random => cfg
                    .fleet
                    .iter()
                    .map(|e| rng.random_range(e.p_min..=e.p_max))
                    .collect(),
            };
            let tr = env.step(&action)?;
            let pq = &tr.info.v_mag[1..];
            let min_v = pq.iter().cloned().fold(f64::INFINITY, f64::min);
            let max_v = pq.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut rec = vec![day.to_string(), t.to_string()];
            rec.extend(action.iter().map(f64::to_string));
            rec.extend(tr.info.realized_powers.iter().map(f64::to_string));
            rec.extend(
                [
                    tr.reward,
                    tr.info.arbitrage_term,
                    tr.info.penalty_term,
                    min_v,
                    max_v,
                ]
                .iter()
                .map(f64::to_string),
            );
            w.write_record(&rec)?;
            t += 1;
            if tr.done {
                break;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Realized powers per (day, step) read back from a `simulate` trace.
fn read_trace_powers(
    path: &Path,
    fleet: usize,
) -> Result<std::collections::BTreeMap<usize, Vec<Vec<f64>>>> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("trace has no `{name}` column"))
    };
    let day_col = col("day")?;
    let p_cols: Vec<usize> = (1..=fleet)
        .map(|i| col(&format!("p_{i}")))
        .collect::<Result<_>>()?;
    let mut by_day = std::collections::BTreeMap::<usize, Vec<Vec<f64>>>::new();
    for rec in reader.records() {
        let rec = rec?;
        let day: usize = rec[day_col].parse()?;
        let row = p_cols
            .iter()
            .map(|&c| rec[c].parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        by_day.entry(day).or_default().push(row);
    }
    Ok(by_day)
}

#[derive(Serialize)]
struct PolicyScore {
    evaluation: CostReport,
    cost: f64,
    performance_bound: Option<f64>,
}

#[derive(Serialize)]
struct DayReport {
    day: usize,
    day_start: String,
    optimal: DpSolution,
    evaluation: CostReport,
    policy: Option<PolicyScore>,
}

#[derive(Serialize)]
struct BenchmarkReport {
    grid: DpGrid,
    days: Vec<DayReport>,
}

fn benchmark(
    config: &Path,
    days: (usize, usize),
    grid: DpGrid,
    trace: Option<&Path>,
    output: Option<&Path>,
) -> Result<()> {
    let s = scenario(config)?;
    if days.1 >= s.data.day_count() {
        bail!(
            "day {} out of range (dataset has {} days)",
            days.1,
            s.data.day_count()
        );
    }
    let traces = match trace {
        Some(p) => Some(read_trace_powers(p, s.config.fleet.len())?),
        None => None,
    };
    let mut report = BenchmarkReport {
        grid,
        days: Vec::new(),
    };
    for day in days.0..=days.1 {
        let slice = select_day(&s.data, day)?.truncated(s.config.horizon);
        let optimal = solve_optimal_dp(&s.config, &slice, grid)?;
        let evaluation = evaluate_schedule(&s.config, &slice, &optimal.schedule)?;
        let c_opt = evaluation.objective + evaluation.penalty_cost;
        let policy = match traces.as_ref().and_then(|t| t.get(&day)) {
            Some(powers) => {
                let eval = evaluate_schedule(
                    &s.config,
                    &slice,
                    &DispatchSchedule {
                        powers: powers.clone(),
                    },
                )?;
                let cost = eval.objective + eval.penalty_cost;
                Some(PolicyScore {
                    performance_bound: performance_bound(cost, c_opt).ok(),
                    evaluation: eval,
                    cost,
                })
            }
            None => None,
        };
        log::info!(
            "day {day}: optimum {:.6} EUR (storage {:.6} EUR)",
            optimal.objective,
            optimal.ess_cost
        );
        report.days.push(DayReport {
            day,
            day_start: format_timestamp(&slice.day_start),
            optimal,
            evaluation,
            policy,
        });
    }
    write_json(output, &report)
}

fn serve(config: &Path, port: Option<u16>, host: &str, seed: u64) -> Result<()> {
    let s = scenario(config)?;
    let cfg = Arc::new(s.config);
    let data = Arc::new(s.data);
    match port {
        Some(port) => serve_tcp((host, port), cfg, data, seed)?,
        None => {
            let mut session = Session::new(Environment::new(cfg, data)?, seed);
            serve_stream(&mut session, io::stdin().lock(), io::stdout().lock())?;
        }
    }
    Ok(())
}

fn plot_voltage(config: &Path, day: usize, output: Option<&Path>) -> Result<()> {
    let s = scenario(config)?;
    let cfg = Arc::new(s.config);
    let mut env = Environment::new(Arc::clone(&cfg), Arc::new(s.data))?;
    env.reset(Selector::Day(day))?;
    let ids: Vec<usize> = cfg.network.nodes.iter().map(|n| n.id).collect();
    let mut w = csv::Writer::from_writer(sink(output)?);
    w.write_record(["t", "node_id", "v_mag"])?;
    let idle = vec![0.0; cfg.fleet.len()];
    let mut t = 0;
    loop {
        let tr = env.step(&idle)?;
        for (id, v) in ids.iter().zip(&tr.info.v_mag) {
            w.write_record([t.to_string(), id.to_string(), v.to_string()])?;
        }
        t += 1;
        if tr.done {
            break;
        }
    }
    w.flush()?;
    Ok(())
}

fn plot_reward_trace(trace: &Path, output: Option<&Path>) -> Result<()> {
    let mut reader =
        csv::Reader::from_path(trace).with_context(|| format!("reading {}", trace.display()))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("trace has no `{name}` column"))
    };
    let (day_c, r_c, a_c, p_c) = (
        col("day")?,
        col("reward")?,
        col("arbitrage")?,
        col("penalty")?,
    );
    let mut totals = std::collections::BTreeMap::<usize, [f64; 3]>::new();
    for rec in reader.records() {
        let rec = rec?;
        let e = totals.entry(rec[day_c].parse()?).or_default();
        e[0] += rec[r_c].parse::<f64>()?;
        e[1] += rec[a_c].parse::<f64>()?;
        e[2] += rec[p_c].parse::<f64>()?;
    }
    let mut w = csv::Writer::from_writer(sink(output)?);
    w.write_record(["day", "total_reward", "arbitrage", "penalty"])?;
    for (day, [r, a, p]) in totals {
        w.write_record([day.to_string(), r.to_string(), a.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Powerflow {
            config,
            slot,
            solver,
            output,
        } => powerflow(&config, slot, solver, output.as_deref()),
        Command::Augment {
            input,
            family,
            days,
            seed,
            output,
            resolution_minutes,
            price_unit,
            k_max,
            include_pv,
            include_price,
        } => augment(
            &input,
            family,
            days,
            seed,
            output.as_deref(),
            resolution_minutes,
            price_unit,
            AugmentOptions {
                k_max,
                include_pv,
                include_price,
            },
        ),
        Command::Simulate {
            config,
            policy,
            seed,
            days,
            start_day,
            output,
        } => simulate(&config, policy, seed, days, start_day, output.as_deref()),
        Command::Benchmark {
            config,
            days,
            grid_soc,
            grid_act,
            policy_trace,
            output,
        } => benchmark(
            &config,
            days,
            DpGrid {
                soc_levels: grid_soc,
                power_levels: grid_act,
            },
            policy_trace.as_deref(),
            output.as_deref(),
        ),
        Command::Serve {
            config,
            port,
            host,
            seed,
        } => serve(&config, port, &host, seed),
        Command::PlotData {
            kind,
            config,
            day,
            trace,
            output,
        } => match kind {
            PlotKind::Voltage => {
                let config = config.context("--config is required for voltage data")?;
                plot_voltage(&config, day, output.as_deref())
            }
            PlotKind::RewardTrace => {
                let trace = trace.context("--trace is required for reward-trace data")?;
                plot_reward_trace(&trace, output.as_deref())
            }
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
