use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use dmapf_core::io::{
    gen_diagonal_instance, gen_setup, parse_event_script, parse_instance, parse_map, parse_scen, parse_solution,
    scale_map, select_agents, write_instance, write_map, write_solution, SolutionFile,
};
use dmapf_core::metrics::{stage_report, BenchRow, DEFAULT_WIDTHS};
use dmapf_core::model::ValidateOptions;
use dmapf_core::{
    simulate, summarize, validate_solution_with, CostSummary, DmapfInstance, EventSequence, MapfInstance, Method,
    RunConfig, Session, StageOutcome, Time,
};

#[derive(Parser)]
#[command(name = "dmapf", version, about = "Dynamic multi-agent path finding on grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the initial problem of an instance, or of a map plus scenario.
    Solve(SolveArgs),
    /// Replay an event script and print the stage report.
    Simulate(SimulateArgs),
    /// Check a solution file against an instance.
    Validate(ValidateArgs),
    /// Run every instance of a directory under several methods and seeds, as CSV.
    Bench(BenchArgs),
    /// Generate instances and maps.
    #[command(subcommand)]
    Gen(GenCommand),
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long, default_value = "replan")]
    method: Method,
    #[arg(long, default_value_t = 0)]
    width: u32,
    /// Forbid an agent from entering a cell another agent leaves at the same step.
    #[arg(long)]
    following: bool,
    /// Seconds per stage.
    #[arg(long, default_value_t = 200.0)]
    deadline: f64,
    #[arg(long)]
    max_horizon: Option<Time>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON run configuration; command-line flags are ignored when given.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let cfg = match &self.config {
            Some(p) => serde_json::from_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))?,
            None => RunConfig {
                method: self.method,
                width: self.width,
                following: self.following,
                deadline_secs: self.deadline,
                max_horizon: self.max_horizon,
                seed: self.seed,
            },
        };
        cfg.check()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SolveArgs {
    /// Instance JSON.
    #[arg(long, conflicts_with_all = ["map", "scen"])]
    instance: Option<PathBuf>,
    #[arg(long, requires = "scen")]
    map: Option<PathBuf>,
    #[arg(long, requires = "map")]
    scen: Option<PathBuf>,
    /// Number of scenario rows to use.
    #[arg(long, default_value_t = 10)]
    agents: usize,
    #[arg(long, default_value_t = 200)]
    alpha: Time,
    #[command(flatten)]
    run: RunArgs,
    /// Write the solution file here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the instance built from map and scenario here.
    #[arg(long)]
    instance_out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Event script JSON replacing the instance's own events.
    #[arg(long)]
    events: Option<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
    /// Tunnel widths for divergence counts.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_WIDTHS)]
    widths: Vec<u32>,
    /// Zero all timings in the report.
    #[arg(long)]
    no_timings: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the final plans as a solution file here.
    #[arg(long)]
    solution_out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    solution: PathBuf,
    #[arg(long)]
    following: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Directory of instance JSON files.
    dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "replan")]
    methods: Vec<Method>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    widths: Vec<u32>,
    /// Seeds 0..N.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long)]
    following: bool,
    #[arg(long, default_value_t = 200.0)]
    deadline: f64,
    #[arg(long)]
    max_horizon: Option<Time>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum GenCommand {
    /// Agents from one corner to the mirrored cell, on an empty grid.
    Diagonal {
        #[arg(long)]
        agents: usize,
        #[arg(long)]
        size: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        alpha: Time,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// A setup such as 20+5 or 30+2+2+2+2+2: initial agents, then joiners at times 1, 2, ...
    Setup {
        setup: String,
        #[arg(long, default_value_t = 20)]
        size: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        alpha: Time,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// An instance from a map and scenario, optionally with an event script.
    Scen {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        scen: PathBuf,
        #[arg(long)]
        agents: usize,
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        alpha: Time,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Downsample a map; a cell is blocked when at least half its block is.
    Scale {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        width: u32,
        #[arg(long)]
        height: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read(p: &Path) -> Result<String> {
    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn load_instance(p: &Path) -> Result<DmapfInstance> {
    parse_instance(&read(p)?).with_context(|| format!("parsing {}", p.display()))
}

fn instance_from_scen(map: &Path, scen: &Path, agents: usize, alpha: Time) -> Result<DmapfInstance> {
    let grid = parse_map(&read(map)?).with_context(|| format!("parsing {}", map.display()))?;
    let scenario = parse_scen(&read(scen)?, &grid).with_context(|| format!("parsing {}", scen.display()))?;
    for w in &scenario.warnings {
        log::warn!("{}: {w}", scen.display());
    }
    let agents = select_agents(&scenario.pairs, agents)?;
    Ok(DmapfInstance::new(MapfInstance::new(grid, agents), EventSequence::default(), alpha))
}

#[derive(Serialize)]
struct SolveSummary {
    outcome: StageOutcome,
    horizon: Option<Time>,
    solve_calls: u32,
    encode_secs: f64,
    solve_secs: f64,
    costs: Option<CostSummary>,
}

fn run_solve(args: SolveArgs) -> Result<ExitCode> {
    let inst = match (&args.instance, &args.map, &args.scen) {
        (Some(p), _, _) => load_instance(p)?,
        (None, Some(m), Some(s)) => instance_from_scen(m, s, args.agents, args.alpha)?,
        _ => bail!("give --instance, or --map with --scen"),
    };
    if let Some(p) = &args.instance_out {
        emit(Some(p), &write_instance(&inst)?)?;
    }
    let base_only = DmapfInstance { events: EventSequence::default(), ..inst.clone() };
    let mut session = Session::new(base_only, args.run.config()?)?;
    let outcome = session.solve_mapf()?;
    let rec = &session.stages()[0];
    let summary = SolveSummary {
        outcome,
        horizon: session.plans().map(|p| p.horizon),
        solve_calls: rec.solve_calls,
        encode_secs: rec.encode_secs,
        solve_secs: rec.solve_secs,
        costs: session.plans().map(summarize),
    };
    if let (Some(p), Some(plans)) = (&args.out, session.plans()) {
        emit(Some(p), &write_solution(&SolutionFile::new(&inst, plans.clone()))?)?;
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(ExitCode::SUCCESS)
}

fn run_simulate(args: SimulateArgs) -> Result<ExitCode> {
    let mut inst = load_instance(&args.instance)?;
    if let Some(p) = &args.events {
        inst.events = parse_event_script(&read(p)?).with_context(|| format!("parsing {}", p.display()))?;
    }
    let sim = simulate(&inst, &args.run.config()?)?;
    let mut report = stage_report(&sim, &args.widths)?;
    if args.no_timings {
        report = report.without_timings();
    }
    if let (Some(p), Some(plans)) = (&args.solution_out, &sim.final_plans) {
        emit(Some(p), &write_solution(&SolutionFile::new(&inst, plans.clone()))?)?;
    }
    emit(args.out.as_deref(), &serde_json::to_string_pretty(&report)?)?;
    Ok(ExitCode::SUCCESS)
}

fn run_validate(args: ValidateArgs) -> Result<ExitCode> {
    let inst = load_instance(&args.instance)?;
    let sol = parse_solution(&read(&args.solution)?).with_context(|| format!("parsing {}", args.solution.display()))?;
    if !sol.matches(&inst) {
        bail!("solution was produced for a different instance");
    }
    let opts = ValidateOptions { following: args.following, ..Default::default() };
    let report = validate_solution_with(&inst, &sol.plans, &opts);
    println!("{}", serde_json::to_string_pretty(&report)?);
    if report.is_ok() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("solution is invalid: {} violation(s)", report.violations.len());
        Ok(ExitCode::FAILURE)
    }
}

fn run_bench(args: BenchArgs) -> Result<ExitCode> {
    let mut files: Vec<PathBuf> = fs::read_dir(&args.dir)
        .with_context(|| format!("reading {}", args.dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|x| x == "json"));
    files.sort();
    if files.is_empty() {
        bail!("no instance files in {}", args.dir.display());
    }
    let instances: Vec<(String, DmapfInstance)> = files
        .iter()
        .map(|p| Ok((p.file_stem().unwrap().to_string_lossy().into_owned(), load_instance(p)?)))
        .collect::<Result<_>>()?;

    let mut jobs = Vec::new();
    for (i, _) in instances.iter().enumerate() {
        for &method in &args.methods {
            let widths = if method.uses_tunnels() { args.widths.clone() } else { vec![0] };
            for width in widths {
                for seed in 0..args.seeds {
                    let cfg = RunConfig {
                        method,
                        width,
                        following: args.following,
                        deadline_secs: args.deadline,
                        max_horizon: args.max_horizon,
                        seed,
                    };
                    jobs.push((i, cfg));
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(args.threads.unwrap_or(0)).build()?;
    let rows: Vec<BenchRow> = pool.install(|| {
        jobs.par_iter()
            .map(|(i, cfg)| -> Result<BenchRow> {
                let (name, inst) = &instances[*i];
                let sim = simulate(inst, cfg).with_context(|| format!("running {name}"))?;
                Ok(BenchRow::from_report(name, &stage_report(&sim, &DEFAULT_WIDTHS)?))
            })
            .collect::<Result<_>>()
    })?;

    let mut wtr = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        wtr.serialize(row)?;
    }
    let text = String::from_utf8(wtr.into_inner()?)?;
    match &args.out {
        Some(p) => fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn run_gen(cmd: GenCommand) -> Result<ExitCode> {
    match cmd {
        GenCommand::Diagonal { agents, size, seed, alpha, out } => {
            let base = gen_diagonal_instance(agents, size, seed)?;
            let inst = DmapfInstance::new(base, EventSequence::default(), alpha);
            emit(out.as_deref(), &write_instance(&inst)?)?;
        }
        GenCommand::Setup { setup, size, seed, alpha, out } => {
            emit(out.as_deref(), &write_instance(&gen_setup(&setup, size, seed, alpha)?)?)?;
        }
        GenCommand::Scen { map, scen, agents, events, alpha, out } => {
            let mut inst = instance_from_scen(&map, &scen, agents, alpha)?;
            if let Some(p) = events {
                inst.events = parse_event_script(&read(&p)?)?;
            }
            emit(out.as_deref(), &write_instance(&inst)?)?;
        }
        GenCommand::Scale { map, width, height, out } => {
            let grid = parse_map(&read(&map)?)?;
            emit(out.as_deref(), write_map(&scale_map(&grid, width, height)?).trim_end())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(a) => run_solve(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Validate(a) => run_validate(a),
        Command::Bench(a) => run_bench(a),
        Command::Gen(c) => run_gen(c),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
