//! `archsim`: operator, inference, sweep, area and cost runs from the command line.

mod commands;
mod config;
mod failure;
mod output;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use archsim_core::mapper::Mapper;
use archsim_core::{InferenceOptions, InferenceSimulator, SearchBudget};
use clap::{Parser, Subcommand};

use config::ScenarioArgs;
use failure::{Failure, Kind, Stage};
use output::{Document, Format};

#[derive(Debug, Parser)]
#[command(name = "archsim", version, about = "Analytical LLM inference hardware simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Hardware description file, or a preset: a100, mi210, tpuv3-core.
    #[arg(long, global = true, default_value = "a100")]
    hardware: String,

    /// Model file with a `[model]` section, or `gpt3-175b`.
    #[arg(long, global = true, default_value = "gpt3-175b")]
    model: String,

    /// Scenario file with a `[scenario]` section, or inline `key=value,...`.
    #[arg(long, global = true)]
    scenario: Option<String>,

    /// Maximum mapping candidates simulated per operator.
    #[arg(long, global = true, default_value_t = SearchBudget::default().max_candidates)]
    budget: usize,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Seed for the candidate ordering beyond the heuristic plan.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output directory; without it everything goes to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_delimiter = ',', default_value = "table")]
    format: Vec<Format>,

    /// `section.field=value` override; `sweep` accepts comma-separated lists.
    #[arg(long = "set", global = true, value_name = "KEY=VALUES")]
    set: Vec<String>,

    /// JSON file memoizing mapper results across runs.
    #[arg(long, global = true)]
    plan_cache: Option<PathBuf>,

    /// Area coefficient file (TOML).
    #[arg(long, global = true)]
    area_params: Option<PathBuf>,

    /// Wafer parameter file (TOML).
    #[arg(long, global = true)]
    wafer: Option<PathBuf>,

    /// Memory price table, USD per GiB keyed by protocol (TOML).
    #[arg(long, global = true)]
    prices: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Map and time one operator.
    SimulateOp {
        /// e.g. `matmul:m=8192,k=12288,n=12288`.
        #[arg(long)]
        op: String,
    },
    /// Prefill, decode or end-to-end latency for the scenario.
    SimulateInference,
    /// Die area breakdown.
    Area,
    /// Die, memory and total cost.
    Cost,
    /// One CSV row per point of the `--set` grid.
    Sweep {
        /// Sweep one operator instead of the inference scenario.
        #[arg(long)]
        op: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("archsim: {f}");
            ExitCode::from(f.kind.exit_code())
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode, Failure> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Failure::config(Stage::Arguments, "--jobs must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::config(Stage::Arguments, e.to_string()))?;
    }
    let budget = SearchBudget::new(cli.budget, cli.seed).map_err(|e| Failure::core(Stage::Arguments, e))?;
    let base = config::load_hardware(&cli.hardware)?;
    let scenario = ScenarioArgs::parse(cli.scenario.as_deref())?;
    let axes = sweep::parse_axes(&cli.set)?;

    let mut mapper = Mapper::new();
    if let Some(path) = &cli.plan_cache {
        mapper = mapper.with_plan_cache(path).map_err(|e| Failure::core(Stage::Map, e))?;
    }
    let options = InferenceOptions {
        budget,
        ..InferenceOptions::default()
    };
    let sim = InferenceSimulator::with_mapper(mapper, options);

    let mut code = ExitCode::SUCCESS;
    let doc: Document = if let Command::Sweep { op } = &cli.command {
        let op = op.as_deref().map(config::parse_op).transpose()?;
        let model = match op {
            Some(_) => archsim_core::ModelConfig::gpt3_175b(),
            None => config::load_model(&cli.model)?,
        };
        let (area, wafer, prices) = cost_inputs(cli)?;
        let inputs = sweep::SweepInputs {
            system: &base,
            model: &model,
            scenario: &scenario,
            op: op.as_ref(),
            area: &area,
            wafer: &wafer,
            prices: &prices,
            budget: &budget,
        };
        let (doc, internal) = sweep::run(&axes, &inputs, &sim)?;
        if internal {
            code = ExitCode::from(Kind::Internal.exit_code());
        }
        doc
    } else {
        if let Some(a) = axes.iter().find(|a| a.values.len() > 1) {
            return Err(Failure::config(
                Stage::Override,
                format!("`{}` has several values; lists are only accepted by `sweep`", a.key),
            ));
        }
        let assignments: Vec<(&str, &toml::Value)> = axes.iter().map(|a| (a.key.as_str(), &a.values[0])).collect();
        let (system, scenario) = sweep::apply(&base, &scenario, &assignments)?;
        match &cli.command {
            Command::SimulateOp { op } => commands::simulate_op(&system, &config::parse_op(op)?, &sim, &budget)?,
            Command::SimulateInference => {
                let model = config::load_model(&cli.model)?;
                commands::simulate_inference(&system, &model, &scenario.workload()?, &sim)?
            }
            Command::Area => commands::area(&system, &config::load_area(cli.area_params.as_deref())?)?,
            Command::Cost => {
                let (area, wafer, prices) = cost_inputs(cli)?;
                commands::cost(&system, &area, &wafer, &prices)?
            }
            Command::Sweep { .. } => unreachable!(),
        }
    };
    sim.mapper
        .save_plan_cache()
        .map_err(|e| Failure::core(Stage::Output, e))?;
    doc.emit(&cli.format, cli.out.as_deref())?;
    Ok(code)
}

fn cost_inputs(
    cli: &Cli,
) -> Result<
    (
        archsim_core::AreaParams,
        archsim_core::WaferParams,
        archsim_core::PriceTable,
    ),
    Failure,
> {
    Ok((
        config::load_area(cli.area_params.as_deref())?,
        config::load_wafer(cli.wafer.as_deref())?,
        config::load_prices(cli.prices.as_deref())?,
    ))
}
