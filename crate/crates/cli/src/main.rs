use std::path::PathBuf;
use std::process::ExitCode;

use cefr_cascade::planner::ObjectiveMode;
use clap::{Args, Parser, Subcommand, ValueEnum};

mod artifacts;
mod commands;
mod config;

use commands::{CliError, CmdResult, MockE2eArgs, RunArgs};
use config::LoadedConfig;

/// Readability-controlled simplification through planned CEFR level
/// cascades.
#[derive(Parser)]
#[command(name = "cefr-cascade", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Objective {
    MeanReward,
    TotalReward,
}

impl From<Objective> for ObjectiveMode {
    fn from(o: Objective) -> Self {
        match o {
            Objective::MeanReward => ObjectiveMode::MeanReward,
            Objective::TotalReward => ObjectiveMode::TotalReward,
        }
    }
}

/// The config file plus overrides shared by every config-driven command.
#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(short, long)]
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Maximum concurrent backend calls.
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long, value_enum)]
    objective: Option<Objective>,
    #[arg(long)]
    sample_cap: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// Treat empty reward cells, missing exemplars and infeasible plans as errors.
    #[arg(long)]
    strict: bool,
}

impl ConfigArgs {
    fn load(self) -> Result<LoadedConfig, CliError> {
        let mut lc = LoadedConfig::from_file(&self.config)?;
        let c = &mut lc.config;
        if let Some(d) = self.output_dir {
            // relative to the working directory, not the config file
            c.output_dir = std::env::current_dir()?.join(d);
        }
        if let Some(p) = self.parallelism {
            c.parallelism = p;
        }
        if let Some(o) = self.objective {
            c.objective = o.into();
        }
        if let Some(s) = self.sample_cap {
            c.sample_cap = Some(s);
        }
        if let Some(k) = self.k {
            c.k = k;
        }
        c.strict |= self.strict;
        Ok(lc)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Per-split, per-level counts and test-split warnings.
    ValidateCorpus {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Verify one-step simplifications on dev and write the normalized matrix.
    BuildRewards {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Plan every source/target pair and report RRIS against sequential paths.
    Plan {
        #[command(flatten)]
        config: ConfigArgs,
        /// Defaults to <output_dir>/matrix.json.
        #[arg(long)]
        matrix: Option<PathBuf>,
    },
    /// Harvest verified dev pairs and select exemplars per transition.
    HarvestExemplars {
        #[command(flatten)]
        config: ConfigArgs,
        /// Defaults to <output_dir>/plans.json.
        #[arg(long)]
        plans: Option<PathBuf>,
        /// Dev generations to reuse; defaults to <output_dir>/validation_records.jsonl.
        #[arg(long)]
        records: Option<PathBuf>,
        /// Generate dev outputs again instead of reusing the reward stage's.
        #[arg(long)]
        fresh: bool,
    },
    /// Run one grid configuration over the test split.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Planning+Semantic+History, e.g. Y+Y+Y. Defaults to the config's flags.
        #[arg(long)]
        flags: Option<String>,
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        failure_threshold: Option<f64>,
    },
    /// Score results JSONL files into one metric report.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(required = true)]
        results: Vec<PathBuf>,
        #[arg(long)]
        label: Option<String>,
        /// Defaults to <output_dir>/report_eval.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render metric reports as one aligned table.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Add per-transition tables.
        #[arg(long)]
        breakdown: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the whole pipeline on a synthetic corpus with mock backends.
    MockE2e {
        #[arg(long, default_value = "mock-e2e-out")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Split sizes to imitate, e.g. readme_en or cefr_sp_partial.
        #[arg(long, default_value = "readme_en")]
        shape: String,
        #[arg(long, value_enum)]
        objective: Option<Objective>,
        /// Run only this configuration instead of the standard five.
        #[arg(long)]
        flags: Option<String>,
        #[arg(long, default_value_t = 4)]
        parallelism: usize,
    },
}

fn dispatch(cli: Cli) -> CmdResult {
    match cli.command {
        Command::ValidateCorpus { config } => commands::validate_corpus(&config.load()?),
        Command::BuildRewards { config } => commands::build_rewards(&config.load()?),
        Command::Plan { config, matrix } => commands::plan_cmd(&config.load()?, matrix),
        Command::HarvestExemplars {
            config,
            plans,
            records,
            fresh,
        } => commands::harvest_exemplars(&config.load()?, plans, records, fresh),
        Command::Run {
            config,
            flags,
            matrix,
            store,
            failure_threshold,
        } => commands::run_cmd(
            &config.load()?,
            RunArgs {
                flags,
                matrix,
                store,
                failure_threshold,
            },
        ),
        Command::Evaluate {
            config,
            results,
            label,
            out,
        } => commands::evaluate(&config.load()?, &results, label, out),
        Command::Report {
            reports,
            breakdown,
            out,
        } => commands::report_cmd(&reports, breakdown, out),
        Command::MockE2e {
            out_dir,
            seed,
            shape,
            objective,
            flags,
            parallelism,
        } => commands::mock_e2e(MockE2eArgs {
            out_dir,
            seed,
            shape,
            objective: objective.map(Into::into),
            flags,
            parallelism,
        }),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
