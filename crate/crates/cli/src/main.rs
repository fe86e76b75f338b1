use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use wpt_sched::config::{parse_strategies, Config, Seeds};
use wpt_sched::{report, runner};

#[derive(Parser)]
#[command(
    version,
    about = "Scheduling experiments for wireless-powered sensor networks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// TOML config, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds as `a..b` or a comma list; overrides the config.
    #[arg(long)]
    seeds: Option<String>,
    /// Comma-separated strategies; overrides the config.
    #[arg(long)]
    strategies: Option<String>,
    /// Largest joint state space solved exactly.
    #[arg(long)]
    budget: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> anyhow::Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        if let Some(s) = &self.seeds {
            cfg.experiment.seeds = s.parse::<Seeds>()?;
        }
        if let Some(s) = &self.strategies {
            cfg.experiment.strategies = parse_strategies(s)?;
        }
        if let Some(b) = self.budget {
            cfg.experiment.budget = b;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate the grid and write raw.csv, aggregate.csv and manifest.json.
    Run {
        #[command(flatten)]
        args: ConfigArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Write per-slot traces under OUT/traces.
        #[arg(long)]
        trace: bool,
    },
    /// Print ranking tables and T̂ trends from an aggregate CSV.
    Report {
        /// aggregate.csv, or the directory holding it.
        path: PathBuf,
    },
    /// Solve the scheduling MDP for one network size and dump model and policy.
    Solve {
        #[command(flatten)]
        args: ConfigArgs,
        #[arg(long)]
        nodes: usize,
        /// Slot length in mini-slots; defaults to the first grid value.
        #[arg(long)]
        slot_minislots: Option<u32>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check a config and print the resolved grid.
    Validate {
        #[command(flatten)]
        args: ConfigArgs,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.cmd {
        Cmd::Run { args, out, trace } => {
            let mut cfg = args.load()?;
            cfg.experiment.trace |= trace;
            let outcome = runner::run_experiment(&cfg, &out)?;
            log::info!(
                "{} runs over {} arms written to {}",
                outcome.raw.len(),
                outcome.arms.len(),
                out.display()
            );
            if outcome.failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                for f in &outcome.failures {
                    eprintln!("failed: {f}");
                }
                Ok(ExitCode::from(2))
            }
        }
        Cmd::Report { path } => {
            let path = if path.is_dir() {
                path.join("aggregate.csv")
            } else {
                path
            };
            let entries = report::read_aggregate(&path)?;
            print!("{}", report::render(&entries));
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Solve {
            args,
            nodes,
            slot_minislots,
            out,
        } => {
            let cfg = args.load()?;
            let t = slot_minislots.unwrap_or(cfg.experiment.slot_minislots[0]);
            let params = match cfg.params(nodes, t) {
                Ok(p) => p,
                Err(e) => bail!("N={nodes} T̂={t}: {e}"),
            };
            let (model, solution) = runner::solve(&params, cfg.experiment.budget)
                .with_context(|| format!("solving N={nodes}"))?;
            log::info!(
                "{} states, {} transitions, {} sweeps",
                model.n_states(),
                model.n_entries(),
                solution.sweeps
            );
            runner::dump_solution(&out, &model, &solution)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Validate { args } => {
            let cfg = args.load()?;
            let mut bad = false;
            for p in cfg.grid() {
                match &p.error {
                    None => println!(
                        "N={} T̂={} slots={} ok",
                        p.n_nodes, p.slot_minislots, p.slots
                    ),
                    Some(e) => {
                        bad = true;
                        println!("N={} T̂={} infeasible: {e}", p.n_nodes, p.slot_minislots);
                    }
                }
            }
            Ok(if bad {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            })
        }
    }
}
