//! Grid runner: solves what needs solving, simulates every
//! `(grid point, strategy, seed)` in parallel and writes the result files.
//!
//! Output directory layout:
//!
//! - `raw.csv`: one row per run.
//! - `aggregate.csv`: mean and standard error per grid point and strategy.
//! - `manifest.json`: the resolved configuration and per-point parameters.
//! - `traces/`: per-slot traces when tracing is on.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use wpt_sched_core::mdp::{
    build_row, checked_state_count, value_iteration, Dynamics, Policy, Solution, TransitionModel,
};
use wpt_sched_core::sim::{Aggregate, EhmdpMode, RunMetrics, Simulator, SlotTrace, Strategy};
use wpt_sched_core::NetworkParams;

use crate::config::{Config, GridPoint, StrategyName};
use crate::Error;

pub const RAW_HEADER: [&str; 10] = [
    "n_nodes",
    "slot_minislots",
    "strategy",
    "design",
    "seed",
    "generated",
    "delivered",
    "dropped",
    "throughput_pps",
    "loss_rate",
];

pub const AGGREGATE_HEADER: [&str; 15] = [
    "n_nodes",
    "slot_minislots",
    "strategy",
    "design",
    "runs",
    "generated_mean",
    "generated_stderr",
    "delivered_mean",
    "delivered_stderr",
    "dropped_mean",
    "dropped_stderr",
    "throughput_pps_mean",
    "throughput_pps_stderr",
    "loss_rate_mean",
    "loss_rate_stderr",
];

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: Config,
    pub seeds: Vec<u64>,
    pub points: Vec<GridPoint>,
}

impl Manifest {
    pub fn new(config: &Config) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").into(),
            config: config.clone(),
            seeds: config.experiment.seeds.resolve(),
            points: config.grid(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// A strategy resolved against one grid point.
#[derive(Debug, Clone)]
pub struct Arm {
    pub point: usize,
    pub strategy: Strategy,
    /// Design label for E-QAT, empty otherwise.
    pub design: String,
}

impl Arm {
    pub fn label(&self) -> String {
        label(self.strategy.name(), &self.design)
    }
}

/// `strategy` or `strategy[design]`.
pub fn label(strategy: &str, design: &str) -> String {
    if design.is_empty() {
        strategy.into()
    } else {
        format!("{strategy}[{design}]")
    }
}

/// One run's result row.
#[derive(Debug, Clone)]
pub struct RawRow {
    pub arm: usize,
    pub seed: u64,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone)]
pub struct AggregateRow {
    pub n_nodes: usize,
    pub slot_minislots: u32,
    pub strategy: String,
    pub design: String,
    pub aggregate: Aggregate,
}

/// In-memory results of a grid run.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub manifest: Manifest,
    pub arms: Vec<Arm>,
    pub raw: Vec<RawRow>,
    pub aggregates: Vec<AggregateRow>,
    /// Grid points or strategies that could not run, with the reason.
    pub failures: Vec<String>,
}

/// Builds the transition model with rows computed in parallel.
pub fn build_model_parallel(
    params: &NetworkParams,
    budget: usize,
) -> wpt_sched_core::Result<TransitionModel> {
    let dynamics = Dynamics::new(params)?;
    let n_states = checked_state_count(params, budget)?;
    let space = params.state_space();
    let n_actions = params.n_nodes;
    let rows = (0..n_states * n_actions)
        .into_par_iter()
        .map(|r| build_row(&dynamics, &space, r / n_actions, r % n_actions))
        .collect();
    Ok(TransitionModel::from_rows(space, n_actions, rows))
}

pub fn solve(
    params: &NetworkParams,
    budget: usize,
) -> wpt_sched_core::Result<(TransitionModel, Solution)> {
    let model = build_model_parallel(params, budget)?;
    let solution = value_iteration(&model, params)?;
    Ok((model, solution))
}

/// Turns the configured strategy names into runnable arms for one point.
fn arms_for(
    cfg: &Config,
    point: usize,
    gp: &GridPoint,
    params: &NetworkParams,
) -> (Vec<Arm>, Vec<String>) {
    let mut arms = Vec::new();
    let mut failures = Vec::new();
    let budget = cfg.experiment.budget;
    let fading = cfg.channel.fading;
    let mut policy: Option<Result<Arc<Policy>, String>> = None;
    let exact = |policy: &mut Option<Result<Arc<Policy>, String>>| {
        policy
            .get_or_insert_with(|| {
                solve(params, budget)
                    .map(|(_, s)| Arc::new(s.policy))
                    .map_err(|e| e.to_string())
            })
            .clone()
    };
    let at = format!("N={} T̂={}", gp.n_nodes, gp.slot_minislots);
    for &name in &cfg.experiment.strategies {
        let mut push = |strategy, design: String| {
            arms.push(Arm {
                point,
                strategy,
                design,
            })
        };
        match name {
            StrategyName::Ehmdp => {
                let fits = checked_state_count(params, budget).is_ok();
                if fits && !fading {
                    match exact(&mut policy) {
                        Ok(p) => push(Strategy::Ehmdp(EhmdpMode::Exact(p)), String::new()),
                        Err(e) => failures.push(format!("{at} ehmdp: {e}")),
                    }
                } else {
                    let why = if fading {
                        "fading is on"
                    } else {
                        "state space exceeds the budget"
                    };
                    log::info!("{at}: ehmdp uses the approximate chooser ({why})");
                    push(Strategy::Ehmdp(EhmdpMode::Approximate), String::new());
                }
            }
            StrategyName::EhmdpExact => {
                if fading {
                    failures.push(format!(
                        "{at} ehmdp-exact: the exact policy assumes no fading"
                    ));
                    continue;
                }
                match exact(&mut policy) {
                    Ok(p) => push(Strategy::Ehmdp(EhmdpMode::Exact(p)), String::new()),
                    Err(e) => failures.push(format!("{at} ehmdp-exact: {e}")),
                }
            }
            StrategyName::EhmdpApprox => {
                push(Strategy::Ehmdp(EhmdpMode::Approximate), String::new())
            }
            StrategyName::Fq => push(Strategy::Fq, String::new()),
            StrategyName::Rs => push(Strategy::Rs, String::new()),
            StrategyName::Dfq => push(Strategy::Dfq, String::new()),
            StrategyName::Rc => push(Strategy::Rc, String::new()),
            StrategyName::Eqat => {
                for &d in &cfg.eqat.designs {
                    let c = cfg.eqat.config(d);
                    match c.validate() {
                        Ok(()) => push(Strategy::Eqat(c), d.label()),
                        Err(e) => failures.push(format!("{at} eqat {}: {e}", d.label())),
                    }
                }
            }
        }
    }
    (arms, failures)
}

/// Runs the whole grid in memory.
pub fn run_grid(cfg: &Config) -> Result<Outcome, Error> {
    run_grid_traced(cfg, None)
}

/// Runs the grid, writing per-run traces under `trace_dir` when given.
pub fn run_grid_traced(cfg: &Config, trace_dir: Option<&Path>) -> Result<Outcome, Error> {
    cfg.validate()?;
    let manifest = Manifest::new(cfg);
    let mut failures = Vec::new();
    let mut arms = Vec::new();
    for (i, gp) in manifest.points.iter().enumerate() {
        if let Some(e) = &gp.error {
            failures.push(format!("N={} T̂={}: {e}", gp.n_nodes, gp.slot_minislots));
            continue;
        }
        let params = gp.params.as_ref().expect("feasible point has parameters");
        let (a, f) = arms_for(cfg, i, gp, params);
        arms.extend(a);
        failures.extend(f);
    }
    for f in &failures {
        log::warn!("{f}");
    }
    let seeds = &manifest.seeds;
    let jobs: Vec<(usize, u64)> = (0..arms.len())
        .flat_map(|a| seeds.iter().map(move |&s| (a, s)))
        .collect();
    let results: Vec<Result<RawRow, String>> = jobs
        .par_iter()
        .map(|&(a, seed)| {
            let arm = &arms[a];
            let gp = &manifest.points[arm.point];
            let params = gp.params.as_ref().expect("feasible");
            let sim = Simulator::new(params, &arm.strategy, cfg.sim_config(gp.slots), seed)
                .map_err(|e| {
                    format!(
                        "N={} T̂={} {}: {e}",
                        gp.n_nodes,
                        gp.slot_minislots,
                        arm.label()
                    )
                })?;
            let metrics = match trace_dir {
                Some(dir) => {
                    let (m, t) = sim.run_traced();
                    let name = format!(
                        "n{}_t{}_{}_s{seed}.csv",
                        gp.n_nodes,
                        gp.slot_minislots,
                        arm.label().replace(['[', ']', '(', ')', ','], "_")
                    );
                    write_trace(&dir.join(name), &t).map_err(|e| e.to_string())?;
                    m
                }
                None => sim.run(),
            };
            Ok(RawRow {
                arm: a,
                seed,
                metrics,
            })
        })
        .collect();
    let mut raw = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(row) => raw.push(row),
            Err(e) => failures.push(e),
        }
    }
    let aggregates = arms
        .iter()
        .enumerate()
        .filter_map(|(a, arm)| {
            let runs: Vec<RunMetrics> = raw
                .iter()
                .filter(|r| r.arm == a)
                .map(|r| r.metrics)
                .collect();
            if runs.is_empty() {
                return None;
            }
            let gp = &manifest.points[arm.point];
            Some(AggregateRow {
                n_nodes: gp.n_nodes,
                slot_minislots: gp.slot_minislots,
                strategy: arm.strategy.name().into(),
                design: arm.design.clone(),
                aggregate: Aggregate::of(&runs),
            })
        })
        .collect();
    Ok(Outcome {
        manifest,
        arms,
        raw,
        aggregates,
        failures,
    })
}

/// Runs the grid and writes every output file into `out`.
pub fn run_experiment(cfg: &Config, out: &Path) -> Result<Outcome, Error> {
    let io = |p: &Path| {
        let p = p.display().to_string();
        move |e| Error::Io(p, e)
    };
    fs::create_dir_all(out).map_err(io(out))?;
    let trace_dir = cfg.experiment.trace.then(|| out.join("traces"));
    if let Some(d) = &trace_dir {
        fs::create_dir_all(d).map_err(io(d))?;
    }
    let outcome = run_grid_traced(cfg, trace_dir.as_deref())?;
    write_raw(&out.join("raw.csv"), &outcome)?;
    write_aggregate(&out.join("aggregate.csv"), &outcome.aggregates)?;
    let manifest = serde_json::to_string_pretty(&outcome.manifest)
        .map_err(|e| Error::Config(e.to_string()))?;
    let path = out.join("manifest.json");
    fs::write(&path, manifest + "\n").map_err(io(&path))?;
    Ok(outcome)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, Error> {
    csv::Writer::from_path(path).map_err(|e| Error::Csv(path.display().to_string(), e))
}

pub fn write_raw(path: &Path, outcome: &Outcome) -> Result<(), Error> {
    let err = |e| Error::Csv(path.display().to_string(), e);
    let mut w = csv_writer(path)?;
    w.write_record(RAW_HEADER).map_err(err)?;
    for r in &outcome.raw {
        let arm = &outcome.arms[r.arm];
        let gp = &outcome.manifest.points[arm.point];
        let m = &r.metrics;
        w.write_record([
            gp.n_nodes.to_string(),
            gp.slot_minislots.to_string(),
            arm.strategy.name().into(),
            arm.design.clone(),
            r.seed.to_string(),
            m.generated.to_string(),
            m.delivered.to_string(),
            m.dropped().to_string(),
            m.throughput_pps().to_string(),
            m.loss_rate().to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()
        .map_err(|e| Error::Io(path.display().to_string(), e))
}

pub fn write_aggregate(path: &Path, rows: &[AggregateRow]) -> Result<(), Error> {
    let err = |e| Error::Csv(path.display().to_string(), e);
    let mut w = csv_writer(path)?;
    w.write_record(AGGREGATE_HEADER).map_err(err)?;
    for r in rows {
        let a = &r.aggregate;
        let mut rec = vec![
            r.n_nodes.to_string(),
            r.slot_minislots.to_string(),
            r.strategy.clone(),
            r.design.clone(),
            a.runs.to_string(),
        ];
        for s in [
            a.generated,
            a.delivered,
            a.dropped,
            a.throughput_pps,
            a.loss_rate,
        ] {
            rec.push(s.mean.to_string());
            rec.push(s.stderr.to_string());
        }
        w.write_record(&rec).map_err(err)?;
    }
    w.flush()
        .map_err(|e| Error::Io(path.display().to_string(), e))
}

pub fn write_trace(path: &PathBuf, trace: &[SlotTrace]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "slot,selected,transmitters,outcome,energy_levels,states")?;
    for t in trace {
        let selected = t.selected.map(|s| s.to_string()).unwrap_or_default();
        let tx: Vec<String> = t.transmitters.iter().map(|x| x.to_string()).collect();
        let states: Vec<String> = t
            .nodes
            .iter()
            .map(|s| format!("{}/{}", s.battery, s.queue))
            .collect();
        writeln!(
            w,
            "{},{},{},{},{},{}",
            t.slot,
            selected,
            tx.join(" "),
            t.outcome.as_str(),
            t.energy_levels,
            states.join(" ")
        )?;
    }
    w.flush()
}

/// Writes the model as `state,action,next,prob,reward` rows and the solved
/// policy as `state,selected,value`.
pub fn dump_solution(
    dir: &Path,
    model: &TransitionModel,
    solution: &Solution,
) -> Result<(), Error> {
    let io = |p: &Path| {
        let p = p.display().to_string();
        move |e| Error::Io(p, e)
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let path = dir.join("model.csv");
    let mut w = BufWriter::new(File::create(&path).map_err(io(&path))?);
    let mut write_model = || -> std::io::Result<()> {
        writeln!(w, "state,action,next,prob,reward")?;
        for s in 0..model.n_states() {
            for a in 0..model.n_actions() {
                let row = model.row(s, a);
                for ((j, p), r) in row.next.iter().zip(row.prob).zip(row.reward) {
                    writeln!(w, "{s},{a},{j},{p},{r}")?;
                }
            }
        }
        w.flush()
    };
    write_model().map_err(io(&path))?;
    let path = dir.join("policy.csv");
    let mut w = BufWriter::new(File::create(&path).map_err(io(&path))?);
    let mut write_policy = || -> std::io::Result<()> {
        writeln!(w, "state,selected,value")?;
        for (s, (a, v)) in solution
            .policy
            .selected
            .iter()
            .zip(&solution.values.0)
            .enumerate()
        {
            writeln!(w, "{s},{a},{v}")?;
        }
        w.flush()
    };
    write_policy().map_err(io(&path))
}
