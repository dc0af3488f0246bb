//! Command-line front end.
//!
//! Exit codes: 0 success, 1 runtime or I/O failure, 2 bad configuration,
//! 3 an estimator, solver or consensus run hit its cap (artifacts are still
//! written).

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use occusense::estimator::{forward_backward, EstimateResult};
use occusense::multiagent::run_distributed_episode;
use occusense::occupancy::{InitialDistribution, ThetaVector, MODEL_PARAMETERS};
use occusense::scenario::{
    config_fragments, episode_spec, estimate_from_observations, fmt_num, read_observations, roc_curve, run_scenario,
    run_solver_config, simulate_observations, split_fragments, write_observations, MetricsReport, ScenarioConfig,
    SolverTraceRow,
};
use occusense::solver::solve_fragments;
use occusense::{derive_seed, rng_from_seed, Error};

#[derive(Parser)]
#[command(
    name = "occusense",
    version,
    about = "Spectrum occupancy learning, sensing policies and access"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate occupancy and random-sensing observations.
    Simulate(Common),
    /// Fit the occupancy model to observations with Baum-Welch.
    Estimate(Common),
    /// Solve sensing policies for every fragment.
    Solve(Common),
    /// Run the single-agent scenario end to end.
    Run(Common),
    /// Run a distributed multi-agent episode.
    MaRun(Common),
    /// Sweep the penalty weight and add the energy-detection baseline.
    Roc(Common),
    /// Re-emit a report directory with normalized number formatting.
    Report {
        /// Directory holding a previous report.
        #[arg(long)]
        from: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// TOML scenario file; defaults apply to every key left out.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Comma-separated penalty weights; the first is used outside `roc`.
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    #[arg(long)]
    concurrent_learning: Option<bool>,
}

impl Common {
    fn load(&self) -> occusense::Result<ScenarioConfig> {
        let mut c = match &self.config {
            Some(p) => ScenarioConfig::load(p)?,
            None => ScenarioConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(l) = self.lambda.as_ref().and_then(|l| l.first()) {
            c.solver.lambda = *l;
        }
        if let Some(cl) = self.concurrent_learning {
            c.estimator.concurrent = cl;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Whether the run finished or hit an iteration cap.
enum Outcome {
    Done,
    Capped(&'static str),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Capped(what)) => {
            eprintln!("warning: {what} did not converge; artifacts written");
            ExitCode::from(3)
        }
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn create(path: &Path) -> occusense::Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

fn prepare(out: &Path, config: &ScenarioConfig) -> occusense::Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("config.toml");
    std::fs::write(&path, config.to_toml_string()).map_err(|e| Error::io(&path, e))
}

fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> occusense::Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn theta_rows(theta: &ThetaVector) -> Vec<Vec<String>> {
    ThetaVector::NAMES
        .iter()
        .zip(theta.to_array())
        .map(|(n, v)| vec![n.to_string(), fmt_num(v)])
        .collect()
}

fn dispatch(command: Command) -> occusense::Result<Outcome> {
    match command {
        Command::Simulate(c) => simulate(&c.load()?, &c.out),
        Command::Estimate(c) => estimate(&c.load()?, &c.out),
        Command::Solve(c) => solve(&c.load()?, &c.out),
        Command::Run(c) => run(&c.load()?, &c.out),
        Command::MaRun(c) => ma_run(&c.load()?, &c.out),
        Command::Roc(c) => {
            let config = c.load()?;
            let lambdas = c.lambda.clone().unwrap_or_else(|| config.roc.lambdas.clone());
            roc(&config, &lambdas, &c.out)
        }
        Command::Report { from, out } => {
            let report = MetricsReport::read(&from)?;
            report.rounded().emit(&out)?;
            Ok(Outcome::Done)
        }
    }
}

fn simulate(config: &ScenarioConfig, out: &Path) -> occusense::Result<Outcome> {
    prepare(out, config)?;
    let (trace, obs) = simulate_observations(config)?;
    let path = out.join("occupancy.csv");
    trace.save_csv(&path)?;
    let path = out.join("observations.csv");
    write_observations(&obs, create(&path)?).map_err(|e| Error::csv(&path, e))?;
    Ok(Outcome::Done)
}

fn estimate(config: &ScenarioConfig, out: &Path) -> occusense::Result<Outcome> {
    prepare(out, config)?;
    let obs = match &config.estimator.observations {
        Some(p) => read_observations(File::open(p).map_err(|e| Error::io(p, e))?, None)?,
        None => simulate_observations(config)?.1,
    };
    let split = config
        .estimator
        .train_fraction
        .map_or(obs.len(), |f| (obs.len() as f64 * f).round() as usize);
    let result: EstimateResult = estimate_from_observations(config, &obs[..split])?;
    result.save_checkpoint(&out.join("estimator_trace.csv"))?;
    write_rows(
        &out.join("theta.csv"),
        &["parameter", "value"],
        &theta_rows(&result.theta),
    )?;

    let mut summary = vec![
        vec!["converged".to_string(), result.converged.to_string()],
        vec!["iterations".into(), result.trace.len().to_string()],
        vec!["log_likelihood".into(), fmt_num(result.final_log_likelihood())],
    ];
    if split < obs.len() {
        // Held-out fit: observation log-likelihood of the remaining slots.
        let logs = split_fragments(&obs[split..], &config_fragments(config)?)?;
        let mut ll = 0.0;
        for log in &logs {
            ll +=
                forward_backward(log, &result.theta, &config.observation, InitialDistribution::Uniform)?.log_likelihood;
        }
        let nu = obs.len() - split;
        let bic = MODEL_PARAMETERS as f64 * (nu as f64).ln() - 2.0 * ll;
        summary.push(vec!["heldout_slots".into(), nu.to_string()]);
        summary.push(vec!["heldout_log_likelihood".into(), fmt_num(ll)]);
        summary.push(vec!["heldout_bic".into(), fmt_num(bic)]);
    }
    write_rows(&out.join("estimate_summary.csv"), &["metric", "value"], &summary)?;
    Ok(if result.converged {
        Outcome::Done
    } else {
        Outcome::Capped("estimator")
    })
}

fn solve(config: &ScenarioConfig, out: &Path) -> occusense::Result<Outcome> {
    prepare(out, config)?;
    let fragments = config_fragments(config)?;
    let solved = solve_fragments(
        &fragments,
        &config.theta_true,
        &run_solver_config(config),
        &config.observation,
    )?;
    let mut trace = Vec::new();
    for (f, r) in fragments.iter().zip(&solved) {
        r.policy
            .save_csv(&out.join(format!("policy_fragment_{}.csv", f.index)))?;
        trace.extend(r.trace.iter().map(|row| SolverTraceRow {
            solve: f.index,
            iteration: row.iteration,
            max_change: row.max_change,
            mean_value: row.mean_value,
        }));
    }
    let rows: Vec<Vec<String>> = trace
        .iter()
        .map(|r| {
            vec![
                r.solve.to_string(),
                r.iteration.to_string(),
                fmt_num(r.max_change),
                fmt_num(r.mean_value),
            ]
        })
        .collect();
    write_rows(
        &out.join("solver_trace.csv"),
        &["fragment", "iteration", "max_change", "mean_value"],
        &rows,
    )?;
    Ok(if solved.iter().all(|r| r.converged) {
        Outcome::Done
    } else {
        Outcome::Capped("solver")
    })
}

fn run(config: &ScenarioConfig, out: &Path) -> occusense::Result<Outcome> {
    prepare(out, config)?;
    let result = run_scenario(config)?;
    result.report.emit(out)?;
    for (i, p) in result.policies.iter().enumerate() {
        p.save_csv(&out.join(format!("policy_fragment_{i}.csv")))?;
    }
    Ok(
        match (result.report.estimator_converged, result.report.solver_converged) {
            (Some(false), _) => Outcome::Capped("estimator"),
            (_, Some(false)) => Outcome::Capped("solver"),
            _ => Outcome::Done,
        },
    )
}

fn ma_run(config: &ScenarioConfig, out: &Path) -> occusense::Result<Outcome> {
    prepare(out, config)?;
    let spec = episode_spec(config)?;
    let mut rng = rng_from_seed(derive_seed(config.seed, &[7]));
    let result = run_distributed_episode(&spec, config.multi_agent.cooperation, &mut rng)?;
    result.save_log(&out.join("episode_log.csv"))?;
    let rank =
        |ids: &[occusense::multiagent::AgentId]| ids.iter().map(|a| a.0.to_string()).collect::<Vec<_>>().join(";");
    let lists: Vec<Vec<String>> = result
        .consensus
        .lists
        .iter()
        .enumerate()
        .map(|(i, l)| vec![i.to_string(), l.as_ref().map(|l| rank(l.order())).unwrap_or_default()])
        .collect();
    write_rows(&out.join("consensus.csv"), &["agent_id", "agreed_rank"], &lists)?;
    let metrics = vec![
        vec!["slots".to_string(), result.utility_trace.len().to_string()],
        vec!["mean_utility".into(), fmt_num(result.mean_utility())],
        vec!["consensus_rounds".into(), result.consensus.rounds.to_string()],
        vec!["consensus_converged".into(), result.consensus.converged.to_string()],
        vec!["ballot_messages".into(), result.consensus.ballot_messages.to_string()],
        vec!["rank".into(), rank(result.rank.order())],
        vec!["distinct_sensed".into(), result.distinct_sensed.len().to_string()],
    ];
    write_rows(&out.join("metrics.csv"), &["metric", "value"], &metrics)?;
    let utility: Vec<Vec<String>> = result
        .utility_trace
        .iter()
        .enumerate()
        .map(|(t, u)| vec![t.to_string(), fmt_num(*u)])
        .collect();
    write_rows(&out.join("utility_trace.csv"), &["slot", "utility"], &utility)?;
    Ok(if result.consensus.converged {
        Outcome::Done
    } else {
        Outcome::Capped("consensus")
    })
}

fn roc(config: &ScenarioConfig, lambdas: &[f64], out: &Path) -> occusense::Result<Outcome> {
    prepare(out, config)?;
    let report = MetricsReport {
        roc: roc_curve(config, lambdas)?,
        ..Default::default()
    };
    report.emit(out)?;
    Ok(Outcome::Done)
}
