//! Command-line front end for the pipeline: sampling, surrogate training,
//! threshold sweeps, planning, ground-truth rollouts, and the ablation.
//!
//! Every stage that consumes randomness requires an explicit `--seed`, and
//! with the same seed its output files are byte-identical across runs.
//! Timing fields are off by default for the same reason; pass `--timing`
//! to include them.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use aslip::config::RunConfig;
use aslip::harness;
use aslip::io;
use aslip::mlp;
use aslip::planner;
use aslip::sampling;
use aslip::{Action, ApexState, Mlp, PlanStatus, PlanTask, TrainConfig};

#[derive(Parser)]
#[command(name = "aslip", version, about = "Failure-aware apex-to-apex hopping planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Optional `key = value` run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a labeled step dataset, and optionally a margin dataset.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Number of step-dataset points.
        #[arg(long)]
        n: usize,
        /// RNG seed; required so runs are reproducible.
        #[arg(long)]
        seed: u64,
        /// Output CSV for the step dataset.
        #[arg(long)]
        out: PathBuf,
        /// Number of fresh margin-labeled points to also generate.
        #[arg(long, requires = "margin_out")]
        margin_n: Option<usize>,
        /// Output CSV for the margin dataset.
        #[arg(long, requires = "margin_n")]
        margin_out: Option<PathBuf>,
    },
    /// Train the return-map surrogate on the valid rows of a step dataset.
    TrainMap {
        #[command(flatten)]
        common: Common,
        /// Step dataset CSV produced by `sample`.
        #[arg(long)]
        data: PathBuf,
        /// Seed for weight init and batch sampling.
        #[arg(long)]
        seed: u64,
        /// Output weights file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the margin surrogate on a margin dataset.
    TrainMargin {
        #[command(flatten)]
        common: Common,
        /// Margin dataset CSV produced by `sample --margin-n`.
        #[arg(long)]
        data: PathBuf,
        /// Seed for weight init and batch sampling.
        #[arg(long)]
        seed: u64,
        /// Output weights file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep the margin threshold over an evaluation step dataset.
    #[command(allow_negative_numbers = true)]
    SweepThreshold {
        #[command(flatten)]
        common: Common,
        /// Trained margin-net weights file.
        #[arg(long)]
        net: PathBuf,
        /// Evaluation step dataset (held out from training).
        #[arg(long)]
        data: PathBuf,
        /// Output sweep CSV.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = -0.2)]
        eps_min: f64,
        #[arg(long, default_value_t = 0.2)]
        eps_max: f64,
        #[arg(long, default_value_t = 41)]
        eps_steps: usize,
    },
    /// Solve one planning task over the trained surrogates.
    #[command(allow_negative_numbers = true)]
    Plan {
        #[command(flatten)]
        common: Common,
        /// Return-map net weights file.
        #[arg(long)]
        pnet: PathBuf,
        /// Margin net weights file.
        #[arg(long)]
        mnet: PathBuf,
        #[arg(long)]
        y0: f64,
        #[arg(long)]
        xdot0: f64,
        #[arg(long)]
        goal_y: f64,
        #[arg(long)]
        goal_xdot: f64,
        #[arg(long)]
        horizon: usize,
        /// Output plan file.
        #[arg(long)]
        out: PathBuf,
        /// Enable the smoothness objective (off by default).
        #[arg(long)]
        objective: bool,
        /// Drop the margin constraints.
        #[arg(long)]
        no_margin: bool,
        /// Margin threshold; overrides the config value.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Include wall-clock timing in the output file.
        #[arg(long)]
        timing: bool,
    },
    /// Execute a stored plan through the ground-truth simulator.
    Rollout {
        #[command(flatten)]
        common: Common,
        /// Plan file produced by `plan`.
        #[arg(long)]
        plan: PathBuf,
        /// Output report file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the planner ablation grid and write one CSV row per cell.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Return-map net weights file.
        #[arg(long)]
        pnet: PathBuf,
        /// Margin net weights file.
        #[arg(long)]
        mnet: PathBuf,
        /// Tasks per cell; the pool is shared across cells.
        #[arg(long)]
        tasks: usize,
        /// Seed for the task pool.
        #[arg(long)]
        seed: u64,
        /// Comma-separated horizons.
        #[arg(long, default_value = "1,2,3", value_delimiter = ',')]
        horizons: Vec<usize>,
        /// Output ablation CSV.
        #[arg(long)]
        out: PathBuf,
        /// Include mean wall-clock time per cell (otherwise written as 0).
        #[arg(long)]
        timing: bool,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    match &common.config {
        Some(path) => RunConfig::load(path)
            .with_context(|| format!("failed to load config {}", path.display())),
        None => Ok(RunConfig::default()),
    }
}

fn load_net(path: &PathBuf, what: &str) -> Result<Mlp> {
    io::read_mlp(path).with_context(|| format!("failed to read {what} weights {}", path.display()))
}

/// Deterministic shuffle-and-split into (train, holdout) row index sets.
fn holdout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = sampling::point_rng(seed, u64::MAX);
    idx.shuffle(&mut rng);
    let n_hold = ((n as f64) * fraction).round() as usize;
    let n_hold = n_hold.clamp(1, n.saturating_sub(1).max(1));
    let hold = idx.split_off(n - n_hold);
    (idx, hold)
}

fn select_rows(data: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), data.ncols()));
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&data.row(r));
    }
    out
}

fn train_and_save(
    inputs: Array2<f64>,
    targets: Array2<f64>,
    loss_weights: Vec<f64>,
    cfg: &RunConfig,
    seed: u64,
    out: &PathBuf,
) -> Result<()> {
    let layer_sizes = [4, 64, 64, targets.ncols()];
    let net = Mlp::init(&layer_sizes, seed)?;
    let (train_idx, hold_idx) = holdout_split(inputs.nrows(), cfg.holdout_fraction, seed);
    let (ti, tt) = (select_rows(&inputs, &train_idx), select_rows(&targets, &train_idx));
    let (hi, ht) = (select_rows(&inputs, &hold_idx), select_rows(&targets, &hold_idx));
    let mut tc = TrainConfig::new(loss_weights.clone(), seed);
    tc.learning_rate = cfg.learning_rate;
    tc.iterations = cfg.iterations;
    tc.batch_size = cfg.batch_size.min(ti.nrows());
    let (trained, _) = mlp::train(&net, &ti, &tt, Some((&hi, &ht)), &tc)?;
    let rmse = mlp::evaluate(&trained, &hi, &ht, &loss_weights)?;
    io::write_mlp(out, &trained)?;
    println!(
        "trained {} -> {} on {} rows, held-out weighted RMSE {rmse:.6}",
        4,
        targets.ncols(),
        ti.nrows()
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sample {
            common,
            n,
            seed,
            out,
            margin_n,
            margin_out,
        } => {
            let cfg = load_config(&common)?;
            let records = sampling::sample_dataset(n, &cfg.bounds, &cfg.params, seed)?;
            io::write_step_records(&out, &records)?;
            let n_valid = records.iter().filter(|r| r.is_valid()).count();
            println!(
                "sampled {n} points ({n_valid} valid), wrote {}",
                out.display()
            );
            if let (Some(m), Some(mpath)) = (margin_n, margin_out) {
                let (valid, invalid) = sampling::split_by_validity(&records);
                if valid.is_empty() || invalid.is_empty() {
                    bail!("margin labels need both classes; dataset has {n_valid} valid of {n}");
                }
                let vt = sampling::build_tree(&valid, &cfg.metric)?;
                let it = sampling::build_tree(&invalid, &cfg.metric)?;
                // Decorrelate the fresh points from the dataset draw.
                let samples = sampling::generate_margin_dataset(
                    m,
                    &cfg.bounds,
                    &vt,
                    &it,
                    &cfg.params,
                    seed ^ 0x6d61_7267_696e,
                )?;
                io::write_margin_samples(&mpath, &samples)?;
                println!("labeled {m} margin points, wrote {}", mpath.display());
            }
            Ok(())
        }
        Command::TrainMap { common, data, seed, out } => {
            let cfg = load_config(&common)?;
            let records = io::read_step_records(&data)
                .with_context(|| format!("failed to read dataset {}", data.display()))?;
            let valid: Vec<_> = records.iter().filter(|r| r.is_valid()).collect();
            if valid.len() < 10 {
                bail!(
                    "dataset {} has only {} valid rows; need at least 10",
                    data.display(),
                    valid.len()
                );
            }
            let mut inputs = Array2::zeros((valid.len(), 4));
            let mut targets = Array2::zeros((valid.len(), 3));
            for (i, r) in valid.iter().enumerate() {
                for k in 0..4 {
                    inputs[[i, k]] = r.point[k];
                }
                for (k, v) in r.next.unwrap().iter().enumerate() {
                    targets[[i, k]] = *v;
                }
            }
            train_and_save(inputs, targets, vec![0.250, 6.25, 0.250], &cfg, seed, &out)
        }
        Command::TrainMargin { common, data, seed, out } => {
            let cfg = load_config(&common)?;
            let samples = io::read_margin_samples(&data)
                .with_context(|| format!("failed to read margin dataset {}", data.display()))?;
            if samples.len() < 10 {
                bail!(
                    "margin dataset {} has only {} rows; need at least 10",
                    data.display(),
                    samples.len()
                );
            }
            let mut inputs = Array2::zeros((samples.len(), 4));
            let mut targets = Array2::zeros((samples.len(), 1));
            for (i, s) in samples.iter().enumerate() {
                for k in 0..4 {
                    inputs[[i, k]] = s.point[k];
                }
                targets[[i, 0]] = s.margin;
            }
            train_and_save(inputs, targets, vec![1.0], &cfg, seed, &out)
        }
        Command::SweepThreshold {
            common: _,
            net,
            data,
            out,
            eps_min,
            eps_max,
            eps_steps,
        } => {
            if eps_steps < 2 || !(eps_min < eps_max) {
                bail!("need eps_min < eps_max and at least 2 steps");
            }
            let net = load_net(&net, "margin net")?;
            let records = io::read_step_records(&data)
                .with_context(|| format!("failed to read dataset {}", data.display()))?;
            let samples: Vec<([f64; 4], bool)> =
                records.iter().map(|r| (r.point, r.is_valid())).collect();
            let grid: Vec<f64> = (0..eps_steps)
                .map(|i| eps_min + (eps_max - eps_min) * i as f64 / (eps_steps - 1) as f64)
                .collect();
            let points = harness::sweep_threshold(&net, &samples, &grid)?;
            io::write_sweep(&out, &points)?;
            println!("swept {} thresholds over {} samples, wrote {}", eps_steps, samples.len(), out.display());
            Ok(())
        }
        Command::Plan {
            common,
            pnet,
            mnet,
            y0,
            xdot0,
            goal_y,
            goal_xdot,
            horizon,
            out,
            objective,
            no_margin,
            epsilon,
            timing,
        } => {
            let cfg = load_config(&common)?;
            let p_net = load_net(&pnet, "return-map net")?;
            let m_net = load_net(&mnet, "margin net")?;
            let task = PlanTask {
                s0: ApexState { y: y0, xdot: xdot0 },
                s_goal: ApexState { y: goal_y, xdot: goal_xdot },
                horizon,
                use_objective: objective,
                use_margin: !no_margin,
                epsilon: epsilon.unwrap_or(cfg.epsilon),
            };
            let result = planner::solve(&task, &p_net, &m_net, &cfg.bounds, &cfg.solver)?;
            io::write_plan(&out, &io::PlanFile::new(&task, &result, timing))?;
            println!(
                "status {}, {} outer iterations, predicted dx {:.4}, wrote {}",
                result.status.as_str(),
                result.iterations,
                result.predicted_displacement,
                out.display()
            );
            Ok(())
        }
        Command::Rollout { common, plan, out } => {
            let cfg = load_config(&common)?;
            let file = io::read_plan(&plan)
                .with_context(|| format!("failed to read plan {}", plan.display()))?;
            if file.status != PlanStatus::Solved {
                bail!("plan {} has status {}; refusing to roll out", plan.display(), file.status.as_str());
            }
            let actions: Vec<Action> = file.actions.clone();
            let report = harness::rollout(&file.task.s0, &actions, &cfg.params)?;
            let mut text = String::new();
            let _ = writeln!(text, "all_valid = {}", report.all_valid);
            let _ = writeln!(text, "dx_total = {}", io::fmt_f64(report.dx_total));
            for (i, tag) in report.tags.iter().enumerate() {
                let _ = writeln!(text, "step {i} = {}", tag.as_str());
            }
            for (i, s) in report.states.iter().enumerate() {
                let _ = writeln!(
                    text,
                    "apex {i} = {} {}",
                    io::fmt_f64(s.y),
                    io::fmt_f64(s.xdot)
                );
            }
            if report.all_valid {
                let err = harness::goal_distance(
                    report.states.last().unwrap(),
                    &file.task.s_goal,
                    &cfg.metric,
                );
                let _ = writeln!(text, "goal_error = {}", io::fmt_f64(err));
            }
            std::fs::write(&out, &text)?;
            println!(
                "rollout {}: {} of {} steps valid, wrote {}",
                if report.all_valid { "succeeded" } else { "failed" },
                report.tags.iter().filter(|t| t.is_valid()).count(),
                actions.len(),
                out.display()
            );
            Ok(())
        }
        Command::Ablate {
            common,
            pnet,
            mnet,
            tasks,
            seed,
            horizons,
            out,
            timing,
        } => {
            let cfg = load_config(&common)?;
            if tasks == 0 {
                bail!("need at least one task per cell");
            }
            let p_net = load_net(&pnet, "return-map net")?;
            let m_net = load_net(&mnet, "margin net")?;
            let mut cells = Vec::new();
            for &h in &horizons {
                for (objective_on, margin_on) in
                    [(false, false), (false, true), (true, false), (true, true)]
                {
                    let cell = harness::run_ablation(
                        tasks,
                        h,
                        objective_on,
                        margin_on,
                        &p_net,
                        &m_net,
                        &cfg.params,
                        &cfg.bounds,
                        &cfg.metric,
                        &cfg.solver,
                        cfg.epsilon,
                        seed,
                    )?;
                    println!(
                        "horizon {h} objective {} margin {}: {} valid / {} invalid / {} infeasible of {tasks}",
                        if objective_on { "on" } else { "off" },
                        if margin_on { "on" } else { "off" },
                        cell.valid_solution,
                        cell.invalid_solution,
                        cell.declared_infeasible
                    );
                    cells.push(cell);
                }
            }
            io::write_ablation(&out, &cells, timing)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
