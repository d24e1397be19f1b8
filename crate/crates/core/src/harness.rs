//! Experiment machinery: ground-truth rollouts of planned actions,
//! margin-threshold sweeps, and the planner ablation over random tasks.

use rayon::prelude::*;

use crate::dynamics::{simulate_step, Action, ApexState, ModelParams, OutcomeTag};
use crate::error::Result;
use crate::mlp::Mlp;
use crate::planner::{solve, PlanResult, PlanStatus, PlanTask, SolverConfig};
use crate::sampling::{point_rng, Bounds, Metric};

/// Ground-truth outcome of executing a planned action sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutReport {
    /// Outcome tag per attempted step; stops after the first failure.
    pub tags: Vec<OutcomeTag>,
    /// Realized apex state after each valid step.
    pub states: Vec<ApexState>,
    /// Total realized displacement over the valid prefix.
    pub dx_total: f64,
    /// Weighted distance of the realized final state to a commanded goal;
    /// filled by the caller, and only when every step was valid.
    pub goal_error: Option<f64>,
    pub all_valid: bool,
}

/// Apply `actions` sequentially through the simulator from `s0`,
/// stopping at the first failure.
pub fn rollout(s0: &ApexState, actions: &[Action], params: &ModelParams) -> Result<RolloutReport> {
    let mut tags = Vec::with_capacity(actions.len());
    let mut states = Vec::with_capacity(actions.len());
    let mut dx_total = 0.0;
    let mut s = *s0;
    for a in actions {
        let outcome = simulate_step(&s, a, params)?;
        tags.push(outcome.tag);
        match outcome.next {
            Some(next) => {
                dx_total += next.dx;
                states.push(next.apex);
                s = next.apex;
            }
            None => break,
        }
    }
    let all_valid = tags.len() == actions.len() && tags.iter().all(|t| t.is_valid());
    Ok(RolloutReport {
        tags,
        states,
        dx_total,
        goal_error: None,
        all_valid,
    })
}

/// Weighted state-space distance to the goal, using the state part of the
/// sampling metric.
pub fn goal_distance(state: &ApexState, goal: &ApexState, metric: &Metric) -> f64 {
    let dy = state.y - goal.y;
    let dv = state.xdot - goal.xdot;
    (metric.weights[0] * dy * dy + metric.weights[1] * dv * dv).sqrt()
}

/// One point of the threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub epsilon: f64,
    /// P(truly valid | M >= eps); absent when no sample clears eps.
    pub accuracy: Option<f64>,
    /// P(M >= eps | truly valid).
    pub inclusion: f64,
}

/// Classification performance of the margin net as the valid-point
/// threshold varies. `samples` pairs a point with its ground-truth
/// validity label and must be independent of the training data.
pub fn sweep_threshold(
    margin_net: &Mlp,
    samples: &[([f64; 4], bool)],
    eps_grid: &[f64],
) -> Result<Vec<SweepPoint>> {
    let predicted: Vec<f64> = samples
        .iter()
        .map(|(p, _)| margin_net.forward(p).map(|o| o[0]))
        .collect::<Result<_>>()?;
    let n_valid = samples.iter().filter(|(_, v)| *v).count();
    let mut out = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        let mut included = 0usize;
        let mut included_valid = 0usize;
        for ((_, truly_valid), &m) in samples.iter().zip(&predicted) {
            if m >= eps {
                included += 1;
                if *truly_valid {
                    included_valid += 1;
                }
            }
        }
        let accuracy = (included > 0).then(|| included_valid as f64 / included as f64);
        let inclusion = if n_valid > 0 {
            included_valid as f64 / n_valid as f64
        } else {
            0.0
        };
        out.push(SweepPoint {
            epsilon: eps,
            accuracy,
            inclusion,
        });
    }
    Ok(out)
}

/// Aggregate result of one ablation cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationCell {
    pub horizon: usize,
    pub objective_on: bool,
    pub margin_on: bool,
    pub n_tasks: usize,
    pub declared_infeasible: usize,
    pub invalid_solution: usize,
    pub valid_solution: usize,
    pub mean_time: f64,
}

/// Random (s0, s_goal) pairs uniform over the state box. The pool depends
/// only on the seed, so every cell sees identical tasks.
pub fn ablation_tasks(n_tasks: usize, bounds: &Bounds, seed: u64) -> Vec<(ApexState, ApexState)> {
    (0..n_tasks as u64)
        .map(|i| {
            let mut rng = point_rng(seed, i);
            let mut draw = |k: usize| {
                use rand::Rng;
                rng.random_range(bounds.lower[k]..bounds.upper[k])
            };
            let s0 = ApexState {
                y: draw(0),
                xdot: draw(1),
            };
            let goal = ApexState {
                y: draw(0),
                xdot: draw(1),
            };
            (s0, goal)
        })
        .collect()
}

/// Per-task planner + rollout outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutcome {
    pub result: PlanResult,
    pub rollout: Option<RolloutReport>,
}

#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    n_tasks: usize,
    horizon: usize,
    objective_on: bool,
    margin_on: bool,
    p_net: &Mlp,
    m_net: &Mlp,
    params: &ModelParams,
    bounds: &Bounds,
    metric: &Metric,
    solver_cfg: &SolverConfig,
    epsilon: f64,
    seed: u64,
) -> Result<AblationCell> {
    let tasks = ablation_tasks(n_tasks, bounds, seed);
    let outcomes: Vec<TaskOutcome> = tasks
        .par_iter()
        .map(|(s0, goal)| {
            let task = PlanTask {
                s0: *s0,
                s_goal: *goal,
                horizon,
                use_objective: objective_on,
                use_margin: margin_on,
                epsilon,
            };
            let result = solve(&task, p_net, m_net, bounds, solver_cfg)?;
            let report = if result.status == PlanStatus::Solved {
                let mut r = rollout(s0, &result.plan.actions, params)?;
                if r.all_valid {
                    r.goal_error = Some(goal_distance(r.states.last().unwrap(), goal, metric));
                }
                Some(r)
            } else {
                None
            };
            Ok(TaskOutcome { result, rollout: report })
        })
        .collect::<Result<_>>()?;

    let mut cell = AblationCell {
        horizon,
        objective_on,
        margin_on,
        n_tasks,
        declared_infeasible: 0,
        invalid_solution: 0,
        valid_solution: 0,
        mean_time: 0.0,
    };
    let mut total_time = 0.0;
    for o in &outcomes {
        total_time += o.result.wall_time;
        match (&o.result.status, &o.rollout) {
            (PlanStatus::Solved, Some(r)) if r.all_valid => cell.valid_solution += 1,
            (PlanStatus::Solved, _) => cell.invalid_solution += 1,
            _ => cell.declared_infeasible += 1,
        }
    }
    if n_tasks > 0 {
        cell.mean_time = total_time / n_tasks as f64;
    }
    Ok(cell)
}
