//! N-step footstep planning as a nonlinear program over the learned
//! surrogates: surrogate dynamics as equality constraints, failure-margin
//! inequality constraints, a goal equality, and box bounds on all
//! variables. Solved by an augmented-Lagrangian outer loop around a
//! box-projected BFGS inner solver.

use ndarray::{Array1, Array2};
use std::time::Instant;

use crate::dynamics::{Action, ApexState};
use crate::error::{Error, Result};
use crate::mlp::Mlp;
use crate::sampling::Bounds;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanTask {
    pub s0: ApexState,
    pub s_goal: ApexState,
    pub horizon: usize,
    pub use_objective: bool,
    pub use_margin: bool,
    pub epsilon: f64,
}

impl PlanTask {
    pub fn new(s0: ApexState, s_goal: ApexState, horizon: usize) -> Self {
        Self {
            s0,
            s_goal,
            horizon,
            use_objective: false,
            use_margin: true,
            epsilon: 0.05,
        }
    }
}

/// Diagonal weight on the step-to-step state change in the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveWeights {
    pub h: [f64; 2],
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self { h: [6.25, 0.25] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanStatus {
    Solved,
    Infeasible,
    IterationLimit,
}

impl PlanStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            PlanStatus::Solved => "solved",
            PlanStatus::Infeasible => "infeasible",
            PlanStatus::IterationLimit => "iteration_limit",
        }
    }

    pub fn from_str(s: &str) -> Option<Self> {
        Some(match s {
            "solved" => PlanStatus::Solved,
            "infeasible" => PlanStatus::Infeasible,
            "iteration_limit" => PlanStatus::IterationLimit,
            _ => return None,
        })
    }
}

/// Decision variables: states s1..sN then actions a0..a_{N-1}.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanVector {
    pub states: Vec<ApexState>,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub status: PlanStatus,
    pub plan: PlanVector,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub wall_time: f64,
    /// Sum of the surrogate's per-step displacement outputs.
    pub predicted_displacement: f64,
    /// Surrogate margin M(s_n, a_n) at each planned step.
    pub step_margins: Vec<f64>,
    /// Surrogate displacement prediction at each planned step.
    pub step_dx: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub constraint_tol: f64,
    pub grad_tol: f64,
    /// Feasibility-restoration stall: violation decrease below this over
    /// `stall_outers` outer iterations while above `stall_level` declares
    /// the problem infeasible.
    pub stall_tol: f64,
    pub stall_level: f64,
    pub stall_outers: usize,
    pub max_outer: usize,
    pub max_inner: usize,
    pub rho_init: f64,
    pub rho_max: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            constraint_tol: 1e-6,
            grad_tol: 1e-6,
            stall_tol: 1e-8,
            stall_level: 1e-4,
            stall_outers: 3,
            max_outer: 500,
            max_inner: 80,
            rho_init: 10.0,
            rho_max: 1e6,
        }
    }
}

/// Objective value and gradient: sum of weighted squared state changes,
/// or identically zero when the task disables the objective.
pub fn eval_objective(
    x: &[f64],
    task: &PlanTask,
    weights: &ObjectiveWeights,
) -> (f64, Vec<f64>) {
    let n = task.horizon;
    let mut grad = vec![0.0; x.len()];
    if !task.use_objective {
        return (0.0, grad);
    }
    let state = |i: usize| -> [f64; 2] {
        if i == 0 {
            [task.s0.y, task.s0.xdot]
        } else {
            [x[2 * (i - 1)], x[2 * (i - 1) + 1]]
        }
    };
    let mut f = 0.0;
    for i in 0..n {
        let si = state(i);
        let sj = state(i + 1);
        for k in 0..2 {
            let d = si[k] - sj[k];
            f += weights.h[k] * d * d;
            if i >= 1 {
                grad[2 * (i - 1) + k] += 2.0 * weights.h[k] * d;
            }
            grad[2 * i + k] -= 2.0 * weights.h[k] * d;
        }
    }
    (f, grad)
}

/// Constraint values and Jacobians at `x`.
pub struct ConstraintEval {
    /// Dynamics equalities (2 per step) then the goal equality (2).
    pub eq: Vec<f64>,
    pub eq_jac: Array2<f64>,
    /// Margin inequalities g_n = eps - M(s_n, a_n) <= 0; empty when the
    /// margin constraint is disabled.
    pub ineq: Vec<f64>,
    pub ineq_jac: Array2<f64>,
    /// Surrogate outputs per step: (dx, y', xdot').
    pub step_outputs: Vec<[f64; 3]>,
    pub step_margins: Vec<f64>,
}

pub fn eval_constraints(
    x: &[f64],
    task: &PlanTask,
    p_net: &Mlp,
    m_net: &Mlp,
) -> Result<ConstraintEval> {
    let n = task.horizon;
    let dim = 4 * n;
    debug_assert_eq!(x.len(), dim);
    let n_eq = 2 * n + 2;
    let n_ineq = if task.use_margin { n } else { 0 };
    let mut eq = vec![0.0; n_eq];
    let mut eq_jac = Array2::zeros((n_eq, dim));
    let mut ineq = vec![0.0; n_ineq];
    let mut ineq_jac = Array2::zeros((n_ineq, dim));
    let mut step_outputs = Vec::with_capacity(n);
    let mut step_margins = Vec::with_capacity(n);

    for step in 0..n {
        let s: [f64; 2] = if step == 0 {
            [task.s0.y, task.s0.xdot]
        } else {
            [x[2 * (step - 1)], x[2 * (step - 1) + 1]]
        };
        let a = [x[2 * n + 2 * step], x[2 * n + 2 * step + 1]];
        let input = [s[0], s[1], a[0], a[1]];
        let (p_out, p_jac) = p_net.forward_with_jacobian(&input)?;
        step_outputs.push([p_out[0], p_out[1], p_out[2]]);

        // Dynamics equality: P(s_n, a_n)[y', xdot'] - s_{n+1}.
        for k in 0..2 {
            let row = 2 * step + k;
            eq[row] = p_out[1 + k] - x[2 * step + k];
            eq_jac[[row, 2 * step + k]] = -1.0;
            for j in 0..2 {
                if step >= 1 {
                    eq_jac[[row, 2 * (step - 1) + j]] += p_jac[[1 + k, j]];
                }
                eq_jac[[row, 2 * n + 2 * step + j]] += p_jac[[1 + k, 2 + j]];
            }
        }

        let (m_out, m_jac) = m_net.forward_with_jacobian(&input)?;
        step_margins.push(m_out[0]);
        if task.use_margin {
            ineq[step] = task.epsilon - m_out[0];
            for j in 0..2 {
                if step >= 1 {
                    ineq_jac[[step, 2 * (step - 1) + j]] -= m_jac[[0, j]];
                }
                ineq_jac[[step, 2 * n + 2 * step + j]] -= m_jac[[0, 2 + j]];
            }
        }
    }

    // Goal equality: s_N - s_goal.
    let goal = [task.s_goal.y, task.s_goal.xdot];
    for k in 0..2 {
        let row = 2 * n + k;
        eq[row] = x[2 * (n - 1) + k] - goal[k];
        eq_jac[[row, 2 * (n - 1) + k]] = 1.0;
    }

    Ok(ConstraintEval {
        eq,
        eq_jac,
        ineq,
        ineq_jac,
        step_outputs,
        step_margins,
    })
}

fn variable_bounds(bounds: &Bounds, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = Vec::with_capacity(4 * n);
    let mut hi = Vec::with_capacity(4 * n);
    for _ in 0..n {
        lo.extend_from_slice(&bounds.lower[..2]);
        hi.extend_from_slice(&bounds.upper[..2]);
    }
    for _ in 0..n {
        lo.extend_from_slice(&bounds.lower[2..]);
        hi.extend_from_slice(&bounds.upper[2..]);
    }
    (lo, hi)
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Initialization rule: states linearly interpolated from s0 to the goal,
/// actions at the action-box midpoint.
fn initial_vector(task: &PlanTask, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let n = task.horizon;
    let mut x = vec![0.0; 4 * n];
    for i in 1..=n {
        let t = i as f64 / n as f64;
        x[2 * (i - 1)] = task.s0.y + t * (task.s_goal.y - task.s0.y);
        x[2 * (i - 1) + 1] = task.s0.xdot + t * (task.s_goal.xdot - task.s0.xdot);
    }
    for i in 0..n {
        x[2 * n + 2 * i] = 0.5 * (lo[2 * n + 2 * i] + hi[2 * n + 2 * i]);
        x[2 * n + 2 * i + 1] = 0.5 * (lo[2 * n + 2 * i + 1] + hi[2 * n + 2 * i + 1]);
    }
    project(&mut x, lo, hi);
    x
}

struct AugLag<'a> {
    task: &'a PlanTask,
    weights: ObjectiveWeights,
    p_net: &'a Mlp,
    m_net: &'a Mlp,
    lambda: Vec<f64>,
    mu: Vec<f64>,
    rho: f64,
}

impl AugLag<'_> {
    /// Augmented Lagrangian value and gradient at x.
    fn eval(&self, x: &[f64]) -> Result<(f64, Vec<f64>, ConstraintEval)> {
        let (f, mut grad) = eval_objective(x, self.task, &self.weights);
        let con = eval_constraints(x, self.task, self.p_net, self.m_net)?;
        let mut val = f;
        for (i, &h) in con.eq.iter().enumerate() {
            val += self.lambda[i] * h + 0.5 * self.rho * h * h;
            let coef = self.lambda[i] + self.rho * h;
            for j in 0..x.len() {
                grad[j] += coef * con.eq_jac[[i, j]];
            }
        }
        for (i, &g) in con.ineq.iter().enumerate() {
            let t = self.mu[i] + self.rho * g;
            if t > 0.0 {
                val += (t * t - self.mu[i] * self.mu[i]) / (2.0 * self.rho);
                for j in 0..x.len() {
                    grad[j] += t * con.ineq_jac[[i, j]];
                }
            } else {
                val -= self.mu[i] * self.mu[i] / (2.0 * self.rho);
            }
        }
        Ok((val, grad, con))
    }
}

fn projected_gradient_norm(x: &[f64], grad: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let mut norm: f64 = 0.0;
    for i in 0..x.len() {
        let step = (x[i] - grad[i]).clamp(lo[i], hi[i]) - x[i];
        norm = norm.max(step.abs());
    }
    norm
}

/// Box-projected BFGS descent on the augmented Lagrangian.
/// Returns (x, value, grad, projected gradient norm).
fn inner_minimize(
    al: &AugLag,
    mut x: Vec<f64>,
    lo: &[f64],
    hi: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, f64, Vec<f64>, f64)> {
    let dim = x.len();
    let mut b_inv = Array2::<f64>::eye(dim);
    let (mut val, mut grad, _) = al.eval(&x)?;
    let mut pg = projected_gradient_norm(&x, &grad, lo, hi);
    let mut tiny_steps = 0;
    let mut fallbacks = 0;
    let mut alpha0 = 1.0f64;
    for _ in 0..max_iter {
        if pg <= tol {
            break;
        }
        let g = Array1::from_vec(grad.clone());
        let mut dir = (-b_inv.dot(&g)).to_vec();
        let descent: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        if !descent.is_finite() || descent >= 0.0 {
            b_inv = Array2::eye(dim);
            dir = grad.iter().map(|g| -g).collect();
        }

        // Backtracking Armijo line search along the projected path. Warm
        // starting from the last accepted step length avoids repeating
        // deep backtracks when the accepted steps are consistently small.
        let line_search = |dir: &[f64],
                           val: f64,
                           alpha0: f64|
         -> Result<Option<(Vec<f64>, f64, Vec<f64>, f64)>> {
            let mut alpha = alpha0;
            for _ in 0..40 {
                let mut x_new: Vec<f64> = x
                    .iter()
                    .zip(dir)
                    .map(|(xi, di)| xi + alpha * di)
                    .collect();
                project(&mut x_new, lo, hi);
                let step_sq: f64 = x_new
                    .iter()
                    .zip(&x)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if step_sq == 0.0 {
                    return Ok(None);
                }
                let decrease: f64 = x_new
                    .iter()
                    .zip(&x)
                    .zip(&grad)
                    .map(|((xn, xo), g)| g * (xn - xo))
                    .sum();
                let (val_new, grad_new, _) = al.eval(&x_new)?;
                if val_new <= val + 1e-4 * decrease.min(0.0) && val_new.is_finite() {
                    return Ok(Some((x_new, val_new, grad_new, alpha)));
                }
                alpha *= 0.5;
            }
            Ok(None)
        };
        let mut accepted = line_search(&dir, val, alpha0)?;
        if accepted.is_none() {
            // The quasi-Newton direction can be poor near active bounds and
            // surrogate kinks; retry along the projected gradient before
            // giving up.
            b_inv = Array2::eye(dim);
            let sd: Vec<f64> = grad.iter().map(|g| -g).collect();
            accepted = line_search(&sd, val, alpha0)?;
            fallbacks += 1;
            // Repeated rescues mean the model is useless here (typically a
            // kink corner); further iterations only burn evaluations.
            if fallbacks >= 3 {
                if let Some((x_new, _, grad_new, _)) = accepted {
                    x = x_new;
                    grad = grad_new;
                    pg = projected_gradient_norm(&x, &grad, lo, hi);
                }
                break;
            }
        } else {
            fallbacks = 0;
        }
        let Some((x_new, val_new, grad_new, alpha_used)) = accepted else {
            break;
        };
        alpha0 = (4.0 * alpha_used).min(1.0);
        // Give up once the line search only yields negligible decrease;
        // near-stationary grinding dominates infeasible problems otherwise.
        if val - val_new <= 1e-15 * val.abs().max(1.0) {
            tiny_steps += 1;
            if tiny_steps >= 5 {
                x = x_new;
                grad = grad_new;
                pg = projected_gradient_norm(&x, &grad, lo, hi);
                break;
            }
        } else {
            tiny_steps = 0;
        }

        // BFGS update on the realized step.
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = grad_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        let yy: f64 = yv.iter().map(|v| v * v).sum();
        if sy > 1e-10 * (ss * yy).sqrt() {
            let s_arr = Array1::from_vec(s);
            let y_arr = Array1::from_vec(yv);
            let by = b_inv.dot(&y_arr);
            let yby = y_arr.dot(&by);
            // Sherman-Morrison form of the inverse BFGS update.
            let c1 = (sy + yby) / (sy * sy);
            for i in 0..dim {
                for j in 0..dim {
                    b_inv[[i, j]] += c1 * s_arr[i] * s_arr[j]
                        - (by[i] * s_arr[j] + s_arr[i] * by[j]) / sy;
                }
            }
        }

        x = x_new;
        val = val_new;
        grad = grad_new;
        pg = projected_gradient_norm(&x, &grad, lo, hi);
    }
    Ok((x, val, grad, pg))
}

fn violation(con: &ConstraintEval) -> f64 {
    let eq = con.eq.iter().fold(0.0f64, |m, h| m.max(h.abs()));
    let ineq = con.ineq.iter().fold(0.0f64, |m, g| m.max(g.max(0.0)));
    eq.max(ineq)
}

/// Solve the N-step plan. Deterministic given task, nets, and config.
pub fn solve(
    task: &PlanTask,
    p_net: &Mlp,
    m_net: &Mlp,
    bounds: &Bounds,
    cfg: &SolverConfig,
) -> Result<PlanResult> {
    if task.horizon < 1 {
        return Err(Error::Config("horizon must be >= 1".into()));
    }
    if p_net.input_dim() != 4 || p_net.output_dim() != 3 {
        return Err(Error::NetMismatch(format!(
            "return-map net must be 4 -> 3, got {:?}",
            p_net.layer_sizes
        )));
    }
    if m_net.input_dim() != 4 || m_net.output_dim() != 1 {
        return Err(Error::NetMismatch(format!(
            "margin net must be 4 -> 1, got {:?}",
            m_net.layer_sizes
        )));
    }
    bounds.validate()?;
    let start = Instant::now();
    let n = task.horizon;
    let (lo, hi) = variable_bounds(bounds, n);
    let mut x = initial_vector(task, &lo, &hi);

    let mut al = AugLag {
        task,
        weights: ObjectiveWeights::default(),
        p_net,
        m_net,
        lambda: vec![0.0; 2 * n + 2],
        mu: vec![0.0; if task.use_margin { n } else { 0 }],
        rho: cfg.rho_init,
    };

    let mut inner_tol = 1e-2f64;
    let mut best_violation = f64::INFINITY;
    let mut stall_count = 0;
    let mut status = PlanStatus::IterationLimit;
    let mut kkt = f64::INFINITY;
    let mut outer = 0;
    let mut prev_violation = f64::INFINITY;
    let mut solved: Option<(Vec<f64>, f64)> = None;

    while outer < cfg.max_outer {
        outer += 1;
        let (x_new, _val, _grad, pg) = inner_minimize(&al, x, &lo, &hi, inner_tol, cfg.max_inner)?;
        x = x_new;
        let con = eval_constraints(&x, task, p_net, m_net)?;
        let v = violation(&con);
        kkt = v.max(pg);

        if v <= cfg.constraint_tol && pg <= cfg.grad_tol {
            status = PlanStatus::Solved;
            // Keep the best qualifying iterate; polishing outers can only
            // replace it with a smaller residual.
            if solved.as_ref().map_or(true, |(_, k)| v.max(pg) < *k) {
                solved = Some((x.clone(), v.max(pg)));
            }
            // A couple of polishing outers drive the residual well below
            // the tolerance when the constraints are exactly satisfiable.
            if v <= 0.01 * cfg.constraint_tol || outer == cfg.max_outer {
                break;
            }
        }

        // Feasibility-restoration stall check.
        if v < best_violation - cfg.stall_tol {
            best_violation = v;
            stall_count = 0;
        } else {
            stall_count += 1;
            if stall_count >= cfg.stall_outers && v > cfg.stall_level {
                status = PlanStatus::Infeasible;
                break;
            }
            if status == PlanStatus::Solved {
                break;
            }
        }

        // Multiplier and penalty updates.
        for (l, h) in al.lambda.iter_mut().zip(&con.eq) {
            *l += al.rho * h;
        }
        for (m, g) in al.mu.iter_mut().zip(&con.ineq) {
            *m = (*m + al.rho * g).max(0.0);
        }
        if v > 0.5 * prev_violation {
            al.rho = (al.rho * 10.0).min(cfg.rho_max);
        }
        prev_violation = v;
        inner_tol = (inner_tol * 0.1).max(cfg.grad_tol);
    }

    if let Some((x_best, k_best)) = solved {
        x = x_best;
        kkt = k_best;
        status = PlanStatus::Solved;
    }
    let con = eval_constraints(&x, task, p_net, m_net)?;
    let states = (0..n)
        .map(|i| ApexState {
            y: x[2 * i],
            xdot: x[2 * i + 1],
        })
        .collect();
    let actions = (0..n)
        .map(|i| Action {
            alpha: x[2 * n + 2 * i],
            delta_l: x[2 * n + 2 * i + 1],
        })
        .collect();
    let step_dx: Vec<f64> = con.step_outputs.iter().map(|o| o[0]).collect();
    Ok(PlanResult {
        status,
        plan: PlanVector { states, actions },
        kkt_residual: kkt,
        iterations: outer,
        wall_time: start.elapsed().as_secs_f64(),
        predicted_displacement: step_dx.iter().sum(),
        step_margins: con.step_margins,
        step_dx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant_margin_net(value: f64) -> Mlp {
        let mut net = Mlp::init(&[4, 1], 0).unwrap();
        net.weights[0].fill(0.0);
        net.biases[0][0] = value;
        net
    }

    fn small_random_p_net(seed: u64) -> Mlp {
        // Small weights keep outputs near the middle of the state box.
        let mut net = Mlp::init(&[4, 16, 16, 3], seed).unwrap();
        for w in &mut net.weights {
            w.mapv_inplace(|v| 0.3 * v);
        }
        net.biases[2][1] = 1.0; // y' near 1
        net
    }

    #[test]
    fn objective_zero_when_states_equal_s0() {
        let task = PlanTask {
            s0: ApexState { y: 1.0, xdot: 0.0 },
            s_goal: ApexState { y: 1.0, xdot: 0.0 },
            horizon: 2,
            use_objective: true,
            use_margin: false,
            epsilon: 0.05,
        };
        let x = [1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let (f, grad) = eval_objective(&x, &task, &ObjectiveWeights::default());
        assert_eq!(f, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn objective_single_step_closed_form() {
        let task = PlanTask {
            s0: ApexState { y: 1.0, xdot: 0.0 },
            s_goal: ApexState { y: 1.1, xdot: 0.2 },
            horizon: 1,
            use_objective: true,
            use_margin: false,
            epsilon: 0.05,
        };
        let x = [1.1, 0.2, 0.0, 0.0];
        let (f, _) = eval_objective(&x, &task, &ObjectiveWeights::default());
        assert!((f - 0.0725).abs() < 1e-12);
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let task = PlanTask {
            s0: ApexState { y: 1.05, xdot: 0.3 },
            s_goal: ApexState { y: 0.9, xdot: -0.2 },
            horizon: 3,
            use_objective: true,
            use_margin: false,
            epsilon: 0.05,
        };
        let w = ObjectiveWeights::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-0.5..1.2)).collect();
        let (_, grad) = eval_objective(&x, &task, &w);
        let h = 1e-7;
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (eval_objective(&xp, &task, &w).0 - eval_objective(&xm, &task, &w).0)
                / (2.0 * h);
            assert!((grad[i] - fd).abs() < 1e-6, "i={i}");
        }
    }

    #[test]
    fn self_consistent_rollout_satisfies_dynamics() {
        let p_net = small_random_p_net(21);
        let m_net = constant_margin_net(0.2);
        let task = PlanTask {
            s0: ApexState { y: 1.0, xdot: 0.1 },
            s_goal: ApexState { y: 1.0, xdot: 0.0 },
            horizon: 3,
            use_objective: false,
            use_margin: true,
            epsilon: 0.05,
        };
        let n = task.horizon;
        let mut x = vec![0.0; 4 * n];
        // Actions fixed, states set to the surrogate rollout.
        let mut s = [task.s0.y, task.s0.xdot];
        for i in 0..n {
            let a = [0.1, 0.02];
            x[2 * n + 2 * i] = a[0];
            x[2 * n + 2 * i + 1] = a[1];
            let out = p_net.forward(&[s[0], s[1], a[0], a[1]]).unwrap();
            s = [out[1], out[2]];
            x[2 * i] = s[0];
            x[2 * i + 1] = s[1];
        }
        let con = eval_constraints(&x, &task, &p_net, &m_net).unwrap();
        for h in &con.eq[..2 * n] {
            assert!(h.abs() < 1e-12);
        }
        // Margin 0.2 with eps 0.05 gives g = -0.15 everywhere.
        for g in &con.ineq {
            assert!((g + 0.15).abs() < 1e-12);
        }
    }

    #[test]
    fn constraint_jacobian_matches_finite_differences() {
        let p_net = small_random_p_net(5);
        let mut m_net = Mlp::init(&[4, 8, 1], 7).unwrap();
        for w in &mut m_net.weights {
            w.mapv_inplace(|v| 0.5 * v);
        }
        let task = PlanTask {
            s0: ApexState { y: 1.05, xdot: -0.2 },
            s_goal: ApexState { y: 0.95, xdot: 0.4 },
            horizon: 2,
            use_objective: false,
            use_margin: true,
            epsilon: 0.05,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut checked = 0;
        while checked < 5 {
            let x: Vec<f64> = (0..8).map(|_| rng.random_range(-0.3..1.1)).collect();
            let con = eval_constraints(&x, &task, &p_net, &m_net).unwrap();
            let h = 1e-6;
            let mut ok = true;
            for i in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let cp = eval_constraints(&xp, &task, &p_net, &m_net).unwrap();
                let cm = eval_constraints(&xm, &task, &p_net, &m_net).unwrap();
                for r in 0..con.eq.len() {
                    let fd = (cp.eq[r] - cm.eq[r]) / (2.0 * h);
                    if (con.eq_jac[[r, i]] - fd).abs() > 1e-5 {
                        ok = false; // likely a ReLU kink; resample
                    }
                }
                for r in 0..con.ineq.len() {
                    let fd = (cp.ineq[r] - cm.ineq[r]) / (2.0 * h);
                    if (con.ineq_jac[[r, i]] - fd).abs() > 1e-5 {
                        ok = false;
                    }
                }
            }
            if ok {
                checked += 1;
            }
        }
    }

    #[test]
    fn recovers_manufactured_goal() {
        let p_net = small_random_p_net(11);
        let m_net = constant_margin_net(0.2);
        let bounds = Bounds::default();
        let s0 = ApexState { y: 1.0, xdot: 0.1 };
        let a_star = [0.2, 0.05];
        let out = p_net.forward(&[s0.y, s0.xdot, a_star[0], a_star[1]]).unwrap();
        let task = PlanTask {
            s0,
            s_goal: ApexState {
                y: out[1],
                xdot: out[2],
            },
            horizon: 1,
            use_objective: false,
            use_margin: true,
            epsilon: 0.05,
        };
        let result = solve(&task, &p_net, &m_net, &bounds, &SolverConfig::default()).unwrap();
        assert_eq!(result.status, PlanStatus::Solved);
        let a = result.plan.actions[0];
        let reached = p_net.forward(&[s0.y, s0.xdot, a.alpha, a.delta_l]).unwrap();
        let err = ((reached[1] - task.s_goal.y).powi(2)
            + (reached[2] - task.s_goal.xdot).powi(2))
        .sqrt();
        assert!(err <= 1e-6, "goal error {err}");
    }

    #[test]
    fn unreachable_goal_is_not_solved() {
        // Affine surrogate with y' confined to [0.94, 1.06]: a goal at
        // y = 1.2 cannot satisfy the equalities.
        let mut p_net = Mlp::init(&[4, 3], 0).unwrap();
        p_net.weights[0] = arr2(&[
            [0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.1, 0.0],
            [0.0, 0.0, 0.0, 0.0],
        ]);
        p_net.biases[0] = ndarray::Array1::from_vec(vec![0.0, 1.0, 0.0]);
        let m_net = constant_margin_net(0.2);
        let task = PlanTask {
            s0: ApexState { y: 0.8, xdot: -1.0 },
            s_goal: ApexState { y: 1.2, xdot: 1.0 },
            horizon: 1,
            use_objective: false,
            use_margin: true,
            epsilon: 0.05,
        };
        let result = solve(
            &task,
            &p_net,
            &m_net,
            &Bounds::default(),
            &SolverConfig::default(),
        )
        .unwrap();
        assert_ne!(result.status, PlanStatus::Solved);
    }

    #[test]
    fn solve_is_deterministic() {
        let p_net = small_random_p_net(3);
        let m_net = constant_margin_net(0.1);
        let task = PlanTask {
            s0: ApexState { y: 1.0, xdot: 0.2 },
            s_goal: ApexState { y: 1.02, xdot: 0.0 },
            horizon: 2,
            use_objective: true,
            use_margin: true,
            epsilon: 0.05,
        };
        let r1 = solve(&task, &p_net, &m_net, &Bounds::default(), &SolverConfig::default()).unwrap();
        let r2 = solve(&task, &p_net, &m_net, &Bounds::default(), &SolverConfig::default()).unwrap();
        assert_eq!(r1.plan, r2.plan);
        assert_eq!(r1.status, r2.status);
    }

    #[test]
    fn net_shape_mismatch_rejected() {
        let p_net = Mlp::init(&[4, 2], 0).unwrap();
        let m_net = constant_margin_net(0.0);
        let task = PlanTask::new(
            ApexState { y: 1.0, xdot: 0.0 },
            ApexState { y: 1.0, xdot: 0.0 },
            1,
        );
        assert!(solve(&task, &p_net, &m_net, &Bounds::default(), &SolverConfig::default()).is_err());
    }
}
