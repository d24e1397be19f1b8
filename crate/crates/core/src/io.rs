//! File formats: dataset and margin CSVs, network weights, plan records,
//! sweep and ablation CSVs. All numeric output is printed with 17
//! significant digits so a rerun with the same seed is byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::dynamics::{Action, ApexState, OutcomeTag};
use crate::error::{Error, Result};
use crate::harness::{AblationCell, SweepPoint};
use crate::mlp::Mlp;
use crate::planner::{PlanResult, PlanStatus, PlanTask};
use crate::sampling::{MarginSample, StepRecord};

pub const STEP_HEADER: &str = "y,xdot,alpha,dl,tag,dx_next,y_next,xdot_next";
pub const MARGIN_HEADER: &str = "y,xdot,alpha,dl,margin";
pub const SWEEP_HEADER: &str = "epsilon,accuracy,inclusion";
pub const ABLATION_HEADER: &str = "horizon,objective,margin,n,infeasible,invalid,valid,mean_time_s";
pub const WEIGHTS_FORMAT_VERSION: u32 = 1;
pub const PLAN_FORMAT_VERSION: u32 = 1;

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(s: &str, file: &str, line: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse {
        file: file.to_string(),
        line,
        message: format!("bad number {s:?}"),
    })
}

fn parse_err(file: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

pub fn write_step_records(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut out = String::with_capacity(records.len() * 96);
    out.push_str(STEP_HEADER);
    out.push('\n');
    for r in records {
        for v in r.point {
            let _ = write!(out, "{},", fmt_f64(v));
        }
        out.push_str(r.tag.as_str());
        match r.next {
            Some(next) => {
                for v in next {
                    let _ = write!(out, ",{}", fmt_f64(v));
                }
            }
            None => out.push_str(",,,"),
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_step_records(path: &Path) -> Result<Vec<StepRecord>> {
    let file = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == STEP_HEADER => {}
        _ => return Err(parse_err(&file, 1, format!("expected header {STEP_HEADER:?}"))),
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 8 {
            return Err(parse_err(&file, i + 1, format!("expected 8 columns, got {}", cols.len())));
        }
        let mut point = [0.0; 4];
        for (k, p) in point.iter_mut().enumerate() {
            *p = parse_f64(cols[k], &file, i + 1)?;
        }
        let tag = OutcomeTag::from_str(cols[4])
            .ok_or_else(|| parse_err(&file, i + 1, format!("unknown tag {:?}", cols[4])))?;
        let next = if tag.is_valid() {
            let mut n = [0.0; 3];
            for (k, v) in n.iter_mut().enumerate() {
                *v = parse_f64(cols[5 + k], &file, i + 1)?;
            }
            Some(n)
        } else {
            if cols[5..].iter().any(|c| !c.is_empty()) {
                return Err(parse_err(&file, i + 1, "failure row has next-apex columns"));
            }
            None
        };
        records.push(StepRecord { point, tag, next });
    }
    Ok(records)
}

pub fn write_margin_samples(path: &Path, samples: &[MarginSample]) -> Result<()> {
    let mut out = String::with_capacity(samples.len() * 64);
    out.push_str(MARGIN_HEADER);
    out.push('\n');
    for s in samples {
        for v in s.point {
            let _ = write!(out, "{},", fmt_f64(v));
        }
        let _ = writeln!(out, "{}", fmt_f64(s.margin));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_margin_samples(path: &Path) -> Result<Vec<MarginSample>> {
    let file = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == MARGIN_HEADER => {}
        _ => return Err(parse_err(&file, 1, format!("expected header {MARGIN_HEADER:?}"))),
    }
    let mut samples = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(parse_err(&file, i + 1, format!("expected 5 columns, got {}", cols.len())));
        }
        let mut point = [0.0; 4];
        for (k, p) in point.iter_mut().enumerate() {
            *p = parse_f64(cols[k], &file, i + 1)?;
        }
        samples.push(MarginSample {
            point,
            margin: parse_f64(cols[4], &file, i + 1)?,
        });
    }
    Ok(samples)
}

/// Weights file: version, layer sizes, training loss weights, then per
/// layer the row-major weight matrix and the bias vector.
pub fn write_mlp(path: &Path, net: &Mlp) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "format_version {WEIGHTS_FORMAT_VERSION}");
    let _ = writeln!(
        out,
        "layer_sizes {}",
        net.layer_sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ")
    );
    let _ = writeln!(
        out,
        "loss_weights {}",
        net.loss_weights.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(" ")
    );
    for (l, (w, b)) in net.weights.iter().zip(&net.biases).enumerate() {
        let _ = writeln!(out, "layer {l}");
        for row in w.rows() {
            let _ = writeln!(
                out,
                "{}",
                row.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(" ")
            );
        }
        let _ = writeln!(
            out,
            "{}",
            b.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(" ")
        );
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_mlp(path: &Path) -> Result<Mlp> {
    let file = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().peekable();

    let take_kv = |lines: &mut std::iter::Peekable<
        std::iter::Enumerate<std::str::Lines>,
    >,
                   key: &str|
     -> Result<(usize, String)> {
        match lines.next() {
            Some((i, l)) if l.starts_with(key) => {
                Ok((i + 1, l[key.len()..].trim().to_string()))
            }
            Some((i, l)) => Err(parse_err(&file, i + 1, format!("expected {key:?}, got {l:?}"))),
            None => Err(parse_err(&file, 0, format!("missing {key:?}"))),
        }
    };

    let (ln, ver) = take_kv(&mut lines, "format_version")?;
    let version: u32 = ver
        .parse()
        .map_err(|_| parse_err(&file, ln, "bad format_version"))?;
    if version != WEIGHTS_FORMAT_VERSION {
        return Err(Error::FormatVersion(version));
    }
    let (ln, sizes) = take_kv(&mut lines, "layer_sizes")?;
    let layer_sizes: Vec<usize> = sizes
        .split_whitespace()
        .map(|s| s.parse::<usize>().map_err(|_| parse_err(&file, ln, "bad layer size")))
        .collect::<Result<_>>()?;
    if layer_sizes.len() < 2 {
        return Err(parse_err(&file, ln, "need at least 2 layer sizes"));
    }
    let (ln, lw) = take_kv(&mut lines, "loss_weights")?;
    let loss_weights: Vec<f64> = lw
        .split_whitespace()
        .map(|s| parse_f64(s, &file, ln))
        .collect::<Result<_>>()?;

    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..layer_sizes.len() - 1 {
        let (_, idx) = take_kv(&mut lines, "layer")?;
        if idx != l.to_string() {
            return Err(parse_err(&file, 0, format!("expected layer {l}, got {idx}")));
        }
        let (rows, cols) = (layer_sizes[l + 1], layer_sizes[l]);
        let mut w = Array2::zeros((rows, cols));
        for r in 0..rows {
            let (i, line) = lines
                .next()
                .ok_or_else(|| parse_err(&file, 0, "truncated weight matrix"))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|s| parse_f64(s, &file, i + 1))
                .collect::<Result<_>>()?;
            if vals.len() != cols {
                return Err(parse_err(&file, i + 1, format!("expected {cols} values")));
            }
            for (c, v) in vals.into_iter().enumerate() {
                w[[r, c]] = v;
            }
        }
        let (i, line) = lines
            .next()
            .ok_or_else(|| parse_err(&file, 0, "truncated bias vector"))?;
        let bvals: Vec<f64> = line
            .split_whitespace()
            .map(|s| parse_f64(s, &file, i + 1))
            .collect::<Result<_>>()?;
        if bvals.len() != rows {
            return Err(parse_err(&file, i + 1, format!("expected {rows} bias values")));
        }
        weights.push(w);
        biases.push(Array1::from_vec(bvals));
    }
    Ok(Mlp {
        layer_sizes,
        weights,
        biases,
        loss_weights,
    })
}

/// A plan record on disk: the task plus the solver outcome. Timing is
/// optional so that default CLI output is reproducible byte for byte.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanFile {
    pub task: PlanTask,
    pub status: PlanStatus,
    pub states: Vec<ApexState>,
    pub actions: Vec<Action>,
    pub step_margins: Vec<f64>,
    pub step_dx: Vec<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub predicted_displacement: f64,
    pub wall_time: Option<f64>,
}

impl PlanFile {
    pub fn new(task: &PlanTask, result: &PlanResult, include_timing: bool) -> Self {
        Self {
            task: *task,
            status: result.status,
            states: result.plan.states.clone(),
            actions: result.plan.actions.clone(),
            step_margins: result.step_margins.clone(),
            step_dx: result.step_dx.clone(),
            kkt_residual: result.kkt_residual,
            iterations: result.iterations,
            predicted_displacement: result.predicted_displacement,
            wall_time: include_timing.then_some(result.wall_time),
        }
    }
}

pub fn write_plan(path: &Path, plan: &PlanFile) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "format_version = {PLAN_FORMAT_VERSION}");
    let _ = writeln!(out, "status = {}", plan.status.as_str());
    let _ = writeln!(out, "horizon = {}", plan.task.horizon);
    let _ = writeln!(out, "use_objective = {}", plan.task.use_objective);
    let _ = writeln!(out, "use_margin = {}", plan.task.use_margin);
    let _ = writeln!(out, "epsilon = {}", fmt_f64(plan.task.epsilon));
    let _ = writeln!(
        out,
        "s0 = {} {}",
        fmt_f64(plan.task.s0.y),
        fmt_f64(plan.task.s0.xdot)
    );
    let _ = writeln!(
        out,
        "goal = {} {}",
        fmt_f64(plan.task.s_goal.y),
        fmt_f64(plan.task.s_goal.xdot)
    );
    let _ = writeln!(out, "kkt_residual = {}", fmt_f64(plan.kkt_residual));
    let _ = writeln!(out, "iterations = {}", plan.iterations);
    let _ = writeln!(out, "predicted_dx = {}", fmt_f64(plan.predicted_displacement));
    if let Some(t) = plan.wall_time {
        let _ = writeln!(out, "wall_time_s = {}", fmt_f64(t));
    }
    // step n: state at the start of the step, the action, the surrogate
    // margin, and the predicted displacement.
    for n in 0..plan.task.horizon {
        let s = if n == 0 {
            plan.task.s0
        } else {
            plan.states[n - 1]
        };
        let a = plan.actions[n];
        let _ = writeln!(
            out,
            "step {n} = {} {} {} {} {} {}",
            fmt_f64(s.y),
            fmt_f64(s.xdot),
            fmt_f64(a.alpha),
            fmt_f64(a.delta_l),
            fmt_f64(plan.step_margins[n]),
            fmt_f64(plan.step_dx[n]),
        );
    }
    let last = plan.states.last().expect("horizon >= 1");
    let _ = writeln!(out, "final_state = {} {}", fmt_f64(last.y), fmt_f64(last.xdot));
    fs::write(path, out)?;
    Ok(())
}

pub fn read_plan(path: &Path) -> Result<PlanFile> {
    let file = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let mut kv = std::collections::HashMap::new();
    let mut steps: Vec<(usize, Vec<f64>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(&file, i + 1, "expected key = value"))?;
        let key = key.trim();
        let value = value.trim();
        if let Some(idx) = key.strip_prefix("step ") {
            let n: usize = idx
                .trim()
                .parse()
                .map_err(|_| parse_err(&file, i + 1, "bad step index"))?;
            let vals: Vec<f64> = value
                .split_whitespace()
                .map(|s| parse_f64(s, &file, i + 1))
                .collect::<Result<_>>()?;
            if vals.len() != 6 {
                return Err(parse_err(&file, i + 1, "step line needs 6 values"));
            }
            steps.push((n, vals));
        } else {
            kv.insert(key.to_string(), (i + 1, value.to_string()));
        }
    }
    let get = |key: &str| -> Result<(usize, String)> {
        kv.get(key)
            .cloned()
            .ok_or_else(|| parse_err(&file, 0, format!("missing key {key:?}")))
    };
    let (ln, ver) = get("format_version")?;
    let version: u32 = ver.parse().map_err(|_| parse_err(&file, ln, "bad version"))?;
    if version != PLAN_FORMAT_VERSION {
        return Err(Error::FormatVersion(version));
    }
    let (ln, status) = get("status")?;
    let status = PlanStatus::from_str(&status)
        .ok_or_else(|| parse_err(&file, ln, format!("unknown status {status:?}")))?;
    let (ln, horizon) = get("horizon")?;
    let horizon: usize = horizon.parse().map_err(|_| parse_err(&file, ln, "bad horizon"))?;
    let parse_pair = |key: &str| -> Result<ApexState> {
        let (ln, v) = get(key)?;
        let parts: Vec<f64> = v
            .split_whitespace()
            .map(|s| parse_f64(s, &file, ln))
            .collect::<Result<_>>()?;
        if parts.len() != 2 {
            return Err(parse_err(&file, ln, format!("{key} needs 2 values")));
        }
        Ok(ApexState {
            y: parts[0],
            xdot: parts[1],
        })
    };
    let parse_scalar = |key: &str| -> Result<f64> {
        let (ln, v) = get(key)?;
        parse_f64(&v, &file, ln)
    };
    let parse_bool = |key: &str| -> Result<bool> {
        let (ln, v) = get(key)?;
        v.parse::<bool>().map_err(|_| parse_err(&file, ln, format!("bad bool for {key}")))
    };
    let task = PlanTask {
        s0: parse_pair("s0")?,
        s_goal: parse_pair("goal")?,
        horizon,
        use_objective: parse_bool("use_objective")?,
        use_margin: parse_bool("use_margin")?,
        epsilon: parse_scalar("epsilon")?,
    };
    steps.sort_by_key(|(n, _)| *n);
    if steps.len() != horizon || steps.iter().enumerate().any(|(i, (n, _))| i != *n) {
        return Err(parse_err(&file, 0, "step lines do not match horizon"));
    }
    let final_state = parse_pair("final_state")?;
    let mut states: Vec<ApexState> = steps
        .iter()
        .skip(1)
        .map(|(_, v)| ApexState { y: v[0], xdot: v[1] })
        .collect();
    states.push(final_state);
    let actions = steps
        .iter()
        .map(|(_, v)| Action {
            alpha: v[2],
            delta_l: v[3],
        })
        .collect();
    Ok(PlanFile {
        task,
        status,
        states,
        actions,
        step_margins: steps.iter().map(|(_, v)| v[4]).collect(),
        step_dx: steps.iter().map(|(_, v)| v[5]).collect(),
        kkt_residual: parse_scalar("kkt_residual")?,
        iterations: {
            let (ln, v) = get("iterations")?;
            v.parse().map_err(|_| parse_err(&file, ln, "bad iterations"))?
        },
        predicted_displacement: parse_scalar("predicted_dx")?,
        wall_time: kv
            .get("wall_time_s")
            .map(|(ln, v)| parse_f64(v, &file, *ln))
            .transpose()?,
    })
}

pub fn write_sweep(path: &Path, points: &[SweepPoint]) -> Result<()> {
    let mut out = String::new();
    out.push_str(SWEEP_HEADER);
    out.push('\n');
    for p in points {
        let acc = p.accuracy.map(fmt_f64).unwrap_or_default();
        let _ = writeln!(out, "{},{},{}", fmt_f64(p.epsilon), acc, fmt_f64(p.inclusion));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_ablation(path: &Path, cells: &[AblationCell], include_timing: bool) -> Result<()> {
    let mut out = String::new();
    out.push_str(ABLATION_HEADER);
    out.push('\n');
    for c in cells {
        let mean_time = if include_timing {
            fmt_f64(c.mean_time)
        } else {
            fmt_f64(0.0)
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            c.horizon,
            if c.objective_on { "on" } else { "off" },
            if c.margin_on { "on" } else { "off" },
            c.n_tasks,
            c.declared_infeasible,
            c.invalid_solution,
            c.valid_solution,
            mean_time
        );
    }
    fs::write(path, out)?;
    Ok(())
}
