//! Line-oriented `key = value` run configuration covering the model
//! parameters, sampling bounds, metric weights, training settings, and
//! solver tolerances.

use std::path::Path;

use crate::dynamics::ModelParams;
use crate::error::{Error, Result};
use crate::planner::SolverConfig;
use crate::sampling::{Bounds, Metric};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: ModelParams,
    pub bounds: Bounds,
    pub metric: Metric,
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub holdout_fraction: f64,
    pub solver: SolverConfig,
    pub epsilon: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: ModelParams::default(),
            bounds: Bounds::default(),
            metric: Metric::default(),
            learning_rate: 0.001,
            iterations: 100_000,
            batch_size: 1024,
            holdout_fraction: 0.2,
            solver: SolverConfig::default(),
            epsilon: 0.05,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::default();
        let file = path.display().to_string();
        let mut stiffness = cfg.params.stiffness;
        let mut damping_ratio = cfg.params.damping_ratio;
        let mut mu = cfg.params.mu;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                file: file.clone(),
                line: i + 1,
                message: "expected key = value".into(),
            })?;
            let key = key.trim();
            let value = value.trim();
            let num = || -> Result<f64> {
                value.parse::<f64>().map_err(|_| Error::Parse {
                    file: file.clone(),
                    line: i + 1,
                    message: format!("bad number {value:?} for {key}"),
                })
            };
            let count = || -> Result<usize> {
                value.parse::<usize>().map_err(|_| Error::Parse {
                    file: file.clone(),
                    line: i + 1,
                    message: format!("bad count {value:?} for {key}"),
                })
            };
            match key {
                "stiffness" => stiffness = num()?,
                "damping_ratio" => damping_ratio = num()?,
                "mu" => mu = num()?,
                "y_min" => cfg.bounds.lower[0] = num()?,
                "y_max" => cfg.bounds.upper[0] = num()?,
                "xdot_min" => cfg.bounds.lower[1] = num()?,
                "xdot_max" => cfg.bounds.upper[1] = num()?,
                "alpha_min" => cfg.bounds.lower[2] = num()?,
                "alpha_max" => cfg.bounds.upper[2] = num()?,
                "dl_min" => cfg.bounds.lower[3] = num()?,
                "dl_max" => cfg.bounds.upper[3] = num()?,
                "metric_y" => cfg.metric.weights[0] = num()?,
                "metric_xdot" => cfg.metric.weights[1] = num()?,
                "metric_alpha" => cfg.metric.weights[2] = num()?,
                "metric_dl" => cfg.metric.weights[3] = num()?,
                "learning_rate" => cfg.learning_rate = num()?,
                "iterations" => cfg.iterations = count()?,
                "batch_size" => cfg.batch_size = count()?,
                "holdout_fraction" => cfg.holdout_fraction = num()?,
                "constraint_tol" => cfg.solver.constraint_tol = num()?,
                "grad_tol" => cfg.solver.grad_tol = num()?,
                "max_outer" => cfg.solver.max_outer = count()?,
                "max_inner" => cfg.solver.max_inner = count()?,
                "epsilon" => cfg.epsilon = num()?,
                _ => {
                    return Err(Error::Parse {
                        file,
                        line: i + 1,
                        message: format!("unknown key {key:?}"),
                    })
                }
            }
        }
        cfg.params = ModelParams::new(stiffness, damping_ratio, mu)?;
        cfg.bounds.validate()?;
        if !(cfg.holdout_fraction > 0.0 && cfg.holdout_fraction < 1.0) {
            return Err(Error::Config(format!(
                "holdout_fraction must be in (0, 1), got {}",
                cfg.holdout_fraction
            )));
        }
        Ok(cfg)
    }
}
