//! From-scratch feed-forward networks: ReLU hidden layers, identity
//! output, Adam training on a weighted squared error, and exact
//! input-Jacobians for use inside the planner.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layer_sizes: Vec<usize>,
    /// Per layer, shape (fan_out, fan_in).
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    /// Output loss weights the net was trained with (ones before training).
    pub loss_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss_weights: Vec<f64>,
    /// Evaluate on the held-out set every this many iterations and keep
    /// the best parameters seen.
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn new(loss_weights: Vec<f64>, seed: u64) -> Self {
        Self {
            learning_rate: 0.001,
            iterations: 100_000,
            batch_size: 1024,
            seed,
            loss_weights,
            eval_every: 1000,
        }
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases; deterministic per seed.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::BadShape(format!(
                "need at least 2 layers, got {:?}",
                layer_sizes
            )));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::BadShape(format!("zero-size layer in {:?}", layer_sizes)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            weights.push(Array2::from_shape_vec((fan_out, fan_in), data).unwrap());
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            loss_weights: vec![1.0; *layer_sizes.last().unwrap()],
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Affine -> ReLU chain with an affine output layer.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut act = Array1::from_vec(input.to_vec());
        let last = self.weights.len() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            act = w.dot(&act) + b;
            if i < last {
                act.mapv_inplace(|v| v.max(0.0));
            }
        }
        Ok(act.to_vec())
    }

    /// Batched forward pass; rows of `inputs` are samples.
    pub fn forward_batch(&self, inputs: &Array2<f64>) -> Result<Array2<f64>> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: inputs.ncols(),
            });
        }
        let mut act = inputs.clone();
        let last = self.weights.len() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            act = act.dot(&w.t()) + b;
            if i < last {
                act.mapv_inplace(|v| v.max(0.0));
            }
        }
        Ok(act)
    }

    /// Exact Jacobian d(output)/d(input) of the piecewise-linear net at
    /// `input`. The ReLU derivative at exactly zero pre-activation is 0.
    pub fn input_jacobian(&self, input: &[f64]) -> Result<Array2<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut act = Array1::from_vec(input.to_vec());
        // Forward-accumulated Jacobian of the current activation w.r.t. input.
        let mut jac = self.weights[0].clone();
        let last = self.weights.len() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if i > 0 {
                jac = w.dot(&jac);
            }
            act = w.dot(&act) + b;
            if i < last {
                for (row, pre) in act.iter().enumerate() {
                    if *pre <= 0.0 {
                        jac.row_mut(row).fill(0.0);
                    }
                }
                act.mapv_inplace(|v| v.max(0.0));
            }
        }
        Ok(jac)
    }

    /// Forward value and input-Jacobian in one pass.
    pub fn forward_with_jacobian(&self, input: &[f64]) -> Result<(Vec<f64>, Array2<f64>)> {
        Ok((self.forward(input)?, self.input_jacobian(input)?))
    }
}

/// Weighted RMSE: sqrt(mean over samples of sum_j w_j (out_j - target_j)^2).
pub fn evaluate(
    net: &Mlp,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    loss_weights: &[f64],
) -> Result<f64> {
    let out = net.forward_batch(inputs)?;
    if targets.ncols() != net.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.output_dim(),
            got: targets.ncols(),
        });
    }
    let w = Array1::from_vec(loss_weights.to_vec());
    let diff = &out - targets;
    let per_sample = (&diff * &diff).dot(&w);
    Ok((per_sample.sum() / inputs.nrows() as f64).sqrt())
}

struct Adam {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    t: usize,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(net: &Mlp) -> Self {
        Self {
            m_w: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            v_w: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            m_b: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            v_b: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            t: 0,
        }
    }

    fn step(&mut self, net: &mut Mlp, grad_w: &[Array2<f64>], grad_b: &[Array1<f64>], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for l in 0..net.weights.len() {
            self.m_w[l].zip_mut_with(&grad_w[l], |m, g| *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g);
            self.v_w[l].zip_mut_with(&grad_w[l], |v, g| *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g);
            let mw = &self.m_w[l];
            let vw = &self.v_w[l];
            net.weights[l].zip_mut_with(
                &(mw / bc1 / ((vw / bc2).mapv(f64::sqrt) + Self::EPS)),
                |p, u| *p -= lr * u,
            );
            self.m_b[l].zip_mut_with(&grad_b[l], |m, g| *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g);
            self.v_b[l].zip_mut_with(&grad_b[l], |v, g| *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g);
            let mb = &self.m_b[l];
            let vb = &self.v_b[l];
            net.biases[l].zip_mut_with(
                &(mb / bc1 / ((vb / bc2).mapv(f64::sqrt) + Self::EPS)),
                |p, u| *p -= lr * u,
            );
        }
    }
}

/// Train with Adam on mini-batches sampled deterministically per seed.
/// Returns the trained net (best-on-held-out when `val` is given) and the
/// per-iteration batch loss history.
pub fn train(
    net: &Mlp,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    val: Option<(&Array2<f64>, &Array2<f64>)>,
    cfg: &TrainConfig,
) -> Result<(Mlp, Vec<f64>)> {
    if inputs.nrows() != targets.nrows() {
        return Err(Error::DimensionMismatch {
            expected: inputs.nrows(),
            got: targets.nrows(),
        });
    }
    if cfg.loss_weights.len() != net.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.output_dim(),
            got: cfg.loss_weights.len(),
        });
    }
    let n = inputs.nrows();
    let batch = cfg.batch_size.min(n);
    let w = Array1::from_vec(cfg.loss_weights.to_vec());
    let mut current = net.clone();
    current.loss_weights = cfg.loss_weights.clone();
    let mut opt = Adam::new(&current);
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut best = current.clone();
    let mut best_val = f64::INFINITY;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let last = current.weights.len() - 1;
    for iter in 0..cfg.iterations {
        // Gather the mini-batch.
        let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..n)).collect();
        let x = inputs.select(Axis(0), &idx);
        let y = targets.select(Axis(0), &idx);

        // Forward, keeping post-activation values per layer.
        let mut acts: Vec<Array2<f64>> = vec![x];
        for (i, (wl, bl)) in current.weights.iter().zip(&current.biases).enumerate() {
            let mut a = acts[i].dot(&wl.t()) + bl;
            if i < last {
                a.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(a);
        }
        let out = acts.last().unwrap();
        let diff = out - &y;
        let loss = (&diff * &diff).dot(&w).sum() / batch as f64;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged {
                iteration: iter,
                loss,
            });
        }
        history.push(loss);

        // Backward pass. delta starts as dL/d(out).
        let mut delta = diff * &w.mapv(|v| 2.0 * v / batch as f64);
        let mut grad_w = vec![Array2::zeros((0, 0)); current.weights.len()];
        let mut grad_b = vec![Array1::zeros(0); current.biases.len()];
        for l in (0..current.weights.len()).rev() {
            grad_w[l] = delta.t().dot(&acts[l]);
            grad_b[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                delta = delta.dot(&current.weights[l]);
                // ReLU mask from the post-activation values of layer l.
                delta.zip_mut_with(&acts[l], |d, a| {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
        }
        opt.step(&mut current, &grad_w, &grad_b, cfg.learning_rate);

        if let Some((vx, vy)) = val {
            if (iter + 1) % cfg.eval_every == 0 || iter + 1 == cfg.iterations {
                let score = evaluate(&current, vx, vy, &cfg.loss_weights)?;
                if score < best_val {
                    best_val = score;
                    best = current.clone();
                }
            }
        }
    }
    let trained = if val.is_some() { best } else { current };
    Ok((trained, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn init_shapes_and_determinism() {
        let a = Mlp::init(&[4, 64, 64, 3], 42).unwrap();
        let b = Mlp::init(&[4, 64, 64, 3], 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.parameter_count(), 4675);
        assert!(a.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
        let c = Mlp::init(&[4, 1], 1).unwrap();
        assert!(c.biases[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bad_shapes_rejected() {
        assert!(Mlp::init(&[4], 0).is_err());
        assert!(Mlp::init(&[4, 0, 2], 0).is_err());
    }

    #[test]
    fn single_affine_layer_is_exact() {
        let mut net = Mlp::init(&[2, 2], 0).unwrap();
        net.weights[0] = arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        net.biases[0] = Array1::from_vec(vec![0.5, -0.5]);
        let out = net.forward(&[1.0, 1.0]).unwrap();
        assert_eq!(out, vec![3.5, 6.5]);
        let jac = net.input_jacobian(&[1.0, 1.0]).unwrap();
        assert_eq!(jac, net.weights[0]);
    }

    #[test]
    fn hand_built_relu_pair_reproduces_identity() {
        // max(0, x) - max(0, -x) == x.
        let mut net = Mlp::init(&[1, 2, 1], 0).unwrap();
        net.weights[0] = arr2(&[[1.0], [-1.0]]);
        net.biases[0] = Array1::zeros(2);
        net.weights[1] = arr2(&[[1.0, -1.0]]);
        net.biases[1] = Array1::zeros(1);
        for x in [-2.0, -0.5, 0.3, 1.7] {
            assert_eq!(net.forward(&[x]).unwrap()[0], x);
        }
    }

    #[test]
    fn dead_relu_layer_zeroes_jacobian() {
        let mut net = Mlp::init(&[2, 3, 2], 0).unwrap();
        net.biases[0] = Array1::from_vec(vec![-10.0, -10.0, -10.0]);
        let jac = net.input_jacobian(&[0.1, 0.1]).unwrap();
        assert!(jac.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let net = Mlp::init(&[4, 16, 16, 3], 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        let mut checked = 0;
        while checked < 20 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            if near_kink(&net, &x, 1e-4) {
                continue;
            }
            let jac = net.input_jacobian(&x).unwrap();
            for i in 0..4 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fp = net.forward(&xp).unwrap();
                let fm = net.forward(&xm).unwrap();
                for j in 0..3 {
                    let fd = (fp[j] - fm[j]) / (2.0 * h);
                    assert!((jac[[j, i]] - fd).abs() < 1e-5);
                }
            }
            checked += 1;
        }
    }

    /// True if any hidden pre-activation is within `tol` of zero.
    pub fn near_kink(net: &Mlp, input: &[f64], tol: f64) -> bool {
        let mut act = Array1::from_vec(input.to_vec());
        let last = net.weights.len() - 1;
        for (i, (w, b)) in net.weights.iter().zip(&net.biases).enumerate() {
            act = w.dot(&act) + b;
            if i < last {
                if act.iter().any(|v| v.abs() < tol) {
                    return true;
                }
                act.mapv_inplace(|v| v.max(0.0));
            }
        }
        false
    }

    #[test]
    fn piecewise_linearity_inside_one_region() {
        let net = Mlp::init(&[4, 8, 8, 2], 9).unwrap();
        let p = [0.1, 0.1, 0.1, 0.1];
        // q close to p so both (usually) share an activation pattern.
        let q = [0.1001, 0.0999, 0.1001, 0.0999];
        if pattern(&net, &p) != pattern(&net, &q) {
            return;
        }
        let lam = 0.3;
        let mid: Vec<f64> = (0..4).map(|i| lam * p[i] + (1.0 - lam) * q[i]).collect();
        let fp = net.forward(&p).unwrap();
        let fq = net.forward(&q).unwrap();
        let fm = net.forward(&mid).unwrap();
        for j in 0..2 {
            assert!((fm[j] - (lam * fp[j] + (1.0 - lam) * fq[j])).abs() < 1e-10);
        }
    }

    fn pattern(net: &Mlp, input: &[f64]) -> Vec<bool> {
        let mut act = Array1::from_vec(input.to_vec());
        let mut out = Vec::new();
        let last = net.weights.len() - 1;
        for (i, (w, b)) in net.weights.iter().zip(&net.biases).enumerate() {
            act = w.dot(&act) + b;
            if i < last {
                out.extend(act.iter().map(|&v| v > 0.0));
                act.mapv_inplace(|v| v.max(0.0));
            }
        }
        out
    }

    #[test]
    fn evaluate_closed_forms() {
        let mut net = Mlp::init(&[2, 2], 0).unwrap();
        net.weights[0] = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let x = arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        // Perfect predictions.
        assert_eq!(evaluate(&net, &x, &x, &[1.0, 1.0]).unwrap(), 0.0);
        // Constant offset on output 1 with weight w: rmse = sqrt(w)*|delta|.
        let shifted = &x + &arr2(&[[0.0, 0.3], [0.0, 0.3]]);
        let rmse = evaluate(&net, &x, &shifted, &[1.0, 4.0]).unwrap();
        assert!((rmse - 2.0 * 0.3).abs() < 1e-12);
    }

    #[test]
    fn trains_affine_target() {
        // y = A x + b learned by a linear net.
        let a = arr2(&[[0.5, -1.0], [2.0, 0.25]]);
        let b = Array1::from_vec(vec![0.1, -0.2]);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 512;
        let data: Vec<f64> = (0..n * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Array2::from_shape_vec((n, 2), data).unwrap();
        let y = x.dot(&a.t()) + &b;
        let net = Mlp::init(&[2, 2], 4).unwrap();
        let mut cfg = TrainConfig::new(vec![1.0, 1.0], 8);
        cfg.iterations = 10_000;
        cfg.batch_size = 128;
        let (trained, history) = train(&net, &x, &y, None, &cfg).unwrap();
        let rmse = evaluate(&trained, &x, &y, &[1.0, 1.0]).unwrap();
        assert!(rmse < 1e-3, "rmse = {rmse}");
        // Training must not diverge.
        let lead: f64 = history[..1000].iter().sum::<f64>() / 1000.0;
        let trail: f64 = history[history.len() - 1000..].iter().sum::<f64>() / 1000.0;
        assert!(trail <= lead);
    }

    #[test]
    fn zero_targets_drive_outputs_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 256;
        let data: Vec<f64> = (0..n * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Array2::from_shape_vec((n, 2), data).unwrap();
        let y = Array2::zeros((n, 1));
        let net = Mlp::init(&[2, 8, 1], 6).unwrap();
        let mut cfg = TrainConfig::new(vec![1.0], 3);
        cfg.iterations = 5_000;
        cfg.batch_size = 64;
        let (trained, _) = train(&net, &x, &y, None, &cfg).unwrap();
        assert!(evaluate(&trained, &x, &y, &[1.0]).unwrap() < 1e-2);
    }
}
