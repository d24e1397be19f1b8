//! Dataset generation: uniform state-action sampling, outcome labeling,
//! and oriented-distance (failure margin) labels computed from a pair of
//! k-d trees over the valid and invalid point sets.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynamics::{simulate_step, Action, ApexState, ModelParams, OutcomeTag};
use crate::error::{Error, Result};
use crate::kdtree::WeightedKdTree;

/// Box bounds over the state-action coordinates (y, xdot, alpha, dl).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lower: [f64; 4],
    pub upper: [f64; 4],
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            lower: [0.8, -1.0, -0.6, -0.05],
            upper: [1.2, 1.0, 0.6, 0.15],
        }
    }
}

impl Bounds {
    pub fn validate(&self) -> Result<()> {
        for i in 0..4 {
            if !(self.lower[i] < self.upper[i]) {
                return Err(Error::Config(format!(
                    "bounds: lower[{i}] = {} must be < upper[{i}] = {}",
                    self.lower[i], self.upper[i]
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &[f64; 4]) -> bool {
        (0..4).all(|i| p[i] >= self.lower[i] && p[i] <= self.upper[i])
    }
}

/// Diagonal weighted 2-norm over state-action space:
/// d(p,q) = sqrt(sum_i w_i (p_i - q_i)^2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metric {
    pub weights: [f64; 4],
}

impl Default for Metric {
    fn default() -> Self {
        Self {
            weights: [6.25, 0.250, 0.309, 2.50],
        }
    }
}

impl Metric {
    pub fn distance(&self, p: &[f64; 4], q: &[f64; 4]) -> f64 {
        let mut acc = 0.0;
        for i in 0..4 {
            let d = p[i] - q[i];
            acc += self.weights[i] * d * d;
        }
        acc.sqrt()
    }
}

/// One labeled sample of the controlled first return map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// (y, xdot, alpha, dl).
    pub point: [f64; 4],
    pub tag: OutcomeTag,
    /// (dx, y', xdot') for valid steps.
    pub next: Option<[f64; 3]>,
}

impl StepRecord {
    pub fn is_valid(&self) -> bool {
        self.tag.is_valid()
    }
}

/// A fresh point with its signed distance label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginSample {
    pub point: [f64; 4],
    pub margin: f64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-index RNG so parallel evaluation is order-independent.
pub fn point_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(index)))
}

pub fn uniform_point(rng: &mut ChaCha8Rng, bounds: &Bounds) -> [f64; 4] {
    std::array::from_fn(|i| rng.random_range(bounds.lower[i]..bounds.upper[i]))
}

/// Simulate one sampled point and record the outcome.
pub fn label_point(point: &[f64; 4], params: &ModelParams) -> Result<StepRecord> {
    let s = ApexState {
        y: point[0],
        xdot: point[1],
    };
    let a = Action {
        alpha: point[2],
        delta_l: point[3],
    };
    let outcome = simulate_step(&s, &a, params)?;
    Ok(StepRecord {
        point: *point,
        tag: outcome.tag,
        next: outcome.next.map(|n| [n.dx, n.apex.y, n.apex.xdot]),
    })
}

/// Uniformly sample `n` state-action pairs and label each with the
/// simulator. Deterministic for a fixed seed regardless of thread count.
pub fn sample_dataset(
    n: usize,
    bounds: &Bounds,
    params: &ModelParams,
    seed: u64,
) -> Result<Vec<StepRecord>> {
    bounds.validate()?;
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = point_rng(seed, i);
            let point = uniform_point(&mut rng, bounds);
            label_point(&point, params)
        })
        .collect()
}

/// Build the weighted k-d tree over a set of sampled points.
pub fn build_tree(points: &[[f64; 4]], metric: &Metric) -> Result<WeightedKdTree> {
    WeightedKdTree::build(points, metric)
}

/// Split a labeled dataset into (valid, invalid) point sets.
pub fn split_by_validity(records: &[StepRecord]) -> (Vec<[f64; 4]>, Vec<[f64; 4]>) {
    let mut valid = Vec::new();
    let mut invalid = Vec::new();
    for r in records {
        if r.is_valid() {
            valid.push(r.point);
        } else {
            invalid.push(r.point);
        }
    }
    (valid, invalid)
}

/// Oriented-distance label: simulate `q`, then measure the distance to the
/// nearest opposite-class training point. Positive iff `q` is valid.
pub fn margin_label(
    q: &[f64; 4],
    valid_tree: &WeightedKdTree,
    invalid_tree: &WeightedKdTree,
    params: &ModelParams,
) -> Result<MarginSample> {
    let record = label_point(q, params)?;
    let (_, d) = if record.is_valid() {
        invalid_tree.nearest(q)
    } else {
        valid_tree.nearest(q)
    };
    if d == 0.0 {
        return Err(Error::ConflictingLabels(*q));
    }
    let margin = if record.is_valid() { d } else { -d };
    Ok(MarginSample { point: *q, margin })
}

/// `m` fresh uniform points labeled by `margin_label`.
pub fn generate_margin_dataset(
    m: usize,
    bounds: &Bounds,
    valid_tree: &WeightedKdTree,
    invalid_tree: &WeightedKdTree,
    params: &ModelParams,
    seed: u64,
) -> Result<Vec<MarginSample>> {
    bounds.validate()?;
    (0..m as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = point_rng(seed, i);
            let point = uniform_point(&mut rng, bounds);
            margin_label(&point, valid_tree, invalid_tree, params)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_symmetry_and_identity() {
        let m = Metric::default();
        let p = [1.0, 0.3, -0.2, 0.1];
        let q = [0.9, -0.5, 0.4, 0.0];
        assert_eq!(m.distance(&p, &q), m.distance(&q, &p));
        assert_eq!(m.distance(&p, &p), 0.0);
    }

    #[test]
    fn forced_symmetric_point_is_valid_with_zero_dx() {
        let r = label_point(&[1.1, 0.0, 0.0, 0.0], &ModelParams::default()).unwrap();
        assert_eq!(r.tag, OutcomeTag::Valid);
        assert!(r.next.unwrap()[0].abs() < 1e-9);
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let bounds = Bounds::default();
        let params = ModelParams::default();
        let a = sample_dataset(64, &bounds, &params, 12345).unwrap();
        let b = sample_dataset(64, &bounds, &params, 12345).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn both_classes_populated() {
        let records =
            sample_dataset(2000, &Bounds::default(), &ModelParams::default(), 7).unwrap();
        let n_valid = records.iter().filter(|r| r.is_valid()).count();
        assert!(n_valid > 0 && n_valid < records.len());
    }

    #[test]
    fn margin_signs_match_simulation() {
        let bounds = Bounds::default();
        let params = ModelParams::default();
        let metric = Metric::default();
        let records = sample_dataset(2000, &bounds, &params, 11).unwrap();
        let (valid, invalid) = split_by_validity(&records);
        let vt = build_tree(&valid, &metric).unwrap();
        let it = build_tree(&invalid, &metric).unwrap();

        // Known-valid point (symmetric hop) and known-invalid point
        // (slip: tan(0.6) > mu at touchdown).
        let pos = margin_label(&[1.1, 0.0, 0.0, 0.0], &vt, &it, &params).unwrap();
        assert!(pos.margin > 0.0);
        let neg = margin_label(&[1.1, 0.0, 0.6, 0.0], &vt, &it, &params).unwrap();
        assert!(neg.margin < 0.0);

        // Sign fidelity on fresh samples.
        for i in 0..200 {
            let mut rng = point_rng(99, i);
            let q = uniform_point(&mut rng, &bounds);
            let m = margin_label(&q, &vt, &it, &params).unwrap();
            let truly_valid = label_point(&q, &params).unwrap().is_valid();
            assert_eq!(m.margin > 0.0, truly_valid);
        }
    }

    proptest::proptest! {
        #[test]
        fn metric_is_a_metric(
            p in proptest::array::uniform4(-2.0f64..2.0),
            q in proptest::array::uniform4(-2.0f64..2.0),
            r in proptest::array::uniform4(-2.0f64..2.0),
        ) {
            let m = Metric::default();
            proptest::prop_assert!(m.distance(&p, &q) >= 0.0);
            proptest::prop_assert_eq!(m.distance(&p, &q), m.distance(&q, &p));
            proptest::prop_assert!(
                m.distance(&p, &r) <= m.distance(&p, &q) + m.distance(&q, &r) + 1e-12
            );
        }
    }
}
