//! Random-forest regressor and feasibility classifier. Trees are trained on
//! the full dataset (bagging disabled); at each node half the features are
//! considered, each with one split threshold drawn uniformly between the
//! feature's smallest and largest value at the node, and the feature with the
//! best variance reduction wins.

use super::{Surrogate, TrialHistory};
use crate::error::{Error, Result};
use crate::space::{SearchSpace, UnitPoint};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct RfConfig {
    pub n_trees: usize,
    pub min_samples_split: usize,
    pub feature_fraction: f64,
}

impl Default for RfConfig {
    fn default() -> Self {
        RfConfig {
            n_trees: 10,
            min_samples_split: 5,
            feature_fraction: 0.5,
        }
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        mean: f64,
        var: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug)]
pub(crate) struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn leaf_at(&self, u: &[f64]) -> (f64, f64) {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { mean, var } => return (*mean, *var),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if u[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

fn mean_var(ys: &[f64], idx: &[usize]) -> (f64, f64) {
    let n = idx.len() as f64;
    let mean = idx.iter().map(|&i| ys[i]).sum::<f64>() / n;
    let var = idx.iter().map(|&i| (ys[i] - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

fn build_tree(
    xs: &[UnitPoint],
    ys: &[f64],
    cfg: &RfConfig,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let mut nodes = Vec::new();
    let idx: Vec<usize> = (0..xs.len()).collect();
    build_node(xs, ys, idx, cfg, rng, &mut nodes);
    Tree { nodes }
}

fn build_node(
    xs: &[UnitPoint],
    ys: &[f64],
    idx: Vec<usize>,
    cfg: &RfConfig,
    rng: &mut ChaCha8Rng,
    nodes: &mut Vec<Node>,
) -> usize {
    let (mean, var) = mean_var(ys, &idx);
    let slot = nodes.len();
    nodes.push(Node::Leaf { mean, var });
    if idx.len() < cfg.min_samples_split || var < 1e-24 {
        return slot;
    }

    let d = xs[0].len();
    let n_feats = ((cfg.feature_fraction * d as f64).ceil() as usize).clamp(1, d);
    let mut feats: Vec<usize> = (0..d).collect();
    for i in 0..n_feats {
        let j = rng.gen_range(i..d);
        feats.swap(i, j);
    }

    let mut best: Option<(f64, usize, f64)> = None;
    for &f in &feats[..n_feats] {
        let lo = idx.iter().map(|&i| xs[i][f]).fold(f64::INFINITY, f64::min);
        let hi = idx
            .iter()
            .map(|&i| xs[i][f])
            .fold(f64::NEG_INFINITY, f64::max);
        if hi - lo < 1e-12 {
            continue;
        }
        let thr = rng.gen_range(lo..hi);
        let mut sse = 0.0;
        for side in [true, false] {
            let sub: Vec<usize> = idx
                .iter()
                .copied()
                .filter(|&i| (xs[i][f] <= thr) == side)
                .collect();
            if sub.is_empty() {
                sse = f64::INFINITY;
                break;
            }
            let (_, v) = mean_var(ys, &sub);
            sse += v * sub.len() as f64;
        }
        if best.as_ref().is_none_or(|(b, _, _)| sse < *b) {
            best = Some((sse, f, thr));
        }
    }

    let Some((_, feature, threshold)) = best else {
        return slot;
    };
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
        idx.iter().partition(|&&i| xs[i][feature] <= threshold);
    let left = build_node(xs, ys, left_idx, cfg, rng, nodes);
    let right = build_node(xs, ys, right_idx, cfg, rng, nodes);
    nodes[slot] = Node::Split {
        feature,
        threshold,
        left,
        right,
    };
    slot
}

/// Ensemble of regression trees over normalized inputs.
pub struct RfFit {
    pub(crate) trees: Vec<Tree>,
    sigma_floor: f64,
}

impl RfFit {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    #[cfg(test)]
    pub(crate) fn from_trees(trees: Vec<Tree>) -> RfFit {
        RfFit {
            trees,
            sigma_floor: 1e-6,
        }
    }
}

impl Surrogate for RfFit {
    fn predict_unit(&self, u: &[f64]) -> (f64, f64) {
        let n = self.trees.len() as f64;
        let mut mean_sum = 0.0;
        let mut mean_sq = 0.0;
        let mut within = 0.0;
        for t in &self.trees {
            let (m, v) = t.leaf_at(u);
            mean_sum += m;
            mean_sq += m * m;
            within += v;
        }
        let mu = mean_sum / n;
        // Law of total variance across trees: variance of the leaf means plus
        // the mean within-leaf variance.
        let across = (mean_sq / n - mu * mu).max(0.0);
        let var = across + within / n;
        (mu, var.sqrt().max(self.sigma_floor))
    }
}

fn fit_forest(
    xs: &[UnitPoint],
    ys: &[f64],
    cfg: &RfConfig,
    rng: &mut dyn RngCore,
) -> Vec<Tree> {
    // Pre-split deterministic per-tree streams.
    let seeds: Vec<u64> = (0..cfg.n_trees).map(|_| rng.next_u64()).collect();
    seeds
        .into_iter()
        .map(|s| build_tree(xs, ys, cfg, &mut ChaCha8Rng::seed_from_u64(s)))
        .collect()
}

pub fn fit_rf_with<R: Rng + ?Sized>(
    history: &TrialHistory,
    _space: &SearchSpace,
    cfg: &RfConfig,
    rng: &mut R,
) -> Result<RfFit> {
    let trials: Vec<_> = history.feasible().collect();
    if trials.len() < 2 {
        return Err(Error::NotEnoughData {
            need: 2,
            have: trials.len(),
        });
    }
    let xs: Vec<UnitPoint> = trials.iter().map(|t| t.u.clone()).collect();
    let ys: Vec<f64> = trials.iter().map(|t| t.y).collect();
    let mut seeder = ChaCha8Rng::seed_from_u64(rng.next_u64());
    Ok(RfFit {
        trees: fit_forest(&xs, &ys, cfg, &mut seeder),
        sigma_floor: 1e-6,
    })
}

pub fn fit_rf<R: Rng + ?Sized>(
    history: &TrialHistory,
    space: &SearchSpace,
    rng: &mut R,
) -> Result<RfFit> {
    fit_rf_with(history, space, &RfConfig::default(), rng)
}

/// RF classifier over (x, feasible); collapses to a constant when the history
/// holds a single class.
pub struct FeasibilityFit {
    forest: Option<Vec<Tree>>,
}

impl FeasibilityFit {
    /// Fraction of trees voting feasible at a unit point.
    pub fn prob_unit(&self, u: &[f64]) -> f64 {
        match &self.forest {
            None => 1.0,
            Some(trees) => {
                let votes = trees.iter().filter(|t| t.leaf_at(u).0 >= 0.5).count();
                votes as f64 / trees.len() as f64
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        self.forest.is_none()
    }
}

pub fn fit_feasibility<R: Rng + ?Sized>(
    history: &TrialHistory,
    _space: &SearchSpace,
    rng: &mut R,
) -> FeasibilityFit {
    let n_feasible = history.feasible().count();
    if n_feasible == 0 || n_feasible == history.len() || history.is_empty() {
        return FeasibilityFit { forest: None };
    }
    let xs: Vec<UnitPoint> = history.trials().iter().map(|t| t.u.clone()).collect();
    let labels: Vec<f64> = history
        .trials()
        .iter()
        .map(|t| if t.feasible { 1.0 } else { 0.0 })
        .collect();
    let mut seeder = ChaCha8Rng::seed_from_u64(rng.next_u64());
    FeasibilityFit {
        forest: Some(fit_forest(&xs, &labels, &RfConfig::default(), &mut seeder)),
    }
}

/// Public surface mirroring `prob_unit` for native points.
pub fn feasible_prob(fit: &FeasibilityFit, space: &SearchSpace, x: &crate::space::NativePoint) -> Result<f64> {
    Ok(fit.prob_unit(&space.normalize(x)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{ParamValue, Parameter};

    fn unit_line() -> SearchSpace {
        SearchSpace::new(vec![Parameter::continuous("x", 0.0, 1.0)]).unwrap()
    }

    #[test]
    fn constant_targets_give_floor_sigma() {
        let space = unit_line();
        let mut h = TrialHistory::new();
        for x in [0.1, 0.3, 0.5, 0.7, 0.9, 0.95] {
            h.push(&space, vec![ParamValue::Float(x)], 4.2, true)
                .unwrap();
        }
        let fit = fit_rf(&h, &space, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for q in [0.0, 0.42, 1.0] {
            let (mu, sigma) = fit.predict_unit(&[q]);
            assert!((mu - 4.2).abs() < 1e-12);
            assert_eq!(sigma, 1e-6);
        }
    }

    #[test]
    fn binary_feature_split_recovers_class_means() {
        let space =
            SearchSpace::new(vec![Parameter::categorical("c", &["off", "on"])]).unwrap();
        let mut h = TrialHistory::new();
        for (v, y) in [
            ("off", 1.0),
            ("off", 1.0),
            ("off", 1.0),
            ("on", 2.0),
            ("on", 2.0),
            ("on", 2.0),
        ] {
            h.push(&space, vec![ParamValue::Text(v.into())], y, true)
                .unwrap();
        }
        let fit = fit_rf(&h, &space, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (m0, s0) = fit.predict_unit(&[0.0]);
        let (m1, _) = fit.predict_unit(&[1.0]);
        assert_eq!(m0, 1.0);
        assert_eq!(m1, 2.0);
        assert_eq!(s0, 1e-6);
    }

    #[test]
    fn identical_trees_leave_only_within_leaf_variance() {
        let space = unit_line();
        let mut h = TrialHistory::new();
        // One root leaf (fewer than min_samples_split points) with spread y.
        for (x, y) in [(0.2, 0.0), (0.5, 1.0), (0.8, 2.0)] {
            h.push(&space, vec![ParamValue::Float(x)], y, true).unwrap();
        }
        let one = fit_rf_with(
            &h,
            &space,
            &RfConfig {
                n_trees: 1,
                ..RfConfig::default()
            },
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        let tree = one.trees[0].clone();
        let dup = RfFit::from_trees(vec![tree.clone(), tree]);
        let (_, sigma) = dup.predict_unit(&[0.5]);
        let within = (0.0f64 + 1.0 + 4.0) / 3.0 - 1.0; // population variance of [0,1,2]
        assert!((sigma - within.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn beats_constant_predictor_on_branin() {
        let branin = |x1: f64, x2: f64| {
            let b = 5.1 / (4.0 * std::f64::consts::PI.powi(2));
            let c = 5.0 / std::f64::consts::PI;
            let t = 1.0 / (8.0 * std::f64::consts::PI);
            (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
        };
        let space = SearchSpace::new(vec![
            Parameter::continuous("x1", -5.0, 10.0),
            Parameter::continuous("x2", 0.0, 15.0),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut h = TrialHistory::new();
        for x in space.uniform_sample(100, &mut rng) {
            let y = branin(x[0].as_f64().unwrap(), x[1].as_f64().unwrap());
            h.push(&space, x, y, true).unwrap();
        }
        let fit = fit_rf(&h, &space, &mut rng).unwrap();
        let train_mean = h.feasible_ys().iter().sum::<f64>() / h.len() as f64;
        let mut sse_rf = 0.0;
        let mut sse_const = 0.0;
        for x in space.uniform_sample(100, &mut rng) {
            let y = branin(x[0].as_f64().unwrap(), x[1].as_f64().unwrap());
            let (mu, _) = fit.predict_unit(&space.normalize(&x).unwrap());
            sse_rf += (mu - y).powi(2);
            sse_const += (train_mean - y).powi(2);
        }
        assert!(sse_rf < sse_const, "rf {sse_rf} vs const {sse_const}");
    }

    #[test]
    fn deterministic_given_seed() {
        let space = unit_line();
        let mut h = TrialHistory::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for x in space.uniform_sample(30, &mut rng) {
            let y = (x[0].as_f64().unwrap() * 7.0).sin();
            h.push(&space, x, y, true).unwrap();
        }
        let f1 = fit_rf(&h, &space, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let f2 = fit_rf(&h, &space, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        for q in [0.0, 0.33, 0.77, 1.0] {
            assert_eq!(f1.predict_unit(&[q]), f2.predict_unit(&[q]));
        }
    }

    #[test]
    fn feasibility_classifier_behaviour() {
        let space = unit_line();

        // Single class: constant 1.
        let mut all_ok = TrialHistory::new();
        for x in [0.1, 0.9] {
            all_ok
                .push(&space, vec![ParamValue::Float(x)], 1.0, true)
                .unwrap();
        }
        let fit = fit_feasibility(&all_ok, &space, &mut ChaCha8Rng::seed_from_u64(6));
        assert_eq!(fit.prob_unit(&[0.5]), 1.0);

        // Linearly separable: feasible iff x < 0.5.
        let mut h = TrialHistory::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for x in space.uniform_sample(50, &mut rng) {
            let v = x[0].as_f64().unwrap();
            let feasible = v < 0.5;
            let y = if feasible { v } else { f64::NAN };
            h.push(&space, x, y, feasible).unwrap();
        }
        let fit = fit_feasibility(&h, &space, &mut rng);
        assert!(fit.prob_unit(&[0.1]) > 0.9);
        // At an infeasible training point the leaf is pure infeasible.
        let infeasible_u = h
            .trials()
            .iter()
            .find(|t| !t.feasible && t.u[0] > 0.8)
            .unwrap()
            .u
            .clone();
        assert!(fit.prob_unit(&infeasible_u) < 0.5);
    }
}
