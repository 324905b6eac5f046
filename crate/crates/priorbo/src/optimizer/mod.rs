//! Acquisition maximization: multi-start hill climbing seeded from history,
//! random pools and the prior mode, plus CMA-ES on continuous spaces, with a
//! 10% uniform-random interleave.

mod cma;

pub use cma::{cma_es, CmaConfig};

use crate::acquisition::{constrained_scores, AcquisitionContext};
use crate::error::Result;
use crate::priors::TruncGauss;
use crate::space::{NativePoint, ParamKind, SearchSpace, UnitPoint};
use crate::surrogate::TrialHistory;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

#[derive(Clone, Debug)]
pub struct LocalSearchConfig {
    pub n_best_history: usize,
    pub n_best_uniform: usize,
    pub n_best_prior: usize,
    pub pool_uniform: usize,
    pub pool_prior: usize,
    pub neighbors_per_point: usize,
    pub neighbor_sigma: f64,
    pub include_prior_mode: bool,
    /// Stop a hill climb after this many rounds without improvement.
    pub max_non_improving: usize,
    /// Hard cap on score evaluations per start.
    pub max_evals: usize,
}

impl Default for LocalSearchConfig {
    fn default() -> Self {
        LocalSearchConfig {
            n_best_history: 10,
            n_best_uniform: 10,
            n_best_prior: 10,
            pool_uniform: 10_000,
            pool_prior: 10_000,
            neighbors_per_point: 4,
            neighbor_sigma: 0.1,
            include_prior_mode: true,
            max_non_improving: 50,
            max_evals: 500,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProposeConfig {
    pub local: LocalSearchConfig,
    pub cma: CmaConfig,
    pub interleave_prob: f64,
}

impl Default for ProposeConfig {
    fn default() -> Self {
        ProposeConfig {
            local: LocalSearchConfig::default(),
            cma: CmaConfig::default(),
            interleave_prob: 0.1,
        }
    }
}

/// A suggested point plus how it was produced.
#[derive(Clone, Debug)]
pub struct Proposal {
    pub x: NativePoint,
    pub u: UnitPoint,
    pub interleave: bool,
}

/// Probability that a truncated-Gaussian kick of width `sigma` crosses to a
/// neighboring rank of a `k`-valued discrete parameter; floored so binary
/// parameters stay searchable.
fn discrete_move_prob(k: usize, sigma: f64) -> f64 {
    let half_gap = 0.5 / (k - 1) as f64;
    let p = 2.0 * (1.0 - Normal::standard().cdf(half_gap / sigma));
    p.max(0.045)
}

fn sample_neighbor<R: Rng + ?Sized>(
    space: &SearchSpace,
    u: &[f64],
    sigma: f64,
    rng: &mut R,
) -> UnitPoint {
    space
        .parameters()
        .iter()
        .zip(u)
        .map(|(p, &ui)| match &p.kind {
            ParamKind::Continuous { .. } => TruncGauss::new(ui, sigma).sample(rng),
            ParamKind::Ordinal { values } => {
                let k = values.len();
                if rng.gen::<f64>() >= discrete_move_prob(k, sigma) {
                    return ui;
                }
                let rank = crate::space::snap_rank(ui, k);
                let up = if rank == 0 {
                    true
                } else if rank == k - 1 {
                    false
                } else {
                    rng.gen::<bool>()
                };
                let next = if up { rank + 1 } else { rank - 1 };
                next as f64 / (k - 1) as f64
            }
            ParamKind::Categorical { values } => {
                let k = values.len();
                if rng.gen::<f64>() >= discrete_move_prob(k, sigma) {
                    return ui;
                }
                let cur = crate::space::snap_rank(ui, k);
                let mut pick = rng.gen_range(0..k - 1);
                if pick >= cur {
                    pick += 1;
                }
                pick as f64 / (k - 1) as f64
            }
        })
        .collect()
}

/// Hill climbing over the unit cube: repeatedly samples a few truncated
/// Gaussian neighbors and moves to the best one if it improves the score.
pub fn local_search<R: Rng + ?Sized>(
    space: &SearchSpace,
    start: UnitPoint,
    score: &dyn Fn(&[f64]) -> f64,
    cfg: &LocalSearchConfig,
    rng: &mut R,
) -> (UnitPoint, f64) {
    let mut cur = start;
    let mut cur_score = score(&cur);
    let mut evals = 1;
    let mut stale_rounds = 0;
    while stale_rounds < cfg.max_non_improving && evals < cfg.max_evals {
        let mut best_neighbor: Option<(UnitPoint, f64)> = None;
        for _ in 0..cfg.neighbors_per_point {
            if evals >= cfg.max_evals {
                break;
            }
            let n = sample_neighbor(space, &cur, cfg.neighbor_sigma, rng);
            let s = score(&n);
            evals += 1;
            if best_neighbor.as_ref().is_none_or(|(_, bs)| s > *bs) {
                best_neighbor = Some((n, s));
            }
        }
        match best_neighbor {
            Some((n, s)) if s > cur_score => {
                cur = n;
                cur_score = s;
                stale_rounds = 0;
            }
            _ => stale_rounds += 1,
        }
    }
    (cur, cur_score)
}

fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx.truncate(k);
    idx
}

/// Suggests the next point to evaluate: either a uniform interleave draw or
/// the best-scoring candidate among hill climbs from 31 starts, CMA-ES runs
/// from the incumbent and the prior mode, and the raw pools. Never repeats an
/// already-evaluated point.
pub fn propose<R: Rng + ?Sized>(
    space: &SearchSpace,
    ctx: &AcquisitionContext,
    history: &TrialHistory,
    cfg: &ProposeConfig,
    rng: &mut R,
) -> Result<Proposal> {
    if rng.gen::<f64>() < cfg.interleave_prob {
        for _ in 0..100 {
            let u = space.uniform_sample_unit(rng);
            let x = space.denormalize(&u);
            if !history.trials().iter().any(|t| t.x == x) {
                return Ok(Proposal {
                    x,
                    u,
                    interleave: true,
                });
            }
        }
    }

    let uniform_pool: Vec<UnitPoint> = (0..cfg.local.pool_uniform)
        .map(|_| space.uniform_sample_unit(rng))
        .collect();
    let prior_pool: Vec<UnitPoint> = ctx
        .prior
        .sample_unit(cfg.local.pool_prior, rng)
        .into_iter()
        .map(|u| snap_units(space, u))
        .collect();

    // Constrained runs need actual EI values so the batch can be min-max
    // normalized before the feasibility weighting; the normalization constants
    // are frozen from the pools for the whole round. Unconstrained runs rank
    // by the log gap directly.
    let constrained = ctx.feasibility.is_some();
    let mut pool_scores: Vec<f64>;
    let score_fn: Box<dyn Fn(&[f64]) -> f64>;
    if constrained {
        let mut eis = ctx.ei_ratio_batch(&uniform_pool)?;
        eis.extend(ctx.ei_ratio_batch(&prior_pool)?);
        let lo = eis.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = eis.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let probs: Vec<f64> = uniform_pool
            .iter()
            .chain(&prior_pool)
            .map(|u| ctx.feasible_prob_unit(u))
            .collect();
        pool_scores = constrained_scores(&eis, &probs);
        let ctx_ref = ctx;
        score_fn = Box::new(move |u: &[f64]| {
            let ei = ctx_ref.ei_ratio_unit(u).unwrap_or(f64::NEG_INFINITY);
            let norm = if hi - lo < 1e-300 {
                1.0
            } else {
                ((ei - lo) / (hi - lo)).clamp(0.0, 1.0)
            };
            norm * ctx_ref.feasible_prob_unit(u)
        });
    } else {
        // The EI value saturates at 1/gamma wherever the pseudo-posterior is
        // overwhelmingly in favor; maximizing the saturating value (rather
        // than the log gap) leaves such regions tied, and the deterministic
        // candidate order picks among them. Hill climbs stop at plateaus
        // instead of polishing into the incumbent's float neighborhood.
        pool_scores = ctx.ei_ratio_batch(&uniform_pool)?;
        pool_scores.extend(ctx.ei_ratio_batch(&prior_pool)?);
        let ctx_ref = ctx;
        score_fn = Box::new(move |u: &[f64]| ctx_ref.ei_ratio_unit(u).unwrap_or(f64::NEG_INFINITY));
    }

    // Start points: best history, best of each pool, prior mode.
    let mut starts: Vec<UnitPoint> = Vec::with_capacity(31);
    let mut best_trials: Vec<_> = history.feasible().collect();
    best_trials.sort_by(|a, b| a.y.total_cmp(&b.y));
    starts.extend(
        best_trials
            .iter()
            .take(cfg.local.n_best_history)
            .map(|t| t.u.clone()),
    );
    let uniform_scores = &pool_scores[..uniform_pool.len()];
    let prior_scores = &pool_scores[uniform_pool.len()..];
    starts.extend(
        top_k_indices(uniform_scores, cfg.local.n_best_uniform)
            .into_iter()
            .map(|i| uniform_pool[i].clone()),
    );
    starts.extend(
        top_k_indices(prior_scores, cfg.local.n_best_prior)
            .into_iter()
            .map(|i| prior_pool[i].clone()),
    );
    if cfg.local.include_prior_mode {
        starts.push(snap_units(space, ctx.prior.mode_unit()));
    }

    // Candidates in deterministic order: local-search results first, then
    // CMA-ES, then the raw pools.
    let mut candidates: Vec<(UnitPoint, f64)> = starts
        .into_iter()
        .map(|s| local_search(space, s, score_fn.as_ref(), &cfg.local, rng))
        .collect();

    if space.is_fully_continuous() {
        let mut cma_starts: Vec<UnitPoint> = Vec::new();
        if let Some(inc) = history.incumbent() {
            cma_starts.push(inc.u.clone());
        }
        cma_starts.push(ctx.prior.mode_unit());
        for s in cma_starts {
            candidates.push(cma_es(
                &s,
                cfg.cma.sigma0,
                score_fn.as_ref(),
                cfg.cma.max_evals,
                rng,
            ));
        }
    }

    candidates.extend(
        uniform_pool
            .into_iter()
            .chain(prior_pool)
            .zip(pool_scores.iter().copied()),
    );

    let mut best: Option<(NativePoint, UnitPoint, f64)> = None;
    for (u, s) in candidates {
        let x = space.denormalize(&u);
        if history.trials().iter().any(|t| t.x == x) {
            continue;
        }
        if best.as_ref().is_none_or(|(_, _, bs)| s > *bs) {
            best = Some((x, u, s));
        }
    }
    if let Some((x, u, _)) = best {
        return Ok(Proposal {
            x,
            u,
            interleave: false,
        });
    }
    // Everything already evaluated: fall back to fresh uniform draws.
    loop {
        let u = space.uniform_sample_unit(rng);
        let x = space.denormalize(&u);
        if !history.trials().iter().any(|t| t.x == x) {
            return Ok(Proposal {
                x,
                u,
                interleave: false,
            });
        }
    }
}

/// Snaps discrete coordinates onto their rank grid so scores and duplicate
/// checks see the point the evaluation will actually use.
fn snap_units(space: &SearchSpace, u: UnitPoint) -> UnitPoint {
    u.into_iter()
        .zip(space.parameters())
        .map(|(ui, p)| match p.cardinality() {
            None => ui,
            Some(k) => crate::space::snap_rank(ui, k) as f64 / (k - 1) as f64,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::{Prior, PriorSpec};
    use crate::space::{ParamValue, Parameter};
    use crate::surrogate::FnSurrogate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::cell::Cell;

    fn unit_square() -> SearchSpace {
        SearchSpace::new(vec![
            Parameter::continuous("a", 0.0, 1.0),
            Parameter::continuous("b", 0.0, 1.0),
        ])
        .unwrap()
    }

    #[test]
    fn constant_score_returns_start() {
        let space = unit_square();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let start = vec![0.3, 0.7];
        let (end, _) = local_search(
            &space,
            start.clone(),
            &|_| 1.0,
            &LocalSearchConfig::default(),
            &mut rng,
        );
        assert_eq!(end, start);
    }

    #[test]
    fn hill_climb_reaches_bowl_center() {
        let space = unit_square();
        let target = [0.62, 0.41];
        let score = |u: &[f64]| {
            -u.iter()
                .zip(&target)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
        };
        let mut hits = 0;
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let start = vec![0.62 - 0.3, 0.41];
            let (end, _) = local_search(&space, start, &score, &LocalSearchConfig::default(), &mut rng);
            let dist = score(&end).abs().sqrt();
            if dist < 0.05 {
                hits += 1;
            }
        }
        assert!(hits >= 3, "{hits}/5 seeds converged");
    }

    #[test]
    fn neighbors_respect_bounds() {
        let space = unit_square();
        let ok = Cell::new(true);
        let score = |u: &[f64]| {
            if u.iter().any(|v| !(0.0..=1.0).contains(v)) {
                ok.set(false);
            }
            u[0] // improving direction points outward from the boundary
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (end, _) = local_search(
            &space,
            vec![1.0, 0.5],
            &score,
            &LocalSearchConfig::default(),
            &mut rng,
        );
        assert!(ok.get(), "saw an out-of-bounds candidate");
        assert!(end[0] <= 1.0);
    }

    #[test]
    fn discrete_neighbors_move_by_rank() {
        let space = SearchSpace::new(vec![
            Parameter::ordinal("p", &[1.0, 2.0, 3.0, 4.0]),
            Parameter::categorical("c", &["x", "y", "z"]),
        ])
        .unwrap();
        // Favor the top rank of both coordinates.
        let score = |u: &[f64]| u[0] + u[1];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (end, _) = local_search(
            &space,
            vec![0.0, 0.0],
            &score,
            &LocalSearchConfig::default(),
            &mut rng,
        );
        assert_eq!(end, vec![1.0, 1.0]);
    }

    fn quadratic_ctx_parts(space: &SearchSpace) -> (Prior, TrialHistory) {
        let prior = Prior::uniform(space).with_scale(space).unwrap();
        let mut h = TrialHistory::new();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for x in space.uniform_sample(5, &mut rng) {
            h.push(space, x, 1.0, true).unwrap();
        }
        (prior, h)
    }

    #[test]
    fn propose_attains_pool_maximum() {
        let space = unit_square();
        let (prior, history) = quadratic_ctx_parts(&space);
        // Deterministic unimodal acquisition surface via the surrogate mean;
        // sigma is wide enough that the improvement probability never clamps.
        let surrogate = FnSurrogate(|u: &[f64]| {
            let d = (u[0] - 0.25).powi(2) + (u[1] - 0.75).powi(2);
            (d, 0.3)
        });
        let ctx =
            AcquisitionContext::new(&prior, &surrogate, &history, 3, 10.0, 0.05).unwrap();
        let cfg = ProposeConfig {
            interleave_prob: 0.0,
            ..ProposeConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);

        // Track the best pool score by replaying the same rng stream.
        let proposal = propose(&space, &ctx, &history, &cfg, &mut rng).unwrap();
        let got = ctx.ei_ratio_unit(&proposal.u).unwrap();
        let mut replay = ChaCha8Rng::seed_from_u64(3);
        let _ = replay.gen::<f64>(); // interleave coin
        let pool: Vec<UnitPoint> = (0..cfg.local.pool_uniform)
            .map(|_| space.uniform_sample_unit(&mut replay))
            .collect();
        let best_pool = ctx
            .ei_ratio_batch(&pool)
            .unwrap()
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(got >= best_pool, "proposal {got} < best pool {best_pool}");
        // The optimum of this surface is (0.25, 0.75).
        assert!((proposal.u[0] - 0.25).abs() < 0.05);
        assert!((proposal.u[1] - 0.75).abs() < 0.05);
    }

    #[test]
    fn forced_interleave_draws_uniform() {
        let space = unit_square();
        let (prior, history) = quadratic_ctx_parts(&space);
        let surrogate = FnSurrogate(|_: &[f64]| (0.0, 1.0));
        let ctx =
            AcquisitionContext::new(&prior, &surrogate, &history, 1, 10.0, 0.05).unwrap();
        let cfg = ProposeConfig {
            interleave_prob: 1.0,
            ..ProposeConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut mean = [0.0, 0.0];
        let n = 200;
        for _ in 0..n {
            let p = propose(&space, &ctx, &history, &cfg, &mut rng).unwrap();
            assert!(p.interleave);
            mean[0] += p.u[0];
            mean[1] += p.u[1];
        }
        for m in mean {
            assert!((m / n as f64 - 0.5).abs() < 0.08);
        }
    }

    #[test]
    fn quadratic_acquisition_is_located_precisely() {
        let space = SearchSpace::new(vec![Parameter::continuous("x", 0.0, 1.0)]).unwrap();
        let (prior, history) = quadratic_ctx_parts(&space);
        let surrogate = FnSurrogate(|u: &[f64]| ((u[0] - 0.37).powi(2), 0.3));
        let ctx =
            AcquisitionContext::new(&prior, &surrogate, &history, 5, 10.0, 0.05).unwrap();
        let cfg = ProposeConfig {
            interleave_prob: 0.0,
            ..ProposeConfig::default()
        };
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(10 + seed);
            let p = propose(&space, &ctx, &history, &cfg, &mut rng).unwrap();
            assert!(
                (p.u[0] - 0.37).abs() < 0.01,
                "seed {seed}: proposed {}",
                p.u[0]
            );
        }
    }

    #[test]
    fn propose_never_repeats_history() {
        // Two of three ordinal values already evaluated: only the third is
        // a legal proposal no matter what the acquisition prefers.
        let space = SearchSpace::new(vec![Parameter::ordinal("p", &[1.0, 2.0, 3.0])]).unwrap();
        let prior = Prior::from_specs(
            &[PriorSpec::Weights {
                probs: vec![0.9, 0.05, 0.05],
            }],
            &space,
        )
        .unwrap()
        .with_scale(&space)
        .unwrap();
        let mut history = TrialHistory::new();
        history
            .push(&space, vec![ParamValue::Float(1.0)], 0.1, true)
            .unwrap();
        history
            .push(&space, vec![ParamValue::Float(2.0)], 0.2, true)
            .unwrap();
        // Acquisition strongly prefers the already-evaluated best point.
        let surrogate = FnSurrogate(|u: &[f64]| (u[0], 1e-3));
        let ctx =
            AcquisitionContext::new(&prior, &surrogate, &history, 2, 10.0, 0.05).unwrap();
        let cfg = ProposeConfig {
            interleave_prob: 0.0,
            ..ProposeConfig::default()
        };
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = propose(&space, &ctx, &history, &cfg, &mut rng).unwrap();
            assert_eq!(p.x, vec![ParamValue::Float(3.0)], "seed {seed}");
        }
    }
}
