//! The optimization loop: an initial design sampled from the prior, then
//! iterated surrogate fitting, pseudo-posterior construction, acquisition
//! maximization and evaluation, with incumbent tracking and per-evaluation
//! trace rows.

use crate::acquisition::{ei_from_logs, AcquisitionContext};
use crate::error::{Error, Result};
use crate::optimizer::{propose, ProposeConfig};
use crate::priors::Prior;
use crate::space::{NativePoint, SearchSpace, UnitPoint};
use crate::surrogate::{
    fit_feasibility, fit_gp, fit_rf, FeasibilityFit, SurrogateFit, TrialHistory,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateKind {
    Gp,
    Rf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    /// BO iterations after the initial design.
    pub budget: usize,
    /// Initial-design evaluations sampled from the prior.
    pub doe: usize,
    pub beta: f64,
    pub gamma: f64,
    pub surrogate: SurrogateKind,
    pub constrained: bool,
    pub interleave_prob: f64,
    pub seed: u64,
}

impl RunConfig {
    /// Defaults: beta 10, gamma 0.05, GP surrogate, 10% interleaving,
    /// `doe = D + 1`.
    pub fn new(space: &SearchSpace, budget: usize, seed: u64) -> Self {
        RunConfig {
            budget,
            doe: space.dim() + 1,
            beta: 10.0,
            gamma: 0.05,
            surrogate: SurrogateKind::Gp,
            constrained: false,
            interleave_prob: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.doe < 1 {
            return Err(Error::InvalidConfig("doe must be >= 1".into()));
        }
        if self.beta <= 0.0 {
            return Err(Error::InvalidConfig("beta must be > 0".into()));
        }
        if !(0.0 < self.gamma && self.gamma < 1.0) {
            return Err(Error::InvalidConfig("gamma must be in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.interleave_prob) {
            return Err(Error::InvalidConfig(
                "interleave_prob must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Doe,
    Bo,
    Interleave,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Doe => "doe",
            Phase::Bo => "bo",
            Phase::Interleave => "interleave",
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Phase> {
        match s {
            "doe" => Ok(Phase::Doe),
            "bo" => Ok(Phase::Bo),
            "interleave" => Ok(Phase::Interleave),
            other => Err(Error::InvalidConfig(format!("unknown phase `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TraceRow {
    /// 1-based evaluation index across all phases.
    pub iteration: usize,
    pub phase: Phase,
    pub x: NativePoint,
    pub y: f64,
    pub feasible: bool,
    /// Best feasible y so far; NaN until the first feasible evaluation.
    pub incumbent: f64,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug, Default)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    /// Populated when the run stopped early (objective failure).
    pub abort: Option<String>,
}

impl RunTrace {
    pub fn incumbents(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.incumbent).collect()
    }

    pub fn final_incumbent(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.incumbent)
    }
}

/// Objective outcome for one evaluation.
#[derive(Clone, Copy, Debug)]
pub struct Evaluation {
    pub y: f64,
    pub feasible: bool,
}

impl Evaluation {
    pub fn feasible(y: f64) -> Self {
        Evaluation { y, feasible: true }
    }

    pub fn infeasible() -> Self {
        Evaluation {
            y: f64::NAN,
            feasible: false,
        }
    }
}

pub type Objective<'a> = dyn Fn(&NativePoint) -> Result<Evaluation> + Sync + 'a;

/// One row of a diagnostics grid.
#[derive(Clone, Debug)]
pub struct DiagRow {
    pub x: NativePoint,
    pub u: UnitPoint,
    pub prior: f64,
    pub model: f64,
    pub log_g: f64,
    pub log_b: f64,
    pub ei: f64,
}

/// Evaluates prior, model, log pseudo-posteriors and EI on a uniform grid of
/// `grid_n` points per dimension; 1D and 2D spaces only.
pub fn diagnostics_grid(
    space: &SearchSpace,
    ctx: &AcquisitionContext,
    grid_n: usize,
) -> Result<Vec<DiagRow>> {
    let d = space.dim();
    if d > 2 {
        return Err(Error::UnsupportedDimension(d));
    }
    let axis: Vec<f64> = (0..grid_n)
        .map(|i| i as f64 / (grid_n - 1).max(1) as f64)
        .collect();
    let mut grid: Vec<UnitPoint> = Vec::new();
    if d == 1 {
        grid.extend(axis.iter().map(|&a| vec![a]));
    } else {
        for &a in &axis {
            for &b in &axis {
                grid.push(vec![a, b]);
            }
        }
    }
    grid.into_iter()
        .map(|u| {
            let prior = ctx.prior.density_good_unit(&u)?;
            let model = ctx.model_good_unit(&u);
            let (log_g, log_b) = ctx.log_pseudo_posteriors_unit(&u)?;
            Ok(DiagRow {
                x: space.denormalize(&u),
                u,
                prior,
                model,
                log_g,
                log_b,
                ei: ei_from_logs(log_g, log_b, ctx.gamma),
            })
        })
        .collect()
}

/// Runs the full loop and returns the trace.
pub fn run(
    space: &SearchSpace,
    prior: Prior,
    objective: &Objective,
    config: &RunConfig,
) -> Result<RunTrace> {
    run_with_diagnostics(space, prior, objective, config, &[], 0).map(|(trace, _)| trace)
}

/// Runs the loop, additionally capturing diagnostics grids after the listed
/// BO iteration counts (0 = right after the initial design).
pub fn run_with_diagnostics(
    space: &SearchSpace,
    mut prior: Prior,
    objective: &Objective,
    config: &RunConfig,
    snapshot_iters: &[usize],
    grid_n: usize,
) -> Result<(RunTrace, Vec<(usize, Vec<DiagRow>)>)> {
    config.validate()?;
    prior.init_scale(space)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = TrialHistory::new();
    let mut trace = RunTrace::default();
    let mut snapshots = Vec::new();
    let started = Instant::now();
    let mut last_mark = 0.0f64;

    // Initial design from the prior, resampling exact duplicates.
    for _ in 0..config.doe {
        let x = sample_fresh(space, &prior, &history, &mut rng);
        match objective(&x) {
            Ok(eval) => record(
                space,
                &mut history,
                &mut trace,
                x,
                eval,
                Phase::Doe,
                started,
                &mut last_mark,
            )?,
            Err(e) => {
                trace.abort = Some(e.to_string());
                return Ok((trace, snapshots));
            }
        }
    }

    let effective_kind = if space.is_fully_continuous() {
        config.surrogate
    } else {
        SurrogateKind::Rf
    };
    let propose_cfg = ProposeConfig {
        interleave_prob: config.interleave_prob,
        ..ProposeConfig::default()
    };

    if snapshot_iters.contains(&0) {
        if let Some(parts) = fit_parts(space, &history, effective_kind, config, &mut rng)? {
            let ctx = parts.context(&prior, &history, config, 0)?;
            snapshots.push((0, diagnostics_grid(space, &ctx, grid_n)?));
        }
    }

    for t in 1..=config.budget {
        let proposal = match fit_parts(space, &history, effective_kind, config, &mut rng)? {
            Some(parts) => {
                let ctx = parts.context(&prior, &history, config, t)?;
                propose(space, &ctx, &history, &propose_cfg, &mut rng)?
            }
            None => {
                // Not enough feasible data to fit anything yet: keep drawing
                // from the prior so the budget accounting stays exact.
                let x = sample_fresh(space, &prior, &history, &mut rng);
                let u = space.normalize(&x)?;
                crate::optimizer::Proposal {
                    x,
                    u,
                    interleave: false,
                }
            }
        };
        let phase = if proposal.interleave {
            Phase::Interleave
        } else {
            Phase::Bo
        };
        match objective(&proposal.x) {
            Ok(eval) => record(
                space,
                &mut history,
                &mut trace,
                proposal.x,
                eval,
                phase,
                started,
                &mut last_mark,
            )?,
            Err(e) => {
                trace.abort = Some(e.to_string());
                return Ok((trace, snapshots));
            }
        }
        if snapshot_iters.contains(&t) {
            if let Some(parts) = fit_parts(space, &history, effective_kind, config, &mut rng)? {
                let ctx = parts.context(&prior, &history, config, t)?;
                snapshots.push((t, diagnostics_grid(space, &ctx, grid_n)?));
            }
        }
    }

    Ok((trace, snapshots))
}

/// Baseline that only ever samples the prior; every row is design-phase.
pub fn run_prior_sampling(
    space: &SearchSpace,
    mut prior: Prior,
    objective: &Objective,
    n_evals: usize,
    seed: u64,
) -> Result<RunTrace> {
    prior.init_scale(space)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut history = TrialHistory::new();
    let mut trace = RunTrace::default();
    let started = Instant::now();
    let mut last_mark = 0.0f64;
    for _ in 0..n_evals {
        let x = sample_fresh(space, &prior, &history, &mut rng);
        match objective(&x) {
            Ok(eval) => record(
                space,
                &mut history,
                &mut trace,
                x,
                eval,
                Phase::Doe,
                started,
                &mut last_mark,
            )?,
            Err(e) => {
                trace.abort = Some(e.to_string());
                return Ok(trace);
            }
        }
    }
    Ok(trace)
}

#[allow(clippy::too_many_arguments)]
fn record(
    space: &SearchSpace,
    history: &mut TrialHistory,
    trace: &mut RunTrace,
    x: NativePoint,
    eval: Evaluation,
    phase: Phase,
    started: Instant,
    last_mark: &mut f64,
) -> Result<()> {
    // A "feasible" result without a finite objective is unusable.
    let feasible = eval.feasible && eval.y.is_finite();
    let y = if feasible { eval.y } else { f64::NAN };
    history.push(space, x.clone(), y, feasible)?;
    let now = Instant::now().duration_since(started).as_secs_f64();
    trace.rows.push(TraceRow {
        iteration: trace.rows.len() + 1,
        phase,
        x,
        y,
        feasible,
        incumbent: history.incumbent().map_or(f64::NAN, |t| t.y),
        elapsed_s: now - *last_mark,
    });
    *last_mark = now;
    Ok(())
}

fn sample_fresh<R: Rng + ?Sized>(
    space: &SearchSpace,
    prior: &Prior,
    history: &TrialHistory,
    rng: &mut R,
) -> NativePoint {
    for _ in 0..100 {
        let u = prior.sample_unit(1, rng).pop().expect("one sample");
        let x = space.denormalize(&u);
        if !history.trials().iter().any(|t| t.x == x) {
            return x;
        }
    }
    let u = prior.sample_unit(1, rng).pop().expect("one sample");
    space.denormalize(&u)
}

struct FitParts {
    surrogate: SurrogateFit,
    feasibility: Option<FeasibilityFit>,
}

impl FitParts {
    fn context<'a>(
        &'a self,
        prior: &'a Prior,
        history: &TrialHistory,
        config: &RunConfig,
        t: usize,
    ) -> Result<AcquisitionContext<'a>> {
        let mut ctx = AcquisitionContext::new(
            prior,
            &self.surrogate,
            history,
            t,
            config.beta,
            config.gamma,
        )?;
        if let Some(f) = &self.feasibility {
            ctx = ctx.with_feasibility(f);
        }
        Ok(ctx)
    }
}

/// Fits the surrogate (and the feasibility classifier when constrained).
/// Returns None while there is not enough feasible data for any model.
fn fit_parts(
    space: &SearchSpace,
    history: &TrialHistory,
    kind: SurrogateKind,
    config: &RunConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Option<FitParts>> {
    if history.feasible().count() < 2 {
        return Ok(None);
    }
    let surrogate = match kind {
        SurrogateKind::Gp => SurrogateFit::Gp(fit_gp(history, space, rng)?),
        SurrogateKind::Rf => SurrogateFit::Rf(fit_rf(history, space, rng)?),
    };
    let feasibility = if config.constrained {
        Some(fit_feasibility(history, space, rng))
    } else {
        None
    };
    Ok(Some(FitParts {
        surrogate,
        feasibility,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::PriorSpec;
    use crate::space::{ParamValue, Parameter};

    fn line() -> SearchSpace {
        SearchSpace::new(vec![Parameter::continuous("x", 0.0, 1.0)]).unwrap()
    }

    fn quadratic(x: &NativePoint) -> Result<Evaluation> {
        let v = x[0].as_f64().unwrap();
        Ok(Evaluation::feasible((v - 0.3).powi(2)))
    }

    #[test]
    fn zero_budget_runs_only_the_design() {
        let space = line();
        let cfg = RunConfig {
            budget: 0,
            ..RunConfig::new(&space, 0, 7)
        };
        let trace = run(&space, Prior::uniform(&space), &quadratic, &cfg).unwrap();
        assert_eq!(trace.rows.len(), 2); // D + 1
        assert!(trace.rows.iter().all(|r| r.phase == Phase::Doe));
    }

    #[test]
    fn budget_accounting_is_exact() {
        let space = line();
        let cfg = RunConfig::new(&space, 6, 3);
        let trace = run(&space, Prior::uniform(&space), &quadratic, &cfg).unwrap();
        assert_eq!(trace.rows.len(), cfg.doe + cfg.budget);
        for (i, row) in trace.rows.iter().enumerate() {
            assert_eq!(row.iteration, i + 1);
        }
    }

    #[test]
    fn incumbent_is_monotone() {
        let space = line();
        let cfg = RunConfig::new(&space, 8, 11);
        let prior = Prior::from_specs(
            &[PriorSpec::Gaussian {
                mu: 0.05,
                sigma: 0.05,
            }],
            &space,
        )
        .unwrap();
        let trace = run(&space, prior, &quadratic, &cfg).unwrap();
        let inc = trace.incumbents();
        for w in inc.windows(2) {
            assert!(w[1] <= w[0] || w[0].is_nan());
        }
    }

    #[test]
    fn identical_seeds_reproduce_the_trace() {
        let space = line();
        let cfg = RunConfig::new(&space, 5, 42);
        let t1 = run(&space, Prior::uniform(&space), &quadratic, &cfg).unwrap();
        let t2 = run(&space, Prior::uniform(&space), &quadratic, &cfg).unwrap();
        let xs =
            |t: &RunTrace| -> Vec<NativePoint> { t.rows.iter().map(|r| r.x.clone()).collect() };
        assert_eq!(xs(&t1), xs(&t2));
        let phases1: Vec<_> = t1.rows.iter().map(|r| r.phase).collect();
        let phases2: Vec<_> = t2.rows.iter().map(|r| r.phase).collect();
        assert_eq!(phases1, phases2);
    }

    #[test]
    fn objective_error_aborts_with_partial_trace() {
        let space = line();
        let cfg = RunConfig::new(&space, 5, 1);
        let always_fail =
            |_: &NativePoint| -> Result<Evaluation> { Err(Error::ObjectiveProcess("boom".into())) };
        let trace = run(&space, Prior::uniform(&space), &always_fail, &cfg).unwrap();
        assert!(trace.abort.is_some());
        assert!(trace.rows.is_empty());
    }

    #[test]
    fn infeasible_evaluations_are_recorded_as_nan() {
        let space = line();
        let cfg = RunConfig {
            constrained: true,
            ..RunConfig::new(&space, 4, 5)
        };
        let half = |x: &NativePoint| -> Result<Evaluation> {
            let v = x[0].as_f64().unwrap();
            if v < 0.5 {
                Ok(Evaluation::feasible(v))
            } else {
                Ok(Evaluation::infeasible())
            }
        };
        let trace = run(&space, Prior::uniform(&space), &half, &cfg).unwrap();
        assert_eq!(trace.rows.len(), cfg.doe + cfg.budget);
        for row in &trace.rows {
            if !row.feasible {
                assert!(row.y.is_nan());
            }
            if !row.incumbent.is_nan() {
                assert!(row.incumbent < 0.5);
            }
        }
    }

    #[test]
    fn diagnostics_at_t0_reduce_to_the_prior() {
        let space = line();
        let cfg = RunConfig::new(&space, 2, 9);
        let prior = Prior::from_specs(&[PriorSpec::Beta { a: 3.0, b: 3.0 }], &space).unwrap();
        let (_, snaps) = run_with_diagnostics(&space, prior, &quadratic, &cfg, &[0, 2], 33).unwrap();
        assert_eq!(snaps.len(), 2);
        let (t0, rows0) = &snaps[0];
        assert_eq!(*t0, 0);
        assert_eq!(rows0.len(), 33);
        for row in rows0 {
            assert_eq!(row.log_g, row.prior.ln());
            assert!(row.model > 0.0 && row.model < 1.0);
        }
    }

    #[test]
    fn diagnostics_reject_high_dimensions() {
        let space = SearchSpace::new(vec![
            Parameter::continuous("a", 0.0, 1.0),
            Parameter::continuous("b", 0.0, 1.0),
            Parameter::continuous("c", 0.0, 1.0),
        ])
        .unwrap();
        let prior = Prior::uniform(&space).with_scale(&space).unwrap();
        let surrogate = crate::surrogate::FnSurrogate(|_: &[f64]| (0.0, 1.0));
        let mut history = TrialHistory::new();
        history
            .push(
                &space,
                vec![
                    ParamValue::Float(0.1),
                    ParamValue::Float(0.2),
                    ParamValue::Float(0.3),
                ],
                1.0,
                true,
            )
            .unwrap();
        let ctx = AcquisitionContext::new(&prior, &surrogate, &history, 0, 10.0, 0.05).unwrap();
        assert!(matches!(
            diagnostics_grid(&space, &ctx, 11),
            Err(Error::UnsupportedDimension(3))
        ));
    }

    #[test]
    fn prior_sampling_baseline_only_samples() {
        let space = line();
        let prior = Prior::from_specs(
            &[PriorSpec::Gaussian {
                mu: 0.3,
                sigma: 0.02,
            }],
            &space,
        )
        .unwrap();
        let trace = run_prior_sampling(&space, prior, &quadratic, 30, 4).unwrap();
        assert_eq!(trace.rows.len(), 30);
        assert!(trace.rows.iter().all(|r| r.phase == Phase::Doe));
        let mean: f64 = trace
            .rows
            .iter()
            .map(|r| r.x[0].as_f64().unwrap())
            .sum::<f64>()
            / 30.0;
        assert!((mean - 0.3).abs() < 0.05, "{mean}");
    }
}
