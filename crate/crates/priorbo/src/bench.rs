//! Closed-form benchmark objectives with known optima, simple-regret helpers,
//! and the named experiment recipes that expand into run configurations.

use crate::engine::{Evaluation, RunConfig, RunTrace, SurrogateKind};
use crate::error::{Error, Result};
use crate::priors::{
    build_kde_prior, build_misleading_prior, build_synthetic_prior, Prior, PriorSpec,
};
use crate::space::{NativePoint, ParamValue, Parameter, SearchSpace};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Smallest regret admitted into a log plot.
pub const REGRET_FLOOR: f64 = 1e-12;

/// Branin in its standard form; three tied global minima.
pub fn branin(x1: f64, x2: f64) -> Result<f64> {
    if !(-5.0..=10.0).contains(&x1) || !(0.0..=15.0).contains(&x2) {
        return Err(Error::OutOfBounds {
            param: "branin".into(),
            value: format!("({x1}, {x2})"),
        });
    }
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    Ok((x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0)
}

/// Branin restricted to its second coordinate fixed at the optimum.
pub fn branin1d(x1: f64) -> Result<f64> {
    branin(x1, 2.275)
}

/// Branin with the feasibility rule `x2 <= 10`, which cuts off exactly one of
/// the three optima.
pub fn constrained_branin(x1: f64, x2: f64) -> Result<(f64, bool)> {
    Ok((branin(x1, x2)?, x2 <= 10.0))
}

/// Six-hump camel on [-3,3] x [-2,2]; two tied global minima.
pub fn six_hump_camel(x1: f64, x2: f64) -> Result<f64> {
    if !(-3.0..=3.0).contains(&x1) || !(-2.0..=2.0).contains(&x2) {
        return Err(Error::OutOfBounds {
            param: "camel".into(),
            value: format!("({x1}, {x2})"),
        });
    }
    Ok((4.0 - 2.1 * x1 * x1 + x1.powi(4) / 3.0) * x1 * x1
        + x1 * x2
        + (-4.0 + 4.0 * x2 * x2) * x2 * x2)
}

const BRANIN_OPT: f64 = 0.397887_357_729_738_1;
const CAMEL_OPT: f64 = -1.031628453489877;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BenchKind {
    Branin,
    Branin1d,
    ConstrainedBranin,
    Camel,
}

/// A named objective: search space, evaluator, known optimum.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub name: String,
    pub space: SearchSpace,
    pub optima: Vec<NativePoint>,
    pub optimum_value: f64,
    pub constrained: bool,
    kind: BenchKind,
}

fn fpt(v: f64) -> ParamValue {
    ParamValue::Float(v)
}

impl Benchmark {
    pub fn by_name(name: &str) -> Result<Benchmark> {
        match name {
            "branin" => Ok(Benchmark {
                name: name.into(),
                space: SearchSpace::new(vec![
                    Parameter::continuous("x1", -5.0, 10.0),
                    Parameter::continuous("x2", 0.0, 15.0),
                ])?,
                optima: vec![
                    vec![fpt(PI), fpt(2.275)],
                    vec![fpt(-PI), fpt(12.275)],
                    vec![fpt(9.42478), fpt(2.475)],
                ],
                optimum_value: BRANIN_OPT,
                constrained: false,
                kind: BenchKind::Branin,
            }),
            "branin1d" => Ok(Benchmark {
                name: name.into(),
                space: SearchSpace::new(vec![Parameter::continuous("x1", -5.0, 10.0)])?,
                optima: vec![vec![fpt(PI)]],
                optimum_value: BRANIN_OPT,
                constrained: false,
                kind: BenchKind::Branin1d,
            }),
            "constrained-branin" => Ok(Benchmark {
                name: name.into(),
                space: SearchSpace::new(vec![
                    Parameter::continuous("x1", -5.0, 10.0),
                    Parameter::continuous("x2", 0.0, 15.0),
                ])?,
                optima: vec![
                    vec![fpt(PI), fpt(2.275)],
                    vec![fpt(9.42478), fpt(2.475)],
                ],
                optimum_value: BRANIN_OPT,
                constrained: true,
                kind: BenchKind::ConstrainedBranin,
            }),
            "camel" => Ok(Benchmark {
                name: name.into(),
                space: SearchSpace::new(vec![
                    Parameter::continuous("x1", -3.0, 3.0),
                    Parameter::continuous("x2", -2.0, 2.0),
                ])?,
                optima: vec![
                    vec![fpt(0.0898), fpt(-0.7126)],
                    vec![fpt(-0.0898), fpt(0.7126)],
                ],
                optimum_value: CAMEL_OPT,
                constrained: false,
                kind: BenchKind::Camel,
            }),
            other => Err(Error::UnknownBenchmark(other.into())),
        }
    }

    pub fn names() -> &'static [&'static str] {
        &["branin", "branin1d", "constrained-branin", "camel"]
    }

    pub fn eval(&self, x: &NativePoint) -> Result<Evaluation> {
        let f = |i: usize| {
            x[i].as_f64().ok_or_else(|| Error::OutOfBounds {
                param: self.name.clone(),
                value: x[i].to_string(),
            })
        };
        match self.kind {
            BenchKind::Branin => Ok(Evaluation::feasible(branin(f(0)?, f(1)?)?)),
            BenchKind::Branin1d => Ok(Evaluation::feasible(branin1d(f(0)?)?)),
            BenchKind::ConstrainedBranin => {
                let (y, feasible) = constrained_branin(f(0)?, f(1)?)?;
                Ok(Evaluation {
                    y: if feasible { y } else { f64::NAN },
                    feasible,
                })
            }
            BenchKind::Camel => Ok(Evaluation::feasible(six_hump_camel(f(0)?, f(1)?)?)),
        }
    }

    /// Raw objective value ignoring feasibility, for prior constructions.
    pub fn raw_value(&self, x: &NativePoint) -> f64 {
        let f = |i: usize| x[i].as_f64().unwrap();
        match self.kind {
            BenchKind::Branin | BenchKind::ConstrainedBranin => branin(f(0), f(1)).unwrap(),
            BenchKind::Branin1d => branin1d(f(0)).unwrap(),
            BenchKind::Camel => six_hump_camel(f(0), f(1)).unwrap(),
        }
    }
}

/// Per-evaluation simple regret of the incumbent; NaN while no feasible
/// incumbent exists yet.
pub fn regret(trace: &RunTrace, optimum_value: f64) -> Vec<f64> {
    trace
        .rows
        .iter()
        .map(|r| {
            if r.incumbent.is_nan() {
                f64::NAN
            } else {
                (r.incumbent - optimum_value).max(0.0)
            }
        })
        .collect()
}

/// Base-10 log regret with the zero guard applied.
pub fn log_regret(r: f64) -> f64 {
    r.max(REGRET_FLOOR).log10()
}

// ---------------------------------------------------------------------------
// Recipes
// ---------------------------------------------------------------------------

/// How an arm builds its prior at run time (fresh per seed where random).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum PriorRecipe {
    Uniform,
    /// Gaussian centered near the first known optimum; normalized-units width.
    Synthetic { sigma: f64 },
    /// Gaussian centered on the worst of `pool_per_dim * D` uniform samples.
    Misleading { pool_per_dim: usize, sigma: f64 },
    /// KDE over the best `10 * D` of `pool_per_dim * D` uniform samples.
    Kde {
        pool_per_dim: usize,
        multivariate: bool,
    },
    /// Explicit per-dimension specs.
    Specs(Vec<PriorSpec>),
}

impl PriorRecipe {
    pub fn build<R: Rng + ?Sized>(&self, bench: &Benchmark, rng: &mut R) -> Result<Prior> {
        let space = &bench.space;
        match self {
            PriorRecipe::Uniform => Ok(Prior::uniform(space)),
            PriorRecipe::Synthetic { sigma } => {
                build_synthetic_prior(space, &bench.optima[0], *sigma, rng)
            }
            PriorRecipe::Misleading {
                pool_per_dim,
                sigma,
            } => {
                let pool = pool_per_dim * space.dim();
                let (prior, _) =
                    build_misleading_prior(space, |x| bench.raw_value(x), pool, *sigma, rng)?;
                Ok(prior)
            }
            PriorRecipe::Kde {
                pool_per_dim,
                multivariate,
            } => {
                let pool = pool_per_dim * space.dim();
                let top_k = 10 * space.dim();
                build_kde_prior(
                    space,
                    |x| bench.raw_value(x),
                    pool,
                    top_k,
                    *multivariate,
                    rng,
                )
            }
            PriorRecipe::Specs(specs) => Prior::from_specs(specs, space),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    Bopro,
    PriorSampling,
}

/// One experimental arm: a benchmark, a prior construction, and run settings.
#[derive(Clone, Debug)]
pub struct RecipeArm {
    pub label: String,
    pub benchmark: String,
    pub prior: PriorRecipe,
    pub mode: RunMode,
    /// Total evaluations including the initial design.
    pub total_evals: usize,
    pub beta: f64,
    pub gamma: f64,
    pub constrained: bool,
    pub surrogate: SurrogateKind,
    /// BO iterations at which to dump diagnostics grids (1D/2D only).
    pub diag_iters: Vec<usize>,
}

impl RecipeArm {
    fn new(label: &str, benchmark: &str, prior: PriorRecipe, total_evals: usize) -> Self {
        RecipeArm {
            label: label.into(),
            benchmark: benchmark.into(),
            prior,
            mode: RunMode::Bopro,
            total_evals,
            beta: 10.0,
            gamma: 0.05,
            constrained: false,
            surrogate: SurrogateKind::Gp,
            diag_iters: Vec::new(),
        }
    }

    /// Engine config for one seeded run of this arm.
    pub fn run_config(&self, space: &SearchSpace, seed: u64) -> RunConfig {
        let doe = space.dim() + 1;
        RunConfig {
            budget: self.total_evals.saturating_sub(doe),
            doe,
            beta: self.beta,
            gamma: self.gamma,
            surrogate: self.surrogate,
            constrained: self.constrained,
            interleave_prob: 0.1,
            seed,
        }
    }
}

/// A deterministic expansion of a named experiment.
#[derive(Clone, Debug)]
pub struct Recipe {
    pub name: String,
    pub arms: Vec<RecipeArm>,
    pub n_seeds: usize,
    pub master_seed: u64,
}

impl Recipe {
    /// Counter-derived seed for one (arm, seed) cell; adding seeds never
    /// perturbs earlier ones.
    pub fn run_seed(&self, arm_idx: usize, seed_idx: usize) -> u64 {
        splitmix64(
            splitmix64(self.master_seed ^ (arm_idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
                ^ (seed_idx as u64 + 1),
        )
    }

    /// Seed for the prior construction of one seed cell, shared by every arm
    /// so sweep comparisons are paired.
    pub fn prior_seed(&self, seed_idx: usize) -> u64 {
        splitmix64(self.master_seed ^ 0xA5A5_5A5A_0F0F_F0F0 ^ (seed_idx as u64 + 1))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn recipe_names() -> &'static [&'static str] {
    &[
        "forgetting_1d",
        "strong_weak_prior",
        "misleading",
        "kde_sweep",
        "gamma_sweep",
        "beta_sweep",
        "constrained_demo",
    ]
}

/// Expands a named recipe; `total_evals_override` rescales every arm's budget.
pub fn recipe(
    name: &str,
    master_seed: u64,
    total_evals_override: Option<usize>,
) -> Result<Recipe> {
    let strong = PriorRecipe::Synthetic { sigma: 0.01 };
    let mut arms = match name {
        "forgetting_1d" => {
            let mut arms = vec![
                RecipeArm::new(
                    "beta33",
                    "branin1d",
                    PriorRecipe::Specs(vec![PriorSpec::Beta { a: 3.0, b: 3.0 }]),
                    22,
                ),
                RecipeArm::new(
                    "exponential",
                    "branin1d",
                    PriorRecipe::Specs(vec![PriorSpec::Exponential { rate: 10.0 }]),
                    22,
                ),
                RecipeArm::new(
                    "decay",
                    "branin1d",
                    PriorRecipe::Specs(vec![PriorSpec::Decay { rate: 10.0 }]),
                    22,
                ),
            ];
            for arm in &mut arms {
                arm.diag_iters = vec![0, 5, 10, 20];
            }
            arms
        }
        "strong_weak_prior" => vec![
            RecipeArm::new("strong", "branin", strong.clone(), 100),
            RecipeArm::new("weak", "branin", PriorRecipe::Synthetic { sigma: 0.1 }, 100),
            RecipeArm::new("uniform", "branin", PriorRecipe::Uniform, 100),
            {
                let mut arm = RecipeArm::new("prior-sampling", "branin", strong.clone(), 100);
                arm.mode = RunMode::PriorSampling;
                arm
            },
        ],
        "misleading" => vec![
            RecipeArm::new(
                "misleading",
                "branin",
                PriorRecipe::Misleading {
                    pool_per_dim: 100_000,
                    sigma: 0.01,
                },
                100,
            ),
            RecipeArm::new("uniform", "branin", PriorRecipe::Uniform, 100),
        ],
        "kde_sweep" => vec![
            RecipeArm::new(
                "kde-strong-univariate",
                "branin",
                PriorRecipe::Kde {
                    pool_per_dim: 100_000,
                    multivariate: false,
                },
                50,
            ),
            RecipeArm::new(
                "kde-strong-multivariate",
                "branin",
                PriorRecipe::Kde {
                    pool_per_dim: 100_000,
                    multivariate: true,
                },
                50,
            ),
            RecipeArm::new(
                "kde-weak-univariate",
                "branin",
                PriorRecipe::Kde {
                    pool_per_dim: 1_000,
                    multivariate: false,
                },
                50,
            ),
            RecipeArm::new(
                "kde-weak-multivariate",
                "branin",
                PriorRecipe::Kde {
                    pool_per_dim: 1_000,
                    multivariate: true,
                },
                50,
            ),
        ],
        "gamma_sweep" => [0.01, 0.05, 0.1, 0.25, 0.5]
            .iter()
            .map(|&g| {
                // Budget of 10 D evaluations including the D + 1 design.
                let mut arm =
                    RecipeArm::new(&format!("gamma-{g}"), "branin", strong.clone(), 20);
                arm.gamma = g;
                arm
            })
            .collect(),
        "beta_sweep" => [0.01, 0.1, 1.0, 10.0, 100.0, 1000.0]
            .iter()
            .map(|&b| {
                let mut arm =
                    RecipeArm::new(&format!("beta-{b}"), "branin", strong.clone(), 20);
                arm.beta = b;
                arm
            })
            .collect(),
        "constrained_demo" => {
            let mut arm = RecipeArm::new(
                "constrained",
                "constrained-branin",
                PriorRecipe::Uniform,
                50,
            );
            arm.constrained = true;
            vec![arm]
        }
        other => return Err(Error::UnknownRecipe(other.into())),
    };
    if let Some(total) = total_evals_override {
        for arm in &mut arms {
            arm.total_evals = total;
        }
    }
    Ok(Recipe {
        name: name.into(),
        arms,
        n_seeds: 5,
        master_seed,
    })
}
