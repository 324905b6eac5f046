//! Experiment files, trace/diagnostics/summary CSV output, recipe execution,
//! and the external-objective bridge behind the `priorbo` command.

pub mod external;

use crate::bench::{log_regret, recipe, Benchmark, PriorRecipe, Recipe, RunMode};
use crate::engine::{
    run_prior_sampling, run_with_diagnostics, DiagRow, Evaluation, RunConfig, RunTrace,
    SurrogateKind,
};
use crate::error::{Error, Result};
use crate::priors::{Prior, PriorSpec};
use crate::space::{NativePoint, SearchSpace, SpaceSchema};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct ExternalObjective {
    pub command: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
}

fn default_timeout() -> f64 {
    60.0
}

/// One experiment description; exactly one of `benchmark`, `external`, or
/// `recipe` must be present.
#[derive(Serialize, Deserialize, Clone, Debug, Default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external: Option<ExternalObjective>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipe: Option<String>,
    /// Required for external objectives; per-parameter priors may be embedded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<SpaceSchema>,
    /// Per-dimension priors for benchmark runs (same order as the space).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priors: Option<Vec<PriorSpec>>,
    /// Shorthand: "uniform", "strong", "weak", or "misleading".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_preset: Option<String>,
    /// BO iterations after the design phase.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    /// Alternative budget form counting the design phase too.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_evals: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doe: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surrogate: Option<SurrogateKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constrained: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interleave_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentFile {
    pub fn load(path: &Path) -> Result<ExperimentFile> {
        let text = fs::read_to_string(path)?;
        let ef: ExperimentFile = serde_json::from_str(&text)?;
        ef.validate()?;
        Ok(ef)
    }

    pub fn validate(&self) -> Result<()> {
        let targets =
            [self.benchmark.is_some(), self.external.is_some(), self.recipe.is_some()]
                .iter()
                .filter(|b| **b)
                .count();
        if targets != 1 {
            return Err(Error::InvalidConfig(
                "exactly one of `benchmark`, `external`, `recipe` must be set".into(),
            ));
        }
        if self.external.is_some() && self.space.is_none() {
            return Err(Error::InvalidConfig(
                "external objectives need a `space`".into(),
            ));
        }
        if self.budget.is_some() && self.total_evals.is_some() {
            return Err(Error::InvalidConfig(
                "set `budget` or `total_evals`, not both".into(),
            ));
        }
        if self.priors.is_some() && self.prior_preset.is_some() {
            return Err(Error::InvalidConfig(
                "set `priors` or `prior_preset`, not both".into(),
            ));
        }
        Ok(())
    }

    fn run_config(&self, space: &SearchSpace, seed_override: Option<u64>) -> Result<RunConfig> {
        let mut cfg = RunConfig::new(space, self.budget.unwrap_or(20), 0);
        if let Some(doe) = self.doe {
            cfg.doe = doe;
        }
        if let Some(total) = self.total_evals {
            cfg.budget = total.saturating_sub(cfg.doe);
        }
        if let Some(beta) = self.beta {
            cfg.beta = beta;
        }
        if let Some(gamma) = self.gamma {
            cfg.gamma = gamma;
        }
        if let Some(surrogate) = self.surrogate {
            cfg.surrogate = surrogate;
        }
        if let Some(constrained) = self.constrained {
            cfg.constrained = constrained;
        }
        if let Some(p) = self.interleave_prob {
            cfg.interleave_prob = p;
        }
        cfg.seed = seed_override.or(self.seed).unwrap_or(0);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads a univariate KDE centers file (one normalized value per line) into
/// the spec, relative to `base`.
pub fn resolve_prior_files(specs: &mut [PriorSpec], base: &Path) -> Result<()> {
    for spec in specs {
        if let PriorSpec::Kde {
            centers,
            centers_file,
            ..
        } = spec
        {
            if let Some(file) = centers_file.take() {
                let path = base.join(&file);
                let text = fs::read_to_string(&path)?;
                *centers = text
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(|l| {
                        l.trim().parse::<f64>().map_err(|e| {
                            Error::InvalidPrior(format!("{}: `{l}`: {e}", path.display()))
                        })
                    })
                    .collect::<Result<Vec<f64>>>()?;
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// CSV + metadata files
// ---------------------------------------------------------------------------

/// Sidecar metadata written next to every trace so summaries can recover the
/// benchmark and its optimum.
#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct RunMeta {
    pub benchmark: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimum_value: Option<f64>,
    pub seed: u64,
    #[serde(default)]
    pub label: String,
}

pub fn write_trace(path: &Path, space: &SearchSpace, trace: &RunTrace) -> Result<()> {
    let mut f = fs::File::create(path)?;
    let names = space.names().join(",");
    writeln!(f, "iteration,phase,{names},y,feasible,incumbent,elapsed_s")?;
    for row in &trace.rows {
        let xs = row
            .x
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            row.iteration,
            row.phase.as_str(),
            xs,
            row.y,
            row.feasible,
            row.incumbent,
            row.elapsed_s
        )?;
    }
    Ok(())
}

pub fn write_meta(path: &Path, meta: &RunMeta) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

pub fn write_diag(path: &Path, space: &SearchSpace, rows: &[DiagRow]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    let names = space.names().join(",");
    writeln!(f, "{names},prior,model,log_g,log_b,ei")?;
    for row in rows {
        let xs = row
            .x
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        writeln!(
            f,
            "{},{},{},{},{},{}",
            xs, row.prior, row.model, row.log_g, row.log_b, row.ei
        )?;
    }
    Ok(())
}

/// Incumbent column of a written trace.
pub fn read_trace_incumbents(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidConfig(format!("{}: empty trace", path.display())))?;
    let n_cols = header.split(',').count();
    let mut out = Vec::new();
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_cols {
            return Err(Error::InvalidConfig(format!(
                "{}: ragged row `{line}`",
                path.display()
            )));
        }
        let inc = fields[n_cols - 2].parse::<f64>().map_err(|e| {
            Error::InvalidConfig(format!("{}: bad incumbent `{line}`: {e}", path.display()))
        })?;
        out.push(inc);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub iteration: usize,
    pub mean_log_regret: f64,
    pub std_log_regret: f64,
    pub n_seeds: usize,
}

/// Per-iteration mean and population std of floored log10 regret across runs.
pub fn summarize_regrets(regret_series: &[Vec<f64>]) -> Vec<SummaryRow> {
    let max_len = regret_series.iter().map(Vec::len).max().unwrap_or(0);
    (0..max_len)
        .map(|i| {
            let vals: Vec<f64> = regret_series
                .iter()
                .filter_map(|s| s.get(i).copied())
                .filter(|r| !r.is_nan())
                .map(log_regret)
                .collect();
            let n = vals.len();
            let mean = vals.iter().sum::<f64>() / n.max(1) as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.max(1) as f64;
            SummaryRow {
                iteration: i + 1,
                mean_log_regret: if n == 0 { f64::NAN } else { mean },
                std_log_regret: if n == 0 { f64::NAN } else { var.sqrt() },
                n_seeds: n,
            }
        })
        .collect()
}

fn collect_trace_paths(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_trace_paths(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "trace.csv") {
            out.push(path);
        }
    }
    out.sort();
    Ok(())
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn build_prior(
    ef: &ExperimentFile,
    bench: Option<&Benchmark>,
    space: &SearchSpace,
    seed: u64,
    base: &Path,
) -> Result<Prior> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x70f1_a2b3);
    if let Some(specs) = &ef.priors {
        let mut specs = specs.clone();
        resolve_prior_files(&mut specs, base)?;
        return Prior::from_specs(&specs, space);
    }
    if let Some(schema) = &ef.space {
        // Priors may be embedded per-parameter in the space schema.
        let mut specs = Vec::new();
        let mut any = false;
        for p in &schema.parameters {
            match &p.prior {
                Some(v) => {
                    any = true;
                    specs.push(serde_json::from_value::<PriorSpec>(v.clone())?);
                }
                None => specs.push(PriorSpec::Uniform),
            }
        }
        if any {
            resolve_prior_files(&mut specs, base)?;
            return Prior::from_specs(&specs, space);
        }
    }
    match ef.prior_preset.as_deref() {
        None | Some("uniform") => Ok(Prior::uniform(space)),
        Some(preset) => {
            let bench = bench.ok_or_else(|| {
                Error::InvalidConfig(format!("prior preset `{preset}` needs a benchmark"))
            })?;
            let recipe = match preset {
                "strong" => PriorRecipe::Synthetic { sigma: 0.01 },
                "weak" => PriorRecipe::Synthetic { sigma: 0.1 },
                "misleading" => PriorRecipe::Misleading {
                    pool_per_dim: 100_000,
                    sigma: 0.01,
                },
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown prior preset `{other}`"
                    )))
                }
            };
            recipe.build(bench, &mut rng)
        }
    }
}

struct Target {
    bench: Option<Benchmark>,
    space: SearchSpace,
    objective: Box<dyn Fn(&NativePoint) -> Result<Evaluation> + Sync>,
}

fn resolve_target(ef: &ExperimentFile) -> Result<Target> {
    if let Some(name) = &ef.benchmark {
        let bench = Benchmark::by_name(name)?;
        let space = bench.space.clone();
        let b = bench.clone();
        return Ok(Target {
            bench: Some(bench),
            space,
            objective: Box::new(move |x| b.eval(x)),
        });
    }
    let ext = ef.external.as_ref().expect("validated");
    let space = ef.space.as_ref().expect("validated").to_space()?;
    let command = ext.command.clone();
    let timeout = Duration::from_secs_f64(ext.timeout_s);
    let space_for_obj = space.clone();
    Ok(Target {
        bench: None,
        space,
        objective: Box::new(move |x| {
            external::evaluate_external(&command, timeout, &space_for_obj, x)
        }),
    })
}

fn out_dir(ef: &ExperimentFile, out_override: Option<&Path>) -> PathBuf {
    out_override
        .map(Path::to_path_buf)
        .or_else(|| ef.output.clone())
        .unwrap_or_else(|| PathBuf::from("priorbo-out"))
}

/// Executes a run config, writing `trace.csv` and `meta.json` (and diag grids
/// when requested). An aborted run still flushes its partial trace before the
/// error is reported.
pub fn cmd_run(
    config_path: &Path,
    seed_override: Option<u64>,
    out_override: Option<&Path>,
) -> Result<PathBuf> {
    let ef = ExperimentFile::load(config_path)?;
    let out = out_dir(&ef, out_override);
    if let Some(name) = &ef.recipe {
        let recipe = recipe(name, seed_override.or(ef.seed).unwrap_or(42), ef.total_evals)?;
        execute_recipe(&recipe, &out)?;
        return Ok(out);
    }

    let target = resolve_target(&ef)?;
    let cfg = ef.run_config(&target.space, seed_override)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let prior = build_prior(&ef, target.bench.as_ref(), &target.space, cfg.seed, base)?;

    fs::create_dir_all(&out)?;
    let trace = crate::engine::run(&target.space, prior, target.objective.as_ref(), &cfg)?;
    write_trace(&out.join("trace.csv"), &target.space, &trace)?;
    write_meta(
        &out.join("meta.json"),
        &RunMeta {
            benchmark: ef
                .benchmark
                .clone()
                .unwrap_or_else(|| "external".to_string()),
            optimum_value: target.bench.as_ref().map(|b| b.optimum_value),
            seed: cfg.seed,
            label: String::new(),
        },
    )?;
    if let Some(reason) = trace.abort {
        return Err(Error::ObjectiveProcess(reason));
    }
    Ok(out)
}

/// Runs the experiment while dumping diagnostics grids at the requested BO
/// iterations (`diag_<t>.csv`); 1D/2D spaces only.
pub fn cmd_diag(
    config_path: &Path,
    iters: &[usize],
    grid_n: usize,
    seed_override: Option<u64>,
    out_override: Option<&Path>,
) -> Result<PathBuf> {
    let ef = ExperimentFile::load(config_path)?;
    if ef.recipe.is_some() {
        return Err(Error::InvalidConfig(
            "diag needs a single benchmark or external objective, not a recipe".into(),
        ));
    }
    let target = resolve_target(&ef)?;
    if target.space.dim() > 2 {
        return Err(Error::UnsupportedDimension(target.space.dim()));
    }
    let mut cfg = ef.run_config(&target.space, seed_override)?;
    let max_iter = iters.iter().copied().max().unwrap_or(0);
    if cfg.budget < max_iter {
        cfg.budget = max_iter;
    }
    let base = config_path.parent().unwrap_or(Path::new("."));
    let prior = build_prior(&ef, target.bench.as_ref(), &target.space, cfg.seed, base)?;
    let out = out_dir(&ef, out_override);
    fs::create_dir_all(&out)?;
    let (trace, snaps) = run_with_diagnostics(
        &target.space,
        prior,
        target.objective.as_ref(),
        &cfg,
        iters,
        grid_n,
    )?;
    write_trace(&out.join("trace.csv"), &target.space, &trace)?;
    for (t, rows) in &snaps {
        write_diag(&out.join(format!("diag_{t}.csv")), &target.space, rows)?;
    }
    if let Some(reason) = trace.abort {
        return Err(Error::ObjectiveProcess(reason));
    }
    Ok(out)
}

/// Expands a named recipe and runs every (arm, seed) cell, in parallel up to
/// `PRIORBO_THREADS`.
pub fn cmd_sweep(
    recipe_name: &str,
    out: &Path,
    master_seed: u64,
    evals_override: Option<usize>,
) -> Result<PathBuf> {
    let recipe = recipe(recipe_name, master_seed, evals_override)?;
    execute_recipe(&recipe, out)?;
    Ok(out.to_path_buf())
}

fn execute_recipe(recipe: &Recipe, out: &Path) -> Result<()> {
    use rayon::prelude::*;
    let mut jobs = Vec::new();
    for arm_idx in 0..recipe.arms.len() {
        for seed_idx in 0..recipe.n_seeds {
            jobs.push((arm_idx, seed_idx));
        }
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var("PRIORBO_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| {
        jobs.par_iter()
            .try_for_each(|&(arm_idx, seed_idx)| run_cell(recipe, arm_idx, seed_idx, out))
    })
}

fn run_cell(recipe: &Recipe, arm_idx: usize, seed_idx: usize, out: &Path) -> Result<()> {
    use rand::SeedableRng;
    let arm = &recipe.arms[arm_idx];
    let bench = Benchmark::by_name(&arm.benchmark)?;
    let mut prior_rng = rand_chacha::ChaCha8Rng::seed_from_u64(recipe.prior_seed(seed_idx));
    let prior = arm.prior.build(&bench, &mut prior_rng)?;
    let cfg = arm.run_config(&bench.space, recipe.run_seed(arm_idx, seed_idx));
    let objective = |x: &NativePoint| bench.eval(x);

    let dir = out.join(&arm.label).join(format!("seed-{seed_idx}"));
    fs::create_dir_all(&dir)?;
    let (trace, snaps) = match arm.mode {
        RunMode::Bopro => run_with_diagnostics(
            &bench.space,
            prior,
            &objective,
            &cfg,
            &arm.diag_iters,
            501,
        )?,
        RunMode::PriorSampling => (
            run_prior_sampling(&bench.space, prior, &objective, arm.total_evals, cfg.seed)?,
            Vec::new(),
        ),
    };
    write_trace(&dir.join("trace.csv"), &bench.space, &trace)?;
    write_meta(
        &dir.join("meta.json"),
        &RunMeta {
            benchmark: bench.name.clone(),
            optimum_value: Some(bench.optimum_value),
            seed: cfg.seed,
            label: arm.label.clone(),
        },
    )?;
    for (t, rows) in &snaps {
        write_diag(&dir.join(format!("diag_{t}.csv")), &bench.space, rows)?;
    }
    if let Some(reason) = trace.abort {
        return Err(Error::ObjectiveProcess(reason));
    }
    Ok(())
}

/// Aggregates every `trace.csv` under `dir` into `summary.csv` with
/// per-iteration mean and std log regret. All traces must come from the same
/// benchmark.
pub fn cmd_summarize(dir: &Path) -> Result<PathBuf> {
    let mut paths = Vec::new();
    collect_trace_paths(dir, &mut paths)?;
    if paths.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no trace.csv files under {}",
            dir.display()
        )));
    }
    let mut benchmark: Option<String> = None;
    let mut optimum: Option<f64> = None;
    let mut regrets: Vec<Vec<f64>> = Vec::new();
    for path in &paths {
        let meta_path = path.with_file_name("meta.json");
        let meta: RunMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)?;
        match &benchmark {
            None => benchmark = Some(meta.benchmark.clone()),
            Some(b) if *b != meta.benchmark => {
                return Err(Error::InvalidConfig(format!(
                    "mixed benchmarks under {}: `{b}` vs `{}`",
                    dir.display(),
                    meta.benchmark
                )))
            }
            _ => {}
        }
        let opt = meta.optimum_value.ok_or_else(|| {
            Error::InvalidConfig(format!("{}: no optimum recorded", meta_path.display()))
        })?;
        optimum = Some(opt);
        let incumbents = read_trace_incumbents(path)?;
        regrets.push(
            incumbents
                .into_iter()
                .map(|inc| if inc.is_nan() { f64::NAN } else { (inc - opt).max(0.0) })
                .collect(),
        );
    }
    let _ = optimum;
    let rows = summarize_regrets(&regrets);
    let out = dir.join("summary.csv");
    let mut f = fs::File::create(&out)?;
    writeln!(f, "iteration,mean_log_regret,std_log_regret,n_seeds")?;
    for r in &rows {
        writeln!(
            f,
            "{},{},{},{}",
            r.iteration, r.mean_log_regret, r.std_log_regret, r.n_seeds
        )?;
    }
    Ok(out)
}
