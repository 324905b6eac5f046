//! End-to-end behaviour of the optimization loop on the 1D Branin slice:
//! convergence under a helpful prior, recovery from a misleading prior, and
//! sanity of the diagnostics surfaces.

use priorbo::bench::{branin1d, Benchmark};
use priorbo::engine::{run, run_with_diagnostics, Evaluation, Phase, RunConfig};
use priorbo::priors::{Prior, PriorSpec, DENSITY_EPS};
use priorbo::space::NativePoint;

const GLOBAL_MIN: f64 = 0.397887;

fn branin1d_objective(x: &NativePoint) -> priorbo::Result<Evaluation> {
    Ok(Evaluation::feasible(branin1d(x[0].as_f64().unwrap())?))
}

#[test]
fn beta_prior_finds_the_global_basin() {
    let bench = Benchmark::by_name("branin1d").unwrap();
    let mut hits = 0;
    for seed in 0..5 {
        let prior =
            Prior::from_specs(&[PriorSpec::Beta { a: 3.0, b: 3.0 }], &bench.space).unwrap();
        let cfg = RunConfig {
            budget: 20,
            doe: 2,
            ..RunConfig::new(&bench.space, 20, 100 + seed)
        };
        let trace = run(&bench.space, prior, &branin1d_objective, &cfg).unwrap();
        assert_eq!(trace.rows.len(), 22);
        if (trace.final_incumbent() - GLOBAL_MIN).abs() < 0.5 {
            hits += 1;
        }
    }
    assert!(hits >= 4, "incumbent within 0.5 of the optimum in {hits}/5 seeds");
}

#[test]
fn wrong_end_prior_is_forgotten() {
    // Exponential prior peaked at the right end (the local basin); the model
    // term must pull proposals towards the global basin over time.
    let bench = Benchmark::by_name("branin1d").unwrap();
    let in_global_basin = |x: f64| (0.0..6.0).contains(&x);
    let mut early_frac = 0.0;
    let mut late_frac = 0.0;
    for seed in 0..5 {
        let prior =
            Prior::from_specs(&[PriorSpec::Exponential { rate: 10.0 }], &bench.space).unwrap();
        let cfg = RunConfig {
            budget: 20,
            doe: 2,
            ..RunConfig::new(&bench.space, 20, 500 + seed)
        };
        let trace = run(&bench.space, prior, &branin1d_objective, &cfg).unwrap();
        let bo_rows: Vec<f64> = trace
            .rows
            .iter()
            .filter(|r| r.phase != Phase::Doe)
            .map(|r| r.x[0].as_f64().unwrap())
            .collect();
        assert_eq!(bo_rows.len(), 20);
        early_frac += bo_rows[..10].iter().filter(|&&x| in_global_basin(x)).count() as f64 / 10.0;
        late_frac += bo_rows[10..].iter().filter(|&&x| in_global_basin(x)).count() as f64 / 10.0;
    }
    early_frac /= 5.0;
    late_frac /= 5.0;
    assert!(
        late_frac > early_frac,
        "global-basin fraction should grow: iters 1-10 {early_frac:.2} vs 11-20 {late_frac:.2}"
    );
}

#[test]
fn model_probability_stays_clamped_on_the_grid() {
    let bench = Benchmark::by_name("branin1d").unwrap();
    let prior = Prior::from_specs(&[PriorSpec::Beta { a: 3.0, b: 3.0 }], &bench.space).unwrap();
    let cfg = RunConfig {
        budget: 8,
        doe: 2,
        ..RunConfig::new(&bench.space, 8, 3)
    };
    let (_, snaps) =
        run_with_diagnostics(&bench.space, prior, &branin1d_objective, &cfg, &[8], 201).unwrap();
    let (_, rows) = &snaps[0];
    for row in rows {
        assert!(row.model >= DENSITY_EPS);
        assert!(row.model <= 1.0 - DENSITY_EPS);
        assert!(row.log_g.is_finite());
        assert!(row.log_b.is_finite());
    }
}

#[test]
fn ei_collapses_where_the_model_rules_out_improvement() {
    // After enough iterations chasing the wrong-end prior, the evaluated
    // points in the local basin carry values far above the threshold, so the
    // EI there must fall below the grid median.
    let bench = Benchmark::by_name("branin1d").unwrap();
    let prior =
        Prior::from_specs(&[PriorSpec::Exponential { rate: 10.0 }], &bench.space).unwrap();
    let cfg = RunConfig {
        budget: 20,
        doe: 2,
        ..RunConfig::new(&bench.space, 20, 7)
    };
    let (trace, snaps) =
        run_with_diagnostics(&bench.space, prior, &branin1d_objective, &cfg, &[20], 501).unwrap();
    let (_, rows) = &snaps[0];

    // The worst evaluated point is well above the threshold by construction.
    let worst = trace
        .rows
        .iter()
        .max_by(|a, b| a.y.total_cmp(&b.y))
        .unwrap();
    let worst_u = (worst.x[0].as_f64().unwrap() + 5.0) / 15.0;
    let nearest = rows
        .iter()
        .min_by(|a, b| {
            (a.u[0] - worst_u)
                .abs()
                .total_cmp(&(b.u[0] - worst_u).abs())
        })
        .unwrap();
    let mut eis: Vec<f64> = rows.iter().map(|r| r.ei).collect();
    eis.sort_by(|a, b| a.total_cmp(b));
    let median = eis[eis.len() / 2];
    assert!(
        nearest.ei < median,
        "EI at the worst evaluated point ({}) should sit below the median ({median})",
        nearest.ei
    );
}
