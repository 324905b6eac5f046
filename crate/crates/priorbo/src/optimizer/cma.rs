//! (mu/mu_w, lambda)-CMA-ES with cumulative step-size adaptation and rank-one
//! plus rank-mu covariance updates, maximizing a score over the unit cube.
//! Out-of-cube samples are clamped for evaluation and penalized by their
//! squared violation.

use crate::space::UnitPoint;
use nalgebra::{DMatrix, DVector};
use rand::distributions::Distribution as _;
use rand::Rng;
use statrs::distribution::Normal;

#[derive(Clone, Debug)]
pub struct CmaConfig {
    pub sigma0: f64,
    pub max_evals: usize,
}

impl Default for CmaConfig {
    fn default() -> Self {
        CmaConfig {
            sigma0: 0.2,
            max_evals: 2000,
        }
    }
}

const BOUND_PENALTY: f64 = 1e3;

fn clamp_unit(x: &DVector<f64>) -> (UnitPoint, f64) {
    let mut violation = 0.0;
    let clamped: UnitPoint = x
        .iter()
        .map(|&v| {
            let c = v.clamp(0.0, 1.0);
            violation += (v - c) * (v - c);
            c
        })
        .collect();
    (clamped, violation)
}

/// Runs CMA-ES from `start` with step size `sigma0` until `budget` score
/// evaluations are spent; returns the best clamped point seen and its score.
pub fn cma_es<R: Rng + ?Sized>(
    start: &UnitPoint,
    sigma0: f64,
    score: &dyn Fn(&[f64]) -> f64,
    budget: usize,
    rng: &mut R,
) -> (UnitPoint, f64) {
    let n = start.len();
    let nf = n as f64;
    let lambda = 4 + (3.0 * nf.ln()).floor() as usize;
    let mu = lambda / 2;

    let mut weights: Vec<f64> = (1..=mu)
        .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
        .collect();
    let wsum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= wsum;
    }
    let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

    let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
    let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
    let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
    let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
    let c_mu = (2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff))
        .min(1.0 - c_1);
    let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));

    let mut mean = DVector::from_iterator(n, start.iter().copied());
    let mut sigma = sigma0;
    let mut cov: DMatrix<f64> = DMatrix::identity(n, n);
    let mut p_sigma: DVector<f64> = DVector::zeros(n);
    let mut p_c: DVector<f64> = DVector::zeros(n);

    // The start counts as seen, so elitist reporting never loses it.
    let (start_clamped, _) = clamp_unit(&mean);
    let mut best_x = start_clamped.clone();
    let mut best_score = score(&start_clamped);
    let mut evals = 1usize;

    let std_normal = Normal::standard();
    let mut generation = 0usize;
    while evals + lambda <= budget.max(lambda + 1) && evals < budget.max(2) {
        generation += 1;
        // Eigendecomposition for sampling and for C^(-1/2).
        let eig = cov.clone().symmetric_eigen();
        let sqrt_vals: Vec<f64> = eig
            .eigenvalues
            .iter()
            .map(|&v| v.max(1e-20).sqrt())
            .collect();
        if sigma * sqrt_vals.iter().cloned().fold(0.0, f64::max) < 1e-14 {
            break;
        }
        let b = &eig.eigenvectors;
        let mut c_inv_sqrt = DMatrix::zeros(n, n);
        for (j, &sv) in sqrt_vals.iter().enumerate() {
            let col = b.column(j);
            c_inv_sqrt += col * col.transpose() / sv;
        }

        let mut ys: Vec<DVector<f64>> = Vec::with_capacity(lambda);
        let mut scored: Vec<(usize, f64)> = Vec::with_capacity(lambda);
        for k in 0..lambda {
            let z = DVector::from_iterator(n, (0..n).map(|_| std_normal.sample(rng)));
            let mut y = DVector::zeros(n);
            for (j, &sv) in sqrt_vals.iter().enumerate() {
                y += b.column(j) * (sv * z[j]);
            }
            let x = &mean + sigma * &y;
            let (clamped, violation) = clamp_unit(&x);
            let raw = score(&clamped);
            evals += 1;
            if raw > best_score {
                best_score = raw;
                best_x = clamped;
            }
            scored.push((k, raw - BOUND_PENALTY * violation));
            ys.push(y);
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));

        let mut y_w: DVector<f64> = DVector::zeros(n);
        for (rank, &(idx, _)) in scored.iter().take(mu).enumerate() {
            y_w += &ys[idx] * weights[rank];
        }
        mean += sigma * &y_w;

        p_sigma = (1.0 - c_sigma) * &p_sigma
            + (c_sigma * (2.0 - c_sigma) * mu_eff).sqrt() * (&c_inv_sqrt * &y_w);
        let ps_norm = p_sigma.norm();
        let h_sigma = ps_norm
            / (1.0 - (1.0 - c_sigma).powi(2 * generation as i32)).sqrt()
            < (1.4 + 2.0 / (nf + 1.0)) * chi_n;
        let h = if h_sigma { 1.0 } else { 0.0 };

        p_c = (1.0 - c_c) * &p_c + h * (c_c * (2.0 - c_c) * mu_eff).sqrt() * &y_w;

        let mut rank_mu = DMatrix::zeros(n, n);
        for (rank, &(idx, _)) in scored.iter().take(mu).enumerate() {
            rank_mu += weights[rank] * (&ys[idx] * ys[idx].transpose());
        }
        cov = (1.0 - c_1 - c_mu) * &cov
            + c_1 * (&p_c * p_c.transpose() + (1.0 - h) * c_c * (2.0 - c_c) * &cov)
            + c_mu * rank_mu;

        sigma *= ((c_sigma / d_sigma) * (ps_norm / chi_n - 1.0)).exp();
        if !sigma.is_finite() {
            break;
        }
    }

    (best_x, best_score)
}
