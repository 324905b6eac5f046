//! Zero-mean Gaussian process on standardized targets with a Matérn-5/2 ARD
//! kernel. Hyperparameters are set by multi-start gradient ascent on the log
//! marginal likelihood with analytic gradients.

use super::{Surrogate, TrialHistory};
use crate::error::{Error, Result};
use crate::space::{SearchSpace, UnitPoint};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

const SQRT5: f64 = 2.236_067_977_499_79;

/// Bounds on length-scales in normalized units.
const LEN_BOUNDS: (f64, f64) = (1e-3, 10.0);
/// Bounds on signal variance of standardized targets.
const SIG_BOUNDS: (f64, f64) = (1e-3, 1e3);
/// Bounds on noise variance of standardized targets.
const NOISE_BOUNDS: (f64, f64) = (1e-8, 1e-1);

#[derive(Clone, Debug)]
pub struct GpHyperparams {
    pub length_scales: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
}

#[derive(Clone, Debug)]
pub struct GpOptions {
    pub restarts: usize,
    pub max_ascent_steps: usize,
    /// Pin the noise variance instead of optimizing it.
    pub fixed_noise: Option<f64>,
}

impl Default for GpOptions {
    fn default() -> Self {
        GpOptions {
            restarts: 8,
            max_ascent_steps: 60,
            fixed_noise: None,
        }
    }
}

/// A fitted GP: kernel hyperparameters, Cholesky factor of the kernel matrix,
/// and the standardization constants for the targets.
pub struct GpFit {
    hp: GpHyperparams,
    x: Vec<UnitPoint>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    y_mean: f64,
    y_std: f64,
}

impl GpFit {
    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hp
    }

    pub fn y_std(&self) -> f64 {
        self.y_std
    }

    /// Builds a fit from explicit hyperparameters (no optimization).
    pub fn with_hyperparameters(
        x: Vec<UnitPoint>,
        y: Vec<f64>,
        hp: GpHyperparams,
    ) -> Result<GpFit> {
        let (y_mean, y_std) = standardize_constants(&y);
        let ys: DVector<f64> = DVector::from_iterator(y.len(), y.iter().map(|v| (v - y_mean) / y_std));
        let kmat = kernel_matrix(&x, &hp);
        let chol = cholesky_with_jitter(kmat)?;
        let alpha = chol.solve(&ys);
        Ok(GpFit {
            hp,
            x,
            chol,
            alpha,
            y_mean,
            y_std,
        })
    }
}

fn standardize_constants(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt().max(1e-12))
}

fn matern52(r: f64) -> f64 {
    let s = SQRT5 * r;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

fn scaled_dist(a: &[f64], b: &[f64], ls: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(ls)
        .map(|((ai, bi), l)| ((ai - bi) / l).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn kernel_matrix(x: &[UnitPoint], hp: &GpHyperparams) -> DMatrix<f64> {
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = hp.signal_var * matern52(scaled_dist(&x[i], &x[j], &hp.length_scales));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += hp.noise_var;
    }
    k
}

fn cholesky_with_jitter(mut k: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(k.clone()) {
        return Ok(c);
    }
    let mut jitter = 1e-10;
    while jitter <= 1e-4 {
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(kj) {
            return Ok(c);
        }
        jitter *= 10.0;
    }
    k.fill(f64::NAN);
    Err(Error::SurrogateFit(
        "kernel matrix not positive definite after jitter escalation to 1e-4".into(),
    ))
}

/// Log-parameter layout: `[log l_1 .. log l_D, log signal_var, (log noise_var)]`.
pub(crate) struct ParamLayout {
    d: usize,
    fixed_noise: Option<f64>,
}

impl ParamLayout {
    fn len(&self) -> usize {
        self.d + 1 + usize::from(self.fixed_noise.is_none())
    }

    fn to_hp(&self, theta: &[f64]) -> GpHyperparams {
        GpHyperparams {
            length_scales: theta[..self.d].iter().map(|t| t.exp()).collect(),
            signal_var: theta[self.d].exp(),
            noise_var: self
                .fixed_noise
                .unwrap_or_else(|| theta[self.d + 1].exp()),
        }
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![LEN_BOUNDS.0.ln(); self.d];
        let mut hi = vec![LEN_BOUNDS.1.ln(); self.d];
        lo.push(SIG_BOUNDS.0.ln());
        hi.push(SIG_BOUNDS.1.ln());
        if self.fixed_noise.is_none() {
            lo.push(NOISE_BOUNDS.0.ln());
            hi.push(NOISE_BOUNDS.1.ln());
        }
        (lo, hi)
    }
}

/// Log marginal likelihood and its gradient w.r.t. the log parameters.
pub(crate) fn log_marginal_and_grad(
    x: &[UnitPoint],
    ys: &DVector<f64>,
    layout: &ParamLayout,
    theta: &[f64],
) -> Option<(f64, Vec<f64>)> {
    let hp = layout.to_hp(theta);
    let n = x.len();
    let k = kernel_matrix(x, &hp);
    let chol = Cholesky::new(k)?;
    let alpha = chol.solve(ys);
    let log_det = 2.0 * (0..n).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>();
    let lml = -0.5 * ys.dot(&alpha)
        - 0.5 * log_det
        - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    // dL/dtheta_j = 0.5 * tr((alpha alpha^T - K^-1) dK/dtheta_j)
    let kinv = chol.inverse();
    let mut w = &alpha * alpha.transpose();
    w -= &kinv;

    let mut grad = vec![0.0; layout.len()];
    for i in 0..n {
        for j in 0..n {
            let wij = w[(i, j)];
            if wij == 0.0 {
                continue;
            }
            let r = scaled_dist(&x[i], &x[j], &hp.length_scales);
            let s = SQRT5 * r;
            let unit_k = matern52(r);
            let exps = (-s).exp();
            // d matern / d l_d * l_d, via dk/dr and dr/d log l_d
            let common = hp.signal_var * (5.0 / 3.0) * (1.0 + s) * exps;
            for (d, l) in hp.length_scales.iter().enumerate() {
                let delta = (x[i][d] - x[j][d]) / l;
                grad[d] += 0.5 * wij * common * delta * delta;
            }
            // d k / d log signal_var = signal_var * unit kernel
            grad[layout.d] += 0.5 * wij * hp.signal_var * unit_k;
        }
    }
    if layout.fixed_noise.is_none() {
        let tr: f64 = (0..n).map(|i| w[(i, i)]).sum();
        grad[layout.d + 1] = 0.5 * tr * hp.noise_var;
    }
    Some((lml, grad))
}

/// Log marginal likelihood of standardized targets and its gradient with
/// respect to the log hyperparameters `[log l_1 .. log l_D, log signal_var,
/// log noise_var]`. Returns None when the kernel matrix is not positive
/// definite at these hyperparameters.
pub fn log_marginal_with_grad(
    x: &[UnitPoint],
    y_standardized: &[f64],
    hp: &GpHyperparams,
) -> Option<(f64, Vec<f64>)> {
    let layout = ParamLayout {
        d: x.first()?.len(),
        fixed_noise: None,
    };
    let mut theta: Vec<f64> = hp.length_scales.iter().map(|l| l.ln()).collect();
    theta.push(hp.signal_var.ln());
    theta.push(hp.noise_var.ln());
    let ys = DVector::from_column_slice(y_standardized);
    log_marginal_and_grad(x, &ys, &layout, &theta)
}

/// Maximizes the log marginal likelihood from `restarts` starting points by
/// projected gradient ascent with backtracking line search.
pub fn fit_gp_with<R: Rng + ?Sized>(
    history: &TrialHistory,
    space: &SearchSpace,
    opts: &GpOptions,
    rng: &mut R,
) -> Result<GpFit> {
    if !space.is_fully_continuous() {
        return Err(Error::SurrogateFit(
            "GP surrogate requires a fully continuous space; use the RF surrogate".into(),
        ));
    }
    let trials: Vec<_> = history.feasible().collect();
    if trials.len() < 2 {
        return Err(Error::NotEnoughData {
            need: 2,
            have: trials.len(),
        });
    }
    let x: Vec<UnitPoint> = trials.iter().map(|t| t.u.clone()).collect();
    let y: Vec<f64> = trials.iter().map(|t| t.y).collect();
    let (y_mean, y_std) = standardize_constants(&y);
    let ys: DVector<f64> = DVector::from_iterator(y.len(), y.iter().map(|v| (v - y_mean) / y_std));

    let layout = ParamLayout {
        d: space.dim(),
        fixed_noise: opts.fixed_noise,
    };
    let (lo, hi) = layout.bounds();

    let mut starts = Vec::with_capacity(opts.restarts);
    let mut default_start = vec![0.3f64.ln(); space.dim()];
    default_start.push(0.0); // signal_var = 1 on standardized targets
    if layout.fixed_noise.is_none() {
        default_start.push(1e-6f64.ln());
    }
    starts.push(default_start);
    while starts.len() < opts.restarts.max(1) {
        let s: Vec<f64> = lo
            .iter()
            .zip(&hi)
            .map(|(&a, &b)| rng.gen_range(a..b))
            .collect();
        starts.push(s);
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in starts {
        if let Some((lml, theta)) = ascend(&x, &ys, &layout, start, &lo, &hi, opts.max_ascent_steps)
        {
            if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                best = Some((lml, theta));
            }
        }
    }
    let (_, theta) =
        best.ok_or_else(|| Error::SurrogateFit("no restart produced a usable fit".into()))?;
    let hp = layout.to_hp(&theta);

    let kmat = kernel_matrix(&x, &hp);
    let chol = cholesky_with_jitter(kmat)?;
    let alpha = chol.solve(&ys);
    Ok(GpFit {
        hp,
        x,
        chol,
        alpha,
        y_mean,
        y_std,
    })
}

/// Default-options fit.
pub fn fit_gp<R: Rng + ?Sized>(
    history: &TrialHistory,
    space: &SearchSpace,
    rng: &mut R,
) -> Result<GpFit> {
    fit_gp_with(history, space, &GpOptions::default(), rng)
}

fn ascend(
    x: &[UnitPoint],
    ys: &DVector<f64>,
    layout: &ParamLayout,
    mut theta: Vec<f64>,
    lo: &[f64],
    hi: &[f64],
    max_steps: usize,
) -> Option<(f64, Vec<f64>)> {
    let clamp = |t: &mut Vec<f64>| {
        for ((v, &a), &b) in t.iter_mut().zip(lo).zip(hi) {
            *v = v.clamp(a, b);
        }
    };
    clamp(&mut theta);
    let (mut lml, mut grad) = log_marginal_and_grad(x, ys, layout, &theta)?;
    for _ in 0..max_steps {
        let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gnorm < 1e-5 {
            break;
        }
        let mut step = 0.5 / gnorm.max(1.0);
        let mut improved = false;
        for _ in 0..16 {
            let mut cand: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t + step * g).collect();
            clamp(&mut cand);
            if let Some((l2, g2)) = log_marginal_and_grad(x, ys, layout, &cand) {
                if l2 > lml + 1e-12 {
                    theta = cand;
                    lml = l2;
                    grad = g2;
                    improved = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Some((lml, theta))
}

impl Surrogate for GpFit {
    fn predict_unit(&self, u: &[f64]) -> (f64, f64) {
        let n = self.x.len();
        let kstar = DVector::from_iterator(
            n,
            self.x
                .iter()
                .map(|xi| self.hp.signal_var * matern52(scaled_dist(xi, u, &self.hp.length_scales))),
        );
        let mean_std = kstar.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&kstar)
            .expect("triangular solve");
        let var = (self.hp.signal_var - v.dot(&v)).max(0.0);
        (
            self.y_mean + self.y_std * mean_std,
            self.y_std * var.sqrt(),
        )
    }

    fn predict_batch(&self, us: &[UnitPoint]) -> Vec<(f64, f64)> {
        let n = self.x.len();
        let m = us.len();
        if m == 0 {
            return Vec::new();
        }
        let mut kstar = DMatrix::zeros(n, m);
        for (j, u) in us.iter().enumerate() {
            for (i, xi) in self.x.iter().enumerate() {
                kstar[(i, j)] =
                    self.hp.signal_var * matern52(scaled_dist(xi, u, &self.hp.length_scales));
            }
        }
        let means = kstar.transpose() * &self.alpha;
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&kstar)
            .expect("triangular solve");
        (0..m)
            .map(|j| {
                let var = (self.hp.signal_var - v.column(j).norm_squared()).max(0.0);
                (
                    self.y_mean + self.y_std * means[j],
                    self.y_std * var.sqrt(),
                )
            })
            .collect()
    }
}
