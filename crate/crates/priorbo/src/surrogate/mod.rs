//! Probabilistic surrogates: a Matérn-5/2 ARD Gaussian process for continuous
//! spaces, a random-forest regressor for mixed/discrete spaces, and a
//! random-forest feasibility classifier for constrained problems.

mod gp;
mod rf;

pub use gp::{fit_gp, fit_gp_with, log_marginal_with_grad, GpFit, GpHyperparams, GpOptions};
pub use rf::{feasible_prob, fit_feasibility, fit_rf, fit_rf_with, FeasibilityFit, RfConfig, RfFit};

use crate::error::{Error, Result};
use crate::space::{NativePoint, SearchSpace, UnitPoint};

/// One evaluated configuration.
#[derive(Clone, Debug)]
pub struct Trial {
    pub x: NativePoint,
    pub u: UnitPoint,
    pub y: f64,
    pub feasible: bool,
}

/// Insertion-ordered evaluation record `D_t`.
#[derive(Clone, Debug, Default)]
pub struct TrialHistory {
    trials: Vec<Trial>,
}

impl TrialHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an evaluation; the point must be in bounds and `y` finite for
    /// feasible rows.
    pub fn push(
        &mut self,
        space: &SearchSpace,
        x: NativePoint,
        y: f64,
        feasible: bool,
    ) -> Result<()> {
        let u = space.normalize(&x)?;
        if feasible && !y.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "feasible trial with non-finite y = {y}"
            )));
        }
        self.trials.push(Trial { x, u, y, feasible });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn feasible(&self) -> impl Iterator<Item = &Trial> {
        self.trials.iter().filter(|t| t.feasible)
    }

    pub fn feasible_ys(&self) -> Vec<f64> {
        self.feasible().map(|t| t.y).collect()
    }

    /// Best feasible trial so far, by objective value.
    pub fn incumbent(&self) -> Option<&Trial> {
        self.feasible().min_by(|a, b| a.y.total_cmp(&b.y))
    }

    pub fn contains_unit(&self, u: &[f64]) -> bool {
        self.trials.iter().any(|t| t.u == u)
    }
}

/// Anything that yields a Gaussian predictive `(mu, sigma)` at a unit point.
pub trait Surrogate: Send + Sync {
    fn predict_unit(&self, u: &[f64]) -> (f64, f64);

    fn predict_batch(&self, us: &[UnitPoint]) -> Vec<(f64, f64)> {
        us.iter().map(|u| self.predict_unit(u)).collect()
    }
}

/// Frozen surrogate snapshot backed by a closure; handy for diagnostics and
/// property tests that need a fixed predictive surface.
pub struct FnSurrogate<F>(pub F);

impl<F> Surrogate for FnSurrogate<F>
where
    F: Fn(&[f64]) -> (f64, f64) + Send + Sync,
{
    fn predict_unit(&self, u: &[f64]) -> (f64, f64) {
        (self.0)(u)
    }
}

/// Dispatches prediction to whichever model kind was fitted.
pub enum SurrogateFit {
    Gp(GpFit),
    Rf(RfFit),
}

impl Surrogate for SurrogateFit {
    fn predict_unit(&self, u: &[f64]) -> (f64, f64) {
        match self {
            SurrogateFit::Gp(m) => m.predict_unit(u),
            SurrogateFit::Rf(m) => m.predict_unit(u),
        }
    }

    fn predict_batch(&self, us: &[UnitPoint]) -> Vec<(f64, f64)> {
        match self {
            SurrogateFit::Gp(m) => m.predict_batch(us),
            SurrogateFit::Rf(m) => m.predict_batch(us),
        }
    }
}

/// Public prediction surface: `(mu, sigma)` at a native point.
pub fn predict(model: &dyn Surrogate, space: &SearchSpace, x: &NativePoint) -> Result<(f64, f64)> {
    Ok(model.predict_unit(&space.normalize(x)?))
}
