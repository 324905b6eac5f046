//! User priors over the optimum's location: per-dimension densities with
//! sampling, modes, and min-max-scaled evaluation, plus the synthetic prior
//! constructors used by the benchmark recipes.
//!
//! Continuous densities live on the normalized coordinate `u ∈ [0,1]` of each
//! parameter; user-facing Gaussian parameters are given in native units and
//! mapped at construction. Scaled densities are clamped to `[ε, 1]` so the
//! log pseudo-posterior stays finite.

use crate::error::{Error, Result};
use crate::space::{snap_rank, NativePoint, Parameter, SearchSpace, UnitPoint};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta as BetaDist, Continuous, ContinuousCDF, Normal};

/// Lower clamp applied to every scaled density value.
pub const DENSITY_EPS: f64 = 1e-12;

/// Grid resolution used for numeric per-dimension mode search.
const MODE_GRID: usize = 10_001;

/// Number of low-discrepancy probe points used for the min-max scale cache.
const PROBE_POINTS: usize = 10_000;

/// Largest fully discrete space enumerated exactly when normalizing `P_b`.
const BAD_NORM_ENUM_LIMIT: usize = 1_000_000;

fn default_rate() -> f64 {
    10.0
}

fn default_kde_a() -> f64 {
    100.0
}

/// One per-dimension prior as written in experiment files. Gaussian `mu` and
/// `sigma` are in native parameter units (log-scaled parameters measure
/// `sigma` along the log axis, in nats); every other shape is defined over
/// the normalized `[0,1]` coordinate.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PriorSpec {
    Uniform,
    Gaussian {
        mu: f64,
        sigma: f64,
    },
    /// Density rising towards the upper end of the range.
    Exponential {
        #[serde(default = "default_rate")]
        rate: f64,
    },
    /// Density falling from the lower end of the range.
    Decay {
        #[serde(default = "default_rate")]
        rate: f64,
    },
    Beta {
        a: f64,
        b: f64,
    },
    Weights {
        probs: Vec<f64>,
    },
    Kde {
        #[serde(default)]
        centers: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        centers_file: Option<String>,
        #[serde(default = "default_kde_a")]
        a: f64,
        #[serde(default)]
        b: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bandwidth: Option<f64>,
    },
    Mixture {
        components: Vec<PriorSpec>,
        weights: Vec<f64>,
    },
}

impl PriorSpec {
    /// Binds the spec to a parameter, producing an evaluable density over the
    /// parameter's normalized coordinate.
    pub fn compile(&self, param: &Parameter) -> Result<DimPrior> {
        let k = param.cardinality();
        let invalid = |msg: String| Err(Error::InvalidPrior(msg));
        match self {
            PriorSpec::Uniform => Ok(DimPrior::Uniform),
            PriorSpec::Gaussian { mu, sigma } => {
                if *sigma <= 0.0 {
                    return invalid(format!("`{}`: gaussian sigma must be > 0", param.name));
                }
                let (mu_u, sigma_u) = match &param.kind {
                    crate::space::ParamKind::Continuous { lo, hi, log_scale } => {
                        if *log_scale {
                            (
                                (mu.ln() - lo.ln()) / (hi.ln() - lo.ln()),
                                sigma / (hi.ln() - lo.ln()),
                            )
                        } else {
                            ((mu - lo) / (hi - lo), sigma / (hi - lo))
                        }
                    }
                    crate::space::ParamKind::Ordinal { values } => {
                        let span = values[values.len() - 1] - values[0];
                        (ordinal_embed(values, *mu), sigma / span)
                    }
                    crate::space::ParamKind::Categorical { .. } => {
                        return invalid(format!(
                            "`{}`: gaussian prior not defined for categorical",
                            param.name
                        ))
                    }
                };
                let g = TruncGauss::new(mu_u, sigma_u);
                match k {
                    None => Ok(DimPrior::Gauss(g)),
                    Some(k) => Ok(DimPrior::Discrete(discretize(|u| g.density(u), k))),
                }
            }
            PriorSpec::Exponential { rate } => compile_exp(*rate, param, k),
            PriorSpec::Decay { rate } => compile_exp(-*rate, param, k),
            PriorSpec::Beta { a, b } => {
                let dist = BetaDist::new(*a, *b).map_err(|e| {
                    Error::InvalidPrior(format!("`{}`: beta({a},{b}): {e}", param.name))
                })?;
                match k {
                    None => Ok(DimPrior::Beta { a: *a, b: *b, dist }),
                    Some(k) => Ok(DimPrior::Discrete(discretize(
                        |u| dist.pdf(u.clamp(1e-12, 1.0 - 1e-12)),
                        k,
                    ))),
                }
            }
            PriorSpec::Weights { probs } => {
                let k = k.ok_or_else(|| {
                    Error::InvalidPrior(format!(
                        "`{}`: weights prior requires a discrete parameter",
                        param.name
                    ))
                })?;
                if probs.len() != k {
                    return invalid(format!(
                        "`{}`: {} weights for {} values",
                        param.name,
                        probs.len(),
                        k
                    ));
                }
                if probs.iter().any(|p| *p < 0.0) {
                    return invalid(format!("`{}`: negative weight", param.name));
                }
                let sum: f64 = probs.iter().sum();
                if (sum - 1.0).abs() > 1e-6 {
                    return invalid(format!("`{}`: weights sum to {sum}, not 1", param.name));
                }
                Ok(DimPrior::Discrete(probs.iter().map(|p| p / sum).collect()))
            }
            PriorSpec::Kde {
                centers,
                centers_file,
                a,
                b,
                bandwidth,
            } => {
                if centers_file.is_some() {
                    return invalid(format!(
                        "`{}`: centers_file must be resolved to inline centers before compile",
                        param.name
                    ));
                }
                if centers.is_empty() {
                    return invalid(format!("`{}`: kde prior needs centers", param.name));
                }
                let bw = bandwidth.unwrap_or_else(|| kde_bandwidth(*a, *b, centers.len(), 1));
                if bw <= 0.0 {
                    return invalid(format!("`{}`: kde bandwidth must be > 0", param.name));
                }
                let kde = DimPrior::Kde {
                    centers: centers.clone(),
                    bw,
                };
                match k {
                    None => Ok(kde),
                    Some(k) => Ok(DimPrior::Discrete(discretize(|u| kde.density(u), k))),
                }
            }
            PriorSpec::Mixture {
                components,
                weights,
            } => {
                if components.is_empty() || components.len() != weights.len() {
                    return invalid(format!(
                        "`{}`: mixture needs matching components and weights",
                        param.name
                    ));
                }
                if weights.iter().any(|w| *w < 0.0) {
                    return invalid(format!("`{}`: negative mixture weight", param.name));
                }
                let sum: f64 = weights.iter().sum();
                if (sum - 1.0).abs() > 1e-6 {
                    return invalid(format!("`{}`: mixture weights sum to {sum}", param.name));
                }
                let comps = components
                    .iter()
                    .map(|c| c.compile(param))
                    .collect::<Result<Vec<_>>>()?;
                Ok(DimPrior::Mixture {
                    comps,
                    weights: weights.iter().map(|w| w / sum).collect(),
                })
            }
        }
    }
}

fn compile_exp(rate: f64, param: &Parameter, k: Option<usize>) -> Result<DimPrior> {
    if rate == 0.0 {
        return Err(Error::InvalidPrior(format!(
            "`{}`: exponential rate must be nonzero",
            param.name
        )));
    }
    match k {
        None => Ok(DimPrior::Exp { rate }),
        Some(k) => {
            let e = DimPrior::Exp { rate };
            Ok(DimPrior::Discrete(discretize(|u| e.density(u), k)))
        }
    }
}

/// Bandwidth rule `a * n^(-1/(d+b))`.
pub fn kde_bandwidth(a: f64, b: f64, n: usize, d: usize) -> f64 {
    a * (n as f64).powf(-1.0 / (d as f64 + b))
}

/// Piecewise-linear embedding of a native ordinal value onto the rank axis.
fn ordinal_embed(values: &[f64], x: f64) -> f64 {
    let k = values.len();
    if x <= values[0] {
        return 0.0;
    }
    if x >= values[k - 1] {
        return 1.0;
    }
    for i in 0..k - 1 {
        if x <= values[i + 1] {
            let frac = (x - values[i]) / (values[i + 1] - values[i]);
            return (i as f64 + frac) / (k - 1) as f64;
        }
    }
    1.0
}

fn discretize(density: impl Fn(f64) -> f64, k: usize) -> Vec<f64> {
    let mut probs: Vec<f64> = (0..k)
        .map(|r| density(r as f64 / (k - 1) as f64).max(0.0))
        .collect();
    let sum: f64 = probs.iter().sum();
    if sum > 0.0 {
        for p in &mut probs {
            *p /= sum;
        }
    } else {
        probs = vec![1.0 / k as f64; k];
    }
    probs
}

// ---------------------------------------------------------------------------
// Per-dimension densities over u in [0,1]
// ---------------------------------------------------------------------------

/// Gaussian truncated and renormalized to [0,1], parameters in unit coords.
#[derive(Clone, Debug)]
pub struct TruncGauss {
    pub mu: f64,
    pub sigma: f64,
    mass: f64,
    cdf_lo: f64,
}

impl TruncGauss {
    pub fn new(mu: f64, sigma: f64) -> Self {
        let std = Normal::standard();
        let cdf_lo = std.cdf((0.0 - mu) / sigma);
        let cdf_hi = std.cdf((1.0 - mu) / sigma);
        TruncGauss {
            mu,
            sigma,
            mass: (cdf_hi - cdf_lo).max(1e-300),
            cdf_lo,
        }
    }

    pub fn density(&self, u: f64) -> f64 {
        let z = (u - self.mu) / self.sigma;
        let phi = (-0.5 * z * z).exp() / (self.sigma * (2.0 * std::f64::consts::PI).sqrt());
        phi / self.mass
    }

    pub fn cdf(&self, u: f64) -> f64 {
        let std = Normal::standard();
        ((std.cdf((u - self.mu) / self.sigma) - self.cdf_lo) / self.mass).clamp(0.0, 1.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // Rejection against the range; inverse-CDF fallback keeps degenerate
        // placements (mu far outside [0,1]) from spinning.
        for _ in 0..64 {
            let x = self.mu + self.sigma * sample_std_normal(rng);
            if (0.0..=1.0).contains(&x) {
                return x;
            }
        }
        let std = Normal::standard();
        let p = self.cdf_lo + rng.gen::<f64>() * self.mass;
        (self.mu + self.sigma * std.inverse_cdf(p.clamp(1e-15, 1.0 - 1e-15))).clamp(0.0, 1.0)
    }
}

fn sample_std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Normal::standard().sample(rng)
}

/// A compiled per-dimension prior density.
#[derive(Clone, Debug)]
pub enum DimPrior {
    Uniform,
    Gauss(TruncGauss),
    /// Density proportional to `exp(rate * u)`; negative rates decay.
    Exp { rate: f64 },
    Beta {
        a: f64,
        b: f64,
        dist: BetaDist,
    },
    /// Probability per rank of a discrete parameter.
    Discrete(Vec<f64>),
    /// Equal-weight Gaussian kernels at `centers`, not renormalized over [0,1].
    Kde { centers: Vec<f64>, bw: f64 },
    Mixture {
        comps: Vec<DimPrior>,
        weights: Vec<f64>,
    },
}

impl DimPrior {
    /// Raw (unscaled) density at a unit coordinate.
    pub fn density(&self, u: f64) -> f64 {
        match self {
            DimPrior::Uniform => 1.0,
            DimPrior::Gauss(g) => g.density(u),
            DimPrior::Exp { rate } => rate * (rate * u).exp() / (rate.exp() - 1.0),
            DimPrior::Beta { dist, .. } => dist.pdf(u.clamp(1e-12, 1.0 - 1e-12)),
            DimPrior::Discrete(probs) => probs[snap_rank(u, probs.len())],
            DimPrior::Kde { centers, bw } => {
                let norm = bw * (2.0 * std::f64::consts::PI).sqrt();
                centers
                    .iter()
                    .map(|c| {
                        let z = (u - c) / bw;
                        (-0.5 * z * z).exp() / norm
                    })
                    .sum::<f64>()
                    / centers.len() as f64
            }
            DimPrior::Mixture { comps, weights } => comps
                .iter()
                .zip(weights)
                .map(|(c, w)| w * c.density(u))
                .sum(),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            DimPrior::Uniform => rng.gen(),
            DimPrior::Gauss(g) => g.sample(rng),
            DimPrior::Exp { rate } => {
                let p: f64 = rng.gen();
                ((1.0 + p * (rate.exp() - 1.0)).ln() / rate).clamp(0.0, 1.0)
            }
            DimPrior::Beta { dist, .. } => dist.sample(rng).clamp(0.0, 1.0),
            DimPrior::Discrete(probs) => {
                let idx = WeightedIndex::new(probs)
                    .map(|w| w.sample(rng))
                    .unwrap_or(0);
                idx as f64 / (probs.len() - 1) as f64
            }
            DimPrior::Kde { centers, bw } => {
                for _ in 0..64 {
                    let c = centers[rng.gen_range(0..centers.len())];
                    let x = c + bw * sample_std_normal(rng);
                    if (0.0..=1.0).contains(&x) {
                        return x;
                    }
                }
                let c = centers[rng.gen_range(0..centers.len())];
                TruncGauss::new(c, *bw).sample(rng)
            }
            DimPrior::Mixture { comps, weights } => {
                let idx = WeightedIndex::new(weights)
                    .map(|w| w.sample(rng))
                    .unwrap_or(0);
                comps[idx].sample(rng)
            }
        }
    }

    /// Per-dimension argmax of the density; analytic where closed-form, grid
    /// search otherwise. Discrete ties break on the first index.
    pub fn mode(&self) -> f64 {
        match self {
            DimPrior::Uniform => 0.5,
            DimPrior::Gauss(g) => g.mu.clamp(0.0, 1.0),
            DimPrior::Exp { rate } => {
                if *rate > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            DimPrior::Beta { a, b, .. } => {
                if *a > 1.0 && *b > 1.0 {
                    (a - 1.0) / (a + b - 2.0)
                } else {
                    self.grid_mode()
                }
            }
            DimPrior::Discrete(probs) => {
                let mut best = 0;
                for (i, p) in probs.iter().enumerate() {
                    if *p > probs[best] {
                        best = i;
                    }
                }
                best as f64 / (probs.len() - 1) as f64
            }
            DimPrior::Kde { .. } | DimPrior::Mixture { .. } => self.grid_mode(),
        }
    }

    fn grid_mode(&self) -> f64 {
        let mut best_u = 0.0;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..MODE_GRID {
            let u = i as f64 / (MODE_GRID - 1) as f64;
            let d = self.density(u);
            if d > best_d {
                best_d = d;
                best_u = u;
            }
        }
        best_u
    }

    #[cfg(test)]
    fn cdf(&self, u: f64) -> f64 {
        match self {
            DimPrior::Uniform => u.clamp(0.0, 1.0),
            DimPrior::Gauss(g) => g.cdf(u),
            DimPrior::Exp { rate } => {
                (((rate * u).exp() - 1.0) / (rate.exp() - 1.0)).clamp(0.0, 1.0)
            }
            DimPrior::Beta { dist, .. } => dist.cdf(u.clamp(0.0, 1.0)),
            _ => unimplemented!("cdf only provided for analytic shapes"),
        }
    }
}

// ---------------------------------------------------------------------------
// Whole-space priors
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
struct ScaleCache {
    min: f64,
    max: f64,
    /// Normalization constant for `P_b` on fully discrete spaces.
    bad_norm: Option<f64>,
}

/// Product prior: one independent density per dimension.
#[derive(Clone, Debug)]
pub struct FactorizedPrior {
    dims: Vec<DimPrior>,
    scale: Option<ScaleCache>,
}

impl FactorizedPrior {
    pub fn new(dims: Vec<DimPrior>) -> Self {
        FactorizedPrior { dims, scale: None }
    }

    pub fn from_specs(specs: &[PriorSpec], space: &SearchSpace) -> Result<Self> {
        if specs.len() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                got: specs.len(),
            });
        }
        let dims = specs
            .iter()
            .zip(space.parameters())
            .map(|(s, p)| s.compile(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(FactorizedPrior::new(dims))
    }

    pub fn dims(&self) -> &[DimPrior] {
        &self.dims
    }

    fn raw_density(&self, u: &[f64]) -> f64 {
        self.dims
            .iter()
            .zip(u)
            .map(|(d, &ui)| d.density(ui))
            .product()
    }

    fn mode_unit(&self) -> UnitPoint {
        self.dims.iter().map(|d| d.mode()).collect()
    }

    fn sample_unit<R: Rng + ?Sized>(&self, rng: &mut R) -> UnitPoint {
        self.dims.iter().map(|d| d.sample(rng)).collect()
    }
}

/// Multivariate Gaussian KDE over normalized points with a shared bandwidth.
#[derive(Clone, Debug)]
pub struct JointKdePrior {
    centers: Vec<UnitPoint>,
    bandwidth: f64,
    scale: Option<ScaleCache>,
}

impl JointKdePrior {
    pub fn new(centers: Vec<UnitPoint>, a: f64, b: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::InvalidPrior("joint KDE needs centers".into()));
        }
        let d = centers[0].len();
        let bandwidth = kde_bandwidth(a, b, centers.len(), d);
        if bandwidth <= 0.0 {
            return Err(Error::InvalidPrior("joint KDE bandwidth must be > 0".into()));
        }
        Ok(JointKdePrior {
            centers,
            bandwidth,
            scale: None,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn centers(&self) -> &[UnitPoint] {
        &self.centers
    }

    fn raw_density(&self, u: &[f64]) -> f64 {
        let d = u.len() as f64;
        let norm = (self.bandwidth * (2.0 * std::f64::consts::PI).sqrt()).powf(d);
        let mut total = 0.0;
        for c in &self.centers {
            let sq: f64 = c
                .iter()
                .zip(u)
                .map(|(ci, ui)| {
                    let z = (ci - ui) / self.bandwidth;
                    z * z
                })
                .sum();
            total += (-0.5 * sq).exp();
        }
        total / (self.centers.len() as f64 * norm)
    }

    fn mode_unit(&self) -> UnitPoint {
        // Highest-density center; the construction puts centers on the best
        // sampled points, so this is where the kernels pile up.
        let mut best = 0;
        let mut best_d = f64::NEG_INFINITY;
        for (i, c) in self.centers.iter().enumerate() {
            let d = self.raw_density(c);
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        self.centers[best].clone()
    }

    fn sample_unit<R: Rng + ?Sized>(&self, rng: &mut R) -> UnitPoint {
        for _ in 0..64 {
            let c = &self.centers[rng.gen_range(0..self.centers.len())];
            let x: Vec<f64> = c
                .iter()
                .map(|ci| ci + self.bandwidth * sample_std_normal(rng))
                .collect();
            if x.iter().all(|v| (0.0..=1.0).contains(v)) {
                return x;
            }
        }
        let c = &self.centers[rng.gen_range(0..self.centers.len())];
        c.iter()
            .map(|ci| TruncGauss::new(*ci, self.bandwidth).sample(rng))
            .collect()
    }
}

/// A prior over good points, either factorized per dimension or a joint KDE.
#[derive(Clone, Debug)]
pub enum Prior {
    Factorized(FactorizedPrior),
    JointKde(JointKdePrior),
}

impl Prior {
    /// All-uniform prior: neutral in the pseudo-posterior.
    pub fn uniform(space: &SearchSpace) -> Prior {
        Prior::Factorized(FactorizedPrior::new(vec![DimPrior::Uniform; space.dim()]))
    }

    pub fn from_specs(specs: &[PriorSpec], space: &SearchSpace) -> Result<Prior> {
        Ok(Prior::Factorized(FactorizedPrior::from_specs(specs, space)?))
    }

    fn raw_density(&self, u: &[f64]) -> f64 {
        match self {
            Prior::Factorized(p) => p.raw_density(u),
            Prior::JointKde(p) => p.raw_density(u),
        }
    }

    fn scale(&self) -> Result<&ScaleCache> {
        match self {
            Prior::Factorized(p) => p.scale.as_ref(),
            Prior::JointKde(p) => p.scale.as_ref(),
        }
        .ok_or(Error::ScaleNotInitialized)
    }

    /// Computes the min-max scale cache over a fixed low-discrepancy probe set
    /// (plus the mode), and the `P_b` normalization constant on fully discrete
    /// spaces. Must be called once before density evaluation.
    pub fn init_scale(&mut self, space: &SearchSpace) -> Result<()> {
        if self.dim() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                got: self.dim(),
            });
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for probe in halton(PROBE_POINTS, space.dim()) {
            // Probe at representable points: discrete dims snap to ranks.
            let u = snap_to_space(&probe, space);
            let d = self.raw_density(&u);
            lo = lo.min(d);
            hi = hi.max(d);
        }
        let mode = snap_to_space(&self.mode_unit(), space);
        let d = self.raw_density(&mode);
        lo = lo.min(d);
        hi = hi.max(d);

        let mut cache = ScaleCache {
            min: lo,
            max: hi,
            bad_norm: None,
        };
        if space.is_fully_discrete() {
            cache.bad_norm = Some(bad_normalization(space, &cache, |u| self.raw_density(u)));
        }
        match self {
            Prior::Factorized(p) => p.scale = Some(cache),
            Prior::JointKde(p) => p.scale = Some(cache),
        }
        Ok(())
    }

    /// Convenience: initialize the scale cache and return self.
    pub fn with_scale(mut self, space: &SearchSpace) -> Result<Prior> {
        self.init_scale(space)?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        match self {
            Prior::Factorized(p) => p.dims.len(),
            Prior::JointKde(p) => p.centers[0].len(),
        }
    }

    /// Min-max-scaled density of good points, in `[ε, 1]`.
    pub fn density_good_unit(&self, u: &[f64]) -> Result<f64> {
        let scale = self.scale()?;
        let raw = self.raw_density(u);
        let scaled = if scale.max - scale.min < 1e-300 {
            // Constant density: the no-information prior is neutral.
            1.0
        } else {
            (raw - scale.min) / (scale.max - scale.min)
        };
        Ok(scaled.clamp(DENSITY_EPS, 1.0))
    }

    /// Complement density of bad points, in `[ε, 1]`; normalized to sum to 1
    /// over fully discrete spaces.
    pub fn density_bad_unit(&self, u: &[f64]) -> Result<f64> {
        let good = self.density_good_unit(u)?;
        let bad = (1.0 - good).clamp(DENSITY_EPS, 1.0);
        match self.scale()?.bad_norm {
            Some(z) => Ok((bad / z).clamp(DENSITY_EPS, 1.0)),
            None => Ok(bad),
        }
    }

    pub fn density_good(&self, space: &SearchSpace, x: &NativePoint) -> Result<f64> {
        self.density_good_unit(&space.normalize(x)?)
    }

    pub fn density_bad(&self, space: &SearchSpace, x: &NativePoint) -> Result<f64> {
        self.density_bad_unit(&space.normalize(x)?)
    }

    /// Per-dimension mode in unit coordinates.
    pub fn mode_unit(&self) -> UnitPoint {
        match self {
            Prior::Factorized(p) => p.mode_unit(),
            Prior::JointKde(p) => p.mode_unit(),
        }
    }

    pub fn mode(&self, space: &SearchSpace) -> NativePoint {
        space.denormalize(&self.mode_unit())
    }

    pub fn sample_unit<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<UnitPoint> {
        (0..n)
            .map(|_| match self {
                Prior::Factorized(p) => p.sample_unit(rng),
                Prior::JointKde(p) => p.sample_unit(rng),
            })
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        space: &SearchSpace,
        n: usize,
        rng: &mut R,
    ) -> Vec<NativePoint> {
        self.sample_unit(n, rng)
            .into_iter()
            .map(|u| space.denormalize(&u))
            .collect()
    }
}

fn snap_to_space(u: &[f64], space: &SearchSpace) -> UnitPoint {
    u.iter()
        .zip(space.parameters())
        .map(|(&ui, p)| match p.cardinality() {
            None => ui,
            Some(k) => snap_rank(ui, k) as f64 / (k - 1) as f64,
        })
        .collect()
}

/// Sum of the clamped complement over a fully discrete space; enumerated
/// exactly up to [`BAD_NORM_ENUM_LIMIT`] points, sampled beyond that.
fn bad_normalization(space: &SearchSpace, cache: &ScaleCache, raw: impl Fn(&[f64]) -> f64) -> f64 {
    let cards: Vec<usize> = space
        .parameters()
        .iter()
        .map(|p| p.cardinality().expect("fully discrete"))
        .collect();
    let span = cache.max - cache.min;
    let scaled_bad = |u: &[f64]| {
        let scaled = if span < 1e-300 {
            1.0
        } else {
            ((raw(u) - cache.min) / span).clamp(DENSITY_EPS, 1.0)
        };
        (1.0 - scaled).clamp(DENSITY_EPS, 1.0)
    };
    let total = cards.iter().try_fold(1usize, |acc, &k| acc.checked_mul(k));
    match total {
        Some(n) if n <= BAD_NORM_ENUM_LIMIT => {
            let mut sum = 0.0;
            let mut idx = vec![0usize; cards.len()];
            let mut u = vec![0.0f64; cards.len()];
            'outer: loop {
                for (i, (&r, &k)) in idx.iter().zip(&cards).enumerate() {
                    u[i] = r as f64 / (k - 1) as f64;
                }
                sum += scaled_bad(&u);
                let mut d = 0;
                loop {
                    idx[d] += 1;
                    if idx[d] < cards[d] {
                        break;
                    }
                    idx[d] = 0;
                    d += 1;
                    if d == cards.len() {
                        break 'outer;
                    }
                }
            }
            sum.max(DENSITY_EPS)
        }
        _ => {
            // Monte Carlo estimate of the mean complement, scaled by the
            // (possibly astronomically large) number of rank combinations.
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xbad_0e57);
            let n: f64 = cards.iter().map(|&k| k as f64).product();
            let m = 100_000;
            let mut u = vec![0.0f64; cards.len()];
            let mut acc = 0.0;
            for _ in 0..m {
                for (i, &k) in cards.iter().enumerate() {
                    u[i] = rng.gen_range(0..k) as f64 / (k - 1) as f64;
                }
                acc += scaled_bad(&u);
            }
            (acc / m as f64 * n).max(DENSITY_EPS)
        }
    }
}

// ---------------------------------------------------------------------------
// Synthetic prior constructors
// ---------------------------------------------------------------------------

/// Gaussian prior centered near (not exactly at) a known optimum: per
/// dimension, the center is drawn as `N(u_opt, sigma_x^2)` in unit
/// coordinates, so each run gets a fresh perturbed center.
pub fn build_synthetic_prior<R: Rng + ?Sized>(
    space: &SearchSpace,
    optimum: &NativePoint,
    sigma_x: f64,
    rng: &mut R,
) -> Result<Prior> {
    if sigma_x <= 0.0 {
        return Err(Error::InvalidPrior("sigma_x must be > 0".into()));
    }
    let u_opt = space.normalize(optimum)?;
    let dims = space
        .parameters()
        .iter()
        .zip(&u_opt)
        .map(|(p, &uo)| {
            let mu = uo + sigma_x * sample_std_normal(rng);
            let g = TruncGauss::new(mu, sigma_x);
            match p.cardinality() {
                None => DimPrior::Gauss(g),
                Some(k) => DimPrior::Discrete(discretize(|u| g.density(u), k)),
            }
        })
        .collect();
    Ok(Prior::Factorized(FactorizedPrior::new(dims)))
}

/// Gaussian prior centered at the worst of `pool` uniform samples; also
/// returns the worst point found.
pub fn build_misleading_prior<R: Rng + ?Sized>(
    space: &SearchSpace,
    objective: impl Fn(&NativePoint) -> f64,
    pool: usize,
    sigma_w: f64,
    rng: &mut R,
) -> Result<(Prior, NativePoint)> {
    if pool == 0 {
        return Err(Error::InvalidPrior(
            "misleading prior needs a sample budget".into(),
        ));
    }
    let mut worst_y = f64::NEG_INFINITY;
    let mut worst: Option<NativePoint> = None;
    for x in space.uniform_sample(pool, rng) {
        let y = objective(&x);
        if y > worst_y {
            worst_y = y;
            worst = Some(x);
        }
    }
    let worst = worst.expect("pool >= 1");
    let u_w = space.normalize(&worst)?;
    let dims = space
        .parameters()
        .iter()
        .zip(&u_w)
        .map(|(p, &uw)| {
            let g = TruncGauss::new(uw, sigma_w);
            match p.cardinality() {
                None => DimPrior::Gauss(g),
                Some(k) => DimPrior::Discrete(discretize(|u| g.density(u), k)),
            }
        })
        .collect();
    Ok((Prior::Factorized(FactorizedPrior::new(dims)), worst))
}

/// KDE prior over the best `top_k` of `dataset_size` uniform samples, either
/// one univariate KDE per dimension or a single multivariate KDE over the
/// same points.
pub fn build_kde_prior<R: Rng + ?Sized>(
    space: &SearchSpace,
    objective: impl Fn(&NativePoint) -> f64,
    dataset_size: usize,
    top_k: usize,
    multivariate: bool,
    rng: &mut R,
) -> Result<Prior> {
    if top_k == 0 || top_k > dataset_size {
        return Err(Error::InvalidPrior(format!(
            "need 1 <= top_k ({top_k}) <= dataset_size ({dataset_size})"
        )));
    }
    let mut scored: Vec<(f64, NativePoint)> = space
        .uniform_sample(dataset_size, rng)
        .into_iter()
        .map(|x| (objective(&x), x))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let best: Vec<UnitPoint> = scored[..top_k]
        .iter()
        .map(|(_, x)| space.normalize(x))
        .collect::<Result<Vec<_>>>()?;

    if multivariate {
        Ok(Prior::JointKde(JointKdePrior::new(best, 100.0, 0.0)?))
    } else {
        let n = best.len();
        let bw = kde_bandwidth(100.0, 0.0, n, 1);
        let dims = space
            .parameters()
            .iter()
            .enumerate()
            .map(|(d, p)| {
                let centers: Vec<f64> = best.iter().map(|u| u[d]).collect();
                let kde = DimPrior::Kde { centers, bw };
                match p.cardinality() {
                    None => kde,
                    Some(k) => DimPrior::Discrete(discretize(|u| kde.density(u), k)),
                }
            })
            .collect();
        Ok(Prior::Factorized(FactorizedPrior::new(dims)))
    }
}

// ---------------------------------------------------------------------------
// Halton probe set
// ---------------------------------------------------------------------------

fn nth_prime(i: usize) -> u64 {
    const SMALL: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];
    if i < SMALL.len() {
        return SMALL[i];
    }
    let mut count = SMALL.len();
    let mut n = *SMALL.last().unwrap();
    loop {
        n += 2;
        if (2..).take_while(|d| d * d <= n).all(|d| n % d != 0) {
            if count == i {
                return n;
            }
            count += 1;
        }
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// First `n` points of the Halton sequence in `d` dimensions.
pub fn halton(n: usize, d: usize) -> Vec<UnitPoint> {
    let bases: Vec<u64> = (0..d).map(nth_prime).collect();
    (1..=n as u64)
        .map(|i| bases.iter().map(|&b| radical_inverse(i, b)).collect())
        .collect()
}
