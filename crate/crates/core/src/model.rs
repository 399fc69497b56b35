//! Model configuration, hyperparameters and the variational state.
//!
//! Every gamma factor uses the shape–rate parameterization, so the posterior
//! style updates `shape = a + count / 2`, `rate = b + sum / 2` hold literally.
//! The `noise` factor is the residual *precision* of the observation model,
//! not its variance.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::car::CarStructure;
use crate::error::{Error, Result};
use crate::special::digamma_unchecked;

/// Which special case of the spatio-temporal factor model is fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// `Y_it = η_i μ_it + X_it β_i + ε_it`: CAR loadings, random-walk factors.
    SpatioTemporal,
    /// `Y_it = μ_it + X_it β_i + ε_it`: one random-walk factor per site.
    TemporalOnly,
    /// `Y_it = η_i + X_it β_i + ε_it`: one CAR field per subject.
    SpatialOnly,
    /// `Y_it = X_it β_i + ε_it`: the plain hierarchical mixture regression.
    RegressionOnly,
}

impl Variant {
    pub fn has_factors(self) -> bool {
        matches!(self, Variant::SpatioTemporal | Variant::TemporalOnly)
    }

    pub fn has_loadings(self) -> bool {
        matches!(self, Variant::SpatioTemporal | Variant::SpatialOnly)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::SpatioTemporal => "spatio-temporal",
            Variant::TemporalOnly => "temporal-only",
            Variant::SpatialOnly => "spatial-only",
            Variant::RegressionOnly => "regression-only",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatio-temporal" => Ok(Variant::SpatioTemporal),
            "temporal-only" => Ok(Variant::TemporalOnly),
            "spatial-only" => Ok(Variant::SpatialOnly),
            "regression-only" => Ok(Variant::RegressionOnly),
            other => Err(Error::Config(format!("unknown model variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Spatial sites K.
    pub sites: usize,
    /// Time points T.
    pub times: usize,
    /// Covariates g.
    pub covariates: usize,
    /// Latent factors m; only read by the spatio-temporal variant.
    pub factors: usize,
    /// Stick-breaking truncation level R.
    pub truncation: usize,
    pub seed: u64,
    /// Scale of the seeded jitter on the initial component means.
    pub init_jitter: f64,
}

impl ModelConfig {
    pub fn new(variant: Variant, sites: usize, times: usize, covariates: usize) -> Self {
        ModelConfig {
            variant,
            sites,
            times,
            covariates,
            factors: 1,
            truncation: 20,
            seed: 0,
            init_jitter: 0.01,
        }
    }

    /// Dimension of each latent factor vector μ_it (zero when absent).
    pub fn factor_dim(&self) -> usize {
        match self.variant {
            Variant::SpatioTemporal => self.factors,
            Variant::TemporalOnly => self.sites,
            Variant::SpatialOnly => 1,
            Variant::RegressionOnly => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites == 0 || self.times == 0 || self.covariates == 0 {
            return Err(Error::Config(format!(
                "K, T and g must be positive (got K={}, T={}, g={})",
                self.sites, self.times, self.covariates
            )));
        }
        if self.truncation == 0 {
            return Err(Error::Config(
                "truncation level R must be at least 1".into(),
            ));
        }
        if self.variant == Variant::SpatioTemporal && self.factors == 0 {
            return Err(Error::Config(
                "number of factors m must be at least 1".into(),
            ));
        }
        if !(self.init_jitter >= 0.0) {
            return Err(Error::Config("init jitter must be non-negative".into()));
        }
        Ok(())
    }
}

/// Shape–rate parameters of a gamma distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl GammaParams {
    pub const fn new(shape: f64, rate: f64) -> Self {
        GammaParams { shape, rate }
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    /// E[ln x].
    pub fn mean_log(&self) -> f64 {
        digamma_unchecked(self.shape) - self.rate.ln()
    }
}

/// Parameters of a beta distribution over one stick-breaking proportion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub a: f64,
    pub b: f64,
}

impl BetaParams {
    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    /// E[ln v].
    pub fn mean_log(&self) -> f64 {
        digamma_unchecked(self.a) - digamma_unchecked(self.a + self.b)
    }

    /// E[ln(1 − v)].
    pub fn mean_log1m(&self) -> f64 {
        digamma_unchecked(self.b) - digamma_unchecked(self.a + self.b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub noise: GammaParams,
    pub alpha: GammaParams,
    pub theta: GammaParams,
    pub tau: GammaParams,
    /// Prior mean of the initial factor μ_i0; empty means zero.
    pub mu0: Vec<f64>,
    /// Prior variance ϑ of μ_i0.
    pub mu0_var: f64,
    /// Prior mean of every component's coefficients.
    pub beta0: DVector<f64>,
    /// Prior covariance of every component's coefficients.
    pub sigma0: DMatrix<f64>,
}

impl Hyperparams {
    /// Every gamma prior at `(1, 1)`, `μ_0 = 0`, `ϑ = 1`, `β_0 = 0`, `Σ_0 = I`.
    ///
    /// A vaguer walk-precision prior such as `(1e-4, 1e-4)` leaves unused
    /// components with E[ln θ] ≈ −10⁴, so no subject can ever open one.
    pub fn default_for(config: &ModelConfig) -> Self {
        let g = config.covariates;
        Hyperparams {
            noise: GammaParams::new(1.0, 1.0),
            alpha: GammaParams::new(1.0, 1.0),
            theta: GammaParams::new(1.0, 1.0),
            tau: GammaParams::new(1.0, 1.0),
            mu0: Vec::new(),
            mu0_var: 1.0,
            beta0: DVector::zeros(g),
            sigma0: DMatrix::identity(g, g),
        }
    }

    /// μ_0 expanded to the factor dimension.
    pub fn mu0_vector(&self, dim: usize) -> DVector<f64> {
        if self.mu0.is_empty() {
            DVector::zeros(dim)
        } else if self.mu0.len() == 1 {
            DVector::from_element(dim, self.mu0[0])
        } else {
            DVector::from_column_slice(&self.mu0)
        }
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        for (name, p) in [
            ("noise", self.noise),
            ("alpha", self.alpha),
            ("theta", self.theta),
            ("tau", self.tau),
        ] {
            if !(p.shape > 0.0 && p.rate > 0.0) {
                return Err(Error::Config(format!(
                    "{name} prior needs positive shape and rate, got ({}, {})",
                    p.shape, p.rate
                )));
            }
        }
        if !(self.mu0_var > 0.0) {
            return Err(Error::Config("mu0 variance must be positive".into()));
        }
        let dim = config.factor_dim();
        if !(self.mu0.is_empty() || self.mu0.len() == 1 || self.mu0.len() == dim) {
            return Err(Error::Config(format!(
                "mu0 has length {}, expected 0, 1 or {dim}",
                self.mu0.len()
            )));
        }
        let g = config.covariates;
        if self.beta0.len() != g || self.sigma0.shape() != (g, g) {
            return Err(Error::Config(format!(
                "beta0/sigma0 must be {g}-dimensional, got {} and {:?}",
                self.beta0.len(),
                self.sigma0.shape()
            )));
        }
        if self.sigma0.clone().cholesky().is_none() {
            return Err(Error::Config("sigma0 is not positive definite".into()));
        }
        Ok(())
    }
}

/// Configuration, hyperparameters and (for models with loadings) the CAR
/// structure, checked for mutual consistency.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub hyper: Hyperparams,
    pub car: Option<CarStructure>,
}

impl Model {
    pub fn new(config: ModelConfig, hyper: Hyperparams, car: Option<CarStructure>) -> Result<Self> {
        config.validate()?;
        hyper.validate(&config)?;
        if config.variant.has_loadings() {
            match &car {
                None => {
                    return Err(Error::Config(format!(
                        "variant {} needs a CAR structure",
                        config.variant
                    )))
                }
                Some(c) if c.sites() != config.sites => {
                    return Err(Error::Config(format!(
                        "CAR structure has {} sites, model has {}",
                        c.sites(),
                        config.sites
                    )))
                }
                _ => {}
            }
        }
        Ok(Model { config, hyper, car })
    }

    pub fn car(&self) -> Option<&CarStructure> {
        if self.config.variant.has_loadings() {
            self.car.as_ref()
        } else {
            None
        }
    }

    pub(crate) fn car_ref(&self) -> &CarStructure {
        self.car()
            .expect("variant with loadings always carries a CAR structure")
    }

    pub fn rho_levels(&self) -> usize {
        self.car().map_or(0, |c| c.rho_grid().len())
    }
}

/// Shared variational parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalState {
    pub noise: GammaParams,
    pub alpha: GammaParams,
    pub tau: GammaParams,
    /// Unnormalized log-probabilities of the ρ grid points.
    pub rho_logits: Vec<f64>,
    /// q(ρ = ρ_l); empty for variants without loadings.
    pub rho_probs: Vec<f64>,
    pub theta: Vec<GammaParams>,
    pub beta_mean: Vec<DVector<f64>>,
    pub beta_cov: Vec<DMatrix<f64>>,
    /// q(v_r) for r < R; v_R is fixed at one.
    pub sticks: Vec<BetaParams>,
}

impl GlobalState {
    pub fn components(&self) -> usize {
        self.beta_mean.len()
    }

    /// E[ln π_r] under the truncated stick-breaking factors.
    pub fn expected_log_weights(&self) -> Vec<f64> {
        let r_max = self.components();
        let mut out = Vec::with_capacity(r_max);
        let mut acc = 0.0;
        for r in 0..r_max {
            if r + 1 < r_max {
                out.push(acc + self.sticks[r].mean_log());
                acc += self.sticks[r].mean_log1m();
            } else {
                out.push(acc);
            }
        }
        out
    }

    /// E[ρ] under q(ρ).
    pub fn rho_mean(&self, grid: &[f64]) -> f64 {
        self.rho_probs.iter().zip(grid).map(|(p, r)| p * r).sum()
    }

    /// Flattens every parameter, for change detection and hashing.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = vec![
            self.noise.shape,
            self.noise.rate,
            self.alpha.shape,
            self.alpha.rate,
            self.tau.shape,
            self.tau.rate,
        ];
        v.extend(&self.rho_probs);
        for t in &self.theta {
            v.extend([t.shape, t.rate]);
        }
        for (m, c) in self.beta_mean.iter().zip(&self.beta_cov) {
            v.extend(m.iter());
            v.extend(c.iter());
        }
        for s in &self.sticks {
            v.extend([s.a, s.b]);
        }
        v
    }
}

/// Builds the initial global state: every factor at its prior, sticks at
/// `(1, a_α / b_α)`, component means jittered to break symmetry.
pub fn init_global(model: &Model) -> GlobalState {
    let cfg = &model.config;
    let hyp = &model.hyper;
    let r_max = cfg.truncation;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let beta_mean = (0..r_max)
        .map(|_| {
            let mut b = hyp.beta0.clone();
            for v in b.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += cfg.init_jitter * z;
            }
            b
        })
        .collect();
    let (rho_logits, rho_probs) = match model.car() {
        Some(car) => (
            car.rho_prior().iter().map(|p| p.ln()).collect(),
            car.rho_prior().to_vec(),
        ),
        None => (Vec::new(), Vec::new()),
    };
    GlobalState {
        noise: hyp.noise,
        alpha: hyp.alpha,
        tau: hyp.tau,
        rho_logits,
        rho_probs,
        theta: vec![hyp.theta; r_max],
        beta_mean,
        beta_cov: vec![hyp.sigma0.clone(); r_max],
        sticks: vec![
            BetaParams {
                a: 1.0,
                b: hyp.alpha.mean(),
            };
            r_max.saturating_sub(1)
        ],
    }
}

/// Covariance of q(μ_it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FactorCov {
    Full(DMatrix<f64>),
    /// Used when the factor is one value per site (temporal-only model).
    Diagonal(DVector<f64>),
}

impl FactorCov {
    pub fn trace(&self) -> f64 {
        match self {
            FactorCov::Full(m) => m.trace(),
            FactorCov::Diagonal(d) => d.sum(),
        }
    }

    pub fn log_det(&self) -> f64 {
        match self {
            FactorCov::Full(m) => match m.clone().cholesky() {
                Some(c) => 2.0 * c.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>(),
                None => f64::NAN,
            },
            FactorCov::Diagonal(d) => d.iter().map(|x| x.ln()).sum(),
        }
    }

    /// Adds this covariance to the dense accumulator `acc`.
    pub fn add_to(&self, acc: &mut DMatrix<f64>) {
        match self {
            FactorCov::Full(m) => *acc += m,
            FactorCov::Diagonal(d) => {
                for (i, v) in d.iter().enumerate() {
                    acc[(i, i)] += v;
                }
            }
        }
    }

    fn is_positive_definite(&self) -> bool {
        match self {
            FactorCov::Full(m) => {
                m.iter().all(|x| x.is_finite())
                    && (m - m.transpose()).amax() <= 1e-8 * m.amax().max(1.0)
                    && m.clone().cholesky().is_some()
            }
            FactorCov::Diagonal(d) => d.iter().all(|&x| x > 0.0 && x.is_finite()),
        }
    }
}

/// q(μ_it) = N(mean[t], cov[t]) for t = 0..=T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorState {
    pub mean: Vec<DVector<f64>>,
    pub cov: Vec<FactorCov>,
}

/// q(η_i): entry (k, j) is N(mean[(k, j)], var[k]) independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadingState {
    pub mean: DMatrix<f64>,
    pub var: DVector<f64>,
}

/// Per-subject variational parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectLocal {
    /// κ_ir = q(z_i = r).
    pub resp: Vec<f64>,
    pub factors: Option<FactorState>,
    pub loadings: Option<LoadingState>,
}

impl SubjectLocal {
    /// Starting point: uniform κ, factors at μ_0 with identity covariance,
    /// zero loadings with unit variances. The spatio-temporal model gets a
    /// small seeded perturbation of the factor means since ξ = 0, μ = μ_0 is
    /// a stationary point of the updates.
    pub fn init(model: &Model, subject_id: u64) -> Self {
        let cfg = &model.config;
        let r_max = cfg.truncation;
        let dim = cfg.factor_dim();
        let factors = cfg.variant.has_factors().then(|| {
            let mu0 = model.hyper.mu0_vector(dim);
            let mut mean = vec![mu0; cfg.times + 1];
            if cfg.variant == Variant::SpatioTemporal {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(subject_id.wrapping_add(1));
                for m in mean.iter_mut().skip(1) {
                    for v in m.iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *v += 0.1 * z;
                    }
                }
            }
            let cov = (0..=cfg.times)
                .map(|_| match cfg.variant {
                    Variant::TemporalOnly => FactorCov::Diagonal(DVector::from_element(dim, 1.0)),
                    _ => FactorCov::Full(DMatrix::identity(dim, dim)),
                })
                .collect();
            FactorState { mean, cov }
        });
        let loadings = cfg.variant.has_loadings().then(|| {
            let m = if cfg.variant == Variant::SpatioTemporal {
                cfg.factors
            } else {
                1
            };
            LoadingState {
                mean: DMatrix::zeros(cfg.sites, m),
                var: DVector::from_element(cfg.sites, 1.0),
            }
        });
        SubjectLocal {
            resp: vec![1.0 / r_max as f64; r_max],
            factors,
            loadings,
        }
    }
}

/// One subject's responses and covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectData {
    id: u64,
    y: Vec<DVector<f64>>,
    x: Vec<DMatrix<f64>>,
    gram: DMatrix<f64>,
}

impl SubjectData {
    /// `y[t]` has length K, `x[t]` is K × g.
    pub fn new(id: u64, y: Vec<DVector<f64>>, x: Vec<DMatrix<f64>>) -> Result<Self> {
        if y.is_empty() || y.len() != x.len() {
            return Err(Error::Data(format!(
                "subject {id}: {} response vectors but {} design matrices",
                y.len(),
                x.len()
            )));
        }
        let k = y[0].len();
        let g = x[0].ncols();
        if k == 0 || g == 0 {
            return Err(Error::Data(format!(
                "subject {id}: empty response or design"
            )));
        }
        for (t, (yt, xt)) in y.iter().zip(&x).enumerate() {
            if yt.len() != k || xt.nrows() != k || xt.ncols() != g {
                return Err(Error::Data(format!(
                    "subject {id}, time {t}: inconsistent shapes"
                )));
            }
            if yt.iter().chain(xt.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "subject {id}, time {t}: non-finite value"
                )));
            }
        }
        let mut gram = DMatrix::zeros(g, g);
        for xt in &x {
            gram += xt.tr_mul(xt);
        }
        Ok(SubjectData { id, y, x, gram })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn times(&self) -> usize {
        self.y.len()
    }

    pub fn sites(&self) -> usize {
        self.y[0].len()
    }

    pub fn covariates(&self) -> usize {
        self.x[0].ncols()
    }

    pub fn y(&self, t: usize) -> &DVector<f64> {
        &self.y[t]
    }

    pub fn x(&self, t: usize) -> &DMatrix<f64> {
        &self.x[t]
    }

    /// Σ_t X_t'X_t.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn check_shape(&self, config: &ModelConfig) -> Result<()> {
        if self.sites() != config.sites
            || self.times() != config.times
            || self.covariates() != config.covariates
        {
            return Err(Error::Data(format!(
                "subject {} has K={}, T={}, g={}; model expects K={}, T={}, g={}",
                self.id,
                self.sites(),
                self.times(),
                self.covariates(),
                config.sites,
                config.times,
                config.covariates
            )));
        }
        Ok(())
    }
}

impl AsRef<SubjectData> for SubjectData {
    fn as_ref(&self) -> &SubjectData {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Simplex,
    NegativeProbability,
    NonPositiveShape,
    NonPositiveRate,
    NotPositiveDefinite,
    NonPositiveVariance,
    NonPositiveBeta,
    NonFinite,
    Shape,
}

/// One failed invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub location: String,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match self.kind {
            ViolationKind::Simplex => "simplex violation",
            ViolationKind::NegativeProbability => "negative probability",
            ViolationKind::NonPositiveShape => "gamma shape must be positive",
            ViolationKind::NonPositiveRate => "gamma rate must be positive",
            ViolationKind::NotPositiveDefinite => "matrix must be positive definite",
            ViolationKind::NonPositiveVariance => "variance must be positive",
            ViolationKind::NonPositiveBeta => "beta parameters must be positive",
            ViolationKind::NonFinite => "non-finite value",
            ViolationKind::Shape => "inconsistent dimensions",
        };
        write!(f, "{}: {msg}", self.location)
    }
}

/// Invariant checks that report rather than fail.
pub trait Validate {
    fn violations(&self) -> Vec<Violation>;
}

/// `Ok(())` when every invariant holds, else the full violation list.
pub fn validate<T: Validate + ?Sized>(state: &T) -> std::result::Result<(), Vec<Violation>> {
    let v = state.violations();
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

const SIMPLEX_TOL: f64 = 1e-10;

fn check_simplex(out: &mut Vec<Violation>, name: &str, p: &[f64]) {
    if p.iter().any(|x| !x.is_finite()) {
        out.push(Violation {
            location: name.into(),
            kind: ViolationKind::NonFinite,
        });
        return;
    }
    if let Some(i) = p.iter().position(|&x| x < 0.0) {
        out.push(Violation {
            location: format!("{name}[{i}]"),
            kind: ViolationKind::NegativeProbability,
        });
    }
    if (p.iter().sum::<f64>() - 1.0).abs() > SIMPLEX_TOL {
        out.push(Violation {
            location: name.into(),
            kind: ViolationKind::Simplex,
        });
    }
}

fn check_gamma(out: &mut Vec<Violation>, name: &str, g: &GammaParams) {
    if !(g.shape > 0.0) || !g.shape.is_finite() {
        out.push(Violation {
            location: format!("{name}.shape"),
            kind: ViolationKind::NonPositiveShape,
        });
    }
    if !(g.rate > 0.0) || !g.rate.is_finite() {
        out.push(Violation {
            location: format!("{name}.rate"),
            kind: ViolationKind::NonPositiveRate,
        });
    }
}

impl Validate for GlobalState {
    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        check_gamma(&mut out, "noise", &self.noise);
        check_gamma(&mut out, "alpha", &self.alpha);
        check_gamma(&mut out, "tau", &self.tau);
        if !self.rho_probs.is_empty() {
            check_simplex(&mut out, "rho_probs", &self.rho_probs);
        }
        let r_max = self.components();
        if self.theta.len() != r_max
            || self.beta_cov.len() != r_max
            || self.sticks.len() + 1 != r_max.max(1)
        {
            out.push(Violation {
                location: "components".into(),
                kind: ViolationKind::Shape,
            });
        }
        for (r, t) in self.theta.iter().enumerate() {
            check_gamma(&mut out, &format!("theta[{r}]"), t);
        }
        for (r, c) in self.beta_cov.iter().enumerate() {
            if c.iter().any(|x| !x.is_finite()) || c.clone().cholesky().is_none() {
                out.push(Violation {
                    location: format!("beta_cov[{r}]"),
                    kind: ViolationKind::NotPositiveDefinite,
                });
            }
        }
        for (r, m) in self.beta_mean.iter().enumerate() {
            if m.iter().any(|x| !x.is_finite()) {
                out.push(Violation {
                    location: format!("beta_mean[{r}]"),
                    kind: ViolationKind::NonFinite,
                });
            }
        }
        for (r, s) in self.sticks.iter().enumerate() {
            if !(s.a > 0.0 && s.b > 0.0) || !s.a.is_finite() || !s.b.is_finite() {
                out.push(Violation {
                    location: format!("sticks[{r}]"),
                    kind: ViolationKind::NonPositiveBeta,
                });
            }
        }
        out
    }
}

impl Validate for SubjectLocal {
    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        check_simplex(&mut out, "resp", &self.resp);
        if let Some(f) = &self.factors {
            for (t, c) in f.cov.iter().enumerate() {
                if !c.is_positive_definite() {
                    out.push(Violation {
                        location: format!("factor_cov[{t}]"),
                        kind: ViolationKind::NotPositiveDefinite,
                    });
                }
            }
            if f.mean.iter().any(|m| m.iter().any(|x| !x.is_finite())) {
                out.push(Violation {
                    location: "factor_mean".into(),
                    kind: ViolationKind::NonFinite,
                });
            }
        }
        if let Some(l) = &self.loadings {
            if let Some(k) = l.var.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
                out.push(Violation {
                    location: format!("loading_var[{k}]"),
                    kind: ViolationKind::NonPositiveVariance,
                });
            }
            if l.mean.iter().any(|x| !x.is_finite()) {
                out.push(Violation {
                    location: "loading_mean".into(),
                    kind: ViolationKind::NonFinite,
                });
            }
        }
        out
    }
}
