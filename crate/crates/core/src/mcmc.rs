//! Blocked Gibbs sampler for the full model, used as a small-scale
//! reference for the variational fits.
//!
//! One sweep draws, in order: allocations; walk precisions and component
//! coefficients; sticks; concentration; factors; loadings; spatial
//! precision; spatial dependence; noise precision.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GammaParams, Model, SubjectData, Variant};
use crate::predictive::MixtureOfNormals;
use crate::special::log_sum_exp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcOptions {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Hold the noise precision at this value instead of sampling it.
    pub fixed_noise: Option<f64>,
    /// Refuse to run when n·K·T exceeds this.
    pub budget: usize,
}

impl Default for McmcOptions {
    fn default() -> Self {
        McmcOptions {
            iterations: 5000,
            burn_in: 1000,
            thin: 5,
            seed: 0,
            fixed_noise: None,
            budget: 2_000_000,
        }
    }
}

impl McmcOptions {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.thin == 0 {
            return Err(Error::Config(
                "iterations and thin must be at least 1".into(),
            ));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in, self.iterations
            )));
        }
        if let Some(s) = self.fixed_noise {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(
                    "fixed noise precision must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Per-subject latent variables.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectDraw {
    /// Factors for t = 0..=T (factor variants only).
    pub factors: Vec<DVector<f64>>,
    /// Loadings, K × m (loading variants only).
    pub loadings: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McmcState {
    pub z: Vec<usize>,
    pub theta: Vec<f64>,
    pub beta: Vec<DVector<f64>>,
    /// R − 1 free sticks; the last is 1.
    pub sticks: Vec<f64>,
    pub alpha: f64,
    pub subjects: Vec<SubjectDraw>,
    pub tau: f64,
    /// Index into the ρ grid.
    pub rho_index: usize,
    pub noise: f64,
}

impl McmcState {
    pub fn weights(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.sticks.len() + 1);
        let mut rest = 1.0;
        for v in &self.sticks {
            out.push(rest * v);
            rest *= 1.0 - v;
        }
        out.push(rest);
        out
    }

    pub fn validate(&self, model: &Model, n: usize) -> Result<()> {
        let r = model.config.truncation;
        let bad = |m: String| Err(Error::Domain(m));
        if self.z.len() != n || self.z.iter().any(|&z| z >= r) {
            return bad("allocation out of range".into());
        }
        if self.sticks.len() + 1 != r || self.sticks.iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
            return bad("sticks must lie in (0, 1)".into());
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("tau", self.tau),
            ("noise", self.noise),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.theta.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return bad("walk precisions must be positive".into());
        }
        if let Some(car) = model.car() {
            if self.rho_index >= car.rho_grid().len() {
                return bad("rho index out of range".into());
            }
        }
        Ok(())
    }
}

fn gamma_draw(rng: &mut ChaCha8Rng, shape: f64, rate: f64, step: &str) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::numerical(step, format!("gamma({shape}, rate {rate}): {e}")))?;
    // Gamma draws can underflow to 0 for tiny shapes.
    Ok(g.sample(rng).max(f64::MIN_POSITIVE))
}

fn beta_draw(rng: &mut ChaCha8Rng, a: f64, b: f64) -> Result<f64> {
    let d =
        Beta::new(a, b).map_err(|e| Error::numerical("sticks", format!("beta({a}, {b}): {e}")))?;
    Ok(d.sample(rng).clamp(f64::EPSILON, 1.0 - f64::EPSILON))
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Draw from N(P⁻¹ b, P⁻¹) for a dense SPD precision P.
fn gaussian_from_precision(
    rng: &mut ChaCha8Rng,
    precision: DMatrix<f64>,
    linear: &DVector<f64>,
    step: &str,
) -> Result<DVector<f64>> {
    let chol = precision
        .cholesky()
        .ok_or_else(|| Error::numerical(step, "conditional precision not positive definite"))?;
    let mean = chol.solve(linear);
    let z = normal_vec(rng, linear.len());
    let l_t = chol.l().transpose();
    let noise = l_t
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::numerical(step, "singular factor"))?;
    Ok(mean + noise)
}

/// Sufficient statistics of one subject under the current latent field.
struct Residuals {
    /// Σ_t ‖Y_t − F_t‖²
    sq: f64,
    /// Σ_t X_t'(Y_t − F_t)
    cross: DVector<f64>,
}

fn fitted(model: &Model, draw: &SubjectDraw, t: usize) -> Option<DVector<f64>> {
    match model.config.variant {
        Variant::RegressionOnly => None,
        Variant::TemporalOnly => Some(draw.factors[t + 1].clone()),
        Variant::SpatialOnly => Some(draw.loadings.as_ref().unwrap().column(0).into_owned()),
        Variant::SpatioTemporal => Some(draw.loadings.as_ref().unwrap() * &draw.factors[t + 1]),
    }
}

fn residuals(model: &Model, data: &SubjectData, draw: &SubjectDraw) -> Residuals {
    let mut sq = 0.0;
    let mut cross = DVector::zeros(data.covariates());
    for t in 0..data.times() {
        let r = match fitted(model, draw, t) {
            Some(f) => data.y(t) - f,
            None => data.y(t).clone(),
        };
        sq += r.norm_squared();
        cross += data.x(t).tr_mul(&r);
    }
    Residuals { sq, cross }
}

fn component_sq(res: &Residuals, gram: &DMatrix<f64>, beta: &DVector<f64>) -> f64 {
    res.sq - 2.0 * beta.dot(&res.cross) + (gram * beta).dot(beta)
}

fn walk_sq(draw: &SubjectDraw) -> f64 {
    draw.factors
        .windows(2)
        .map(|w| (&w[1] - &w[0]).norm_squared())
        .sum()
}

/// Starting state: prior means for the precisions, random allocations and
/// coefficients drawn from their conditional given those allocations.
pub fn init_state(
    model: &Model,
    dataset: &[SubjectData],
    rng: &mut ChaCha8Rng,
) -> Result<McmcState> {
    let cfg = &model.config;
    let hyp = &model.hyper;
    let r_max = cfg.truncation;
    let m = cfg.factor_dim();
    let mu0 = hyp.mu0_vector(m);
    let subjects = dataset
        .iter()
        .map(|_| SubjectDraw {
            factors: if cfg.variant.has_factors() {
                vec![mu0.clone(); cfg.times + 1]
            } else {
                Vec::new()
            },
            loadings: cfg.variant.has_loadings().then(|| {
                DMatrix::zeros(
                    cfg.sites,
                    if cfg.variant == Variant::SpatioTemporal {
                        m
                    } else {
                        1
                    },
                )
            }),
        })
        .collect();
    let mut state = McmcState {
        z: (0..dataset.len())
            .map(|_| rng.random_range(0..r_max))
            .collect(),
        theta: vec![hyp.theta.mean(); r_max],
        beta: vec![hyp.beta0.clone(); r_max],
        sticks: vec![0.5; r_max - 1],
        alpha: hyp.alpha.mean(),
        subjects,
        tau: hyp.tau.mean(),
        rho_index: 0,
        noise: hyp.noise.mean(),
    };
    if cfg.variant.has_factors() {
        for s in &mut state.subjects {
            for t in 1..=cfg.times {
                s.factors[t] = &s.factors[t - 1] + normal_vec(rng, m) * 0.1;
            }
        }
    }
    let res: Vec<Residuals> = dataset
        .iter()
        .zip(&state.subjects)
        .map(|(d, s)| residuals(model, d, s))
        .collect();
    draw_coefficients(model, dataset, &res, &mut state, rng)?;
    Ok(state)
}

fn draw_coefficients(
    model: &Model,
    dataset: &[SubjectData],
    res: &[Residuals],
    state: &mut McmcState,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    for (r, (prec, lin)) in coefficient_conditionals(model, dataset, res, state)?
        .into_iter()
        .enumerate()
    {
        state.beta[r] = gaussian_from_precision(rng, prec, &lin, "coefficients")?;
    }
    Ok(())
}

/// Precision and linear term of each component's coefficient conditional.
fn coefficient_conditionals(
    model: &Model,
    dataset: &[SubjectData],
    res: &[Residuals],
    state: &McmcState,
) -> Result<Vec<(DMatrix<f64>, DVector<f64>)>> {
    let hyp = &model.hyper;
    let prior_prec = hyp
        .sigma0
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical("coefficients", "prior covariance not positive definite"))?
        .inverse();
    let prior_lin = &prior_prec * &hyp.beta0;
    let mut out = vec![(prior_prec, prior_lin); model.config.truncation];
    for ((d, r), &z) in dataset.iter().zip(res).zip(&state.z) {
        out[z].0 += d.gram() * state.noise;
        out[z].1 += &r.cross * state.noise;
    }
    Ok(out)
}

/// One full sweep of the nine conditional draws.
pub fn gibbs_sweep(
    model: &Model,
    dataset: &[SubjectData],
    state: &mut McmcState,
    rng: &mut ChaCha8Rng,
    fixed_noise: Option<f64>,
) -> Result<()> {
    let cfg = &model.config;
    let hyp = &model.hyper;
    let r_max = cfg.truncation;
    let n = dataset.len();
    let m = cfg.factor_dim();
    let has_factors = cfg.variant.has_factors();
    let mut res: Vec<Residuals> = dataset
        .iter()
        .zip(&state.subjects)
        .map(|(d, s)| residuals(model, d, s))
        .collect();

    // 1. allocations
    let log_w: Vec<f64> = state
        .weights()
        .iter()
        .map(|w| w.max(f64::MIN_POSITIVE).ln())
        .collect();
    let mt = (m * cfg.times) as f64;
    for i in 0..n {
        let wsq = if has_factors {
            walk_sq(&state.subjects[i])
        } else {
            0.0
        };
        let logits: Vec<f64> = (0..r_max)
            .map(|r| {
                let mut l = log_w[r]
                    - 0.5 * state.noise * component_sq(&res[i], dataset[i].gram(), &state.beta[r]);
                if has_factors {
                    l += 0.5 * mt * state.theta[r].ln() - 0.5 * state.theta[r] * wsq;
                }
                l
            })
            .collect();
        let lse = log_sum_exp(&logits);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = r_max - 1;
        for (r, l) in logits.iter().enumerate() {
            acc += (l - lse).exp();
            if u < acc {
                pick = r;
                break;
            }
        }
        state.z[i] = pick;
    }
    let mut counts = vec![0usize; r_max];
    for &z in &state.z {
        counts[z] += 1;
    }

    // 2. walk precisions and coefficients
    if has_factors {
        let mut sums = vec![0.0; r_max];
        for (s, &z) in state.subjects.iter().zip(&state.z) {
            sums[z] += walk_sq(s);
        }
        for r in 0..r_max {
            state.theta[r] = gamma_draw(
                rng,
                hyp.theta.shape + 0.5 * mt * counts[r] as f64,
                hyp.theta.rate + 0.5 * sums[r],
                "walk precisions",
            )?;
        }
    }
    draw_coefficients(model, dataset, &res, state, rng)?;

    // 3. sticks
    let mut tail = n;
    for r in 0..r_max - 1 {
        tail -= counts[r];
        state.sticks[r] = beta_draw(rng, 1.0 + counts[r] as f64, state.alpha + tail as f64)?;
    }

    // 4. concentration
    let log1m: f64 = state.sticks.iter().map(|v| (1.0 - v).ln()).sum();
    state.alpha = gamma_draw(
        rng,
        hyp.alpha.shape + (r_max - 1) as f64,
        hyp.alpha.rate - log1m,
        "concentration",
    )?;

    // 5. factors, one time step at a time given its neighbours
    if has_factors {
        let mu0 = hyp.mu0_vector(m);
        for (i, data) in dataset.iter().enumerate() {
            let theta = state.theta[state.z[i]];
            let beta = &state.beta[state.z[i]];
            let s = &mut state.subjects[i];
            for t in 0..=cfg.times {
                let mut prec = DMatrix::zeros(m, m);
                let mut lin = DVector::zeros(m);
                if t == 0 {
                    prec.fill_diagonal(1.0 / hyp.mu0_var);
                    lin += &mu0 / hyp.mu0_var;
                } else {
                    let target = data.y(t - 1) - data.x(t - 1) * beta;
                    match &s.loadings {
                        Some(eta) => {
                            prec += eta.tr_mul(eta) * state.noise;
                            lin += eta.tr_mul(&target) * state.noise;
                        }
                        None => {
                            for j in 0..m {
                                prec[(j, j)] += state.noise;
                            }
                            lin += target * state.noise;
                        }
                    }
                    for j in 0..m {
                        prec[(j, j)] += theta;
                    }
                    lin += &s.factors[t - 1] * theta;
                }
                if t < cfg.times {
                    for j in 0..m {
                        prec[(j, j)] += theta;
                    }
                    lin += &s.factors[t + 1] * theta;
                }
                s.factors[t] = gaussian_from_precision(rng, prec, &lin, "factors")?;
            }
        }
    }

    // 6. loadings, column by column in precision form
    let car = model.car();
    if let (Some(car), true) = (car, cfg.variant.has_loadings()) {
        let rho = car.rho_grid()[state.rho_index];
        let k = cfg.sites;
        for (i, data) in dataset.iter().enumerate() {
            let beta = &state.beta[state.z[i]];
            let s = &mut state.subjects[i];
            let eta = s.loadings.as_mut().unwrap();
            let cols = eta.ncols();
            for j in 0..cols {
                let mut shift = 0.0;
                let mut lin = vec![0.0; k];
                for t in 0..cfg.times {
                    let mu_j = if cfg.variant == Variant::SpatialOnly {
                        1.0
                    } else {
                        s.factors[t + 1][j]
                    };
                    if mu_j == 0.0 {
                        continue;
                    }
                    let mut target = data.y(t) - data.x(t) * beta;
                    if cfg.variant == Variant::SpatioTemporal {
                        for l in (0..cols).filter(|&l| l != j) {
                            target.axpy(-s.factors[t + 1][l], &eta.column(l), 1.0);
                        }
                    }
                    shift += state.noise * mu_j * mu_j;
                    for (acc, v) in lin.iter_mut().zip(target.iter()) {
                        *acc += state.noise * mu_j * v;
                    }
                }
                let chol = car.precision_factor(rho, state.tau, shift)?;
                chol.solve(&mut lin);
                let mut z: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
                chol.solve_upper(&mut z);
                for site in 0..k {
                    eta[(site, j)] = lin[site] + z[site];
                }
            }
        }

        // 7. spatial precision
        let (mut diag, mut nb, mut fields) = (0.0, 0.0, 0usize);
        for s in &state.subjects {
            for col in s.loadings.as_ref().unwrap().column_iter() {
                let v: Vec<f64> = col.iter().copied().collect();
                diag += car.diag_quadratic(&v);
                nb += car.neighbor_quadratic(&v);
                fields += 1;
            }
        }
        state.tau = gamma_draw(
            rng,
            hyp.tau.shape + 0.5 * (fields * k) as f64,
            hyp.tau.rate + 0.5 * (diag - rho * nb),
            "spatial precision",
        )?;

        // 8. spatial dependence on its grid
        let logits: Vec<f64> = car
            .rho_grid()
            .iter()
            .zip(car.rho_prior())
            .zip(car.grid_log_dets())
            .map(|((&r, &p), &ld)| p.ln() + 0.5 * fields as f64 * ld + 0.5 * state.tau * r * nb)
            .collect();
        state.rho_index = sample_index(rng, &logits);
    }

    // 9. noise precision
    state.noise = match fixed_noise {
        Some(s) => s,
        None => {
            for ((d, s), r) in dataset.iter().zip(&state.subjects).zip(res.iter_mut()) {
                *r = residuals(model, d, s);
            }
            let sq: f64 = (0..n)
                .map(|i| component_sq(&res[i], dataset[i].gram(), &state.beta[state.z[i]]))
                .sum();
            let obs = (n * cfg.sites * cfg.times) as f64;
            gamma_draw(
                rng,
                hyp.noise.shape + 0.5 * obs,
                hyp.noise.rate + 0.5 * sq,
                "noise precision",
            )?
        }
    };
    Ok(())
}

fn sample_index(rng: &mut ChaCha8Rng, logits: &[f64]) -> usize {
    let lse = log_sum_exp(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, l) in logits.iter().enumerate() {
        acc += (l - lse).exp();
        if u < acc {
            return i;
        }
    }
    logits.len() - 1
}

/// One retained draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcDraw {
    pub iteration: usize,
    pub noise: f64,
    pub alpha: f64,
    pub tau: f64,
    pub rho: f64,
    pub weights: Vec<f64>,
    pub theta: Vec<f64>,
    pub beta: Vec<DVector<f64>>,
    /// Mean and covariance of each component's coefficient conditional at
    /// this draw (Rao–Blackwellized predictive).
    pub beta_cond_mean: Vec<DVector<f64>>,
    pub beta_cond_cov: Vec<DMatrix<f64>>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcSamples {
    pub draws: Vec<McmcDraw>,
}

pub fn run_mcmc(
    model: &Model,
    dataset: &[SubjectData],
    options: &McmcOptions,
) -> Result<McmcSamples> {
    options.validate()?;
    let cfg = &model.config;
    let size = dataset.len() * cfg.sites * cfg.times;
    if size > options.budget {
        return Err(Error::Budget(format!(
            "n·K·T = {size} exceeds the sampler budget {}; the sampler is meant for small reference runs",
            options.budget
        )));
    }
    if dataset.is_empty() {
        return Err(Error::Data("sampler needs at least one subject".into()));
    }
    for d in dataset {
        d.check_shape(cfg)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut state = init_state(model, dataset, &mut rng)?;
    if let Some(s) = options.fixed_noise {
        state.noise = s;
    }
    let mut draws = Vec::with_capacity(options.retained());
    for it in 1..=options.iterations {
        gibbs_sweep(model, dataset, &mut state, &mut rng, options.fixed_noise)?;
        if it > options.burn_in && (it - options.burn_in).is_multiple_of(options.thin) {
            draws.push(record(model, dataset, &state, it)?);
        }
    }
    Ok(McmcSamples { draws })
}

fn record(
    model: &Model,
    dataset: &[SubjectData],
    state: &McmcState,
    iteration: usize,
) -> Result<McmcDraw> {
    let res: Vec<Residuals> = dataset
        .iter()
        .zip(&state.subjects)
        .map(|(d, s)| residuals(model, d, s))
        .collect();
    let mut means = Vec::new();
    let mut covs = Vec::new();
    for (prec, lin) in coefficient_conditionals(model, dataset, &res, state)? {
        let chol = prec.cholesky().ok_or_else(|| {
            Error::numerical(
                "coefficients",
                "conditional precision not positive definite",
            )
        })?;
        means.push(chol.solve(&lin));
        covs.push(chol.inverse());
    }
    let mut counts = vec![0; model.config.truncation];
    for &z in &state.z {
        counts[z] += 1;
    }
    Ok(McmcDraw {
        iteration,
        noise: state.noise,
        alpha: state.alpha,
        tau: state.tau,
        rho: model.car().map_or(0.0, |c| c.rho_grid()[state.rho_index]),
        weights: state.weights(),
        theta: state.theta.clone(),
        beta: state.beta.clone(),
        beta_cond_mean: means,
        beta_cond_cov: covs,
        counts,
    })
}

impl McmcSamples {
    /// Predictive law of a new subject's coefficients averaged over draws.
    pub fn predictive(&self) -> Result<MixtureOfNormals> {
        if self.draws.is_empty() {
            return Err(Error::Data("no retained draws".into()));
        }
        let scale = 1.0 / self.draws.len() as f64;
        let mut weights = Vec::new();
        let mut means = Vec::new();
        let mut covs = Vec::new();
        for d in &self.draws {
            for r in 0..d.weights.len() {
                weights.push(d.weights[r] * scale);
                means.push(d.beta_cond_mean[r].clone());
                covs.push(d.beta_cond_cov[r].clone());
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        MixtureOfNormals::new(weights, means, covs)
    }

    /// Scalar series by name: noise, alpha, tau, rho.
    pub fn series(&self, name: &str) -> Option<Vec<f64>> {
        let pick: fn(&McmcDraw) -> f64 = match name {
            "noise" => |d| d.noise,
            "alpha" => |d| d.alpha,
            "tau" => |d| d.tau,
            "rho" => |d| d.rho,
            _ => return None,
        };
        Some(self.draws.iter().map(pick).collect())
    }

    /// One row per draw; components are relabelled by increasing first
    /// coefficient within each draw.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let Some(first) = self.draws.first() else {
            return Ok(());
        };
        let (r_max, g) = (first.weights.len(), first.beta[0].len());
        write!(out, "iteration\tnoise\talpha\ttau\trho")?;
        for r in 1..=r_max {
            write!(out, "\tw{r}\ttheta{r}")?;
            for j in 1..=g {
                write!(out, "\tbeta{r}_{j}")?;
            }
        }
        writeln!(out)?;
        for d in &self.draws {
            write!(
                out,
                "{}\t{:e}\t{:e}\t{:e}\t{:e}",
                d.iteration, d.noise, d.alpha, d.tau, d.rho
            )?;
            let mut order: Vec<usize> = (0..r_max).collect();
            order.sort_by(|&a, &b| d.beta[a][0].total_cmp(&d.beta[b][0]));
            for r in order {
                write!(out, "\t{:e}\t{:e}", d.weights[r], d.theta[r])?;
                for v in d.beta[r].iter() {
                    write!(out, "\t{v:e}")?;
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Mean, standard deviation and equal-tail 95% interval.
pub fn summarize(draws: &[f64]) -> Result<Summary> {
    if draws.len() < 2 {
        return Err(Error::Data("a summary needs at least two draws".into()));
    }
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Summary {
        mean,
        sd: var.sqrt(),
        lower: quantile(&sorted, 0.025),
        upper: quantile(&sorted, 0.975),
    })
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Gamma moments, for prior checks.
pub fn gamma_moments(p: GammaParams) -> (f64, f64) {
    (p.shape / p.rate, p.shape / (p.rate * p.rate))
}
