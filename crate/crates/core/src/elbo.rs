//! Evidence lower bound, split into its expectation terms.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GammaParams, GlobalState, Model, SubjectData, SubjectLocal, Variant};
use crate::special::{digamma_unchecked, ln_beta_unchecked, ln_gamma_unchecked, ln_two_pi};
use crate::stats::{component_sq, subject_stats, Expectations, SubjectStats};

/// Each field is `E_q[log p(·)] − E_q[log q(·)]` for one block of variables.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ElboTerms {
    pub likelihood: f64,
    pub allocations: f64,
    pub sticks: f64,
    pub concentration: f64,
    pub noise: f64,
    pub walk_precisions: f64,
    pub coefficients: f64,
    pub factors: f64,
    pub loadings: f64,
    pub spatial_precision: f64,
    pub spatial_dependence: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        self.likelihood
            + self.allocations
            + self.sticks
            + self.concentration
            + self.noise
            + self.walk_precisions
            + self.coefficients
            + self.factors
            + self.loadings
            + self.spatial_precision
            + self.spatial_dependence
    }

    fn check(&self) -> Result<()> {
        for (term, value) in [
            ("likelihood", self.likelihood),
            ("allocations", self.allocations),
            ("sticks", self.sticks),
            ("concentration", self.concentration),
            ("noise", self.noise),
            ("walk_precisions", self.walk_precisions),
            ("coefficients", self.coefficients),
            ("factors", self.factors),
            ("loadings", self.loadings),
            ("spatial_precision", self.spatial_precision),
            ("spatial_dependence", self.spatial_dependence),
        ] {
            if !value.is_finite() {
                return Err(Error::NonFiniteTerm { term, value });
            }
        }
        Ok(())
    }
}

/// `E[log Ga(x; prior)] − E[log Ga(x; post)]` with x ~ Ga(post).
pub fn gamma_term(prior: GammaParams, post: GammaParams) -> f64 {
    let (a, b) = (prior.shape, prior.rate);
    let (at, bt) = (post.shape, post.rate);
    let elog = digamma_unchecked(at) - bt.ln();
    a * b.ln() - at * bt.ln() - ln_gamma_unchecked(a) + ln_gamma_unchecked(at) + (a - at) * elog
        - (b - bt) * at / bt
}

fn ln_det_spd(m: &DMatrix<f64>) -> f64 {
    match m.clone().cholesky() {
        Some(c) => 2.0 * c.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>(),
        None => f64::NAN,
    }
}

pub(crate) fn global_terms(model: &Model, global: &GlobalState, terms: &mut ElboTerms) {
    let hyp = &model.hyper;
    let cfg = &model.config;
    terms.noise = gamma_term(hyp.noise, global.noise);
    terms.concentration = gamma_term(hyp.alpha, global.alpha);
    if cfg.variant.has_factors() {
        terms.walk_precisions = global.theta.iter().map(|t| gamma_term(hyp.theta, *t)).sum();
    }
    let alpha_log = global.alpha.mean_log();
    let alpha_mean = global.alpha.mean();
    terms.sticks = global
        .sticks
        .iter()
        .map(|v| {
            let (el, el1m) = (v.mean_log(), v.mean_log1m());
            alpha_log + (alpha_mean - 1.0) * el1m + ln_beta_unchecked(v.a, v.b)
                - (v.a - 1.0) * el
                - (v.b - 1.0) * el1m
        })
        .sum();

    let g = cfg.covariates as f64;
    let prior_prec = hyp
        .sigma0
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .unwrap_or_else(|| DMatrix::from_element(hyp.sigma0.nrows(), hyp.sigma0.ncols(), f64::NAN));
    let ld0 = ln_det_spd(&hyp.sigma0);
    terms.coefficients = global
        .beta_mean
        .iter()
        .zip(&global.beta_cov)
        .map(|(m, c)| {
            let d = m - &hyp.beta0;
            0.5 * ln_det_spd(c)
                - 0.5 * ld0
                - 0.5 * prior_prec.component_mul(c).sum()
                - 0.5 * (&prior_prec * &d).dot(&d)
                + 0.5 * g
        })
        .sum();

    if let Some(car) = model.car() {
        terms.spatial_precision = gamma_term(hyp.tau, global.tau);
        terms.spatial_dependence = global
            .rho_probs
            .iter()
            .zip(car.rho_prior())
            .map(|(&p, &phi)| {
                if p > 0.0 {
                    p * (phi.ln() - p.ln())
                } else {
                    0.0
                }
            })
            .sum();
    }
}

pub(crate) fn subject_terms(
    model: &Model,
    data: &SubjectData,
    local: &SubjectLocal,
    stats: &SubjectStats,
    global: &GlobalState,
    ex: &Expectations,
    terms: &mut ElboTerms,
) {
    let cfg = &model.config;
    let (k, t) = (cfg.sites as f64, cfg.times as f64);
    let l2pi = ln_two_pi();

    let mut sq = 0.0;
    for (r, &kr) in local.resp.iter().enumerate() {
        if kr > 0.0 {
            sq += kr
                * component_sq(
                    stats,
                    data.gram(),
                    &global.beta_mean[r],
                    &global.beta_cov[r],
                );
            terms.allocations += kr * (ex.elog_pi[r] - kr.ln());
        }
    }
    terms.likelihood += 0.5 * k * t * (ex.noise_log - l2pi) - 0.5 * ex.noise * sq;

    if cfg.variant.has_factors() {
        let m = cfg.factor_dim() as f64;
        let var0 = model.hyper.mu0_var;
        let mut v = -0.5 * m * (l2pi + var0.ln()) - stats.init_sq / (2.0 * var0);
        for (r, &kr) in local.resp.iter().enumerate() {
            if kr > 0.0 {
                v +=
                    kr * (0.5 * m * t * (ex.theta_log[r] - l2pi) - 0.5 * ex.theta[r] * stats.ar_sq);
            }
        }
        v += 0.5 * stats.factor_log_det + 0.5 * m * (t + 1.0) * (1.0 + l2pi);
        terms.factors += v;
    }

    if let Some(car) = model.car() {
        let m = match cfg.variant {
            Variant::SpatioTemporal => cfg.factors,
            _ => 1,
        } as f64;
        let exp_log_det: f64 = global
            .rho_probs
            .iter()
            .zip(car.grid_log_dets())
            .map(|(p, d)| p * d)
            .sum();
        let prior = m
            * (-0.5 * k * l2pi + 0.5 * k * ex.tau_log - 0.5 * car.log_det_omega()
                + 0.5 * exp_log_det)
            - 0.5 * ex.tau * (stats.diag_quad - ex.rho * stats.nb_quad + m * stats.psi_weighted);
        let entropy = m * (0.5 * k * (1.0 + l2pi) + 0.5 * stats.log_psi_sum);
        terms.loadings += prior + entropy;
    }
}

/// All eleven terms of the bound.
pub fn elbo_terms(
    model: &Model,
    dataset: &[SubjectData],
    locals: &[SubjectLocal],
    global: &GlobalState,
) -> Result<ElboTerms> {
    let stats: Vec<SubjectStats> = dataset
        .iter()
        .zip(locals)
        .map(|(d, l)| subject_stats(model, d, l))
        .collect();
    let order: Vec<usize> = (0..dataset.len()).collect();
    elbo_terms_with(model, dataset, locals, &stats, &order, global)
}

pub(crate) fn elbo_terms_with(
    model: &Model,
    dataset: &[SubjectData],
    locals: &[SubjectLocal],
    stats: &[SubjectStats],
    order: &[usize],
    global: &GlobalState,
) -> Result<ElboTerms> {
    if dataset.len() != locals.len() {
        return Err(Error::Config(format!(
            "{} subjects but {} local states",
            dataset.len(),
            locals.len()
        )));
    }
    let ex = Expectations::new(model, global);
    let mut terms = ElboTerms::default();
    global_terms(model, global, &mut terms);
    for &i in order {
        subject_terms(
            model,
            &dataset[i],
            &locals[i],
            &stats[i],
            global,
            &ex,
            &mut terms,
        );
    }
    terms.check()?;
    Ok(terms)
}

pub fn elbo(
    model: &Model,
    dataset: &[SubjectData],
    locals: &[SubjectLocal],
    global: &GlobalState,
) -> Result<f64> {
    Ok(elbo_terms(model, dataset, locals, global)?.total())
}

/// The part of the bound that depends on one subject's local parameters,
/// with the globals held fixed.
pub fn subject_bound(
    model: &Model,
    data: &SubjectData,
    local: &SubjectLocal,
    global: &GlobalState,
) -> f64 {
    let ex = Expectations::new(model, global);
    let stats = subject_stats(model, data, local);
    let mut terms = ElboTerms::default();
    subject_terms(model, data, local, &stats, global, &ex, &mut terms);
    terms.total()
}

fn blend_gamma(h: f64, prev: GammaParams, prior: GammaParams) -> GammaParams {
    GammaParams::new(
        (1.0 - h) * prev.shape + h * prior.shape,
        (1.0 - h) * prev.rate + h * prior.rate,
    )
}

/// Objective maximized by one online step: the subject's bound plus every
/// global factor's log-density ratio against the discounted pseudo-prior
/// `(1 − h) · prev + h · prior` (in natural parameters).
pub fn online_objective(
    model: &Model,
    prev: &GlobalState,
    h: f64,
    global: &GlobalState,
    local: &SubjectLocal,
    data: &SubjectData,
) -> Result<f64> {
    let hyp = &model.hyper;
    let cfg = &model.config;
    let mut value = subject_bound(model, data, local, global);
    value += gamma_term(blend_gamma(h, prev.noise, hyp.noise), global.noise);
    if cfg.variant.has_factors() {
        for (p, q) in prev.theta.iter().zip(&global.theta) {
            value += gamma_term(blend_gamma(h, *p, hyp.theta), *q);
        }
    }
    value += gamma_term(blend_gamma(h, prev.alpha, hyp.alpha), global.alpha);
    let alpha_mean = global.alpha.mean();
    let alpha_log = global.alpha.mean_log();
    for (p, q) in prev.sticks.iter().zip(&global.sticks) {
        let a0 = (1.0 - h) * p.a + h;
        let b0 = (1.0 - h) * p.b + h * alpha_mean;
        value += ln_beta_unchecked(q.a, q.b) - (1.0 - h) * ln_beta_unchecked(p.a, p.b)
            + h * alpha_log
            + (a0 - q.a) * q.mean_log()
            + (b0 - q.b) * q.mean_log1m();
    }
    let prior_prec = hyp
        .sigma0
        .clone()
        .cholesky()
        .ok_or_else(|| {
            Error::numerical("online objective", "prior covariance not positive definite")
        })?
        .inverse();
    for r in 0..global.components() {
        let prev_prec = prev.beta_cov[r]
            .clone()
            .cholesky()
            .ok_or_else(|| {
                Error::numerical("online objective", "covariance not positive definite")
            })?
            .inverse();
        let p0 = &prev_prec * (1.0 - h) + &prior_prec * h;
        let lin = &prev_prec * &prev.beta_mean[r] * (1.0 - h) + &prior_prec * &hyp.beta0 * h;
        let chol = p0.clone().cholesky().ok_or_else(|| {
            Error::numerical(
                "online objective",
                "pseudo-prior precision not positive definite",
            )
        })?;
        let m0 = chol.solve(&lin);
        let d = &global.beta_mean[r] - m0;
        let g = d.len() as f64;
        value += 0.5 * ln_det_spd(&global.beta_cov[r]) + 0.5 * ln_det_spd(&p0)
            - 0.5 * p0.component_mul(&global.beta_cov[r]).sum()
            - 0.5 * (&p0 * &d).dot(&d)
            + 0.5 * g;
    }
    if let Some(car) = model.car() {
        value += gamma_term(blend_gamma(h, prev.tau, hyp.tau), global.tau);
        let logits: Vec<f64> = prev
            .rho_logits
            .iter()
            .zip(car.rho_prior())
            .map(|(l, p)| (1.0 - h) * l + h * p.ln())
            .collect();
        let lse = crate::special::log_sum_exp(&logits);
        value += global
            .rho_probs
            .iter()
            .zip(&logits)
            .map(|(&q, l)| if q > 0.0 { q * (l - lse - q.ln()) } else { 0.0 })
            .sum::<f64>();
    }
    if !value.is_finite() {
        return Err(Error::NonFiniteTerm {
            term: "online objective",
            value,
        });
    }
    Ok(value)
}
