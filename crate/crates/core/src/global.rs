//! Updates of the shared variational factors from per-subject statistics.
//!
//! Batch and online modes share one code path: every natural parameter is
//! `w_prev · previous + w_prior · prior + Σ_subjects statistic`, with
//! `(w_prev, w_prior) = (0, 1)` in batch mode and `(1 − h, h)` for a
//! discounted online step.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{BetaParams, GammaParams, GlobalState, Model, SubjectData, SubjectLocal};
use crate::special::log_sum_exp;
use crate::stats::{component_sq, subject_stats, SubjectStats};

#[derive(Debug, Clone, Copy)]
pub(crate) enum Blend<'a> {
    Batch,
    Discounted { h: f64, prev: &'a GlobalState },
}

impl Blend<'_> {
    fn weights(&self) -> (f64, f64) {
        match *self {
            Blend::Batch => (0.0, 1.0),
            Blend::Discounted { h, .. } => (1.0 - h, h),
        }
    }

    fn prev(&self) -> Option<&GlobalState> {
        match self {
            Blend::Batch => None,
            Blend::Discounted { prev, .. } => Some(prev),
        }
    }
}

/// One subject's contribution to the global update.
pub(crate) struct Contribution<'a> {
    pub stats: &'a SubjectStats,
    pub resp: &'a [f64],
    pub gram: &'a DMatrix<f64>,
}

fn blend_gamma(
    blend: &Blend,
    prev: impl Fn(&GlobalState) -> GammaParams,
    prior: GammaParams,
    shape_stat: f64,
    rate_stat: f64,
) -> GammaParams {
    let (wp, wq) = blend.weights();
    let (ps, pr) = blend.prev().map_or((0.0, 0.0), |g| {
        let p = prev(g);
        (p.shape, p.rate)
    });
    GammaParams::new(
        wp * ps + wq * prior.shape + shape_stat,
        wp * pr + wq * prior.rate + rate_stat,
    )
}

fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::numerical("global update", format!("{what} not positive definite")))
}

/// Sequentially refreshes noise precision, θ_r, β_r, sticks, α, τ and ρ,
/// each using the most recent values of the others.
pub(crate) fn update_global_from(
    model: &Model,
    contributions: &[Contribution],
    current: &GlobalState,
    blend: Blend,
) -> Result<GlobalState> {
    if contributions.is_empty() {
        return Err(Error::Data(
            "global update needs at least one subject".into(),
        ));
    }
    let cfg = &model.config;
    let hyp = &model.hyper;
    let r_max = current.components();
    let (wp, wq) = blend.weights();
    let mut g = current.clone();
    let k = cfg.sites as f64;
    let t = cfg.times as f64;
    let n = contributions.len() as f64;

    // noise precision
    let mut sq = 0.0;
    for c in contributions {
        for r in 0..r_max {
            if c.resp[r] > 0.0 {
                sq += c.resp[r] * component_sq(c.stats, c.gram, &g.beta_mean[r], &g.beta_cov[r]);
            }
        }
    }
    g.noise = blend_gamma(&blend, |p| p.noise, hyp.noise, 0.5 * n * k * t, 0.5 * sq);

    // random-walk precisions
    if cfg.variant.has_factors() {
        let half_mt = 0.5 * (cfg.factor_dim() * cfg.times) as f64;
        for r in 0..r_max {
            let (mut count, mut ar) = (0.0, 0.0);
            for c in contributions {
                count += c.resp[r];
                ar += c.resp[r] * c.stats.ar_sq;
            }
            g.theta[r] = blend_gamma(&blend, |p| p.theta[r], hyp.theta, half_mt * count, 0.5 * ar);
        }
    }

    // component coefficients, in natural parameters
    let s = g.noise.mean();
    let prior_prec = spd_inverse(&hyp.sigma0, "prior covariance")?;
    let prior_lin = &prior_prec * &hyp.beta0;
    for r in 0..r_max {
        let mut prec = &prior_prec * wq;
        let mut lin = &prior_lin * wq;
        if let Some(prev) = blend.prev() {
            if wp != 0.0 {
                let pp = spd_inverse(&prev.beta_cov[r], "previous component covariance")?;
                lin += &pp * &prev.beta_mean[r] * wp;
                prec += pp * wp;
            }
        }
        for c in contributions {
            let kr = c.resp[r];
            if kr > 0.0 {
                prec += c.gram * (s * kr);
                lin += &c.stats.cross * (s * kr);
            }
        }
        let chol = prec.cholesky().ok_or_else(|| {
            Error::numerical(
                "global update",
                format!("component {r} precision not positive definite"),
            )
        })?;
        g.beta_mean[r] = chol.solve(&lin);
        g.beta_cov[r] = chol.inverse();
    }

    // stick-breaking proportions
    let alpha_mean = g.alpha.mean();
    let counts: Vec<f64> = (0..r_max)
        .map(|r| contributions.iter().map(|c| c.resp[r]).sum())
        .collect();
    let mut tail: f64 = counts.iter().sum();
    for r in 0..r_max.saturating_sub(1) {
        tail -= counts[r];
        let (pa, pb) = blend
            .prev()
            .map_or((0.0, 0.0), |p| (p.sticks[r].a, p.sticks[r].b));
        g.sticks[r] = BetaParams {
            a: wp * pa + wq + counts[r],
            b: wp * pb + wq * alpha_mean + tail.max(0.0),
        };
    }

    // concentration
    let log1m: f64 = g.sticks.iter().map(|v| v.mean_log1m()).sum();
    g.alpha = blend_gamma(
        &blend,
        |p| p.alpha,
        hyp.alpha,
        wq * (r_max - 1) as f64,
        -wq * log1m,
    );

    if let Some(car) = model.car() {
        let m = match cfg.variant {
            crate::model::Variant::SpatioTemporal => cfg.factors,
            _ => 1,
        } as f64;
        let rho = g.rho_mean(car.rho_grid());
        let (mut quad, mut nb) = (0.0, 0.0);
        for c in contributions {
            quad += c.stats.diag_quad - rho * c.stats.nb_quad + m * c.stats.psi_weighted;
            nb += c.stats.nb_quad;
        }
        g.tau = blend_gamma(&blend, |p| p.tau, hyp.tau, 0.5 * n * m * k, 0.5 * quad);

        let tau = g.tau.mean();
        let mut logits: Vec<f64> = (0..car.rho_grid().len())
            .map(|l| {
                let prev = blend.prev().map_or(0.0, |p| p.rho_logits[l]);
                wp * prev
                    + wq * car.rho_prior()[l].ln()
                    + 0.5 * n * m * car.grid_log_dets()[l]
                    + 0.5 * tau * car.rho_grid()[l] * nb
            })
            .collect();
        let lse = log_sum_exp(&logits);
        for v in &mut logits {
            *v -= lse;
        }
        g.rho_probs = logits.iter().map(|v| v.exp()).collect();
        let total: f64 = g.rho_probs.iter().sum();
        for p in &mut g.rho_probs {
            *p /= total;
        }
        g.rho_logits = logits;
    }
    Ok(g)
}

/// Recomputes every global factor from all subjects' current local states.
pub fn update_global(
    model: &Model,
    dataset: &[SubjectData],
    locals: &[SubjectLocal],
    global: &GlobalState,
) -> Result<GlobalState> {
    if dataset.len() != locals.len() {
        return Err(Error::Config(format!(
            "{} subjects but {} local states",
            dataset.len(),
            locals.len()
        )));
    }
    let stats: Vec<SubjectStats> = dataset
        .iter()
        .zip(locals)
        .map(|(d, l)| subject_stats(model, d, l))
        .collect();
    let contributions: Vec<Contribution> = stats
        .iter()
        .zip(dataset.iter().zip(locals))
        .map(|(s, (d, l))| Contribution {
            stats: s,
            resp: &l.resp,
            gram: d.gram(),
        })
        .collect();
    update_global_from(model, &contributions, global, Blend::Batch)
}
