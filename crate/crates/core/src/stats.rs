//! Expectations under q and the per-subject sufficient statistics shared by
//! the local updates, the global updates and the ELBO.

use nalgebra::{DMatrix, DVector};

use crate::model::{FactorCov, GlobalState, Model, SubjectData, SubjectLocal, Variant};

/// Moments of the global factors needed by every update.
#[derive(Debug, Clone)]
pub(crate) struct Expectations {
    pub noise: f64,
    pub noise_log: f64,
    pub theta: Vec<f64>,
    pub theta_log: Vec<f64>,
    pub elog_pi: Vec<f64>,
    pub tau: f64,
    pub tau_log: f64,
    pub rho: f64,
}

impl Expectations {
    pub fn new(model: &Model, global: &GlobalState) -> Self {
        let rho = model.car().map_or(0.0, |c| global.rho_mean(c.rho_grid()));
        Expectations {
            noise: global.noise.mean(),
            noise_log: global.noise.mean_log(),
            theta: global.theta.iter().map(|t| t.mean()).collect(),
            theta_log: global.theta.iter().map(|t| t.mean_log()).collect(),
            elog_pi: global.expected_log_weights(),
            tau: global.tau.mean(),
            tau_log: global.tau.mean_log(),
            rho,
        }
    }
}

/// Per-subject quantities that do not depend on the component index.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SubjectStats {
    /// Σ_t ‖Y_t − F_t‖² with F_t = E[η μ_t].
    pub resid_sq: f64,
    /// Σ_t X_t'(Y_t − F_t).
    pub cross: DVector<f64>,
    /// Σ_t (E‖η μ_t‖² − ‖F_t‖²).
    pub extra_var: f64,
    /// Σ_t E‖μ_t − μ_{t−1}‖².
    pub ar_sq: f64,
    /// ‖λ_0 − μ_0‖² + tr Λ_0.
    pub init_sq: f64,
    /// Σ_t ln|Λ_t| over t = 0..=T.
    pub factor_log_det: f64,
    /// Σ_j Σ_k d_{k+} ξ_kj².
    pub diag_quad: f64,
    /// Σ_j ξ_j' D ξ_j.
    pub nb_quad: f64,
    /// Σ_k d_{k+} ψ_k.
    pub psi_weighted: f64,
    /// Σ_k ln ψ_k.
    pub log_psi_sum: f64,
}

/// E[μ_t] and Cov[μ_t] for t = 1..=T. The spatial-only model has μ ≡ 1.
pub(crate) fn factor_moments(
    model: &Model,
    local: &SubjectLocal,
) -> Vec<(DVector<f64>, DMatrix<f64>)> {
    let times = model.config.times;
    match model.config.variant {
        Variant::SpatialOnly => vec![(DVector::from_element(1, 1.0), DMatrix::zeros(1, 1)); times],
        Variant::SpatioTemporal => {
            let f = local
                .factors
                .as_ref()
                .expect("spatio-temporal local has factors");
            (1..=times)
                .map(|t| {
                    let cov = match &f.cov[t] {
                        FactorCov::Full(m) => m.clone(),
                        FactorCov::Diagonal(d) => DMatrix::from_diagonal(d),
                    };
                    (f.mean[t].clone(), cov)
                })
                .collect()
        }
        _ => Vec::new(),
    }
}

/// Fitted spatio-temporal part F_t and its extra variance V_t for t = 1..=T.
fn fitted_parts(model: &Model, local: &SubjectLocal) -> Vec<(DVector<f64>, f64)> {
    let k = model.config.sites;
    let times = model.config.times;
    match model.config.variant {
        Variant::RegressionOnly => vec![(DVector::zeros(k), 0.0); times],
        Variant::TemporalOnly => {
            let f = local.factors.as_ref().expect("temporal local has factors");
            (1..=times)
                .map(|t| (f.mean[t].clone(), f.cov[t].trace()))
                .collect()
        }
        Variant::SpatioTemporal | Variant::SpatialOnly => {
            let l = local.loadings.as_ref().expect("local has loadings");
            let tr_psi = l.var.sum();
            let gram = l.mean.tr_mul(&l.mean);
            factor_moments(model, local)
                .into_iter()
                .map(|(lam, cov)| {
                    let fitted = &l.mean * &lam;
                    let mut b = gram.clone();
                    for i in 0..b.nrows() {
                        b[(i, i)] += tr_psi;
                    }
                    let v = tr_psi * lam.norm_squared() + (b * cov).trace();
                    (fitted, v)
                })
                .collect()
        }
    }
}

pub(crate) fn subject_stats(
    model: &Model,
    data: &SubjectData,
    local: &SubjectLocal,
) -> SubjectStats {
    let g = model.config.covariates;
    let mut stats = SubjectStats {
        resid_sq: 0.0,
        cross: DVector::zeros(g),
        extra_var: 0.0,
        ar_sq: 0.0,
        init_sq: 0.0,
        factor_log_det: 0.0,
        diag_quad: 0.0,
        nb_quad: 0.0,
        psi_weighted: 0.0,
        log_psi_sum: 0.0,
    };
    for (t, (fitted, v)) in fitted_parts(model, local).into_iter().enumerate() {
        let r = data.y(t) - fitted;
        stats.resid_sq += r.norm_squared();
        stats.cross += data.x(t).tr_mul(&r);
        stats.extra_var += v;
    }
    if let Some(f) = &local.factors {
        let mu0 = model.hyper.mu0_vector(model.config.factor_dim());
        stats.init_sq = (&f.mean[0] - mu0).norm_squared() + f.cov[0].trace();
        for t in 1..f.mean.len() {
            stats.ar_sq += (&f.mean[t] - &f.mean[t - 1]).norm_squared()
                + f.cov[t].trace()
                + f.cov[t - 1].trace();
        }
        stats.factor_log_det = f.cov.iter().map(FactorCov::log_det).sum();
    }
    if let (Some(l), Some(car)) = (&local.loadings, model.car()) {
        for col in l.mean.column_iter() {
            let v: Vec<f64> = col.iter().copied().collect();
            stats.diag_quad += car.diag_quadratic(&v);
            stats.nb_quad += car.neighbor_quadratic(&v);
        }
        stats.psi_weighted = l.var.iter().zip(car.row_sums()).map(|(p, d)| p * d).sum();
        stats.log_psi_sum = l.var.iter().map(|p| p.ln()).sum();
    }
    stats
}

/// Σ_t E‖Y_t − η μ_t − X_t β‖² with β ~ N(mean, cov).
pub(crate) fn component_sq(
    stats: &SubjectStats,
    gram: &DMatrix<f64>,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> f64 {
    stats.resid_sq - 2.0 * mean.dot(&stats.cross)
        + (gram * mean).dot(mean)
        + stats.extra_var
        + gram.component_mul(cov).sum()
}

/// Σ_r κ_r β̃_r.
pub(crate) fn mixed_beta(global: &GlobalState, resp: &[f64]) -> DVector<f64> {
    let mut b = DVector::zeros(global.beta_mean[0].len());
    for (k, m) in resp.iter().zip(&global.beta_mean) {
        b.axpy(*k, m, 1.0);
    }
    b
}

/// Σ_r κ_r E[θ_r].
pub(crate) fn mixed_theta(ex: &Expectations, resp: &[f64]) -> f64 {
    resp.iter().zip(&ex.theta).map(|(k, t)| k * t).sum()
}
