//! Coordinate-ascent update of one subject's variational parameters with the
//! global factors held fixed.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{FactorCov, GlobalState, Model, SubjectData, SubjectLocal, Variant};
use crate::special::softmax_in_place;
use crate::stats::{
    component_sq, factor_moments, mixed_beta, mixed_theta, subject_stats, Expectations,
};

/// One pass over the subject's factors (t = 0..=T in order), allocation
/// probabilities, loading variances and loading means.
pub fn update_local(
    model: &Model,
    data: &SubjectData,
    local: &SubjectLocal,
    global: &GlobalState,
) -> Result<SubjectLocal> {
    data.check_shape(&model.config)?;
    if local.resp.len() != global.components() {
        return Err(Error::Config(format!(
            "local state has {} components, global state {}",
            local.resp.len(),
            global.components()
        )));
    }
    let ex = Expectations::new(model, global);
    let mut next = local.clone();
    update_factors(model, data, &mut next, global, &ex)?;
    update_resp(model, data, &mut next, global, &ex);
    update_loadings(model, data, &mut next, global, &ex)?;
    Ok(next)
}

fn residuals(data: &SubjectData, beta: &DVector<f64>) -> Vec<DVector<f64>> {
    (0..data.times())
        .map(|t| data.y(t) - data.x(t) * beta)
        .collect()
}

fn update_factors(
    model: &Model,
    data: &SubjectData,
    local: &mut SubjectLocal,
    global: &GlobalState,
    ex: &Expectations,
) -> Result<()> {
    let SubjectLocal {
        resp,
        factors,
        loadings,
    } = local;
    let Some(f) = factors.as_mut() else {
        return Ok(());
    };
    let cfg = &model.config;
    let dim = cfg.factor_dim();
    let times = cfg.times;
    let s = ex.noise;
    let theta = mixed_theta(ex, resp);
    let resid = residuals(data, &mixed_beta(global, resp));

    let var0 = model.hyper.mu0_var;
    let p0 = 1.0 / var0 + theta;
    f.mean[0] = (model.hyper.mu0_vector(dim) / var0 + &f.mean[1] * theta) / p0;
    f.cov[0] = match cfg.variant {
        Variant::TemporalOnly => FactorCov::Diagonal(DVector::from_element(dim, 1.0 / p0)),
        _ => FactorCov::Full(DMatrix::identity(dim, dim) / p0),
    };

    // E[η'η] for the spatio-temporal model
    let loading_gram = loadings.as_ref().map(|l| {
        let mut b = l.mean.tr_mul(&l.mean);
        let tr_psi = l.var.sum();
        for i in 0..dim {
            b[(i, i)] += tr_psi;
        }
        b
    });

    for t in 1..=times {
        let links = if t < times { 2.0 } else { 1.0 };
        let mut rhs = &f.mean[t - 1] * theta;
        if t < times {
            rhs += &f.mean[t + 1] * theta;
        }
        match cfg.variant {
            Variant::TemporalOnly => {
                let p = s + links * theta;
                rhs.axpy(s, &resid[t - 1], 1.0);
                f.mean[t] = rhs / p;
                f.cov[t] = FactorCov::Diagonal(DVector::from_element(dim, 1.0 / p));
            }
            Variant::SpatioTemporal => {
                let l = loadings
                    .as_ref()
                    .expect("spatio-temporal local has loadings");
                rhs += l.mean.tr_mul(&resid[t - 1]) * s;
                let mut p = loading_gram.as_ref().expect("loadings present") * s;
                for i in 0..dim {
                    p[(i, i)] += links * theta;
                }
                let chol = p.cholesky().ok_or_else(|| {
                    Error::numerical(
                        "factor update",
                        format!("precision at t={t} not positive definite"),
                    )
                })?;
                f.mean[t] = chol.solve(&rhs);
                f.cov[t] = FactorCov::Full(chol.inverse());
            }
            _ => unreachable!("variant without factors"),
        }
    }
    Ok(())
}

/// Log-weights w_r whose softmax is the optimal q(z).
pub(crate) fn allocation_logits(
    model: &Model,
    data: &SubjectData,
    local: &SubjectLocal,
    global: &GlobalState,
    ex: &Expectations,
) -> Vec<f64> {
    let stats = subject_stats(model, data, local);
    let has_factors = model.config.variant.has_factors();
    let half_mt = 0.5 * (model.config.factor_dim() * model.config.times) as f64;
    (0..global.components())
        .map(|r| {
            let mut w = ex.elog_pi[r]
                - 0.5
                    * ex.noise
                    * component_sq(
                        &stats,
                        data.gram(),
                        &global.beta_mean[r],
                        &global.beta_cov[r],
                    );
            if has_factors {
                w += half_mt * ex.theta_log[r] - 0.5 * ex.theta[r] * stats.ar_sq;
            }
            w
        })
        .collect()
}

fn update_resp(
    model: &Model,
    data: &SubjectData,
    local: &mut SubjectLocal,
    global: &GlobalState,
    ex: &Expectations,
) {
    let mut w = allocation_logits(model, data, local, global, ex);
    softmax_in_place(&mut w);
    local.resp = w;
}

fn update_loadings(
    model: &Model,
    data: &SubjectData,
    local: &mut SubjectLocal,
    global: &GlobalState,
    ex: &Expectations,
) -> Result<()> {
    if local.loadings.is_none() {
        return Ok(());
    }
    let car = model.car_ref();
    let moments = factor_moments(model, local);
    let resid = residuals(data, &mixed_beta(global, &local.resp));
    let l = local.loadings.as_mut().expect("checked above");
    let k_sites = model.config.sites;
    let m = l.mean.ncols();
    let s = ex.noise;

    // S = Σ_t E[μ_t μ_t'] and the data pull Σ_t r_tk λ_t for each site
    let mut second = DMatrix::zeros(m, m);
    let mut pull = DMatrix::zeros(m, k_sites);
    for ((lam, cov), r) in moments.iter().zip(&resid) {
        second += lam * lam.transpose() + cov;
        pull += lam * r.transpose();
    }
    let tr_second = second.trace();
    for k in 0..k_sites {
        let d = car.row_sums()[k];
        l.var[k] = m as f64 / (s * tr_second + m as f64 * ex.tau * d);
    }

    // one Gauss–Seidel sweep over site rows
    for k in 0..k_sites {
        let d = car.row_sums()[k];
        let mut a = &second * s;
        for i in 0..m {
            a[(i, i)] += ex.tau * d;
        }
        let mut rhs: DVector<f64> = pull.column(k) * s;
        for (nb, _, w) in car.row(k) {
            rhs += l.mean.row(nb).transpose() * (ex.tau * ex.rho * w);
        }
        let row = if m == 1 {
            rhs / a[(0, 0)]
        } else {
            a.cholesky()
                .ok_or_else(|| {
                    Error::numerical(
                        "loading update",
                        format!("site {k} system not positive definite"),
                    )
                })?
                .solve(&rhs)
        };
        l.mean.set_row(k, &row.transpose());
    }
    Ok(())
}
