#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ovb_core::{build_car, GridSpec, Hyperparams, Model, ModelConfig, SubjectData, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const VARIANTS: [Variant; 4] = [
    Variant::SpatioTemporal,
    Variant::TemporalOnly,
    Variant::SpatialOnly,
    Variant::RegressionOnly,
];

/// A random small model and dataset with roughly two clusters of coefficients.
pub fn random_instance(seed: u64, variant: Variant) -> (Model, Vec<SubjectData>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = rng.random_range(2..=5);
    let cols = rng.random_range(1..=5);
    let k = rows * cols;
    let t = rng.random_range(1..=4);
    let g = rng.random_range(1..=3);
    let n = rng.random_range(2..=10);
    let mut cfg = ModelConfig::new(variant, k, t, g);
    cfg.truncation = rng.random_range(1..=3);
    cfg.factors = rng.random_range(1..=2);
    cfg.seed = seed;
    let car = build_car(GridSpec::Lattice { rows, cols }, 1.0, 1.5, 10, 0.01).unwrap();
    let hyp = Hyperparams::default_for(&cfg);
    let model = Model::new(cfg, hyp, Some(car)).unwrap();
    let data = (0..n)
        .map(|i| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            let x: Vec<DMatrix<f64>> = (0..t)
                .map(|_| DMatrix::from_fn(k, g, |_, _| StandardNormal.sample(&mut rng)))
                .collect();
            let y = x
                .iter()
                .map(|xt| {
                    let beta = DVector::from_element(g, 1.5 * sign);
                    let noise = DVector::from_fn(k, |_, _| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z
                    });
                    xt * beta + noise
                })
                .collect();
            SubjectData::new(i as u64, y, x).unwrap()
        })
        .collect();
    (model, data)
}
pub mod oracle;

/// The n = 2, K = 4 (2 × 2), T = 2, g = 1, R = 2 spatio-temporal instance
/// with a hand-set starting point, swept once by the library and by the
/// scalar oracle. Returns `(name, library, oracle)` for every updated value
/// and every bound term.
pub fn oracle_sweep_pairs() -> Vec<(String, f64, f64)> {
    use ovb_core::{
        elbo_terms, fit_batch_from, BatchFitOptions, BetaParams, FactorCov, FactorState,
        GammaParams, LoadingState, SubjectLocal,
    };
    let (k, t, r_max) = (4usize, 2usize, 2usize);
    let mut cfg = ModelConfig::new(Variant::SpatioTemporal, k, t, 1);
    cfg.truncation = r_max;
    let mut hyp = Hyperparams::default_for(&cfg);
    hyp.noise = GammaParams::new(2.0, 1.5);
    hyp.alpha = GammaParams::new(1.5, 0.7);
    hyp.theta = GammaParams::new(1.2, 0.9);
    hyp.tau = GammaParams::new(1.1, 1.3);
    hyp.mu0 = vec![0.3];
    hyp.mu0_var = 2.0;
    hyp.beta0 = DVector::from_element(1, 0.2);
    hyp.sigma0 = DMatrix::from_element(1, 1, 1.7);
    let car = build_car(GridSpec::Lattice { rows: 2, cols: 2 }, 1.0, 2.0, 10, 0.01).unwrap();
    let model = Model::new(cfg, hyp.clone(), Some(car)).unwrap();
    let ocar = oracle::Car::lattice(2, 2, 1.0, 2.0, 10, 0.01);
    let oh = oracle::Hyper {
        noise: (2.0, 1.5),
        alpha: (1.5, 0.7),
        theta: (1.2, 0.9),
        tau: (1.1, 1.3),
        mu0: 0.3,
        mu0_var: 2.0,
        beta0: 0.2,
        sigma0: 1.7,
    };

    let y_of = |i: usize, t: usize, s: usize| {
        ((i * 7 + t * 3 + s) as f64 * 0.37).sin() * 2.0 + i as f64 - 0.5
    };
    let x_of = |i: usize, t: usize, s: usize| ((i * 5 + t * 11 + s * 2) as f64 * 0.61).cos();
    let mut data = Vec::new();
    let mut odata = Vec::new();
    for i in 0..2 {
        let y: Vec<DVector<f64>> = (0..t)
            .map(|tt| DVector::from_fn(k, |s, _| y_of(i, tt, s)))
            .collect();
        let x: Vec<DMatrix<f64>> = (0..t)
            .map(|tt| DMatrix::from_fn(k, 1, |s, _| x_of(i, tt, s)))
            .collect();
        data.push(SubjectData::new(i as u64, y, x).unwrap());
        odata.push(oracle::Data {
            y: (0..t)
                .map(|tt| (0..k).map(|s| y_of(i, tt, s)).collect())
                .collect(),
            x: (0..t)
                .map(|tt| (0..k).map(|s| x_of(i, tt, s)).collect())
                .collect(),
        });
    }

    let levels = 11;
    let rho_probs: Vec<f64> = {
        let raw: Vec<f64> = (0..levels).map(|l| 1.0 + 0.1 * l as f64).collect();
        let z: f64 = raw.iter().sum();
        raw.iter().map(|v| v / z).collect()
    };
    let mut global = ovb_core::init_global(&model);
    global.noise = GammaParams::new(3.0, 2.0);
    global.alpha = GammaParams::new(2.0, 1.5);
    global.tau = GammaParams::new(3.0, 2.5);
    global.theta = vec![GammaParams::new(2.0, 1.0), GammaParams::new(5.0, 2.0)];
    global.beta_mean = vec![
        DVector::from_element(1, 0.5),
        DVector::from_element(1, -0.8),
    ];
    global.beta_cov = vec![
        DMatrix::from_element(1, 1, 0.3),
        DMatrix::from_element(1, 1, 0.6),
    ];
    global.sticks = vec![BetaParams { a: 1.5, b: 2.0 }];
    global.rho_logits = rho_probs.iter().map(|p| p.ln()).collect();
    global.rho_probs = rho_probs.clone();
    let og = oracle::Global {
        noise: (3.0, 2.0),
        alpha: (2.0, 1.5),
        tau: (3.0, 2.5),
        theta: vec![(2.0, 1.0), (5.0, 2.0)],
        beta: vec![0.5, -0.8],
        beta_var: vec![0.3, 0.6],
        sticks: vec![(1.5, 2.0)],
        rho_probs,
    };

    let mut locals = Vec::new();
    let mut olocals = Vec::new();
    for i in 0..2 {
        let kappa = if i == 0 {
            vec![0.7, 0.3]
        } else {
            vec![0.25, 0.75]
        };
        let lam: Vec<f64> = (0..=t)
            .map(|tt| 0.4 + 0.3 * tt as f64 - 0.2 * i as f64)
            .collect();
        let lam_var: Vec<f64> = (0..=t).map(|tt| 0.5 + 0.1 * tt as f64).collect();
        let xi: Vec<f64> = (0..k)
            .map(|s| 0.2 * s as f64 - 0.3 + 0.1 * i as f64)
            .collect();
        let psi: Vec<f64> = (0..k).map(|s| 0.4 + 0.05 * s as f64).collect();
        locals.push(SubjectLocal {
            resp: kappa.clone(),
            factors: Some(FactorState {
                mean: lam.iter().map(|&v| DVector::from_element(1, v)).collect(),
                cov: lam_var
                    .iter()
                    .map(|&v| FactorCov::Full(DMatrix::from_element(1, 1, v)))
                    .collect(),
            }),
            loadings: Some(LoadingState {
                mean: DMatrix::from_column_slice(k, 1, &xi),
                var: DVector::from_column_slice(&psi),
            }),
        });
        olocals.push(oracle::Local {
            kappa,
            lam,
            lam_var,
            xi,
            psi,
        });
    }

    let fit = fit_batch_from(
        &model,
        &data,
        global,
        locals,
        &BatchFitOptions {
            max_iters: 1,
            ..Default::default()
        },
    )
    .unwrap();
    let new_locals: Vec<oracle::Local> = odata
        .iter()
        .zip(&olocals)
        .map(|(d, l)| oracle::local_update(d, l, &og, &ocar, &oh))
        .collect();
    let new_global = oracle::global_update(&odata, &new_locals, &og, &ocar, &oh);
    let terms = elbo_terms(&model, &data, &fit.locals, &fit.global).unwrap();
    let oterms = oracle::elbo(&odata, &new_locals, &new_global, &ocar, &oh);

    let mut out: Vec<(String, f64, f64)> = Vec::new();
    let mut push = |name: String, a: f64, b: f64| out.push((name, a, b));
    for (i, (l, o)) in fit.locals.iter().zip(&new_locals).enumerate() {
        let f = l.factors.as_ref().unwrap();
        for tt in 0..=t {
            push(
                format!("subject {i} factor mean t={tt}"),
                f.mean[tt][0],
                o.lam[tt],
            );
            push(
                format!("subject {i} factor var t={tt}"),
                f.cov[tt].trace(),
                o.lam_var[tt],
            );
        }
        for r in 0..r_max {
            push(
                format!("subject {i} allocation r={r}"),
                l.resp[r],
                o.kappa[r],
            );
        }
        let ld = l.loadings.as_ref().unwrap();
        for s in 0..k {
            push(
                format!("subject {i} loading mean k={s}"),
                ld.mean[(s, 0)],
                o.xi[s],
            );
            push(
                format!("subject {i} loading var k={s}"),
                ld.var[s],
                o.psi[s],
            );
        }
    }
    let g = &fit.global;
    push("noise shape".into(), g.noise.shape, new_global.noise.0);
    push("noise rate".into(), g.noise.rate, new_global.noise.1);
    push("alpha shape".into(), g.alpha.shape, new_global.alpha.0);
    push("alpha rate".into(), g.alpha.rate, new_global.alpha.1);
    push("tau shape".into(), g.tau.shape, new_global.tau.0);
    push("tau rate".into(), g.tau.rate, new_global.tau.1);
    for r in 0..r_max {
        push(
            format!("theta shape r={r}"),
            g.theta[r].shape,
            new_global.theta[r].0,
        );
        push(
            format!("theta rate r={r}"),
            g.theta[r].rate,
            new_global.theta[r].1,
        );
        push(
            format!("beta mean r={r}"),
            g.beta_mean[r][0],
            new_global.beta[r],
        );
        push(
            format!("beta var r={r}"),
            g.beta_cov[r][(0, 0)],
            new_global.beta_var[r],
        );
    }
    push("stick a".into(), g.sticks[0].a, new_global.sticks[0].0);
    push("stick b".into(), g.sticks[0].b, new_global.sticks[0].1);
    for (l, (a, b)) in g.rho_probs.iter().zip(&new_global.rho_probs).enumerate() {
        push(format!("rho prob l={l}"), *a, *b);
    }
    for (name, a, b) in [
        ("bound likelihood", terms.likelihood, oterms.likelihood),
        ("bound allocations", terms.allocations, oterms.allocations),
        ("bound sticks", terms.sticks, oterms.sticks),
        (
            "bound concentration",
            terms.concentration,
            oterms.concentration,
        ),
        ("bound noise", terms.noise, oterms.noise),
        (
            "bound walk precisions",
            terms.walk_precisions,
            oterms.walk_precisions,
        ),
        (
            "bound coefficients",
            terms.coefficients,
            oterms.coefficients,
        ),
        ("bound factors", terms.factors, oterms.factors),
        ("bound loadings", terms.loadings, oterms.loadings),
        (
            "bound spatial precision",
            terms.spatial_precision,
            oterms.spatial_precision,
        ),
        (
            "bound spatial dependence",
            terms.spatial_dependence,
            oterms.spatial_dependence,
        ),
    ] {
        push(name.into(), a, b);
    }
    push("bound total".into(), *fit.elbo_trace.last().unwrap(), {
        let o = &oterms;
        o.likelihood
            + o.allocations
            + o.sticks
            + o.concentration
            + o.noise
            + o.walk_precisions
            + o.coefficients
            + o.factors
            + o.loadings
            + o.spatial_precision
            + o.spatial_dependence
    });
    out
}

/// |a − b| / max(1, |b|)
pub fn rel_dev(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}
pub mod checks;
