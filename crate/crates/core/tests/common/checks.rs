//! Property checks shared by the integration tests and the acceptance run.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ovb_core::mcmc::init_state;
use ovb_core::{
    fit_online, gibbs_sweep, process_subject, read_checkpoint, run_mcmc, summarize, update_global,
    update_local, validate, write_checkpoint, Checkpoint, DiscountSchedule, GlobalState,
    Hyperparams, McmcOptions, Model, ModelConfig, OnlineState, StreamFitOptions, SubjectData,
    SubjectLocal, Variant,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{random_instance, VARIANTS};

fn check_global(g: &GlobalState, what: &str) -> Result<(), String> {
    validate(g).map_err(|v| format!("{what}: {}", v[0]))?;
    if !g.rho_probs.is_empty() && (g.rho_probs.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
        return Err(format!("{what}: rho probabilities off the simplex"));
    }
    Ok(())
}

fn check_local(l: &SubjectLocal, what: &str) -> Result<(), String> {
    validate(l).map_err(|v| format!("{what}: {}", v[0]))?;
    if (l.resp.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
        return Err(format!("{what}: allocation row off the simplex"));
    }
    Ok(())
}

/// Runs random batch local and global updates, online subject steps and
/// sampler sweeps on random small instances of every variant until
/// `updates` updates have been checked; returns the count.
pub fn normalization_fuzz(updates: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut done = 0;
    while done < updates {
        let variant = VARIANTS[rng.random_range(0..VARIANTS.len())];
        let (model, data) = random_instance(rng.random(), variant);
        let tag = format!("{variant} instance");
        match rng.random_range(0..3) {
            0 => {
                let mut global = ovb_core::init_global(&model);
                let mut locals: Vec<SubjectLocal> = data
                    .iter()
                    .map(|d| SubjectLocal::init(&model, d.id()))
                    .collect();
                for _ in 0..3 {
                    for (d, l) in data.iter().zip(locals.iter_mut()) {
                        *l = update_local(&model, d, l, &global).map_err(|e| e.to_string())?;
                        check_local(l, &format!("{tag}, batch local"))?;
                        done += 1;
                    }
                    global = update_global(&model, &data, &locals, &global)
                        .map_err(|e| e.to_string())?;
                    check_global(&global, &format!("{tag}, batch global"))?;
                    done += 1;
                }
            }
            1 => {
                let schedule = match rng.random_range(0..4) {
                    0 => DiscountSchedule::Reciprocal,
                    1 => DiscountSchedule::Power { omega: 0.75 },
                    2 => DiscountSchedule::Constant { h: 0.2 },
                    _ => DiscountSchedule::None,
                };
                let opts = StreamFitOptions {
                    schedule,
                    ..Default::default()
                };
                let mut state = OnlineState::new(&model);
                for d in &data {
                    let trace =
                        process_subject(&model, &mut state, d, &opts).map_err(|e| e.to_string())?;
                    if (trace.resp.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
                        return Err(format!("{tag}, online: allocation row off the simplex"));
                    }
                    check_global(&state.global, &format!("{tag}, online"))?;
                    done += 1;
                }
            }
            _ => {
                let mut srng = ChaCha8Rng::seed_from_u64(rng.random());
                let mut state = init_state(&model, &data, &mut srng).map_err(|e| e.to_string())?;
                for _ in 0..5 {
                    gibbs_sweep(&model, &data, &mut state, &mut srng, None)
                        .map_err(|e| e.to_string())?;
                    state
                        .validate(&model, data.len())
                        .map_err(|e| format!("{tag}, sampler: {e}"))?;
                    if (state.weights().iter().sum::<f64>() - 1.0).abs() > 1e-10 {
                        return Err(format!("{tag}, sampler: weights off the simplex"));
                    }
                    done += 1;
                }
            }
        }
    }
    Ok(done)
}

/// Ten-subject online run, uninterrupted versus checkpointed after five
/// subjects and resumed from disk. Returns whether the final states agree
/// bit for bit, for every variant.
pub fn resume_equivalence(dir: &Path) -> Result<(), String> {
    for (i, variant) in VARIANTS.iter().enumerate() {
        let (mut model, _) = random_instance(100 + i as u64, *variant);
        model.config.truncation = 3;
        let model = Model::new(model.config, model.hyper, model.car).map_err(|e| e.to_string())?;
        let data = stream_of(&model, 10, 5 + i as u64);
        let opts = StreamFitOptions::default();
        let full = fit_online(&model, data.iter().map(Ok), &opts, None, None)
            .map_err(|e| e.to_string())?;

        let first = fit_online(&model, data[..5].iter().map(Ok), &opts, None, None)
            .map_err(|e| e.to_string())?;
        let state = OnlineState {
            global: first.global,
            processed: 5,
        };
        let path = dir.join(format!("resume_{i}.ckpt"));
        write_checkpoint(&path, &Checkpoint::new(&model, opts.schedule, &state))
            .map_err(|e| e.to_string())?;
        let ckpt = read_checkpoint(&path).map_err(|e| e.to_string())?;
        let resumed_model = ckpt.model.build().map_err(|e| e.to_string())?;
        let resumed = fit_online(
            &resumed_model,
            data[5..].iter().map(Ok),
            &opts,
            Some(ckpt.state()),
            None,
        )
        .map_err(|e| e.to_string())?;
        let a: Vec<u64> = full.global.flatten().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = resumed
            .global
            .flatten()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        if a != b || full.global != resumed.global {
            return Err(format!("{variant}: resumed state differs"));
        }
    }
    Ok(())
}

/// Subjects with two coefficient clusters for the model's shape.
pub fn stream_of(model: &Model, n: usize, seed: u64) -> Vec<SubjectData> {
    let cfg = &model.config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            let x: Vec<DMatrix<f64>> = (0..cfg.times)
                .map(|_| {
                    DMatrix::from_fn(cfg.sites, cfg.covariates, |_, _| {
                        StandardNormal.sample(&mut rng)
                    })
                })
                .collect();
            let y = x
                .iter()
                .map(|xt| {
                    xt * DVector::from_element(cfg.covariates, sign)
                        + DVector::from_fn(cfg.sites, |_, _| StandardNormal.sample(&mut rng))
                })
                .collect();
            SubjectData::new(i as u64, y, x).unwrap()
        })
        .collect()
}

/// Single component, no latent field, noise precision held fixed: the
/// coefficient posterior is normal in closed form. Returns the largest
/// |sampler mean − exact mean| in units of the Monte-Carlo standard error,
/// and the number of retained draws.
pub fn conjugate_check(seed: u64) -> Result<(f64, usize), String> {
    conjugate_check_with(seed, 5000)
}

pub fn conjugate_check_with(seed: u64, iterations: usize) -> Result<(f64, usize), String> {
    let (k, t, g) = (6, 3, 2);
    let mut cfg = ModelConfig::new(Variant::RegressionOnly, k, t, g);
    cfg.truncation = 1;
    let mut hyp = Hyperparams::default_for(&cfg);
    hyp.beta0 = DVector::from_vec(vec![0.5, -0.3]);
    hyp.sigma0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
    let model = Model::new(cfg, hyp.clone(), None).map_err(|e| e.to_string())?;
    let noise = 0.8;
    // the data get their own stream so they are independent of the sampler's draws
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let truth = DVector::from_vec(vec![1.2, -0.7]);
    let data: Vec<SubjectData> = (0..4u64)
        .map(|id| {
            let x: Vec<DMatrix<f64>> = (0..t)
                .map(|_| DMatrix::from_fn(k, g, |_, _| StandardNormal.sample(&mut rng)))
                .collect();
            let y = x
                .iter()
                .map(|xt| xt * &truth + DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng)))
                .collect();
            SubjectData::new(id, y, x).unwrap()
        })
        .collect();

    let prior_prec = hyp.sigma0.clone().try_inverse().unwrap();
    let mut prec = prior_prec.clone();
    let mut lin = &prior_prec * &hyp.beta0;
    for d in &data {
        for tt in 0..t {
            prec += d.x(tt).transpose() * d.x(tt) * noise;
            lin += d.x(tt).transpose() * d.y(tt) * noise;
        }
    }
    let exact = prec.clone().try_inverse().unwrap() * lin;

    let opts = McmcOptions {
        iterations,
        burn_in: 1000,
        thin: 5,
        seed,
        fixed_noise: Some(noise),
        ..Default::default()
    };
    let samples = run_mcmc(&model, &data, &opts).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for j in 0..g {
        let draws: Vec<f64> = samples.draws.iter().map(|d| d.beta[0][j]).collect();
        let s = summarize(&draws).map_err(|e| e.to_string())?;
        let se = s.sd / (draws.len() as f64).sqrt();
        worst = worst.max((s.mean - exact[j]).abs() / se);
    }
    Ok((worst, samples.draws.len()))
}
