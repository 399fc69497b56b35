use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ovb_core::io::{write_dataset, MANIFEST_FILE, RECORD_VERSION};
use ovb_core::online::Observer;
use ovb_core::predictive::mixing_weights;
use ovb_core::simgen::{Example1, Example1Params, Example2, Example2Params, Generator};
use ovb_core::{
    build_car, fit_batch, fit_online, io, read_checkpoint, run_mcmc, summarize, write_checkpoint,
    write_subject, BatchFitOptions, CarParams, CarStructure, Checkpoint, DatasetManifest, Error,
    FitResult, GridSpec, Hyperparams, LogDetMethod, McmcOptions, MixtureOfNormals, Model,
    ModelConfig, OnlineState, Result, StreamFitOptions, SubjectData, SubjectRecord, Variant,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::args::{ConvertArgs, ExportCarArgs, FitArgs, Mode, PredictArgs, SimulateArgs};
use crate::run::RunDir;
use crate::summary::{components, export_density, gamma_interval, inverse_gamma_interval};

pub const SUMMARY_FILE: &str = "summary.json";
pub const DENSITY_FILE: &str = "density.tsv";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const DRAWS_FILE: &str = "draws.tsv";
pub const SUBJECTS_FILE: &str = "subjects.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Done,
    NotConverged,
}

pub fn simulate(args: &SimulateArgs, run: &mut RunDir) -> Result<Status> {
    let (generator, grid) = match args.example {
        1 => {
            if args.sites.is_some_and(|k| k != 1) {
                return Err(Error::Config("design 1 has a single site; drop --K".into()));
            }
            let params = Example1Params {
                n: args.n.unwrap_or(10_000),
                times: args.times.unwrap_or(50),
                ..Default::default()
            };
            (
                Generator::RandomWalk(Example1::new(params, args.seed)?),
                None,
            )
        }
        e => {
            let sites = args.sites.unwrap_or(if e == 2 { 400 } else { 100 });
            let (n, times) = (args.n.unwrap_or(100), args.times.unwrap_or(5));
            let params = if e == 2 {
                Example2Params::new(sites, n, times)
            } else {
                Example2Params::regression_only(sites, n, times)
            };
            let grid = params.grid()?;
            (
                Generator::Spatial(Example2::new(params, args.seed)?),
                Some(grid),
            )
        }
    };
    if generator.n() == 0 {
        return Err(Error::Config("--n must be at least 1".into()));
    }
    let manifest = write_dataset(
        run.dir(),
        generator.stream(),
        generator.population(),
        grid,
        Some(args.seed),
    )?;
    for f in &manifest.subjects {
        run.output(f.display().to_string());
    }
    run.output("truth.json");
    run.output(MANIFEST_FILE);
    eprintln!(
        "wrote {} subjects to {}",
        manifest.subjects.len(),
        run.dir().display()
    );
    Ok(Status::Done)
}

/// Accepts a dataset directory or the manifest file itself.
fn load_manifest(path: &Path) -> Result<(DatasetManifest, PathBuf)> {
    let file = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((DatasetManifest::load(&file)?, dir))
}

fn infer_variant(manifest: &DatasetManifest) -> Result<Variant> {
    match manifest.example {
        Some(1) => Ok(Variant::TemporalOnly),
        Some(2) => Ok(Variant::SpatialOnly),
        Some(3) => Ok(Variant::RegressionOnly),
        _ => Err(Error::Config(
            "cannot infer the model variant; pass --variant".into(),
        )),
    }
}

fn build_model(args: &FitArgs, manifest: &DatasetManifest) -> Result<Model> {
    let variant = match args.variant {
        Some(v) => v,
        None => infer_variant(manifest)?,
    };
    let mut cfg = ModelConfig::new(variant, manifest.sites, manifest.times, manifest.covariates);
    cfg.truncation = args.truncation;
    cfg.factors = args.factors;
    cfg.seed = args.seed;
    let car = if variant.has_loadings() {
        let grid = args
            .grid
            .or(manifest.grid)
            .or_else(|| GridSpec::square(manifest.sites))
            .ok_or_else(|| {
                Error::Config("the spatial prior needs a lattice; pass --grid".into())
            })?;
        if grid.sites() != manifest.sites {
            return Err(Error::Config(format!(
                "grid has {} sites but the data have K={}",
                grid.sites(),
                manifest.sites
            )));
        }
        let params = CarParams {
            phi: args.phi,
            cutoff_radius: args.cutoff,
            levels: args.levels,
            epsilon: args.epsilon,
        };
        Some(CarStructure::new(grid, params, LogDetMethod::Exact)?)
    } else {
        None
    };
    Model::new(cfg.clone(), Hyperparams::default_for(&cfg), car)
}

fn load_all(
    manifest: &DatasetManifest,
    dir: &Path,
    skip_malformed: bool,
) -> Result<Vec<SubjectData>> {
    let mut out = Vec::with_capacity(manifest.subjects.len());
    for item in manifest.stream(dir) {
        match item {
            Ok(s) => out.push(s),
            Err(e) if skip_malformed => eprintln!("skipping malformed subject record: {e}"),
            Err(e) => return Err(e),
        }
    }
    if out.is_empty() {
        return Err(Error::Data("dataset has no readable subjects".into()));
    }
    Ok(out)
}

pub fn fit(args: &FitArgs, run: &mut RunDir) -> Result<Status> {
    let (mut manifest, dir) = load_manifest(&args.data)?;
    let resume = match &args.resume {
        Some(path) if args.mode == Mode::Online => Some(read_checkpoint(path)?),
        Some(_) => return Err(Error::Config("--resume only applies to online fits".into())),
        None => None,
    };
    let (model, schedule) = match &resume {
        Some(c) => (c.model.build()?, c.schedule),
        None => (build_model(args, &manifest)?, args.discount),
    };
    let cfg = &model.config;
    if (cfg.sites, cfg.times, cfg.covariates)
        != (manifest.sites, manifest.times, manifest.covariates)
    {
        return Err(Error::Data(
            "dataset dimensions differ from the model".into(),
        ));
    }
    let stream_opts = StreamFitOptions {
        schedule,
        inner_tol: args.inner_tol,
        inner_max_iters: args.inner_max_iters,
        multi_start: !args.single_start,
        skip_malformed: args.skip_malformed,
        ..Default::default()
    };
    let batch_opts = BatchFitOptions {
        tol: args.tol,
        max_iters: args.max_iters,
        threads: args.threads,
        ..Default::default()
    };
    let mcmc_opts = McmcOptions {
        iterations: args.iterations,
        burn_in: args.burn_in,
        thin: args.thin,
        seed: args.seed,
        fixed_noise: None,
        budget: args.budget,
    };
    match args.mode {
        Mode::Batch => batch_opts.validate()?,
        Mode::Online => {
            stream_opts.validate()?;
            if !(0.0..=1.0).contains(&args.max_unconverged) {
                return Err(Error::Config("--max-unconverged must lie in [0, 1]".into()));
            }
        }
        Mode::Mcmc => {
            mcmc_opts.validate()?;
            let size = manifest.subjects.len() * cfg.sites * cfg.times;
            if size > args.budget {
                return Err(Error::Budget(format!(
                    "n·K·T = {size} exceeds the sampler budget {}",
                    args.budget
                )));
            }
        }
    }
    if let Some(seed) = args.shuffle_subjects {
        manifest
            .subjects
            .shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }

    let base = json!({
        "mode": format!("{:?}", args.mode).to_lowercase(),
        "variant": cfg.variant.to_string(),
        "subjects": manifest.subjects.len(),
        "truncation": cfg.truncation,
        "shuffle_subjects": args.shuffle_subjects,
    });
    match args.mode {
        Mode::Batch => {
            let data = load_all(&manifest, &dir, args.skip_malformed)?;
            eprintln!("batch fit of {} subjects", data.len());
            let fit = fit_batch(&model, &data, &batch_opts)?;
            let state = OnlineState {
                global: fit.global.clone(),
                processed: data.len() as u64,
            };
            write_checkpoint(
                run.output(CHECKPOINT_FILE),
                &Checkpoint::new(&model, schedule, &state),
            )?;
            let extra = json!({ "elbo_trace": fit.elbo_trace, "iterations": fit.iterations });
            write_vb_summary(run, &model, &fit, args, base, extra)
        }
        Mode::Online => {
            let start = resume.as_ref().map(Checkpoint::state);
            let skip = start.as_ref().map_or(0, |s| s.processed as usize);
            if skip > manifest.subjects.len() {
                return Err(Error::Data(format!(
                    "checkpoint has seen {skip} subjects but the dataset holds {}",
                    manifest.subjects.len()
                )));
            }
            eprintln!("online fit of {} subjects", manifest.subjects.len() - skip);
            let ckpt_path = run.output(CHECKPOINT_FILE);
            let every = args.checkpoint_every.filter(|&e| e > 0);
            let mut observer = |state: &OnlineState| -> Result<()> {
                if every.is_some_and(|e| state.processed.is_multiple_of(e)) {
                    write_checkpoint(&ckpt_path, &Checkpoint::new(&model, schedule, state))?;
                }
                Ok(())
            };
            let fit = fit_online(
                &model,
                manifest.stream(&dir).skip(skip),
                &stream_opts,
                start,
                Some(&mut observer as &mut Observer),
            )?;
            let state = OnlineState {
                global: fit.global.clone(),
                processed: (skip + fit.subject_trace.len()) as u64,
            };
            write_checkpoint(&ckpt_path, &Checkpoint::new(&model, schedule, &state))?;
            let mut out = BufWriter::new(File::create(run.output(SUBJECTS_FILE))?);
            writeln!(out, "subject\tinner_iters\tfinal_change\tconverged")?;
            for t in &fit.subject_trace {
                writeln!(
                    out,
                    "{}\t{}\t{:e}\t{}",
                    t.subject_id, t.inner_iters, t.final_change, t.converged
                )?;
            }
            out.flush()?;
            let unconverged = fit.subject_trace.iter().filter(|t| !t.converged).count();
            let fit = FitResult {
                converged: unconverged as f64
                    <= args.max_unconverged * fit.subject_trace.len() as f64,
                ..fit
            };
            let iters: Vec<usize> = fit.subject_trace.iter().map(|t| t.inner_iters).collect();
            let extra = json!({
                "schedule": schedule,
                "resumed_after": skip,
                "unconverged_subjects": unconverged,
                "mean_inner_iterations": iters.iter().sum::<usize>() as f64 / iters.len().max(1) as f64,
                "max_inner_iterations": iters.iter().max(),
            });
            write_vb_summary(run, &model, &fit, args, base, extra)
        }
        Mode::Mcmc => {
            let data = load_all(&manifest, &dir, args.skip_malformed)?;
            eprintln!(
                "Gibbs sampling {} subjects, {} sweeps",
                data.len(),
                args.iterations
            );
            let samples = run_mcmc(&model, &data, &mcmc_opts)?;
            samples.write_tsv(BufWriter::new(File::create(run.output(DRAWS_FILE))?))?;
            let series = |name: &str| samples.series(name).unwrap_or_default();
            let variance: Vec<f64> = series("noise").iter().map(|p| 1.0 / p).collect();
            let effective = samples
                .draws
                .iter()
                .map(|d| d.weights.iter().filter(|&&w| w >= args.min_weight).count())
                .sum::<usize>() as f64
                / samples.draws.len() as f64;
            let mix = samples.predictive()?;
            let marginals = export_density(
                &mix,
                &args.density,
                effective.round() as usize,
                &run.output(DENSITY_FILE),
            )?;
            let mut summary = base;
            merge(
                &mut summary,
                json!({
                    "draws": samples.draws.len(),
                    "iterations": args.iterations,
                    "burn_in": args.burn_in,
                    "thin": args.thin,
                    "noise_variance": summarize(&variance)?,
                    "alpha": summarize(&series("alpha"))?,
                    "effective_components": effective,
                    "marginals": marginals,
                    "wall_time_secs": run.elapsed_secs(),
                }),
            );
            if cfg.variant.has_loadings() {
                merge(
                    &mut summary,
                    json!({
                        "tau": summarize(&series("tau"))?,
                        "rho": summarize(&series("rho"))?,
                    }),
                );
            }
            write_json(&run.output(SUMMARY_FILE), &summary)?;
            Ok(Status::Done)
        }
    }
}

fn write_vb_summary(
    run: &mut RunDir,
    model: &Model,
    fit: &FitResult,
    args: &FitArgs,
    base: Value,
    extra: Value,
) -> Result<Status> {
    let g = &fit.global;
    let weights = mixing_weights(g);
    let comps = components(
        g,
        &weights,
        model.config.variant.has_factors(),
        args.min_weight,
    );
    let effective = comps.iter().filter(|c| c.effective).count();
    let mix = MixtureOfNormals::from_global(g);
    let marginals = export_density(&mix, &args.density, effective, &run.output(DENSITY_FILE))?;
    let mut summary = base;
    merge(&mut summary, extra);
    merge(
        &mut summary,
        json!({
            "converged": fit.converged,
            "noise_variance": inverse_gamma_interval(g.noise),
            "alpha": gamma_interval(g.alpha),
            "effective_components": effective,
            "components": comps,
            "marginals": marginals,
            "wall_time_secs": run.elapsed_secs(),
        }),
    );
    if let Some(car) = model.car() {
        merge(
            &mut summary,
            json!({
                "tau": gamma_interval(g.tau),
                "rho": { "mean": g.rho_mean(car.rho_grid()), "grid": car.rho_grid(), "probs": g.rho_probs },
            }),
        );
    }
    write_json(&run.output(SUMMARY_FILE), &summary)?;
    eprintln!("{effective} effective components");
    Ok(if fit.converged {
        Status::Done
    } else {
        Status::NotConverged
    })
}

fn merge(into: &mut Value, from: Value) {
    if let (Value::Object(a), Value::Object(b)) = (into, from) {
        a.extend(b);
    }
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    io::write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())
}

pub fn predict(args: &PredictArgs, run: &mut RunDir) -> Result<Status> {
    let ckpt = read_checkpoint(&args.checkpoint)?;
    let weights = mixing_weights(&ckpt.global);
    let effective = weights.iter().filter(|&&w| w >= args.min_weight).count();
    let mix = MixtureOfNormals::from_global(&ckpt.global);
    let marginals = export_density(&mix, &args.density, effective, &run.output(DENSITY_FILE))?;
    let summary = json!({
        "checkpoint": args.checkpoint,
        "processed": ckpt.processed,
        "weights": weights,
        "effective_components": effective,
        "marginals": marginals,
    });
    write_json(&run.output("modes.json"), &summary)?;
    Ok(Status::Done)
}

pub fn convert(args: &ConvertArgs, run: &mut RunDir) -> Result<Status> {
    let mut files = Vec::with_capacity(args.input.len());
    let mut dims = None;
    for (id, path) in args.input.iter().enumerate() {
        let subject = ovb_core::io::subject_from_csv(id as u64, File::open(path)?)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let d = (subject.sites(), subject.times(), subject.covariates());
        if *dims.get_or_insert(d) != d {
            return Err(Error::Data(format!(
                "{} changes dimensions",
                path.display()
            )));
        }
        let name = format!("subject_{id:06}.ovb");
        write_subject(
            run.output(name.clone()),
            &SubjectRecord::from_subject(&subject),
        )?;
        files.push(PathBuf::from(name));
    }
    let (sites, times, covariates) = dims.ok_or_else(|| Error::Data("no input files".into()))?;
    if let Some(grid) = args.grid.filter(|g| g.sites() != sites) {
        return Err(Error::Config(format!(
            "grid has {} sites but the data have K={sites}",
            grid.sites()
        )));
    }
    let manifest = DatasetManifest {
        format_version: RECORD_VERSION,
        sites,
        times,
        covariates,
        grid: args.grid,
        example: None,
        seed: None,
        subjects: files,
        truth: None,
    };
    manifest.save(run.output(MANIFEST_FILE))?;
    Ok(Status::Done)
}

pub fn export_car(args: &ExportCarArgs, run: &mut RunDir) -> Result<Status> {
    let car = build_car(args.grid, args.phi, args.cutoff, args.levels, args.epsilon)?;
    car.write_coo(BufWriter::new(File::create(run.output("car.coo"))?))?;
    let mut out = BufWriter::new(File::create(run.output("rho_grid.tsv"))?);
    writeln!(out, "rho\tprior\tlog_det")?;
    for ((r, p), l) in car
        .rho_grid()
        .iter()
        .zip(car.rho_prior())
        .zip(car.grid_log_dets())
    {
        writeln!(out, "{r:e}\t{p:e}\t{l:e}")?;
    }
    out.flush()?;
    fs::write(
        run.output("car.json"),
        serde_json::to_string_pretty(&json!({
            "grid": args.grid,
            "sites": car.sites(),
            "nonzeros": car.nnz(),
            "params": car.params(),
            "log_det_omega": car.log_det_omega(),
        }))?,
    )?;
    Ok(Status::Done)
}
