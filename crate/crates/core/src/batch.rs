//! Full-data coordinate ascent.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elbo::elbo_terms_with;
use crate::error::{Error, Result};
use crate::global::{update_global_from, Blend, Contribution};
use crate::local::update_local;
use crate::model::{init_global, GlobalState, Model, SubjectData, SubjectLocal};
use crate::stats::{subject_stats, SubjectStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchFitOptions {
    /// Stop once |ΔELBO| / |ELBO| falls below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Worker threads for the local phase; 0 uses the global rayon pool.
    pub threads: usize,
    /// Evaluate the ELBO every this many iterations.
    pub elbo_every: usize,
}

impl Default for BatchFitOptions {
    fn default() -> Self {
        BatchFitOptions {
            tol: 1e-6,
            max_iters: 500,
            threads: 0,
            elbo_every: 1,
        }
    }
}

impl BatchFitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config("tol must be positive".into()));
        }
        if self.max_iters == 0 || self.elbo_every == 0 {
            return Err(Error::Config(
                "max_iters and elbo_every must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-subject record of an online run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectTrace {
    pub subject_id: u64,
    /// Alternations of local and global steps.
    pub inner_iters: usize,
    /// Relative change of the global state at the last alternation.
    pub final_change: f64,
    pub converged: bool,
    /// Allocation probabilities at the end of the subject's processing.
    pub resp: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub global: GlobalState,
    /// Final local states in input order (batch mode only).
    #[serde(skip)]
    pub locals: Vec<SubjectLocal>,
    /// ELBO after initialization, then after each evaluated iteration.
    pub elbo_trace: Vec<f64>,
    pub subject_trace: Vec<SubjectTrace>,
    pub iterations: usize,
    pub converged: bool,
    pub elapsed: Duration,
}

/// Fits from the default initial state.
pub fn fit_batch(
    model: &Model,
    dataset: &[SubjectData],
    options: &BatchFitOptions,
) -> Result<FitResult> {
    let global = init_global(model);
    let locals = dataset
        .iter()
        .map(|d| SubjectLocal::init(model, d.id()))
        .collect();
    fit_batch_from(model, dataset, global, locals, options)
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Global reduction in subject-id order, so the result does not depend on
/// the order subjects are supplied in.
fn reduce_order(dataset: &[SubjectData]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.sort_by_key(|&i| dataset[i].id());
    order
}

fn global_step(
    model: &Model,
    dataset: &[SubjectData],
    locals: &[SubjectLocal],
    stats: &[SubjectStats],
    order: &[usize],
    global: &GlobalState,
) -> Result<GlobalState> {
    let contributions: Vec<Contribution> = order
        .iter()
        .map(|&i| Contribution {
            stats: &stats[i],
            resp: &locals[i].resp,
            gram: dataset[i].gram(),
        })
        .collect();
    update_global_from(model, &contributions, global, Blend::Batch)
}

fn ordered_elbo(
    model: &Model,
    dataset: &[SubjectData],
    locals: &[SubjectLocal],
    stats: &[SubjectStats],
    order: &[usize],
    global: &GlobalState,
) -> Result<f64> {
    Ok(elbo_terms_with(model, dataset, locals, stats, order, global)?.total())
}

/// Fits from a supplied state.
pub fn fit_batch_from(
    model: &Model,
    dataset: &[SubjectData],
    mut global: GlobalState,
    mut locals: Vec<SubjectLocal>,
    options: &BatchFitOptions,
) -> Result<FitResult> {
    options.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("dataset is empty".into()));
    }
    if dataset.len() != locals.len() {
        return Err(Error::Config(format!(
            "{} subjects but {} local states",
            dataset.len(),
            locals.len()
        )));
    }
    for d in dataset {
        d.check_shape(&model.config)?;
    }
    let start = Instant::now();
    let order = reduce_order(dataset);
    let mut stats: Vec<SubjectStats> = dataset
        .iter()
        .zip(&locals)
        .map(|(d, l)| subject_stats(model, d, l))
        .collect();
    let mut trace = vec![ordered_elbo(
        model, dataset, &locals, &stats, &order, &global,
    )?];
    let mut last_elbo = trace[0];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iters {
        iterations += 1;
        let updated: Vec<(SubjectLocal, SubjectStats)> = in_pool(options.threads, || {
            dataset
                .par_iter()
                .zip(locals.par_iter())
                .map(|(d, l)| {
                    let next = update_local(model, d, l, &global)?;
                    let s = subject_stats(model, d, &next);
                    Ok((next, s))
                })
                .collect::<Result<Vec<_>>>()
        })??;
        (locals, stats) = updated.into_iter().unzip();
        global = global_step(model, dataset, &locals, &stats, &order, &global)?;

        if iterations % options.elbo_every == 0 || iterations == options.max_iters {
            // the global step changed expectations that enter the statistics only
            // through locals, so the cached statistics are still current
            let value = ordered_elbo(model, dataset, &locals, &stats, &order, &global)?;
            trace.push(value);
            let change = (value - last_elbo).abs() / value.abs().max(f64::MIN_POSITIVE);
            last_elbo = value;
            if change < options.tol {
                converged = true;
                break;
            }
        }
    }
    Ok(FitResult {
        global,
        locals,
        elbo_trace: trace,
        subject_trace: Vec::new(),
        iterations,
        converged,
        elapsed: start.elapsed(),
    })
}
