//! Streaming inference: each arriving subject gets its own local fit, then
//! the global factors move by a discounted step toward the estimate that
//! prior plus this subject alone would give.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::batch::{FitResult, SubjectTrace};
use crate::elbo::online_objective;
use crate::error::{Error, Result};
use crate::global::{update_global_from, Blend, Contribution};
use crate::local::update_local;
use crate::model::{init_global, GlobalState, Model, SubjectData, SubjectLocal};
use crate::stats::subject_stats;

/// Step-size sequence h(l), l ≥ 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiscountSchedule {
    /// h(l) = 1 / l.
    Reciprocal,
    /// h(l) = l^(−ω).
    Power {
        omega: f64,
    },
    Constant {
        h: f64,
    },
    /// h ≡ 0: statistics accumulate without reweighting.
    None,
}

impl DiscountSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DiscountSchedule::Power { omega } if !(omega > 0.5 && omega <= 1.0) => {
                Err(Error::Config(format!(
                    "power schedule needs omega in (0.5, 1], got {omega}"
                )))
            }
            DiscountSchedule::Constant { h } if !(0.0..=1.0).contains(&h) => Err(Error::Config(
                format!("constant step must lie in [0, 1], got {h}"),
            )),
            _ => Ok(()),
        }
    }

    /// h(l) for l ≥ 1.
    pub fn step(&self, l: u64) -> f64 {
        let l = l.max(1) as f64;
        match *self {
            DiscountSchedule::Reciprocal => 1.0 / l,
            DiscountSchedule::Power { omega } => l.powf(-omega),
            DiscountSchedule::Constant { h } => h,
            DiscountSchedule::None => 0.0,
        }
    }
}

impl std::str::FromStr for DiscountSchedule {
    type Err = Error;

    /// `reciprocal`, `power:ω`, `constant:h` or `none`.
    fn from_str(s: &str) -> Result<Self> {
        let parse = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad discount parameter `{v}`")))
        };
        let sched = match s.split_once(':') {
            None if s == "reciprocal" => DiscountSchedule::Reciprocal,
            None if s == "none" => DiscountSchedule::None,
            Some(("power", v)) => DiscountSchedule::Power { omega: parse(v)? },
            Some(("constant", v)) => DiscountSchedule::Constant { h: parse(v)? },
            _ => return Err(Error::Config(format!("unknown discount schedule `{s}`"))),
        };
        sched.validate()?;
        Ok(sched)
    }
}

/// d(i, s) = ∏_{l=i+1}^{s} (1 − h(l)), the weight subject i carries after s
/// subjects.
pub fn discount_factor(i: u64, s: u64, schedule: &DiscountSchedule) -> Result<f64> {
    if i == 0 || i > s {
        return Err(Error::Domain(format!("need 1 <= i <= s, got i={i}, s={s}")));
    }
    Ok(match schedule {
        // the product telescopes
        DiscountSchedule::Reciprocal => i as f64 / s as f64,
        DiscountSchedule::None => 1.0,
        _ => ((i + 1)..=s).map(|l| 1.0 - schedule.step(l)).product(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamFitOptions {
    pub schedule: DiscountSchedule,
    /// Convergence threshold on the relative change max|Δ| / max(1, |x|).
    pub inner_tol: f64,
    /// Cap on local/global alternations per subject.
    pub inner_max_iters: usize,
    /// Cap on local sweeps within one local step.
    pub local_max_iters: usize,
    /// Start each subject's local fit from every component in turn and
    /// keep the start with the highest subject bound.
    pub multi_start: bool,
    /// Skip records that fail to load instead of aborting.
    pub skip_malformed: bool,
}

impl Default for StreamFitOptions {
    fn default() -> Self {
        StreamFitOptions {
            schedule: DiscountSchedule::Reciprocal,
            inner_tol: 1e-6,
            inner_max_iters: 100,
            local_max_iters: 100,
            multi_start: true,
            skip_malformed: false,
        }
    }
}

impl StreamFitOptions {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(self.inner_tol > 0.0) {
            return Err(Error::Config("inner_tol must be positive".into()));
        }
        if self.inner_max_iters == 0 || self.local_max_iters == 0 {
            return Err(Error::Config("iteration caps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything needed to continue a stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineState {
    pub global: GlobalState,
    pub processed: u64,
}

impl OnlineState {
    pub fn new(model: &Model) -> Self {
        OnlineState {
            global: init_global(model),
            processed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalStep {
    pub local: SubjectLocal,
    pub iterations: usize,
    pub converged: bool,
}

fn flatten_local(l: &SubjectLocal) -> Vec<f64> {
    let mut v = l.resp.clone();
    if let Some(f) = &l.factors {
        for (m, c) in f.mean.iter().zip(&f.cov) {
            v.extend(m.iter());
            match c {
                crate::model::FactorCov::Full(x) => v.extend(x.iter()),
                crate::model::FactorCov::Diagonal(d) => v.extend(d.iter()),
            }
        }
    }
    if let Some(ld) = &l.loadings {
        v.extend(ld.mean.iter());
        v.extend(ld.var.iter());
    }
    v
}

/// max_j |a_j − b_j| / max(1, |b_j|).
pub fn relative_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Sweeps the subject's local updates with the globals frozen until the
/// parameters stop moving.
pub fn online_local_step(
    model: &Model,
    subject: &SubjectData,
    global: &GlobalState,
    start: SubjectLocal,
    options: &StreamFitOptions,
) -> Result<LocalStep> {
    let mut local = start;
    let mut before = flatten_local(&local);
    for it in 1..=options.local_max_iters {
        local = update_local(model, subject, &local, global)?;
        let after = flatten_local(&local);
        let change = relative_change(&before, &after);
        before = after;
        if change < options.inner_tol {
            return Ok(LocalStep {
                local,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(LocalStep {
        local,
        iterations: options.local_max_iters,
        converged: false,
    })
}

/// Moves the globals from `prev` (state after `count − 1` subjects) using
/// the local fit of subject number `count`. `current` is the latest inner
/// iterate; the sequential update starts from it.
pub fn online_global_step(
    model: &Model,
    prev: &GlobalState,
    current: &GlobalState,
    local: &SubjectLocal,
    subject: &SubjectData,
    count: u64,
    schedule: &DiscountSchedule,
) -> Result<GlobalState> {
    if count == 0 {
        return Err(Error::Domain("subject count starts at 1".into()));
    }
    let stats = subject_stats(model, subject, local);
    let contribution = [Contribution {
        stats: &stats,
        resp: &local.resp,
        gram: subject.gram(),
    }];
    let blend = Blend::Discounted {
        h: schedule.step(count),
        prev,
    };
    update_global_from(model, &contribution, current, blend)
}

struct InnerRun {
    global: GlobalState,
    local: SubjectLocal,
    iters: usize,
    change: f64,
}

fn run_inner(
    model: &Model,
    prev: &GlobalState,
    count: u64,
    subject: &SubjectData,
    start: SubjectLocal,
    global_first: bool,
    options: &StreamFitOptions,
) -> Result<InnerRun> {
    let mut current = if global_first {
        online_global_step(model, prev, prev, &start, subject, count, &options.schedule)?
    } else {
        prev.clone()
    };
    let mut local = start;
    let mut change = f64::INFINITY;
    let mut iters = 0;
    while iters < options.inner_max_iters {
        iters += 1;
        local = online_local_step(model, subject, &current, local, options)?.local;
        let next = online_global_step(
            model,
            prev,
            &current,
            &local,
            subject,
            count,
            &options.schedule,
        )?;
        change = relative_change(&current.flatten(), &next.flatten());
        current = next;
        if change < options.inner_tol {
            break;
        }
    }
    Ok(InnerRun {
        global: current,
        local,
        iters,
        change,
    })
}

/// Processes one subject: alternates local and global steps until the
/// globals settle, then commits the new global state. With `multi_start`
/// the alternation is run once from the default start and once with the
/// subject pinned to each component before its first sweep; the run with
/// the highest discounted objective is kept.
pub fn process_subject(
    model: &Model,
    state: &mut OnlineState,
    subject: &SubjectData,
    options: &StreamFitOptions,
) -> Result<SubjectTrace> {
    subject.check_shape(&model.config)?;
    let count = state.processed + 1;
    let prev = &state.global;
    let base = SubjectLocal::init(model, subject.id());
    let r_max = prev.components();
    let mut best = run_inner(model, prev, count, subject, base.clone(), false, options)?;
    if options.multi_start && r_max > 1 {
        let h = options.schedule.step(count);
        let mut best_value = online_objective(model, prev, h, &best.global, &best.local, subject)?;
        // With spatial loadings the subject mean can sit either in the
        // loadings or in the coefficients; seeding the component from the
        // raw subject first reaches the second arrangement.
        let orders: &[bool] = if model.config.variant.has_loadings() {
            &[false, true]
        } else {
            &[false]
        };
        for r in 0..r_max {
            let mut start = base.clone();
            start.resp.iter_mut().for_each(|k| *k = 0.0);
            start.resp[r] = 1.0;
            for global_first in orders {
                let run = run_inner(
                    model,
                    prev,
                    count,
                    subject,
                    start.clone(),
                    *global_first,
                    options,
                )?;
                let value = online_objective(model, prev, h, &run.global, &run.local, subject)?;
                if value > best_value {
                    best_value = value;
                    best = run;
                }
            }
        }
    }
    state.global = best.global;
    state.processed = count;
    Ok(SubjectTrace {
        subject_id: subject.id(),
        inner_iters: best.iters,
        final_change: best.change,
        converged: best.change < options.inner_tol,
        resp: best.local.resp,
    })
}

/// Observer invoked after every committed subject.
pub type Observer<'a> = dyn FnMut(&OnlineState) -> Result<()> + 'a;

/// Streams subjects through [`process_subject`]. Each record is dropped as
/// soon as it has been processed, so memory does not grow with the stream.
pub fn fit_online<I, D>(
    model: &Model,
    stream: I,
    options: &StreamFitOptions,
    start: Option<OnlineState>,
    observer: Option<&mut Observer>,
) -> Result<FitResult>
where
    I: IntoIterator<Item = Result<D>>,
    D: AsRef<SubjectData>,
{
    options.validate()?;
    let started = Instant::now();
    let mut state = start.unwrap_or_else(|| OnlineState::new(model));
    let mut observer = observer;
    let mut trace = Vec::new();
    let mut seen = 0usize;
    for item in stream {
        let subject = match item {
            Ok(s) => s,
            Err(e) if options.skip_malformed => {
                eprintln!("skipping malformed subject record: {e}");
                continue;
            }
            Err(e) => return Err(e),
        };
        seen += 1;
        trace.push(process_subject(
            model,
            &mut state,
            subject.as_ref(),
            options,
        )?);
        drop(subject);
        if let Some(obs) = observer.as_deref_mut() {
            obs(&state)?;
        }
    }
    if seen == 0 && state.processed == 0 {
        return Err(Error::Data("stream yielded no subjects".into()));
    }
    let converged = trace.iter().all(|t| t.converged);
    Ok(FitResult {
        global: state.global,
        locals: Vec::new(),
        elbo_trace: Vec::new(),
        iterations: trace.len(),
        subject_trace: trace,
        converged,
        elapsed: started.elapsed(),
    })
}
