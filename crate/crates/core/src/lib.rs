//! Variational and Gibbs inference for Dirichlet-process mixtures of
//! spatio-temporal factor regressions.

pub mod batch;
pub mod car;
pub mod elbo;
pub mod error;
mod global;
pub mod io;
mod local;
pub mod mcmc;
pub mod model;
pub mod online;
pub mod predictive;
pub mod simgen;
pub mod special;
mod stats;

pub use batch::{fit_batch, fit_batch_from, BatchFitOptions, FitResult, SubjectTrace};
pub use car::{build_car, CarParams, CarStructure, GridSpec, LogDetMethod};
pub use elbo::{elbo, elbo_terms, ElboTerms};
pub use error::{Error, Result};
pub use global::update_global;
pub use io::{
    read_checkpoint, read_subject, write_checkpoint, write_subject, Checkpoint, DatasetManifest,
    ModelSpec, SubjectRecord, TruthFile,
};
pub use local::update_local;
pub use mcmc::{gibbs_sweep, run_mcmc, summarize, McmcOptions, McmcSamples, McmcState, Summary};
pub use model::{
    init_global, validate, BetaParams, FactorCov, FactorState, GammaParams, GlobalState,
    Hyperparams, LoadingState, Model, ModelConfig, SubjectData, SubjectLocal, Validate, Variant,
    Violation, ViolationKind,
};
pub use online::{
    discount_factor, fit_online, online_global_step, online_local_step, process_subject,
    DiscountSchedule, OnlineState, StreamFitOptions,
};
pub use predictive::{
    mixing_weights, mixing_weights_with, predict_beta_density, MixtureOfNormals, WeightForm,
};
