//! Likelihood-free Bayesian inference for stochastic hybrid bioprocess
//! models: ABC sequential Monte Carlo whose distance compares the
//! maximum-likelihood fits of a linear-Gaussian dynamic Bayesian network
//! auxiliary model, with a mean-trajectory distance as baseline.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the
//! `*64` aliases below fix the scalar to `f64`.

pub mod distance;
pub mod error;
pub mod eval;
pub mod lgdbn;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod smc;

pub use distance::{
    auxiliary_distance, discrepancy_for, naive_distance, AuxiliaryDiscrepancy, Discrepancy,
    DistanceKind, DistanceSpec, NaiveDiscrepancy, NaiveMode,
};
pub use error::{Error, Result};
pub use eval::{
    ks_statistic, run_macro_replications, sample_posterior_predictive, sample_true_predictive,
    ConfidenceInterval, MacroConfig, MacroReplicationReport, PredictiveSample, PredictiveSource,
};
pub use lgdbn::{fit_mle, joint_distribution, summarize, AuxiliaryFit, SummaryLayout, SummaryStatistics};
pub use model::{
    generate_dataset, observe, prior_density, sample_prior, simulate_trajectory, Dataset,
    ErythroblastModel, ErythroblastParams, ParameterVector, Prior, Simulator, Trajectory,
};
pub use rng::{substream, StreamRng};
pub use scalar::Real;
pub use smc::{
    adapt_kernel, adapt_tolerance, compute_weight, perturb, resample_index, run_abc_smc,
    run_abc_smc_with_progress, GenerationRecord, Particle, PerturbationKernel, Population,
    PosteriorApproximation, SmcConfig, StopReason, Weighting,
};

pub type ParameterVector64 = ParameterVector<f64>;
pub type Prior64 = Prior<f64>;
pub type Trajectory64 = Trajectory<f64>;
pub type Dataset64 = Dataset<f64>;
pub type ErythroblastParams64 = ErythroblastParams<f64>;
pub type ErythroblastModel64 = ErythroblastModel<f64>;
pub type AuxiliaryFit64 = AuxiliaryFit<f64>;
pub type SummaryStatistics64 = SummaryStatistics<f64>;
pub type Population64 = Population<f64>;
pub type PosteriorApproximation64 = PosteriorApproximation<f64>;
pub type MacroConfig64 = MacroConfig<f64>;
pub type MacroReplicationReport64 = MacroReplicationReport<f64>;
