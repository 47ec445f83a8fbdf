//! Posterior predictive checks and the auxiliary-vs-naive comparison harness.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::{AuxiliaryDiscrepancy, DistanceKind, NaiveDiscrepancy, NaiveMode};
use crate::error::{Error, Result};
use crate::model::{generate_dataset, Dataset, ErythroblastModel, ErythroblastParams, Prior, Simulator};
use crate::rng::{domain, substream};
use crate::scalar::Real;
use crate::smc::{run_abc_smc, PosteriorApproximation, SmcConfig, Weighting};

/// Where a predictive sample came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictiveSource {
    TrueModel,
    Posterior(DistanceKind),
}

impl PredictiveSource {
    pub fn label(self) -> &'static str {
        match self {
            PredictiveSource::TrueModel => "true-model",
            PredictiveSource::Posterior(kind) => kind.as_str(),
        }
    }
}

/// `K` draws of the full state at one time point; one row per draw, columns
/// in simulator order (observable then latent).
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveSample<T: Real> {
    pub values: DMatrix<T>,
    pub target_t: usize,
    pub source: PredictiveSource,
}

impl<T: Real> PredictiveSample<T> {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn column(&self, k: usize) -> Vec<T> {
        self.values.column(k).iter().copied().collect()
    }
}

fn collect_states<T: Real>(
    rows: Vec<Vec<T>>,
    target_t: usize,
    source: PredictiveSource,
) -> Result<PredictiveSample<T>> {
    let d = rows.first().map_or(0, Vec::len);
    let values = DMatrix::from_fn(rows.len(), d, |i, k| rows[i][k]);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("predictive sample contains non-finite values"));
    }
    Ok(PredictiveSample {
        values,
        target_t,
        source,
    })
}

fn state_at_target<T: Real>(traj: &crate::model::Trajectory<T>, target_t: usize) -> Result<Vec<T>> {
    traj.state_at(target_t).ok_or_else(|| {
        Error::invalid(format!(
            "target time {target_t} outside 1..={}",
            traj.horizon() + 1
        ))
    })
}

/// Draws `k` states at `target_t` from the posterior predictive: each draw
/// picks a particle (per `weighting`) and simulates one full trajectory
/// under it. Draw `i` uses sub-stream `(seed, PREDICTIVE, i)`.
pub fn sample_posterior_predictive<T: Real, S: Simulator<T>>(
    posterior: &PosteriorApproximation<T>,
    simulator: &S,
    target_t: usize,
    k: usize,
    weighting: Weighting,
    source: PredictiveSource,
    seed: u64,
) -> Result<PredictiveSample<T>> {
    if k == 0 {
        return Err(Error::invalid("predictive sample size K must be at least 1"));
    }
    let rows = (0..k)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, &[domain::PREDICTIVE, i as u64]);
            let theta = posterior.sample_theta(weighting, &mut rng)?;
            state_at_target(&simulator.simulate_full(theta, &mut rng)?, target_t)
        })
        .collect::<Result<Vec<_>>>()?;
    collect_states(rows, target_t, source)
}

/// Draws `k` states at `target_t` from the simulator at fixed parameters.
pub fn sample_true_predictive<T: Real, S: Simulator<T>>(
    simulator: &S,
    theta: &crate::model::ParameterVector<T>,
    target_t: usize,
    k: usize,
    seed: u64,
) -> Result<PredictiveSample<T>> {
    if k == 0 {
        return Err(Error::invalid("predictive sample size K must be at least 1"));
    }
    let rows = (0..k)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, &[domain::TRUE_PREDICTIVE, i as u64]);
            state_at_target(&simulator.simulate_full(theta, &mut rng)?, target_t)
        })
        .collect::<Result<Vec<_>>>()?;
    collect_states(rows, target_t, PredictiveSource::TrueModel)
}

/// Two-sample Kolmogorov-Smirnov statistic `sup_s |F_a(s) - F_b(s)|`.
pub fn ks_statistic<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("K-S statistic needs two non-empty samples"));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::invalid("K-S samples contain NaN"));
    }
    let sort = |x: &[T]| {
        let mut v = x.to_vec();
        v.sort_by(|p, q| p.partial_cmp(q).expect("no NaN"));
        v
    };
    let (a, b) = (sort(a), sort(b));
    let (na, nb) = (T::from_usize_lossy(a.len()), T::from_usize_lossy(b.len()));
    let (mut i, mut j) = (0, 0);
    let mut sup = T::zero();
    while i < a.len() && j < b.len() {
        let s = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= s {
            i += 1;
        }
        while j < b.len() && b[j] <= s {
            j += 1;
        }
        let gap = (T::from_usize_lossy(i) / na - T::from_usize_lossy(j) / nb).abs();
        sup = sup.max(gap);
    }
    // Past the end of one sample its ECDF is 1; the gap only shrinks from here.
    Ok(sup)
}

/// `mean +/- 1.96 S / sqrt(R)` with `S` the sample std (denominator `R - 1`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub std: f64,
    pub half_width: f64,
    pub count: usize,
}

impl ConfidenceInterval {
    pub fn from_samples(xs: &[f64]) -> Result<Self> {
        let n = xs.len();
        if n < 2 {
            return Err(Error::invalid("confidence interval needs at least two values"));
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        Ok(Self {
            mean,
            std,
            half_width: 1.96 * std / (n as f64).sqrt(),
            count: n,
        })
    }

    pub fn low(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn high(&self) -> f64 {
        self.mean + self.half_width
    }
}

/// Settings for one `(v, m)` cell of the comparison.
#[derive(Clone, Debug)]
pub struct MacroConfig<T: Real> {
    pub model: ErythroblastModel<T>,
    /// Kinetics used to generate observed data; noise stds set per cell.
    pub truth: ErythroblastParams<T>,
    pub prior: Prior<T>,
    /// Observed trajectories per replication (`m`).
    pub batches: usize,
    /// Engine settings; the seed is replaced per replication.
    pub engine: SmcConfig,
    pub standardize: bool,
    pub naive_mode: NaiveMode,
    pub weighting: Weighting,
    /// Predictive draws per distribution (`K`).
    pub predictive_samples: usize,
    pub target_t: usize,
    /// Macro-replications (`R`).
    pub replications: usize,
    pub seed: u64,
}

/// Result of one method within one replication.
#[derive(Clone, Debug)]
pub struct MethodOutcome<T: Real> {
    pub posterior: PosteriorApproximation<T>,
    pub predictive: PredictiveSample<T>,
    pub ks_rho: f64,
    pub ks_inhibitor: f64,
    pub runtime_secs: f64,
}

#[derive(Clone, Debug)]
pub struct ReplicationRecord<T: Real> {
    pub replication: usize,
    pub auxiliary: MethodOutcome<T>,
    pub naive: MethodOutcome<T>,
    pub truth: PredictiveSample<T>,
    /// `T_naive / T_auxiliary`.
    pub ratio: f64,
}

#[derive(Clone, Debug)]
pub struct MacroReplicationReport<T: Real> {
    pub noise: f64,
    pub batches: usize,
    pub records: Vec<ReplicationRecord<T>>,
    /// `(replication, error message)` for excluded replications.
    pub failures: Vec<(usize, String)>,
}

/// Which K-S statistic to aggregate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateColumn {
    Density,
    Inhibitor,
}

impl<T: Real> MacroReplicationReport<T> {
    pub fn ratio_ci(&self) -> Result<ConfidenceInterval> {
        let xs: Vec<f64> = self.records.iter().map(|r| r.ratio).collect();
        ConfidenceInterval::from_samples(&xs)
    }

    pub fn ks_values(&self, method: DistanceKind, state: StateColumn) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| {
                let o = match method {
                    DistanceKind::Auxiliary => &r.auxiliary,
                    DistanceKind::Naive => &r.naive,
                };
                match state {
                    StateColumn::Density => o.ks_rho,
                    StateColumn::Inhibitor => o.ks_inhibitor,
                }
            })
            .collect()
    }

    pub fn ks_ci(&self, method: DistanceKind, state: StateColumn) -> Result<ConfidenceInterval> {
        ConfidenceInterval::from_samples(&self.ks_values(method, state))
    }
}

fn run_method<T: Real>(
    cfg: &MacroConfig<T>,
    observed: &Dataset<T>,
    truth: &PredictiveSample<T>,
    kind: DistanceKind,
    engine: &SmcConfig,
    predictive_seed: u64,
) -> Result<MethodOutcome<T>> {
    let posterior = match kind {
        DistanceKind::Auxiliary => {
            let d = AuxiliaryDiscrepancy::new(observed, cfg.standardize)?;
            run_abc_smc(&cfg.prior, &cfg.model, &d, observed.len(), engine)?
        }
        DistanceKind::Naive => {
            let d = NaiveDiscrepancy::new(observed, cfg.naive_mode);
            run_abc_smc(&cfg.prior, &cfg.model, &d, observed.len(), engine)?
        }
    };
    let runtime_secs = posterior.elapsed.as_secs_f64();
    let predictive = sample_posterior_predictive(
        &posterior,
        &cfg.model,
        cfg.target_t,
        cfg.predictive_samples,
        cfg.weighting,
        PredictiveSource::Posterior(kind),
        predictive_seed,
    )?;
    let ks = |k: usize| ks_statistic(&truth.column(k), &predictive.column(k)).map(|d| d.as_f64());
    Ok(MethodOutcome {
        ks_rho: ks(0)?,
        ks_inhibitor: ks(1)?,
        posterior,
        predictive,
        runtime_secs,
    })
}

/// Runs one macro-replication: fresh observed data from the truth, both
/// methods on common random numbers, and K-S statistics at `target_t`.
pub fn run_replication<T: Real>(cfg: &MacroConfig<T>, replication: usize) -> Result<ReplicationRecord<T>> {
    let seed = cfg.seed.wrapping_add(replication as u64);
    let theta = cfg.truth.to_vector();
    let observed = generate_dataset(&cfg.model, &theta, cfg.batches, 1, seed)?;
    let truth = sample_true_predictive(&cfg.model, &theta, cfg.target_t, cfg.predictive_samples, seed)?;
    let engine = SmcConfig {
        seed,
        ..cfg.engine.clone()
    };
    let auxiliary = run_method(cfg, &observed, &truth, DistanceKind::Auxiliary, &engine, seed)?;
    let naive = run_method(cfg, &observed, &truth, DistanceKind::Naive, &engine, seed)?;
    Ok(ReplicationRecord {
        replication,
        ratio: naive.runtime_secs / auxiliary.runtime_secs,
        auxiliary,
        naive,
        truth,
    })
}

/// Largest failed fraction of replications that is tolerated.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

/// Runs `cfg.replications` macro-replications one after another (so the two
/// methods' wall times are measured without co-scheduling), dropping failed
/// replications if fewer than 20% fail.
pub fn run_macro_replications<T: Real>(cfg: &MacroConfig<T>) -> Result<MacroReplicationReport<T>> {
    if cfg.replications < 2 {
        return Err(Error::invalid("need at least two macro-replications"));
    }
    let mut records = Vec::with_capacity(cfg.replications);
    let mut failures = Vec::new();
    for r in 0..cfg.replications {
        match run_replication(cfg, r) {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    if failures.len() as f64 >= MAX_FAILURE_FRACTION * cfg.replications as f64 {
        return Err(Error::invalid(format!(
            "{} of {} macro-replications failed; first: {}",
            failures.len(),
            cfg.replications,
            failures[0].1
        )));
    }
    Ok(MacroReplicationReport {
        noise: cfg.truth.v_rho.as_f64(),
        batches: cfg.batches,
        records,
        failures,
    })
}
