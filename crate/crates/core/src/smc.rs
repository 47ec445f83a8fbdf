//! ABC sequential Monte Carlo with an adaptive quantile tolerance schedule.
//!
//! One run proceeds as follows:
//!
//! 1. Draw `N` particles from the prior, simulate `m * L` trajectories for
//!    each and record its distance to the observed data; all weights are 1.
//! 2. Set the tolerance to the `N_alpha`-th smallest distance
//!    (`N_alpha = floor(alpha * N)`) and keep the particles within it.
//! 3. Refill `N - N_alpha` slots: resample a kept particle by weight, perturb
//!    it with a Gaussian kernel, simulate, and weight it by
//!    `prior(theta) * 1(q <= h_prev) / sum_j w_j K(theta | theta_j)`.
//! 4. The acceptance rate is the fraction of refills with `q <= h_prev`.
//!    Recompute the tolerance over kept plus refilled particles, keep those
//!    within it, and repeat from 3 while the acceptance rate exceeds the
//!    configured minimum.
//!
//! Every random draw comes from a sub-stream addressed by
//! `(seed, generation, slot, trajectory)`, so results do not depend on the
//! number of worker threads.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::Discrepancy;
use crate::error::{Error, Result};
use crate::model::{Dataset, ParameterVector, Prior, Simulator};
use crate::rng::{domain, substream};
use crate::scalar::Real;

/// Maximum number of kernel draws per refill before giving up.
pub const MAX_PERTURBATION_ATTEMPTS: usize = 1000;

/// Relative diagonal loading applied to adapted kernel covariances.
pub const KERNEL_REGULARIZATION: f64 = 1e-10;

const KERNEL_SYMMETRY_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct Particle<T: Real> {
    pub theta: ParameterVector<T>,
    pub weight: T,
    pub distance: T,
}

/// The particles kept at one generation, all within `tolerance`.
#[derive(Clone, Debug, PartialEq)]
pub struct Population<T: Real> {
    pub particles: Vec<Particle<T>>,
    pub tolerance: T,
    pub generation: usize,
}

/// How posterior draws pick particles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// Proportional to the importance weights.
    #[default]
    Weighted,
    /// Uniform over kept particles.
    Uniform,
}

impl<T: Real> Population<T> {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles.first().map_or(0, |p| p.theta.len())
    }

    pub fn total_weight(&self) -> T {
        self.particles.iter().map(|p| p.weight).sum()
    }

    /// Weights divided by their sum.
    pub fn normalized_weights(&self) -> Result<Vec<T>> {
        let total = self.total_weight();
        if total.is_nan() || total <= T::zero() {
            return Err(Error::ZeroWeights);
        }
        Ok(self.particles.iter().map(|p| p.weight / total).collect())
    }

    /// Weighted mean of each parameter component.
    pub fn weighted_mean(&self) -> Result<DVector<T>> {
        let w = self.normalized_weights()?;
        let mut mean = DVector::zeros(self.dim());
        for (p, &wi) in self.particles.iter().zip(&w) {
            mean += p.theta.to_dvector() * wi;
        }
        Ok(mean)
    }

    /// Weighted (biased) covariance of the parameter vectors.
    pub fn weighted_covariance(&self) -> Result<DMatrix<T>> {
        let w = self.normalized_weights()?;
        let mean = self.weighted_mean()?;
        let d = self.dim();
        let mut cov = DMatrix::zeros(d, d);
        for (p, &wi) in self.particles.iter().zip(&w) {
            let dev = p.theta.to_dvector() - &mean;
            cov += &dev * dev.transpose() * wi;
        }
        Ok(cov)
    }

    /// Weighted std of the named component.
    pub fn weighted_std(&self, name: &str) -> Result<T> {
        let idx = self
            .particles
            .first()
            .and_then(|p| p.theta.names().iter().position(|n| n == name))
            .ok_or_else(|| Error::invalid(format!("no parameter named {name}")))?;
        Ok(self.weighted_covariance()?[(idx, idx)].max(T::zero()).sqrt())
    }

    /// Index of a particle drawn according to `weighting`.
    pub fn sample_index<R: Rng + ?Sized>(&self, weighting: Weighting, rng: &mut R) -> Result<usize> {
        match weighting {
            Weighting::Weighted => {
                let w: Vec<T> = self.particles.iter().map(|p| p.weight).collect();
                resample_index(&w, rng)
            }
            Weighting::Uniform => {
                if self.particles.is_empty() {
                    return Err(Error::invalid("empty population"));
                }
                Ok(rng.random_range(0..self.particles.len()))
            }
        }
    }
}

/// Draws index `k` with probability `w_k / sum(w)`.
pub fn resample_index<T: Real, R: Rng + ?Sized>(weights: &[T], rng: &mut R) -> Result<usize> {
    if weights.iter().any(|&w| !w.is_finite() || w < T::zero()) {
        return Err(Error::invalid("weights must be finite and non-negative"));
    }
    let total: T = weights.iter().copied().sum();
    if total.is_nan() || total <= T::zero() {
        return Err(Error::ZeroWeights);
    }
    let target = T::unit_uniform(rng) * total;
    let mut acc = T::zero();
    let mut last_positive = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w > T::zero() {
            acc += w;
            last_positive = k;
            if target < acc {
                return Ok(k);
            }
        }
    }
    // Rounding can leave `target` a hair above the running sum.
    Ok(last_positive)
}

/// Gaussian random-walk kernel `K(theta | center) = N(center, covariance)`.
#[derive(Clone, Debug)]
pub struct PerturbationKernel<T: Real> {
    covariance: DMatrix<T>,
    /// `factor * factor^T = covariance`.
    factor: DMatrix<T>,
    /// Inverse Cholesky factor and log-normalizer, when positive definite.
    density: Option<(DMatrix<T>, T)>,
}

impl<T: Real> PerturbationKernel<T> {
    pub fn new(covariance: DMatrix<T>) -> Result<Self> {
        let (r, c) = covariance.shape();
        if r != c {
            return Err(Error::invalid("kernel covariance must be square"));
        }
        if covariance.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("kernel covariance must be finite"));
        }
        let scale = T::one() + covariance.abs().max();
        let tol = T::lit(KERNEL_SYMMETRY_TOL) * scale;
        if (&covariance - covariance.transpose()).abs().max() > tol {
            return Err(Error::invalid("kernel covariance is not symmetric"));
        }
        let sym = (&covariance + covariance.transpose()) * T::lit(0.5);

        let (factor, density) = match sym.clone().cholesky() {
            Some(chol) => {
                let l = chol.l();
                let inv_l = l
                    .clone()
                    .solve_lower_triangular(&DMatrix::identity(r, r))
                    .ok_or(Error::DegenerateKernel)?;
                let log_det: T = l.diagonal().iter().map(|d| d.ln()).sum::<T>() * T::lit(2.0);
                let log_norm = -T::lit(0.5)
                    * (T::from_usize_lossy(r) * (T::two_pi()).ln() + log_det);
                (l, Some((inv_l, log_norm)))
            }
            None => {
                let eig = sym.clone().symmetric_eigen();
                if eig.eigenvalues.iter().any(|&l| l < -tol) {
                    return Err(Error::invalid("kernel covariance is not positive semi-definite"));
                }
                let roots = eig.eigenvalues.map(|l| l.max(T::zero()).sqrt());
                (eig.eigenvectors * DMatrix::from_diagonal(&roots), None)
            }
        };
        Ok(Self {
            covariance: sym,
            factor,
            density,
        })
    }

    pub fn covariance(&self) -> &DMatrix<T> {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    /// A zero-mean draw with the kernel covariance.
    pub fn sample_offset<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<T> {
        let z = DVector::from_fn(self.dim(), |_, _| T::standard_normal(rng));
        &self.factor * z
    }

    /// `log K(x | center)`; fails when the covariance is singular.
    pub fn log_density(&self, x: &[T], center: &[T]) -> Result<T> {
        let (inv_l, log_norm) = self.density.as_ref().ok_or(Error::DegenerateKernel)?;
        if x.len() != self.dim() || center.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "kernel density",
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let diff = DVector::from_iterator(x.len(), x.iter().zip(center).map(|(&a, &b)| a - b));
        let z = inv_l * diff;
        Ok(*log_norm - T::lit(0.5) * z.norm_squared())
    }

    pub fn density(&self, x: &[T], center: &[T]) -> Result<T> {
        Ok(self.log_density(x, center)?.exp())
    }
}

/// Twice the weighted covariance of the population, with `1e-10 * trace`
/// added to the diagonal.
pub fn adapt_kernel<T: Real>(prev: &Population<T>) -> Result<PerturbationKernel<T>> {
    if prev.len() < 2 {
        return Err(Error::invalid("kernel adaptation needs at least two particles"));
    }
    let mut cov = prev.weighted_covariance()? * T::lit(2.0);
    let load = cov.trace() * T::lit(KERNEL_REGULARIZATION);
    for i in 0..cov.nrows() {
        cov[(i, i)] += load;
    }
    PerturbationKernel::new(cov)
}

/// Perturbs `theta_star` with the kernel, redrawing until the result lies in
/// the prior support.
pub fn perturb<T: Real, R: Rng + ?Sized>(
    theta_star: &ParameterVector<T>,
    kernel: &PerturbationKernel<T>,
    prior: &Prior<T>,
    rng: &mut R,
) -> Result<ParameterVector<T>> {
    if kernel.dim() != theta_star.len() {
        return Err(Error::DimensionMismatch {
            context: "perturbation kernel",
            expected: theta_star.len(),
            actual: kernel.dim(),
        });
    }
    for _ in 0..MAX_PERTURBATION_ATTEMPTS {
        let offset = kernel.sample_offset(rng);
        let values: Vec<T> = theta_star
            .values()
            .iter()
            .zip(offset.iter())
            .map(|(&a, &b)| a + b)
            .collect();
        if prior.density_of(&values)? > T::zero() {
            return theta_star.with_values(values);
        }
    }
    Err(Error::PerturbationExhausted {
        particle: 0,
        attempts: MAX_PERTURBATION_ATTEMPTS,
    })
}

fn log_sum_exp<T: Real>(terms: impl Iterator<Item = T>) -> T {
    let terms: Vec<T> = terms.collect();
    let max = terms.iter().fold(-T::infinity(), |a, &b| a.max(b));
    if !max.is_finite() {
        return max;
    }
    max + terms.iter().map(|&t| (t - max).exp()).sum::<T>().ln()
}

/// Importance weight of a refill particle against the previous population:
/// prior density times the acceptance indicator over the kernel mixture
/// density. Evaluated in log space.
pub fn compute_weight<T: Real>(
    theta: &ParameterVector<T>,
    prev: &Population<T>,
    kernel: &PerturbationKernel<T>,
    prior: &Prior<T>,
    indicator: bool,
) -> Result<T> {
    let weights = prev.normalized_weights()?;
    let numerator = prior.density(theta)?;
    if !indicator || numerator == T::zero() {
        return Ok(T::zero());
    }
    let mut terms = Vec::with_capacity(prev.len());
    for (p, &w) in prev.particles.iter().zip(&weights) {
        if w > T::zero() {
            terms.push(w.ln() + kernel.log_density(theta.values(), p.theta.values())?);
        }
    }
    let log_denominator = log_sum_exp(terms.into_iter());
    if log_denominator == -T::infinity() {
        return Err(Error::KernelUnderflow);
    }
    let weight = (numerator.ln() - log_denominator).exp();
    if !weight.is_finite() {
        return Err(Error::invalid("importance weight overflowed"));
    }
    Ok(weight)
}

/// The `k`-th smallest value (1-based).
pub fn order_statistic<T: Real>(values: &[T], k: usize) -> Result<T> {
    if k == 0 || k > values.len() {
        return Err(Error::invalid(format!(
            "order statistic {k} out of range for {} values",
            values.len()
        )));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("distances contain NaN"));
    }
    let mut sorted = values.to_vec();
    let (_, kth, _) = sorted.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).expect("no NaN"));
    Ok(*kth)
}

/// The first `alpha`-quantile of `distances`: its `ceil(alpha * n)`-th
/// smallest element.
pub fn adapt_tolerance<T: Real>(distances: &[T], alpha: f64) -> Result<T> {
    if distances.len() < 2 {
        return Err(Error::invalid("tolerance adaptation needs at least two distances"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha must lie in (0, 1)"));
    }
    let k = ((alpha * distances.len() as f64).ceil() as usize).clamp(1, distances.len());
    order_statistic(distances, k)
}

/// Engine settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmcConfig {
    /// Population size `N`.
    pub particles: usize,
    /// Kept fraction per generation.
    pub alpha: f64,
    /// Simulated replications `L` per observed trajectory.
    pub replications: usize,
    /// Stop once the refill acceptance rate is no longer above this.
    pub min_acceptance: f64,
    /// Cap on refinement generations.
    pub max_generations: usize,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    #[serde(default)]
    pub workers: Option<usize>,
}

impl SmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles < 2 {
            return Err(Error::invalid("particle count N must be at least 2"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha must lie in (0, 1)"));
        }
        let kept = self.kept();
        if kept == 0 || kept >= self.particles {
            return Err(Error::invalid("floor(alpha * N) must lie in [1, N - 1]"));
        }
        if self.replications == 0 {
            return Err(Error::invalid("replication count L must be at least 1"));
        }
        if !(self.min_acceptance > 0.0 && self.min_acceptance <= 1.0) {
            return Err(Error::invalid("minimum acceptance rate must lie in (0, 1]"));
        }
        if self.workers == Some(0) {
            return Err(Error::invalid("worker count must be at least 1"));
        }
        Ok(())
    }

    /// `N_alpha = floor(alpha * N)`.
    pub fn kept(&self) -> usize {
        (self.alpha * self.particles as f64).floor() as usize
    }

    /// Simulator calls for `refinements` refinement generations and `m`
    /// observed trajectories.
    pub fn expected_simulator_calls(&self, m: usize, refinements: usize) -> u64 {
        let per_particle = (m * self.replications) as u64;
        let refills = (self.particles - self.kept()) as u64;
        self.particles as u64 * per_particle + refinements as u64 * refills * per_particle
    }
}

/// One line of progress output, emitted after each generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub tolerance: f64,
    pub acceptance_rate: f64,
    pub simulator_calls: u64,
    pub elapsed_secs: f64,
    pub kept: usize,
    pub posterior_mean: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    AcceptanceRate,
    GenerationCap,
}

/// The weighted particle approximation returned by a run.
#[derive(Clone, Debug)]
pub struct PosteriorApproximation<T: Real> {
    pub population: Population<T>,
    pub history: Vec<GenerationRecord>,
    pub simulator_calls: u64,
    pub elapsed: Duration,
    pub stop_reason: StopReason,
}

impl<T: Real> PosteriorApproximation<T> {
    pub fn tolerances(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.tolerance).collect()
    }

    pub fn acceptance_rates(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.acceptance_rate).collect()
    }

    /// Number of refinement generations run after the prior generation.
    pub fn refinements(&self) -> usize {
        self.history.len().saturating_sub(1)
    }

    pub fn normalized_weights(&self) -> Result<Vec<T>> {
        self.population.normalized_weights()
    }

    /// Draws a parameter vector from the particle approximation.
    pub fn sample_theta<R: Rng + ?Sized>(
        &self,
        weighting: Weighting,
        rng: &mut R,
    ) -> Result<&ParameterVector<T>> {
        let k = self.population.sample_index(weighting, rng)?;
        Ok(&self.population.particles[k].theta)
    }
}

struct Engine<'a, T: Real, S, D> {
    prior: &'a Prior<T>,
    simulator: &'a S,
    discrepancy: &'a D,
    batches: usize,
    config: &'a SmcConfig,
    calls: AtomicU64,
}

impl<T: Real, S: Simulator<T>, D: Discrepancy<T>> Engine<'_, T, S, D> {
    fn distance(&self, theta: &ParameterVector<T>, generation: usize, slot: usize) -> Result<T> {
        let count = self.batches * self.config.replications;
        let trajectories = (0..count)
            .map(|j| {
                let mut rng = substream(
                    self.config.seed,
                    &[domain::SIMULATION, generation as u64, slot as u64, j as u64],
                );
                self.simulator.simulate(theta, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        self.calls.fetch_add(count as u64, Ordering::Relaxed);
        let q = self.discrepancy.distance(&Dataset::new(trajectories)?)?;
        if q.is_nan() || q < T::zero() {
            return Err(Error::invalid(format!("distance {q:?} is not a non-negative number")));
        }
        Ok(q)
    }

    fn proposal_rng(&self, generation: usize, slot: usize) -> crate::rng::StreamRng {
        substream(
            self.config.seed,
            &[domain::PROPOSAL, generation as u64, slot as u64],
        )
    }

    fn initial(&self) -> Result<Vec<Particle<T>>> {
        (0..self.config.particles)
            .into_par_iter()
            .map(|slot| {
                let theta = self.prior.sample(&mut self.proposal_rng(0, slot));
                let distance = self.distance(&theta, 0, slot)?;
                Ok(Particle {
                    theta,
                    weight: T::one(),
                    distance,
                })
            })
            .collect()
    }

    fn refill(
        &self,
        prev: &Population<T>,
        kernel: &PerturbationKernel<T>,
        generation: usize,
    ) -> Result<Vec<(Particle<T>, bool)>> {
        let weights: Vec<T> = prev.particles.iter().map(|p| p.weight).collect();
        let refills = self.config.particles - self.config.kept();
        (0..refills)
            .into_par_iter()
            .map(|slot| {
                let mut rng = self.proposal_rng(generation, slot);
                let k = resample_index(&weights, &mut rng)?;
                let theta = perturb(&prev.particles[k].theta, kernel, self.prior, &mut rng)
                    .map_err(|e| match e {
                        Error::PerturbationExhausted { attempts, .. } => {
                            Error::PerturbationExhausted {
                                particle: slot,
                                attempts,
                            }
                        }
                        e => e,
                    })?;
                let distance = self.distance(&theta, generation, slot)?;
                let accepted = distance <= prev.tolerance;
                let weight = compute_weight(&theta, prev, kernel, self.prior, accepted)?;
                Ok((
                    Particle {
                        theta,
                        weight,
                        distance,
                    },
                    accepted,
                ))
            })
            .collect()
    }

    fn record(&self, pop: &Population<T>, acceptance_rate: f64, start: Instant) -> Result<GenerationRecord> {
        Ok(GenerationRecord {
            generation: pop.generation,
            tolerance: pop.tolerance.as_f64(),
            acceptance_rate,
            simulator_calls: self.calls.load(Ordering::Relaxed),
            elapsed_secs: start.elapsed().as_secs_f64(),
            kept: pop.len(),
            posterior_mean: pop.weighted_mean()?.iter().map(|v| v.as_f64()).collect(),
        })
    }

    fn run(&self, progress: &mut dyn FnMut(&GenerationRecord)) -> Result<PosteriorApproximation<T>> {
        let start = Instant::now();
        let kept = self.config.kept();

        let initial = self.initial().map_err(|e| e.in_generation(0))?;
        let distances: Vec<T> = initial.iter().map(|p| p.distance).collect();
        let tolerance = order_statistic(&distances, kept)?;
        let mut population = Population {
            particles: initial.into_iter().filter(|p| p.distance <= tolerance).collect(),
            tolerance,
            generation: 1,
        };
        let mut history = vec![self.record(&population, 1.0, start)?];
        progress(&history[0]);

        let mut acceptance = 1.0;
        let mut stop_reason = StopReason::AcceptanceRate;
        while acceptance > self.config.min_acceptance {
            if history.len() > self.config.max_generations {
                stop_reason = StopReason::GenerationCap;
                break;
            }
            let generation = population.generation + 1;
            let step = || -> Result<(Population<T>, f64)> {
                let kernel = adapt_kernel(&population)?;
                let refills = self.refill(&population, &kernel, generation)?;
                let accepted = refills.iter().filter(|(_, a)| *a).count();
                if accepted > 0 && refills.iter().all(|(p, _)| p.weight == T::zero()) {
                    return Err(Error::DegenerateRefill { generation });
                }
                let rate = accepted as f64 / refills.len() as f64;

                let mut pool = population.particles.clone();
                pool.extend(refills.into_iter().map(|(p, _)| p));
                let distances: Vec<T> = pool.iter().map(|p| p.distance).collect();
                let tolerance = order_statistic(&distances, kept)?;
                let next = Population {
                    particles: pool.into_iter().filter(|p| p.distance <= tolerance).collect(),
                    tolerance,
                    generation,
                };
                Ok((next, rate))
            };
            let (next, rate) = step().map_err(|e| e.in_generation(generation))?;
            population = next;
            acceptance = rate;
            let rec = self.record(&population, rate, start)?;
            progress(&rec);
            history.push(rec);
        }

        Ok(PosteriorApproximation {
            population,
            history,
            simulator_calls: self.calls.load(Ordering::Relaxed),
            elapsed: start.elapsed(),
            stop_reason,
        })
    }
}

/// Runs ABC-SMC against `batches` observed trajectories summarized inside
/// `discrepancy`, reporting each generation to `progress`.
pub fn run_abc_smc_with_progress<T, S, D>(
    prior: &Prior<T>,
    simulator: &S,
    discrepancy: &D,
    batches: usize,
    config: &SmcConfig,
    progress: &mut (dyn FnMut(&GenerationRecord) + Send),
) -> Result<PosteriorApproximation<T>>
where
    T: Real,
    S: Simulator<T>,
    D: Discrepancy<T>,
{
    config.validate()?;
    if batches == 0 {
        return Err(Error::invalid("need at least one observed trajectory"));
    }
    let engine = Engine {
        prior,
        simulator,
        discrepancy,
        batches,
        config,
        calls: AtomicU64::new(0),
    };
    match config.workers {
        None => engine.run(progress),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?
            .install(|| engine.run(progress)),
    }
}

/// [`run_abc_smc_with_progress`] without progress reporting.
pub fn run_abc_smc<T, S, D>(
    prior: &Prior<T>,
    simulator: &S,
    discrepancy: &D,
    batches: usize,
    config: &SmcConfig,
) -> Result<PosteriorApproximation<T>>
where
    T: Real,
    S: Simulator<T>,
    D: Discrepancy<T>,
{
    run_abc_smc_with_progress(prior, simulator, discrepancy, batches, config, &mut |_| {})
}
