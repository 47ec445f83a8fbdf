#![allow(dead_code)]

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use auxabc::{
    Dataset, Discrepancy, ParameterVector, Prior, Real, Result, Simulator, StreamRng, Trajectory,
};
use nalgebra::DMatrix;

/// `x = theta + N(0, 1)` observed at a single time point.
pub struct NormalMean;

impl<T: Real> Simulator<T> for NormalMean {
    fn simulate_full(&self, theta: &ParameterVector<T>, rng: &mut StreamRng) -> Result<Trajectory<T>> {
        let x = theta.values()[0] + T::standard_normal(rng);
        Trajectory::observed(DMatrix::from_element(1, 1, x), T::one())
    }
}

pub fn normal_mean_prior(half_width: f64) -> Prior<f64> {
    Prior::new(vec!["theta".to_string()], vec![(-half_width, half_width)]).unwrap()
}

/// Sample mean and (population) std of the single observed coordinate.
pub fn mean_std(data: &Dataset<f64>) -> (f64, f64) {
    let xs: Vec<f64> = data.trajectories().iter().map(|t| t.states()[(0, 0)]).collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Euclidean distance between `(mean, std)` summaries.
pub struct MeanStdDistance {
    pub observed: (f64, f64),
}

impl MeanStdDistance {
    pub fn new(observed: &Dataset<f64>) -> Self {
        Self {
            observed: mean_std(observed),
        }
    }
}

impl Discrepancy<f64> for MeanStdDistance {
    fn distance(&self, simulated: &Dataset<f64>) -> Result<f64> {
        let (m, s) = mean_std(simulated);
        Ok(((m - self.observed.0).powi(2) + (s - self.observed.1).powi(2)).sqrt())
    }
}

/// Counts every call reaching the wrapped simulator.
pub struct Counting<S> {
    pub inner: S,
    pub calls: Arc<AtomicU64>,
}

impl<S> Counting<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            calls: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn count(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<T: Real, S: Simulator<T>> Simulator<T> for Counting<S> {
    fn simulate_full(&self, theta: &ParameterVector<T>, rng: &mut StreamRng) -> Result<Trajectory<T>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.simulate_full(theta, rng)
    }
}

/// Checks the structural invariants every completed run must satisfy.
pub fn assert_run_invariants(post: &auxabc::PosteriorApproximation<f64>, config: &auxabc::SmcConfig, m: usize) {
    let tol = post.tolerances();
    for w in tol.windows(2) {
        assert!(w[1] <= w[0], "tolerance increased: {tol:?}");
    }
    let h = post.population.tolerance;
    assert_eq!(h, *tol.last().unwrap());
    for p in &post.population.particles {
        assert!(p.distance <= h, "distance {} above tolerance {h}", p.distance);
    }
    let total: f64 = post.normalized_weights().unwrap().iter().sum();
    assert!((total - 1.0).abs() <= 1e-12, "weights sum to {total}");
    assert_eq!(
        post.simulator_calls,
        config.expected_simulator_calls(m, post.refinements())
    );
}

pub fn same_population(a: &auxabc::PosteriorApproximation<f64>, b: &auxabc::PosteriorApproximation<f64>) -> bool {
    a.population.particles == b.population.particles
        && a.population.tolerance == b.population.tolerance
        && a.tolerances() == b.tolerances()
        && a.acceptance_rates() == b.acceptance_rates()
        && a.simulator_calls == b.simulator_calls
}

pub fn theta(x: f64) -> ParameterVector<f64> {
    ParameterVector::new(vec!["theta".to_string()], vec![x]).unwrap()
}
