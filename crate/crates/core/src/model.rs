//! Parameters, priors, trajectories and the stochastic simulator contract,
//! with the erythroblast growth/inhibitor hybrid model as the reference
//! simulator.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{domain, substream, StreamRng};
use crate::scalar::Real;

/// A point in model-parameter space with named components.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector<T> {
    names: Arc<[String]>,
    values: Vec<T>,
}

impl<T: Real> ParameterVector<T> {
    pub fn new(names: impl Into<Arc<[String]>>, values: Vec<T>) -> Result<Self> {
        let names = names.into();
        if names.len() != values.len() {
            return Err(Error::DimensionMismatch {
                context: "parameter vector",
                expected: names.len(),
                actual: values.len(),
            });
        }
        Ok(Self { names, values })
    }

    /// A vector sharing this vector's component names.
    pub fn with_values(&self, values: Vec<T>) -> Result<Self> {
        Self::new(self.names.clone(), values)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<T> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    pub fn to_dvector(&self) -> DVector<T> {
        DVector::from_column_slice(&self.values)
    }
}

/// Independent uniform prior over a box.
#[derive(Clone, Debug, PartialEq)]
pub struct Prior<T> {
    names: Arc<[String]>,
    bounds: Vec<(T, T)>,
}

impl<T: Real> Prior<T> {
    pub fn new(names: impl Into<Arc<[String]>>, bounds: Vec<(T, T)>) -> Result<Self> {
        let names = names.into();
        if names.len() != bounds.len() {
            return Err(Error::DimensionMismatch {
                context: "prior bounds",
                expected: names.len(),
                actual: bounds.len(),
            });
        }
        for (name, &(lo, hi)) in names.iter().zip(&bounds) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!(
                    "prior bounds for {name} must be finite with low < high"
                )));
            }
        }
        Ok(Self { names, bounds })
    }

    /// The prior used for the erythroblast case study.
    pub fn erythroblast() -> Self {
        let b = |lo: f64, hi: f64| (T::lit(lo), T::lit(hi));
        Self::new(
            ErythroblastParams::<T>::names(),
            vec![
                b(0.0, 0.5),
                b(0.0, 5.0),
                b(0.0, 5.0),
                b(0.0, 0.05),
                b(0.0, 0.2),
                b(0.0, 0.2),
            ],
        )
        .expect("static prior is valid")
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn bounds(&self) -> &[(T, T)] {
        &self.bounds
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParameterVector<T> {
        let values = self
            .bounds
            .iter()
            .map(|&(lo, hi)| lo + (hi - lo) * T::unit_uniform(rng))
            .collect();
        ParameterVector {
            names: self.names.clone(),
            values,
        }
    }

    pub fn contains(&self, values: &[T]) -> bool {
        values.len() == self.bounds.len()
            && values
                .iter()
                .zip(&self.bounds)
                .all(|(&x, &(lo, hi))| x >= lo && x <= hi)
    }

    /// Product of reciprocal box widths inside the support, exactly zero outside.
    pub fn density(&self, theta: &ParameterVector<T>) -> Result<T> {
        self.density_of(theta.values())
    }

    pub(crate) fn density_of(&self, values: &[T]) -> Result<T> {
        if values.len() != self.bounds.len() {
            return Err(Error::DimensionMismatch {
                context: "prior density",
                expected: self.bounds.len(),
                actual: values.len(),
            });
        }
        if !self.contains(values) {
            return Ok(T::zero());
        }
        Ok(self
            .bounds
            .iter()
            .fold(T::one(), |acc, &(lo, hi)| acc / (hi - lo)))
    }
}

/// Free-function form of [`Prior::sample`].
pub fn sample_prior<T: Real, R: Rng + ?Sized>(prior: &Prior<T>, rng: &mut R) -> ParameterVector<T> {
    prior.sample(rng)
}

/// Free-function form of [`Prior::density`].
pub fn prior_density<T: Real>(prior: &Prior<T>, theta: &ParameterVector<T>) -> Result<T> {
    prior.density(theta)
}

/// A state/action time series over `H + 1` time points.
///
/// State columns are ordered observable first, then latent. Observed
/// trajectories handed to inference carry no latent columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T: Real> {
    states: DMatrix<T>,
    actions: DMatrix<T>,
    latent_dims: usize,
    dt: T,
}

impl<T: Real> Trajectory<T> {
    pub fn new(states: DMatrix<T>, actions: DMatrix<T>, latent_dims: usize, dt: T) -> Result<Self> {
        if states.nrows() == 0 {
            return Err(Error::invalid("trajectory needs at least one time point"));
        }
        if latent_dims > states.ncols() {
            return Err(Error::invalid("more latent columns than state columns"));
        }
        let horizon = states.nrows() - 1;
        if actions.ncols() > 0 && actions.nrows() != horizon {
            return Err(Error::DimensionMismatch {
                context: "action rows",
                expected: horizon,
                actual: actions.nrows(),
            });
        }
        let actions = if actions.ncols() == 0 {
            DMatrix::zeros(horizon, 0)
        } else {
            actions
        };
        Ok(Self {
            states,
            actions,
            latent_dims,
            dt,
        })
    }

    /// A trajectory without actions or latent state.
    pub fn observed(states: DMatrix<T>, dt: T) -> Result<Self> {
        let h = states.nrows().saturating_sub(1);
        Self::new(states, DMatrix::zeros(h, 0), 0, dt)
    }

    pub fn horizon(&self) -> usize {
        self.states.nrows() - 1
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn states(&self) -> &DMatrix<T> {
        &self.states
    }

    pub fn actions(&self) -> &DMatrix<T> {
        &self.actions
    }

    pub fn observed_dim(&self) -> usize {
        self.states.ncols() - self.latent_dims
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dims
    }

    pub fn action_dim(&self) -> usize {
        self.actions.ncols()
    }

    /// State at 1-based time index `t` (the first state is `t = 1`).
    pub fn state_at(&self, t: usize) -> Option<Vec<T>> {
        (1..=self.states.nrows())
            .contains(&t)
            .then(|| self.states.row(t - 1).iter().copied().collect())
    }

    /// Drops the latent columns.
    pub fn observe(&self) -> Self {
        let d_x = self.observed_dim();
        Self {
            states: self.states.columns(0, d_x).into_owned(),
            actions: self.actions.clone(),
            latent_dims: 0,
            dt: self.dt,
        }
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.states.shape() == other.states.shape()
            && self.actions.shape() == other.actions.shape()
            && self.latent_dims == other.latent_dims
            && self.dt == other.dt
    }
}

/// Free-function form of [`Trajectory::observe`].
pub fn observe<T: Real>(full: &Trajectory<T>) -> Trajectory<T> {
    full.observe()
}

/// A non-empty collection of equally shaped trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T: Real> {
    trajectories: Vec<Trajectory<T>>,
}

impl<T: Real> Dataset<T> {
    pub fn new(trajectories: Vec<Trajectory<T>>) -> Result<Self> {
        let first = trajectories
            .first()
            .ok_or_else(|| Error::invalid("dataset needs at least one trajectory"))?;
        if let Some(i) = trajectories.iter().position(|t| !t.same_shape(first)) {
            return Err(Error::invalid(format!(
                "trajectory {i} differs in shape from trajectory 0"
            )));
        }
        Ok(Self { trajectories })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn trajectories(&self) -> &[Trajectory<T>] {
        &self.trajectories
    }

    pub fn into_trajectories(self) -> Vec<Trajectory<T>> {
        self.trajectories
    }

    pub fn horizon(&self) -> usize {
        self.trajectories[0].horizon()
    }

    pub fn dt(&self) -> T {
        self.trajectories[0].dt()
    }

    pub fn observed_dim(&self) -> usize {
        self.trajectories[0].observed_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.trajectories[0].latent_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.trajectories[0].action_dim()
    }

    pub fn observe(&self) -> Self {
        Self {
            trajectories: self.trajectories.iter().map(Trajectory::observe).collect(),
        }
    }
}

/// A stochastic simulator of full (observable + latent) trajectories.
///
/// Implementations must be pure given the random stream so that many
/// workers can call them concurrently on disjoint streams.
pub trait Simulator<T: Real>: Sync {
    fn simulate_full(&self, theta: &ParameterVector<T>, rng: &mut StreamRng) -> Result<Trajectory<T>>;

    fn simulate(&self, theta: &ParameterVector<T>, rng: &mut StreamRng) -> Result<Trajectory<T>> {
        Ok(self.simulate_full(theta, rng)?.observe())
    }
}

impl<T: Real, S: Simulator<T> + ?Sized> Simulator<T> for &S {
    fn simulate_full(&self, theta: &ParameterVector<T>, rng: &mut StreamRng) -> Result<Trajectory<T>> {
        (**self).simulate_full(theta, rng)
    }

    fn simulate(&self, theta: &ParameterVector<T>, rng: &mut StreamRng) -> Result<Trajectory<T>> {
        (**self).simulate(theta, rng)
    }
}

/// Simulates `m * l` observed trajectories, trajectory `i` on its own
/// sub-stream `(seed, DATA, i)`.
pub fn generate_dataset<T: Real, S: Simulator<T>>(
    simulator: &S,
    theta: &ParameterVector<T>,
    m: usize,
    l: usize,
    seed: u64,
) -> Result<Dataset<T>> {
    if m == 0 || l == 0 {
        return Err(Error::invalid("m and L must both be at least 1"));
    }
    let trajectories = (0..m * l)
        .into_par_iter()
        .map(|i| simulator.simulate(theta, &mut substream(seed, &[domain::DATA, i as u64])))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(trajectories)
}

/// Kinetic and noise parameters of the erythroblast model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErythroblastParams<T> {
    /// Growth rate (1/hour).
    pub r_g: T,
    /// Inhibitor sensitivity.
    pub k_s: T,
    /// Inhibitor threshold.
    pub k_c: T,
    /// Inhibitor decay (1/hour).
    pub r_d: T,
    /// Transition noise std of cell density.
    pub v_rho: T,
    /// Transition noise std of inhibitor.
    pub v_i: T,
}

impl<T: Real> ErythroblastParams<T> {
    pub const NAMES: [&'static str; 6] = ["r_g", "k_s", "k_c", "r_d", "v_rho", "v_I"];

    pub fn names() -> Arc<[String]> {
        Self::NAMES.iter().map(|s| s.to_string()).collect()
    }

    /// Reference kinetics with both noise stds set to `noise`.
    pub fn reference(noise: T) -> Self {
        Self {
            r_g: T::lit(0.057),
            k_s: T::lit(3.4),
            k_c: T::lit(2.6),
            r_d: T::lit(0.005),
            v_rho: noise,
            v_i: noise,
        }
    }

    pub fn from_vector(theta: &ParameterVector<T>) -> Result<Self> {
        let get = |name: &str| {
            theta
                .get(name)
                .ok_or_else(|| Error::invalid(format!("parameter vector lacks {name}")))
        };
        Ok(Self {
            r_g: get("r_g")?,
            k_s: get("k_s")?,
            k_c: get("k_c")?,
            r_d: get("r_d")?,
            v_rho: get("v_rho")?,
            v_i: get("v_I")?,
        })
    }

    pub fn to_vector(&self) -> ParameterVector<T> {
        ParameterVector {
            names: Self::names(),
            values: vec![self.r_g, self.k_s, self.k_c, self.r_d, self.v_rho, self.v_i],
        }
    }
}

/// `1 - 1 / (1 + exp(u))`, evaluated without overflow for large `|u|`.
#[inline]
pub(crate) fn inhibition_factor<T: Real>(u: T) -> T {
    if u > T::zero() {
        T::one() / (T::one() + (-u).exp())
    } else {
        let e = u.exp();
        e / (T::one() + e)
    }
}

/// Simulates one full `(rho, I)` trajectory with `horizon` transitions.
///
/// Residuals are added as drawn; states are never clamped, so `rho` or `I`
/// may go negative under large noise.
pub fn simulate_trajectory<T: Real, R: Rng + ?Sized>(
    params: &ErythroblastParams<T>,
    init: [T; 2],
    horizon: usize,
    dt: T,
    rng: &mut R,
) -> Result<Trajectory<T>> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    if dt.is_nan() || dt <= T::zero() {
        return Err(Error::invalid("time step must be positive"));
    }
    if !init.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFiniteState { step: 0 });
    }
    let mut states = DMatrix::zeros(horizon + 1, 2);
    let [mut rho, mut inh] = init;
    states[(0, 0)] = rho;
    states[(0, 1)] = inh;
    for t in 1..=horizon {
        let e_rho = params.v_rho * T::standard_normal(rng);
        let e_inh = params.v_i * T::standard_normal(rng);
        let growth = params.r_g * rho * inhibition_factor(params.k_s * (params.k_c - inh));
        let next_rho = rho + dt * growth + e_rho;
        let next_inh = inh + dt * ((next_rho - rho) / dt - params.r_d * inh) + e_inh;
        if !(next_rho.is_finite() && next_inh.is_finite()) {
            return Err(Error::NonFiniteState { step: t });
        }
        rho = next_rho;
        inh = next_inh;
        states[(t, 0)] = rho;
        states[(t, 1)] = inh;
    }
    Trajectory::new(states, DMatrix::zeros(horizon, 0), 1, dt)
}

/// The erythroblast hybrid model on a fixed time grid; cell density is
/// observable and the inhibitor concentration is latent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErythroblastModel<T> {
    pub init: [T; 2],
    pub horizon: usize,
    pub dt: T,
}

impl<T: Real> ErythroblastModel<T> {
    /// `(rho_1, I_1) = (3, 0)`, 3-hour steps over 30 hours.
    pub fn case_study() -> Self {
        Self {
            init: [T::lit(3.0), T::zero()],
            horizon: 10,
            dt: T::lit(3.0),
        }
    }
}

impl<T: Real> Simulator<T> for ErythroblastModel<T> {
    fn simulate_full(&self, theta: &ParameterVector<T>, rng: &mut StreamRng) -> Result<Trajectory<T>> {
        let params = ErythroblastParams::from_vector(theta)?;
        simulate_trajectory(&params, self.init, self.horizon, self.dt, rng)
    }
}
