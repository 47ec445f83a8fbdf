//! Linear-Gaussian dynamic Bayesian network (LG-DBN) auxiliary model.
//!
//! The auxiliary model describes an observed trajectory
//! `(x_1, a_1, ..., x_H, a_H, x_{H+1})` by
//!
//! ```text
//! x_{t+1} = mu_{t+1} + psi^x_t (x_t - mu_t) + psi^a_t (a_t - mu^a_t) + V_{t+1}^{1/2} w
//! a_t     ~ N(mu^a_t, diag(sigma_t^2)),     x_1 ~ N(mu_1, diag(v_1^2))
//! ```
//!
//! Its maximum-likelihood fit, flattened into a vector, is the summary
//! statistic compared by the auxiliary ABC distance.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{Dataset, Trajectory};
use crate::scalar::Real;

/// Fitted (or specified) LG-DBN parameters.
///
/// Time index `t` in the docs is 1-based; storage is 0-based, so row `t - 1`
/// of `mu_x` holds `mu_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxiliaryFit<T: Real> {
    /// Per-time state means, `(H + 1) x d_x`.
    pub mu_x: DMatrix<T>,
    /// Per-time action means, `H x d_a`.
    pub mu_a: DMatrix<T>,
    /// State coefficients, `H` matrices of `d_x x d_x`.
    pub psi_x: Vec<DMatrix<T>>,
    /// Action coefficients, `H` matrices of `d_x x d_a`.
    pub psi_a: Vec<DMatrix<T>>,
    /// Per-time action stds, `H x d_a`.
    pub sigma: DMatrix<T>,
    /// Per-time state stds, `(H + 1) x d_x`.
    pub v_x: DMatrix<T>,
}

impl<T: Real> AuxiliaryFit<T> {
    pub fn layout(&self) -> SummaryLayout {
        SummaryLayout {
            horizon: self.psi_x.len(),
            d_x: self.mu_x.ncols(),
            d_a: self.mu_a.ncols(),
        }
    }

    fn check_shapes(&self) -> Result<()> {
        let SummaryLayout { horizon: h, d_x, d_a } = self.layout();
        let ok = self.mu_x.shape() == (h + 1, d_x)
            && self.mu_a.shape() == (h, d_a)
            && self.psi_a.len() == h
            && self.psi_x.iter().all(|m| m.shape() == (d_x, d_x))
            && self.psi_a.iter().all(|m| m.shape() == (d_x, d_a))
            && self.sigma.shape() == (h, d_a)
            && self.v_x.shape() == (h + 1, d_x);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("auxiliary fit blocks have inconsistent shapes"))
        }
    }

    /// Length of the trajectory vector `tau = (x_1, a_1, ..., x_{H+1})`.
    pub fn trajectory_dim(&self) -> usize {
        let l = self.layout();
        (l.horizon + 1) * l.d_x + l.horizon * l.d_a
    }

    /// Draws one trajectory by running the transition recursion forward.
    pub fn sample_trajectory<R: Rng + ?Sized>(&self, dt: T, rng: &mut R) -> Result<Trajectory<T>> {
        self.check_shapes()?;
        let SummaryLayout { horizon: h, d_x, d_a } = self.layout();
        let mut states = DMatrix::zeros(h + 1, d_x);
        let mut actions = DMatrix::zeros(h, d_a);
        for k in 0..d_x {
            states[(0, k)] = self.mu_x[(0, k)] + self.v_x[(0, k)] * T::standard_normal(rng);
        }
        for t in 0..h {
            for k in 0..d_a {
                actions[(t, k)] = self.mu_a[(t, k)] + self.sigma[(t, k)] * T::standard_normal(rng);
            }
            let dev_x = (states.row(t) - self.mu_x.row(t)).transpose();
            let dev_a = (actions.row(t) - self.mu_a.row(t)).transpose();
            let drift = &self.psi_x[t] * dev_x + &self.psi_a[t] * dev_a;
            for k in 0..d_x {
                states[(t + 1, k)] = self.mu_x[(t + 1, k)]
                    + drift[k]
                    + self.v_x[(t + 1, k)] * T::standard_normal(rng);
            }
        }
        Trajectory::new(states, actions, 0, dt)
    }
}

/// Shape of a flattened summary vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SummaryLayout {
    pub horizon: usize,
    pub d_x: usize,
    pub d_a: usize,
}

/// The fit component a summary-vector position belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    /// `mu^x_t[k]`
    StateMean { t: usize, k: usize },
    /// `mu^a_t[k]`
    ActionMean { t: usize, k: usize },
    /// `psi^x_t[row, col]`
    StateCoefficient { t: usize, row: usize, col: usize },
    /// `psi^a_t[row, col]`
    ActionCoefficient { t: usize, row: usize, col: usize },
    /// `sigma_t[k]`
    ActionStd { t: usize, k: usize },
    /// `v^x_t[k]`
    StateStd { t: usize, k: usize },
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Component::StateMean { t, k } => write!(f, "mu_x[{t}][{k}]"),
            Component::ActionMean { t, k } => write!(f, "mu_a[{t}][{k}]"),
            Component::StateCoefficient { t, row, col } => write!(f, "psi_x[{t}][{row},{col}]"),
            Component::ActionCoefficient { t, row, col } => write!(f, "psi_a[{t}][{row},{col}]"),
            Component::ActionStd { t, k } => write!(f, "sigma[{t}][{k}]"),
            Component::StateStd { t, k } => write!(f, "v_x[{t}][{k}]"),
        }
    }
}

impl SummaryLayout {
    /// Components in canonical order (1-based time indices): means in
    /// trajectory order `x_1, a_1, ..., x_{H+1}`, then `psi^x` (time-major,
    /// row-major), `psi^a` (same), `sigma` and `v^x`.
    pub fn components(&self) -> Vec<Component> {
        let (h, d_x, d_a) = (self.horizon, self.d_x, self.d_a);
        let mut out = Vec::with_capacity(self.len());
        for t in 1..=h + 1 {
            out.extend((0..d_x).map(|k| Component::StateMean { t, k }));
            if t <= h {
                out.extend((0..d_a).map(|k| Component::ActionMean { t, k }));
            }
        }
        for t in 1..=h {
            for row in 0..d_x {
                out.extend((0..d_x).map(|col| Component::StateCoefficient { t, row, col }));
            }
        }
        for t in 1..=h {
            for row in 0..d_x {
                out.extend((0..d_a).map(|col| Component::ActionCoefficient { t, row, col }));
            }
        }
        for t in 1..=h {
            out.extend((0..d_a).map(|k| Component::ActionStd { t, k }));
        }
        for t in 1..=h + 1 {
            out.extend((0..d_x).map(|k| Component::StateStd { t, k }));
        }
        out
    }

    pub fn len(&self) -> usize {
        let (h, d_x, d_a) = (self.horizon, self.d_x, self.d_a);
        (h + 1) * d_x + h * d_a + h * d_x * d_x + h * d_x * d_a + h * d_a + (h + 1) * d_x
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A flattened auxiliary fit.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryStatistics<T: Real> {
    pub eta: DVector<T>,
    pub layout: SummaryLayout,
}

impl<T: Real> SummaryStatistics<T> {
    pub fn flatten(fit: &AuxiliaryFit<T>) -> Self {
        let layout = fit.layout();
        let eta = layout
            .components()
            .into_iter()
            .map(|c| match c {
                Component::StateMean { t, k } => fit.mu_x[(t - 1, k)],
                Component::ActionMean { t, k } => fit.mu_a[(t - 1, k)],
                Component::StateCoefficient { t, row, col } => fit.psi_x[t - 1][(row, col)],
                Component::ActionCoefficient { t, row, col } => fit.psi_a[t - 1][(row, col)],
                Component::ActionStd { t, k } => fit.sigma[(t - 1, k)],
                Component::StateStd { t, k } => fit.v_x[(t - 1, k)],
            })
            .collect::<Vec<_>>();
        Self {
            eta: DVector::from_vec(eta),
            layout,
        }
    }

    pub fn unflatten(&self) -> Result<AuxiliaryFit<T>> {
        let SummaryLayout { horizon: h, d_x, d_a } = self.layout;
        if self.eta.len() != self.layout.len() {
            return Err(Error::DimensionMismatch {
                context: "summary vector",
                expected: self.layout.len(),
                actual: self.eta.len(),
            });
        }
        let mut fit = AuxiliaryFit {
            mu_x: DMatrix::zeros(h + 1, d_x),
            mu_a: DMatrix::zeros(h, d_a),
            psi_x: vec![DMatrix::zeros(d_x, d_x); h],
            psi_a: vec![DMatrix::zeros(d_x, d_a); h],
            sigma: DMatrix::zeros(h, d_a),
            v_x: DMatrix::zeros(h + 1, d_x),
        };
        for (c, &v) in self.layout.components().into_iter().zip(self.eta.iter()) {
            match c {
                Component::StateMean { t, k } => fit.mu_x[(t - 1, k)] = v,
                Component::ActionMean { t, k } => fit.mu_a[(t - 1, k)] = v,
                Component::StateCoefficient { t, row, col } => fit.psi_x[t - 1][(row, col)] = v,
                Component::ActionCoefficient { t, row, col } => fit.psi_a[t - 1][(row, col)] = v,
                Component::ActionStd { t, k } => fit.sigma[(t - 1, k)] = v,
                Component::StateStd { t, k } => fit.v_x[(t - 1, k)] = v,
            }
        }
        Ok(fit)
    }

    pub fn len(&self) -> usize {
        self.eta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta.is_empty()
    }
}

/// Minimum-norm least-squares solution of `x * b = y` via SVD, treating
/// singular values below the usual relative cutoff as zero.
fn min_norm_least_squares<T: Real>(x: DMatrix<T>, y: &DMatrix<T>) -> DMatrix<T> {
    let (rows, cols) = x.shape();
    if cols == 0 {
        return DMatrix::zeros(0, y.ncols());
    }
    let svd = x.svd(true, true);
    let s_max = svd
        .singular_values
        .iter()
        .fold(T::zero(), |acc, &s| acc.max(s));
    let cutoff = s_max * T::from_usize_lossy(rows.max(cols)) * T::default_epsilon();
    svd.solve(y, cutoff)
        .expect("SVD computed with both U and V^T")
}

fn column_second_moment<T: Real>(centered: &DMatrix<T>, col: usize) -> T {
    let m = T::from_usize_lossy(centered.nrows());
    centered.column(col).iter().map(|&x| x * x).sum::<T>() / m
}

/// Maximum-likelihood fit of the LG-DBN to the observable columns of `data`.
///
/// Means are sample means. Coefficients solve one ordinary least-squares
/// problem per transition (the diagonal noise covariance makes the weighted
/// problem separable per output, so the weights cancel). Stds are the root
/// mean square of the centered values at each time, including exact zeros.
pub fn fit_mle<T: Real>(data: &Dataset<T>) -> Result<AuxiliaryFit<T>> {
    let m = data.len();
    if m < 2 {
        return Err(Error::invalid(format!(
            "auxiliary fit needs at least 2 trajectories, got {m}"
        )));
    }
    let h = data.horizon();
    let d_x = data.observed_dim();
    let d_a = data.action_dim();
    let mf = T::from_usize_lossy(m);

    // Per-time centered data: x_tilde[t] and a_tilde[t] are m x d_x, m x d_a.
    let mut mu_x = DMatrix::zeros(h + 1, d_x);
    let mut mu_a = DMatrix::zeros(h, d_a);
    for traj in data.trajectories() {
        mu_x += traj.states().columns(0, d_x);
        mu_a += traj.actions();
    }
    mu_x /= mf;
    mu_a /= mf;

    let x_tilde: Vec<DMatrix<T>> = (0..=h)
        .map(|t| {
            DMatrix::from_fn(m, d_x, |i, k| {
                data.trajectories()[i].states()[(t, k)] - mu_x[(t, k)]
            })
        })
        .collect();
    let a_tilde: Vec<DMatrix<T>> = (0..h)
        .map(|t| {
            DMatrix::from_fn(m, d_a, |i, k| {
                data.trajectories()[i].actions()[(t, k)] - mu_a[(t, k)]
            })
        })
        .collect();

    let v_x = DMatrix::from_fn(h + 1, d_x, |t, k| column_second_moment(&x_tilde[t], k).sqrt());
    let sigma = DMatrix::from_fn(h, d_a, |t, k| column_second_moment(&a_tilde[t], k).sqrt());

    let mut psi_x = Vec::with_capacity(h);
    let mut psi_a = Vec::with_capacity(h);
    for t in 0..h {
        let mut design = DMatrix::zeros(m, d_x + d_a);
        design.columns_mut(0, d_x).copy_from(&x_tilde[t]);
        design.columns_mut(d_x, d_a).copy_from(&a_tilde[t]);
        // coef is (d_x + d_a) x d_x; transposed blocks are psi^x_t, psi^a_t.
        let coef = min_norm_least_squares(design, &x_tilde[t + 1]);
        psi_x.push(coef.rows(0, d_x).transpose());
        psi_a.push(coef.rows(d_x, d_a).transpose());
    }

    Ok(AuxiliaryFit {
        mu_x,
        mu_a,
        psi_x,
        psi_a,
        sigma,
        v_x,
    })
}

/// The auxiliary summary statistic: the flattened maximum-likelihood fit.
pub fn summarize<T: Real>(data: &Dataset<T>) -> Result<SummaryStatistics<T>> {
    Ok(SummaryStatistics::flatten(&fit_mle(data)?))
}

/// Position of `x_t` (1-based `t`) inside the trajectory vector.
fn state_offset(t: usize, d_x: usize, d_a: usize) -> usize {
    (t - 1) * (d_x + d_a)
}

/// Mean and covariance of the joint normal law the fit implies for
/// `tau = (x_1, a_1, ..., x_H, a_H, x_{H+1})`.
///
/// Writes `tau - mu = B (tau - mu) + Sigma^{1/2} w` with the block
/// coefficient matrix `B` and returns `(mu, (I - B)^{-1} Sigma (I - B)^{-T})`.
pub fn joint_distribution<T: Real>(fit: &AuxiliaryFit<T>) -> Result<(DVector<T>, DMatrix<T>)> {
    fit.check_shapes()?;
    let SummaryLayout { horizon: h, d_x, d_a } = fit.layout();
    let n = fit.trajectory_dim();

    let mut mean = DVector::zeros(n);
    let mut stds = DVector::zeros(n);
    for t in 1..=h + 1 {
        let ox = state_offset(t, d_x, d_a);
        for k in 0..d_x {
            mean[ox + k] = fit.mu_x[(t - 1, k)];
            stds[ox + k] = fit.v_x[(t - 1, k)];
        }
        if t <= h {
            for k in 0..d_a {
                mean[ox + d_x + k] = fit.mu_a[(t - 1, k)];
                stds[ox + d_x + k] = fit.sigma[(t - 1, k)];
            }
        }
    }

    let mut b = DMatrix::zeros(n, n);
    for t in 1..=h {
        let src = state_offset(t, d_x, d_a);
        let dst = state_offset(t + 1, d_x, d_a);
        b.view_mut((dst, src), (d_x, d_x)).copy_from(&fit.psi_x[t - 1]);
        b.view_mut((dst, src + d_x), (d_x, d_a)).copy_from(&fit.psi_a[t - 1]);
    }

    let i_minus_b = DMatrix::identity(n, n) - b;
    let inv = i_minus_b
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::invalid("I - B is singular"))?;
    let sigma = DMatrix::from_diagonal(&stds.map(|s| s * s));
    let cov = &inv * sigma * inv.transpose();
    Ok((mean, cov))
}
