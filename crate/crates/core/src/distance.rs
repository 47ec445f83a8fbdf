//! Distances between observed and simulated data.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lgdbn::{summarize, SummaryStatistics};
use crate::model::Dataset;
use crate::scalar::Real;

/// Which distance the ABC engine compares data with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceKind {
    /// Euclidean distance between LG-DBN summary vectors.
    Auxiliary,
    /// Euclidean distance between mean observable trajectories.
    Naive,
}

impl DistanceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DistanceKind::Auxiliary => "auxiliary",
            DistanceKind::Naive => "naive",
        }
    }
}

impl std::str::FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auxiliary" => Ok(DistanceKind::Auxiliary),
            "naive" => Ok(DistanceKind::Naive),
            other => Err(Error::invalid(format!("unknown distance kind {other:?}"))),
        }
    }
}

/// How the naive baseline collapses a dataset before comparison.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NaiveMode {
    #[default]
    MeanCurve,
}

/// Smallest standardization scale.
pub const SCALE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceSpec<T: Real> {
    pub kind: DistanceKind,
    scales: Option<DVector<T>>,
}

impl<T: Real> DistanceSpec<T> {
    pub fn new(kind: DistanceKind, scales: Option<DVector<T>>) -> Result<Self> {
        if let Some(s) = &scales {
            if !s.iter().all(|&x| x.is_finite() && x > T::zero()) {
                return Err(Error::invalid("standardization scales must be finite and positive"));
            }
        }
        Ok(Self { kind, scales })
    }

    pub fn unscaled(kind: DistanceKind) -> Self {
        Self { kind, scales: None }
    }

    pub fn scales(&self) -> Option<&DVector<T>> {
        self.scales.as_ref()
    }
}

/// Component-wise `|eta|`, floored at [`SCALE_FLOOR`].
pub fn standardization_scales<T: Real>(eta_obs: &SummaryStatistics<T>) -> DVector<T> {
    let floor = T::lit(SCALE_FLOOR);
    eta_obs.eta.map(|x| x.abs().max(floor))
}

/// Euclidean norm of the (optionally standardized) difference of two
/// summary vectors.
pub fn auxiliary_distance<T: Real>(
    eta_obs: &SummaryStatistics<T>,
    eta_star: &SummaryStatistics<T>,
    spec: &DistanceSpec<T>,
) -> Result<T> {
    if eta_obs.layout != eta_star.layout || eta_obs.eta.len() != eta_star.eta.len() {
        return Err(Error::LayoutMismatch);
    }
    let diff = &eta_obs.eta - &eta_star.eta;
    match &spec.scales {
        None => Ok(diff.norm()),
        Some(s) if s.len() == diff.len() => Ok(diff.component_div(s).norm()),
        Some(s) => Err(Error::DimensionMismatch {
            context: "standardization scales",
            expected: diff.len(),
            actual: s.len(),
        }),
    }
}

/// Per-time mean of the observable columns, `(H + 1) x d_x`.
pub fn mean_curve<T: Real>(data: &Dataset<T>) -> DMatrix<T> {
    let d_x = data.observed_dim();
    let mut sum = DMatrix::zeros(data.horizon() + 1, d_x);
    for traj in data.trajectories() {
        sum += traj.states().columns(0, d_x);
    }
    sum / T::from_usize_lossy(data.len())
}

/// Euclidean distance between the mean observable trajectories.
pub fn naive_distance<T: Real>(obs: &Dataset<T>, sim: &Dataset<T>) -> Result<T> {
    check_same_grid(obs, sim)?;
    Ok((mean_curve(obs) - mean_curve(sim)).norm())
}

fn check_same_grid<T: Real>(obs: &Dataset<T>, sim: &Dataset<T>) -> Result<()> {
    if obs.horizon() != sim.horizon() {
        return Err(Error::DimensionMismatch {
            context: "dataset horizon",
            expected: obs.horizon(),
            actual: sim.horizon(),
        });
    }
    if obs.observed_dim() != sim.observed_dim() {
        return Err(Error::DimensionMismatch {
            context: "observed state dimension",
            expected: obs.observed_dim(),
            actual: sim.observed_dim(),
        });
    }
    Ok(())
}

/// Distance from a fixed observed dataset to simulated datasets.
///
/// Implementations precompute whatever they need from the observed data.
pub trait Discrepancy<T: Real>: Sync {
    fn distance(&self, simulated: &Dataset<T>) -> Result<T>;
}

impl<T: Real, D: Discrepancy<T> + ?Sized> Discrepancy<T> for &D {
    fn distance(&self, simulated: &Dataset<T>) -> Result<T> {
        (**self).distance(simulated)
    }
}

impl<T: Real, D: Discrepancy<T> + ?Sized> Discrepancy<T> for Box<D> {
    fn distance(&self, simulated: &Dataset<T>) -> Result<T> {
        (**self).distance(simulated)
    }
}

/// Auxiliary-summary distance against fixed observed data.
#[derive(Clone, Debug)]
pub struct AuxiliaryDiscrepancy<T: Real> {
    observed: SummaryStatistics<T>,
    spec: DistanceSpec<T>,
}

impl<T: Real> AuxiliaryDiscrepancy<T> {
    /// With `standardize`, components are divided by [`standardization_scales`]
    /// of the observed summary.
    pub fn new(observed: &Dataset<T>, standardize: bool) -> Result<Self> {
        let eta = summarize(observed)?;
        let scales = standardize.then(|| standardization_scales(&eta));
        Ok(Self {
            spec: DistanceSpec::new(DistanceKind::Auxiliary, scales)?,
            observed: eta,
        })
    }

    pub fn observed_summary(&self) -> &SummaryStatistics<T> {
        &self.observed
    }

    pub fn spec(&self) -> &DistanceSpec<T> {
        &self.spec
    }
}

impl<T: Real> Discrepancy<T> for AuxiliaryDiscrepancy<T> {
    fn distance(&self, simulated: &Dataset<T>) -> Result<T> {
        auxiliary_distance(&self.observed, &summarize(simulated)?, &self.spec)
    }
}

/// Mean-curve distance against fixed observed data.
#[derive(Clone, Debug)]
pub struct NaiveDiscrepancy<T: Real> {
    observed_mean: DMatrix<T>,
}

impl<T: Real> NaiveDiscrepancy<T> {
    pub fn new(observed: &Dataset<T>, mode: NaiveMode) -> Self {
        match mode {
            NaiveMode::MeanCurve => Self {
                observed_mean: mean_curve(observed),
            },
        }
    }
}

impl<T: Real> Discrepancy<T> for NaiveDiscrepancy<T> {
    fn distance(&self, simulated: &Dataset<T>) -> Result<T> {
        let sim = mean_curve(simulated);
        if sim.shape() != self.observed_mean.shape() {
            return Err(Error::DimensionMismatch {
                context: "mean curve length",
                expected: self.observed_mean.len(),
                actual: sim.len(),
            });
        }
        Ok((&self.observed_mean - sim).norm())
    }
}

/// Builds the discrepancy selected by `kind`.
pub fn discrepancy_for<T: Real>(
    kind: DistanceKind,
    observed: &Dataset<T>,
    standardize: bool,
    naive_mode: NaiveMode,
) -> Result<Box<dyn Discrepancy<T>>> {
    Ok(match kind {
        DistanceKind::Auxiliary => Box::new(AuxiliaryDiscrepancy::new(observed, standardize)?),
        DistanceKind::Naive => Box::new(NaiveDiscrepancy::new(observed, naive_mode)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lgdbn::SummaryLayout;
    use crate::model::Trajectory;
    use proptest::prelude::*;

    fn stats(v: &[f64]) -> SummaryStatistics<f64> {
        // Any layout with matching length works for distance arithmetic.
        SummaryStatistics {
            eta: DVector::from_column_slice(v),
            layout: SummaryLayout { horizon: v.len(), d_x: 0, d_a: 0 },
        }
    }

    fn constant_dataset(values: &[f64], len: usize) -> Dataset<f64> {
        Dataset::new(
            values
                .iter()
                .map(|&c| Trajectory::observed(DMatrix::from_element(len, 1, c), 3.0).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn auxiliary_examples() {
        let plain = DistanceSpec::unscaled(DistanceKind::Auxiliary);
        assert_eq!(auxiliary_distance(&stats(&[1.0, 2.0]), &stats(&[1.0, 2.0]), &plain).unwrap(), 0.0);
        assert_eq!(auxiliary_distance(&stats(&[0.0, 0.0]), &stats(&[3.0, 4.0]), &plain).unwrap(), 5.0);
        let scaled = DistanceSpec::new(
            DistanceKind::Auxiliary,
            Some(DVector::from_column_slice(&[2.0, 1.0])),
        )
        .unwrap();
        assert_eq!(auxiliary_distance(&stats(&[1.0, 1.0]), &stats(&[3.0, 1.0]), &scaled).unwrap(), 1.0);
    }

    #[test]
    fn layout_mismatch_is_an_error() {
        let plain = DistanceSpec::unscaled(DistanceKind::Auxiliary);
        assert_eq!(
            auxiliary_distance(&stats(&[1.0]), &stats(&[1.0, 2.0]), &plain),
            Err(Error::LayoutMismatch)
        );
    }

    #[test]
    fn scales_must_be_positive() {
        let bad = DVector::from_column_slice(&[1.0, 0.0]);
        assert!(DistanceSpec::new(DistanceKind::Auxiliary, Some(bad)).is_err());
    }

    #[test]
    fn standardization_floors_zero_components() {
        let s = standardization_scales(&stats(&[0.0, -2.0, 1e-9]));
        assert_eq!(s.as_slice(), &[1e-6, 2.0, 1e-6]);
    }

    #[test]
    fn naive_examples() {
        let obs = constant_dataset(&[0.0, 0.0, 0.0], 11);
        let sim = constant_dataset(&[1.0; 6], 11);
        assert!((naive_distance(&obs, &sim).unwrap() - 11f64.sqrt()).abs() < 1e-12);
        assert_eq!(naive_distance(&obs, &obs).unwrap(), 0.0);
        let short = constant_dataset(&[1.0], 5);
        assert!(naive_distance(&obs, &short).is_err());
    }

    #[test]
    fn naive_ignores_trajectory_order() {
        let a = constant_dataset(&[1.0, 2.0, 7.0], 4);
        let b = constant_dataset(&[7.0, 1.0, 2.0], 4);
        let other = constant_dataset(&[0.5, 3.0], 4);
        assert_eq!(naive_distance(&a, &other).unwrap(), naive_distance(&b, &other).unwrap());
    }

    #[test]
    fn discrepancy_objects_agree_with_free_functions() {
        let obs = constant_dataset(&[1.0, 2.0, 3.0], 4);
        let sim = constant_dataset(&[2.0, 2.5, 3.0, 4.0], 4);
        let naive = NaiveDiscrepancy::new(&obs, NaiveMode::MeanCurve);
        assert_eq!(naive.distance(&sim).unwrap(), naive_distance(&obs, &sim).unwrap());
        let aux = AuxiliaryDiscrepancy::new(&obs, false).unwrap();
        let expected = auxiliary_distance(
            &summarize(&obs).unwrap(),
            &summarize(&sim).unwrap(),
            &DistanceSpec::unscaled(DistanceKind::Auxiliary),
        )
        .unwrap();
        assert_eq!(aux.distance(&sim).unwrap(), expected);
        assert_eq!(aux.distance(&obs).unwrap(), 0.0);
    }

    #[test]
    fn kind_parses() {
        assert_eq!("naive".parse::<DistanceKind>().unwrap(), DistanceKind::Naive);
        assert!("mahalanobis".parse::<DistanceKind>().is_err());
    }

    fn vec3() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0..100.0f64, 3)
    }

    proptest! {
        #[test]
        fn auxiliary_is_a_metric(a in vec3(), b in vec3(), c in vec3(),
                                 s in prop::collection::vec(0.01..10.0f64, 3)) {
            let spec = DistanceSpec::new(DistanceKind::Auxiliary, Some(DVector::from_vec(s))).unwrap();
            let (a, b, c) = (stats(&a), stats(&b), stats(&c));
            let d = |x, y| auxiliary_distance(x, y, &spec).unwrap();
            prop_assert!(d(&a, &b) >= 0.0);
            prop_assert_eq!(d(&a, &a), 0.0);
            prop_assert!((d(&a, &b) - d(&b, &a)).abs() <= 1e-12 * (1.0 + d(&a, &b)));
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
        }

        #[test]
        fn unit_scales_match_plain_euclidean(a in vec3(), b in vec3()) {
            let unit = DistanceSpec::new(DistanceKind::Auxiliary, Some(DVector::from_element(3, 1.0))).unwrap();
            let plain = DistanceSpec::unscaled(DistanceKind::Auxiliary);
            let (a, b) = (stats(&a), stats(&b));
            prop_assert_eq!(
                auxiliary_distance(&a, &b, &unit).unwrap(),
                auxiliary_distance(&a, &b, &plain).unwrap()
            );
        }
    }
}
