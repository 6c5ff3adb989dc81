//! Goodness-of-fit: residual thinning, super-thinning, K function, Voronoi
//! residuals and information criteria.

mod kfunction;
mod residuals;
pub mod stats;
mod voronoi;

pub use kfunction::{k_function, k_function_envelope, uniform_points, write_k_function, EdgeCorrection, KFunction};
pub use residuals::{
    intensity_infimum, intensity_supremum, super_thin, super_thin_with, thin_residuals, thin_residuals_with, ExtremaGrid,
    ResidualKind, ResidualProcess,
};
pub use stats::{ks_one_sample, ks_two_sample, quadrat_test, sign_test, KsResult, QuadratTest, SignTest};
pub use voronoi::{voronoi_cells, voronoi_residuals, write_voronoi, VoronoiCell, VoronoiResidualMap};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InformationCriteria<T> {
    pub aic: T,
    pub bic: T,
    /// Omitted below three events, where log log n is not meaningful.
    pub hq: Option<T>,
}

/// AIC = 2k − 2ℓ, BIC = k log n − 2ℓ, HQ = 2k log log n − 2ℓ.
pub fn information_criteria<T: Scalar>(loglik: T, n_params: usize, n_events: usize) -> Result<InformationCriteria<T>> {
    if !loglik.is_finite() {
        return Err(Error::InvalidInput("log-likelihood must be finite".into()));
    }
    let k = T::of_usize(n_params);
    let n = T::of_usize(n_events);
    let deviance = -T::two() * loglik;
    Ok(InformationCriteria {
        aic: T::two() * k + deviance,
        bic: k * n.ln() + deviance,
        hq: (n_events >= 3).then(|| T::two() * k * n.ln().ln() + deviance),
    })
}

/// Index of the smallest value (first on ties).
pub fn argmin<T: Scalar>(values: &[T]) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, T)>, (i, v)| match best {
            Some((_, b)) if b <= *v => best,
            _ => Some((i, *v)),
        })
        .map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn criteria_arithmetic() {
        let c = information_criteria(-100.0, 3, 50).unwrap();
        assert_eq!(c.aic, 206.0);
        assert!((c.bic - (3.0 * 50f64.ln() + 200.0)).abs() < 1e-12);
        assert!((c.hq.unwrap() - (6.0 * 50f64.ln().ln() + 200.0)).abs() < 1e-12);
        assert_eq!(information_criteria(-10.0, 0, 5).unwrap().aic, 20.0);
        assert!(information_criteria(-10.0, 1, 2).unwrap().hq.is_none());
        assert!(information_criteria(f64::NAN, 1, 10).is_err());
    }

    #[test]
    fn argmin_takes_first_tie() {
        assert_eq!(argmin(&[3.0, 1.0, 1.0]), Some(1));
        assert_eq!(argmin::<f64>(&[]), None);
    }
}
