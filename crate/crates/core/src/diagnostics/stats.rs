//! Small hypothesis tests used by the diagnostics.

use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

use crate::catalog::ObservationDomain;
use crate::error::{Error, Result};
use crate::geometry::{clip_to_rect, signed_area, Point, Rect};
use crate::scalar::Scalar;

/// Kolmogorov limiting survival function Q(λ) = 2 Σ (−1)^{k−1} e^{−2k²λ²}.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Small-λ form converges faster here.
        let y = (-std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
        let s: f64 = (0..50).map(|k| y.powi((2 * k + 1) * (2 * k + 1))).sum();
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / lambda * s;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut total = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        total += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * total).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample KS test of `sample` against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> Result<KsResult> {
    let n = sample.len();
    if n == 0 {
        return Err(Error::InvalidInput("KS test needs a non-empty sample".into()));
    }
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let nf = n as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = cdf(*x);
            (f - i as f64 / nf).max((i + 1) as f64 / nf - f)
        })
        .fold(0.0, f64::max);
    let sq = nf.sqrt();
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival((sq + 0.12 + 0.11 / sq) * d),
    })
}

/// Two-sample KS test (asymptotic p-value with small-sample correction).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("KS test needs non-empty samples".into()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = (n * m / (n + m)).sqrt();
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival((ne + 0.12 + 0.11 / ne) * d),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignTest {
    pub positives: usize,
    pub negatives: usize,
    /// Two-sided binomial p-value under Pr(positive) = 1/2; zeros are dropped.
    pub p_value: f64,
    /// One-sided p-value for an excess of positives.
    pub p_more_positive: f64,
    /// One-sided p-value for an excess of negatives.
    pub p_more_negative: f64,
}

pub fn sign_test<T: Scalar>(values: &[T]) -> SignTest {
    let positives = values.iter().filter(|v| **v > T::zero()).count();
    let negatives = values.iter().filter(|v| **v < T::zero()).count();
    let n = (positives + negatives) as u64;
    if n == 0 {
        return SignTest {
            positives,
            negatives,
            p_value: 1.0,
            p_more_positive: 1.0,
            p_more_negative: 1.0,
        };
    }
    let b = Binomial::new(0.5, n).expect("valid binomial");
    let upper = |k: u64| if k == 0 { 1.0 } else { 1.0 - b.cdf(k - 1) };
    let p_more_positive = upper(positives as u64);
    let p_more_negative = upper(negatives as u64);
    SignTest {
        positives,
        negatives,
        p_value: (2.0 * p_more_positive.min(p_more_negative)).min(1.0),
        p_more_positive,
        p_more_negative,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadratTest {
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub observed: Vec<usize>,
    pub expected: Vec<f64>,
}

/// Pearson chi-squared test of spatial homogeneity on an `nx × ny` grid of
/// quadrats over the domain's bounding box; expected counts are
/// proportional to each quadrat's area inside X.
pub fn quadrat_test<T: Scalar>(points: &[Point<T>], domain: &ObservationDomain<T>, nx: usize, ny: usize) -> Result<QuadratTest> {
    if nx == 0 || ny == 0 {
        return Err(Error::param("quadrats", "grid must be non-empty"));
    }
    if points.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    let b = domain.bbox();
    let (w, h) = (b.width() / T::of_usize(nx), b.height() / T::of_usize(ny));
    let mut areas = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let cell = Rect {
                x_min: b.x_min + w * T::of_usize(ix),
                x_max: b.x_min + w * T::of_usize(ix + 1),
                y_min: b.y_min + h * T::of_usize(iy),
                y_max: b.y_min + h * T::of_usize(iy + 1),
            };
            areas.push(signed_area(&clip_to_rect(domain.ring(), &cell)).as_f64().abs());
        }
    }
    let mut observed = vec![0usize; nx * ny];
    for p in points {
        let ix = (((p.x - b.x_min) / w).as_f64().floor() as isize).clamp(0, nx as isize - 1) as usize;
        let iy = (((p.y - b.y_min) / h).as_f64().floor() as isize).clamp(0, ny as isize - 1) as usize;
        observed[iy * nx + ix] += 1;
    }
    let total_area: f64 = areas.iter().sum();
    let n = points.len() as f64;
    let mut statistic = 0.0;
    let mut cells = 0usize;
    let mut expected = Vec::with_capacity(areas.len());
    for (o, a) in observed.iter().zip(&areas) {
        let e = n * a / total_area;
        expected.push(e);
        if e > 0.0 {
            statistic += (*o as f64 - e).powi(2) / e;
            cells += 1;
        }
    }
    let df = cells.saturating_sub(1).max(1);
    let chi = ChiSquared::new(df as f64).expect("positive degrees of freedom");
    Ok(QuadratTest {
        statistic,
        degrees_of_freedom: df,
        p_value: 1.0 - chi.cdf(statistic),
        observed,
        expected,
    })
}
