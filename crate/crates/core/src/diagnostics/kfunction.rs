//! Ripley's K function with a Monte Carlo envelope under complete spatial
//! randomness.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::catalog::ObservationDomain;
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::rng::stream;
use crate::scalar::{format_significant, Scalar};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EdgeCorrection {
    #[default]
    None,
    /// Translation weights |X| / |X ∩ (X + d)|; rectangles only.
    Translation,
}

#[derive(Clone, Debug)]
pub struct KFunction<T> {
    pub radii: Vec<T>,
    pub khat: Vec<T>,
    pub envelope_lo: Option<Vec<T>>,
    pub envelope_hi: Option<Vec<T>>,
    pub warnings: Vec<String>,
}

impl<T: Scalar> KFunction<T> {
    /// Radii at which K̂ lies above the envelope.
    pub fn above_envelope(&self) -> Vec<usize> {
        match &self.envelope_hi {
            Some(hi) => (0..self.radii.len()).filter(|&k| self.khat[k] > hi[k]).collect(),
            None => Vec::new(),
        }
    }

    /// Radii at which K̂ lies outside the envelope.
    pub fn outside_envelope(&self) -> Vec<usize> {
        match (&self.envelope_lo, &self.envelope_hi) {
            (Some(lo), Some(hi)) => (0..self.radii.len())
                .filter(|&k| self.khat[k] > hi[k] || self.khat[k] < lo[k])
                .collect(),
            _ => Vec::new(),
        }
    }
}

/// Pair counts weighted per pair, accumulated per radius.
fn k_estimate<T: Scalar>(points: &[Point<T>], domain: &ObservationDomain<T>, radii: &[T], correction: EdgeCorrection) -> Vec<T> {
    let n = points.len();
    let r_max = radii.iter().copied().fold(T::zero(), T::max);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| points[a].x.partial_cmp(&points[b].x).expect("finite"));
    let sorted: Vec<Point<T>> = order.iter().map(|&i| points[i]).collect();
    let rect = domain.bbox();
    let area = domain.area();
    // (distance, weight) for every unordered pair within r_max.
    let mut pairs: Vec<(T, T)> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let p = sorted[i];
            let sorted = &sorted;
            (i + 1..n)
                .take_while(move |&j| sorted[j].x - p.x <= r_max)
                .filter_map(move |j| {
                    let q = sorted[j];
                    let d = p.dist(q);
                    if d > r_max {
                        return None;
                    }
                    let w = match correction {
                        EdgeCorrection::None => T::one(),
                        EdgeCorrection::Translation => {
                            let overlap = (rect.width() - (p.x - q.x).abs()) * (rect.height() - (p.y - q.y).abs());
                            area / overlap.max(T::min_positive_value())
                        }
                    };
                    Some((d, w))
                })
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite").then(a.1.partial_cmp(&b.1).expect("finite")));
    let mut cumulative = Vec::with_capacity(pairs.len() + 1);
    let mut acc = T::zero();
    cumulative.push(acc);
    for (_, w) in &pairs {
        acc = acc + *w;
        cumulative.push(acc);
    }
    let scale = area / (T::of_usize(n) * T::of_usize(n - 1));
    radii
        .iter()
        .map(|r| {
            let m = pairs.partition_point(|(d, _)| *d <= *r);
            // Each unordered pair counts once for i→j and once for j→i.
            T::two() * cumulative[m] * scale
        })
        .collect()
}

fn check_inputs<T: Scalar>(points: &[Point<T>], domain: &ObservationDomain<T>, radii: &[T], correction: EdgeCorrection) -> Result<Vec<String>> {
    if points.len() < 2 {
        return Err(Error::InvalidInput("K function needs at least two points".into()));
    }
    if radii.iter().any(|r| !(*r >= T::zero() && r.is_finite())) {
        return Err(Error::param("radii", "must be finite and non-negative"));
    }
    if correction == EdgeCorrection::Translation && domain.as_rect().is_none() {
        return Err(Error::InvalidInput("translation correction needs a rectangular domain".into()));
    }
    let diameter = domain.bbox().diameter();
    let mut warnings = Vec::new();
    if radii.iter().any(|r| *r > diameter) {
        warnings.push(format!("radii beyond the domain diameter {} carry no information", diameter.as_f64()));
    }
    Ok(warnings)
}

/// K̂(r) = |X| / (n(n−1)) Σ_{i≠j} 1[d_ij ≤ r] (optionally edge-weighted).
pub fn k_function<T: Scalar>(points: &[Point<T>], domain: &ObservationDomain<T>, radii: &[T], correction: EdgeCorrection) -> Result<KFunction<T>> {
    let warnings = check_inputs(points, domain, radii, correction)?;
    Ok(KFunction {
        radii: radii.to_vec(),
        khat: k_estimate(points, domain, radii, correction),
        envelope_lo: None,
        envelope_hi: None,
        warnings,
    })
}

/// `n` points uniform on X by rejection from the bounding box.
pub fn uniform_points<T: Scalar, R: Rng + ?Sized>(domain: &ObservationDomain<T>, n: usize, rng: &mut R) -> Vec<Point<T>> {
    let b = domain.bbox();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let (u, v): (f64, f64) = (rng.random(), rng.random());
        let p = Point::new(b.x_min + b.width() * T::lit(u), b.y_min + b.height() * T::lit(v));
        if domain.contains(p) {
            out.push(p);
        }
    }
    out
}

/// K̂ with pointwise min/max envelope over `simulations` binomial patterns
/// of the same size on X.
pub fn k_function_envelope<T: Scalar>(
    points: &[Point<T>],
    domain: &ObservationDomain<T>,
    radii: &[T],
    correction: EdgeCorrection,
    simulations: usize,
    seed: u64,
) -> Result<KFunction<T>> {
    let mut k = k_function(points, domain, radii, correction)?;
    if simulations == 0 {
        return Err(Error::param("simulations", "must be positive"));
    }
    let n = points.len();
    let sims: Vec<Vec<T>> = (0..simulations)
        .into_par_iter()
        .map(|s| {
            let mut rng = stream(seed, "k-envelope", s as u64);
            let pts = uniform_points(domain, n, &mut rng);
            k_estimate(&pts, domain, radii, correction)
        })
        .collect();
    let lo = (0..radii.len())
        .map(|r| sims.iter().map(|s| s[r]).fold(T::infinity(), T::min))
        .collect();
    let hi = (0..radii.len())
        .map(|r| sims.iter().map(|s| s[r]).fold(T::neg_infinity(), T::max))
        .collect();
    k.envelope_lo = Some(lo);
    k.envelope_hi = Some(hi);
    Ok(k)
}

/// CSV with columns `r,khat,env_lo,env_hi` (envelope columns empty when
/// absent).
pub fn write_k_function<T: Scalar, W: Write>(w: W, k: &KFunction<T>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["r", "khat", "env_lo", "env_hi"])?;
    let fmt = |v: T| format_significant(v.as_f64(), crate::catalog::DECIMAL_DIGITS);
    for i in 0..k.radii.len() {
        out.write_record([
            fmt(k.radii[i]),
            fmt(k.khat[i]),
            k.envelope_lo.as_ref().map_or(String::new(), |v| fmt(v[i])),
            k.envelope_hi.as_ref().map_or(String::new(), |v| fmt(v[i])),
        ])?;
    }
    out.flush()?;
    Ok(())
}
