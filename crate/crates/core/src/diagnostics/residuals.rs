//! Random thinning and super-thinning of a catalog against a fitted model.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::catalog::{Event, EventCatalog, ObservationDomain};
use crate::error::{Error, Result};
use crate::fit::checked_intensities;
use crate::geometry::Point;
use crate::intensity::IntensityModel;
use crate::rng::stream;
use crate::scalar::{compensated_sum, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResidualKind {
    Thinned,
    SuperThinned,
}

#[derive(Clone, Debug)]
pub struct ResidualProcess<T> {
    /// Retained and superposed points in time order.
    pub events: Vec<Event<T>>,
    /// True for simulated (superposed) points.
    pub simulated: Vec<bool>,
    /// Catalog index of each retained point (`None` when simulated).
    pub source: Vec<Option<usize>>,
    pub target_rate: T,
    pub kind: ResidualKind,
    /// Expected number of retained catalog events.
    pub expected_retained: T,
    pub warnings: Vec<String>,
}

impl<T: Scalar> ResidualProcess<T> {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn locations(&self) -> Vec<Point<T>> {
        self.events.iter().map(|e| e.location()).collect()
    }
}

/// Grid resolution for the extrema searches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExtremaGrid {
    pub size: usize,
    /// Points per side of the local refinement grid.
    pub refine: usize,
}

impl Default for ExtremaGrid {
    fn default() -> Self {
        Self { size: 200, refine: 21 }
    }
}

fn grid_points<T: Scalar>(domain: &ObservationDomain<T>, size: usize) -> Vec<Point<T>> {
    let b = domain.bbox();
    let n = T::of_usize(size);
    let mut pts = Vec::with_capacity(size * size);
    for iy in 0..size {
        for ix in 0..size {
            let p = Point::new(
                b.x_min + b.width() * (T::of_usize(ix) + T::half()) / n,
                b.y_min + b.height() * (T::of_usize(iy) + T::half()) / n,
            );
            if domain.contains(p) {
                pts.push(p);
            }
        }
    }
    pts
}

/// Local grid of `refine × refine` points spanning one coarse cell each
/// way around `center`, kept inside X.
fn refine_around<T: Scalar>(domain: &ObservationDomain<T>, center: Point<T>, size: usize, refine: usize) -> Vec<Point<T>> {
    let b = domain.bbox();
    let (hx, hy) = (b.width() / T::of_usize(size), b.height() / T::of_usize(size));
    let m = refine.max(2);
    let mut pts = Vec::with_capacity(m * m);
    for iy in 0..m {
        for ix in 0..m {
            let fx = T::two() * T::of_usize(ix) / T::of_usize(m - 1) - T::one();
            let fy = T::two() * T::of_usize(iy) / T::of_usize(m - 1) - T::one();
            let p = Point::new(center.x + fx * hx, center.y + fy * hy);
            if domain.contains(p) {
                pts.push(p);
            }
        }
    }
    pts
}

/// inf λ over X × [0, T). Triggering is non-negative and absent at t = 0, so
/// this is inf μ over X, found on a grid and refined once near the minimum.
pub fn intensity_infimum<T: Scalar>(model: &IntensityModel<T>, domain: &ObservationDomain<T>, grid: ExtremaGrid) -> T {
    if let crate::intensity::BackgroundModel::Constant { nu } = &model.background {
        return *nu;
    }
    let pts = grid_points(domain, grid.size);
    let vals: Vec<T> = pts.par_iter().map(|p| model.background.eval(*p)).collect();
    let Some((k, coarse)) = vals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite"))
        .map(|(k, v)| (k, *v))
    else {
        return T::zero();
    };
    refine_around(domain, pts[k], grid.size, grid.refine)
        .into_iter()
        .map(|p| model.background.eval(p))
        .fold(coarse, T::min)
}

/// sup λ over X × [0, T): the larger of sup μ on the grid and λ just after
/// each event, refined on a local grid around the largest such value.
pub fn intensity_supremum<T: Scalar>(
    model: &IntensityModel<T>,
    catalog: &EventCatalog<T>,
    domain: &ObservationDomain<T>,
    grid: ExtremaGrid,
) -> T {
    let pts = grid_points(domain, grid.size);
    let background_max = pts.par_iter().map(|p| model.background.eval(*p)).reduce(T::zero, T::max);
    let n = catalog.len();
    if n == 0 || model.triggering.is_none() {
        return background_max;
    }
    // λ at (s_i, t_i + ε): the event itself joins the history.
    let after: Vec<T> = (0..n)
        .into_par_iter()
        .map(|i| {
            let e = catalog.get(i);
            model.eval(catalog, e.location(), just_after(e.t))
        })
        .collect();
    let (k, peak) = after
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite"))
        .map(|(k, v)| (k, *v))
        .expect("non-empty");
    let e = catalog.get(k);
    let refined = refine_around(domain, e.location(), grid.size, grid.refine)
        .into_iter()
        .map(|p| model.eval(catalog, p, just_after(e.t)))
        .fold(peak, T::max);
    refined.max(background_max)
}

fn just_after<T: Scalar>(t: T) -> T {
    let eps = T::epsilon() * t.abs().max(T::one()) * T::lit(4.0);
    t + eps
}

/// Keeps event i with probability b / λ(s_i, t_i), where b = inf λ.
pub fn thin_residuals<T: Scalar>(
    model: &IntensityModel<T>,
    catalog: &EventCatalog<T>,
    domain: &ObservationDomain<T>,
    seed: u64,
) -> Result<ResidualProcess<T>> {
    thin_residuals_with(model, catalog, domain, seed, ExtremaGrid::default())
}

pub fn thin_residuals_with<T: Scalar>(
    model: &IntensityModel<T>,
    catalog: &EventCatalog<T>,
    domain: &ObservationDomain<T>,
    seed: u64,
    grid: ExtremaGrid,
) -> Result<ResidualProcess<T>> {
    let lambdas = checked_intensities(model, catalog)?;
    let b = intensity_infimum(model, domain, grid);
    if !(b > T::zero()) {
        return Err(Error::Degenerate(
            "inf λ is zero, so thinning would remove every event".into(),
        ));
    }
    let probs: Vec<T> = lambdas.iter().map(|l| (b / *l).min(T::one())).collect();
    let expected_retained = compensated_sum(probs.iter().copied());
    let mut warnings = Vec::new();
    if expected_retained < T::lit(10.0) {
        warnings.push(format!(
            "only {:.1} events expected to survive thinning; homogeneity tests will be uninformative",
            expected_retained.as_f64()
        ));
    }
    let keep: Vec<bool> = (0..catalog.len())
        .into_par_iter()
        .map(|i| stream(seed, "thin", i as u64).random::<f64>() < probs[i].as_f64())
        .collect();
    let source: Vec<Option<usize>> = (0..catalog.len()).filter(|&i| keep[i]).map(Some).collect();
    let events = source.iter().map(|i| *catalog.get(i.expect("retained"))).collect();
    Ok(ResidualProcess {
        events,
        simulated: vec![false; source.len()],
        source,
        target_rate: b,
        kind: ResidualKind::Thinned,
        expected_retained,
        warnings,
    })
}

/// Thins each event with probability min(k/λ, 1) and superposes a Poisson
/// process of rate max(k − λ, 0); under the true model the result is
/// homogeneous Poisson with rate k.
pub fn super_thin<T: Scalar>(
    model: &IntensityModel<T>,
    catalog: &EventCatalog<T>,
    domain: &ObservationDomain<T>,
    k: T,
    seed: u64,
) -> Result<ResidualProcess<T>> {
    super_thin_with(model, catalog, domain, k, seed, ExtremaGrid::default())
}

pub fn super_thin_with<T: Scalar>(
    model: &IntensityModel<T>,
    catalog: &EventCatalog<T>,
    domain: &ObservationDomain<T>,
    k: T,
    seed: u64,
    grid: ExtremaGrid,
) -> Result<ResidualProcess<T>> {
    let lambdas = checked_intensities(model, catalog)?;
    let lo = intensity_infimum(model, domain, grid);
    let hi = intensity_supremum(model, catalog, domain, grid);
    // Grid extrema carry their own rounding; allow a sliver of slack.
    let slack = T::lit(1e-9) * hi.abs().max(T::one());
    if !(k >= lo - slack && k <= hi + slack) {
        return Err(Error::param(
            "k",
            format!("must lie in [inf λ, sup λ] = [{}, {}], got {k}", lo.as_f64(), hi.as_f64()),
        ));
    }
    let keep: Vec<bool> = (0..catalog.len())
        .into_par_iter()
        .map(|i| {
            let p = (k / lambdas[i]).min(T::one());
            stream(seed, "superthin-keep", i as u64).random::<f64>() < p.as_f64()
        })
        .collect();
    let expected_retained = compensated_sum(lambdas.iter().map(|l| (k / *l).min(T::one())));

    // Candidates at rate k over X × [0, T), accepted with (k − λ)⁺ / k.
    let mut rng = stream(seed, "superthin-candidates", 0);
    let b = domain.bbox();
    let t_end = domain.t_end();
    let mean = (k * b.area() * t_end).as_f64();
    let count = if mean > 0.0 {
        Poisson::new(mean).expect("finite mean").sample(&mut rng) as usize
    } else {
        0
    };
    let mut candidates = Vec::with_capacity(count);
    for _ in 0..count {
        let (u, v, w, a): (f64, f64, f64, f64) = (rng.random(), rng.random(), rng.random(), rng.random());
        let p = Point::new(b.x_min + b.width() * T::lit(u), b.y_min + b.height() * T::lit(v));
        if domain.contains(p) {
            candidates.push((Event::new(t_end * T::lit(w), p.x, p.y), a));
        }
    }
    let accepted: Vec<bool> = candidates
        .par_iter()
        .map(|(e, a)| {
            let lam = model.eval(catalog, e.location(), e.t);
            let p = ((k - lam) / k).max(T::zero());
            *a < p.as_f64()
        })
        .collect();

    let mut merged: Vec<(Event<T>, Option<usize>)> = (0..catalog.len())
        .filter(|&i| keep[i])
        .map(|i| (*catalog.get(i), Some(i)))
        .collect();
    merged.extend(candidates.iter().zip(&accepted).filter(|(_, a)| **a).map(|((e, _), _)| (*e, None)));
    merged.sort_by(|a, b| a.0.t.partial_cmp(&b.0.t).expect("finite").then(a.1.cmp(&b.1)));
    Ok(ResidualProcess {
        simulated: merged.iter().map(|(_, s)| s.is_none()).collect(),
        source: merged.iter().map(|(_, s)| *s).collect(),
        events: merged.into_iter().map(|(e, _)| e).collect(),
        target_rate: k,
        kind: ResidualKind::SuperThinned,
        expected_retained,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::{BackgroundModel, TriggeringFamily};

    fn catalog() -> EventCatalog<f64> {
        EventCatalog::new((0..50).map(|i| Event::new(i as f64 * 0.2 + 0.1, (i as f64 * 0.37).fract(), (i as f64 * 0.61).fract())).collect())
    }

    #[test]
    fn homogeneous_model_keeps_everything() {
        let d = ObservationDomain::unit_square(10.0).unwrap();
        let m = IntensityModel::poisson(5.0).unwrap();
        let r = thin_residuals(&m, &catalog(), &d, 1).unwrap();
        assert_eq!(r.len(), 50);
        let s = super_thin(&m, &catalog(), &d, 5.0, 1).unwrap();
        assert_eq!(s.len(), 50);
        assert!(s.simulated.iter().all(|x| !x));
    }

    #[test]
    fn k_outside_range_rejected() {
        let d = ObservationDomain::unit_square(10.0).unwrap();
        let m = IntensityModel::new(
            BackgroundModel::constant(5.0).unwrap(),
            Some(TriggeringFamily::gaussian_exponential(0.5, 1.0, 0.01).unwrap()),
        )
        .unwrap();
        assert!(super_thin(&m, &catalog(), &d, 4.0, 1).is_err());
        assert!(super_thin(&m, &catalog(), &d, 1e6, 1).is_err());
        let s = super_thin(&m, &catalog(), &d, 6.0, 1).unwrap();
        assert!(s.events.windows(2).all(|w| w[0].t <= w[1].t));
    }

    #[test]
    fn supremum_sees_event_peaks() {
        let d = ObservationDomain::unit_square(10.0).unwrap();
        let m = IntensityModel::new(
            BackgroundModel::constant(5.0).unwrap(),
            Some(TriggeringFamily::gaussian_exponential(0.5, 1.0, 0.01).unwrap()),
        )
        .unwrap();
        let peak = 0.5 / (2.0 * std::f64::consts::PI * 0.01);
        assert!(intensity_supremum(&m, &catalog(), &d, ExtremaGrid::default()) >= 5.0 + peak);
        assert_eq!(intensity_infimum(&m, &d, ExtremaGrid::default()), 5.0);
    }
}
