//! Conditional intensity λ(s, t | history) = μ(s) + Σ_{t_j < t} g(s − s_j, t − t_j).

pub mod background;
pub mod triggering;

use rayon::prelude::*;

pub use background::{BackgroundModel, GridField, WeightedKde};
pub use triggering::{eval_triggering, triggering_mass, HistogramKernel, SpatialRegion, TriggeringFamily};

use crate::catalog::{Event, EventCatalog, ObservationDomain, Region};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::scalar::{CompensatedSum, Scalar};

/// How ∫∫λ over the observation window is computed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum IntegrationMethod<T> {
    /// Background over the window plus each event's triggering mass over ℝ²
    /// and all later times (or up to the window end when `truncate_time`).
    /// Never below the exact integral.
    Schoenberg { truncate_time: bool },
    /// Exact window integral: temporal parts in closed form, spatial parts
    /// by adaptive quadrature with absolute tolerance `tol`.
    Cubature { tol: T },
}

impl<T: Scalar> Default for IntegrationMethod<T> {
    fn default() -> Self {
        Self::Schoenberg { truncate_time: false }
    }
}

impl<T: Scalar> IntegrationMethod<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Schoenberg { .. } => "schoenberg",
            Self::Cubature { .. } => "cubature",
        }
    }

    fn quadrature_tol(&self) -> T {
        match self {
            Self::Cubature { tol } => *tol,
            Self::Schoenberg { .. } => T::lit(1e-10),
        }
    }
}

/// A space-time integration window `region × [t_start, t_end)`.
#[derive(Clone, Copy, Debug)]
pub struct Window<'a, T> {
    pub region: SpatialRegion<'a, T>,
    pub area: T,
    pub t_start: T,
    pub t_end: T,
}

impl<'a, T: Scalar> Window<'a, T> {
    pub fn of_domain(domain: &'a ObservationDomain<T>) -> Self {
        Self {
            region: domain_region(domain),
            area: domain.area(),
            t_start: T::zero(),
            t_end: domain.t_end(),
        }
    }

    pub fn volume(&self) -> T {
        self.area * (self.t_end - self.t_start)
    }
}

/// Spatial integration region of an observation domain, using the
/// rectangle fast paths where possible.
pub fn domain_region<T: Scalar>(domain: &ObservationDomain<T>) -> SpatialRegion<'_, T> {
    match domain.region() {
        Region::Rectangle(r) => SpatialRegion::Rect(r),
        Region::Polygon(_) => SpatialRegion::Ring(domain.ring()),
    }
}

/// ∫∫λ over a window, split into its parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratedIntensity<T> {
    pub value: T,
    pub background: T,
    pub triggered: T,
    /// Summed quadrature error estimate (0 for closed forms).
    pub error_estimate: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntensityModel<T> {
    pub background: BackgroundModel<T>,
    /// `None` for a pure (inhomogeneous) Poisson model.
    pub triggering: Option<TriggeringFamily<T>>,
    /// Whether parent marks feed the productivity term.
    pub uses_marks: bool,
    /// When set, history terms are dropped past the lag at which the
    /// remaining triggering mass falls below this value.
    pub history_tail: Option<T>,
}

impl<T: Scalar> IntensityModel<T> {
    pub fn new(background: BackgroundModel<T>, triggering: Option<TriggeringFamily<T>>) -> Result<Self> {
        background.validate()?;
        if let Some(g) = &triggering {
            g.validate()?;
        }
        let uses_marks = matches!(triggering, Some(TriggeringFamily::EtasPowerLaw { .. }));
        Ok(Self {
            background,
            triggering,
            uses_marks,
            history_tail: None,
        })
    }

    pub fn poisson(nu: T) -> Result<Self> {
        Self::new(BackgroundModel::constant(nu)?, None)
    }

    pub fn with_history_tail(mut self, tail: Option<T>) -> Self {
        self.history_tail = tail;
        self
    }

    pub fn with_marks(mut self, uses_marks: bool) -> Self {
        self.uses_marks = uses_marks;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.background.validate()?;
        if let Some(g) = &self.triggering {
            g.validate()?;
        }
        Ok(())
    }

    #[inline]
    pub fn parent_mark(&self, e: &Event<T>) -> Option<T> {
        if self.uses_marks {
            e.mark
        } else {
            None
        }
    }

    /// Lag beyond which history terms are skipped (+∞ when exact).
    pub fn history_cutoff(&self, catalog: &EventCatalog<T>) -> T {
        let Some(g) = &self.triggering else {
            return T::zero();
        };
        match self.history_tail {
            Some(tail) => {
                let max_mark = if self.uses_marks {
                    catalog.events().iter().filter_map(|e| e.mark).fold(None, |a: Option<T>, m| {
                        Some(a.map_or(m, |a| a.max(m)))
                    })
                } else {
                    None
                };
                g.tail_lag(tail, max_mark)
            }
            None => g.support_end().unwrap_or(T::infinity()),
        }
    }

    /// Σ_{t_j < t} g(s − s_j, t − t_j), visiting only the first `limit`
    /// events of the catalog.
    pub(crate) fn history_sum(&self, catalog: &EventCatalog<T>, limit: usize, s: Point<T>, t: T, cutoff: T) -> T {
        let Some(g) = &self.triggering else {
            return T::zero();
        };
        let events = catalog.events();
        let mut acc = T::zero();
        for e in events[..limit].iter().rev() {
            let dt = t - e.t;
            if dt > cutoff {
                break;
            }
            if dt > T::zero() {
                acc = acc + g.eval(s.x - e.x, s.y - e.y, dt, self.parent_mark(e));
            }
        }
        acc
    }

    /// λ(s, t | events strictly before t).
    pub fn eval(&self, catalog: &EventCatalog<T>, s: Point<T>, t: T) -> T {
        let cutoff = self.history_cutoff(catalog);
        let limit = catalog.count_before(t);
        self.background.eval(s) + self.history_sum(catalog, limit, s, t, cutoff)
    }

    /// λ at every event, each conditioned on its strict past.
    pub fn intensity_at_events(&self, catalog: &EventCatalog<T>) -> Vec<T> {
        let cutoff = self.history_cutoff(catalog);
        let events = catalog.events();
        (0..events.len())
            .into_par_iter()
            .map(|i| {
                let e = &events[i];
                self.background.eval(e.location()) + self.history_sum(catalog, i, e.location(), e.t, cutoff)
            })
            .collect()
    }

    /// Lag interval and spatial region over which parent `j` contributes to
    /// the window integral under `method`.
    pub fn parent_window<'a>(&self, t_j: T, window: &Window<'a, T>, method: &IntegrationMethod<T>) -> (T, T, SpatialRegion<'a, T>) {
        let lo = (window.t_start - t_j).max(T::zero());
        match method {
            IntegrationMethod::Schoenberg { truncate_time } => {
                let hi = if *truncate_time { window.t_end - t_j } else { T::infinity() };
                (lo, hi, SpatialRegion::Plane)
            }
            IntegrationMethod::Cubature { .. } => (lo, window.t_end - t_j, window.region),
        }
    }

    /// ∫∫λ over a window. Parents are all catalog events before its end.
    pub fn integrate(&self, catalog: &EventCatalog<T>, window: &Window<'_, T>, method: &IntegrationMethod<T>) -> Result<IntegratedIntensity<T>> {
        let tol = method.quadrature_tol();
        let duration = window.t_end - window.t_start;
        let background = self.background.integral(window.region, window.area, tol)? * duration;
        let (triggered, error_estimate) = match &self.triggering {
            None => (T::zero(), T::zero()),
            Some(g) => {
                let parents = catalog.count_before(window.t_end);
                let per_parent = tol / T::of_usize(parents.max(1));
                let events = catalog.events();
                let parts: Vec<(T, T)> = (0..parents)
                    .into_par_iter()
                    .map(|j| {
                        let e = &events[j];
                        let (lo, hi, region) = self.parent_window(e.t, window, method);
                        g.window_mass(e.location(), self.parent_mark(e), lo, hi, region, per_parent)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let mut value = CompensatedSum::new();
                let mut err = CompensatedSum::new();
                for (v, e) in parts {
                    value.add(v);
                    err.add(e);
                }
                (value.value(), err.value())
            }
        };
        if let IntegrationMethod::Cubature { tol } = method {
            if error_estimate > *tol {
                return Err(Error::CubatureTolerance {
                    requested: tol.as_f64(),
                    achieved: error_estimate.as_f64(),
                });
            }
        }
        Ok(IntegratedIntensity {
            value: background + triggered,
            background,
            triggered,
            error_estimate,
        })
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = self.background.param_names();
        if let Some(g) = &self.triggering {
            names.extend(g.param_names());
        }
        names
    }

    pub fn n_params(&self) -> usize {
        self.background.n_params() + self.triggering.as_ref().map_or(0, |g| g.n_params())
    }

    /// Parameters that affect λ: the ETAS magnitude slope drops out when
    /// marks are ignored.
    pub fn n_free_params(&self) -> usize {
        let unused_alpha = !self.uses_marks && matches!(self.triggering, Some(TriggeringFamily::EtasPowerLaw { .. }));
        self.n_params() - usize::from(unused_alpha)
    }

    /// Background parameters followed by triggering parameters.
    pub fn params(&self) -> Vec<T> {
        let mut v = self.background.params();
        if let Some(g) = &self.triggering {
            v.extend(g.params());
        }
        v
    }

    pub fn with_params(&self, v: &[T]) -> Self {
        assert_eq!(v.len(), self.n_params(), "parameter vector length");
        let nb = self.background.n_params();
        Self {
            background: self.background.with_params(&v[..nb]),
            triggering: self.triggering.as_ref().map(|g| g.with_params(&v[nb..])),
            uses_marks: self.uses_marks,
            history_tail: self.history_tail,
        }
    }

    /// ∂λ(s_i, t_i)/∂params at event `i`.
    pub fn gradient_at_event(&self, catalog: &EventCatalog<T>, i: usize, cutoff: T, out: &mut [T]) {
        let nb = self.background.n_params();
        let e = catalog.get(i);
        self.background.gradient(e.location(), &mut out[..nb]);
        for o in out[nb..].iter_mut() {
            *o = T::zero();
        }
        let Some(g) = &self.triggering else {
            return;
        };
        let mut scratch = vec![T::zero(); g.n_params()];
        for p in catalog.events()[..i].iter().rev() {
            let dt = e.t - p.t;
            if dt > cutoff {
                break;
            }
            if dt > T::zero() {
                g.eval_gradient(e.x - p.x, e.y - p.y, dt, self.parent_mark(p), &mut scratch);
                for (o, s) in out[nb..].iter_mut().zip(&scratch) {
                    *o = *o + *s;
                }
            }
        }
    }

    /// Branching ratio of the triggering part (0 without triggering).
    pub fn branching_ratio(&self, mark: Option<T>) -> Result<T> {
        match &self.triggering {
            Some(g) => g.mass(mark),
            None => Ok(T::zero()),
        }
    }
}

/// λ(s, t | history) as a free function.
pub fn eval_intensity<T: Scalar>(model: &IntensityModel<T>, catalog: &EventCatalog<T>, s: Point<T>, t: T) -> T {
    model.eval(catalog, s, t)
}

/// ∫∫λ over X × [0, T).
pub fn integrated_intensity<T: Scalar>(
    model: &IntensityModel<T>,
    catalog: &EventCatalog<T>,
    domain: &ObservationDomain<T>,
    method: &IntegrationMethod<T>,
) -> Result<IntegratedIntensity<T>> {
    model.integrate(catalog, &Window::of_domain(domain), method)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Event;

    fn ge_model(nu: f64) -> IntensityModel<f64> {
        IntensityModel::new(
            BackgroundModel::constant(nu).unwrap(),
            Some(TriggeringFamily::gaussian_exponential(0.3, 1.0, 0.01).unwrap()),
        )
        .unwrap()
    }

    #[test]
    fn empty_catalog_is_background() {
        let m = ge_model(0.5);
        let c = EventCatalog::empty();
        assert_eq!(eval_intensity(&m, &c, Point::new(0.3, 0.3), 0.7), 0.5);
    }

    #[test]
    fn one_parent_adds_triggering() {
        let m = ge_model(0.5);
        let c = EventCatalog::new(vec![Event::new(0.0, 0.4, 0.5)]);
        let v = eval_intensity(&m, &c, Point::new(0.5, 0.5), 1.0);
        let g = 0.3 / (2.0 * std::f64::consts::PI * 0.01) * (-1.5f64).exp();
        assert!((v - (0.5 + g)).abs() < 1e-12);
        assert!((v - 1.565).abs() < 1e-3);
        // An event at exactly t contributes nothing.
        assert_eq!(eval_intensity(&m, &c, Point::new(0.4, 0.5), 0.0), 0.5);
    }

    #[test]
    fn constant_rate_integral_both_methods() {
        let m = IntensityModel::poisson(0.5).unwrap();
        let d = ObservationDomain::unit_square(1.0).unwrap();
        let c = EventCatalog::empty();
        for method in [IntegrationMethod::Schoenberg { truncate_time: false }, IntegrationMethod::Cubature { tol: 1e-9 }] {
            assert_eq!(integrated_intensity(&m, &c, &d, &method).unwrap().value, 0.5);
        }
    }

    #[test]
    fn schoenberg_bounds_cubature() {
        let m = ge_model(1.0);
        let d = ObservationDomain::unit_square(3.0).unwrap();
        let c = EventCatalog::new(vec![
            Event::new(0.1, 0.02, 0.5),
            Event::new(1.0, 0.5, 0.5),
            Event::new(2.9, 0.9, 0.95),
        ]);
        let s = integrated_intensity(&m, &c, &d, &IntegrationMethod::Schoenberg { truncate_time: false }).unwrap();
        let t = integrated_intensity(&m, &c, &d, &IntegrationMethod::Schoenberg { truncate_time: true }).unwrap();
        let q = integrated_intensity(&m, &c, &d, &IntegrationMethod::Cubature { tol: 1e-9 }).unwrap();
        assert!(s.value >= t.value && t.value >= q.value - 1e-9);
        assert!((s.value - (3.0 + 0.9)).abs() < 1e-12);
    }

    #[test]
    fn tiny_kernel_at_center_methods_agree() {
        let m = IntensityModel::new(
            BackgroundModel::constant(0.2).unwrap(),
            Some(TriggeringFamily::gaussian_exponential(0.6, 0.5, 1e-6).unwrap()),
        )
        .unwrap();
        let d = ObservationDomain::unit_square(40.0).unwrap();
        let c = EventCatalog::new(vec![Event::new(1.0, 0.5, 0.5)]);
        let s: f64 = integrated_intensity(&m, &c, &d, &IntegrationMethod::Schoenberg { truncate_time: false }).unwrap().value;
        let q = integrated_intensity(&m, &c, &d, &IntegrationMethod::Cubature { tol: 1e-10 }).unwrap().value;
        assert!((s - q).abs() / q < 1e-4);
    }

    #[test]
    fn history_cutoff_drops_only_tail() {
        let m = ge_model(0.5).with_history_tail(Some(1e-10));
        let exact = ge_model(0.5);
        let c = EventCatalog::new(vec![Event::new(0.0, 0.5, 0.5), Event::new(30.0, 0.5, 0.5)]);
        let s = Point::new(0.5, 0.5);
        let a: f64 = m.eval(&c, s, 30.5);
        let b = exact.eval(&c, s, 30.5);
        assert!((a - b).abs() < 1e-10 * b);
        assert!(m.history_cutoff(&c) < 30.0);
    }
}
