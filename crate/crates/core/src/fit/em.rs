use crate::catalog::{EventCatalog, ObservationDomain};
use crate::error::{Error, Result};
use crate::fit::{expectation_step, BranchingMatrix, FitResult};
use crate::geometry::disk_intersection_area;
use crate::intensity::{
    BackgroundModel, HistogramKernel, IntegrationMethod, IntensityModel, SpatialRegion, TriggeringFamily, Window,
};
use crate::optimize::minimize_near;
use crate::scalar::{compensated_sum, CompensatedSum, Scalar};

/// Settings for [`em_fit`].
#[derive(Clone, Debug)]
pub struct EmConfig<T> {
    pub method: IntegrationMethod<T>,
    /// Stop when both |Δℓ| and the relative parameter change fall below
    /// these tolerances.
    pub loglik_tol: T,
    pub param_tol: T,
    pub max_iter: usize,
    /// Tolerance of the 1-D searches in numeric M-steps.
    pub m_step_tol: T,
    /// Branching entries below this probability are dropped.
    pub prune_below: T,
    /// Optional interior subdomain: only its events enter the likelihood
    /// and only its area is integrated, while history comes from all events.
    pub interior: Option<ObservationDomain<T>>,
    /// Keep the background at its initial value.
    pub fix_background: bool,
}

impl<T: Scalar> Default for EmConfig<T> {
    fn default() -> Self {
        Self {
            method: IntegrationMethod::default(),
            loglik_tol: T::lit(1e-6),
            param_tol: T::lit(1e-6),
            max_iter: 500,
            m_step_tol: T::lit(1e-8),
            prune_below: T::zero(),
            interior: None,
            fix_background: false,
        }
    }
}

/// Maximum likelihood by expectation–maximization over the latent branching
/// structure, starting from the parameters in `init`.
///
/// Every M-step either maximizes the expected complete-data log-likelihood
/// in closed form or improves it by coordinate-wise Brent searches, so the
/// observed log-likelihood never decreases. Hitting `max_iter` is not an
/// error: the last iterate is returned with `converged = false`.
pub fn em_fit<T: Scalar>(
    init: &IntensityModel<T>,
    catalog: &EventCatalog<T>,
    domain: &ObservationDomain<T>,
    config: &EmConfig<T>,
) -> Result<FitResult<T>> {
    init.validate()?;
    if catalog.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    let fit_domain = match &config.interior {
        Some(inner) => {
            if inner.t_end() != domain.t_end() {
                return Err(Error::InvalidDomain("interior subdomain must share the time window".into()));
            }
            inner
        }
        None => domain,
    };
    let window = Window::of_domain(fit_domain);
    let targets: Vec<bool> = catalog
        .events()
        .iter()
        .map(|e| config.interior.as_ref().is_none_or(|d| d.contains(e.location())))
        .collect();
    if !targets.iter().any(|t| *t) {
        return Err(Error::EmptyCatalog);
    }

    let fix_background = config.fix_background || init.background.n_params() == 0;
    let background_at = |m: &IntensityModel<T>| -> Vec<T> { catalog.events().iter().map(|e| m.background.eval(e.location())).collect() };
    let cached_background = if fix_background { Some(background_at(init)) } else { None };

    let mut ctx = MStep::new(catalog, &window, &config.method, &targets, config.m_step_tol.as_f64(), fix_background);
    let mut model = init.clone();
    let mut trace: Vec<T> = Vec::new();
    let mut last_change = T::infinity();
    let mut converged = false;
    let mut iterations = 0;
    let mut at_bound = Vec::new();
    let branching = loop {
        let mu = match &cached_background {
            Some(mu) => mu.clone(),
            None => background_at(&model),
        };
        let (branching, lambdas) = expectation_step(&model, catalog, &mu, config.prune_below)?;
        let sum_log = compensated_sum(lambdas.iter().zip(&targets).filter(|(_, t)| **t).map(|(l, _)| l.ln()));
        let integral = model.integrate(catalog, &window, &config.method)?.value;
        let ll = sum_log - integral;
        if let Some(prev) = trace.last() {
            if (ll - *prev).abs() < config.loglik_tol && last_change < config.param_tol {
                converged = true;
            }
        }
        trace.push(ll);
        if converged || iterations >= config.max_iter {
            break branching;
        }
        let (next, bound) = ctx.update(&model, &branching)?;
        at_bound = bound;
        last_change = relative_change(&model.params(), &next.params());
        model = next;
        iterations += 1;
    };
    Ok(FitResult {
        theta_hat: model.params(),
        param_names: model.param_names(),
        model,
        loglik_trace: trace,
        iterations,
        converged,
        branching,
        at_bound,
    })
}

fn relative_change<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x - *y).abs() / x.abs().max(T::one()))
        .fold(T::zero(), T::max)
}

/// A triggered pair (child in the fitting window, any earlier parent).
#[derive(Clone, Copy)]
struct Pair {
    dt: f64,
    r2: f64,
    /// Parent magnitude above threshold (0 when unmarked).
    dm: f64,
    p: f64,
}

#[derive(Clone, Copy, PartialEq)]
enum Transform {
    Log,
    LogAboveOne,
    Linear,
}

impl Transform {
    fn encode(self, v: f64) -> f64 {
        match self {
            Self::Log => v.ln(),
            Self::LogAboveOne => (v - 1.0).ln(),
            Self::Linear => v,
        }
    }

    fn decode(self, u: f64) -> f64 {
        match self {
            Self::Log => u.exp(),
            Self::LogAboveOne => 1.0 + u.exp(),
            Self::Linear => u,
        }
    }

    fn step(self) -> f64 {
        match self {
            Self::Linear => 0.25,
            _ => 0.5,
        }
    }
}

/// Position of the magnitude slope among the ETAS parameters.
const ALPHA: usize = 1;

/// Search coordinates must stay inside ±SEARCH_LIMIT.
const SEARCH_LIMIT: f64 = 40.0;

struct MStep<'a, T: Scalar> {
    catalog: &'a EventCatalog<T>,
    window: &'a Window<'a, T>,
    method: &'a IntegrationMethod<T>,
    targets: &'a [bool],
    tol: f64,
    fix_background: bool,
    /// Spatial mass fraction per parent, keyed by the spatial parameters.
    spatial_cache: Option<(Vec<f64>, Vec<f64>)>,
    /// Window measure of each histogram cell summed over parents.
    histogram_exposure: Option<Vec<T>>,
    grid_areas: Option<Vec<T>>,
    /// Last (c, Σp·ln(Δt + c)) and (d, Σp·ln(1 + r²/d)) for the current pairs.
    omori_sums: [Option<(f64, f64)>; 2],
}

impl<'a, T: Scalar> MStep<'a, T> {
    fn new(
        catalog: &'a EventCatalog<T>,
        window: &'a Window<'a, T>,
        method: &'a IntegrationMethod<T>,
        targets: &'a [bool],
        tol: f64,
        fix_background: bool,
    ) -> Self {
        Self {
            catalog,
            window,
            method,
            targets,
            tol,
            fix_background,
            spatial_cache: None,
            histogram_exposure: None,
            grid_areas: None,
            omori_sums: [None, None],
        }
    }

    fn update(&mut self, model: &IntensityModel<T>, branching: &BranchingMatrix<T>) -> Result<(IntensityModel<T>, Vec<String>)> {
        let mut next = model.clone();
        let mut bound = Vec::new();
        if !self.fix_background {
            next.background = self.update_background(&model.background, branching);
        }
        if let Some(g) = &model.triggering {
            let (g, b) = self.update_triggering(model, g, branching)?;
            next.triggering = Some(g);
            bound = b;
        }
        Ok((next, bound))
    }

    fn update_background(&mut self, background: &BackgroundModel<T>, branching: &BranchingMatrix<T>) -> BackgroundModel<T> {
        let duration = self.window.t_end - self.window.t_start;
        match background {
            BackgroundModel::Constant { .. } => {
                let p0 = compensated_sum((0..branching.len()).filter(|i| self.targets[*i]).map(|i| branching.background(i)));
                BackgroundModel::Constant {
                    nu: p0 / (self.window.area * duration),
                }
            }
            BackgroundModel::GridField(grid) => {
                let areas = self.grid_areas.get_or_insert_with(|| grid.cell_areas(self.window.region));
                let mut counts = vec![CompensatedSum::new(); grid.n_cells()];
                for (i, e) in self.catalog.events().iter().enumerate() {
                    if self.targets[i] {
                        if let Some(c) = grid.cell_of(e.location()) {
                            counts[c].add(branching.background(i));
                        }
                    }
                }
                let values = counts
                    .iter()
                    .zip(areas.iter())
                    .map(|(c, a)| if *a > T::zero() { c.value() / (*a * duration) } else { T::zero() })
                    .collect();
                let mut grid = grid.clone();
                grid.set_values(values);
                BackgroundModel::GridField(grid)
            }
            BackgroundModel::WeightedKde(_) => background.clone(),
        }
    }

    fn pairs(&self, model: &IntensityModel<T>, branching: &BranchingMatrix<T>) -> Vec<Pair> {
        let events = self.catalog.events();
        let m0 = match &model.triggering {
            Some(TriggeringFamily::EtasPowerLaw { m0, .. }) => m0.as_f64(),
            _ => 0.0,
        };
        let mut out = Vec::with_capacity(branching.n_entries());
        for i in 0..branching.len() {
            if !self.targets[i] {
                continue;
            }
            let e = &events[i];
            let (parents, probs) = branching.row(i);
            for (&j, &p) in parents.iter().zip(probs) {
                let q = &events[j];
                let (dx, dy) = ((e.x - q.x).as_f64(), (e.y - q.y).as_f64());
                out.push(Pair {
                    dt: (e.t - q.t).as_f64(),
                    r2: dx * dx + dy * dy,
                    dm: model.parent_mark(q).map_or(0.0, |m| m.as_f64() - m0),
                    p: p.as_f64(),
                });
            }
        }
        out
    }

    fn update_triggering(
        &mut self,
        model: &IntensityModel<T>,
        family: &TriggeringFamily<T>,
        branching: &BranchingMatrix<T>,
    ) -> Result<(TriggeringFamily<T>, Vec<String>)> {
        let pairs = self.pairs(model, branching);
        self.omori_sums = [None, None];
        let total: f64 = pairs.iter().map(|q| q.p).sum();
        if let TriggeringFamily::Histogram(h) = family {
            return Ok((TriggeringFamily::Histogram(self.update_histogram(model, h, &pairs)?), Vec::new()));
        }
        let mut params: Vec<f64> = family.params().iter().map(|v| v.as_f64()).collect();
        let names = family.param_names();
        if total <= 0.0 {
            params[0] = 0.0;
            let theta: Vec<T> = params.iter().map(|v| T::lit(*v)).collect();
            return Ok((family.with_params(&theta), vec![names[0].clone()]));
        }
        let closed_form = matches!(
            (family, self.method),
            (TriggeringFamily::GaussianExponential { .. }, IntegrationMethod::Schoenberg { truncate_time: false })
        );
        if closed_form {
            let st: f64 = pairs.iter().map(|q| q.p * q.dt).sum();
            let sr: f64 = pairs.iter().map(|q| q.p * q.r2).sum();
            let parents = self.catalog.count_before(self.window.t_end);
            params = vec![total / parents as f64, st / total, sr / (2.0 * total)];
            let theta: Vec<T> = params.iter().map(|v| T::lit(*v)).collect();
            return Ok((family.with_params(&theta), Vec::new()));
        }

        let transforms: Vec<Transform> = match family {
            TriggeringFamily::GaussianExponential { .. } => vec![Transform::Log, Transform::Log, Transform::Log],
            TriggeringFamily::EtasPowerLaw { .. } => vec![
                Transform::Log,
                Transform::Linear,
                Transform::Log,
                Transform::LogAboveOne,
                Transform::Log,
                Transform::LogAboveOne,
            ],
            TriggeringFamily::Histogram(_) => unreachable!(),
        };
        let stats = PairStats::of(&pairs);
        let mut error = None;
        let mut objective = |this: &mut Self, params: &[f64]| -> f64 {
            match this.profiled_objective(model, family, params, &pairs, total, &stats) {
                Ok(v) => v,
                Err(e) => {
                    error.get_or_insert(e);
                    f64::INFINITY
                }
            }
        };
        let mut current = objective(self, &params);
        let search_tol = self.tol;
        for _sweep in 0..3 {
            let start = current;
            for k in 1..params.len() {
                if k == ALPHA && !model.uses_marks && matches!(family, TriggeringFamily::EtasPowerLaw { .. }) {
                    continue;
                }
                let tr = transforms[k];
                let u0 = tr.encode(params[k]);
                let mut trial = params.clone();
                let best = minimize_near(
                    |u| {
                        if u.abs() > SEARCH_LIMIT {
                            return f64::INFINITY;
                        }
                        trial[k] = tr.decode(u);
                        objective(self, &trial)
                    },
                    u0,
                    tr.step(),
                    search_tol,
                );
                if best.f < current {
                    params[k] = tr.decode(best.x);
                    current = best.f;
                }
            }
            if start - current <= self.tol * current.abs().max(1.0) {
                break;
            }
        }
        if let Some(e) = error {
            if !current.is_finite() {
                return Err(e);
            }
        }
        // Profiled productivity for the chosen shape parameters.
        params[0] = 1.0;
        let unit = self.family_of(family, &params);
        let exposure = self.exposure(model, &unit)?;
        params[0] = total / exposure.as_f64();
        let mut bound = Vec::new();
        for k in 1..params.len() {
            if transforms[k].encode(params[k]).abs() >= SEARCH_LIMIT - 1.0 {
                bound.push(names[k].clone());
            }
        }
        Ok((self.family_of(family, &params), bound))
    }

    fn family_of(&self, family: &TriggeringFamily<T>, params: &[f64]) -> TriggeringFamily<T> {
        let theta: Vec<T> = params.iter().map(|v| T::lit(*v)).collect();
        family.with_params(&theta)
    }

    /// Negative expected complete-data log-likelihood of the triggering part
    /// with the productivity profiled out.
    fn profiled_objective(
        &mut self,
        model: &IntensityModel<T>,
        family: &TriggeringFamily<T>,
        params: &[f64],
        pairs: &[Pair],
        total: f64,
        stats: &PairStats,
    ) -> Result<f64> {
        let mut unit_params = params.to_vec();
        unit_params[0] = 1.0;
        let unit = self.family_of(family, &unit_params);
        if unit.validate().is_err() {
            return Ok(f64::INFINITY);
        }
        let log_sum = match family {
            TriggeringFamily::GaussianExponential { .. } => {
                let (omega, sigma2) = (unit_params[1], unit_params[2]);
                -stats.p * (2.0 * std::f64::consts::PI * omega * sigma2).ln() - stats.pt / omega - stats.pr / (2.0 * sigma2)
            }
            TriggeringFamily::EtasPowerLaw { .. } => {
                let (alpha, c, p, d, q) = (unit_params[1], unit_params[2], unit_params[3], unit_params[4], unit_params[5]);
                let spatial_norm = ((q - 1.0) / (std::f64::consts::PI * d)).ln();
                // Line searches move one coordinate at a time, so the two
                // pair sums are usually reusable.
                let mut cached = |slot: usize, key: f64, term: &dyn Fn(&Pair) -> f64| -> f64 {
                    match self.omori_sums[slot] {
                        Some((k, v)) if k == key => v,
                        _ => {
                            let v = pairs.iter().map(|pr| pr.p * term(pr)).sum();
                            self.omori_sums[slot] = Some((key, v));
                            v
                        }
                    }
                };
                let time_sum = cached(0, c, &|pr| (pr.dt + c).ln());
                let space_sum = cached(1, d, &|pr| (pr.r2 / d).ln_1p());
                alpha * stats.pm - p * time_sum + stats.p * spatial_norm - q * space_sum
            }
            TriggeringFamily::Histogram(_) => unreachable!(),
        };
        let exposure = self.exposure(model, &unit)?.as_f64();
        if !(exposure > 0.0) {
            return Ok(f64::INFINITY);
        }
        Ok(-(log_sum + total * (total / exposure).ln() - total))
    }

    /// Σ_j of each parent's triggering mass inside the fitting window.
    fn exposure(&mut self, model: &IntensityModel<T>, family: &TriggeringFamily<T>) -> Result<T> {
        let events = self.catalog.events();
        let parents = self.catalog.count_before(self.window.t_end);
        let spatial_key: Vec<f64> = match family {
            TriggeringFamily::GaussianExponential { sigma2, .. } => vec![sigma2.as_f64()],
            TriggeringFamily::EtasPowerLaw { d, q, .. } => vec![d.as_f64(), q.as_f64()],
            TriggeringFamily::Histogram(_) => unreachable!(),
        };
        let needs_space = matches!(self.method, IntegrationMethod::Cubature { .. });
        if needs_space && self.spatial_cache.as_ref().is_none_or(|(k, _)| *k != spatial_key) {
            let tol = match self.method {
                IntegrationMethod::Cubature { tol } => *tol / T::of_usize(parents.max(1)),
                _ => T::lit(1e-10),
            };
            use rayon::prelude::*;
            let fractions: Vec<f64> = (0..parents)
                .into_par_iter()
                .map(|j| {
                    family
                        .spatial_fraction(events[j].location(), self.window.region, tol)
                        .map(|(f, _)| f.as_f64())
                })
                .collect::<Result<Vec<_>>>()?;
            self.spatial_cache = Some((spatial_key, fractions));
        }
        let mut acc = CompensatedSum::new();
        // Unmarked parents whose window is [0, ∞) all carry the same mass.
        let mut full = 0usize;
        for (j, e) in events[..parents].iter().enumerate() {
            let (lo, hi, _) = model.parent_window(e.t, self.window, self.method);
            let mark = model.parent_mark(e);
            if !needs_space && lo == T::zero() && hi == T::infinity() && mark.is_none() {
                full += 1;
                continue;
            }
            let temporal = family.temporal_mass(lo, hi, mark);
            let spatial = if needs_space {
                T::lit(self.spatial_cache.as_ref().expect("filled above").1[j])
            } else {
                T::one()
            };
            acc.add(temporal * spatial);
        }
        if full > 0 {
            acc.add(T::of_usize(full) * family.temporal_mass(T::zero(), T::infinity(), None));
        }
        Ok(acc.value())
    }

    fn update_histogram(&mut self, model: &IntensityModel<T>, h: &HistogramKernel<T>, pairs: &[Pair]) -> Result<HistogramKernel<T>> {
        let nr = h.n_radius();
        let mut counts = vec![0.0f64; h.values().len()];
        for pr in pairs {
            if let Some((k, l)) = h.cell_of(T::lit(pr.r2.sqrt()), T::lit(pr.dt)) {
                counts[k * nr + l] += pr.p;
            }
        }
        if self.histogram_exposure.is_none() {
            self.histogram_exposure = Some(self.histogram_exposure_of(model, h));
        }
        let exposure = self.histogram_exposure.as_ref().expect("filled above");
        let values = counts
            .iter()
            .zip(exposure)
            .map(|(c, w)| if *w > T::zero() { T::lit(*c) / *w } else { T::zero() })
            .collect();
        let mut next = h.clone();
        next.set_values(values);
        Ok(next)
    }

    fn histogram_exposure_of(&self, model: &IntensityModel<T>, h: &HistogramKernel<T>) -> Vec<T> {
        let (nt, nr) = (h.n_time(), h.n_radius());
        let events = self.catalog.events();
        let parents = self.catalog.count_before(self.window.t_end);
        let ring_owned;
        let ring = match self.window.region {
            SpatialRegion::Plane => None,
            SpatialRegion::Rect(r) => {
                ring_owned = r.corners();
                Some(&ring_owned[..])
            }
            SpatialRegion::Ring(r) => Some(r),
        };
        use rayon::prelude::*;
        let per_parent: Vec<Vec<T>> = (0..parents)
            .into_par_iter()
            .map(|j| {
                let e = &events[j];
                let (lo, hi, region) = model.parent_window(e.t, self.window, self.method);
                let areas: Vec<T> = (0..nr)
                    .map(|l| match (region, ring) {
                        (SpatialRegion::Plane, _) | (_, None) => h.annulus_area(l),
                        (_, Some(ring)) => {
                            let outer = disk_intersection_area(ring, e.location(), h.radius_edges()[l + 1]);
                            let inner = disk_intersection_area(ring, e.location(), h.radius_edges()[l]);
                            (outer - inner).max(T::zero())
                        }
                    })
                    .collect();
                let mut out = vec![T::zero(); nt * nr];
                for k in 0..nt {
                    let overlap = h.time_overlap(k, lo, hi);
                    for l in 0..nr {
                        out[k * nr + l] = overlap * areas[l];
                    }
                }
                out
            })
            .collect();
        (0..nt * nr)
            .map(|c| compensated_sum(per_parent.iter().map(|v| v[c])))
            .collect()
    }
}

/// Probability-weighted pair sums that do not depend on the parameters.
struct PairStats {
    p: f64,
    pt: f64,
    pr: f64,
    pm: f64,
}

impl PairStats {
    fn of(pairs: &[Pair]) -> Self {
        let mut s = Self { p: 0.0, pt: 0.0, pr: 0.0, pm: 0.0 };
        for q in pairs {
            s.p += q.p;
            s.pt += q.p * q.dt;
            s.pr += q.p * q.r2;
            s.pm += q.p * q.dm;
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Event;
    use crate::intensity::BackgroundModel;

    fn clustered_catalog() -> EventCatalog<f64> {
        // Deterministic little catalog: a few loose clusters on [0,1]² × [0,20).
        let mut events = Vec::new();
        let mut x = 0.137f64;
        let mut next = || {
            x = (x * 9301.0 + 0.49297).fract();
            x
        };
        for k in 0..25 {
            let t0 = k as f64 * 0.8;
            let (cx, cy) = (0.1 + 0.8 * next(), 0.1 + 0.8 * next());
            events.push(Event::new(t0, cx, cy));
            for m in 0..(k % 3) {
                events.push(Event::new(t0 + 0.05 + 0.2 * m as f64 + 0.1 * next(), cx + 0.05 * (next() - 0.5), cy + 0.05 * (next() - 0.5)));
            }
        }
        EventCatalog::new(events)
    }

    fn init() -> IntensityModel<f64> {
        IntensityModel::new(
            BackgroundModel::constant(1.0).unwrap(),
            Some(TriggeringFamily::gaussian_exponential(0.3, 0.5, 0.005).unwrap()),
        )
        .unwrap()
    }

    #[test]
    fn trace_is_monotone_for_each_method() {
        let c = clustered_catalog();
        let d = ObservationDomain::unit_square(20.0).unwrap();
        for method in [
            IntegrationMethod::Schoenberg { truncate_time: false },
            IntegrationMethod::Schoenberg { truncate_time: true },
            IntegrationMethod::Cubature { tol: 1e-9 },
        ] {
            let cfg = EmConfig {
                method,
                max_iter: 60,
                ..EmConfig::default()
            };
            let fit = em_fit(&init(), &c, &d, &cfg).unwrap();
            for w in fit.loglik_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-8, "{}: {} -> {}", method.name(), w[0], w[1]);
            }
            let b = &fit.branching;
            for i in 0..b.len() {
                assert!((b.row_sum(i) - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn poisson_reduction() {
        let c = clustered_catalog();
        let d = ObservationDomain::unit_square(20.0).unwrap();
        let m = IntensityModel::poisson(3.0).unwrap();
        let fit = em_fit(&m, &c, &d, &EmConfig::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.theta_hat[0] - c.len() as f64 / 20.0).abs() < 1e-12);
    }

    #[test]
    fn etas_em_is_monotone() {
        let c = clustered_catalog();
        let d = ObservationDomain::unit_square(20.0).unwrap();
        let m = IntensityModel::new(
            BackgroundModel::constant(1.0).unwrap(),
            Some(TriggeringFamily::etas(0.1, 0.0, 0.05, 1.5, 0.002, 2.0, 0.0).unwrap()),
        )
        .unwrap();
        let cfg = EmConfig {
            max_iter: 25,
            ..EmConfig::default()
        };
        let fit = em_fit(&m, &c, &d, &cfg).unwrap();
        for w in fit.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8);
        }
        assert!(fit.loglik() > fit.loglik_trace[0]);
    }
}
