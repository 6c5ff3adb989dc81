use rayon::prelude::*;

use crate::catalog::{EventCatalog, ObservationDomain};
use crate::error::{Error, Result};
use crate::fit::{em_fit, EmConfig, FitResult};
use crate::geometry::Point;
use crate::intensity::background::gaussian_fraction;
use crate::intensity::{domain_region, BackgroundModel, IntegrationMethod, IntensityModel, Window, WeightedKde};
use crate::optimize::minimize_near;
use crate::scalar::{compensated_sum, Scalar};

#[derive(Clone, Debug)]
pub struct FlpConfig<T> {
    /// Starting bandwidth; Silverman's rule when `None`.
    pub initial_bandwidth: Option<T>,
    pub min_bandwidth: T,
    pub max_outer: usize,
    /// Relative change of bandwidth and parameters that ends the loop.
    pub tol: T,
    pub edge_correction: bool,
    pub em: EmConfig<T>,
}

impl<T: Scalar> Default for FlpConfig<T> {
    fn default() -> Self {
        Self {
            initial_bandwidth: None,
            min_bandwidth: T::lit(1e-6),
            max_outer: 20,
            tol: T::lit(1e-4),
            edge_correction: true,
            em: EmConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FlpFit<T> {
    pub fit: FitResult<T>,
    pub background: BackgroundModel<T>,
    pub bandwidth: T,
    /// Forward likelihood score at the selected bandwidth.
    pub score: T,
    pub outer_iterations: usize,
    pub converged: bool,
}

/// Silverman-type bandwidth σ̂ n^{-1/6} for a bivariate isotropic kernel.
pub fn silverman_bandwidth<T: Scalar>(points: &[Point<T>]) -> T {
    let n = T::of_usize(points.len().max(2));
    let mean_x = points.iter().map(|p| p.x).sum::<T>() / n;
    let mean_y = points.iter().map(|p| p.y).sum::<T>() / n;
    let var = points
        .iter()
        .map(|p| (p.x - mean_x).powi(2) + (p.y - mean_y).powi(2))
        .sum::<T>()
        / (T::two() * (n - T::one()));
    var.sqrt() * n.powf(T::lit(-1.0 / 6.0))
}

/// First event index (0-based) whose prediction enters the forward score.
fn first_predicted(n: usize) -> usize {
    n / 2
}

/// One-step-ahead log-likelihood increments δ_{k,k+1} for k = ⌊n/2⌋, …, n−1:
/// each predicts event k+1 from the first k events under `model`.
pub fn forward_increments<T: Scalar>(
    model: &IntensityModel<T>,
    catalog: &EventCatalog<T>,
    domain: &ObservationDomain<T>,
    method: &IntegrationMethod<T>,
) -> Result<Vec<T>> {
    let n = catalog.len();
    if n < 4 {
        return Err(Error::InvalidInput(format!("forward scoring needs at least 4 events, got {n}")));
    }
    let method = match method {
        IntegrationMethod::Schoenberg { .. } => IntegrationMethod::Schoenberg { truncate_time: true },
        m => *m,
    };
    let base = Window::of_domain(domain);
    let events = catalog.events();
    let cutoff = model.history_cutoff(catalog);
    (first_predicted(n)..n)
        .into_par_iter()
        .map(|i| {
            let e = &events[i];
            let lambda = model.background.eval(e.location()) + model.history_sum(catalog, i, e.location(), e.t, cutoff);
            if !(lambda > T::zero()) {
                return Err(Error::ZeroIntensity { index: i });
            }
            let window = Window {
                t_start: events[i - 1].t,
                t_end: e.t,
                ..base
            };
            let integral = model.integrate(catalog, &window, &method)?.value;
            Ok(lambda.ln() - integral)
        })
        .collect()
}

/// Bandwidth-independent pieces of the forward score.
struct ForwardTerms<T> {
    /// Triggering intensity at each predicted event from its past.
    history: Vec<T>,
    /// Triggering integral over each prediction interval.
    integral: Vec<T>,
}

impl<T: Scalar> ForwardTerms<T> {
    fn new(model: &IntensityModel<T>, catalog: &EventCatalog<T>, domain: &ObservationDomain<T>, method: &IntegrationMethod<T>) -> Result<Self> {
        let no_background = IntensityModel {
            background: BackgroundModel::Constant { nu: T::zero() },
            ..model.clone()
        };
        let n = catalog.len();
        let events = catalog.events();
        let cutoff = model.history_cutoff(catalog);
        let history = (first_predicted(n)..n)
            .map(|i| model.history_sum(catalog, i, events[i].location(), events[i].t, cutoff))
            .collect();
        let method = match method {
            IntegrationMethod::Schoenberg { .. } => IntegrationMethod::Schoenberg { truncate_time: true },
            m => *m,
        };
        let base = Window::of_domain(domain);
        let integral = (first_predicted(n)..n)
            .into_par_iter()
            .map(|i| {
                let window = Window {
                    t_start: events[i - 1].t,
                    t_end: events[i].t,
                    ..base
                };
                Ok(no_background.integrate(catalog, &window, &method)?.triggered)
            })
            .collect::<Result<Vec<T>>>()?;
        Ok(Self { history, integral })
    }
}

/// Forward score of a weighted kernel background with bandwidth `h` built
/// from the first k events and normalized by t_k.
fn forward_score<T: Scalar>(
    catalog: &EventCatalog<T>,
    domain: &ObservationDomain<T>,
    weights: &[T],
    terms: &ForwardTerms<T>,
    h: T,
    edge_correction: bool,
) -> Result<T> {
    let events = catalog.events();
    let n = events.len();
    let region = domain_region(domain);
    let fractions: Vec<T> = events
        .par_iter()
        .map(|e| gaussian_fraction(e.location(), h, region, T::lit(1e-9)))
        .collect::<Result<Vec<T>>>()?;
    // Kernel j integrates to w_j over X with edge correction, w_j F_j without.
    let mass: Vec<T> = (0..n)
        .map(|j| if edge_correction { weights[j] } else { weights[j] * fractions[j] })
        .collect();
    let norm: Vec<T> = (0..n)
        .map(|j| {
            if edge_correction && fractions[j] > T::lit(1e-12) {
                T::one() / fractions[j]
            } else {
                T::one()
            }
        })
        .collect();
    let mut prefix = Vec::with_capacity(n + 1);
    let mut acc = crate::scalar::CompensatedSum::new();
    prefix.push(T::zero());
    for m in &mass {
        acc.add(*m);
        prefix.push(acc.value());
    }
    let t_floor = domain.t_end() * T::lit(1e-9);
    let two_pi_h2 = T::two() * T::PI() * h * h;
    let start = first_predicted(n);
    let parts: Vec<T> = (start..n)
        .into_par_iter()
        .map(|i| {
            let e = &events[i];
            let t_k = events[i - 1].t.max(t_floor);
            let mut density = T::zero();
            for j in 0..i {
                let r2 = e.location().dist2(events[j].location());
                density = density + weights[j] * norm[j] * (-r2 / (T::two() * h * h)).exp();
            }
            let mu = density / (two_pi_h2 * t_k);
            let lambda = mu + terms.history[i - start];
            let dt = e.t - events[i - 1].t;
            let integral = prefix[i] / t_k * dt + terms.integral[i - start];
            if lambda > T::zero() {
                lambda.ln() - integral
            } else {
                T::neg_infinity()
            }
        })
        .collect();
    Ok(compensated_sum(parts))
}

fn kde_background<T: Scalar>(
    catalog: &EventCatalog<T>,
    domain: &ObservationDomain<T>,
    weights: Vec<T>,
    h: T,
    edge_correction: bool,
) -> Result<BackgroundModel<T>> {
    let points = catalog.events().iter().map(|e| e.location()).collect();
    let mut kde = WeightedKde::with_global_bandwidth(points, weights, h, domain.t_end())?;
    if edge_correction {
        kde = kde.with_edge_correction(domain.ring(), T::lit(1e-9))?;
    }
    Ok(BackgroundModel::WeightedKde(kde))
}

/// Alternates EM for the triggering parameters, background weights
/// Pr(u_i = 0), and the kernel bandwidth maximizing the forward score.
pub fn flp_fit<T: Scalar>(
    init: &IntensityModel<T>,
    catalog: &EventCatalog<T>,
    domain: &ObservationDomain<T>,
    config: &FlpConfig<T>,
) -> Result<FlpFit<T>> {
    let n = catalog.len();
    if n < 4 {
        return Err(Error::InvalidInput(format!("forward scoring needs at least 4 events, got {n}")));
    }
    let points: Vec<Point<T>> = catalog.events().iter().map(|e| e.location()).collect();
    let mut h = config.initial_bandwidth.unwrap_or_else(|| silverman_bandwidth(&points)).max(config.min_bandwidth);
    if !(h.is_finite() && h > T::zero()) {
        return Err(Error::Degenerate("bandwidth collapsed: events share one location".into()));
    }
    let h_max = domain.bbox().diameter();
    let em = EmConfig {
        fix_background: true,
        ..config.em.clone()
    };
    let mut weights = vec![T::one(); n];
    let mut model = init.clone();
    let mut outer = 0;
    let mut previous_params: Option<Vec<T>> = None;
    loop {
        model.background = kde_background(catalog, domain, weights.clone(), h, config.edge_correction)?;
        let fit = em_fit(&model, catalog, domain, &em)?;
        outer += 1;
        weights = fit.branching.background_probs().to_vec();
        let terms = ForwardTerms::new(&fit.model, catalog, domain, &em.method)?;
        let mut err = None;
        let lo = config.min_bandwidth.as_f64().ln();
        let hi = h_max.as_f64().ln();
        let best = minimize_near(
            |u| {
                if u < lo || u > hi {
                    return f64::INFINITY;
                }
                match forward_score(catalog, domain, &weights, &terms, T::lit(u.exp()), config.edge_correction) {
                    Ok(v) => -v.as_f64(),
                    Err(e) => {
                        err.get_or_insert(e);
                        f64::INFINITY
                    }
                }
            },
            h.as_f64().ln(),
            0.3,
            1e-6,
        );
        if !best.f.is_finite() {
            return Err(err.unwrap_or(Error::Degenerate("forward score is not finite".into())));
        }
        let h_new = T::lit(best.x.exp());
        let params = fit.model.triggering.as_ref().map(|g| g.params()).unwrap_or_default();
        let param_change = previous_params.as_ref().map_or(T::infinity(), |p| {
            p.iter()
                .zip(&params)
                .map(|(a, b)| (*a - *b).abs() / a.abs().max(T::one()))
                .fold(T::zero(), T::max)
        });
        let h_change = (h_new - h).abs() / h;
        h = h_new;
        model.triggering = fit.model.triggering.clone();
        previous_params = Some(params);
        if (h_change < config.tol && param_change < config.tol) || outer >= config.max_outer {
            let converged = h_change < config.tol && param_change < config.tol;
            let background = kde_background(catalog, domain, weights, h, config.edge_correction)?;
            return Ok(FlpFit {
                fit,
                background,
                bandwidth: h,
                score: T::lit(-best.f),
                outer_iterations: outer,
                converged,
            });
        }
    }
}
