//! Log-likelihood, branching probabilities and EM-type estimators.

mod em;
mod flp;
mod semiparametric;

pub use em::{em_fit, EmConfig};
pub use flp::{flp_fit, forward_increments, silverman_bandwidth, FlpConfig, FlpFit};
pub use semiparametric::{adaptive_bandwidths, semiparametric_fit, BackgroundInit, KernelConfig, SemiparametricFit};

use rayon::prelude::*;

use crate::catalog::{EventCatalog, ObservationDomain};
use crate::error::{Error, Result};
use crate::intensity::{IntegrationMethod, IntensityModel, Window};
use crate::scalar::{compensated_sum, Scalar};

/// Latent-parent probabilities: `Pr(u_i = 0)` and `Pr(u_i = j)` for every
/// earlier event j, stored row-wise in compressed form.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchingMatrix<T> {
    p_background: Vec<T>,
    row_start: Vec<usize>,
    parents: Vec<usize>,
    probs: Vec<T>,
}

impl<T: Scalar> BranchingMatrix<T> {
    /// Builds a matrix from per-row `(parent, probability)` lists.
    pub fn from_rows(p_background: Vec<T>, rows: Vec<Vec<(usize, T)>>) -> Result<Self> {
        if p_background.len() != rows.len() {
            return Err(Error::InvalidInput("one row per event required".into()));
        }
        let mut row_start = Vec::with_capacity(rows.len() + 1);
        let mut parents = Vec::new();
        let mut probs = Vec::new();
        row_start.push(0);
        for (i, row) in rows.into_iter().enumerate() {
            for (j, p) in row {
                if j >= i {
                    return Err(Error::InvalidInput(format!("event {i} cannot have parent {j}")));
                }
                if !(p >= T::zero() && p <= T::one()) {
                    return Err(Error::InvalidInput(format!("probability {p} outside [0, 1]")));
                }
                parents.push(j);
                probs.push(p);
            }
            row_start.push(parents.len());
        }
        Ok(Self {
            p_background,
            row_start,
            parents,
            probs,
        })
    }

    pub fn len(&self) -> usize {
        self.p_background.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_background.is_empty()
    }

    /// Pr(u_i = 0).
    pub fn background(&self, i: usize) -> T {
        self.p_background[i]
    }

    pub fn background_probs(&self) -> &[T] {
        &self.p_background
    }

    /// Parents and probabilities of row `i`, latest parent first.
    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let (a, b) = (self.row_start[i], self.row_start[i + 1]);
        (&self.parents[a..b], &self.probs[a..b])
    }

    /// Pr(u_i = j), zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> T {
        let (ps, qs) = self.row(i);
        ps.iter().position(|&p| p == j).map_or(T::zero(), |k| qs[k])
    }

    pub fn row_sum(&self, i: usize) -> T {
        let (_, qs) = self.row(i);
        self.p_background[i] + compensated_sum(qs.iter().copied())
    }

    /// Σ_i Pr(u_i = 0): expected number of background events.
    pub fn expected_background(&self) -> T {
        compensated_sum(self.p_background.iter().copied())
    }

    pub fn n_entries(&self) -> usize {
        self.probs.len()
    }
}

/// Estimated model together with the EM trace.
#[derive(Clone, Debug)]
pub struct FitResult<T> {
    pub model: IntensityModel<T>,
    pub theta_hat: Vec<T>,
    pub param_names: Vec<String>,
    /// Observed-data log-likelihood at each visited parameter vector; the
    /// last entry belongs to `theta_hat`.
    pub loglik_trace: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
    /// Branching probabilities at `theta_hat`.
    pub branching: BranchingMatrix<T>,
    /// Parameters that ended on a search bound.
    pub at_bound: Vec<String>,
}

impl<T: Scalar> FitResult<T> {
    pub fn loglik(&self) -> T {
        *self.loglik_trace.last().expect("trace is never empty")
    }

    /// Number of free parameters, as counted by information criteria.
    pub fn n_params(&self) -> usize {
        self.model.n_free_params()
    }
}

/// Log-likelihood split into its two terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLikelihood<T> {
    pub value: T,
    pub sum_log_intensity: T,
    pub integral: T,
}

/// λ at every event, failing on the first (lowest index) non-positive value.
pub fn checked_intensities<T: Scalar>(model: &IntensityModel<T>, catalog: &EventCatalog<T>) -> Result<Vec<T>> {
    let lambdas = model.intensity_at_events(catalog);
    if let Some(index) = lambdas.iter().position(|l| !(*l > T::zero())) {
        return Err(Error::ZeroIntensity { index });
    }
    Ok(lambdas)
}

/// Σ log λ(s_i, t_i) − ∫∫λ over X × [0, T).
pub fn log_likelihood<T: Scalar>(
    model: &IntensityModel<T>,
    catalog: &EventCatalog<T>,
    domain: &ObservationDomain<T>,
    method: &IntegrationMethod<T>,
) -> Result<T> {
    Ok(log_likelihood_parts(model, catalog, domain, method)?.value)
}

pub fn log_likelihood_parts<T: Scalar>(
    model: &IntensityModel<T>,
    catalog: &EventCatalog<T>,
    domain: &ObservationDomain<T>,
    method: &IntegrationMethod<T>,
) -> Result<LogLikelihood<T>> {
    let lambdas = checked_intensities(model, catalog)?;
    let sum_log_intensity = compensated_sum(lambdas.iter().map(|l| l.ln()));
    let integral = model.integrate(catalog, &Window::of_domain(domain), method)?.value;
    Ok(LogLikelihood {
        value: sum_log_intensity - integral,
        sum_log_intensity,
        integral,
    })
}

/// Gradient of [`log_likelihood`] with respect to [`IntensityModel::params`].
///
/// The intensity terms and the Schoenberg integral use analytic derivatives;
/// window-exact triggering integrals fall back to central differences.
pub fn log_likelihood_gradient<T: Scalar>(
    model: &IntensityModel<T>,
    catalog: &EventCatalog<T>,
    domain: &ObservationDomain<T>,
    method: &IntegrationMethod<T>,
) -> Result<Vec<T>> {
    let k = model.n_params();
    let lambdas = checked_intensities(model, catalog)?;
    let cutoff = model.history_cutoff(catalog);
    let per_event: Vec<Vec<T>> = (0..catalog.len())
        .into_par_iter()
        .map(|i| {
            let mut g = vec![T::zero(); k];
            model.gradient_at_event(catalog, i, cutoff, &mut g);
            g.iter().map(|v| *v / lambdas[i]).collect()
        })
        .collect();
    let mut grad: Vec<T> = (0..k).map(|p| compensated_sum(per_event.iter().map(|g| g[p]))).collect();

    let window = Window::of_domain(domain);
    let nb = model.background.n_params();
    let mut bg = vec![T::zero(); nb];
    model.background.integral_gradient(window.region, window.area, &mut bg);
    for p in 0..nb {
        grad[p] = grad[p] - bg[p] * domain.t_end();
    }
    let Some(g) = &model.triggering else {
        return Ok(grad);
    };
    match method {
        IntegrationMethod::Schoenberg { truncate_time: false } => {
            let mut scratch = vec![T::zero(); g.n_params()];
            for p in 0..g.n_params() {
                let total = compensated_sum(catalog.events().iter().map(|e| {
                    g.mass_gradient(model.parent_mark(e), &mut scratch);
                    scratch[p]
                }));
                grad[nb + p] = grad[nb + p] - total;
            }
        }
        _ => {
            let theta = model.params();
            for p in 0..g.n_params() {
                let idx = nb + p;
                let h = (T::lit(1e-5) * theta[idx].abs()).max(T::lit(1e-7));
                let mut up = theta.clone();
                up[idx] = up[idx] + h;
                let mut dn = theta.clone();
                dn[idx] = dn[idx] - h;
                let iu = model.with_params(&up).integrate(catalog, &window, method)?.triggered;
                let id = model.with_params(&dn).integrate(catalog, &window, method)?.triggered;
                grad[idx] = grad[idx] - (iu - id) / (T::two() * h);
            }
        }
    }
    Ok(grad)
}

/// Pr(u_i = j) = g_ij / λ_i and Pr(u_i = 0) = μ(s_i) / λ_i.
pub fn branching_probabilities<T: Scalar>(model: &IntensityModel<T>, catalog: &EventCatalog<T>) -> Result<BranchingMatrix<T>> {
    let background: Vec<T> = catalog.events().iter().map(|e| model.background.eval(e.location())).collect();
    Ok(expectation_step(model, catalog, &background, T::zero())?.0)
}

/// Branching probabilities plus λ at each event. Entries below
/// `prune_below` are not stored.
/// λ at one event, its parent probabilities and its background probability.
type EventRow<T> = (T, Vec<(usize, T)>, T);

pub(crate) fn expectation_step<T: Scalar>(
    model: &IntensityModel<T>,
    catalog: &EventCatalog<T>,
    background_at_events: &[T],
    prune_below: T,
) -> Result<(BranchingMatrix<T>, Vec<T>)> {
    let cutoff = model.history_cutoff(catalog);
    let events = catalog.events();
    let rows: Vec<EventRow<T>> = (0..events.len())
        .into_par_iter()
        .map(|i| {
            let e = &events[i];
            let mu = background_at_events[i];
            let mut terms: Vec<(usize, T)> = Vec::new();
            if let Some(g) = &model.triggering {
                for j in (0..i).rev() {
                    let p = &events[j];
                    let dt = e.t - p.t;
                    if dt > cutoff {
                        break;
                    }
                    if dt > T::zero() {
                        let v = g.eval(e.x - p.x, e.y - p.y, dt, model.parent_mark(p));
                        if v > T::zero() {
                            terms.push((j, v));
                        }
                    }
                }
            }
            let lambda = mu + compensated_sum(terms.iter().map(|t| t.1));
            if !(lambda > T::zero()) {
                return (lambda, Vec::new(), T::zero());
            }
            let row = terms
                .into_iter()
                .map(|(j, v)| (j, v / lambda))
                .filter(|(_, p)| *p >= prune_below && *p > T::zero())
                .collect();
            (lambda, row, mu / lambda)
        })
        .collect();
    if let Some(index) = rows.iter().position(|r| !(r.0 > T::zero())) {
        return Err(Error::ZeroIntensity { index });
    }
    let mut lambdas = Vec::with_capacity(rows.len());
    let mut p0 = Vec::with_capacity(rows.len());
    let mut entries = Vec::with_capacity(rows.len());
    for (l, row, b) in rows {
        lambdas.push(l);
        p0.push(b);
        entries.push(row);
    }
    Ok((BranchingMatrix::from_rows(p0, entries)?, lambdas))
}
