//! Standard errors: asymptotic covariance from the outer product of intensity
//! gradients, and the parametric bootstrap.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::catalog::{EventCatalog, ObservationDomain};
use crate::error::{Error, Result};
use crate::fit::{checked_intensities, em_fit, EmConfig, FitResult};
use crate::intensity::IntensityModel;
use crate::rng::derive_seed;
use crate::scalar::{compensated_sum, format_significant, Scalar};
use crate::simulate::{simulate, SimConfig, SimMethod};

#[derive(Clone, Debug, PartialEq)]
pub enum GradientMethod<T> {
    Analytic,
    /// Central differences with one step per parameter.
    FiniteDifference { steps: Vec<T> },
}

impl<T> GradientMethod<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Analytic => "analytic",
            Self::FiniteDifference { .. } => "finite-difference",
        }
    }
}

#[derive(Clone, Debug)]
pub struct CovarianceEstimate<T> {
    /// Row-major k × k matrix.
    pub sigma_hat: Vec<Vec<T>>,
    pub param_names: Vec<String>,
    pub theta_hat: Vec<T>,
    pub gradient_method: GradientMethod<T>,
    /// Eigenvalues of the information matrix, ascending.
    pub information_eigenvalues: Vec<f64>,
}

impl<T: Scalar> CovarianceEstimate<T> {
    pub fn standard_errors(&self) -> Vec<T> {
        (0..self.sigma_hat.len()).map(|k| self.sigma_hat[k][k].max(T::zero()).sqrt()).collect()
    }

    /// θ̂_k ± z·SE_k.
    pub fn wald_intervals(&self, z: T) -> Vec<(T, T)> {
        self.theta_hat
            .iter()
            .zip(self.standard_errors())
            .map(|(t, se)| (*t - z * se, *t + z * se))
            .collect()
    }
}

/// Default finite-difference step for parameter value `theta`.
pub fn fd_step<T: Scalar>(theta: T) -> T {
    (T::lit(1e-5) * theta.abs()).max(T::lit(1e-7))
}

/// ∂λ/∂θ at every event, one row per event.
pub fn intensity_gradients<T: Scalar>(
    model: &IntensityModel<T>,
    catalog: &EventCatalog<T>,
    method: &GradientMethod<T>,
) -> Result<Vec<Vec<T>>> {
    let k = model.n_params();
    match method {
        GradientMethod::Analytic => {
            let cutoff = model.history_cutoff(catalog);
            Ok((0..catalog.len())
                .into_par_iter()
                .map(|i| {
                    let mut g = vec![T::zero(); k];
                    model.gradient_at_event(catalog, i, cutoff, &mut g);
                    g
                })
                .collect())
        }
        GradientMethod::FiniteDifference { steps } => {
            if steps.len() != k {
                return Err(Error::InvalidInput(format!("{} steps for {k} parameters", steps.len())));
            }
            let columns = stencil_columns(model, catalog, steps, &[(-1, -0.5), (1, 0.5)])?;
            Ok(transpose(&columns, catalog.len()))
        }
    }
}

/// Five-point stencil derivative of λ at every event, one row per event.
pub fn intensity_gradients_five_point<T: Scalar>(model: &IntensityModel<T>, catalog: &EventCatalog<T>, steps: &[T]) -> Result<Vec<Vec<T>>> {
    let w = 1.0 / 12.0;
    let columns = stencil_columns(model, catalog, steps, &[(-2, w), (-1, -8.0 * w), (1, 8.0 * w), (2, -w)])?;
    Ok(transpose(&columns, catalog.len()))
}

fn stencil_columns<T: Scalar>(
    model: &IntensityModel<T>,
    catalog: &EventCatalog<T>,
    steps: &[T],
    stencil: &[(i32, f64)],
) -> Result<Vec<Vec<T>>> {
    let theta = model.params();
    let mut columns = Vec::with_capacity(theta.len());
    for (p, h) in steps.iter().enumerate() {
        let mut col = vec![T::zero(); catalog.len()];
        for (offset, weight) in stencil {
            let mut v = theta.clone();
            v[p] = v[p] + T::lit(*offset as f64) * *h;
            let lambdas = model.with_params(&v).intensity_at_events(catalog);
            for (c, l) in col.iter_mut().zip(lambdas) {
                *c = *c + T::lit(*weight) * l / *h;
            }
        }
        columns.push(col);
    }
    Ok(columns)
}

fn transpose<T: Scalar>(columns: &[Vec<T>], n: usize) -> Vec<Vec<T>> {
    (0..n).map(|i| columns.iter().map(|c| c[i]).collect()).collect()
}

/// Σ̂ = (Σ_i λ̇_i λ̇_iᵀ / λ_i²)⁻¹ at the model's current parameters.
pub fn asymptotic_covariance<T: Scalar>(
    model: &IntensityModel<T>,
    catalog: &EventCatalog<T>,
    method: GradientMethod<T>,
) -> Result<CovarianceEstimate<T>> {
    let k = model.n_params();
    if k == 0 {
        return Err(Error::InvalidInput("model has no free parameters".into()));
    }
    if catalog.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    let lambdas = checked_intensities(model, catalog)?;
    let grads = intensity_gradients(model, catalog, &method)?;
    let mut info = DMatrix::<f64>::zeros(k, k);
    for a in 0..k {
        for b in a..k {
            let v = compensated_sum(
                grads
                    .iter()
                    .zip(&lambdas)
                    .map(|(g, l)| g[a].as_f64() * g[b].as_f64() / (l.as_f64() * l.as_f64())),
            );
            info[(a, b)] = v;
            info[(b, a)] = v;
        }
    }
    let eig = info.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let largest = eigenvalues.last().copied().unwrap_or(0.0).abs();
    let smallest = eigenvalues[0];
    if !(smallest > 1e-12 * largest) || !(largest > 0.0) {
        let direction = eig.eigenvectors.column(order[0]).iter().copied().collect();
        return Err(Error::SingularInformation { direction });
    }
    let mut sigma = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        let v = eig.eigenvectors.column(i);
        sigma += (v * v.transpose()) / eig.eigenvalues[i];
    }
    let sigma_hat = (0..k)
        .map(|a| (0..k).map(|b| T::lit(0.5 * (sigma[(a, b)] + sigma[(b, a)]))).collect())
        .collect();
    Ok(CovarianceEstimate {
        sigma_hat,
        param_names: model.param_names(),
        theta_hat: model.params(),
        gradient_method: method,
        information_eigenvalues: eigenvalues,
    })
}

/// Finite-difference covariance with the default per-parameter steps.
pub fn asymptotic_covariance_fd<T: Scalar>(model: &IntensityModel<T>, catalog: &EventCatalog<T>) -> Result<CovarianceEstimate<T>> {
    let steps = model.params().into_iter().map(fd_step).collect();
    asymptotic_covariance(model, catalog, GradientMethod::FiniteDifference { steps })
}

#[derive(Clone, Debug)]
pub struct BootstrapConfig<T> {
    pub replicates: usize,
    pub seed: u64,
    /// Simulation settings; the seed field is replaced per replicate.
    pub sim: SimConfig<T>,
    /// Central coverage of the percentile intervals.
    pub level: T,
    /// Stop once a further block of replicates moves no interval endpoint
    /// by 1% or more.
    pub early_stop: bool,
    pub block: usize,
    /// Largest tolerated fraction of failed replicates.
    pub max_failure_fraction: T,
}

impl<T: Scalar> BootstrapConfig<T> {
    pub fn new(replicates: usize, seed: u64, model: &IntensityModel<T>) -> Self {
        Self {
            replicates,
            seed,
            sim: SimConfig::new(seed, SimMethod::Cluster).with_default_pads(model),
            level: T::lit(0.95),
            early_stop: false,
            block: 100,
            max_failure_fraction: T::lit(0.2),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BootstrapResult<T> {
    pub param_names: Vec<String>,
    /// Estimates from converged replicates, in replicate order.
    pub replicates: Vec<Vec<T>>,
    /// Replicate index of each row of `replicates`.
    pub replicate_ids: Vec<usize>,
    /// Percentile interval per parameter.
    pub intervals: Vec<(T, T)>,
    /// Replicates attempted (fewer than requested after an early stop).
    pub attempted: usize,
    pub failures: usize,
    pub failed_ids: Vec<usize>,
    pub stopped_early: bool,
}

impl<T: Scalar> BootstrapResult<T> {
    /// Sample standard deviation of each parameter over the replicates.
    pub fn standard_deviations(&self) -> Vec<T> {
        let n = self.replicates.len();
        (0..self.param_names.len())
            .map(|p| {
                let mean = compensated_sum(self.replicates.iter().map(|r| r[p])) / T::of_usize(n);
                let ss = compensated_sum(self.replicates.iter().map(|r| (r[p] - mean) * (r[p] - mean)));
                (ss / T::of_usize(n.saturating_sub(1).max(1))).sqrt()
            })
            .collect()
    }
}

/// Nearest-rank quantile: the ⌈qn⌉-th smallest value (at least the first).
pub fn nearest_rank<T: Scalar>(sorted: &[T], q: T) -> T {
    let n = sorted.len();
    let rank = ((q.as_f64() * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

fn percentile_intervals<T: Scalar>(replicates: &[Vec<T>], k: usize, level: T) -> Vec<(T, T)> {
    let alpha = (T::one() - level) / T::two();
    (0..k)
        .map(|p| {
            let mut v: Vec<T> = replicates.iter().map(|r| r[p]).collect();
            v.sort_by(|a, b| a.partial_cmp(b).expect("finite estimates"));
            (nearest_rank(&v, alpha), nearest_rank(&v, T::one() - alpha))
        })
        .collect()
}

/// Simulates from `model` and refits each replicate by EM started at the
/// fitted parameters.
pub fn parametric_bootstrap<T: Scalar>(
    model: &IntensityModel<T>,
    domain: &ObservationDomain<T>,
    config: &BootstrapConfig<T>,
    em: &EmConfig<T>,
) -> Result<BootstrapResult<T>> {
    parametric_bootstrap_with(model, domain, config, |catalog| em_fit(model, catalog, domain, em))
}

/// Parametric bootstrap with a caller-supplied refit. A replicate fails when
/// the refit errors or reports no convergence.
pub fn parametric_bootstrap_with<T, F>(
    model: &IntensityModel<T>,
    domain: &ObservationDomain<T>,
    config: &BootstrapConfig<T>,
    refit: F,
) -> Result<BootstrapResult<T>>
where
    T: Scalar,
    F: Fn(&EventCatalog<T>) -> Result<FitResult<T>> + Sync,
{
    if config.replicates < 2 {
        return Err(Error::param("replicates", "need at least 2"));
    }
    if config.block == 0 {
        return Err(Error::param("block", "must be positive"));
    }
    if !(config.level > T::zero() && config.level < T::one()) {
        return Err(Error::param("level", "must lie in (0, 1)"));
    }
    let k = model.n_params();
    let mut outcomes: Vec<Option<Vec<T>>> = Vec::with_capacity(config.replicates);
    let mut previous: Option<Vec<(T, T)>> = None;
    let mut stopped_early = false;
    while outcomes.len() < config.replicates {
        let start = outcomes.len();
        let end = (start + config.block).min(config.replicates);
        let block: Vec<Option<Vec<T>>> = (start..end)
            .into_par_iter()
            .map(|b| {
                let mut sim = config.sim.clone();
                sim.seed = derive_seed(config.seed, "bootstrap", b as u64);
                let catalog = simulate(model, domain, &sim).ok()?.catalog;
                if catalog.is_empty() {
                    return None;
                }
                let fit = refit(&catalog).ok()?;
                (fit.converged && fit.theta_hat.iter().all(|v| v.is_finite())).then_some(fit.theta_hat)
            })
            .collect();
        outcomes.extend(block);
        if config.early_stop && outcomes.len() < config.replicates {
            let ok: Vec<Vec<T>> = outcomes.iter().flatten().cloned().collect();
            if ok.len() >= 2 {
                let current = percentile_intervals(&ok, k, config.level);
                if let Some(prev) = &previous {
                    let stable = current.iter().zip(prev).all(|(c, p)| {
                        let rel = |a: T, b: T| (a - b).abs() <= T::lit(0.01) * b.abs().max(T::min_positive_value());
                        rel(c.0, p.0) && rel(c.1, p.1)
                    });
                    if stable {
                        stopped_early = true;
                        break;
                    }
                }
                previous = Some(current);
            }
        }
    }
    let attempted = outcomes.len();
    let failed_ids: Vec<usize> = outcomes.iter().enumerate().filter(|(_, o)| o.is_none()).map(|(i, _)| i).collect();
    let failures = failed_ids.len();
    if T::of_usize(failures) > config.max_failure_fraction * T::of_usize(attempted) || attempted - failures < 2 {
        return Err(Error::BootstrapFailures { failures, total: attempted });
    }
    let (replicate_ids, replicates): (Vec<usize>, Vec<Vec<T>>) =
        outcomes.into_iter().enumerate().filter_map(|(i, o)| o.map(|v| (i, v))).unzip();
    let intervals = percentile_intervals(&replicates, k, config.level);
    Ok(BootstrapResult {
        param_names: model.param_names(),
        replicates,
        replicate_ids,
        intervals,
        attempted,
        failures,
        failed_ids,
        stopped_early,
    })
}

/// CSV with a `replicate` column followed by one column per parameter.
pub fn write_replicates<T: Scalar, W: Write>(w: W, result: &BootstrapResult<T>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["replicate".to_string()];
    header.extend(result.param_names.iter().cloned());
    out.write_record(&header)?;
    for (id, row) in result.replicate_ids.iter().zip(&result.replicates) {
        let mut rec = vec![id.to_string()];
        rec.extend(row.iter().map(|v| format_significant(v.as_f64(), crate::catalog::DECIMAL_DIGITS)));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Event;
    use crate::intensity::{BackgroundModel, TriggeringFamily};

    fn poisson_catalog(n: usize) -> EventCatalog<f64> {
        EventCatalog::new(
            (0..n)
                .map(|i| {
                    let u = (i as f64 + 0.5) / n as f64;
                    Event::new(10.0 * u, (7.0 * u).fract(), (13.0 * u).fract())
                })
                .collect(),
        )
    }

    #[test]
    fn poisson_closed_form_is_exact() {
        let c = poisson_catalog(40);
        let m = IntensityModel::poisson(4.0).unwrap();
        let cov = asymptotic_covariance(&m, &c, GradientMethod::Analytic).unwrap();
        assert!((cov.sigma_hat[0][0] - 16.0 / 40.0).abs() < 1e-15);
        let fd = asymptotic_covariance_fd(&m, &c).unwrap();
        assert!((fd.sigma_hat[0][0] - 0.4).abs() < 1e-8);
    }

    #[test]
    fn covariance_symmetric_and_positive() {
        let c = poisson_catalog(60);
        let m = IntensityModel::new(
            BackgroundModel::constant(3.0).unwrap(),
            Some(TriggeringFamily::gaussian_exponential(0.4, 0.5, 0.02).unwrap()),
        )
        .unwrap();
        let cov = asymptotic_covariance(&m, &c, GradientMethod::Analytic).unwrap();
        let k = cov.sigma_hat.len();
        for a in 0..k {
            for b in 0..k {
                assert_eq!(cov.sigma_hat[a][b], cov.sigma_hat[b][a]);
            }
        }
        let mat = DMatrix::from_fn(k, k, |a, b| cov.sigma_hat[a][b]);
        assert!(mat.symmetric_eigen().eigenvalues.iter().all(|e| *e > -1e-8));
    }

    #[test]
    fn central_differences_match_five_point() {
        let c = poisson_catalog(30);
        let m = IntensityModel::new(
            BackgroundModel::constant(3.0).unwrap(),
            Some(TriggeringFamily::gaussian_exponential(0.4, 0.5, 0.02).unwrap()),
        )
        .unwrap();
        let steps: Vec<f64> = m.params().into_iter().map(fd_step).collect();
        let central = intensity_gradients(&m, &c, &GradientMethod::FiniteDifference { steps: steps.clone() }).unwrap();
        let five = intensity_gradients_five_point(&m, &c, &steps).unwrap();
        let analytic = intensity_gradients(&m, &c, &GradientMethod::Analytic).unwrap();
        for ((a, b), e) in central.iter().zip(&five).zip(&analytic) {
            for p in 0..a.len() {
                let scale = b[p].abs().max(1e-3);
                assert!((a[p] - b[p]).abs() / scale < 1e-4, "{} vs {}", a[p], b[p]);
                assert!((e[p] - b[p]).abs() / scale < 1e-4);
            }
        }
    }

    #[test]
    fn unidentifiable_parameter_reported() {
        // A triggering kernel with no earlier events gives zero gradients.
        let c = EventCatalog::new(vec![Event::new(0.5, 0.5, 0.5)]);
        let m = IntensityModel::new(
            BackgroundModel::constant(1.0).unwrap(),
            Some(TriggeringFamily::gaussian_exponential(0.4, 0.5, 0.02).unwrap()),
        )
        .unwrap();
        match asymptotic_covariance(&m, &c, GradientMethod::Analytic) {
            Err(Error::SingularInformation { direction }) => assert_eq!(direction.len(), 4),
            other => panic!("expected singular information, got {other:?}"),
        }
    }

    #[test]
    fn two_replicates_give_min_and_max() {
        assert_eq!(nearest_rank(&[1.0, 2.0], 0.025), 1.0);
        assert_eq!(nearest_rank(&[1.0, 2.0], 0.975), 2.0);
        let v: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(nearest_rank(&v, 0.025), 25.0);
        assert_eq!(nearest_rank(&v, 0.975), 975.0);
    }

    #[test]
    fn bootstrap_deterministic_and_reports_failures() {
        let d = ObservationDomain::unit_square(10.0).unwrap();
        let m = IntensityModel::poisson(5.0).unwrap();
        let cfg = BootstrapConfig::new(8, 11, &m);
        let em = EmConfig::default();
        let a = parametric_bootstrap(&m, &d, &cfg, &em).unwrap();
        let b = parametric_bootstrap(&m, &d, &cfg, &em).unwrap();
        assert_eq!(a.replicates, b.replicates);
        assert_eq!(a.failures, 0);
        let failing = parametric_bootstrap_with(&m, &d, &cfg, |_| Err(Error::NonConvergence("test".into())));
        assert!(matches!(failing, Err(Error::BootstrapFailures { failures: 8, total: 8 })));
    }
}
