//! Parametric and histogram triggering functions g(Δs, Δt).

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{disk_intersection_area, polar_kernel_mass, Point, Rect};
use crate::scalar::{normal_cdf, Scalar};

/// Where a spatial kernel is integrated.
#[derive(Clone, Copy, Debug)]
pub enum SpatialRegion<'a, T> {
    /// All of ℝ².
    Plane,
    Rect(&'a Rect<T>),
    /// Counter-clockwise ring (a domain boundary or a clipped Voronoi cell).
    Ring(&'a [Point<T>]),
}

/// Piecewise-constant, isotropic triggering function on
/// (time bin × radial annulus) cells.
#[derive(Clone, Debug, PartialEq)]
pub struct HistogramKernel<T> {
    time_edges: Vec<T>,
    radius_edges: Vec<T>,
    /// Row-major `[time_bin][radius_bin]`, rate per unit area·time.
    values: Vec<T>,
}

impl<T: Scalar> HistogramKernel<T> {
    pub fn new(time_edges: Vec<T>, radius_edges: Vec<T>, values: Vec<T>) -> Result<Self> {
        let kernel = Self {
            time_edges,
            radius_edges,
            values,
        };
        kernel.validate()?;
        Ok(kernel)
    }

    pub fn zeros(time_edges: Vec<T>, radius_edges: Vec<T>) -> Result<Self> {
        let n = time_edges.len().saturating_sub(1) * radius_edges.len().saturating_sub(1);
        Self::new(time_edges, radius_edges, vec![T::zero(); n])
    }

    fn validate(&self) -> Result<()> {
        check_edges("time_edges", &self.time_edges)?;
        check_edges("radius_edges", &self.radius_edges)?;
        if self.values.len() != self.n_time() * self.n_radius() {
            return Err(Error::param(
                "cell_values",
                format!(
                    "expected {} values for {}x{} cells, got {}",
                    self.n_time() * self.n_radius(),
                    self.n_time(),
                    self.n_radius(),
                    self.values.len()
                ),
            ));
        }
        if self.values.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::param("cell_values", "must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn time_edges(&self) -> &[T] {
        &self.time_edges
    }

    pub fn radius_edges(&self) -> &[T] {
        &self.radius_edges
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn n_time(&self) -> usize {
        self.time_edges.len() - 1
    }

    pub fn n_radius(&self) -> usize {
        self.radius_edges.len() - 1
    }

    pub fn value(&self, time_bin: usize, radius_bin: usize) -> T {
        self.values[time_bin * self.n_radius() + radius_bin]
    }

    /// Cell index containing (r, dt), if any. Bins are half-open `[lo, hi)`.
    pub fn cell_of(&self, r: T, dt: T) -> Option<(usize, usize)> {
        let k = bin_of(&self.time_edges, dt)?;
        let l = bin_of(&self.radius_edges, r)?;
        Some((k, l))
    }

    pub fn annulus_area(&self, l: usize) -> T {
        let (a, b) = (self.radius_edges[l], self.radius_edges[l + 1]);
        T::PI() * (b * b - a * a)
    }

    pub fn time_width(&self, k: usize) -> T {
        self.time_edges[k + 1] - self.time_edges[k]
    }

    /// Space-time measure of cell (k, l).
    pub fn cell_measure(&self, k: usize, l: usize) -> T {
        self.time_width(k) * self.annulus_area(l)
    }

    /// Overlap of time bin k with the lag interval [lo, hi].
    pub fn time_overlap(&self, k: usize, lo: T, hi: T) -> T {
        let a = self.time_edges[k].max(lo);
        let b = self.time_edges[k + 1].min(hi);
        (b - a).max(T::zero())
    }

    pub fn support_end(&self) -> T {
        *self.time_edges.last().expect("validated edges")
    }

    pub fn max_radius(&self) -> T {
        *self.radius_edges.last().expect("validated edges")
    }

    pub(crate) fn set_values(&mut self, values: Vec<T>) {
        debug_assert_eq!(values.len(), self.values.len());
        self.values = values;
    }
}

fn check_edges<T: Scalar>(name: &str, edges: &[T]) -> Result<()> {
    if edges.len() < 2 {
        return Err(Error::param(name, "need at least two edges"));
    }
    if edges[0] < T::zero() || edges.iter().any(|e| !e.is_finite()) {
        return Err(Error::param(name, "edges must be finite and non-negative"));
    }
    if edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::param(name, "edges must be strictly increasing"));
    }
    Ok(())
}

fn bin_of<T: Scalar>(edges: &[T], v: T) -> Option<usize> {
    if v < edges[0] || v >= edges[edges.len() - 1] {
        return None;
    }
    Some(edges.partition_point(|e| *e <= v) - 1)
}

/// Triggering function families.
///
/// All spatial kernels are isotropic and normalized over ℝ², so the total
/// mass of each family factorizes into a productivity term times a temporal
/// mass.
#[derive(Clone, Debug, PartialEq)]
pub enum TriggeringFamily<T> {
    /// θ/(2πωσ²) · exp(−Δt/ω) · exp(−|Δs|²/(2σ²)).
    GaussianExponential { theta: T, omega: T, sigma2: T },
    /// K_i/(Δt + c)^p · (q−1)/(πd) · (1 + |Δs|²/d)^(−q), with
    /// K_i = K₀·exp(α(M_i − M₀)) for a parent of magnitude M_i.
    EtasPowerLaw {
        k0: T,
        alpha: T,
        c: T,
        p: T,
        d: T,
        q: T,
        m0: T,
    },
    Histogram(HistogramKernel<T>),
}

impl<T: Scalar> TriggeringFamily<T> {
    pub fn gaussian_exponential(theta: T, omega: T, sigma2: T) -> Result<Self> {
        let g = Self::GaussianExponential {
            theta,
            omega,
            sigma2,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn etas(k0: T, alpha: T, c: T, p: T, d: T, q: T, m0: T) -> Result<Self> {
        let g = Self::EtasPowerLaw {
            k0,
            alpha,
            c,
            p,
            d,
            q,
            m0,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::GaussianExponential { .. } => "gaussian_exponential",
            Self::EtasPowerLaw { .. } => "etas",
            Self::Histogram(_) => "histogram",
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn positive<T: Scalar>(name: &str, v: T) -> Result<()> {
            if v.is_finite() && v > T::zero() {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be positive, got {v}")))
            }
        }
        match self {
            Self::GaussianExponential {
                theta,
                omega,
                sigma2,
            } => {
                if !theta.is_finite() || *theta < T::zero() {
                    return Err(Error::param("theta", "must be non-negative"));
                }
                positive("omega", *omega)?;
                positive("sigma2", *sigma2)
            }
            Self::EtasPowerLaw {
                k0,
                alpha,
                c,
                p,
                d,
                q,
                m0,
            } => {
                if !k0.is_finite() || *k0 < T::zero() {
                    return Err(Error::param("k0", "must be non-negative"));
                }
                if !alpha.is_finite() || !m0.is_finite() {
                    return Err(Error::param("alpha", "alpha and m0 must be finite"));
                }
                positive("c", *c)?;
                positive("d", *d)?;
                if !(p.is_finite() && *p > T::one()) {
                    return Err(Error::NonIntegrable(format!("Omori exponent p = {p} must exceed 1")));
                }
                if !(q.is_finite() && *q > T::one()) {
                    return Err(Error::NonIntegrable(format!("spatial exponent q = {q} must exceed 1")));
                }
                Ok(())
            }
            Self::Histogram(h) => h.validate(),
        }
    }

    /// Multiplier applied to the unit-productivity kernel for a parent with
    /// the given mark. Unmarked parents sit at the magnitude threshold.
    #[inline]
    pub fn productivity(&self, mark: Option<T>) -> T {
        match self {
            Self::GaussianExponential { theta, .. } => *theta,
            Self::EtasPowerLaw { k0, alpha, m0, .. } => match mark {
                Some(m) => *k0 * (*alpha * (m - *m0)).exp(),
                None => *k0,
            },
            Self::Histogram(_) => T::one(),
        }
    }

    /// g(Δs, Δt) for a parent with the given mark; zero for Δt ≤ 0.
    #[inline]
    pub fn eval(&self, dx: T, dy: T, dt: T, mark: Option<T>) -> T {
        if !(dt > T::zero()) {
            return T::zero();
        }
        let r2 = dx * dx + dy * dy;
        match self {
            Self::GaussianExponential {
                theta,
                omega,
                sigma2,
            } => {
                let norm = *theta / (T::two() * T::PI() * *omega * *sigma2);
                norm * (-dt / *omega - r2 / (T::two() * *sigma2)).exp()
            }
            Self::EtasPowerLaw { c, p, d, q, .. } => {
                let k = self.productivity(mark);
                let spatial = (*q - T::one()) / (T::PI() * *d);
                k * spatial * (-*p * (dt + *c).ln() - *q * (r2 / *d).ln_1p()).exp()
            }
            Self::Histogram(h) => match h.cell_of(r2.sqrt(), dt) {
                Some((k, l)) => h.value(k, l),
                None => T::zero(),
            },
        }
    }

    /// Total offspring mass m = ∫∫ g over ℝ² × [0, ∞).
    pub fn mass(&self, mark: Option<T>) -> Result<T> {
        match self {
            Self::EtasPowerLaw { p, .. } if *p <= T::one() => Err(Error::NonIntegrable(format!(
                "Omori exponent p = {p} must exceed 1"
            ))),
            Self::EtasPowerLaw { q, .. } if *q <= T::one() => Err(Error::NonIntegrable(format!(
                "spatial exponent q = {q} must exceed 1"
            ))),
            _ => Ok(self.temporal_mass(T::zero(), T::infinity(), mark)),
        }
    }

    /// ∫_{ℝ²} g(s, lag) ds.
    pub fn temporal_density(&self, lag: T, mark: Option<T>) -> T {
        if !(lag > T::zero()) {
            return T::zero();
        }
        match self {
            Self::GaussianExponential { theta, omega, .. } => *theta / *omega * (-lag / *omega).exp(),
            Self::EtasPowerLaw { c, p, .. } => self.productivity(mark) * (lag + *c).powf(-*p),
            Self::Histogram(h) => match bin_of(&h.time_edges, lag) {
                Some(k) => (0..h.n_radius()).map(|l| h.value(k, l) * h.annulus_area(l)).sum(),
                None => T::zero(),
            },
        }
    }

    /// sup_{u ≥ lag} of the temporal density; a valid thinning bound for all
    /// later times.
    pub fn temporal_bound(&self, lag: T, mark: Option<T>) -> T {
        match self {
            Self::Histogram(h) => {
                let lag = lag.max(T::zero());
                (0..h.n_time())
                    .filter(|&k| h.time_edges[k + 1] > lag)
                    .map(|k| {
                        (0..h.n_radius())
                            .map(|l| h.value(k, l) * h.annulus_area(l))
                            .sum::<T>()
                    })
                    .fold(T::zero(), T::max)
            }
            // Monotone non-increasing for lag > 0; take the right limit at 0.
            _ => {
                let at = if lag > T::zero() { lag } else { T::min_positive_value() };
                self.temporal_density(at, mark)
            }
        }
    }

    /// ∫_lo^hi of the temporal density (hi may be +∞).
    pub fn temporal_mass(&self, lo: T, hi: T, mark: Option<T>) -> T {
        let lo = lo.max(T::zero());
        if !(hi > lo) {
            return T::zero();
        }
        match self {
            Self::GaussianExponential { theta, omega, .. } => {
                let upper = if hi.is_infinite() { T::zero() } else { (-hi / *omega).exp() };
                *theta * ((-lo / *omega).exp() - upper)
            }
            Self::EtasPowerLaw { c, p, .. } => {
                let e = T::one() - *p;
                let upper = if hi.is_infinite() { T::zero() } else { (hi + *c).powf(e) };
                self.productivity(mark) * ((lo + *c).powf(e) - upper) / (*p - T::one())
            }
            Self::Histogram(h) => (0..h.n_time())
                .map(|k| {
                    let overlap = h.time_overlap(k, lo, hi);
                    if overlap > T::zero() {
                        overlap
                            * (0..h.n_radius())
                                .map(|l| h.value(k, l) * h.annulus_area(l))
                                .sum::<T>()
                    } else {
                        T::zero()
                    }
                })
                .sum(),
        }
    }

    /// Mass of the normalized spatial kernel inside the disk of radius r,
    /// divided by 2π. Only meaningful for separable families.
    fn radial_cdf(&self, r: T) -> T {
        let two_pi = T::two() * T::PI();
        match self {
            Self::GaussianExponential { sigma2, .. } => {
                (T::one() - (-(r * r) / (T::two() * *sigma2)).exp()) / two_pi
            }
            Self::EtasPowerLaw { d, q, .. } => {
                if r.is_infinite() {
                    return T::one() / two_pi;
                }
                (T::one() - ((T::one() - *q) * (r * r / *d).ln_1p()).exp()) / two_pi
            }
            Self::Histogram(_) => unreachable!("histogram kernels are not separable"),
        }
    }

    /// Fraction of the normalized spatial kernel centered at `center` that
    /// falls in `region`, with an error estimate.
    pub fn spatial_fraction(&self, center: Point<T>, region: SpatialRegion<'_, T>, tol: T) -> Result<(T, T)> {
        match (self, region) {
            (Self::Histogram(_), _) => Err(Error::InvalidInput(
                "histogram kernels are not separable in space and time".into(),
            )),
            (_, SpatialRegion::Plane) => Ok((T::one(), T::zero())),
            (Self::GaussianExponential { sigma2, .. }, SpatialRegion::Rect(r)) => {
                let s = sigma2.sqrt();
                let fx = normal_cdf((r.x_max - center.x) / s) - normal_cdf((r.x_min - center.x) / s);
                let fy = normal_cdf((r.y_max - center.y) / s) - normal_cdf((r.y_min - center.y) / s);
                Ok((fx * fy, T::zero()))
            }
            (_, SpatialRegion::Rect(r)) => self.spatial_fraction(center, SpatialRegion::Ring(&r.corners()), tol),
            (_, SpatialRegion::Ring(ring)) => {
                let q = polar_kernel_mass(ring, center, |r| self.radial_cdf(r), tol);
                if !q.converged {
                    return Err(Error::CubatureTolerance {
                        requested: tol.as_f64(),
                        achieved: q.error_estimate.as_f64(),
                    });
                }
                Ok((q.value.min(T::one()).max(T::zero()), q.error_estimate))
            }
        }
    }

    /// ∫_region ∫_{lag_lo}^{lag_hi} g for a parent at `center` with `mark`.
    pub fn window_mass(
        &self,
        center: Point<T>,
        mark: Option<T>,
        lag_lo: T,
        lag_hi: T,
        region: SpatialRegion<'_, T>,
        tol: T,
    ) -> Result<(T, T)> {
        match self {
            Self::Histogram(h) => {
                let lo = lag_lo.max(T::zero());
                let ring_owned;
                let ring: Option<&[Point<T>]> = match region {
                    SpatialRegion::Plane => None,
                    SpatialRegion::Rect(r) => {
                        ring_owned = r.corners();
                        Some(&ring_owned)
                    }
                    SpatialRegion::Ring(r) => Some(r),
                };
                let areas: Vec<T> = (0..h.n_radius())
                    .map(|l| match ring {
                        None => h.annulus_area(l),
                        Some(ring) => {
                            let outer = disk_intersection_area(ring, center, h.radius_edges[l + 1]);
                            let inner = disk_intersection_area(ring, center, h.radius_edges[l]);
                            (outer - inner).max(T::zero())
                        }
                    })
                    .collect();
                let mut total = T::zero();
                for k in 0..h.n_time() {
                    let overlap = h.time_overlap(k, lo, lag_hi);
                    if overlap > T::zero() {
                        for (l, a) in areas.iter().enumerate() {
                            total = total + overlap * h.value(k, l) * *a;
                        }
                    }
                }
                Ok((total, T::zero()))
            }
            _ => {
                let temporal = self.temporal_mass(lag_lo, lag_hi, mark);
                if temporal == T::zero() {
                    return Ok((T::zero(), T::zero()));
                }
                let (frac, err) = self.spatial_fraction(center, region, tol / temporal.max(T::one()))?;
                Ok((temporal * frac, temporal * err))
            }
        }
    }

    /// Draws one offspring displacement (dx, dy, dt) from g normalized to a
    /// probability density.
    pub fn sample_offspring<R: Rng + ?Sized>(&self, rng: &mut R) -> (T, T, T) {
        let two_pi = 2.0 * std::f64::consts::PI;
        match self {
            Self::GaussianExponential { omega, sigma2, .. } => {
                let s = sigma2.as_f64().sqrt();
                let zx: f64 = StandardNormal.sample(rng);
                let zy: f64 = StandardNormal.sample(rng);
                let e: f64 = Exp1.sample(rng);
                (T::lit(s * zx), T::lit(s * zy), T::lit(e * omega.as_f64()))
            }
            Self::EtasPowerLaw { c, p, d, q, .. } => {
                let (c, p, d, q) = (c.as_f64(), p.as_f64(), d.as_f64(), q.as_f64());
                let u: f64 = rng.random();
                let dt = c * ((1.0 - u).powf(-1.0 / (p - 1.0)) - 1.0);
                let v: f64 = rng.random();
                let r = (d * ((1.0 - v).powf(1.0 / (1.0 - q)) - 1.0)).sqrt();
                let phi = two_pi * rng.random::<f64>();
                (T::lit(r * phi.cos()), T::lit(r * phi.sin()), T::lit(dt))
            }
            Self::Histogram(h) => {
                let weights: Vec<f64> = (0..h.n_time())
                    .flat_map(|k| (0..h.n_radius()).map(move |l| (k, l)))
                    .map(|(k, l)| (h.value(k, l) * h.cell_measure(k, l)).as_f64())
                    .collect();
                let total: f64 = weights.iter().sum();
                let mut target = rng.random::<f64>() * total;
                let mut cell = weights.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    if target < *w {
                        cell = i;
                        break;
                    }
                    target -= w;
                }
                let (k, l) = (cell / h.n_radius(), cell % h.n_radius());
                let t0 = h.time_edges[k].as_f64();
                let t1 = h.time_edges[k + 1].as_f64();
                let r0 = h.radius_edges[l].as_f64();
                let r1 = h.radius_edges[l + 1].as_f64();
                let mut dt = t0 + (t1 - t0) * rng.random::<f64>();
                if dt <= 0.0 {
                    dt = f64::MIN_POSITIVE;
                }
                let r = (r0 * r0 + (r1 * r1 - r0 * r0) * rng.random::<f64>()).sqrt();
                let phi = two_pi * rng.random::<f64>();
                (T::lit(r * phi.cos()), T::lit(r * phi.sin()), T::lit(dt))
            }
        }
    }

    /// Smallest lag beyond which the remaining temporal mass of any parent
    /// with productivity up to that of `max_mark` is at most `tail`.
    pub fn tail_lag(&self, tail: T, max_mark: Option<T>) -> T {
        match self {
            Self::GaussianExponential { theta, omega, .. } => {
                if *theta <= tail {
                    T::zero()
                } else {
                    *omega * (*theta / tail).ln()
                }
            }
            Self::EtasPowerLaw { c, p, .. } => {
                let k = self.productivity(max_mark).max(self.productivity(None));
                let l = (k / ((*p - T::one()) * tail)).powf(T::one() / (*p - T::one())) - *c;
                l.max(T::zero())
            }
            Self::Histogram(h) => h.support_end(),
        }
    }

    /// Radius beyond which at most `eps` of the normalized spatial kernel
    /// lies (for histograms, the outermost edge).
    pub fn spatial_tail_radius(&self, eps: T) -> T {
        match self {
            Self::GaussianExponential { sigma2, .. } => (-T::two() * *sigma2 * eps.ln()).sqrt(),
            Self::EtasPowerLaw { d, q, .. } => (*d * (eps.powf(T::one() / (T::one() - *q)) - T::one())).sqrt(),
            Self::Histogram(h) => h.max_radius(),
        }
    }

    /// Largest lag at which g can be non-zero, if finite.
    pub fn support_end(&self) -> Option<T> {
        match self {
            Self::Histogram(h) => Some(h.support_end()),
            _ => None,
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match self {
            Self::GaussianExponential { .. } => vec!["theta".into(), "omega".into(), "sigma2".into()],
            Self::EtasPowerLaw { .. } => ["k0", "alpha", "c", "p", "d", "q"].iter().map(|s| s.to_string()).collect(),
            Self::Histogram(h) => (0..h.n_time())
                .flat_map(|k| (0..h.n_radius()).map(move |l| format!("g_{k}_{l}")))
                .collect(),
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Self::GaussianExponential { .. } => 3,
            Self::EtasPowerLaw { .. } => 6,
            Self::Histogram(h) => h.values.len(),
        }
    }

    pub fn params(&self) -> Vec<T> {
        match self {
            Self::GaussianExponential {
                theta,
                omega,
                sigma2,
            } => vec![*theta, *omega, *sigma2],
            Self::EtasPowerLaw {
                k0, alpha, c, p, d, q, ..
            } => vec![*k0, *alpha, *c, *p, *d, *q],
            Self::Histogram(h) => h.values.clone(),
        }
    }

    /// Same family with parameters replaced (unvalidated).
    pub fn with_params(&self, v: &[T]) -> Self {
        assert_eq!(v.len(), self.n_params(), "parameter vector length");
        match self {
            Self::GaussianExponential { .. } => Self::GaussianExponential {
                theta: v[0],
                omega: v[1],
                sigma2: v[2],
            },
            Self::EtasPowerLaw { m0, .. } => Self::EtasPowerLaw {
                k0: v[0],
                alpha: v[1],
                c: v[2],
                p: v[3],
                d: v[4],
                q: v[5],
                m0: *m0,
            },
            Self::Histogram(h) => {
                let mut h = h.clone();
                h.values = v.to_vec();
                Self::Histogram(h)
            }
        }
    }

    /// Partial derivatives of g(Δs, Δt) with respect to [`Self::params`],
    /// written into `out`.
    pub fn eval_gradient(&self, dx: T, dy: T, dt: T, mark: Option<T>, out: &mut [T]) {
        for o in out.iter_mut() {
            *o = T::zero();
        }
        if !(dt > T::zero()) {
            return;
        }
        let r2 = dx * dx + dy * dy;
        match self {
            Self::GaussianExponential {
                theta,
                omega,
                sigma2,
            } => {
                let base = (-dt / *omega - r2 / (T::two() * *sigma2)).exp()
                    / (T::two() * T::PI() * *omega * *sigma2);
                let g = *theta * base;
                out[0] = base;
                out[1] = g * (dt / (*omega * *omega) - T::one() / *omega);
                out[2] = g * (r2 / (T::two() * *sigma2 * *sigma2) - T::one() / *sigma2);
            }
            Self::EtasPowerLaw {
                k0,
                alpha,
                c,
                p,
                d,
                q,
                m0,
            } => {
                let dm = mark.map(|m| m - *m0).unwrap_or(T::zero());
                let prod = (*alpha * dm).exp();
                let spatial_norm = (*q - T::one()) / (T::PI() * *d);
                let u = r2 / *d;
                let base = prod * spatial_norm * (-*p * (dt + *c).ln() - *q * u.ln_1p()).exp();
                let g = *k0 * base;
                out[0] = base;
                out[1] = g * dm;
                out[2] = -*p * g / (dt + *c);
                out[3] = -g * (dt + *c).ln();
                out[4] = g * (*q * u / (*d * (T::one() + u)) - T::one() / *d);
                out[5] = g * (T::one() / (*q - T::one()) - u.ln_1p());
            }
            Self::Histogram(h) => {
                if let Some((k, l)) = h.cell_of(r2.sqrt(), dt) {
                    out[k * h.n_radius() + l] = T::one();
                }
            }
        }
    }

    /// Partial derivatives of the total mass m(mark) with respect to
    /// [`Self::params`].
    pub fn mass_gradient(&self, mark: Option<T>, out: &mut [T]) {
        for o in out.iter_mut() {
            *o = T::zero();
        }
        match self {
            Self::GaussianExponential { .. } => out[0] = T::one(),
            Self::EtasPowerLaw {
                k0,
                alpha,
                c,
                p,
                m0,
                ..
            } => {
                let dm = mark.map(|m| m - *m0).unwrap_or(T::zero());
                let prod = (*alpha * dm).exp();
                let pm1 = *p - T::one();
                let temporal = c.powf(-pm1) / pm1;
                let m = *k0 * prod * temporal;
                out[0] = prod * temporal;
                out[1] = m * dm;
                out[2] = -m * pm1 / *c;
                out[3] = m * (-c.ln() - T::one() / pm1);
            }
            Self::Histogram(h) => {
                for k in 0..h.n_time() {
                    for l in 0..h.n_radius() {
                        out[k * h.n_radius() + l] = h.cell_measure(k, l);
                    }
                }
            }
        }
    }
}

/// Triggering evaluation at a displacement and lag (free-function form).
pub fn eval_triggering<T: Scalar>(family: &TriggeringFamily<T>, ds: Point<T>, dt: T, parent_mark: Option<T>) -> T {
    family.eval(ds.x, ds.y, dt, parent_mark)
}

pub fn triggering_mass<T: Scalar>(family: &TriggeringFamily<T>, parent_mark: Option<T>) -> Result<T> {
    family.mass(parent_mark)
}
