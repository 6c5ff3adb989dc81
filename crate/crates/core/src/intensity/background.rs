//! Background rate μ(s) per unit area·time.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{clip_to_rect, signed_area, Point, Rect};
use crate::intensity::triggering::SpatialRegion;
use crate::scalar::{compensated_sum, normal_cdf, Scalar};
use crate::geometry::polar_kernel_mass;

/// Weighted isotropic Gaussian kernel density over locations, divided by a
/// time normalizer so that it is a rate per area·time.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedKde<T> {
    points: Vec<Point<T>>,
    weights: Vec<T>,
    bandwidths: Vec<T>,
    time_norm: T,
    /// Per-kernel mass correction (1 unless edge-corrected).
    normalizers: Vec<T>,
}

impl<T: Scalar> WeightedKde<T> {
    pub fn new(points: Vec<Point<T>>, weights: Vec<T>, bandwidths: Vec<T>, time_norm: T) -> Result<Self> {
        if points.len() != weights.len() || points.len() != bandwidths.len() {
            return Err(Error::param("weights", "points, weights and bandwidths must have equal length"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return Err(Error::param("weights", "must be finite and non-negative"));
        }
        if bandwidths.iter().any(|h| !h.is_finite() || *h <= T::zero()) {
            return Err(Error::param("bandwidth", "must be positive"));
        }
        if !(time_norm.is_finite() && time_norm > T::zero()) {
            return Err(Error::param("time_norm", "must be positive"));
        }
        let n = points.len();
        Ok(Self {
            points,
            weights,
            bandwidths,
            time_norm,
            normalizers: vec![T::one(); n],
        })
    }

    /// Same bandwidth for every point.
    pub fn with_global_bandwidth(points: Vec<Point<T>>, weights: Vec<T>, bandwidth: T, time_norm: T) -> Result<Self> {
        let n = points.len();
        Self::new(points, weights, vec![bandwidth; n], time_norm)
    }

    /// Rescales every kernel to carry unit mass inside `ring`.
    pub fn with_edge_correction(mut self, ring: &[Point<T>], tol: T) -> Result<Self> {
        let fractions: Vec<T> = self
            .points
            .par_iter()
            .zip(self.bandwidths.par_iter())
            .map(|(p, h)| gaussian_fraction(*p, *h, SpatialRegion::Ring(ring), tol))
            .collect::<Result<Vec<T>>>()?;
        self.normalizers = fractions
            .into_iter()
            .map(|f| if f > T::lit(1e-12) { T::one() / f } else { T::one() })
            .collect();
        Ok(self)
    }

    pub fn points(&self) -> &[Point<T>] {
        &self.points
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn bandwidths(&self) -> &[T] {
        &self.bandwidths
    }

    pub fn time_norm(&self) -> T {
        self.time_norm
    }

    pub fn eval(&self, s: Point<T>) -> T {
        let two_pi = T::two() * T::PI();
        let mut acc = T::zero();
        for i in 0..self.points.len() {
            let w = self.weights[i];
            if w == T::zero() {
                continue;
            }
            let h2 = self.bandwidths[i] * self.bandwidths[i];
            let r2 = s.dist2(self.points[i]);
            acc = acc + w * self.normalizers[i] * (-r2 / (T::two() * h2)).exp() / (two_pi * h2);
        }
        acc / self.time_norm
    }

    /// Sum of the kernel peaks; bounds μ everywhere.
    pub fn upper_bound(&self) -> T {
        let two_pi = T::two() * T::PI();
        let total: T = (0..self.points.len())
            .map(|i| self.weights[i] * self.normalizers[i] / (two_pi * self.bandwidths[i] * self.bandwidths[i]))
            .sum();
        total / self.time_norm
    }

    /// Upper bound of the density on a rectangle.
    pub fn upper_bound_on(&self, rect: &Rect<T>) -> T {
        let two_pi = T::two() * T::PI();
        let total: T = (0..self.points.len())
            .map(|i| {
                let h2 = self.bandwidths[i] * self.bandwidths[i];
                let d2 = rect.dist2_to(self.points[i]);
                self.weights[i] * self.normalizers[i] * (-d2 / (T::two() * h2)).exp() / (two_pi * h2)
            })
            .sum();
        total / self.time_norm
    }

    pub fn integral(&self, region: SpatialRegion<'_, T>, tol: T) -> Result<T> {
        let n = self.points.len().max(1);
        let per = tol / T::of_usize(n);
        let parts: Vec<T> = (0..self.points.len())
            .into_par_iter()
            .map(|i| {
                if self.weights[i] == T::zero() {
                    return Ok(T::zero());
                }
                let f = gaussian_fraction(self.points[i], self.bandwidths[i], region, per)?;
                Ok(self.weights[i] * self.normalizers[i] * f)
            })
            .collect::<Result<Vec<T>>>()?;
        Ok(compensated_sum(parts) / self.time_norm)
    }
}

/// Mass of an isotropic Gaussian with standard deviation `h` inside a region.
pub(crate) fn gaussian_fraction<T: Scalar>(center: Point<T>, h: T, region: SpatialRegion<'_, T>, tol: T) -> Result<T> {
    match region {
        SpatialRegion::Plane => Ok(T::one()),
        SpatialRegion::Rect(r) => {
            let fx = normal_cdf((r.x_max - center.x) / h) - normal_cdf((r.x_min - center.x) / h);
            let fy = normal_cdf((r.y_max - center.y) / h) - normal_cdf((r.y_min - center.y) / h);
            Ok(fx * fy)
        }
        SpatialRegion::Ring(ring) => {
            let two_pi = T::two() * T::PI();
            let q = polar_kernel_mass(ring, center, |r| (T::one() - (-(r * r) / (T::two() * h * h)).exp()) / two_pi, tol);
            if !q.converged {
                return Err(Error::CubatureTolerance {
                    requested: tol.as_f64(),
                    achieved: q.error_estimate.as_f64(),
                });
            }
            Ok(q.value.max(T::zero()).min(T::one()))
        }
    }
}

/// Piecewise-constant rate on a regular grid over a rectangle; zero outside.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField<T> {
    rect: Rect<T>,
    nx: usize,
    ny: usize,
    /// Row-major, `values[iy * nx + ix]`.
    values: Vec<T>,
}

impl<T: Scalar> GridField<T> {
    pub fn new(rect: Rect<T>, nx: usize, ny: usize, values: Vec<T>) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::param("grid", "grid needs at least one cell per axis"));
        }
        if values.len() != nx * ny {
            return Err(Error::param(
                "grid",
                format!("expected {} cell values, got {}", nx * ny, values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::param("grid", "cell values must be finite and non-negative"));
        }
        Ok(Self { rect, nx, ny, values })
    }

    pub fn constant(rect: Rect<T>, nx: usize, ny: usize, value: T) -> Result<Self> {
        Self::new(rect, nx, ny, vec![value; nx * ny])
    }

    pub fn rect(&self) -> &Rect<T> {
        &self.rect
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn n_cells(&self) -> usize {
        self.values.len()
    }

    pub fn cell_rect(&self, idx: usize) -> Rect<T> {
        let (ix, iy) = (idx % self.nx, idx / self.nx);
        let dx = self.rect.width() / T::of_usize(self.nx);
        let dy = self.rect.height() / T::of_usize(self.ny);
        let x0 = self.rect.x_min + dx * T::of_usize(ix);
        let y0 = self.rect.y_min + dy * T::of_usize(iy);
        let x1 = if ix + 1 == self.nx { self.rect.x_max } else { x0 + dx };
        let y1 = if iy + 1 == self.ny { self.rect.y_max } else { y0 + dy };
        Rect {
            x_min: x0,
            x_max: x1,
            y_min: y0,
            y_max: y1,
        }
    }

    /// Cell containing `s`; the upper edges belong to the last row/column.
    pub fn cell_of(&self, s: Point<T>) -> Option<usize> {
        if !self.rect.contains(s) {
            return None;
        }
        let fx = (s.x - self.rect.x_min) / self.rect.width() * T::of_usize(self.nx);
        let fy = (s.y - self.rect.y_min) / self.rect.height() * T::of_usize(self.ny);
        let ix = fx.floor().to_usize().unwrap_or(0).min(self.nx - 1);
        let iy = fy.floor().to_usize().unwrap_or(0).min(self.ny - 1);
        Some(iy * self.nx + ix)
    }

    pub fn eval(&self, s: Point<T>) -> T {
        self.cell_of(s).map(|i| self.values[i]).unwrap_or(T::zero())
    }

    /// Area of every cell inside the region.
    pub fn cell_areas(&self, region: SpatialRegion<'_, T>) -> Vec<T> {
        (0..self.n_cells())
            .map(|i| {
                let cell = self.cell_rect(i);
                match region {
                    SpatialRegion::Plane => cell.area(),
                    SpatialRegion::Rect(r) => {
                        let w = (cell.x_max.min(r.x_max) - cell.x_min.max(r.x_min)).max(T::zero());
                        let h = (cell.y_max.min(r.y_max) - cell.y_min.max(r.y_min)).max(T::zero());
                        w * h
                    }
                    SpatialRegion::Ring(ring) => {
                        let clipped = clip_to_rect(ring, &cell);
                        if clipped.len() < 3 {
                            T::zero()
                        } else {
                            signed_area(&clipped).abs()
                        }
                    }
                }
            })
            .collect()
    }

    pub fn integral(&self, region: SpatialRegion<'_, T>) -> T {
        compensated_sum(
            self.cell_areas(region)
                .into_iter()
                .zip(&self.values)
                .map(|(a, v)| a * *v),
        )
    }

    pub(crate) fn set_values(&mut self, values: Vec<T>) {
        debug_assert_eq!(values.len(), self.values.len());
        self.values = values;
    }
}

/// Background rate μ(s), constant in time.
#[derive(Clone, Debug, PartialEq)]
pub enum BackgroundModel<T> {
    Constant { nu: T },
    WeightedKde(WeightedKde<T>),
    GridField(GridField<T>),
}

impl<T: Scalar> BackgroundModel<T> {
    pub fn constant(nu: T) -> Result<Self> {
        let b = Self::Constant { nu };
        b.validate()?;
        Ok(b)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Constant { .. } => "constant",
            Self::WeightedKde(_) => "kde",
            Self::GridField(_) => "grid",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Constant { nu } => {
                if nu.is_finite() && *nu >= T::zero() {
                    Ok(())
                } else {
                    Err(Error::param("nu", format!("must be finite and non-negative, got {nu}")))
                }
            }
            // Constructors validate the other variants.
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn eval(&self, s: Point<T>) -> T {
        match self {
            Self::Constant { nu } => *nu,
            Self::WeightedKde(k) => k.eval(s),
            Self::GridField(g) => g.eval(s),
        }
    }

    /// ∫_region μ(s) ds.
    pub fn integral(&self, region: SpatialRegion<'_, T>, area: T, tol: T) -> Result<T> {
        match self {
            Self::Constant { nu } => Ok(*nu * area),
            Self::WeightedKde(k) => k.integral(region, tol),
            Self::GridField(g) => Ok(g.integral(region)),
        }
    }

    /// An upper bound on μ over all of ℝ².
    pub fn upper_bound(&self) -> T {
        match self {
            Self::Constant { nu } => *nu,
            Self::WeightedKde(k) => k.upper_bound(),
            Self::GridField(g) => g.values.iter().copied().fold(T::zero(), T::max),
        }
    }

    /// An upper bound on μ over a rectangle.
    pub fn upper_bound_on(&self, rect: &Rect<T>) -> T {
        match self {
            Self::Constant { nu } => *nu,
            Self::WeightedKde(k) => k.upper_bound_on(rect),
            Self::GridField(g) => (0..g.n_cells())
                .filter(|&i| {
                    let c = g.cell_rect(i);
                    c.x_min <= rect.x_max && c.x_max >= rect.x_min && c.y_min <= rect.y_max && c.y_max >= rect.y_min
                })
                .map(|i| g.values[i])
                .fold(T::zero(), T::max),
        }
    }

    /// Free parameters (the KDE is held fixed and contributes none).
    pub fn params(&self) -> Vec<T> {
        match self {
            Self::Constant { nu } => vec![*nu],
            Self::WeightedKde(_) => Vec::new(),
            Self::GridField(g) => g.values.clone(),
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Self::Constant { .. } => 1,
            Self::WeightedKde(_) => 0,
            Self::GridField(g) => g.values.len(),
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match self {
            Self::Constant { .. } => vec!["nu".into()],
            Self::WeightedKde(_) => Vec::new(),
            Self::GridField(g) => (0..g.values.len()).map(|i| format!("mu_{i}")).collect(),
        }
    }

    pub fn with_params(&self, v: &[T]) -> Self {
        assert_eq!(v.len(), self.n_params(), "background parameter vector length");
        match self {
            Self::Constant { .. } => Self::Constant { nu: v[0] },
            Self::WeightedKde(k) => Self::WeightedKde(k.clone()),
            Self::GridField(g) => {
                let mut g = g.clone();
                g.values = v.to_vec();
                Self::GridField(g)
            }
        }
    }

    /// ∂μ(s)/∂params.
    pub fn gradient(&self, s: Point<T>, out: &mut [T]) {
        for o in out.iter_mut() {
            *o = T::zero();
        }
        match self {
            Self::Constant { .. } => out[0] = T::one(),
            Self::WeightedKde(_) => {}
            Self::GridField(g) => {
                if let Some(i) = g.cell_of(s) {
                    out[i] = T::one();
                }
            }
        }
    }

    /// ∂/∂params of ∫_region μ.
    pub fn integral_gradient(&self, region: SpatialRegion<'_, T>, area: T, out: &mut [T]) {
        match self {
            Self::Constant { .. } => out[0] = area,
            Self::WeightedKde(_) => {}
            Self::GridField(g) => {
                for (o, a) in out.iter_mut().zip(g.cell_areas(region)) {
                    *o = a;
                }
            }
        }
    }
}
