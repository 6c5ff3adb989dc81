//! Voronoi residuals: observed count (one) minus the fitted intensity
//! integrated over each event's cell.

use std::io::Write;

use rayon::prelude::*;

use crate::catalog::{EventCatalog, ObservationDomain};
use crate::error::{Error, Result};
use crate::geometry::{clip_half_plane, cross, ring_bbox, signed_area, Point};
use crate::intensity::{IntensityModel, SpatialRegion};
use crate::scalar::{compensated_sum, format_significant, Scalar};

#[derive(Clone, Debug)]
pub struct VoronoiCell<T> {
    pub event_index: usize,
    pub polygon: Vec<Point<T>>,
    pub area: T,
    /// ∫_cell ∫_time λ.
    pub integral: T,
    /// 1 − integral.
    pub raw: T,
    /// (1 − integral) / √integral, a Poisson-approximation scaling.
    pub standardized: T,
}

#[derive(Clone, Debug)]
pub struct VoronoiResidualMap<T> {
    pub cells: Vec<VoronoiCell<T>>,
    pub t_start: T,
    pub t_end: T,
}

impl<T: Scalar> VoronoiResidualMap<T> {
    pub fn total_area(&self) -> T {
        compensated_sum(self.cells.iter().map(|c| c.area))
    }

    pub fn raw_residuals(&self) -> Vec<T> {
        self.cells.iter().map(|c| c.raw).collect()
    }
}

/// Voronoi cells of `points` clipped to X, by successive half-plane cuts.
pub fn voronoi_cells<T: Scalar>(points: &[Point<T>], domain: &ObservationDomain<T>) -> Result<Vec<Vec<Point<T>>>> {
    let n = points.len();
    if n < 3 {
        return Err(Error::Degenerate(format!("{n} points cannot form a tessellation residual map")));
    }
    let origin = points[0];
    let Some(far) = points.iter().copied().max_by(|a, b| a.dist2(origin).partial_cmp(&b.dist2(origin)).expect("finite")) else {
        unreachable!()
    };
    let scale = far.dist(origin).max(T::min_positive_value());
    if points
        .iter()
        .all(|p| cross(far - origin, *p - origin).abs() <= T::lit(1e-12) * scale * scale)
    {
        return Err(Error::Degenerate("events are collinear".into()));
    }
    let ring = domain.ring().to_vec();
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut others: Vec<(T, usize)> = (0..n).filter(|&j| j != i).map(|j| (p.dist2(points[j]), j)).collect();
            others.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite").then(a.1.cmp(&b.1)));
            if others[0].0 == T::zero() {
                return Err(Error::Degenerate(format!("events {i} and {} share a location", others[0].1)));
            }
            let mut cell = ring.clone();
            for (d2, j) in others {
                // Bisectors farther than twice the cell radius cannot cut it.
                let reach = cell.iter().map(|v| v.dist2(*p)).fold(T::zero(), T::max);
                if d2 > T::lit(4.0) * reach {
                    break;
                }
                let q = points[j];
                let (a, b) = (q.x - p.x, q.y - p.y);
                let (mx, my) = ((p.x + q.x) * T::half(), (p.y + q.y) * T::half());
                cell = clip_half_plane(&cell, a, b, a * mx + b * my);
                if cell.is_empty() {
                    break;
                }
            }
            Ok(cell)
        })
        .collect()
}

/// Residual map over the events in `[t_start, t_end)`; the whole window
/// when `time` is `None`.
pub fn voronoi_residuals<T: Scalar>(
    model: &IntensityModel<T>,
    catalog: &EventCatalog<T>,
    domain: &ObservationDomain<T>,
    time: Option<(T, T)>,
    tol: T,
) -> Result<VoronoiResidualMap<T>> {
    let (t_start, t_end) = time.unwrap_or((T::zero(), domain.t_end()));
    if !(t_start < t_end) {
        return Err(Error::param("time", "interval must be non-empty"));
    }
    let selected: Vec<usize> = (0..catalog.len())
        .filter(|&i| {
            let t = catalog.get(i).t;
            t >= t_start && t < t_end
        })
        .collect();
    let points: Vec<Point<T>> = selected.iter().map(|&i| catalog.get(i).location()).collect();
    let polygons = voronoi_cells(&points, domain)?;
    let parents = catalog.count_before(t_end);
    let reach = model
        .triggering
        .as_ref()
        .map(|g| g.spatial_tail_radius(T::lit(1e-12)))
        .unwrap_or(T::zero());
    let per_parent = tol / T::of_usize(parents.max(1));
    let cells = polygons
        .into_par_iter()
        .zip(selected.par_iter())
        .map(|(polygon, &event_index)| {
            let area = signed_area(&polygon).abs();
            let region = SpatialRegion::Ring(&polygon);
            let background = model.background.integral(region, area, tol)? * (t_end - t_start);
            let mut triggered = T::zero();
            if let Some(g) = &model.triggering {
                let bbox = ring_bbox(&polygon);
                let mut parts = Vec::new();
                for e in &catalog.events()[..parents] {
                    if bbox.dist2_to(e.location()) > reach * reach {
                        continue;
                    }
                    let lo = (t_start - e.t).max(T::zero());
                    let (v, _) = g.window_mass(e.location(), model.parent_mark(e), lo, t_end - e.t, region, per_parent)?;
                    parts.push(v);
                }
                triggered = compensated_sum(parts);
            }
            let integral = background + triggered;
            let raw = T::one() - integral;
            Ok(VoronoiCell {
                event_index,
                area,
                integral,
                raw,
                standardized: raw / integral.max(T::min_positive_value()).sqrt(),
                polygon,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VoronoiResidualMap { cells, t_start, t_end })
}

/// CSV with columns `event_index,area,integral,raw,standardized`.
pub fn write_voronoi<T: Scalar, W: Write>(w: W, map: &VoronoiResidualMap<T>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["event_index", "area", "integral", "raw", "standardized"])?;
    let fmt = |v: T| format_significant(v.as_f64(), crate::catalog::DECIMAL_DIGITS);
    for c in &map.cells {
        out.write_record([c.event_index.to_string(), fmt(c.area), fmt(c.integral), fmt(c.raw), fmt(c.standardized)])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Event;
    use crate::intensity::{BackgroundModel, TriggeringFamily};

    fn scattered(n: usize) -> EventCatalog<f64> {
        EventCatalog::new(
            (0..n)
                .map(|i| {
                    let u = i as f64 + 0.5;
                    Event::new(u / n as f64 * 4.0, (u * 0.618_034).fract(), (u * 0.414_214).fract())
                })
                .collect(),
        )
    }

    #[test]
    fn cells_partition_domain() {
        let d = ObservationDomain::polygon(
            vec![Point::new(0.0, 0.0), Point::new(2.0, 0.0), Point::new(2.0, 1.0), Point::new(0.0, 1.5)],
            4.0,
        )
        .unwrap();
        let c = scattered(80).filter(|e| d.contains(e.location()));
        let cells = voronoi_cells(&c.events().iter().map(|e| e.location()).collect::<Vec<_>>(), &d).unwrap();
        let total: f64 = cells.iter().map(|c| signed_area(c).abs()).sum();
        assert!((total - d.area()).abs() < 1e-6 * d.area());
    }

    #[test]
    fn collinear_and_duplicate_rejected() {
        let d = ObservationDomain::unit_square(1.0).unwrap();
        let line: Vec<Point<f64>> = (0..4).map(|i| Point::new(0.1 * i as f64 + 0.1, 0.5)).collect();
        assert!(matches!(voronoi_cells(&line, &d), Err(Error::Degenerate(_))));
        let dup = vec![Point::new(0.2, 0.2), Point::new(0.2, 0.2), Point::new(0.7, 0.4)];
        assert!(matches!(voronoi_cells(&dup, &d), Err(Error::Degenerate(_))));
    }

    #[test]
    fn homogeneous_fit_has_centered_residuals() {
        let d = ObservationDomain::unit_square(4.0).unwrap();
        let c = scattered(100);
        let m = IntensityModel::poisson(25.0).unwrap();
        let map = voronoi_residuals(&m, &c, &d, None, 1e-8).unwrap();
        let mean = map.raw_residuals().iter().sum::<f64>() / 100.0;
        assert!(mean.abs() < 1e-9);
        assert!((map.total_area() - 1.0).abs() < 1e-9);
    }

    /// y-range of a convex ring at abscissa x.
    fn vertical_span(ring: &[Point<f64>], x: f64) -> Option<(f64, f64)> {
        let mut ys = Vec::new();
        for i in 0..ring.len() {
            let (a, b) = (ring[i], ring[(i + 1) % ring.len()]);
            if (a.x <= x && x <= b.x) || (b.x <= x && x <= a.x) {
                if a.x == b.x {
                    ys.push(a.y);
                    ys.push(b.y);
                } else {
                    ys.push(a.y + (b.y - a.y) * (x - a.x) / (b.x - a.x));
                }
            }
        }
        let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (hi > lo).then_some((lo, hi))
    }

    #[test]
    fn cell_integral_matches_riemann_sum() {
        let d = ObservationDomain::unit_square(4.0).unwrap();
        let c = scattered(30);
        let (nu, theta, omega, s2) = (3.0, 0.5, 0.7, 0.02);
        let m = IntensityModel::new(
            BackgroundModel::constant(nu).unwrap(),
            Some(TriggeringFamily::gaussian_exponential(theta, omega, s2).unwrap()),
        )
        .unwrap();
        let map = voronoi_residuals(&m, &c, &d, None, 1e-10).unwrap();
        let cell = &map.cells[15];
        let bbox = ring_bbox(&cell.polygon);
        // Midpoint rule in x; time and y integrals in closed form.
        let nx = 20_000;
        let hx = bbox.width() / nx as f64;
        let s = s2.sqrt();
        let mut total = 0.0;
        for ix in 0..nx {
            let x = bbox.x_min + (ix as f64 + 0.5) * hx;
            let Some((y0, y1)) = vertical_span(&cell.polygon, x) else { continue };
            let mut col = nu * 4.0 * (y1 - y0);
            for e in c.events() {
                let time = theta * (1.0 - (-(4.0 - e.t) / omega).exp());
                let gx = (-(x - e.x).powi(2) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2);
                let erf = |v: f64| statrs::function::erf::erf(v);
                let gy = s * (std::f64::consts::PI / 2.0).sqrt()
                    * (erf((y1 - e.y) / (s * std::f64::consts::SQRT_2)) - erf((y0 - e.y) / (s * std::f64::consts::SQRT_2)));
                col += time * gx * gy;
            }
            total += col * hx;
        }
        assert!((total - cell.integral).abs() / cell.integral < 1e-4, "{total} vs {}", cell.integral);
    }
}
