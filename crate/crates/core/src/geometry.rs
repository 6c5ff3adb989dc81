//! Planar geometry: points, rectangles, simple polygons, clipping, and the
//! polar quadrature used to integrate isotropic kernels over polygons.

use crate::error::{Error, Result};
use crate::scalar::{compensated_sum, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> std::ops::Sub for Point<T> {
    type Output = Self;

    #[inline]
    fn sub(self, other: Self) -> Self {
        Self::new(self.x - other.x, self.y - other.y)
    }
}

impl<T: Scalar> std::ops::Add for Point<T> {
    type Output = Self;

    #[inline]
    fn add(self, other: Self) -> Self {
        Self::new(self.x + other.x, self.y + other.y)
    }
}

impl<T: Scalar> Point<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn scale(self, k: T) -> Self {
        Self::new(self.x * k, self.y * k)
    }

    #[inline]
    pub fn dist2(self, other: Self) -> T {
        let d = self - other;
        d.x * d.x + d.y * d.y
    }

    #[inline]
    pub fn dist(self, other: Self) -> T {
        self.dist2(other).sqrt()
    }

    #[inline]
    pub fn norm2(self) -> T {
        self.x * self.x + self.y * self.y
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[inline]
pub fn cross<T: Scalar>(a: Point<T>, b: Point<T>) -> T {
    a.x * b.y - a.y * b.x
}

#[inline]
pub fn dot<T: Scalar>(a: Point<T>, b: Point<T>) -> T {
    a.x * b.x + a.y * b.y
}

/// Axis-aligned rectangle `[x_min, x_max] × [y_min, y_max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect<T> {
    pub x_min: T,
    pub x_max: T,
    pub y_min: T,
    pub y_max: T,
}

impl<T: Scalar> Rect<T> {
    pub fn new(x_min: T, x_max: T, y_min: T, y_max: T) -> Result<Self> {
        let all_finite = [x_min, x_max, y_min, y_max].iter().all(|v| v.is_finite());
        if !all_finite || !(x_max > x_min) || !(y_max > y_min) {
            return Err(Error::InvalidDomain(format!(
                "rectangle [{x_min}, {x_max}] x [{y_min}, {y_max}] has no positive area"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
        })
    }

    pub fn unit() -> Self {
        Self {
            x_min: T::zero(),
            x_max: T::one(),
            y_min: T::zero(),
            y_max: T::one(),
        }
    }

    pub fn width(&self) -> T {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> T {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn diameter(&self) -> T {
        (self.width() * self.width() + self.height() * self.height()).sqrt()
    }

    pub fn contains(&self, p: Point<T>) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn expand(&self, margin: T) -> Self {
        Self {
            x_min: self.x_min - margin,
            x_max: self.x_max + margin,
            y_min: self.y_min - margin,
            y_max: self.y_max + margin,
        }
    }

    /// Counter-clockwise corner ring.
    pub fn corners(&self) -> Vec<Point<T>> {
        vec![
            Point::new(self.x_min, self.y_min),
            Point::new(self.x_max, self.y_min),
            Point::new(self.x_max, self.y_max),
            Point::new(self.x_min, self.y_max),
        ]
    }

    /// Squared distance from `p` to the rectangle (zero inside).
    pub fn dist2_to(&self, p: Point<T>) -> T {
        let dx = (self.x_min - p.x).max(T::zero()).max(p.x - self.x_max);
        let dy = (self.y_min - p.y).max(T::zero()).max(p.y - self.y_max);
        dx * dx + dy * dy
    }
}

/// Simple polygon stored as an open counter-clockwise vertex ring.
#[derive(Clone, Debug, PartialEq)]
pub struct Polygon<T> {
    vertices: Vec<Point<T>>,
}

impl<T: Scalar> Polygon<T> {
    /// Validates and normalizes a vertex ring. A repeated closing vertex is
    /// dropped and clockwise rings are reversed.
    pub fn new(mut vertices: Vec<Point<T>>) -> Result<Self> {
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(Error::InvalidDomain(
                "polygon needs at least three distinct vertices".into(),
            ));
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDomain("polygon vertex is not finite".into()));
        }
        let signed = signed_area(&vertices);
        if signed == T::zero() || !signed.is_finite() {
            return Err(Error::InvalidDomain("polygon has zero area".into()));
        }
        if let Some((a, b)) = first_self_intersection(&vertices) {
            return Err(Error::InvalidDomain(format!(
                "polygon ring self-intersects (edges {a} and {b})"
            )));
        }
        if signed < T::zero() {
            vertices.reverse();
        }
        Ok(Self { vertices })
    }

    pub fn from_rect(rect: &Rect<T>) -> Self {
        Self {
            vertices: rect.corners(),
        }
    }

    pub fn vertices(&self) -> &[Point<T>] {
        &self.vertices
    }

    pub fn area(&self) -> T {
        signed_area(&self.vertices)
    }

    pub fn bbox(&self) -> Rect<T> {
        ring_bbox(&self.vertices)
    }

    /// Even-odd membership test; points on the boundary count as inside.
    pub fn contains(&self, p: Point<T>) -> bool {
        ring_contains(&self.vertices, p)
    }
}

/// Shoelace signed area of a vertex ring (positive when counter-clockwise).
pub fn signed_area<T: Scalar>(ring: &[Point<T>]) -> T {
    let n = ring.len();
    if n < 3 {
        return T::zero();
    }
    let terms = (0..n).map(|i| {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        a.x * b.y - b.x * a.y
    });
    compensated_sum(terms) * T::half()
}

pub fn ring_bbox<T: Scalar>(ring: &[Point<T>]) -> Rect<T> {
    let mut r = Rect {
        x_min: T::infinity(),
        x_max: T::neg_infinity(),
        y_min: T::infinity(),
        y_max: T::neg_infinity(),
    };
    for p in ring {
        r.x_min = r.x_min.min(p.x);
        r.x_max = r.x_max.max(p.x);
        r.y_min = r.y_min.min(p.y);
        r.y_max = r.y_max.max(p.y);
    }
    r
}

fn on_segment<T: Scalar>(p: Point<T>, a: Point<T>, b: Point<T>) -> bool {
    let ab = b - a;
    let ap = p - a;
    let scale = ab.norm2().max(ap.norm2()).max(T::min_positive_value());
    let c = cross(ab, ap);
    if c * c > T::lit(1e-24).max(T::epsilon() * T::epsilon()) * scale * scale {
        return false;
    }
    let d = dot(ap, ab);
    d >= T::zero() && d <= ab.norm2()
}

pub fn ring_contains<T: Scalar>(ring: &[Point<T>], p: Point<T>) -> bool {
    let n = ring.len();
    let mut inside = false;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        if on_segment(p, a, b) {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

fn segments_intersect<T: Scalar>(p1: Point<T>, p2: Point<T>, q1: Point<T>, q2: Point<T>) -> bool {
    let d1 = cross(q2 - q1, p1 - q1);
    let d2 = cross(q2 - q1, p2 - q1);
    let d3 = cross(p2 - p1, q1 - p1);
    let d4 = cross(p2 - p1, q2 - p1);
    let zero = T::zero();
    if ((d1 > zero && d2 < zero) || (d1 < zero && d2 > zero))
        && ((d3 > zero && d4 < zero) || (d3 < zero && d4 > zero))
    {
        return true;
    }
    (d1 == zero && on_segment(p1, q1, q2))
        || (d2 == zero && on_segment(p2, q1, q2))
        || (d3 == zero && on_segment(q1, p1, p2))
        || (d4 == zero && on_segment(q2, p1, p2))
}

fn first_self_intersection<T: Scalar>(ring: &[Point<T>]) -> Option<(usize, usize)> {
    let n = ring.len();
    for i in 0..n {
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(ring[i], ring[(i + 1) % n], ring[j], ring[(j + 1) % n]) {
                return Some((i, j));
            }
        }
    }
    None
}

/// Sutherland–Hodgman clip of a ring against the half-plane `a·x + b·y <= c`.
///
/// For non-convex rings the output may contain zero-width bridges; its
/// shoelace area is still the area of the intersection.
pub fn clip_half_plane<T: Scalar>(ring: &[Point<T>], a: T, b: T, c: T) -> Vec<Point<T>> {
    let n = ring.len();
    let mut out = Vec::with_capacity(n + 2);
    if n == 0 {
        return out;
    }
    let side = |p: Point<T>| a * p.x + b * p.y - c;
    for i in 0..n {
        let cur = ring[i];
        let next = ring[(i + 1) % n];
        let sc = side(cur);
        let sn = side(next);
        let cur_in = sc <= T::zero();
        let next_in = sn <= T::zero();
        if cur_in {
            out.push(cur);
        }
        if cur_in != next_in {
            let t = sc / (sc - sn);
            out.push(cur + (next - cur).scale(t));
        }
    }
    out
}

/// Intersection of a ring with an axis-aligned rectangle.
pub fn clip_to_rect<T: Scalar>(ring: &[Point<T>], rect: &Rect<T>) -> Vec<Point<T>> {
    let r = clip_half_plane(ring, T::one(), T::zero(), rect.x_max);
    let r = clip_half_plane(&r, -T::one(), T::zero(), -rect.x_min);
    let r = clip_half_plane(&r, T::zero(), T::one(), rect.y_max);
    clip_half_plane(&r, T::zero(), -T::one(), -rect.y_min)
}

/// Signed area of the intersection of the disk of radius `r` centered at the
/// origin with the triangle (origin, a, b).
fn disk_triangle_area<T: Scalar>(a: Point<T>, b: Point<T>, r: T) -> T {
    let d = b - a;
    let r2 = r * r;
    // Roots of |a + t d|^2 = r^2 inside (0, 1).
    let qa = d.norm2();
    let mut cuts = [T::zero(), T::zero(), T::zero(), T::zero()];
    let mut count = 0;
    cuts[count] = T::zero();
    count += 1;
    if qa > T::zero() {
        let qb = T::two() * dot(a, d);
        let qc = a.norm2() - r2;
        let disc = qb * qb - T::lit(4.0) * qa * qc;
        if disc > T::zero() {
            let sq = disc.sqrt();
            let t1 = (-qb - sq) / (T::two() * qa);
            let t2 = (-qb + sq) / (T::two() * qa);
            for t in [t1, t2] {
                if t > T::zero() && t < T::one() {
                    cuts[count] = t;
                    count += 1;
                }
            }
        }
    }
    cuts[count] = T::one();
    count += 1;
    let mut total = T::zero();
    for k in 0..count - 1 {
        let p = a + d.scale(cuts[k]);
        let q = a + d.scale(cuts[k + 1]);
        let mid = (p + q).scale(T::half());
        if mid.norm2() <= r2 {
            total = total + cross(p, q) * T::half();
        } else {
            let angle = cross(p, q).atan2(dot(p, q));
            total = total + T::half() * r2 * angle;
        }
    }
    total
}

/// Area of the intersection of a (counter-clockwise) ring with the disk of
/// radius `r` centered at `center`.
pub fn disk_intersection_area<T: Scalar>(ring: &[Point<T>], center: Point<T>, r: T) -> T {
    if r <= T::zero() {
        return T::zero();
    }
    let n = ring.len();
    let terms = (0..n).map(|i| {
        disk_triangle_area(ring[i] - center, ring[(i + 1) % n] - center, r)
    });
    compensated_sum(terms).max(T::zero())
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = pk;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Outcome of an adaptive quadrature.
#[derive(Clone, Copy, Debug)]
pub struct Quadrature<T> {
    pub value: T,
    pub error_estimate: T,
    pub evaluations: usize,
    pub converged: bool,
}

const POLAR_NODES: usize = 8;
const POLAR_MAX_DEPTH: usize = 24;

/// Integrates an isotropic kernel centered at `center` over the ring.
///
/// `radial_cdf(r)` must return the kernel mass inside the disk of radius `r`
/// divided by 2π (so that it tends to `1/(2π)` for a normalized kernel). The
/// angular integral is split at every vertex direction, so each sector sees a
/// fixed set of edges, and each sector is refined adaptively with
/// Gauss–Legendre rules until the two-level difference is below `tol`
/// (absolute, apportioned by angle).
pub fn polar_kernel_mass<T: Scalar, F: Fn(T) -> T>(
    ring: &[Point<T>],
    center: Point<T>,
    radial_cdf: F,
    tol: T,
) -> Quadrature<T> {
    let two_pi = T::PI() * T::two();
    let mut angles: Vec<T> = ring
        .iter()
        .filter(|v| v.dist2(center) > T::zero())
        .map(|v| {
            let a = (v.y - center.y).atan2(v.x - center.x);
            if a < T::zero() {
                a + two_pi
            } else {
                a
            }
        })
        .collect();
    angles.sort_by(|a, b| a.partial_cmp(b).expect("finite angle"));
    angles.dedup();
    if angles.is_empty() {
        return Quadrature {
            value: T::zero(),
            error_estimate: T::zero(),
            evaluations: 0,
            converged: true,
        };
    }
    let first = angles[0];
    angles.push(first + two_pi);

    let rule: Vec<(T, T)> = gauss_legendre(POLAR_NODES)
        .into_iter()
        .map(|(x, w)| (T::lit(x), T::lit(w)))
        .collect();

    let ray_integrand = |phi: T| -> T {
        let u = Point::new(phi.cos(), phi.sin());
        let mut hits: [T; 64] = [T::zero(); 64];
        let mut heap_hits: Vec<T> = Vec::new();
        let mut k = 0usize;
        let n = ring.len();
        for i in 0..n {
            let p = ring[i];
            let q = ring[(i + 1) % n];
            let e = q - p;
            let denom = cross(u, e);
            if denom == T::zero() {
                continue;
            }
            let pc = p - center;
            let t = cross(pc, e) / denom;
            let s = cross(pc, u) / denom;
            if t > T::zero() && s >= T::zero() && s < T::one() {
                if k < hits.len() {
                    hits[k] = t;
                } else {
                    heap_hits.push(t);
                }
                k += 1;
            }
        }
        let mut all: Vec<T>;
        let sorted: &mut [T] = if heap_hits.is_empty() {
            &mut hits[..k]
        } else {
            all = hits.to_vec();
            all.extend(heap_hits);
            &mut all[..]
        };
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite hit"));
        // Walking inward from infinity, membership toggles at every crossing.
        let mut acc = T::zero();
        let mut idx = sorted.len();
        while idx >= 2 {
            acc = acc + radial_cdf(sorted[idx - 1]) - radial_cdf(sorted[idx - 2]);
            idx -= 2;
        }
        if idx == 1 {
            acc = acc + radial_cdf(sorted[0]) - radial_cdf(T::zero());
        }
        acc
    };

    let gauss = |a: T, b: T| -> T {
        let half = (b - a) * T::half();
        let mid = (a + b) * T::half();
        let mut s = T::zero();
        for &(x, w) in &rule {
            s = s + w * ray_integrand(mid + half * x);
        }
        s * half
    };

    let mut total = T::zero();
    let mut err_total = T::zero();
    let mut evaluations = 0usize;
    let mut converged = true;
    for w in angles.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a <= T::zero() {
            continue;
        }
        // Explicit stack of (a, b, coarse estimate, depth).
        let coarse = gauss(a, b);
        evaluations += POLAR_NODES;
        let mut stack = vec![(a, b, coarse, 0usize)];
        while let Some((lo, hi, whole, depth)) = stack.pop() {
            let mid = (lo + hi) * T::half();
            let left = gauss(lo, mid);
            let right = gauss(mid, hi);
            evaluations += 2 * POLAR_NODES;
            let fine = left + right;
            let diff = (fine - whole).abs();
            let local_tol = tol * (hi - lo) / two_pi;
            if diff <= local_tol || depth >= POLAR_MAX_DEPTH {
                if diff > local_tol {
                    converged = false;
                }
                total = total + fine;
                err_total = err_total + diff;
            } else {
                stack.push((mid, hi, right, depth + 1));
                stack.push((lo, mid, left, depth + 1));
            }
        }
    }
    Quadrature {
        value: total,
        error_estimate: err_total,
        evaluations,
        converged,
    }
}
