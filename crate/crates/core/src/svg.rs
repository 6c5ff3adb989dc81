//! Plain SVG renderings of catalogs, residual maps and K functions.

use std::fmt::Write as _;

use crate::catalog::{Event, ObservationDomain};
use crate::diagnostics::{KFunction, VoronoiResidualMap};
use crate::geometry::{Point, Rect};
use crate::scalar::Scalar;

const SIZE: f64 = 600.0;
const MARGIN: f64 = 40.0;

/// Maps domain coordinates into the drawing square, y pointing up.
struct Frame {
    x0: f64,
    y0: f64,
    scale: f64,
}

impl Frame {
    fn new<T: Scalar>(b: &Rect<T>) -> Self {
        let (w, h) = (b.width().as_f64(), b.height().as_f64());
        Self {
            x0: b.x_min.as_f64(),
            y0: b.y_min.as_f64(),
            scale: (SIZE - 2.0 * MARGIN) / w.max(h).max(f64::MIN_POSITIVE),
        }
    }

    fn map<T: Scalar>(&self, p: Point<T>) -> (f64, f64) {
        (
            MARGIN + (p.x.as_f64() - self.x0) * self.scale,
            SIZE - MARGIN - (p.y.as_f64() - self.y0) * self.scale,
        )
    }
}

fn header(out: &mut String) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
}

fn polygon_path<T: Scalar>(frame: &Frame, ring: &[Point<T>]) -> String {
    let mut d = String::new();
    for (i, p) in ring.iter().enumerate() {
        let (x, y) = frame.map(*p);
        let _ = write!(d, "{}{x:.2},{y:.2} ", if i == 0 { "M" } else { "L" });
    }
    d.push('Z');
    d
}

/// Colour per generation: background dark, later generations warmer.
fn generation_colour(g: u32) -> &'static str {
    const PALETTE: [&str; 6] = ["#1f3b73", "#d62728", "#ff7f0e", "#e6b800", "#2ca02c", "#9467bd"];
    PALETTE[(g as usize).min(PALETTE.len() - 1)]
}

/// Event scatter with one colour per generation (`None`: all background).
pub fn scatter_svg<T: Scalar>(events: &[Event<T>], generations: Option<&[u32]>, domain: &ObservationDomain<T>) -> String {
    let frame = Frame::new(&domain.bbox());
    let mut out = String::new();
    header(&mut out);
    let _ = writeln!(
        out,
        r#"<path d="{}" fill="none" stroke="black" stroke-width="1"/>"#,
        polygon_path(&frame, domain.ring())
    );
    for (i, e) in events.iter().enumerate() {
        let (x, y) = frame.map(e.location());
        let g = generations.map_or(0, |g| g[i]);
        let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2" fill="{}"/>"#, generation_colour(g));
    }
    out.push_str("</svg>\n");
    out
}

/// Diverging blue–white–red colour for a value scaled to [−1, 1].
fn diverging(v: f64) -> String {
    let v = v.clamp(-1.0, 1.0);
    let (r, g, b) = if v >= 0.0 {
        (255.0, 255.0 * (1.0 - v), 255.0 * (1.0 - v))
    } else {
        (255.0 * (1.0 + v), 255.0 * (1.0 + v), 255.0)
    };
    format!("#{:02x}{:02x}{:02x}", r.round() as u8, g.round() as u8, b.round() as u8)
}

/// Voronoi cells coloured by raw residual (red positive, blue negative).
pub fn voronoi_svg<T: Scalar>(map: &VoronoiResidualMap<T>, domain: &ObservationDomain<T>) -> String {
    let frame = Frame::new(&domain.bbox());
    let span = map.cells.iter().map(|c| c.raw.as_f64().abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut out = String::new();
    header(&mut out);
    for c in &map.cells {
        let _ = writeln!(
            out,
            r##"<path d="{}" fill="{}" stroke="#555" stroke-width="0.3"/>"##,
            polygon_path(&frame, &c.polygon),
            diverging(c.raw.as_f64() / span)
        );
    }
    let _ = writeln!(
        out,
        r#"<path d="{}" fill="none" stroke="black" stroke-width="1"/>"#,
        polygon_path(&frame, domain.ring())
    );
    out.push_str("</svg>\n");
    out
}

/// K̂, the envelope bounds and πr², one polyline each; every polyline has
/// one vertex per radius.
pub fn k_function_svg<T: Scalar>(k: &KFunction<T>) -> String {
    let r_max = k.radii.iter().map(|r| r.as_f64()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut curves: Vec<(&str, Vec<f64>)> = vec![("#000000", k.khat.iter().map(|v| v.as_f64()).collect())];
    if let (Some(lo), Some(hi)) = (&k.envelope_lo, &k.envelope_hi) {
        curves.push(("#888888", lo.iter().map(|v| v.as_f64()).collect()));
        curves.push(("#888888", hi.iter().map(|v| v.as_f64()).collect()));
    }
    curves.push((
        "#d62728",
        k.radii.iter().map(|r| std::f64::consts::PI * r.as_f64() * r.as_f64()).collect(),
    ));
    let y_max = curves
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let plot = SIZE - 2.0 * MARGIN;
    let mut out = String::new();
    header(&mut out);
    let _ = writeln!(
        out,
        r#"<path d="M{MARGIN},{MARGIN} L{MARGIN},{b} L{r},{b}" fill="none" stroke="black"/>"#,
        b = SIZE - MARGIN,
        r = SIZE - MARGIN
    );
    for (colour, values) in curves {
        let pts: Vec<String> = k
            .radii
            .iter()
            .zip(&values)
            .map(|(r, v)| {
                let x = MARGIN + r.as_f64() / r_max * plot;
                let y = SIZE - MARGIN - v / y_max * plot;
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn background_only_scatter_is_single_colour() {
        let d = ObservationDomain::unit_square(1.0).unwrap();
        let ev = vec![Event::new(0.1, 0.2, 0.3), Event::new(0.2, 0.6, 0.7)];
        let s = scatter_svg(&ev, None, &d);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert_eq!(s.matches("<circle").count(), 2);
        assert_eq!(s.matches(generation_colour(0)).count(), 2);
    }

    #[test]
    fn one_polyline_per_curve() {
        let k = KFunction {
            radii: vec![0.0, 0.1, 0.2],
            khat: vec![0.0, 0.03, 0.12],
            envelope_lo: Some(vec![0.0, 0.02, 0.1]),
            envelope_hi: Some(vec![0.0, 0.04, 0.14]),
            warnings: Vec::new(),
        };
        let s = k_function_svg(&k);
        assert_eq!(s.matches("<polyline").count(), 4);
        for line in s.lines().filter(|l| l.starts_with("<polyline")) {
            let pts = line.split('"').nth(1).unwrap();
            assert_eq!(pts.split(' ').count(), 3);
        }
    }

    #[test]
    fn diverging_endpoints() {
        assert_eq!(diverging(1.0), "#ff0000");
        assert_eq!(diverging(-1.0), "#0000ff");
        assert_eq!(diverging(0.0), "#ffffff");
    }
}
