//! Event catalogs and observation domains.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Point, Polygon, Rect};
use crate::scalar::{format_significant, Scalar};

/// Significant digits used when writing catalogs and parameters.
pub const DECIMAL_DIGITS: usize = 12;

/// A single observed event: time, planar location and an optional mark
/// (a magnitude or a small-integer category).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event<T> {
    pub t: T,
    pub x: T,
    pub y: T,
    pub mark: Option<T>,
}

impl<T: Scalar> Event<T> {
    pub fn new(t: T, x: T, y: T) -> Self {
        Self { t, x, y, mark: None }
    }

    pub fn with_mark(t: T, x: T, y: T, mark: T) -> Self {
        Self {
            t,
            x,
            y,
            mark: Some(mark),
        }
    }

    #[inline]
    pub fn location(&self) -> Point<T> {
        Point::new(self.x, self.y)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if !self.t.is_finite() || self.t < T::zero() {
            return Err(format!("time {} must be finite and non-negative", self.t));
        }
        if !self.x.is_finite() || !self.y.is_finite() {
            return Err("coordinates must be finite".into());
        }
        if let Some(m) = self.mark {
            if !m.is_finite() || m < T::zero() {
                return Err(format!("mark {m} must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Region<T> {
    Rectangle(Rect<T>),
    Polygon(Polygon<T>),
}

/// Spatial region X together with the time window [0, T).
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationDomain<T> {
    region: Region<T>,
    ring: Vec<Point<T>>,
    t_end: T,
}

impl<T: Scalar> ObservationDomain<T> {
    pub fn new(region: Region<T>, t_end: T) -> Result<Self> {
        if !t_end.is_finite() || t_end <= T::zero() {
            return Err(Error::InvalidDomain(format!("t_end must be positive, got {t_end}")));
        }
        let ring = match &region {
            Region::Rectangle(r) => {
                Rect::new(r.x_min, r.x_max, r.y_min, r.y_max)?;
                r.corners()
            }
            Region::Polygon(p) => p.vertices().to_vec(),
        };
        Ok(Self {
            region,
            ring,
            t_end,
        })
    }

    pub fn rectangle(x_min: T, x_max: T, y_min: T, y_max: T, t_end: T) -> Result<Self> {
        Self::new(Region::Rectangle(Rect::new(x_min, x_max, y_min, y_max)?), t_end)
    }

    pub fn unit_square(t_end: T) -> Result<Self> {
        Self::new(Region::Rectangle(Rect::unit()), t_end)
    }

    pub fn polygon(vertices: Vec<Point<T>>, t_end: T) -> Result<Self> {
        Self::new(Region::Polygon(Polygon::new(vertices)?), t_end)
    }

    pub fn region(&self) -> &Region<T> {
        &self.region
    }

    /// Counter-clockwise boundary ring of X.
    pub fn ring(&self) -> &[Point<T>] {
        &self.ring
    }

    pub fn t_end(&self) -> T {
        self.t_end
    }

    pub fn with_t_end(&self, t_end: T) -> Result<Self> {
        Self::new(self.region.clone(), t_end)
    }

    pub fn as_rect(&self) -> Option<&Rect<T>> {
        match &self.region {
            Region::Rectangle(r) => Some(r),
            Region::Polygon(_) => None,
        }
    }

    pub fn area(&self) -> T {
        match &self.region {
            Region::Rectangle(r) => r.area(),
            Region::Polygon(p) => p.area(),
        }
    }

    pub fn bbox(&self) -> Rect<T> {
        match &self.region {
            Region::Rectangle(r) => *r,
            Region::Polygon(p) => p.bbox(),
        }
    }

    pub fn contains(&self, p: Point<T>) -> bool {
        match &self.region {
            Region::Rectangle(r) => r.contains(p),
            Region::Polygon(poly) => poly.contains(p),
        }
    }

    /// Space-time membership: location in X and `0 <= t < T`.
    pub fn contains_event(&self, e: &Event<T>) -> bool {
        e.t >= T::zero() && e.t < self.t_end && self.contains(e.location())
    }

    /// |X| · T.
    pub fn volume(&self) -> T {
        self.area() * self.t_end
    }
}

/// Planar Lebesgue measure |X| of the spatial region.
pub fn domain_area<T: Scalar>(domain: &ObservationDomain<T>) -> T {
    domain.area()
}

pub fn point_in_domain<T: Scalar>(s: Point<T>, domain: &ObservationDomain<T>) -> bool {
    domain.contains(s)
}

/// What to do with rows that fall outside the observation domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OutsidePolicy {
    #[default]
    Strict,
    Drop,
}

/// Events sorted by time, ties broken by (x, y, input position).
#[derive(Clone, Debug, PartialEq)]
pub struct EventCatalog<T> {
    events: Vec<Event<T>>,
}

impl<T: Scalar> EventCatalog<T> {
    /// Sorts the events into catalog order. No domain check is applied.
    pub fn new(mut events: Vec<Event<T>>) -> Self {
        sort_events(&mut events);
        Self { events }
    }

    pub fn empty() -> Self {
        Self { events: Vec::new() }
    }

    /// Builds a catalog from raw rows, validating each against the domain.
    /// Returns the catalog and the number of rows dropped under
    /// [`OutsidePolicy::Drop`]. Row numbers in errors are 1-based.
    pub fn from_events(
        events: Vec<Event<T>>,
        domain: &ObservationDomain<T>,
        policy: OutsidePolicy,
    ) -> Result<(Self, usize)> {
        let mut kept = Vec::with_capacity(events.len());
        let mut dropped = 0;
        for (i, e) in events.into_iter().enumerate() {
            e.validate().map_err(|message| Error::MalformedRow {
                row: i + 1,
                message,
            })?;
            if domain.contains_event(&e) {
                kept.push(e);
            } else if policy == OutsidePolicy::Strict {
                return Err(Error::OutsideDomain {
                    row: i + 1,
                    t: e.t.as_f64(),
                    x: e.x.as_f64(),
                    y: e.y.as_f64(),
                });
            } else {
                dropped += 1;
            }
        }
        if kept.is_empty() {
            return Err(Error::EmptyCatalog);
        }
        Ok((Self::new(kept), dropped))
    }

    pub fn events(&self) -> &[Event<T>] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn get(&self, i: usize) -> &Event<T> {
        &self.events[i]
    }

    pub fn has_marks(&self) -> bool {
        self.events.iter().any(|e| e.mark.is_some())
    }

    /// Number of events with `t_i < t`.
    pub fn count_before(&self, t: T) -> usize {
        self.events.partition_point(|e| e.t < t)
    }

    /// Sub-catalog of the events satisfying `keep`, in catalog order.
    pub fn filter<F: Fn(&Event<T>) -> bool>(&self, keep: F) -> Self {
        Self {
            events: self.events.iter().filter(|e| keep(e)).copied().collect(),
        }
    }

    pub fn into_events(self) -> Vec<Event<T>> {
        self.events
    }
}

fn sort_events<T: Scalar>(events: &mut [Event<T>]) {
    // Stable sort keeps input order as the final tie-breaker.
    events.sort_by(|a, b| {
        a.t.partial_cmp(&b.t)
            .expect("finite time")
            .then(a.x.partial_cmp(&b.x).expect("finite x"))
            .then(a.y.partial_cmp(&b.y).expect("finite y"))
    });
}

/// Result of reading a catalog file.
#[derive(Clone, Debug)]
pub struct LoadedCatalog<T> {
    pub catalog: EventCatalog<T>,
    pub dropped: usize,
}

/// Reads a `t,x,y[,mark]` CSV catalog.
pub fn load_catalog<T: Scalar, P: AsRef<Path>>(
    path: P,
    domain: &ObservationDomain<T>,
    policy: OutsidePolicy,
) -> Result<LoadedCatalog<T>> {
    read_catalog(File::open(path)?, domain, policy)
}

pub fn read_catalog<T: Scalar, R: Read>(
    reader: R,
    domain: &ObservationDomain<T>,
    policy: OutsidePolicy,
) -> Result<LoadedCatalog<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.to_ascii_lowercase()).collect();
    let has_mark = match headers.as_slice() {
        [t, x, y] if t == "t" && x == "x" && y == "y" => false,
        [t, x, y, m] if t == "t" && x == "x" && y == "y" && m == "mark" => true,
        _ => {
            return Err(Error::MalformedRow {
                row: 1,
                message: format!("expected header `t,x,y[,mark]`, found `{}`", headers.join(",")),
            })
        }
    };
    let mut events = Vec::new();
    let mut lines = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::MalformedRow {
                row,
                message: e.to_string(),
            }
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |k: usize, name: &str| -> Result<f64> {
            record[k].parse::<f64>().map_err(|_| Error::MalformedRow {
                row: line,
                message: format!("cannot parse {name} `{}`", &record[k]),
            })
        };
        let t = field(0, "t")?;
        let x = field(1, "x")?;
        let y = field(2, "y")?;
        let mark = if has_mark && !record[3].is_empty() {
            Some(T::lit(field(3, "mark")?))
        } else {
            None
        };
        events.push(Event {
            t: T::lit(t),
            x: T::lit(x),
            y: T::lit(y),
            mark,
        });
        lines.push(line);
    }
    if events.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    let (catalog, dropped) =
        EventCatalog::from_events(events, domain, policy).map_err(|e| match e {
            // Translate 1-based record indices to file line numbers.
            Error::OutsideDomain { row, t, x, y } => Error::OutsideDomain {
                row: lines[row - 1],
                t,
                x,
                y,
            },
            Error::MalformedRow { row, message } => Error::MalformedRow {
                row: lines[row - 1],
                message,
            },
            other => other,
        })?;
    Ok(LoadedCatalog { catalog, dropped })
}

pub fn save_catalog<T: Scalar, P: AsRef<Path>>(path: P, catalog: &EventCatalog<T>) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    write_catalog(&mut f, catalog)?;
    f.flush()?;
    Ok(())
}

/// Writes the catalog as CSV with [`DECIMAL_DIGITS`] significant digits.
pub fn write_catalog<T: Scalar, W: Write>(w: &mut W, catalog: &EventCatalog<T>) -> Result<()> {
    let marks = catalog.has_marks();
    if marks {
        writeln!(w, "t,x,y,mark")?;
    } else {
        writeln!(w, "t,x,y")?;
    }
    let f = |v: T| format_significant(v.as_f64(), DECIMAL_DIGITS);
    for e in catalog.events() {
        if marks {
            let m = e.mark.map(f).unwrap_or_default();
            writeln!(w, "{},{},{},{}", f(e.t), f(e.x), f(e.y), m)?;
        } else {
            writeln!(w, "{},{},{}", f(e.t), f(e.x), f(e.y))?;
        }
    }
    Ok(())
}
