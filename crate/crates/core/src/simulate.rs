//! Simulation by cluster branching and by sequential thinning.

use rand::Rng;
use rand_distr::{Distribution, Exp, Exp1, Poisson};
use rayon::prelude::*;

use crate::catalog::{Event, EventCatalog, ObservationDomain};
use crate::error::{Error, Result};
use crate::geometry::{Point, Rect};
use crate::intensity::{BackgroundModel, IntensityModel, SpatialRegion, TriggeringFamily};
use crate::rng::{stream, StreamRng};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SimMethod {
    Ogata,
    #[default]
    Cluster,
}

impl SimMethod {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Ogata => "ogata",
            Self::Cluster => "cluster",
        }
    }
}

/// Exponential magnitude law above `m0` with slope `b` (base-10).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GutenbergRichter<T> {
    pub m0: T,
    pub b: T,
}

impl<T: Scalar> GutenbergRichter<T> {
    pub fn beta(&self) -> T {
        self.b * T::LN_10()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        let e: f64 = Exp1.sample(rng);
        self.m0 + T::lit(e / self.beta().as_f64())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig<T> {
    pub seed: u64,
    /// Lead-in before t = 0.
    pub pad_time: T,
    /// Margin added around the bounding box of X.
    pub pad_space: T,
    pub method: SimMethod,
    /// When set, every event carries a magnitude drawn from this law.
    pub magnitudes: Option<GutenbergRichter<T>>,
    /// Hard cap on simulated events (guards against runaway input).
    pub max_events: usize,
}

impl<T: Scalar> SimConfig<T> {
    pub fn new(seed: u64, method: SimMethod) -> Self {
        Self {
            seed,
            pad_time: T::zero(),
            pad_space: T::zero(),
            method,
            magnitudes: None,
            max_events: 10_000_000,
        }
    }

    /// Pads of five temporal and five spatial scales of the kernel.
    pub fn with_default_pads(mut self, model: &IntensityModel<T>) -> Self {
        let (t, s) = default_pads(model);
        self.pad_time = t;
        self.pad_space = s;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.pad_time >= T::zero() && self.pad_time.is_finite()) {
            return Err(Error::param("pad_time", "must be finite and non-negative"));
        }
        if !(self.pad_space >= T::zero() && self.pad_space.is_finite()) {
            return Err(Error::param("pad_space", "must be finite and non-negative"));
        }
        if let Some(gr) = &self.magnitudes {
            if !(gr.b > T::zero() && gr.b.is_finite() && gr.m0.is_finite()) {
                return Err(Error::param("b_value", "must be positive"));
            }
        }
        Ok(())
    }
}

/// Five temporal and five spatial kernel scales (50c and 5√d for Omori).
pub fn default_pads<T: Scalar>(model: &IntensityModel<T>) -> (T, T) {
    let five = T::lit(5.0);
    match &model.triggering {
        None => (T::zero(), T::zero()),
        Some(TriggeringFamily::GaussianExponential { omega, sigma2, .. }) => (five * *omega, five * sigma2.sqrt()),
        Some(TriggeringFamily::EtasPowerLaw { c, d, .. }) => (five * *c * T::lit(10.0), five * d.sqrt()),
        Some(TriggeringFamily::Histogram(h)) => (h.support_end(), h.max_radius()),
    }
}

/// Where a simulated event came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Provenance {
    /// Index of the parent among the raw (unclipped) events.
    pub raw_parent: Option<usize>,
    /// Index of the parent in the clipped catalog, if it survived clipping.
    pub parent: Option<usize>,
    pub generation: u32,
    /// Index of this event among the raw events.
    pub raw_index: usize,
}

impl Provenance {
    pub fn is_background(&self) -> bool {
        self.raw_parent.is_none()
    }
}

#[derive(Clone, Debug)]
pub struct SimResult<T> {
    /// Events in X × [0, T).
    pub catalog: EventCatalog<T>,
    /// One entry per catalog event.
    pub provenance: Vec<Provenance>,
    /// Every simulated event over the padded window, time-ordered.
    pub raw_events: Vec<Event<T>>,
    /// Provenance of the raw events (parents index into `raw_events`).
    pub raw_provenance: Vec<Provenance>,
    pub raw_count: usize,
}

/// CSV with columns `event_index,label,parent,generation,raw_index,raw_parent`.
/// `parent` is empty for background events and for parents that fell
/// outside the observation window; `raw_parent` always names the parent
/// among the raw events.
pub fn write_provenance<T, W: std::io::Write>(w: W, result: &SimResult<T>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["event_index", "label", "parent", "generation", "raw_index", "raw_parent"])?;
    let opt = |v: Option<usize>| v.map_or(String::new(), |j| j.to_string());
    for (i, p) in result.provenance.iter().enumerate() {
        let label = if p.raw_parent.is_some() { "triggered" } else { "background" };
        out.write_record([
            i.to_string(),
            label.to_string(),
            opt(p.parent),
            p.generation.to_string(),
            p.raw_index.to_string(),
            opt(p.raw_parent),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Padded simulation window.
struct Universe<T> {
    rect: Rect<T>,
    t_start: T,
    t_end: T,
}

impl<T: Scalar> Universe<T> {
    fn contains(&self, x: T, y: T, t: T) -> bool {
        t >= self.t_start && t < self.t_end && self.rect.contains(Point::new(x, y))
    }
}

/// Rejection sampler for locations from a background restricted to a
/// rectangle, using per-tile upper bounds.
struct BackgroundSampler<'a, T> {
    background: &'a BackgroundModel<T>,
    tiles: Vec<(Rect<T>, T)>,
    /// Cumulative bound × area over tiles.
    cumulative: Vec<f64>,
}

impl<'a, T: Scalar> BackgroundSampler<'a, T> {
    fn new(background: &'a BackgroundModel<T>, rect: &Rect<T>) -> Self {
        let n = match background {
            BackgroundModel::Constant { .. } => 1,
            _ => 32,
        };
        let mut tiles = Vec::with_capacity(n * n);
        let (w, h) = (rect.width() / T::of_usize(n), rect.height() / T::of_usize(n));
        for iy in 0..n {
            for ix in 0..n {
                let x0 = rect.x_min + w * T::of_usize(ix);
                let y0 = rect.y_min + h * T::of_usize(iy);
                let tile = Rect {
                    x_min: x0,
                    x_max: if ix + 1 == n { rect.x_max } else { x0 + w },
                    y_min: y0,
                    y_max: if iy + 1 == n { rect.y_max } else { y0 + h },
                };
                tiles.push((tile, background.upper_bound_on(&tile)));
            }
        }
        let mut acc = 0.0;
        let cumulative = tiles
            .iter()
            .map(|(r, b)| {
                acc += (b.as_f64()) * r.area().as_f64();
                acc
            })
            .collect();
        Self {
            background,
            tiles,
            cumulative,
        }
    }

    /// ∫ of the tile bounds (dominating rate per unit time).
    fn dominating_mass(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    fn uniform_in<R: Rng + ?Sized>(rect: &Rect<T>, rng: &mut R) -> Point<T> {
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        Point::new(rect.x_min + rect.width() * T::lit(u), rect.y_min + rect.height() * T::lit(v))
    }

    /// One candidate from the dominating measure, accepted with μ/bound.
    fn propose<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Point<T>> {
        let target = rng.random::<f64>() * self.dominating_mass();
        let k = self.cumulative.partition_point(|c| *c <= target).min(self.tiles.len() - 1);
        let (tile, bound) = &self.tiles[k];
        let p = Self::uniform_in(tile, rng);
        let mu = self.background.eval(p);
        let u: f64 = rng.random();
        (u * bound.as_f64() < mu.as_f64()).then_some(p)
    }

    /// Location drawn from the normalized background on the rectangle.
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Point<T>> {
        for _ in 0..1_000_000 {
            if let Some(p) = self.propose(rng) {
                return Ok(p);
            }
        }
        Err(Error::NonConvergence("background location sampler rejected 10^6 candidates".into()))
    }
}

/// Inhomogeneous Poisson events with rate μ(s) on `rect × [t_start, t_end)`,
/// by thinning a dominating homogeneous process.
pub fn simulate_poisson_background<T: Scalar>(
    background: &BackgroundModel<T>,
    rect: &Rect<T>,
    t_start: T,
    t_end: T,
    seed: u64,
) -> Result<Vec<Event<T>>> {
    let mut rng = stream(seed, "background", 0);
    poisson_background_with(background, rect, t_start, t_end, &mut rng)
}

fn poisson_background_with<T: Scalar>(
    background: &BackgroundModel<T>,
    rect: &Rect<T>,
    t_start: T,
    t_end: T,
    rng: &mut StreamRng,
) -> Result<Vec<Event<T>>> {
    let sampler = BackgroundSampler::new(background, rect);
    let duration = (t_end - t_start).as_f64();
    let mean = sampler.dominating_mass() * duration;
    if !(mean > 0.0) {
        return Ok(Vec::new());
    }
    let count = draw_poisson(mean, rng);
    let mut events = Vec::new();
    for _ in 0..count {
        let t = t_start + T::lit(duration * rng.random::<f64>());
        if let Some(p) = sampler.propose(rng) {
            events.push(Event::new(t, p.x, p.y));
        }
    }
    events.sort_by(|a, b| a.t.partial_cmp(&b.t).expect("finite times"));
    Ok(events)
}

fn draw_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let d = Poisson::new(mean).expect("positive finite mean");
    d.sample(rng) as u64
}

/// Expected offspring per event, averaged over the magnitude law when the
/// productivity depends on marks.
pub fn mean_offspring<T: Scalar>(model: &IntensityModel<T>, magnitudes: Option<&GutenbergRichter<T>>) -> Result<T> {
    let Some(g) = &model.triggering else {
        return Ok(T::zero());
    };
    match (g, magnitudes, model.uses_marks) {
        (TriggeringFamily::EtasPowerLaw { alpha, m0, .. }, Some(gr), true) => {
            let beta = gr.beta();
            if *alpha >= beta {
                return Err(Error::Supercritical { m: f64::INFINITY });
            }
            // E[exp(α(M − M0))] for M = gr.m0 + Exp(β).
            let shift = (*alpha * (gr.m0 - *m0)).exp();
            Ok(g.mass(None)? * shift * beta / (beta - *alpha))
        }
        _ => g.mass(None),
    }
}

/// Simulates with the method selected in `config`.
pub fn simulate<T: Scalar>(model: &IntensityModel<T>, domain: &ObservationDomain<T>, config: &SimConfig<T>) -> Result<SimResult<T>> {
    match config.method {
        SimMethod::Cluster => simulate_cluster(model, domain, config),
        SimMethod::Ogata => simulate_ogata(model, domain, config),
    }
}

fn check_subcritical<T: Scalar>(model: &IntensityModel<T>, config: &SimConfig<T>) -> Result<()> {
    model.validate()?;
    config.validate()?;
    let m = mean_offspring(model, config.magnitudes.as_ref())?;
    if !(m < T::one()) {
        return Err(Error::Supercritical { m: m.as_f64() });
    }
    Ok(())
}

fn universe<T: Scalar>(domain: &ObservationDomain<T>, config: &SimConfig<T>) -> Universe<T> {
    Universe {
        rect: domain.bbox().expand(config.pad_space),
        t_start: -config.pad_time,
        t_end: domain.t_end(),
    }
}

const MAX_GENERATIONS: u32 = 100_000;

/// Cluster (branching) simulation: background immigrants, then Poisson
/// numbers of offspring per event, generation by generation.
pub fn simulate_cluster<T: Scalar>(model: &IntensityModel<T>, domain: &ObservationDomain<T>, config: &SimConfig<T>) -> Result<SimResult<T>> {
    check_subcritical(model, config)?;
    let world = universe(domain, config);
    let mut rng = stream(config.seed, "background", 0);
    let mut events = poisson_background_with(&model.background, &world.rect, world.t_start, world.t_end, &mut rng)?;
    if let Some(gr) = &config.magnitudes {
        let mut mrng = stream(config.seed, "background-marks", 0);
        for e in events.iter_mut() {
            e.mark = Some(gr.sample(&mut mrng));
        }
    }
    let mut origin: Vec<(Option<usize>, u32)> = vec![(None, 0); events.len()];
    if let Some(g) = &model.triggering {
        let mut frontier = 0..events.len();
        let mut generation = 0u32;
        while !frontier.is_empty() {
            generation += 1;
            assert!(generation < MAX_GENERATIONS, "runaway branching in a subcritical model");
            let parents: Vec<(usize, Event<T>)> = frontier.clone().map(|i| (i, events[i])).collect();
            let children: Vec<Vec<Event<T>>> = parents
                .par_iter()
                .map(|(i, parent)| {
                    let mut rng = stream(config.seed, "offspring", *i as u64);
                    let mark = model.parent_mark(parent);
                    let mean = g.mass(mark).map(|m| m.as_f64()).unwrap_or(0.0);
                    let count = draw_poisson(mean, &mut rng);
                    let mut out = Vec::new();
                    for _ in 0..count {
                        let (dx, dy, dt) = g.sample_offspring(&mut rng);
                        let (x, y, t) = (parent.x + dx, parent.y + dy, parent.t + dt);
                        let child_mark = config.magnitudes.as_ref().map(|gr| gr.sample(&mut rng));
                        if world.contains(x, y, t) {
                            out.push(Event { t, x, y, mark: child_mark });
                        }
                    }
                    out
                })
                .collect();
            let start = events.len();
            for ((i, _), kids) in parents.iter().zip(children) {
                for kid in kids {
                    events.push(kid);
                    origin.push((Some(*i), generation));
                }
            }
            if events.len() > config.max_events {
                return Err(Error::NonConvergence(format!("simulation exceeded {} events", config.max_events)));
            }
            frontier = start..events.len();
        }
    }
    Ok(finish(events, origin, domain))
}

/// Time-orders raw events, remaps parents and clips to X × [0, T).
fn finish<T: Scalar>(events: Vec<Event<T>>, origin: Vec<(Option<usize>, u32)>, domain: &ObservationDomain<T>) -> SimResult<T> {
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by(|&a, &b| {
        events[a]
            .t
            .partial_cmp(&events[b].t)
            .expect("finite times")
            .then(a.cmp(&b))
    });
    let mut rank = vec![0usize; events.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let raw_events: Vec<Event<T>> = order.iter().map(|&i| events[i]).collect();
    let mut raw_provenance: Vec<Provenance> = order
        .iter()
        .enumerate()
        .map(|(r, &i)| Provenance {
            raw_parent: origin[i].0.map(|p| rank[p]),
            parent: None,
            generation: origin[i].1,
            raw_index: r,
        })
        .collect();
    let mut catalog_index = vec![None; raw_events.len()];
    let mut kept = Vec::new();
    for (r, e) in raw_events.iter().enumerate() {
        if domain.contains_event(e) {
            catalog_index[r] = Some(kept.len());
            kept.push(r);
        }
    }
    for p in raw_provenance.iter_mut() {
        p.parent = p.raw_parent.and_then(|q| catalog_index[q]);
    }
    let provenance = kept.iter().map(|&r| raw_provenance[r]).collect();
    let catalog_events: Vec<Event<T>> = kept.iter().map(|&r| raw_events[r]).collect();
    let raw_count = raw_events.len();
    SimResult {
        catalog: EventCatalog::new(catalog_events),
        provenance,
        raw_events,
        raw_provenance,
        raw_count,
    }
}

/// Sequential thinning with the space-integrated intensity
/// λ_X(t) = ν₀ + Σ_j h_j(t − t_j), where ν₀ = ∫μ over the padded rectangle
/// and h_j is the temporal density of event j's offspring. Accepted times
/// are attributed to the background or to a parent in proportion to the
/// terms, and the location is drawn from the chosen component; locations
/// outside the padded rectangle are discarded.
pub fn simulate_ogata<T: Scalar>(model: &IntensityModel<T>, domain: &ObservationDomain<T>, config: &SimConfig<T>) -> Result<SimResult<T>> {
    check_subcritical(model, config)?;
    let world = universe(domain, config);
    let mut rng = stream(config.seed, "ogata", 0);
    let sampler = BackgroundSampler::new(&model.background, &world.rect);
    let nu0 = model
        .background
        .integral(SpatialRegion::Rect(&world.rect), world.rect.area(), T::lit(1e-10))?
        .as_f64();
    let mut events: Vec<Event<T>> = Vec::new();
    let mut origin: Vec<(Option<usize>, u32)> = Vec::new();
    // Gaussian–exponential kernels admit an O(1) recursive update.
    let recursive_omega = match &model.triggering {
        Some(TriggeringFamily::GaussianExponential { omega, .. }) => Some(omega.as_f64()),
        _ => None,
    };
    let support = model.triggering.as_ref().and_then(|g| g.support_end()).map(|s| s.as_f64());
    let mut excitation = 0.0f64;
    let mut t = world.t_start.as_f64();
    let t_end = world.t_end.as_f64();
    let mut oldest = 0usize;
    let mut bound = nu0;
    let mut steps: u64 = 0;
    loop {
        steps += 1;
        if steps > 1_000_000_000 {
            return Err(Error::NonConvergence("thinning loop stalled".into()));
        }
        if !(bound > 0.0) {
            break;
        }
        let w: f64 = Exp::new(bound).expect("positive rate").sample(&mut rng);
        if let Some(omega) = recursive_omega {
            excitation *= (-w / omega).exp();
        }
        t += w;
        if t >= t_end {
            break;
        }
        let tt = T::lit(t);
        if let Some(s) = support {
            while oldest < events.len() && t - events[oldest].t.as_f64() >= s {
                oldest += 1;
            }
        }
        let contributions: Vec<f64> = match (&model.triggering, recursive_omega) {
            (Some(_), Some(_)) => Vec::new(),
            (Some(g), None) => events[oldest..]
                .iter()
                .map(|e| g.temporal_density(tt - e.t, model.parent_mark(e)).as_f64())
                .collect(),
            (None, _) => Vec::new(),
        };
        let excited = match recursive_omega {
            Some(_) => excitation,
            None => contributions.iter().sum(),
        };
        let lambda = nu0 + excited;
        let u: f64 = rng.random();
        if u * bound <= lambda {
            // Attribute the point.
            let pick = rng.random::<f64>() * lambda;
            let triggering = model.triggering.as_ref().filter(|_| pick >= nu0);
            let (parent, location) = if let Some(g) = triggering {
                let j = match recursive_omega {
                    Some(omega) => {
                        // Recompute the individual terms only when a parent is needed.
                        let theta = g.productivity(None).as_f64();
                        let mut target = pick - nu0;
                        let mut chosen = events.len() - 1;
                        for (k, e) in events.iter().enumerate().rev() {
                            let v = theta / omega * (-(t - e.t.as_f64()) / omega).exp();
                            if target < v {
                                chosen = k;
                                break;
                            }
                            target -= v;
                        }
                        chosen
                    }
                    None => {
                        let mut target = pick - nu0;
                        let mut chosen = events.len() - 1;
                        for (k, v) in contributions.iter().enumerate() {
                            if target < *v {
                                chosen = oldest + k;
                                break;
                            }
                            target -= v;
                        }
                        chosen
                    }
                };
                let p = events[j];
                let (dx, dy) = sample_spatial_displacement(g, tt - p.t, &mut rng);
                (Some(j), Some(Point::new(p.x + dx, p.y + dy)))
            } else {
                (None, Some(sampler.sample(&mut rng)?))
            };
            let mark = config.magnitudes.as_ref().map(|gr| gr.sample(&mut rng));
            if let Some(loc) = location {
                if world.rect.contains(loc) {
                    let generation = parent.map_or(0, |j| origin[j].1 + 1);
                    events.push(Event { t: tt, x: loc.x, y: loc.y, mark });
                    origin.push((parent, generation));
                    if events.len() > config.max_events {
                        return Err(Error::NonConvergence(format!("simulation exceeded {} events", config.max_events)));
                    }
                    if recursive_omega.is_some() {
                        let g = model.triggering.as_ref().expect("recursive case has triggering");
                        excitation += g.temporal_bound(T::zero(), None).as_f64();
                    }
                }
            }
        }
        // Refresh the bound from the current time.
        bound = nu0
            + match (&model.triggering, recursive_omega) {
                (Some(_), Some(_)) => excitation,
                (Some(g), None) => events[oldest..]
                    .iter()
                    .map(|e| g.temporal_bound(tt - e.t, model.parent_mark(e)).as_f64())
                    .sum(),
                (None, _) => 0.0,
            };
    }
    Ok(finish(events, origin, domain))
}

/// Spatial offset of an offspring born at `lag` after its parent.
fn sample_spatial_displacement<T: Scalar, R: Rng + ?Sized>(g: &TriggeringFamily<T>, lag: T, rng: &mut R) -> (T, T) {
    match g {
        TriggeringFamily::Histogram(h) => {
            // Spatial law depends on the time bin containing the lag.
            let k = h.time_edges().partition_point(|e| *e <= lag).saturating_sub(1).min(h.n_time() - 1);
            let weights: Vec<f64> = (0..h.n_radius()).map(|l| (h.value(k, l) * h.annulus_area(l)).as_f64()).collect();
            let total: f64 = weights.iter().sum();
            let mut target = rng.random::<f64>() * total;
            let mut l = weights.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if target < *w {
                    l = i;
                    break;
                }
                target -= w;
            }
            let (r0, r1) = (h.radius_edges()[l].as_f64(), h.radius_edges()[l + 1].as_f64());
            let r = (r0 * r0 + (r1 * r1 - r0 * r0) * rng.random::<f64>()).sqrt();
            let phi = 2.0 * std::f64::consts::PI * rng.random::<f64>();
            (T::lit(r * phi.cos()), T::lit(r * phi.sin()))
        }
        // Separable kernels: the spatial part does not depend on the lag.
        _ => {
            let (dx, dy, _) = g.sample_offspring(rng);
            (dx, dy)
        }
    }
}
