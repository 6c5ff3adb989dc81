//! Stochastic declustering and histogram (model-independent) estimation of
//! the triggering function.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::catalog::{EventCatalog, ObservationDomain};
use crate::error::{Error, Result};
use crate::fit::{em_fit, BranchingMatrix, EmConfig, FitResult};
use crate::intensity::{BackgroundModel, GridField, HistogramKernel, IntensityModel, TriggeringFamily};
use crate::rng::stream;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Label {
    Background,
    Triggered,
}

impl Label {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Background => "background",
            Self::Triggered => "triggered",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Declustering {
    pub labels: Vec<Label>,
    pub seed: u64,
}

impl Declustering {
    pub fn background_indices(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Label::Background)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn n_background(&self) -> usize {
        self.labels.iter().filter(|l| **l == Label::Background).count()
    }
}

/// One sampled branching structure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FamilyTree {
    /// `None` for background events, otherwise an earlier event index.
    pub parent: Vec<Option<usize>>,
    pub generation: Vec<u32>,
}

impl FamilyTree {
    /// Builds generations from parent links; parents must precede children.
    pub fn from_parents(parent: Vec<Option<usize>>) -> Result<Self> {
        let mut generation = vec![0u32; parent.len()];
        for (i, p) in parent.iter().enumerate() {
            if let Some(j) = *p {
                if j >= i {
                    return Err(Error::InvalidInput(format!("event {i} cannot descend from event {j}")));
                }
                generation[i] = generation[j] + 1;
            }
        }
        Ok(Self { parent, generation })
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.parent
            .iter()
            .map(|p| if p.is_some() { Label::Triggered } else { Label::Background })
            .collect()
    }

    /// Number of events in each background event's cluster, keyed by root.
    pub fn cluster_sizes(&self) -> Vec<(usize, usize)> {
        let mut root = vec![0usize; self.len()];
        let mut size = vec![0usize; self.len()];
        for i in 0..self.len() {
            root[i] = match self.parent[i] {
                None => i,
                Some(j) => root[j],
            };
            size[root[i]] += 1;
        }
        (0..self.len())
            .filter(|&i| self.parent[i].is_none())
            .map(|i| (i, size[i]))
            .collect()
    }
}

fn check_rows<T: Scalar>(branching: &BranchingMatrix<T>, catalog: &EventCatalog<T>) -> Result<()> {
    if branching.len() != catalog.len() {
        return Err(Error::InvalidInput(format!(
            "branching matrix has {} rows for {} events",
            branching.len(),
            catalog.len()
        )));
    }
    Ok(())
}

/// Keeps each event as background with probability Pr(u_i = 0).
pub fn thin_to_background<T: Scalar>(branching: &BranchingMatrix<T>, catalog: &EventCatalog<T>, seed: u64) -> Result<Declustering> {
    check_rows(branching, catalog)?;
    let labels = (0..branching.len())
        .into_par_iter()
        .map(|i| {
            let u: f64 = stream(seed, "decluster", i as u64).random();
            if u < branching.background(i).as_f64() {
                Label::Background
            } else {
                Label::Triggered
            }
        })
        .collect();
    Ok(Declustering { labels, seed })
}

/// Draws each event's parent independently from its row: background when
/// R < Pr(u_i = 0), otherwise the earliest parent at which the cumulative
/// probability exceeds R.
pub fn sample_family_tree<T: Scalar>(branching: &BranchingMatrix<T>, catalog: &EventCatalog<T>, seed: u64) -> Result<FamilyTree> {
    check_rows(branching, catalog)?;
    let parent: Vec<Option<usize>> = (0..branching.len())
        .into_par_iter()
        .map(|i| {
            let r: f64 = stream(seed, "family-tree", i as u64).random();
            let mut cumulative = branching.background(i).as_f64();
            if r < cumulative {
                return None;
            }
            // Rows are stored latest parent first; accumulate from the earliest.
            let (parents, probs) = branching.row(i);
            let mut last = None;
            for (j, p) in parents.iter().zip(probs).rev() {
                if *p > T::zero() {
                    last = Some(*j);
                }
                cumulative += p.as_f64();
                if r < cumulative {
                    return Some(*j);
                }
            }
            // Rounding left R above the row total.
            last
        })
        .collect();
    let tree = FamilyTree::from_parents(parent)?;
    debug_assert!(tree
        .parent
        .iter()
        .enumerate()
        .all(|(i, p)| p.is_none_or(|j| catalog.get(j).t <= catalog.get(i).t)));
    Ok(tree)
}

/// CSV with columns `event_index,label`.
pub fn write_declustering<W: Write>(w: W, d: &Declustering) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["event_index", "label"])?;
    for (i, l) in d.labels.iter().enumerate() {
        out.write_record([i.to_string(), l.name().to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// CSV with columns `event_index,label,parent,generation`; the parent
/// column is empty for background events.
pub fn write_family_tree<W: Write>(w: W, tree: &FamilyTree) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["event_index", "label", "parent", "generation"])?;
    for i in 0..tree.len() {
        let label = if tree.parent[i].is_some() { "triggered" } else { "background" };
        out.write_record([
            i.to_string(),
            label.to_string(),
            tree.parent[i].map_or(String::new(), |j| j.to_string()),
            tree.generation[i].to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Background form for histogram estimation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MisdBackground {
    #[default]
    Constant,
    /// Piecewise constant on an `nx × ny` grid over the bounding box.
    Grid { nx: usize, ny: usize },
}

#[derive(Clone, Debug)]
pub struct MisdConfig<T> {
    /// `None` picks logarithmic edges from the data.
    pub time_edges: Option<Vec<T>>,
    pub radius_edges: Option<Vec<T>>,
    pub n_time_bins: usize,
    pub n_radius_bins: usize,
    pub background: MisdBackground,
    pub em: EmConfig<T>,
}

impl<T: Scalar> Default for MisdConfig<T> {
    fn default() -> Self {
        Self {
            time_edges: None,
            radius_edges: None,
            n_time_bins: 10,
            n_radius_bins: 8,
            background: MisdBackground::Constant,
            em: EmConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MisdFit<T> {
    pub histogram: HistogramKernel<T>,
    pub background: BackgroundModel<T>,
    pub fit: FitResult<T>,
    /// Cells with no assigned pair probability, as (time bin, radius bin).
    pub empty_cells: Vec<(usize, usize)>,
    /// Lag beyond which the histogram is zero by construction.
    pub truncated_at: T,
}

impl<T: Scalar> MisdFit<T> {
    pub fn branching(&self) -> &BranchingMatrix<T> {
        &self.fit.branching
    }

    /// Σ cell value × cell measure.
    pub fn total_mass(&self) -> T {
        let h = &self.histogram;
        (0..h.n_time())
            .flat_map(|k| (0..h.n_radius()).map(move |l| (k, l)))
            .map(|(k, l)| h.value(k, l) * h.cell_measure(k, l))
            .sum()
    }
}

/// Nearest-rank quantile of sorted data.
fn quantile_sorted<T: Scalar>(sorted: &[T], q: f64) -> T {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// `bins` edges: zero, then log-spaced from the 1st to the 99th percentile.
fn log_edges<T: Scalar>(mut values: Vec<T>, bins: usize, name: &str) -> Result<Vec<T>> {
    values.retain(|v| *v > T::zero());
    if values.len() < 2 || bins < 1 {
        return Err(Error::InvalidInput(format!("too few positive {name} for default bins")));
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let lo = quantile_sorted(&values, 0.01);
    let hi = quantile_sorted(&values, 0.99);
    if !(hi > lo) {
        return Err(Error::InvalidInput(format!("{name} percentiles coincide")));
    }
    let mut edges = vec![T::zero()];
    if bins == 1 {
        edges.push(hi);
        return Ok(edges);
    }
    let (a, b) = (lo.ln(), hi.ln());
    for k in 0..bins {
        edges.push((a + (b - a) * T::of_usize(k) / T::of_usize(bins - 1)).exp());
    }
    Ok(edges)
}

/// Data-scaled logarithmic time and radius edges from pairwise lags and
/// distances (at most about 2·10⁶ pairs, taken with a fixed stride).
pub fn default_bins<T: Scalar>(catalog: &EventCatalog<T>, n_time: usize, n_radius: usize) -> Result<(Vec<T>, Vec<T>)> {
    let ev = catalog.events();
    let n = ev.len();
    if n < 3 {
        return Err(Error::InvalidInput("need at least three events for default bins".into()));
    }
    let total_pairs = n * (n - 1) / 2;
    let stride = total_pairs.div_ceil(2_000_000).max(1);
    let mut lags = Vec::new();
    let mut dists = Vec::new();
    let mut k = 0usize;
    for i in 1..n {
        for j in 0..i {
            if k.is_multiple_of(stride) {
                lags.push(ev[i].t - ev[j].t);
                dists.push(ev[i].location().dist(ev[j].location()));
            }
            k += 1;
        }
    }
    Ok((log_edges(lags, n_time, "lags")?, log_edges(dists, n_radius, "distances")?))
}

/// EM with a piecewise-constant triggering function on time bins × radial
/// annuli and a constant or gridded background.
pub fn misd_fit<T: Scalar>(catalog: &EventCatalog<T>, domain: &ObservationDomain<T>, config: &MisdConfig<T>) -> Result<MisdFit<T>> {
    if catalog.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    let (time_edges, radius_edges) = match (&config.time_edges, &config.radius_edges) {
        (Some(t), Some(r)) => (t.clone(), r.clone()),
        (t, r) => {
            let (dt, dr) = default_bins(catalog, config.n_time_bins, config.n_radius_bins)?;
            (t.clone().unwrap_or(dt), r.clone().unwrap_or(dr))
        }
    };
    let mut histogram = HistogramKernel::zeros(time_edges, radius_edges)?;
    // Start with total mass one half spread evenly over the cells.
    let n_cells = histogram.n_time() * histogram.n_radius();
    let init: Vec<T> = (0..histogram.n_time())
        .flat_map(|k| (0..histogram.n_radius()).map(move |l| (k, l)))
        .map(|(k, l)| T::half() / (T::of_usize(n_cells) * histogram.cell_measure(k, l)))
        .collect();
    histogram.set_values(init);

    let rate = T::of_usize(catalog.len()) / domain.volume() * T::half();
    let background = match config.background {
        MisdBackground::Constant => BackgroundModel::constant(rate)?,
        MisdBackground::Grid { nx, ny } => BackgroundModel::GridField(GridField::constant(domain.bbox(), nx, ny, rate)?),
    };
    let model = IntensityModel::new(background, Some(TriggeringFamily::Histogram(histogram)))?;
    let fit = em_fit(&model, catalog, domain, &config.em)?;
    let TriggeringFamily::Histogram(histogram) = fit.model.triggering.clone().expect("histogram retained") else {
        unreachable!("EM preserves the family")
    };
    let empty_cells = (0..histogram.n_time())
        .flat_map(|k| (0..histogram.n_radius()).map(move |l| (k, l)))
        .filter(|&(k, l)| histogram.value(k, l) <= T::zero())
        .collect();
    Ok(MisdFit {
        truncated_at: histogram.support_end(),
        background: fit.model.background.clone(),
        histogram,
        fit,
        empty_cells,
    })
}
