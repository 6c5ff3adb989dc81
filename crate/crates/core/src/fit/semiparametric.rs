use crate::catalog::{EventCatalog, ObservationDomain};
use crate::error::{Error, Result};
use crate::fit::{em_fit, EmConfig, FitResult};
use crate::geometry::Point;
use crate::intensity::{BackgroundModel, IntensityModel, WeightedKde};
use crate::scalar::Scalar;

/// Starting background for the alternating kernel/EM iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BackgroundInit {
    /// μ̂ ≡ 1 in the data's units.
    #[default]
    Unit,
    /// μ̂ ≡ n / (|X| T).
    DataScaled,
}

/// Kernel settings for the semiparametric background.
#[derive(Clone, Debug)]
pub struct KernelConfig<T> {
    /// Bandwidth of each event is the radius of the smallest disk around it
    /// holding this many other events.
    pub n_neighbors: usize,
    /// Floor on every bandwidth.
    pub min_bandwidth: T,
    pub init: BackgroundInit,
    /// The background change is measured on a `grid_size × grid_size` grid.
    pub grid_size: usize,
    /// Largest allowed change of μ̂ on the grid; `None` uses 10⁻³ n/(|X|T).
    pub tol: Option<T>,
    pub max_outer: usize,
    /// Renormalize each kernel to unit mass inside X.
    pub edge_correction: bool,
}

impl<T: Scalar> Default for KernelConfig<T> {
    fn default() -> Self {
        Self {
            n_neighbors: 25,
            min_bandwidth: T::lit(1e-6),
            init: BackgroundInit::Unit,
            grid_size: 50,
            tol: None,
            max_outer: 50,
            edge_correction: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SemiparametricFit<T> {
    pub fit: FitResult<T>,
    pub background: BackgroundModel<T>,
    pub outer_iterations: usize,
    pub converged: bool,
    /// max |μ̂_new − μ̂_old| over the grid, per outer iteration.
    pub background_changes: Vec<T>,
}

/// Distance from each point to its `n_neighbors`-th nearest other point,
/// floored at `floor`.
pub fn adaptive_bandwidths<T: Scalar>(points: &[Point<T>], n_neighbors: usize, floor: T) -> Result<Vec<T>> {
    if !(10..=100).contains(&n_neighbors) {
        return Err(Error::param("n_neighbors", format!("must lie in [10, 100], got {n_neighbors}")));
    }
    if points.len() <= n_neighbors {
        return Err(Error::InvalidInput(format!(
            "{} events are too few for {n_neighbors} neighbours",
            points.len()
        )));
    }
    use rayon::prelude::*;
    Ok(points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut d2: Vec<T> = points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| p.dist2(*q))
                .collect();
            let (_, kth, _) = d2.select_nth_unstable_by(n_neighbors - 1, |a, b| a.partial_cmp(b).expect("finite distance"));
            kth.sqrt().max(floor)
        })
        .collect())
}

/// Grid of evaluation points (cell centres of a `size × size` grid over the
/// bounding box that fall inside X).
pub(crate) fn evaluation_grid<T: Scalar>(domain: &ObservationDomain<T>, size: usize) -> Vec<Point<T>> {
    let b = domain.bbox();
    let n = T::of_usize(size);
    let mut out = Vec::with_capacity(size * size);
    for iy in 0..size {
        for ix in 0..size {
            let x = b.x_min + b.width() * (T::of_usize(ix) + T::half()) / n;
            let y = b.y_min + b.height() * (T::of_usize(iy) + T::half()) / n;
            let p = Point::new(x, y);
            if domain.contains(p) {
                out.push(p);
            }
        }
    }
    out
}

/// Alternates EM for the triggering parameters under a fixed background with
/// a kernel re-estimate of the background weighted by Pr(u_i = 0).
pub fn semiparametric_fit<T: Scalar>(
    init: &IntensityModel<T>,
    catalog: &EventCatalog<T>,
    domain: &ObservationDomain<T>,
    kernel: &KernelConfig<T>,
    em: &EmConfig<T>,
) -> Result<SemiparametricFit<T>> {
    let n = catalog.len();
    let points: Vec<Point<T>> = catalog.events().iter().map(|e| e.location()).collect();
    let bandwidths = adaptive_bandwidths(&points, kernel.n_neighbors, kernel.min_bandwidth)?;
    let rate = T::of_usize(n) / domain.volume();
    let tol = kernel.tol.unwrap_or(T::lit(1e-3) * rate);
    let grid = evaluation_grid(domain, kernel.grid_size);

    let mut background = BackgroundModel::constant(match kernel.init {
        BackgroundInit::Unit => T::one(),
        BackgroundInit::DataScaled => rate,
    })?;
    let em = EmConfig {
        fix_background: true,
        ..em.clone()
    };
    let mut changes = Vec::new();
    let mut model = init.clone();
    let mut converged = false;
    let mut outer = 0;
    let fit = loop {
        model.background = background.clone();
        let fit = em_fit(&model, catalog, domain, &em)?;
        outer += 1;
        let weights = fit.branching.background_probs().to_vec();
        let mut kde = WeightedKde::new(points.clone(), weights, bandwidths.clone(), domain.t_end())?;
        if kernel.edge_correction {
            kde = kde.with_edge_correction(domain.ring(), T::lit(1e-9))?;
        }
        let next = BackgroundModel::WeightedKde(kde);
        let change = grid
            .iter()
            .map(|p| (next.eval(*p) - background.eval(*p)).abs())
            .fold(T::zero(), T::max);
        changes.push(change);
        background = next;
        // Carry the triggering estimate into the next round.
        model.triggering = fit.model.triggering.clone();
        if change <= tol {
            converged = true;
            break fit;
        }
        if outer >= kernel.max_outer {
            break fit;
        }
    };
    Ok(SemiparametricFit {
        fit,
        background,
        outer_iterations: outer,
        converged,
        background_changes: changes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neighbour_count_bounds_enforced() {
        let pts: Vec<Point<f64>> = (0..30).map(|i| Point::new(i as f64, 0.0)).collect();
        assert!(adaptive_bandwidths(&pts, 9, 0.0).is_err());
        assert!(adaptive_bandwidths(&pts, 101, 0.0).is_err());
        assert!(adaptive_bandwidths(&pts[..10], 10, 0.0).is_err());
        let h = adaptive_bandwidths(&pts, 10, 0.0).unwrap();
        // On a line with unit spacing the 10th neighbour of an end point is 10 away.
        assert_eq!(h[0], 10.0);
        assert_eq!(h[15], 5.0);
        let h = adaptive_bandwidths(&pts, 10, 6.0).unwrap();
        assert_eq!(h[15], 6.0);
    }

    #[test]
    fn grid_points_lie_inside() {
        let d = ObservationDomain::polygon(
            vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0)],
            1.0,
        )
        .unwrap();
        let g = evaluation_grid(&d, 50);
        assert!(g.iter().all(|p| d.contains(*p)));
        assert!(g.len() > 1100 && g.len() < 1300);
    }
}
