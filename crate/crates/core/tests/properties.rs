//! Property tests for the structural invariants of each module.

use proptest::prelude::*;
use rand::Rng;
use sepp::catalog::{read_catalog, write_catalog, Event, EventCatalog, ObservationDomain, OutsidePolicy};
use sepp::decluster::{misd_fit, sample_family_tree, thin_to_background, Label, MisdConfig};
use sepp::diagnostics::{k_function, voronoi_cells, EdgeCorrection};
use sepp::fit::{branching_probabilities, em_fit, log_likelihood, EmConfig};
use sepp::geometry::{signed_area, Point};
use sepp::inference::{asymptotic_covariance, parametric_bootstrap, BootstrapConfig, GradientMethod};
use sepp::intensity::{BackgroundModel, HistogramKernel, IntegrationMethod, IntensityModel, TriggeringFamily};
use sepp::rng::stream;
use sepp::simulate::{simulate, SimConfig, SimMethod};

fn ge(nu: f64, theta: f64, omega: f64, sigma2: f64) -> IntensityModel<f64> {
    IntensityModel::new(
        BackgroundModel::constant(nu).unwrap(),
        Some(TriggeringFamily::gaussian_exponential(theta, omega, sigma2).unwrap()),
    )
    .unwrap()
}

fn histogram_family() -> TriggeringFamily<f64> {
    TriggeringFamily::Histogram(HistogramKernel::new(vec![0.0, 0.5, 2.0], vec![0.0, 0.05, 0.15], vec![3.0, 1.0, 0.4, 0.1]).unwrap())
}

fn etas_family() -> TriggeringFamily<f64> {
    TriggeringFamily::etas(0.05, 0.8, 0.05, 2.2, 0.01, 2.5, 3.0).unwrap()
}

fn family() -> impl Strategy<Value = TriggeringFamily<f64>> {
    prop_oneof![
        (0.0..0.95f64, 0.05..5.0f64, 1e-4..0.1f64).prop_map(|(t, o, s)| TriggeringFamily::gaussian_exponential(t, o, s).unwrap()),
        (0.0..0.5f64, 0.0..2.0f64, 1e-3..1.0f64, 1.05..3.0f64, 1e-4..0.1f64, 1.05..3.0f64)
            .prop_map(|(k, a, c, p, d, q)| TriggeringFamily::etas(k, a, c, p, d, q, 3.0).unwrap()),
        proptest::collection::vec(0.0..5.0f64, 4).prop_map(|v| TriggeringFamily::Histogram(
            HistogramKernel::new(vec![0.0, 0.5, 2.0], vec![0.0, 0.05, 0.15], v).unwrap()
        )),
    ]
}

/// Events in the unit square with strictly increasing times in [t0, t1).
fn events_in(n: std::ops::Range<usize>, t0: f64, t1: f64) -> impl Strategy<Value = Vec<Event<f64>>> {
    proptest::collection::vec((0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64), n).prop_map(move |rows| {
        let mut ts: Vec<f64> = rows.iter().map(|r| t0 + (t1 - t0) * r.0).collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts.iter().zip(&rows).map(|(t, r)| Event::new(*t, r.1, r.2)).collect()
    })
}

fn rounded(v: f64) -> f64 {
    sepp::scalar::format_significant(v, 12).parse().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn catalog_round_trips_at_twelve_digits(rows in proptest::collection::vec((0.0..10.0f64, -1.0..1.0f64, -1.0..1.0f64), 1..40)) {
        let domain = ObservationDomain::rectangle(-1.0, 1.0, -1.0, 1.0, 10.0).unwrap();
        let catalog = EventCatalog::new(rows.iter().map(|r| Event::new(r.0, r.1, r.2)).collect());
        let mut buf = Vec::new();
        write_catalog(&mut buf, &catalog).unwrap();
        let back = read_catalog(buf.as_slice(), &domain, OutsidePolicy::Strict).unwrap().catalog;
        prop_assert_eq!(back.len(), catalog.len());
        for (a, b) in catalog.events().iter().zip(back.events()) {
            prop_assert_eq!((rounded(a.t), rounded(a.x), rounded(a.y)), (b.t, b.x, b.y));
        }
    }

    #[test]
    fn polygon_area_matches_fan_triangulation(angles in proptest::collection::vec(0.0..std::f64::consts::TAU, 3..12), radii in proptest::collection::vec(0.2..2.0f64, 12)) {
        let mut a = angles.clone();
        a.sort_by(f64::total_cmp);
        a.dedup_by(|x, y| (*x - *y).abs() < 1e-3);
        prop_assume!(a.len() >= 3);
        // Star-shaped around the origin, hence simple.
        let vertices: Vec<Point<f64>> = a.iter().zip(&radii).map(|(t, r)| Point::new(r * t.cos(), r * t.sin())).collect();
        let Ok(domain) = ObservationDomain::polygon(vertices.clone(), 1.0) else { return Ok(()); };
        let n = vertices.len();
        let fan: f64 = (0..n)
            .map(|i| {
                let (p, q) = (vertices[i], vertices[(i + 1) % n]);
                0.5 * (p.x * q.y - q.x * p.y)
            })
            .sum();
        prop_assert!((domain.area() - fan.abs()).abs() <= 1e-12 * fan.abs().max(1.0));
    }

    #[test]
    fn drop_policy_keeps_exactly_the_inside_rows(rows in proptest::collection::vec((0.0..2.0f64, -0.5..1.5f64, -0.5..1.5f64), 1..60)) {
        let domain = ObservationDomain::unit_square(1.0).unwrap();
        let mut text = String::from("t,x,y\n");
        for r in &rows {
            text.push_str(&format!("{},{},{}\n", r.0, r.1, r.2));
        }
        let inside: Vec<(f64, f64, f64)> = rows.iter().copied().filter(|r| domain.contains_event(&Event::new(r.0, r.1, r.2))).collect();
        let loaded = read_catalog(text.as_bytes(), &domain, OutsidePolicy::Drop);
        if inside.is_empty() {
            prop_assert!(matches!(loaded, Err(sepp::Error::EmptyCatalog)), "expected an empty-catalog error");
            return Ok(());
        }
        let loaded = loaded.unwrap();
        prop_assert_eq!(loaded.catalog.len() + loaded.dropped, rows.len());
        let mut got: Vec<(f64, f64, f64)> = loaded.catalog.events().iter().map(|e| (e.t, e.x, e.y)).collect();
        let mut want = inside;
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        prop_assert_eq!(got, want);
    }

    #[test]
    fn triggering_is_causal(g in family(), dx in -1.0..1.0f64, dy in -1.0..1.0f64, dt in -10.0..0.0f64, mark in 3.0..6.0f64) {
        prop_assert_eq!(g.eval(dx, dy, dt, Some(mark)), 0.0);
        prop_assert_eq!(g.eval(dx, dy, 0.0, None), 0.0);
    }

    #[test]
    fn history_sum_is_additive(a in events_in(1..8, 0.0, 1.0), b in events_in(1..8, 1.0, 2.0), x in 0.0..1.0f64, y in 0.0..1.0f64, t in 2.0..3.0f64, g in family()) {
        let model = IntensityModel::new(BackgroundModel::constant(1.5).unwrap(), Some(g)).unwrap().with_marks(false);
        let s = Point::new(x, y);
        let mut all = a.clone();
        all.extend(b.iter().cloned());
        let joint = model.eval(&EventCatalog::new(all), s, t);
        let part_a = model.eval(&EventCatalog::new(a), s, t) - 1.5;
        let part_b = model.eval(&EventCatalog::new(b), s, t) - 1.5;
        prop_assert!((joint - (1.5 + part_a + part_b)).abs() <= 1e-12 * joint.abs().max(1.0));
    }

    #[test]
    fn schoenberg_integral_bounds_cubature(ev in events_in(2..12, 0.0, 4.0), theta in 0.05..0.9f64, omega in 0.1..3.0f64, sigma2 in 1e-3..0.05f64) {
        let model = ge(2.0, theta, omega, sigma2);
        let domain = ObservationDomain::unit_square(4.0).unwrap();
        let catalog = EventCatalog::new(ev);
        let tol = 1e-9;
        let exact = log_likelihood(&model, &catalog, &domain, &IntegrationMethod::Cubature { tol }).unwrap();
        let bound = log_likelihood(&model, &catalog, &domain, &IntegrationMethod::Schoenberg { truncate_time: false }).unwrap();
        // A larger integral means a smaller log-likelihood.
        prop_assert!(bound <= exact + tol * catalog.len() as f64);
    }

    #[test]
    fn branching_rows_are_stochastic(ev in events_in(1..40, 0.0, 5.0), g in family()) {
        let model = IntensityModel::new(BackgroundModel::constant(3.0).unwrap(), Some(g)).unwrap().with_marks(false);
        let catalog = EventCatalog::new(ev);
        let b = branching_probabilities(&model, &catalog).unwrap();
        for i in 0..b.len() {
            prop_assert!((b.row_sum(i) - 1.0).abs() <= 1e-10);
            let (parents, _) = b.row(i);
            prop_assert!(parents.iter().all(|&j| j < i));
        }
    }

    #[test]
    fn family_trees_respect_time(ev in events_in(2..40, 0.0, 5.0), seed in any::<u64>()) {
        let model = ge(2.0, 0.6, 0.5, 0.01);
        let catalog = EventCatalog::new(ev);
        let b = branching_probabilities(&model, &catalog).unwrap();
        let tree = sample_family_tree(&b, &catalog, seed).unwrap();
        for (i, p) in tree.parent.iter().enumerate() {
            match p {
                None => prop_assert_eq!(tree.generation[i], 0),
                Some(j) => {
                    prop_assert!(catalog.get(*j).t < catalog.get(i).t);
                    prop_assert_eq!(tree.generation[i], tree.generation[*j] + 1);
                }
            }
        }
    }

    #[test]
    fn supercritical_models_are_refused(theta in 1.0..3.0f64, seed in any::<u64>(), ogata in any::<bool>()) {
        let model = ge(1.0, theta, 1.0, 0.01);
        let domain = ObservationDomain::unit_square(5.0).unwrap();
        let method = if ogata { SimMethod::Ogata } else { SimMethod::Cluster };
        let r = simulate(&model, &domain, &SimConfig::new(seed, method));
        let refused = matches!(r, Err(sepp::Error::Supercritical { .. }));
        prop_assert!(refused, "supercritical model was simulated");
    }

    #[test]
    fn provenance_points_backwards_one_generation(seed in any::<u64>(), ogata in any::<bool>()) {
        let model = ge(5.0, 0.7, 0.5, 0.005);
        let domain = ObservationDomain::unit_square(10.0).unwrap();
        let method = if ogata { SimMethod::Ogata } else { SimMethod::Cluster };
        let r = simulate(&model, &domain, &SimConfig::new(seed, method).with_default_pads(&model)).unwrap();
        for (i, p) in r.raw_provenance.iter().enumerate() {
            if let Some(j) = p.raw_parent {
                prop_assert!(r.raw_events[j].t < r.raw_events[i].t);
                prop_assert_eq!(p.generation, r.raw_provenance[j].generation + 1);
            } else {
                prop_assert_eq!(p.generation, 0);
            }
        }
        for (i, p) in r.provenance.iter().enumerate() {
            if let Some(j) = p.parent {
                prop_assert!(r.catalog.get(j).t < r.catalog.get(i).t);
            }
        }
    }

    #[test]
    fn voronoi_cells_partition_the_domain(pts in proptest::collection::vec((0.0..1.0f64, 0.0..1.0f64), 3..60)) {
        let points: Vec<Point<f64>> = pts.iter().map(|p| Point::new(p.0, p.1)).collect();
        let domain = ObservationDomain::unit_square(1.0).unwrap();
        match voronoi_cells(&points, &domain) {
            Ok(cells) => {
                let total: f64 = cells.iter().map(|c| signed_area(c).abs()).sum();
                prop_assert!((total - 1.0).abs() <= 1e-6);
            }
            Err(e) => prop_assert!(matches!(e, sepp::Error::Degenerate(_)), "{}", e),
        }
    }

    #[test]
    fn k_hat_is_monotone(pts in proptest::collection::vec((0.0..1.0f64, 0.0..1.0f64), 2..80), translation in any::<bool>()) {
        let points: Vec<Point<f64>> = pts.iter().map(|p| Point::new(p.0, p.1)).collect();
        let domain = ObservationDomain::unit_square(1.0).unwrap();
        let radii: Vec<f64> = (0..30).map(|i| 0.01 * i as f64).collect();
        let correction = if translation { EdgeCorrection::Translation } else { EdgeCorrection::None };
        let k = k_function(&points, &domain, &radii, correction).unwrap();
        prop_assert!(k.khat.windows(2).all(|w| w[0] <= w[1]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn em_never_decreases_the_likelihood(seed in 0u64..1_000, theta in 0.2..0.7f64) {
        let truth = ge(20.0, theta, 0.3, 0.005);
        let domain = ObservationDomain::unit_square(10.0).unwrap();
        let data = simulate(&truth, &domain, &SimConfig::new(seed, SimMethod::Cluster)).unwrap().catalog;
        prop_assume!(data.len() >= 5);
        for method in [IntegrationMethod::Schoenberg { truncate_time: false }, IntegrationMethod::Cubature { tol: 1e-8 }] {
            let cfg = EmConfig { method, ..EmConfig::default() };
            let fit = em_fit(&ge(5.0, 0.3, 1.0, 0.02), &data, &domain, &cfg).unwrap();
            for w in fit.loglik_trace.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-8 * w[0].abs().max(1.0), "{} then {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn misd_never_decreases_the_likelihood(seed in 0u64..1_000) {
        let truth = IntensityModel::new(BackgroundModel::constant(20.0).unwrap(), Some(histogram_family())).unwrap();
        let domain = ObservationDomain::unit_square(10.0).unwrap();
        let data = simulate(&truth, &domain, &SimConfig::new(seed, SimMethod::Cluster)).unwrap().catalog;
        let cfg = MisdConfig {
            time_edges: Some(vec![0.0, 0.5, 2.0]),
            radius_edges: Some(vec![0.0, 0.05, 0.15]),
            ..MisdConfig::default()
        };
        let fit = misd_fit(&data, &domain, &cfg).unwrap();
        for w in fit.fit.loglik_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-8 * w[0].abs().max(1.0), "{} then {}", w[0], w[1]);
        }
    }

    #[test]
    fn covariance_is_symmetric_psd(seed in 0u64..1_000, nu in 5.0..30.0f64, theta in 0.1..0.8f64) {
        let truth = ge(20.0, 0.5, 0.3, 0.005);
        let domain = ObservationDomain::unit_square(10.0).unwrap();
        let data = simulate(&truth, &domain, &SimConfig::new(seed, SimMethod::Cluster)).unwrap().catalog;
        let c = asymptotic_covariance(&ge(nu, theta, 0.4, 0.006), &data, GradientMethod::Analytic).unwrap();
        let k = c.sigma_hat.len();
        for i in 0..k {
            for j in 0..k {
                prop_assert!((c.sigma_hat[i][j] - c.sigma_hat[j][i]).abs() <= 1e-12 * c.sigma_hat[i][i].abs().max(c.sigma_hat[j][j].abs()));
            }
        }
        prop_assert!(c.information_eigenvalues.iter().all(|e| *e > 0.0));
    }
}

/// Importance-sampling estimate of ∫∫∫ g with log-uniform lags and radii,
/// returned with its standard error.
fn monte_carlo_mass(g: &TriggeringFamily<f64>, lag: (f64, f64), radius: (f64, f64), n: usize, seed: u64) -> (f64, f64) {
    let mut rng = stream(seed, "mass", 0);
    let (lt, lr) = ((lag.1 / lag.0).ln(), (radius.1 / radius.0).ln());
    let (mut sum, mut sum2) = (0.0, 0.0);
    for _ in 0..n {
        let dt = lag.0 * (lt * rng.random::<f64>()).exp();
        let r = radius.0 * (lr * rng.random::<f64>()).exp();
        // Density of the draw is 1/(dt·lt) · 1/(r·lr); the angular integral is 2πr.
        let w = g.eval(r, 0.0, dt, None) * 2.0 * std::f64::consts::PI * r * (dt * lt) * (r * lr);
        sum += w;
        sum2 += w * w;
    }
    let mean = sum / n as f64;
    let var = (sum2 / n as f64 - mean * mean) / (n as f64 - 1.0);
    (mean, var.sqrt())
}

#[test]
fn monte_carlo_mass_matches_closed_form() {
    let families = [
        ("gaussian-exponential", TriggeringFamily::gaussian_exponential(0.6, 0.8, 0.01).unwrap(), (1e-9, 60.0), (1e-9, 2.0)),
        ("etas", etas_family(), (1e-9, 1e5), (1e-9, 1e4)),
        ("histogram", histogram_family(), (1e-9, 2.0), (1e-9, 0.15)),
    ];
    for (name, g, lag, radius) in families {
        let (est, se) = monte_carlo_mass(&g, lag, radius, 1_000_000, 17);
        let exact = g.mass(None).unwrap();
        assert!((est - exact).abs() <= 3.0 * se, "{name}: Monte Carlo {est} ± {se} vs {exact}");
    }
}

#[test]
fn padded_simulation_matches_stationary_mean() {
    // ν|X|T / (1 − m) with m = 0.5: 5 · 1 · 20 / 0.5 = 200.
    let model = ge(5.0, 0.5, 0.5, 0.004);
    let domain = ObservationDomain::unit_square(20.0).unwrap();
    let runs = 10_000u64;
    let total: usize = (0..runs)
        .map(|s| {
            let cfg = SimConfig::new(s, SimMethod::Cluster).with_default_pads(&model);
            simulate(&model, &domain, &cfg).unwrap().catalog.len()
        })
        .sum();
    let mean = total as f64 / runs as f64;
    assert!((mean - 200.0).abs() / 200.0 < 0.01, "mean count {mean}");
}

#[test]
fn retention_frequency_follows_background_probability() {
    let model = ge(10.0, 0.6, 0.5, 0.005);
    let domain = ObservationDomain::unit_square(5.0).unwrap();
    let data = simulate(&model, &domain, &SimConfig::new(5, SimMethod::Cluster)).unwrap().catalog;
    let b = branching_probabilities(&model, &data).unwrap();
    let reps = 2_000u64;
    let mut kept = vec![0u32; data.len()];
    for s in 0..reps {
        let d = thin_to_background(&b, &data, s).unwrap();
        for (i, l) in d.labels.iter().enumerate() {
            kept[i] += u32::from(*l == Label::Background);
        }
    }
    // Standardized frequencies must look like draws from a binomial law.
    let mut z2 = 0.0;
    let mut used = 0;
    for (i, k) in kept.iter().enumerate() {
        let p = b.background(i);
        if p > 1e-6 && p < 1.0 - 1e-6 {
            let z = (*k as f64 - reps as f64 * p) / (reps as f64 * p * (1.0 - p)).sqrt();
            assert!(z.abs() < 5.5, "event {i}: frequency {} vs {p}", *k as f64 / reps as f64);
            z2 += z * z;
            used += 1;
        }
    }
    assert!(used > 10);
    assert!((z2 / used as f64 - 1.0).abs() < 0.5, "mean squared z {}", z2 / used as f64);
}

#[test]
fn simulation_ignores_thread_count() {
    let model = ge(20.0, 0.6, 0.3, 0.005);
    let domain = ObservationDomain::unit_square(10.0).unwrap();
    for method in [SimMethod::Cluster, SimMethod::Ogata] {
        let cfg = SimConfig::new(99, method).with_default_pads(&model);
        let runs: Vec<_> = [1, 4]
            .iter()
            .map(|&t| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build()
                    .unwrap()
                    .install(|| simulate(&model, &domain, &cfg).unwrap())
            })
            .collect();
        assert_eq!(runs[0].catalog, runs[1].catalog);
        assert_eq!(runs[0].raw_provenance, runs[1].raw_provenance);
    }
}

#[test]
fn bootstrap_intervals_ignore_execution_order() {
    let model = ge(20.0, 0.4, 0.3, 0.005);
    let domain = ObservationDomain::unit_square(5.0).unwrap();
    let cfg = BootstrapConfig::new(24, 3, &model);
    let runs: Vec<_> = [1, 3]
        .iter()
        .map(|&t| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .unwrap()
                .install(|| parametric_bootstrap(&model, &domain, &cfg, &EmConfig::default()).unwrap())
        })
        .collect();
    assert_eq!(runs[0].intervals, runs[1].intervals);
    assert_eq!(runs[0].replicates, runs[1].replicates);
}
