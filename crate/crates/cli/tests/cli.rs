use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const DOMAIN: &str = "[domain]\nt_end = 60.0\nx_min = 0.0\nx_max = 1.0\ny_min = 0.0\ny_max = 1.0\n";

const CLUSTERED: &str = "[model]\nnu = 4.0\ntriggering = \"gaussian-exponential\"\ntheta = 0.75\nomega = 1.0\nsigma2 = 0.002\n";

fn sepp(args: &[&str], out_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sepp"));
    cmd.args(args).env_remove("SEPP_OUTPUT_DIR");
    if let Some(d) = out_dir {
        cmd.env("SEPP_OUTPUT_DIR", d);
    }
    cmd.output().expect("binary runs")
}

fn run_ok(args: &[&str], out_dir: Option<&Path>) {
    let o = sepp(args, out_dir);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulates the clustered model into `<dir>/sim-out`.
fn simulated(dir: &Path) -> PathBuf {
    let cfg = write(dir, "sim.toml", &format!("seed = 11\n{DOMAIN}{CLUSTERED}"));
    run_ok(&["simulate", s(&cfg)], None);
    dir.join("sim-out")
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn parse_svg(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    text
}

fn circle_fills(svg: &str) -> Vec<String> {
    let doc = roxmltree::Document::parse(svg).unwrap();
    doc.descendants()
        .filter(|n| n.has_tag_name("circle"))
        .map(|n| n.attribute("fill").unwrap().to_string())
        .collect()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

#[test]
fn simulate_is_byte_identical_across_reruns() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "sim.toml", &format!("seed = 5\n{DOMAIN}{CLUSTERED}"));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok(&["simulate", s(&cfg)], Some(&a));
    run_ok(&["simulate", s(&cfg)], Some(&b));
    let fa = files(&a);
    let names: Vec<&str> = fa.iter().map(|f| f.0.as_str()).collect();
    for required in ["catalog.csv", "provenance.csv", "scatter.svg", "config.resolved.toml", "report.toml"] {
        assert!(names.contains(&required), "missing {required}");
    }
    assert_eq!(fa, files(&b));
    assert!(!tmp.path().join("sim-out").exists(), "SEPP_OUTPUT_DIR was ignored");
}

#[test]
fn output_dir_key_and_default_location() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "run.toml", &format!("seed = 1\noutput_dir = \"elsewhere\"\n{DOMAIN}{CLUSTERED}"));
    run_ok(&["simulate", s(&cfg)], None);
    assert!(tmp.path().join("elsewhere/catalog.csv").is_file());
    let cfg = write(tmp.path(), "plain.toml", &format!("seed = 1\n{DOMAIN}{CLUSTERED}"));
    run_ok(&["simulate", s(&cfg)], None);
    assert!(tmp.path().join("plain-out/catalog.csv").is_file());
}

#[test]
fn fit_trace_never_decreases() {
    let tmp = TempDir::new().unwrap();
    simulated(tmp.path());
    let cfg = write(
        tmp.path(),
        "fit.toml",
        &format!(
            "{DOMAIN}[catalog]\npath = \"sim-out/catalog.csv\"\n[model]\nnu = 1.0\ntriggering = \"gaussian-exponential\"\ntheta = 0.3\nomega = 0.5\nsigma2 = 0.01\n"
        ),
    );
    run_ok(&["fit", s(&cfg)], None);
    let out = tmp.path().join("fit-out");
    let trace: Vec<f64> = csv_rows(&out.join("loglik_trace.csv")).iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(trace.len() > 2);
    for w in trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-8 * w[0].abs(), "{} then {}", w[0], w[1]);
    }
    let fitted: toml::Table = fs::read_to_string(out.join("fitted_model.toml")).unwrap().parse().unwrap();
    let theta = fitted["model"]["theta"].as_float().unwrap();
    assert!(theta > 0.4 && theta < 0.95, "theta {theta}");
    // Every event's parent distribution sums to one.
    let mut sums = std::collections::BTreeMap::<usize, f64>::new();
    for r in csv_rows(&out.join("branching.csv")) {
        *sums.entry(r[0].parse().unwrap()).or_default() += r[2].parse::<f64>().unwrap();
    }
    assert!(sums.values().all(|v| (v - 1.0).abs() < 1e-9));
}

#[test]
fn select_flags_the_minimum() {
    let tmp = TempDir::new().unwrap();
    simulated(tmp.path());
    let cfg = write(
        tmp.path(),
        "select.toml",
        &format!(
            "{DOMAIN}[catalog]\npath = \"sim-out/catalog.csv\"\n\
             [select.candidates.poisson]\nnu = 5.0\n\
             [select.candidates.gauss]\nnu = 2.0\ntriggering = \"gaussian-exponential\"\ntheta = 0.5\nomega = 0.5\nsigma2 = 0.005\n\
             [select.candidates.etas]\nnu = 2.0\ntriggering = \"etas\"\nk0 = 0.15\nalpha = 0.0\nc = 0.5\np = 2.5\nd = 0.005\nq = 2.5\nm0 = 0.0\nuse_marks = false\n"
        ),
    );
    run_ok(&["select", s(&cfg)], None);
    let rows = csv_rows(&tmp.path().join("select-out/selection.csv"));
    assert_eq!(rows.len(), 3);
    for (col, flag) in [(3, "aic"), (4, "bic"), (5, "hq")] {
        let vals: Vec<f64> = rows.iter().map(|r| r[col].parse().unwrap()).collect();
        let best = (0..3).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r[6].split(';').any(|f| f == flag), i == best, "{flag} flag on row {i}");
        }
    }
    let gauss = rows.iter().find(|r| &r[0] == "gauss").unwrap();
    assert!(gauss[6].contains("aic"), "AIC should prefer the generating family");
}

#[test]
fn unknown_key_is_rejected_by_name() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "bad.toml", &format!("{DOMAIN}[model]\nnu = 1.0\nthetta = 0.2\n"));
    let o = sepp(&["simulate", s(&cfg)], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("thetta"));

    // A known key that does not apply to the chosen family is also refused.
    let cfg = write(tmp.path(), "bad2.toml", &format!("{DOMAIN}[model]\nnu = 1.0\ntheta = 0.2\n"));
    let o = sepp(&["simulate", s(&cfg)], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("theta"));
}

#[test]
fn bad_catalog_row_is_named() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "events.csv", "t,x,y\n1.0,0.5,0.5\n2.0,1.5,0.5\n");
    let cfg = write(tmp.path(), "fit.toml", &format!("{DOMAIN}[catalog]\npath = \"events.csv\"\n[model]\nnu = 1.0\n"));
    let o = sepp(&["fit", s(&cfg)], None);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("row 3"), "{err}");
}

#[test]
fn numerical_failure_exits_with_two() {
    // A grid background that is zero where events sit has no log-likelihood.
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "events.csv", "t,x,y\n1.0,0.25,0.25\n2.0,0.75,0.75\n");
    let cfg = write(
        tmp.path(),
        "diag.toml",
        &format!(
            "{DOMAIN}[catalog]\npath = \"events.csv\"\n[model]\nbackground = \"grid\"\ngrid_nx = 2\ngrid_ny = 2\ngrid_values = [0.0, 1.0, 1.0, 0.0]\n[fit]\nmax_iter = 5\n"
        ),
    );
    let o = sepp(&["fit", s(&cfg)], None);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn echoed_config_reproduces_the_run() {
    let tmp = TempDir::new().unwrap();
    simulated(tmp.path());
    let cfg = write(
        tmp.path(),
        "dec.toml",
        &format!("seed = 4\n{DOMAIN}[catalog]\npath = \"sim-out/catalog.csv\"\n{CLUSTERED}[decluster]\nrefit = false\n"),
    );
    let first = tmp.path().join("first");
    run_ok(&["decluster", s(&cfg)], Some(&first));
    let echo = first.join("config.resolved.toml");
    let second = tmp.path().join("second");
    run_ok(&["decluster", s(&echo)], Some(&second));
    assert_eq!(files(&first), files(&second));
}

#[test]
fn background_only_scatter_has_one_colour() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "sim.toml", &format!("seed = 2\n{DOMAIN}[model]\nnu = 3.0\n"));
    run_ok(&["simulate", s(&cfg)], None);
    let out = tmp.path().join("sim-out");
    let fills = circle_fills(&parse_svg(&out.join("scatter.svg")));
    assert!(fills.len() > 100);
    assert!(fills.iter().all(|f| *f == fills[0]));
    fs::remove_file(out.join("scatter.svg")).unwrap();
    run_ok(&["render", s(&out)], None);
    assert_eq!(circle_fills(&parse_svg(&out.join("scatter.svg"))), fills);
}

#[test]
fn centre_square_scatter_shows_clusters() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "fig.toml",
        "seed = 9\n[domain]\nt_end = 100.0\nx_min = 0.0\nx_max = 3.0\ny_min = 0.0\ny_max = 3.0\n\
         [model]\nbackground = \"grid\"\ngrid_nx = 3\ngrid_ny = 3\ngrid_values = [0.05, 0.05, 0.05, 0.05, 1.0, 0.05, 0.05, 0.05, 0.05]\n\
         triggering = \"gaussian-exponential\"\ntheta = 0.75\nomega = 1.0\nsigma2 = 0.0002\n",
    );
    run_ok(&["simulate", s(&cfg)], None);
    let out = tmp.path().join("fig-out");
    let fills = circle_fills(&parse_svg(&out.join("scatter.svg")));
    let mut colours = fills.clone();
    colours.sort();
    colours.dedup();
    assert!(colours.len() >= 3, "expected several generations, got {colours:?}");

    // Triggered events sit close to their parents, so most events have a
    // near neighbour far below the spacing of an unclustered pattern.
    let events: Vec<(f64, f64)> = csv_rows(&out.join("catalog.csv")).iter().map(|r| (r[1].parse().unwrap(), r[2].parse().unwrap())).collect();
    let n = events.len();
    assert!(n > 200);
    let nn: Vec<f64> = events
        .iter()
        .enumerate()
        .map(|(i, a)| {
            events
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, b)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mean_nn = nn.iter().sum::<f64>() / n as f64;
    // Clark-Evans reference for an unclustered pattern with the observed
    // count in each unit cell: mean NN distance 0.5/sqrt(density).
    let mut counts = [0usize; 9];
    for (x, y) in &events {
        counts[(x.floor().min(2.0) as usize) + 3 * (y.floor().min(2.0) as usize)] += 1;
    }
    let reference = counts.iter().map(|&c| c as f64 * 0.5 / (c.max(1) as f64).sqrt()).sum::<f64>() / n as f64;
    assert!(mean_nn < 0.6 * reference, "mean NN {mean_nn} vs unclustered {reference}");
}

#[test]
fn diagnose_outputs_and_render() {
    let tmp = TempDir::new().unwrap();
    simulated(tmp.path());
    let cfg = write(
        tmp.path(),
        "diag.toml",
        &format!(
            "seed = 3\n{DOMAIN}[catalog]\npath = \"sim-out/catalog.csv\"\n{CLUSTERED}[diagnose]\nk_steps = 17\nk_simulations = 9\nextrema_grid = 40\n"
        ),
    );
    run_ok(&["diagnose", s(&cfg)], None);
    let out = tmp.path().join("diag-out");
    for f in ["residuals_thinned.csv", "residuals_super_thinned.csv", "k_function.csv", "voronoi.csv", "report.toml"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let k_svg = parse_svg(&out.join("k_function.svg"));
    let polylines: Vec<&str> = k_svg.lines().filter(|l| l.starts_with("<polyline")).collect();
    assert!(!polylines.is_empty());
    for line in &polylines {
        let pts = line.split('"').nth(1).unwrap();
        assert_eq!(pts.split(' ').count(), 17);
    }
    let v_svg = parse_svg(&out.join("voronoi.svg"));
    let cells = csv_rows(&out.join("voronoi.csv")).len();
    assert!(v_svg.matches("<path").count() > cells);

    let before = files(&out);
    for f in ["k_function.svg", "voronoi.svg"] {
        fs::remove_file(out.join(f)).unwrap();
    }
    run_ok(&["render", s(&out)], None);
    let after = files(&out);
    for f in ["k_function.svg", "voronoi.svg"] {
        let pick = |v: &[(String, Vec<u8>)]| v.iter().find(|x| x.0 == f).unwrap().1.clone();
        assert_eq!(pick(&before), pick(&after), "{f} differs after render");
    }
}

#[test]
fn render_names_missing_inputs() {
    let tmp = TempDir::new().unwrap();
    let o = sepp(&["render", s(tmp.path())], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config.resolved.toml"));
}

#[test]
fn help_documents_config_keys() {
    let o = sepp(&["fit", "--help"], None);
    let text = String::from_utf8_lossy(&o.stdout);
    for key in ["t_end", "sigma2", "prune_below", "k_simulations", "SEPP_OUTPUT_DIR", "EXIT STATUS"] {
        assert!(text.contains(key), "--help lacks {key}");
    }
}
