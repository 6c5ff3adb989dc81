//! One pipeline per subcommand. Each resolves its config completely, writes
//! the echo, then runs and writes its outputs.

use std::path::{Path, PathBuf};

use sepp::catalog::{load_catalog, write_catalog, EventCatalog, ObservationDomain, OutsidePolicy};
use sepp::decluster::{misd_fit, sample_family_tree, thin_to_background, write_declustering, write_family_tree, FamilyTree, Label};
use sepp::diagnostics::{
    information_criteria, k_function_envelope, quadrat_test, sign_test, super_thin_with, thin_residuals_with, voronoi_residuals,
    write_k_function, write_voronoi, EdgeCorrection, ExtremaGrid, KFunction, ResidualProcess,
};
use sepp::fit::{branching_probabilities, em_fit, flp_fit, semiparametric_fit, BranchingMatrix, FitResult};
use sepp::geometry::Point;
use sepp::inference::{asymptotic_covariance, asymptotic_covariance_fd, parametric_bootstrap, write_replicates, BootstrapConfig, GradientMethod};
use sepp::intensity::{HistogramKernel, IntensityModel};
use sepp::rng::derive_seed;
use sepp::scalar::format_significant;
use sepp::simulate::{mean_offspring, simulate, write_provenance};
use sepp::svg::{k_function_svg, scatter_svg, voronoi_svg};
use statrs::distribution::{ContinuousCDF, Normal};
use toml::Value;

use crate::config::{
    self, require, CatalogSection, CovarianceKey, DeclusterMode, DomainSection, EdgeKey, FitMethod, FitPlan, FitSection, ModelContext,
    ModelFile, ModelSection, ResidualsKey, RunConfig, SimulateSection,
};
use crate::error::{CliError, CliResult, Context};
use crate::output::{count, floats, strings, Output, Report, ECHO_FILE, REPORT_FILE};

const DIGITS: usize = sepp::catalog::DECIMAL_DIGITS;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Fit,
    Misd,
    Decluster,
    Bootstrap,
    Diagnose,
    Select,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Fit => "fit",
            Self::Misd => "misd",
            Self::Decluster => "decluster",
            Self::Bootstrap => "bootstrap",
            Self::Diagnose => "diagnose",
            Self::Select => "select",
        }
    }

    /// Sections this command reads; any other section is rejected.
    fn sections(&self) -> &'static [&'static str] {
        match self {
            Self::Simulate => &["domain", "model", "simulate"],
            Self::Fit => &["domain", "catalog", "model", "fit", "misd"],
            Self::Misd => &["domain", "catalog", "fit", "misd"],
            Self::Decluster => &["domain", "catalog", "model", "fit", "misd", "decluster"],
            Self::Bootstrap => &["domain", "catalog", "model", "fit", "bootstrap"],
            Self::Diagnose => &["domain", "catalog", "model", "diagnose"],
            Self::Select => &["domain", "catalog", "fit", "select"],
        }
    }
}

fn present_sections(cfg: &RunConfig) -> Vec<&'static str> {
    let mut v = Vec::new();
    let mut add = |name, present: bool| {
        if present {
            v.push(name)
        }
    };
    add("domain", cfg.domain.is_some());
    add("catalog", cfg.catalog.is_some());
    add("model", cfg.model.is_some());
    add("simulate", cfg.simulate.is_some());
    add("fit", cfg.fit.is_some());
    add("misd", cfg.misd.is_some());
    add("decluster", cfg.decluster.is_some());
    add("bootstrap", cfg.bootstrap.is_some());
    add("diagnose", cfg.diagnose.is_some());
    add("select", cfg.select.is_some());
    v
}

/// Output directory: `SEPP_OUTPUT_DIR`, else `output_dir`, else
/// `<config stem>-out` beside the config file.
pub fn output_dir(cfg: &RunConfig, config_path: &Path) -> PathBuf {
    if let Some(dir) = std::env::var_os("SEPP_OUTPUT_DIR").filter(|d| !d.is_empty()) {
        return PathBuf::from(dir);
    }
    if let Some(dir) = &cfg.output_dir {
        return dir.clone();
    }
    let stem = config_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "sepp".into());
    config_path.with_file_name(format!("{stem}-out"))
}

/// Runs `command` on the config at `path`; returns the files written.
pub fn run(command: Command, path: &Path) -> CliResult<Vec<PathBuf>> {
    let cfg = config::load(path)?;
    if let Some(extra) = present_sections(&cfg).into_iter().find(|s| !command.sections().contains(s)) {
        return Err(CliError::Config(format!("section [{extra}] is not used by `{}`", command.name())));
    }
    let mut out = Output::create(&output_dir(&cfg, path))?;
    let mut run = Run {
        echo: RunConfig {
            seed: None,
            ..RunConfig::default()
        },
        cfg,
        report: Report::default(),
    };
    run.report.set("command", command.name());
    match command {
        Command::Simulate => run.simulate(&mut out)?,
        Command::Fit => run.fit(&mut out, false)?,
        Command::Misd => run.fit(&mut out, true)?,
        Command::Decluster => run.decluster(&mut out)?,
        Command::Bootstrap => run.bootstrap(&mut out)?,
        Command::Diagnose => run.diagnose(&mut out)?,
        Command::Select => run.select(&mut out)?,
    }
    out.write_toml(REPORT_FILE, &run.report.into_table())?;
    Ok(out.written().to_vec())
}

struct Run {
    cfg: RunConfig,
    /// Fully resolved config, written before any computation starts.
    echo: RunConfig,
    report: Report,
}

/// Catalog plus the derived inputs several commands share.
struct Data {
    catalog: EventCatalog<f64>,
    points: Vec<Point<f64>>,
}

struct Fitted {
    fit: FitResult<f64>,
    kde_edge_correction: bool,
    histogram: Option<HistogramKernel<f64>>,
}

impl Run {
    fn seed(&mut self) -> u64 {
        let seed = self.cfg.seed.unwrap_or(0);
        self.echo.seed = Some(seed);
        seed
    }

    fn domain(&mut self, command: &str) -> CliResult<ObservationDomain<f64>> {
        let section: DomainSection = require(&self.cfg.domain, "domain", command)?.clone();
        let domain = section.resolve()?;
        self.echo.domain = Some(section);
        Ok(domain)
    }

    fn data(&mut self, command: &str, domain: &ObservationDomain<f64>) -> CliResult<Data> {
        let section: CatalogSection = require(&self.cfg.catalog, "catalog", command)?.resolved();
        let loaded = load_catalog(&section.path, domain, section.policy()).context(&format!("catalog {}", section.path.display()))?;
        if loaded.catalog.is_empty() {
            return Err(CliError::Core {
                context: format!("catalog {}", section.path.display()),
                source: sepp::Error::EmptyCatalog,
            });
        }
        let section_policy = section.policy();
        self.echo.catalog = Some(section);
        let r = self.report.section("catalog");
        r.insert("events".into(), count(loaded.catalog.len()));
        if section_policy == OutsidePolicy::Drop {
            r.insert("dropped_outside".into(), count(loaded.dropped));
        }
        let points = loaded.catalog.events().iter().map(|e| e.location()).collect();
        Ok(Data {
            catalog: loaded.catalog,
            points,
        })
    }

    fn model(&mut self, command: &str, domain: &ObservationDomain<f64>, points: Option<&[Point<f64>]>) -> CliResult<IntensityModel<f64>> {
        let section: ModelSection = require(&self.cfg.model, "model", command)?.clone();
        let model = section.build(&ModelContext {
            domain,
            points,
            section: "model",
        })?;
        self.echo.model = Some(section);
        Ok(model)
    }

    fn write_echo(&self, out: &mut Output) -> CliResult<()> {
        out.write_toml(ECHO_FILE, &self.echo)
    }

    fn simulate(&mut self, out: &mut Output) -> CliResult<()> {
        let seed = self.seed();
        let domain = self.domain("simulate")?;
        let model = self.model("simulate", &domain, None)?;
        if matches!(model.background, sepp::intensity::BackgroundModel::WeightedKde(_)) {
            return Err(CliError::Config("key `model.background`: \"kde\" cannot be simulated from a config".into()));
        }
        let section = self.cfg.simulate.clone().unwrap_or_default();
        let (resolved, sim_cfg) = section.resolve(seed, &model)?;
        self.echo.simulate = Some(resolved);
        self.write_echo(out)?;

        let m = mean_offspring(&model, sim_cfg.magnitudes.as_ref()).context("simulate")?;
        let sim = simulate(&model, &domain, &sim_cfg).context("simulate")?;
        out.write_with("catalog.csv", |w| write_catalog(w, &sim.catalog))?;
        out.write_with("provenance.csv", |w| write_provenance(w, &sim))?;
        let generations: Vec<u32> = sim.provenance.iter().map(|p| p.generation).collect();
        out.write("scatter.svg", scatter_svg(sim.catalog.events(), Some(&generations), &domain).as_bytes())?;

        let r = self.report.section("simulation");
        r.insert("method".into(), sim_cfg.method.name().into());
        r.insert("mean_offspring".into(), m.into());
        r.insert("events".into(), count(sim.catalog.len()));
        r.insert("background_events".into(), count(sim.provenance.iter().filter(|p| p.is_background()).count()));
        r.insert("raw_events".into(), count(sim.raw_count));
        r.insert("max_generation".into(), count(generations.iter().copied().max().unwrap_or(0) as usize));
        Ok(())
    }

    /// Resolves `[fit]` (and `[misd]`) into a plan; `force_misd` is the
    /// `misd` subcommand.
    fn fit_plan(&mut self, data: &Data, force_misd: bool) -> CliResult<FitPlan> {
        let mut section: FitSection = self.cfg.fit.clone().unwrap_or_default();
        if force_misd {
            match section.method {
                None | Some(FitMethod::Misd) => section.method = Some(FitMethod::Misd),
                Some(other) => return Err(CliError::Config(format!("key `fit.method`: `misd` runs method \"misd\", not \"{}\"", other.name()))),
            }
        }
        let misd_section = self.cfg.misd.clone();
        let (resolved, mut plan) = section.resolve(misd_section.as_ref())?;
        if let FitPlan::Misd(cfg) = &mut plan {
            let misd = misd_section.unwrap_or_default().resolve(cfg, &data.catalog)?;
            self.echo.misd = Some(misd);
        }
        self.echo.fit = Some(resolved);
        Ok(plan)
    }

    fn run_fit(&mut self, plan: &FitPlan, init: Option<&IntensityModel<f64>>, data: &Data, domain: &ObservationDomain<f64>) -> CliResult<Fitted> {
        let need_init = || init.ok_or_else(|| CliError::Config("this fit method needs a [model] section as its starting point".into()));
        let fitted = match plan {
            FitPlan::Em(em) => Fitted {
                fit: em_fit(need_init()?, &data.catalog, domain, em).context("fit")?,
                kde_edge_correction: true,
                histogram: None,
            },
            FitPlan::Semiparametric(kernel, em) => {
                let s = semiparametric_fit(need_init()?, &data.catalog, domain, kernel, em).context("semiparametric fit")?;
                let r = self.report.section("semiparametric");
                r.insert("outer_iterations".into(), count(s.outer_iterations));
                r.insert("converged".into(), s.converged.into());
                r.insert("background_changes".into(), floats(&s.background_changes));
                Fitted {
                    fit: s.fit,
                    kde_edge_correction: kernel.edge_correction,
                    histogram: None,
                }
            }
            FitPlan::Flp(cfg) => {
                let s = flp_fit(need_init()?, &data.catalog, domain, cfg).context("flp fit")?;
                let r = self.report.section("flp");
                r.insert("bandwidth".into(), s.bandwidth.into());
                r.insert("score".into(), s.score.into());
                r.insert("outer_iterations".into(), count(s.outer_iterations));
                r.insert("converged".into(), s.converged.into());
                Fitted {
                    fit: s.fit,
                    kde_edge_correction: cfg.edge_correction,
                    histogram: None,
                }
            }
            FitPlan::Misd(cfg) => {
                let s = misd_fit(&data.catalog, domain, cfg).context("misd fit")?;
                let r = self.report.section("misd");
                r.insert("total_mass".into(), s.total_mass().into());
                r.insert("truncated_at".into(), s.truncated_at.into());
                r.insert(
                    "empty_cells".into(),
                    Value::Array(s.empty_cells.iter().map(|(k, l)| Value::Array(vec![count(*k), count(*l)])).collect()),
                );
                Fitted {
                    histogram: Some(s.histogram.clone()),
                    fit: s.fit,
                    kde_edge_correction: true,
                }
            }
        };
        let fit = &fitted.fit;
        let r = self.report.section("fit");
        r.insert("loglik".into(), fit.loglik().into());
        r.insert("iterations".into(), count(fit.iterations));
        r.insert("converged".into(), fit.converged.into());
        r.insert("monotone_trace".into(), monotone(&fit.loglik_trace).into());
        r.insert("at_bound".into(), strings(&fit.at_bound));
        r.insert("expected_background".into(), fit.branching.expected_background().into());
        let criteria = information_criteria(fit.loglik(), fit.n_params(), data.catalog.len()).context("information criteria")?;
        r.insert("aic".into(), criteria.aic.into());
        r.insert("bic".into(), criteria.bic.into());
        if let Some(hq) = criteria.hq {
            r.insert("hq".into(), hq.into());
        }
        let params = self.report.section("parameters");
        for (name, v) in fit.param_names.iter().zip(&fit.theta_hat) {
            params.insert(name.clone(), (*v).into());
        }
        Ok(fitted)
    }

    fn write_fit(&self, out: &mut Output, fitted: &Fitted) -> CliResult<()> {
        let fit = &fitted.fit;
        out.write_toml(
            "fitted_model.toml",
            &ModelFile {
                model: ModelSection::from_model(&fit.model, fitted.kde_edge_correction),
            },
        )?;
        let mut trace = String::from("iteration,loglik\n");
        for (i, l) in fit.loglik_trace.iter().enumerate() {
            trace.push_str(&format!("{i},{}\n", format_significant(*l, DIGITS)));
        }
        out.write("loglik_trace.csv", trace.as_bytes())?;
        out.write("branching.csv", branching_csv(&fit.branching).as_bytes())?;
        if let Some(h) = &fitted.histogram {
            out.write("histogram.csv", histogram_csv(h).as_bytes())?;
        }
        Ok(())
    }

    fn fit(&mut self, out: &mut Output, force_misd: bool) -> CliResult<()> {
        let command = if force_misd { "misd" } else { "fit" };
        let domain = self.domain(command)?;
        let data = self.data(command, &domain)?;
        let plan = self.fit_plan(&data, force_misd)?;
        let init = match plan {
            FitPlan::Misd(_) => {
                if self.cfg.model.is_some() {
                    return Err(CliError::Config("[model] does not apply to method \"misd\"; the kernel is the histogram".into()));
                }
                None
            }
            _ => Some(self.model(command, &domain, Some(&data.points))?),
        };
        self.write_echo(out)?;
        let fitted = self.run_fit(&plan, init.as_ref(), &data, &domain)?;
        self.write_fit(out, &fitted)
    }

    fn decluster(&mut self, out: &mut Output) -> CliResult<()> {
        let seed = self.seed();
        let domain = self.domain("decluster")?;
        let data = self.data("decluster", &domain)?;
        let mut section = self.cfg.decluster.clone().unwrap_or_default();
        let mode = section.mode.unwrap_or_default();
        let refit = section.refit.unwrap_or(true);
        section.mode = Some(mode);
        section.refit = Some(refit);
        self.echo.decluster = Some(section);
        let plan = if refit {
            Some(self.fit_plan(&data, false)?)
        } else {
            if self.cfg.fit.is_some() || self.cfg.misd.is_some() {
                return Err(CliError::Config("key `decluster.refit`: [fit] is unused when refit = false".into()));
            }
            None
        };
        let init = match plan {
            Some(FitPlan::Misd(_)) => None,
            _ => Some(self.model("decluster", &domain, Some(&data.points))?),
        };
        self.write_echo(out)?;
        let branching = match &plan {
            Some(plan) => {
                let fitted = self.run_fit(plan, init.as_ref(), &data, &domain)?;
                self.write_fit(out, &fitted)?;
                fitted.fit.branching
            }
            None => branching_probabilities(init.as_ref().expect("model is required without refit"), &data.catalog).context("branching")?,
        };
        let mut generations = None;
        let r = self.report.section("decluster");
        r.insert("expected_background".into(), branching.expected_background().into());
        if matches!(mode, DeclusterMode::Thin | DeclusterMode::Both) {
            let d = thin_to_background(&branching, &data.catalog, derive_seed(seed, "cli-thin", 0)).context("decluster")?;
            r.insert("thinned_background".into(), count(d.n_background()));
            generations = Some(d.labels.iter().map(|l| u32::from(*l == Label::Triggered)).collect::<Vec<_>>());
            out.write_with("declustering.csv", |w| write_declustering(w, &d))?;
        }
        if matches!(mode, DeclusterMode::FamilyTree | DeclusterMode::Both) {
            let tree: FamilyTree = sample_family_tree(&branching, &data.catalog, derive_seed(seed, "cli-tree", 0)).context("family tree")?;
            r.insert("tree_background".into(), count(tree.parent.iter().filter(|p| p.is_none()).count()));
            r.insert("max_generation".into(), count(tree.generation.iter().copied().max().unwrap_or(0) as usize));
            generations = Some(tree.generation.clone());
            out.write_with("family_tree.csv", |w| write_family_tree(w, &tree))?;
        }
        out.write("scatter.svg", scatter_svg(data.catalog.events(), generations.as_deref(), &domain).as_bytes())
    }

    fn bootstrap(&mut self, out: &mut Output) -> CliResult<()> {
        let seed = self.seed();
        let domain = self.domain("bootstrap")?;
        let data = match self.cfg.catalog {
            Some(_) => Some(self.data("bootstrap", &domain)?),
            None => None,
        };
        let plan = match &data {
            Some(data) => match self.fit_plan(data, false)? {
                FitPlan::Em(em) => Some(em),
                _ => return Err(CliError::Config("key `fit.method`: bootstrap refits replicates by \"em\" only".into())),
            },
            None => {
                if self.cfg.fit.is_some() {
                    return Err(CliError::Config("[fit] needs a [catalog] in `bootstrap`; without one the model is taken as fitted".into()));
                }
                None
            }
        };
        let em = plan.clone().unwrap_or_default();
        let model = self.model("bootstrap", &domain, data.as_ref().map(|d| d.points.as_slice()))?;
        if matches!(model.background, sepp::intensity::BackgroundModel::WeightedKde(_)) {
            return Err(CliError::Config("key `model.background`: \"kde\" models cannot be bootstrapped".into()));
        }
        let mut section = self.cfg.bootstrap.clone().unwrap_or_default();
        let sim_section = SimulateSection {
            method: section.method,
            pad_time: section.pad_time,
            pad_space: section.pad_space,
            ..SimulateSection::default()
        };
        let mut cfg = BootstrapConfig::new(section.replicates.unwrap_or(200), seed, &model);
        let (sim, sim_cfg) = sim_section.resolve(seed, &model)?;
        cfg.sim = sim_cfg;
        cfg.level = section.level.unwrap_or(cfg.level);
        cfg.early_stop = section.early_stop.unwrap_or(cfg.early_stop);
        cfg.block = section.block.unwrap_or(cfg.block);
        cfg.max_failure_fraction = section.max_failure_fraction.unwrap_or(cfg.max_failure_fraction);
        if cfg.replicates < 2 {
            return Err(CliError::Config("key `bootstrap.replicates`: must be at least 2".into()));
        }
        if !(cfg.level > 0.0 && cfg.level < 1.0) {
            return Err(CliError::Config("key `bootstrap.level`: must lie in (0, 1)".into()));
        }
        if cfg.block == 0 {
            return Err(CliError::Config("key `bootstrap.block`: must be positive".into()));
        }
        if !(0.0..=1.0).contains(&cfg.max_failure_fraction) {
            return Err(CliError::Config("key `bootstrap.max_failure_fraction`: must lie in [0, 1]".into()));
        }
        let covariance = section.covariance.unwrap_or_default();
        section.replicates = Some(cfg.replicates);
        section.level = Some(cfg.level);
        section.early_stop = Some(cfg.early_stop);
        section.block = Some(cfg.block);
        section.max_failure_fraction = Some(cfg.max_failure_fraction);
        section.method = sim.method;
        section.pad_time = sim.pad_time;
        section.pad_space = sim.pad_space;
        section.covariance = Some(covariance);
        self.echo.bootstrap = Some(section);
        self.write_echo(out)?;

        let fitted_model = match (&data, &plan) {
            (Some(data), Some(em)) => {
                let fitted = self.run_fit(&FitPlan::Em(em.clone()), Some(&model), data, &domain)?;
                self.write_fit(out, &fitted)?;
                fitted.fit.model
            }
            _ => model,
        };
        let z = Normal::standard().inverse_cdf(0.5 + cfg.level / 2.0);
        if let (Some(data), true) = (&data, covariance != CovarianceKey::None) {
            let estimate = match covariance {
                CovarianceKey::Analytic => asymptotic_covariance(&fitted_model, &data.catalog, GradientMethod::Analytic),
                _ => asymptotic_covariance_fd(&fitted_model, &data.catalog),
            };
            let r = self.report.section("covariance");
            match estimate {
                Ok(c) => {
                    let se = c.standard_errors();
                    let wald = c.wald_intervals(z);
                    for (i, name) in c.param_names.iter().enumerate() {
                        let mut t = toml::Table::new();
                        t.insert("standard_error".into(), se[i].into());
                        t.insert("wald_interval".into(), floats(&[wald[i].0, wald[i].1]));
                        r.insert(name.clone(), Value::Table(t));
                    }
                }
                Err(e) if e.is_numerical() => {
                    r.insert("unavailable".into(), e.to_string().into());
                }
                Err(e) => return Err(e).context("covariance"),
            }
        }
        let result = parametric_bootstrap(&fitted_model, &domain, &cfg, &em).context("bootstrap")?;
        out.write_with("bootstrap.csv", |w| write_replicates(w, &result))?;
        let r = self.report.section("bootstrap");
        r.insert("attempted".into(), count(result.attempted));
        r.insert("converged".into(), count(result.replicates.len()));
        r.insert("failures".into(), count(result.failures));
        r.insert("failed_replicates".into(), Value::Array(result.failed_ids.iter().map(|i| count(*i)).collect()));
        r.insert("stopped_early".into(), result.stopped_early.into());
        let sd = result.standard_deviations();
        let theta = fitted_model.params();
        for (i, name) in result.param_names.iter().enumerate() {
            let mut t = toml::Table::new();
            t.insert("estimate".into(), theta[i].into());
            t.insert("sd".into(), sd[i].into());
            t.insert("interval".into(), floats(&[result.intervals[i].0, result.intervals[i].1]));
            r.insert(name.clone(), Value::Table(t));
        }
        Ok(())
    }

    fn diagnose(&mut self, out: &mut Output) -> CliResult<()> {
        let seed = self.seed();
        let domain = self.domain("diagnose")?;
        let data = self.data("diagnose", &domain)?;
        let model = self.model("diagnose", &domain, Some(&data.points))?;
        let mut s = self.cfg.diagnose.clone().unwrap_or_default();
        let kind = s.residuals.unwrap_or_default();
        if kind == ResidualsKey::Thin {
            if s.super_thin_rate.is_some() {
                return Err(CliError::Config("key `diagnose.super_thin_rate`: does not apply to residuals = \"thin\"".into()));
            }
        } else {
            let rate = s.super_thin_rate.unwrap_or(data.catalog.len() as f64 / domain.volume());
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(CliError::Config("key `diagnose.super_thin_rate`: must be positive".into()));
            }
            s.super_thin_rate = Some(rate);
        }
        let bbox = domain.bbox();
        let k_max = s.k_max.unwrap_or(0.25 * bbox.width().min(bbox.height()));
        let k_steps = s.k_steps.unwrap_or(50);
        let k_sims = s.k_simulations.unwrap_or(99);
        let edge = s.k_edge_correction.unwrap_or(if domain.as_rect().is_some() { EdgeKey::Translation } else { EdgeKey::None });
        let quadrats = (s.quadrats_x.unwrap_or(5), s.quadrats_y.unwrap_or(5));
        let voronoi = s.voronoi.unwrap_or(true);
        let grid = ExtremaGrid {
            size: s.extrema_grid.unwrap_or(200),
            refine: s.extrema_refine.unwrap_or(21),
        };
        if !(k_max > 0.0) || k_steps == 0 {
            return Err(CliError::Config("key `diagnose.k_max`: K radii need k_max > 0 and k_steps ≥ 1".into()));
        }
        if k_sims == 0 {
            return Err(CliError::Config("key `diagnose.k_simulations`: must be positive".into()));
        }
        if grid.size < 2 || grid.refine < 2 {
            return Err(CliError::Config("key `diagnose.extrema_grid`: grids need at least 2 points per side".into()));
        }
        if voronoi {
            s.voronoi_tol = Some(s.voronoi_tol.unwrap_or(1e-8));
        } else if s.voronoi_tol.is_some() {
            return Err(CliError::Config("key `diagnose.voronoi_tol`: does not apply to voronoi = false".into()));
        }
        s.residuals = Some(kind);
        s.k_max = Some(k_max);
        s.k_steps = Some(k_steps);
        s.k_simulations = Some(k_sims);
        s.k_edge_correction = Some(edge);
        s.quadrats_x = Some(quadrats.0);
        s.quadrats_y = Some(quadrats.1);
        s.voronoi = Some(voronoi);
        s.extrema_grid = Some(grid.size);
        s.extrema_refine = Some(grid.refine);
        self.echo.diagnose = Some(s.clone());
        self.write_echo(out)?;

        let mut k_source = None;
        if matches!(kind, ResidualsKey::Thin | ResidualsKey::Both) {
            let r = thin_residuals_with(&model, &data.catalog, &domain, derive_seed(seed, "cli-thin", 0), grid).context("thinned residuals")?;
            out.write("residuals_thinned.csv", residual_csv(&r).as_bytes())?;
            self.residual_report("thinned", &r, &domain, quadrats)?;
            k_source = Some(("thinned", r));
        }
        if matches!(kind, ResidualsKey::SuperThin | ResidualsKey::Both) {
            let rate = s.super_thin_rate.expect("resolved above");
            let r = super_thin_with(&model, &data.catalog, &domain, rate, derive_seed(seed, "cli-super-thin", 0), grid).context("super-thinned residuals")?;
            out.write("residuals_super_thinned.csv", residual_csv(&r).as_bytes())?;
            self.residual_report("super_thinned", &r, &domain, quadrats)?;
            k_source = Some(("super_thinned", r));
        }
        let (label, residuals) = k_source.expect("at least one residual kind runs");
        let radii: Vec<f64> = (1..=k_steps).map(|i| k_max * i as f64 / k_steps as f64).collect();
        let correction = match edge {
            EdgeKey::None => EdgeCorrection::None,
            EdgeKey::Translation => EdgeCorrection::Translation,
        };
        let k = k_function_envelope(&residuals.locations(), &domain, &radii, correction, k_sims, derive_seed(seed, "cli-k", 0))
            .context("K function")?;
        out.write_with("k_function.csv", |w| write_k_function(w, &k))?;
        out.write("k_function.svg", k_function_svg(&k).as_bytes())?;
        let r = self.report.section("k_function");
        r.insert("points".into(), label.into());
        r.insert("radii_above_envelope".into(), count(k.above_envelope().len()));
        r.insert("radii_outside_envelope".into(), count(k.outside_envelope().len()));
        r.insert("warnings".into(), strings(&k.warnings));

        if voronoi {
            let map = voronoi_residuals(&model, &data.catalog, &domain, None, s.voronoi_tol.expect("resolved above")).context("Voronoi residuals")?;
            out.write_with("voronoi.csv", |w| write_voronoi(w, &map))?;
            out.write("voronoi.svg", voronoi_svg(&map, &domain).as_bytes())?;
            let test = sign_test(&map.raw_residuals());
            let r = self.report.section("voronoi");
            r.insert("cells".into(), count(map.cells.len()));
            r.insert("positive".into(), count(test.positives));
            r.insert("negative".into(), count(test.negatives));
            r.insert("sign_test_p".into(), test.p_value.into());
            r.insert("sign_test_p_more_positive".into(), test.p_more_positive.into());
            r.insert("sign_test_p_more_negative".into(), test.p_more_negative.into());
        }
        Ok(())
    }

    fn residual_report(&mut self, name: &str, r: &ResidualProcess<f64>, domain: &ObservationDomain<f64>, quadrats: (usize, usize)) -> CliResult<()> {
        let t = self.report.section(name);
        t.insert("points".into(), count(r.len()));
        t.insert("simulated".into(), count(r.simulated.iter().filter(|s| **s).count()));
        t.insert("target_rate".into(), r.target_rate.into());
        t.insert("expected_retained".into(), r.expected_retained.into());
        t.insert("warnings".into(), strings(&r.warnings));
        if r.is_empty() {
            t.insert("quadrat_test".into(), "skipped: no points".into());
            return Ok(());
        }
        let q = quadrat_test(&r.locations(), domain, quadrats.0, quadrats.1).context("quadrat test")?;
        t.insert("quadrat_statistic".into(), q.statistic.into());
        t.insert("quadrat_df".into(), count(q.degrees_of_freedom));
        t.insert("quadrat_p".into(), q.p_value.into());
        Ok(())
    }

    fn select(&mut self, out: &mut Output) -> CliResult<()> {
        let domain = self.domain("select")?;
        let data = self.data("select", &domain)?;
        let section = require(&self.cfg.select, "select", "select")?.clone();
        if section.candidates.is_empty() {
            return Err(CliError::Config("key `select.candidates`: needs at least one candidate".into()));
        }
        let plan = self.fit_plan(&data, false)?;
        if matches!(plan, FitPlan::Misd(_)) {
            return Err(CliError::Config("key `fit.method`: select compares parametric candidates; \"misd\" is not one".into()));
        }
        let mut inits = Vec::new();
        for (name, m) in &section.candidates {
            let model = m.build(&ModelContext {
                domain: &domain,
                points: Some(&data.points),
                section: &format!("select.candidates.{name}"),
            })?;
            inits.push((name.clone(), model));
        }
        self.echo.select = Some(section);
        self.write_echo(out)?;

        // Candidate fits report through the selection table instead.
        let report = std::mem::take(&mut self.report);
        let mut rows = Vec::new();
        for (name, init) in &inits {
            let fitted = self.run_fit(&plan, Some(init), &data, &domain).map_err(|e| match e {
                CliError::Core { source, .. } => CliError::Core {
                    context: format!("candidate `{name}`"),
                    source,
                },
                other => other,
            })?;
            let fit = fitted.fit;
            let c = information_criteria(fit.loglik(), fit.n_params(), data.catalog.len()).context("information criteria")?;
            rows.push((name.clone(), fit.n_params(), fit.loglik(), c));
        }
        self.report = report;
        let best = |f: &dyn Fn(&sepp::diagnostics::InformationCriteria<f64>) -> Option<f64>| -> Option<usize> {
            let vals: Vec<f64> = rows.iter().map(|r| f(&r.3).unwrap_or(f64::INFINITY)).collect();
            sepp::diagnostics::argmin(&vals).filter(|&i| vals[i].is_finite())
        };
        let winners = [
            ("aic", best(&|c| Some(c.aic))),
            ("bic", best(&|c| Some(c.bic))),
            ("hq", best(&|c| c.hq)),
        ];
        let fmt = |v: f64| format_significant(v, DIGITS);
        let mut table = String::from("candidate,n_params,loglik,aic,bic,hq,minimum_of\n");
        for (i, (name, k, ll, c)) in rows.iter().enumerate() {
            let flags: Vec<&str> = winners.iter().filter(|(_, w)| *w == Some(i)).map(|(n, _)| *n).collect();
            table.push_str(&format!(
                "{name},{k},{},{},{},{},{}\n",
                fmt(*ll),
                fmt(c.aic),
                fmt(c.bic),
                c.hq.map(fmt).unwrap_or_default(),
                flags.join(";")
            ));
        }
        out.write("selection.csv", table.as_bytes())?;
        let r = self.report.section("selection");
        for (criterion, w) in winners {
            if let Some(i) = w {
                r.insert(criterion.into(), rows[i].0.clone().into());
            }
        }
        Ok(())
    }
}

fn monotone(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] >= w[0] - 1e-8 * w[0].abs().max(1.0))
}

/// Sparse branching matrix as `event_index,parent,probability`; the
/// background row has an empty parent.
fn branching_csv(b: &BranchingMatrix<f64>) -> String {
    let mut s = String::from("event_index,parent,probability\n");
    for i in 0..b.len() {
        s.push_str(&format!("{i},,{}\n", format_significant(b.background(i), DIGITS)));
        let (parents, probs) = b.row(i);
        let mut entries: Vec<(usize, f64)> = parents.iter().copied().zip(probs.iter().copied()).collect();
        entries.sort_by_key(|e| e.0);
        for (j, p) in entries {
            s.push_str(&format!("{i},{j},{}\n", format_significant(p, DIGITS)));
        }
    }
    s
}

fn histogram_csv(h: &HistogramKernel<f64>) -> String {
    let fmt = |v: f64| format_significant(v, DIGITS);
    let mut s = String::from("time_lo,time_hi,radius_lo,radius_hi,value,mass\n");
    let (te, re) = (h.time_edges(), h.radius_edges());
    for k in 0..h.n_time() {
        for l in 0..h.n_radius() {
            let v = h.value(k, l);
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                fmt(te[k]),
                fmt(te[k + 1]),
                fmt(re[l]),
                fmt(re[l + 1]),
                fmt(v),
                fmt(v * h.cell_measure(k, l))
            ));
        }
    }
    s
}

fn residual_csv(r: &ResidualProcess<f64>) -> String {
    let fmt = |v: f64| format_significant(v, DIGITS);
    let mut s = String::from("t,x,y,simulated,source\n");
    for (i, e) in r.events.iter().enumerate() {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt(e.t),
            fmt(e.x),
            fmt(e.y),
            r.simulated[i],
            r.source[i].map(|j| j.to_string()).unwrap_or_default()
        ));
    }
    s
}

/// Regenerates the SVG figures of a finished run from its directory.
pub fn render(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let echo_path = dir.join(ECHO_FILE);
    if !echo_path.is_file() {
        return Err(CliError::Config(format!("{}: missing; `render` needs a run directory", echo_path.display())));
    }
    let cfg = config::load(&echo_path)?;
    let domain = cfg
        .domain
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("{}: missing [domain]", echo_path.display())))?
        .resolve()?;
    let mut out = Output::create(dir)?;
    let catalog = if dir.join("catalog.csv").is_file() {
        Some(load_catalog(dir.join("catalog.csv"), &domain, OutsidePolicy::Strict).context("catalog.csv")?.catalog)
    } else if let Some(c) = &cfg.catalog {
        Some(load_catalog(&c.path, &domain, c.policy()).context(&format!("catalog {}", c.path.display()))?.catalog)
    } else {
        None
    };
    if let Some(catalog) = &catalog {
        let generations = read_generations(dir, catalog.len())?;
        out.write("scatter.svg", scatter_svg(catalog.events(), generations.as_deref(), &domain).as_bytes())?;
    }
    if dir.join("k_function.csv").is_file() {
        let k = read_k_function(&dir.join("k_function.csv"))?;
        out.write("k_function.svg", k_function_svg(&k).as_bytes())?;
    }
    if dir.join("voronoi.csv").is_file() {
        let catalog = catalog
            .as_ref()
            .ok_or_else(|| CliError::Config("voronoi.csv present but the run has no catalog to rebuild cells from".into()))?;
        let section = cfg
            .model
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("voronoi.csv present but {} has no [model]", echo_path.display())))?;
        let points: Vec<Point<f64>> = catalog.events().iter().map(|e| e.location()).collect();
        let model = section.build(&ModelContext {
            domain: &domain,
            points: Some(&points),
            section: "model",
        })?;
        let tol = cfg.diagnose.as_ref().and_then(|d| d.voronoi_tol).unwrap_or(1e-8);
        let map = voronoi_residuals(&model, catalog, &domain, None, tol).context("Voronoi residuals")?;
        out.write("voronoi.svg", voronoi_svg(&map, &domain).as_bytes())?;
    }
    if out.written().is_empty() {
        return Err(CliError::Config(format!(
            "{}: nothing to render; expected catalog.csv (or a [catalog] in the config), k_function.csv or voronoi.csv",
            dir.display()
        )));
    }
    Ok(out.written().to_vec())
}

/// Generation per event from provenance.csv, family_tree.csv or
/// declustering.csv, whichever is present first.
fn read_generations(dir: &Path, n: usize) -> CliResult<Option<Vec<u32>>> {
    for (file, column) in [("provenance.csv", "generation"), ("family_tree.csv", "generation"), ("declustering.csv", "label")] {
        let path = dir.join(file);
        if !path.is_file() {
            continue;
        }
        let mut rdr = csv::Reader::from_path(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let headers = rdr.headers().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?.clone();
        let idx = headers
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| CliError::Config(format!("{}: missing column `{column}`", path.display())))?;
        let mut g = Vec::with_capacity(n);
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let v = &rec[idx];
            let value = if column == "label" {
                u32::from(v == "triggered")
            } else {
                v.parse().map_err(|_| CliError::Config(format!("{}: row {}: bad generation `{v}`", path.display(), row + 1)))?
            };
            g.push(value);
        }
        if g.len() != n {
            return Err(CliError::Config(format!("{}: {} rows for {n} catalog events", path.display(), g.len())));
        }
        return Ok(Some(g));
    }
    Ok(None)
}

fn read_k_function(path: &Path) -> CliResult<KFunction<f64>> {
    let err = |e: String| CliError::Config(format!("{}: {e}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    let (mut radii, mut khat, mut lo, mut hi) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let num = |i: usize| -> CliResult<Option<f64>> {
            let v = rec.get(i).unwrap_or("");
            if v.is_empty() {
                return Ok(None);
            }
            v.parse().map(Some).map_err(|_| err(format!("row {}: bad number `{v}`", row + 1)))
        };
        radii.push(num(0)?.ok_or_else(|| err(format!("row {}: empty radius", row + 1)))?);
        khat.push(num(1)?.ok_or_else(|| err(format!("row {}: empty khat", row + 1)))?);
        lo.push(num(2)?);
        hi.push(num(3)?);
    }
    let envelope = |v: Vec<Option<f64>>| v.into_iter().collect::<Option<Vec<f64>>>();
    Ok(KFunction {
        radii,
        khat,
        envelope_lo: envelope(lo),
        envelope_hi: envelope(hi),
        warnings: Vec::new(),
    })
}
