//! Run configuration: TOML sections, validation and resolution into core
//! types. Every section rejects unknown keys; `resolve_*` functions fill in
//! defaults so that the echoed config pins down the run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sepp::catalog::{ObservationDomain, OutsidePolicy};
use sepp::decluster::{MisdBackground, MisdConfig};
use sepp::fit::{BackgroundInit, EmConfig, FlpConfig, KernelConfig};
use sepp::geometry::Point;
use sepp::intensity::{BackgroundModel, GridField, HistogramKernel, IntegrationMethod, IntensityModel, TriggeringFamily, WeightedKde};
use sepp::simulate::{default_pads, GutenbergRichter, SimConfig, SimMethod};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Not echoed: the output location is not part of the analysis.
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
    /// TOML file whose `[model]` section is used when `[model]` is absent.
    #[serde(skip_serializing)]
    pub model_file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub catalog: Option<CatalogSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub misd: Option<MisdSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decluster: Option<DeclusterSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnose: Option<DiagnoseSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub select: Option<SelectSection>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub t_end: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_max: Option<f64>,
    /// Vertices `[[x, y], ...]` of a simple polygon.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub polygon: Option<Vec<[f64; 2]>>,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Outside {
    #[default]
    Error,
    Drop,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CatalogSection {
    pub path: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outside: Option<Outside>,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum BackgroundKind {
    #[default]
    Constant,
    Grid,
    Kde,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum TriggeringKind {
    #[default]
    None,
    GaussianExponential,
    Etas,
    Histogram,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub background: BackgroundKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_nx: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_ny: Option<usize>,
    /// Row-major from the lower-left cell of the domain's bounding box.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_values: Option<Vec<f64>>,
    /// Kernel centres are the catalog events, in catalog order.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kde_weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kde_bandwidths: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kde_edge_correction: Option<bool>,
    #[serde(default)]
    pub triggering: TriggeringKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub use_marks: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_edges: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius_edges: Option<Vec<f64>>,
    /// Row-major by time bin, then radius bin.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub history_tail: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum SimMethodKey {
    Ogata,
    #[default]
    Cluster,
}

impl From<SimMethodKey> for SimMethod {
    fn from(k: SimMethodKey) -> Self {
        match k {
            SimMethodKey::Ogata => SimMethod::Ogata,
            SimMethodKey::Cluster => SimMethod::Cluster,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<SimMethodKey>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pad_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pad_space: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub magnitude_m0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub magnitude_b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_events: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    #[default]
    Em,
    Semiparametric,
    Flp,
    Misd,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum IntegrationKey {
    #[default]
    Schoenberg,
    Cubature,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum BackgroundInitKey {
    #[default]
    Unit,
    DataScaled,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<FitMethod>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub integration: Option<IntegrationKey>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncate_time: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cubature_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loglik_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub param_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_step_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prune_below: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fix_background: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_neighbors: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_bandwidth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub background_init: Option<BackgroundInitKey>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub background_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_outer: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edge_correction: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_bandwidth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outer_tol: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum MisdBackgroundKey {
    #[default]
    Constant,
    Grid,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MisdSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_edges: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius_edges: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_time_bins: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_radius_bins: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub background: Option<MisdBackgroundKey>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_nx: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_ny: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum DeclusterMode {
    Thin,
    FamilyTree,
    #[default]
    Both,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DeclusterSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<DeclusterMode>,
    /// Fit the catalog first; otherwise `[model]` is taken as fitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refit: Option<bool>,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceKey {
    #[default]
    Analytic,
    FiniteDifference,
    None,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub early_stop: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_failure_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<SimMethodKey>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pad_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pad_space: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covariance: Option<CovarianceKey>,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualsKey {
    Thin,
    SuperThin,
    #[default]
    Both,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeKey {
    None,
    #[default]
    Translation,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residuals: Option<ResidualsKey>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub super_thin_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quadrats_x: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quadrats_y: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_simulations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_edge_correction: Option<EdgeKey>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub voronoi: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub voronoi_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extrema_grid: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extrema_refine: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SelectSection {
    /// Candidate name to its starting model.
    pub candidates: BTreeMap<String, ModelSection>,
}

/// Reads a config file; relative paths inside it are taken relative to the
/// file's directory and stored absolute.
pub fn load(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message_with_span(&text))))?;
    let base = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let base = std::path::absolute(&base).map_err(|e| CliError::io(&base, e))?;
    if let Some(c) = &mut cfg.catalog {
        c.path = base.join(&c.path);
    }
    if let Some(d) = &cfg.output_dir {
        cfg.output_dir = Some(base.join(d));
    }
    if let Some(m) = cfg.model_file.take() {
        let m = base.join(m);
        if cfg.model.is_some() {
            return Err(CliError::Config("`model_file` and a [model] section are mutually exclusive".into()));
        }
        let text = std::fs::read_to_string(&m).map_err(|e| CliError::io(&m, e))?;
        let file: ModelFile = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", m.display(), e.message_with_span(&text))))?;
        cfg.model = Some(file.model);
    }
    Ok(cfg)
}

/// A file holding just a `[model]` section, such as a fit's output.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub model: ModelSection,
}

trait SpanMessage {
    fn message_with_span(&self, text: &str) -> String;
}

impl SpanMessage for toml::de::Error {
    fn message_with_span(&self, text: &str) -> String {
        match self.span() {
            Some(span) => {
                let line = text[..span.start].matches('\n').count() + 1;
                format!("line {line}: {}", self.message())
            }
            None => self.message().to_string(),
        }
    }
}

fn missing(key: &str) -> CliError {
    CliError::Config(format!("missing key `{key}`"))
}

fn bad(key: &str, message: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("key `{key}`: {message}"))
}

/// Errors when a key is set that does not apply in the current context.
fn reject<V>(key: &str, value: &Option<V>, context: &str) -> CliResult<()> {
    match value {
        Some(_) => Err(bad(key, format!("does not apply to {context}"))),
        None => Ok(()),
    }
}

fn need<V: Clone>(key: &str, value: &Option<V>) -> CliResult<V> {
    value.clone().ok_or_else(|| missing(key))
}

/// Wraps a core validation error with the key it came from.
fn core_key<V>(key: &str, r: sepp::Result<V>) -> CliResult<V> {
    r.map_err(|e| bad(key, e))
}

pub fn require<'a, V>(section: &'a Option<V>, name: &str, command: &str) -> CliResult<&'a V> {
    section.as_ref().ok_or_else(|| CliError::Config(format!("`{command}` needs a [{name}] section")))
}

impl DomainSection {
    pub fn resolve(&self) -> CliResult<ObservationDomain<f64>> {
        let rect = [self.x_min, self.x_max, self.y_min, self.y_max];
        let domain = match (&self.polygon, rect.iter().any(Option::is_some)) {
            (Some(_), true) => return Err(CliError::Config("[domain] takes either `polygon` or x_min/x_max/y_min/y_max, not both".into())),
            (Some(poly), false) => ObservationDomain::polygon(poly.iter().map(|[x, y]| Point::new(*x, *y)).collect(), self.t_end),
            (None, _) => ObservationDomain::rectangle(
                need("domain.x_min", &self.x_min)?,
                need("domain.x_max", &self.x_max)?,
                need("domain.y_min", &self.y_min)?,
                need("domain.y_max", &self.y_max)?,
                self.t_end,
            ),
        };
        domain.map_err(|e| CliError::Config(format!("[domain]: {e}")))
    }
}

impl CatalogSection {
    pub fn resolved(&self) -> Self {
        Self {
            path: self.path.clone(),
            outside: Some(self.outside.unwrap_or_default()),
        }
    }

    pub fn policy(&self) -> OutsidePolicy {
        match self.outside.unwrap_or_default() {
            Outside::Error => OutsidePolicy::Strict,
            Outside::Drop => OutsidePolicy::Drop,
        }
    }
}

/// What the model needs from the surrounding run to be built.
pub struct ModelContext<'a> {
    pub domain: &'a ObservationDomain<f64>,
    /// Kernel centres for a `kde` background.
    pub points: Option<&'a [Point<f64>]>,
    /// Section name used in messages.
    pub section: &'a str,
}

impl ModelSection {
    pub fn build(&self, ctx: &ModelContext<'_>) -> CliResult<IntensityModel<f64>> {
        let s = ctx.section;
        let key = |k: &str| format!("{s}.{k}");
        let background = match self.background {
            BackgroundKind::Constant => {
                for (k, v) in [("grid_nx", self.grid_nx.is_some()), ("grid_ny", self.grid_ny.is_some())] {
                    if v {
                        return Err(bad(&key(k), "does not apply to background = \"constant\""));
                    }
                }
                reject(&key("grid_values"), &self.grid_values, "background = \"constant\"")?;
                self.reject_kde(&key)?;
                core_key(&key("nu"), BackgroundModel::constant(need(&key("nu"), &self.nu)?))?
            }
            BackgroundKind::Grid => {
                reject(&key("nu"), &self.nu, "background = \"grid\"")?;
                self.reject_kde(&key)?;
                let nx = need(&key("grid_nx"), &self.grid_nx)?;
                let ny = need(&key("grid_ny"), &self.grid_ny)?;
                let values = need(&key("grid_values"), &self.grid_values)?;
                let grid = core_key(&key("grid_values"), GridField::new(ctx.domain.bbox(), nx, ny, values))?;
                BackgroundModel::GridField(grid)
            }
            BackgroundKind::Kde => {
                reject(&key("nu"), &self.nu, "background = \"kde\"")?;
                reject(&key("grid_values"), &self.grid_values, "background = \"kde\"")?;
                reject(&key("grid_nx"), &self.grid_nx, "background = \"kde\"")?;
                reject(&key("grid_ny"), &self.grid_ny, "background = \"kde\"")?;
                let points = ctx
                    .points
                    .ok_or_else(|| bad(&key("background"), "\"kde\" needs a [catalog] for its kernel centres"))?;
                let weights = need(&key("kde_weights"), &self.kde_weights)?;
                let bandwidths = need(&key("kde_bandwidths"), &self.kde_bandwidths)?;
                if weights.len() != points.len() || bandwidths.len() != points.len() {
                    return Err(bad(
                        &key("kde_weights"),
                        format!("needs one weight and one bandwidth per catalog event ({})", points.len()),
                    ));
                }
                let mut kde = core_key(&key("kde_weights"), WeightedKde::new(points.to_vec(), weights, bandwidths, ctx.domain.t_end()))?;
                if self.kde_edge_correction.unwrap_or(true) {
                    kde = kde.with_edge_correction(ctx.domain.ring(), 1e-9)?;
                }
                BackgroundModel::WeightedKde(kde)
            }
        };
        let ge = [("theta", self.theta), ("omega", self.omega), ("sigma2", self.sigma2)];
        let etas = [
            ("k0", self.k0),
            ("alpha", self.alpha),
            ("c", self.c),
            ("p", self.p),
            ("d", self.d),
            ("q", self.q),
            ("m0", self.m0),
        ];
        let hist = [
            ("time_edges", self.time_edges.is_some()),
            ("radius_edges", self.radius_edges.is_some()),
            ("values", self.values.is_some()),
        ];
        let context = format!("triggering = \"{}\"", self.triggering.name());
        let reject_all = |keys: &[(&str, bool)]| -> CliResult<()> {
            match keys.iter().find(|(_, set)| *set) {
                Some((k, _)) => Err(bad(&key(k), format!("does not apply to {context}"))),
                None => Ok(()),
            }
        };
        let set = |v: &[(&'static str, Option<f64>)]| v.iter().map(|(k, x)| (*k, x.is_some())).collect::<Vec<_>>();
        let triggering = match self.triggering {
            TriggeringKind::None => {
                reject_all(&set(&ge))?;
                reject_all(&set(&etas))?;
                reject_all(&hist)?;
                reject(&key("use_marks"), &self.use_marks, &context)?;
                reject(&key("history_tail"), &self.history_tail, &context)?;
                None
            }
            TriggeringKind::GaussianExponential => {
                reject_all(&set(&etas))?;
                reject_all(&hist)?;
                reject(&key("use_marks"), &self.use_marks, &context)?;
                let [theta, omega, sigma2] = ge.map(|(k, v)| need(&key(k), &v));
                Some(core_key(&key("theta"), TriggeringFamily::gaussian_exponential(theta?, omega?, sigma2?))?)
            }
            TriggeringKind::Etas => {
                reject_all(&set(&ge))?;
                reject_all(&hist)?;
                let [k0, alpha, c, p, d, q, m0] = etas.map(|(k, v)| need(&key(k), &v));
                Some(core_key(&key("k0"), TriggeringFamily::etas(k0?, alpha?, c?, p?, d?, q?, m0?))?)
            }
            TriggeringKind::Histogram => {
                reject_all(&set(&ge))?;
                reject_all(&set(&etas))?;
                reject(&key("use_marks"), &self.use_marks, &context)?;
                let kernel = HistogramKernel::new(
                    need(&key("time_edges"), &self.time_edges)?,
                    need(&key("radius_edges"), &self.radius_edges)?,
                    need(&key("values"), &self.values)?,
                );
                Some(TriggeringFamily::Histogram(core_key(&key("values"), kernel)?))
            }
        };
        let mut model = IntensityModel::new(background, triggering)?;
        if self.triggering == TriggeringKind::Etas {
            model = model.with_marks(self.use_marks.unwrap_or(true));
        }
        if let Some(tail) = self.history_tail {
            if !(tail > 0.0 && tail < 1.0) {
                return Err(bad(&key("history_tail"), "must lie in (0, 1)"));
            }
        }
        Ok(model.with_history_tail(self.history_tail))
    }

    fn reject_kde(&self, key: &dyn Fn(&str) -> String) -> CliResult<()> {
        let ctx = format!("background = \"{}\"", self.background.name());
        reject(&key("kde_weights"), &self.kde_weights, &ctx)?;
        reject(&key("kde_bandwidths"), &self.kde_bandwidths, &ctx)?;
        reject(&key("kde_edge_correction"), &self.kde_edge_correction, &ctx)
    }

    /// Section describing `model`. A KDE background records weights and
    /// bandwidths only; its centres are the catalog events.
    pub fn from_model(model: &IntensityModel<f64>, kde_edge_correction: bool) -> Self {
        let mut s = Self::default();
        match &model.background {
            BackgroundModel::Constant { nu } => s.nu = Some(*nu),
            BackgroundModel::GridField(g) => {
                s.background = BackgroundKind::Grid;
                let (nx, ny) = g.shape();
                s.grid_nx = Some(nx);
                s.grid_ny = Some(ny);
                s.grid_values = Some(g.values().to_vec());
            }
            BackgroundModel::WeightedKde(k) => {
                s.background = BackgroundKind::Kde;
                s.kde_weights = Some(k.weights().to_vec());
                s.kde_bandwidths = Some(k.bandwidths().to_vec());
                s.kde_edge_correction = Some(kde_edge_correction);
            }
        }
        match &model.triggering {
            None => {}
            Some(TriggeringFamily::GaussianExponential { theta, omega, sigma2 }) => {
                s.triggering = TriggeringKind::GaussianExponential;
                (s.theta, s.omega, s.sigma2) = (Some(*theta), Some(*omega), Some(*sigma2));
            }
            Some(TriggeringFamily::EtasPowerLaw { k0, alpha, c, p, d, q, m0 }) => {
                s.triggering = TriggeringKind::Etas;
                (s.k0, s.alpha, s.c, s.p, s.d, s.q, s.m0) = (Some(*k0), Some(*alpha), Some(*c), Some(*p), Some(*d), Some(*q), Some(*m0));
                s.use_marks = Some(model.uses_marks);
            }
            Some(TriggeringFamily::Histogram(h)) => {
                s.triggering = TriggeringKind::Histogram;
                s.time_edges = Some(h.time_edges().to_vec());
                s.radius_edges = Some(h.radius_edges().to_vec());
                s.values = Some(h.values().to_vec());
            }
        }
        if model.triggering.is_some() {
            s.history_tail = model.history_tail;
        }
        s
    }
}

impl BackgroundKind {
    fn name(&self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::Grid => "grid",
            Self::Kde => "kde",
        }
    }
}

impl TriggeringKind {
    fn name(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::GaussianExponential => "gaussian-exponential",
            Self::Etas => "etas",
            Self::Histogram => "histogram",
        }
    }
}

impl SimulateSection {
    pub fn resolve(&self, seed: u64, model: &IntensityModel<f64>) -> CliResult<(Self, SimConfig<f64>)> {
        let method = self.method.unwrap_or_default();
        let (pt, ps) = default_pads(model);
        let mut cfg = SimConfig::new(seed, method.into());
        cfg.pad_time = self.pad_time.unwrap_or(pt);
        cfg.pad_space = self.pad_space.unwrap_or(ps);
        cfg.max_events = self.max_events.unwrap_or(cfg.max_events);
        cfg.magnitudes = match (self.magnitude_m0, self.magnitude_b) {
            (Some(m0), Some(b)) => Some(GutenbergRichter { m0, b }),
            (None, None) => None,
            (Some(_), None) => return Err(missing("simulate.magnitude_b")),
            (None, Some(_)) => return Err(missing("simulate.magnitude_m0")),
        };
        let resolved = Self {
            method: Some(method),
            pad_time: Some(cfg.pad_time),
            pad_space: Some(cfg.pad_space),
            magnitude_m0: self.magnitude_m0,
            magnitude_b: self.magnitude_b,
            max_events: Some(cfg.max_events),
        };
        Ok((resolved, cfg))
    }
}

/// Core settings for the chosen fitting method.
pub enum FitPlan {
    Em(EmConfig<f64>),
    Semiparametric(KernelConfig<f64>, EmConfig<f64>),
    Flp(FlpConfig<f64>),
    Misd(MisdConfig<f64>),
}

impl FitSection {
    pub fn method(&self) -> FitMethod {
        self.method.unwrap_or_default()
    }

    /// Resolves the EM keys shared by all methods and checks that only the
    /// chosen method's keys are set.
    pub fn resolve(&self, misd: Option<&MisdSection>) -> CliResult<(Self, FitPlan)> {
        let method = self.method();
        let integration = self.integration.unwrap_or_default();
        let mut r = Self {
            method: Some(method),
            integration: Some(integration),
            ..Self::default()
        };
        let defaults = EmConfig::<f64>::default();
        let em_method = match integration {
            IntegrationKey::Schoenberg => {
                reject("fit.cubature_tol", &self.cubature_tol, "integration = \"schoenberg\"")?;
                r.truncate_time = Some(self.truncate_time.unwrap_or(false));
                IntegrationMethod::Schoenberg {
                    truncate_time: r.truncate_time.unwrap(),
                }
            }
            IntegrationKey::Cubature => {
                reject("fit.truncate_time", &self.truncate_time, "integration = \"cubature\"")?;
                let tol = self.cubature_tol.unwrap_or(1e-8);
                if !(tol > 0.0) {
                    return Err(bad("fit.cubature_tol", "must be positive"));
                }
                r.cubature_tol = Some(tol);
                IntegrationMethod::Cubature { tol }
            }
        };
        let em = EmConfig {
            method: em_method,
            loglik_tol: self.loglik_tol.unwrap_or(defaults.loglik_tol),
            param_tol: self.param_tol.unwrap_or(defaults.param_tol),
            max_iter: self.max_iter.unwrap_or(defaults.max_iter),
            m_step_tol: self.m_step_tol.unwrap_or(defaults.m_step_tol),
            prune_below: self.prune_below.unwrap_or(defaults.prune_below),
            interior: None,
            fix_background: self.fix_background.unwrap_or(false),
        };
        for (k, v) in [("fit.loglik_tol", em.loglik_tol), ("fit.param_tol", em.param_tol), ("fit.m_step_tol", em.m_step_tol)] {
            if !(v > 0.0) {
                return Err(bad(k, "must be positive"));
            }
        }
        if !(0.0..1.0).contains(&em.prune_below) {
            return Err(bad("fit.prune_below", "must lie in [0, 1)"));
        }
        if em.max_iter == 0 {
            return Err(bad("fit.max_iter", "must be positive"));
        }
        r.loglik_tol = Some(em.loglik_tol);
        r.param_tol = Some(em.param_tol);
        r.max_iter = Some(em.max_iter);
        r.m_step_tol = Some(em.m_step_tol);
        r.prune_below = Some(em.prune_below);
        r.fix_background = Some(em.fix_background);

        let ctx = format!("method = \"{}\"", method.name());
        let kernel_keys_unset = |s: &Self| -> CliResult<()> {
            reject("fit.n_neighbors", &s.n_neighbors, &ctx)?;
            reject("fit.background_init", &s.background_init, &ctx)?;
            reject("fit.grid_size", &s.grid_size, &ctx)?;
            reject("fit.background_tol", &s.background_tol, &ctx)
        };
        let flp_keys_unset = |s: &Self| -> CliResult<()> {
            reject("fit.initial_bandwidth", &s.initial_bandwidth, &ctx)?;
            reject("fit.outer_tol", &s.outer_tol, &ctx)
        };
        let shared_unset = |s: &Self| -> CliResult<()> {
            reject("fit.min_bandwidth", &s.min_bandwidth, &ctx)?;
            reject("fit.max_outer", &s.max_outer, &ctx)?;
            reject("fit.edge_correction", &s.edge_correction, &ctx)
        };
        if method != FitMethod::Misd && misd.is_some() {
            return Err(CliError::Config(format!("[misd] does not apply to fit {ctx}")));
        }
        let plan = match method {
            FitMethod::Em => {
                kernel_keys_unset(self)?;
                flp_keys_unset(self)?;
                shared_unset(self)?;
                FitPlan::Em(em)
            }
            FitMethod::Misd => {
                kernel_keys_unset(self)?;
                flp_keys_unset(self)?;
                shared_unset(self)?;
                FitPlan::Misd(MisdConfig {
                    em,
                    ..MisdConfig::default()
                })
            }
            FitMethod::Semiparametric => {
                flp_keys_unset(self)?;
                let d = KernelConfig::<f64>::default();
                let kernel = KernelConfig {
                    n_neighbors: self.n_neighbors.unwrap_or(d.n_neighbors),
                    min_bandwidth: self.min_bandwidth.unwrap_or(d.min_bandwidth),
                    init: match self.background_init.unwrap_or_default() {
                        BackgroundInitKey::Unit => BackgroundInit::Unit,
                        BackgroundInitKey::DataScaled => BackgroundInit::DataScaled,
                    },
                    grid_size: self.grid_size.unwrap_or(d.grid_size),
                    tol: self.background_tol,
                    max_outer: self.max_outer.unwrap_or(d.max_outer),
                    edge_correction: self.edge_correction.unwrap_or(d.edge_correction),
                };
                if kernel.n_neighbors == 0 {
                    return Err(bad("fit.n_neighbors", "must be positive"));
                }
                if kernel.grid_size == 0 {
                    return Err(bad("fit.grid_size", "must be positive"));
                }
                r.n_neighbors = Some(kernel.n_neighbors);
                r.min_bandwidth = Some(kernel.min_bandwidth);
                r.background_init = Some(self.background_init.unwrap_or_default());
                r.grid_size = Some(kernel.grid_size);
                r.background_tol = kernel.tol;
                r.max_outer = Some(kernel.max_outer);
                r.edge_correction = Some(kernel.edge_correction);
                FitPlan::Semiparametric(kernel, em)
            }
            FitMethod::Flp => {
                kernel_keys_unset(self)?;
                let d = FlpConfig::<f64>::default();
                let flp = FlpConfig {
                    initial_bandwidth: self.initial_bandwidth,
                    min_bandwidth: self.min_bandwidth.unwrap_or(d.min_bandwidth),
                    max_outer: self.max_outer.unwrap_or(d.max_outer),
                    tol: self.outer_tol.unwrap_or(d.tol),
                    edge_correction: self.edge_correction.unwrap_or(d.edge_correction),
                    em,
                };
                if let Some(h) = flp.initial_bandwidth {
                    if !(h > 0.0) {
                        return Err(bad("fit.initial_bandwidth", "must be positive"));
                    }
                }
                r.initial_bandwidth = flp.initial_bandwidth;
                r.min_bandwidth = Some(flp.min_bandwidth);
                r.max_outer = Some(flp.max_outer);
                r.outer_tol = Some(flp.tol);
                r.edge_correction = Some(flp.edge_correction);
                FitPlan::Flp(flp)
            }
        };
        Ok((r, plan))
    }
}

impl FitMethod {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Em => "em",
            Self::Semiparametric => "semiparametric",
            Self::Flp => "flp",
            Self::Misd => "misd",
        }
    }
}

impl MisdSection {
    /// Fills `config` from the section. Bin edges left unset are chosen
    /// from `catalog` so that the echo records the edges actually used.
    pub fn resolve(&self, config: &mut MisdConfig<f64>, catalog: &sepp::catalog::EventCatalog<f64>) -> CliResult<Self> {
        let nt = self.n_time_bins.unwrap_or(config.n_time_bins);
        let nr = self.n_radius_bins.unwrap_or(config.n_radius_bins);
        let (time_edges, radius_edges) = match (&self.time_edges, &self.radius_edges) {
            (Some(t), Some(r)) => {
                reject("misd.n_time_bins", &self.n_time_bins, "explicit `time_edges`")?;
                reject("misd.n_radius_bins", &self.n_radius_bins, "explicit `radius_edges`")?;
                (t.clone(), r.clone())
            }
            (t, r) => {
                if nt == 0 || nr == 0 {
                    return Err(bad("misd.n_time_bins", "bin counts must be positive"));
                }
                let (dt, dr) = sepp::decluster::default_bins(catalog, nt, nr)?;
                (t.clone().unwrap_or(dt), r.clone().unwrap_or(dr))
            }
        };
        core_key("misd.time_edges", HistogramKernel::zeros(time_edges.clone(), radius_edges.clone()))?;
        config.time_edges = Some(time_edges.clone());
        config.radius_edges = Some(radius_edges.clone());
        let kind = self.background.unwrap_or_default();
        config.background = match kind {
            MisdBackgroundKey::Constant => {
                reject("misd.grid_nx", &self.grid_nx, "background = \"constant\"")?;
                reject("misd.grid_ny", &self.grid_ny, "background = \"constant\"")?;
                MisdBackground::Constant
            }
            MisdBackgroundKey::Grid => {
                let nx = need("misd.grid_nx", &self.grid_nx)?;
                let ny = need("misd.grid_ny", &self.grid_ny)?;
                if nx == 0 || ny == 0 {
                    return Err(bad("misd.grid_nx", "grid must be non-empty"));
                }
                MisdBackground::Grid { nx, ny }
            }
        };
        Ok(Self {
            time_edges: Some(time_edges),
            radius_edges: Some(radius_edges),
            n_time_bins: None,
            n_radius_bins: None,
            background: Some(kind),
            grid_nx: self.grid_nx,
            grid_ny: self.grid_ny,
        })
    }
}
