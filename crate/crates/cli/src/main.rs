// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Command;

const CONFIG_KEYS: &str = "\
CONFIG FILE (TOML; unknown keys are rejected)

Top level
  seed = <u64>              master seed for every random step (default 0)
  output_dir = <path>       output directory (default <config stem>-out);
                            SEPP_OUTPUT_DIR overrides it
  model_file = <path>       read [model] from this file, e.g. a fit's
                            fitted_model.toml

[domain]
  t_end                     end of the observation window [0, t_end)
  x_min, x_max, y_min, y_max   rectangular region, or
  polygon = [[x, y], ...]   simple polygon

[catalog]
  path                      CSV with header t,x,y[,mark]
  outside = error | drop    rows outside the domain (default error)

[model]
  background = constant | grid | kde        (default constant)
    constant: nu
    grid:     grid_nx, grid_ny, grid_values (row-major from the lower-left
              cell of the domain's bounding box)
    kde:      kde_weights, kde_bandwidths, kde_edge_correction; centres are
              the catalog events
  triggering = none | gaussian-exponential | etas | histogram (default none)
    gaussian-exponential: theta, omega, sigma2
    etas:      k0, alpha, c, p, d, q, m0, use_marks (default true)
    histogram: time_edges, radius_edges, values (row-major by time bin)
  history_tail              drop history past this remaining triggering mass

[simulate]
  method = cluster | ogata  (default cluster)
  pad_time, pad_space       lead-in and spatial margin (default: five kernel
                            scales)
  magnitude_m0, magnitude_b exponential magnitude law for marks
  max_events                cap on simulated events (default 10000000)

[fit]
  method = em | semiparametric | flp | misd   (default em)
  integration = schoenberg | cubature         (default schoenberg)
    schoenberg: truncate_time (default false)
    cubature:   cubature_tol (default 1e-8)
  loglik_tol, param_tol (1e-6), max_iter (500), m_step_tol (1e-8),
  prune_below (0), fix_background (false)
  semiparametric: n_neighbors (25), min_bandwidth (1e-6),
    background_init = unit | data-scaled, grid_size (50), background_tol,
    max_outer (50), edge_correction (true)
  flp: initial_bandwidth (Silverman), min_bandwidth, max_outer (20),
    outer_tol (1e-4), edge_correction (true)

[misd]
  time_edges, radius_edges  histogram bin edges, or
  n_time_bins (10), n_radius_bins (8)   data-driven logarithmic edges
  background = constant | grid, grid_nx, grid_ny

[decluster]
  mode = thin | family-tree | both      (default both)
  refit = <bool>            fit first (default true); otherwise [model] is
                            taken as fitted

[bootstrap]
  replicates (200), level (0.95), early_stop (false), block (100),
  max_failure_fraction (0.2), method = cluster | ogata, pad_time, pad_space,
  covariance = analytic | finite-difference | none
  With a [catalog] the model is fitted first; without one [model] is taken
  as the fitted model.

[diagnose]
  residuals = thin | super-thin | both  (default both)
  super_thin_rate           default n / (|X| T)
  quadrats_x, quadrats_y    quadrat test grid (5 x 5)
  k_max, k_steps (50), k_simulations (99), k_edge_correction = none |
  translation
  voronoi (true), voronoi_tol (1e-8), extrema_grid (200), extrema_refine (21)

[select]
  [select.candidates.<name>] one starting model per candidate, with the
  keys of [model]; each is fitted with [fit]

EXIT STATUS
  0 success, 1 invalid input or configuration, 2 numerical failure";

/// Simulate, fit, decluster and diagnose self-exciting spatio-temporal
/// point processes.
#[derive(Parser)]
#[command(name = "sepp", version, after_long_help = CONFIG_KEYS)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a catalog from [model]; writes catalog.csv, provenance.csv
    /// and scatter.svg.
    #[command(after_long_help = CONFIG_KEYS)]
    Simulate { config: PathBuf },
    /// Fit [model] (or a histogram kernel) to [catalog]; writes
    /// fitted_model.toml, loglik_trace.csv and branching.csv.
    #[command(after_long_help = CONFIG_KEYS)]
    Fit { config: PathBuf },
    /// Histogram-kernel estimation; same as `fit` with method = "misd".
    #[command(after_long_help = CONFIG_KEYS)]
    Misd { config: PathBuf },
    /// Separate background from triggered events; writes declustering.csv
    /// and family_tree.csv.
    #[command(after_long_help = CONFIG_KEYS)]
    Decluster { config: PathBuf },
    /// Parametric bootstrap; writes bootstrap.csv.
    #[command(after_long_help = CONFIG_KEYS)]
    Bootstrap { config: PathBuf },
    /// Residual diagnostics of [model] on [catalog]; writes residual,
    /// K-function and Voronoi CSV and SVG files.
    #[command(after_long_help = CONFIG_KEYS)]
    Diagnose { config: PathBuf },
    /// Fit every candidate and tabulate AIC, BIC and HQ in selection.csv.
    #[command(after_long_help = CONFIG_KEYS)]
    Select { config: PathBuf },
    /// Redraw the SVG figures of a finished run directory.
    Render { run_dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Simulate { config } => commands::run(Command::Simulate, &config),
        Cmd::Fit { config } => commands::run(Command::Fit, &config),
        Cmd::Misd { config } => commands::run(Command::Misd, &config),
        Cmd::Decluster { config } => commands::run(Command::Decluster, &config),
        Cmd::Bootstrap { config } => commands::run(Command::Bootstrap, &config),
        Cmd::Diagnose { config } => commands::run(Command::Diagnose, &config),
        Cmd::Select { config } => commands::run(Command::Select, &config),
        Cmd::Render { run_dir } => commands::render(&run_dir),
    };
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
