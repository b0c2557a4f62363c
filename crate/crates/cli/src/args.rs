use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mspca_core::admm::AdmmConfig;

pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Parser)]
#[command(name = "mspca", version, about = "Robust multi-source sparse principal component analysis")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "MSPCA_THREADS")]
    pub threads: Option<usize>,
    /// key=value file of default flags; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate smoothed robust covariances for every source.
    Ssmrcd(SsmrcdCmd),
    /// Sparse multi-source loadings, scores and explained variance.
    Fit(FitCmd),
    /// Choose gamma by AUC and eta by the trade-off product.
    Tune(TuneCmd),
    /// Run a simulation study.
    Simulate(SimulateCmd),
    /// Render result files as SVG.
    Plot(PlotCmd),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Standardize {
    MedianMad,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Name of the column holding the source label.
    #[arg(long, default_value = "source")]
    pub source_col: String,
    #[arg(long, value_enum)]
    pub standardize: Option<Standardize>,
}

#[derive(Debug, Clone, Args)]
pub struct EstimatorArgs {
    /// `band:W`, `uniform` or a header-free CSV file.
    #[arg(long, default_value = "band:1")]
    pub weights: String,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    /// Grid for choosing lambda by the residual criterion, e.g. `0:1:0.05`.
    #[arg(long, value_name = "GRID")]
    pub select_lambda: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub n_starts: usize,
    #[arg(long, default_value_t = 50)]
    pub max_csteps: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct AdmmArgs {
    #[arg(long, default_value_t = 1e-4)]
    pub eps_admm: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub eps_root: f64,
    #[arg(long, default_value_t = 5e-3)]
    pub eps_thr: f64,
    #[arg(long, default_value_t = 2000)]
    pub m_max: usize,
    /// Fixed ADMM penalty instead of the data-driven default.
    #[arg(long)]
    pub rho: Option<f64>,
}

impl AdmmArgs {
    pub fn config(&self) -> AdmmConfig {
        AdmmConfig {
            eps_admm: self.eps_admm,
            eps_root: self.eps_root,
            eps_thr: self.eps_thr,
            m_max: self.m_max,
            rho_override: self.rho,
            ..AdmmConfig::default()
        }
    }
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct SsmrcdCmd {
    /// Data CSV with a header row.
    pub input: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[arg(long, default_value = "fit.json")]
    pub out: PathBuf,
    /// Where the lambda trace goes when `--select-lambda` is given.
    #[arg(long, default_value = "lambda_trace.csv")]
    pub trace: PathBuf,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct FitCmd {
    /// A covariance fit (`.json`) or a data CSV.
    pub input: PathBuf,
    /// Data CSV for scores when the input is a covariance fit.
    #[arg(long)]
    pub data_csv: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    pub admm: AdmmArgs,
    #[arg(long)]
    pub eta: f64,
    #[arg(long)]
    pub gamma: f64,
    /// Number of components.
    #[arg(long, conflicts_with = "cpv")]
    pub k: Option<usize>,
    /// Smallest number of components reaching this cumulative share.
    #[arg(long)]
    pub cpv: Option<f64>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TuneCmd {
    /// Covariance fit written by `ssmrcd`.
    pub input: PathBuf,
    #[arg(long, default_value = "0:1:0.1")]
    pub gamma_grid: String,
    #[arg(long, default_value = "0:5:0.1")]
    pub eta_grid: String,
    #[command(flatten)]
    pub admm: AdmmArgs,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    #[value(name = "1")]
    Two,
    #[value(name = "2")]
    Shifting,
    Starts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    Desk,
    Paper,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct SimulateCmd {
    #[arg(long, value_enum)]
    pub scenario: Scenario,
    #[arg(long, value_enum, default_value = "desk")]
    pub profile: Profile,
    #[arg(long, default_value_t = 10)]
    pub p: usize,
    /// Number of sources.
    #[arg(long = "N", default_value_t = 10)]
    pub n_sources: usize,
    /// Observations per source.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Contamination fraction.
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
    /// Contaminate only this source (1-based).
    #[arg(long)]
    pub local: Option<usize>,
    /// Repetitions (profile default when omitted).
    #[arg(long)]
    pub reps: Option<usize>,
    /// Comma list of methods, or `all`.
    #[arg(long, default_value = "ssmrcd-sparse-robust")]
    pub method: String,
    /// Loadings CSV of an external method (`rep,component,source,variable,value`).
    #[arg(long)]
    pub external: Option<PathBuf>,
    /// Centers CSV of the external method (`rep,source,variable,value`).
    #[arg(long, requires = "external")]
    pub external_centers: Option<PathBuf>,
    #[arg(long, default_value = "external")]
    pub external_name: String,
    /// Write the generated data of every repetition to this directory.
    #[arg(long)]
    pub export_data: Option<PathBuf>,
    #[arg(long)]
    pub gamma_grid: Option<String>,
    #[arg(long)]
    pub eta_grid: Option<String>,
    #[arg(long)]
    pub lambda_grid: Option<String>,
    /// Noise standard deviation of the two-source scenario.
    #[arg(long, default_value_t = 0.1)]
    pub noise_sd: f64,
    /// Random starts per grid point of the starting-value study.
    #[arg(long, default_value_t = 25)]
    pub random: usize,
    #[arg(long, default_value_t = 2)]
    pub components: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub admm: AdmmArgs,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    LoadingsHeatmap,
    ScreeBox,
    Path,
    Density,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct PlotCmd {
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub kind: PlotKind,
    /// Numeric column for density plots.
    #[arg(long, default_value = "t1")]
    pub column: String,
    #[arg(long, default_value = "plot.svg")]
    pub out: PathBuf,
}
