pub mod fit;
pub mod plot;
pub mod simulate;
pub mod ssmrcd;
pub mod tune;

use mspca_core::admm::AdmmConfig;
use mspca_core::ssmrcd::{fit as ssmrcd_fit, select_lambda, SsmrcdConfig, SsmrcdFit};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::args::{AdmmArgs, EstimatorArgs, Standardize, DEFAULT_SEED};
use crate::error::{CliError, CliResult};
use crate::io::{parse_grid, read_weights, DataSet, Scaling, Standardization};

pub const TOOL: &str = concat!("mspca ", env!("CARGO_PKG_VERSION"));

/// Covariance fit as written by `ssmrcd`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceFile {
    pub tool: String,
    pub seed: u64,
    pub variables: Vec<String>,
    pub sources: Vec<String>,
    pub standardization: Option<Standardization>,
    pub weights: DMatrix<f64>,
    /// `(lambda, R)` pairs when lambda was selected.
    pub lambda_trace: Option<Vec<(f64, f64)>>,
    pub fit: SsmrcdFit,
}

pub fn scaling(flag: Option<Standardize>) -> Scaling<'static> {
    match flag {
        Some(Standardize::MedianMad) => Scaling::MedianMad,
        None => Scaling::Raw,
    }
}

pub fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        eprintln!("seed: {DEFAULT_SEED} (default)");
        DEFAULT_SEED
    })
}

/// Collected problems become one configuration error.
#[derive(Default)]
pub struct Problems(Vec<String>);

impl Problems {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if !ok {
            self.0.push(msg());
        }
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn add(&mut self, msg: String) {
        self.0.push(msg);
    }

    pub fn finish(self) -> CliResult<()> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(self.0))
        }
    }
}

pub fn check_admm(args: &AdmmArgs, problems: &mut Problems) -> AdmmConfig {
    let cfg = args.config();
    let pos = |x: f64| x.is_finite() && x > 0.0;
    problems.check(pos(cfg.eps_admm), || format!("--eps-admm must be positive, got {}", cfg.eps_admm));
    problems.check(pos(cfg.eps_root), || format!("--eps-root must be positive, got {}", cfg.eps_root));
    problems.check(pos(cfg.eps_thr), || format!("--eps-thr must be positive, got {}", cfg.eps_thr));
    problems.check(cfg.m_max > 0, || "--m-max must be positive".into());
    if let Some(r) = cfg.rho_override {
        problems.check(pos(r), || format!("--rho must be positive, got {r}"));
    }
    cfg
}

pub struct EstimatorPlan {
    pub config: SsmrcdConfig,
    pub grid: Option<Vec<f64>>,
}

pub fn check_estimator(args: &EstimatorArgs, n_sources: usize, seed: u64, problems: &mut Problems) -> Option<EstimatorPlan> {
    problems.check((0.5..=1.0).contains(&args.alpha), || format!("--alpha must lie in [0.5, 1], got {}", args.alpha));
    problems.check((0.0..=1.0).contains(&args.lambda), || format!("--lambda must lie in [0, 1], got {}", args.lambda));
    problems.check(args.n_starts > 0, || "--n-starts must be positive".into());
    problems.check(args.max_csteps > 0, || "--max-csteps must be positive".into());
    let grid = match args.select_lambda.as_deref().map(parse_grid) {
        Some(Ok(g)) => {
            problems.check(g.iter().all(|l| (0.0..=1.0).contains(l)), || "--select-lambda values must lie in [0, 1]".into());
            Some(g)
        }
        Some(Err(e)) => {
            problems.add(format!("--select-lambda: {e}"));
            None
        }
        None => None,
    };
    let weights = match read_weights(&args.weights, n_sources) {
        Ok(w) => w,
        Err(e) => {
            problems.add(format!("--weights: {e}"));
            return None;
        }
    };
    if let Err(e) = mspca_core::ssmrcd::validate_weights(&weights, n_sources) {
        problems.add(format!("--weights: {e}"));
    }
    let mut config = SsmrcdConfig::new(args.alpha, args.lambda, weights);
    config.n_starts = args.n_starts;
    config.max_csteps = args.max_csteps;
    config.seed = seed;
    Some(EstimatorPlan { config, grid })
}

pub fn estimate(ds: &DataSet, plan: EstimatorPlan, seed: u64) -> CliResult<CovarianceFile> {
    let (fit, trace) = match &plan.grid {
        Some(grid) => {
            let sel = select_lambda(&ds.data, &plan.config, grid)?;
            (sel.fit, Some(sel.trace))
        }
        None => (ssmrcd_fit(&ds.data, &plan.config)?, None),
    };
    Ok(CovarianceFile {
        tool: TOOL.into(),
        seed,
        variables: ds.variables.clone(),
        sources: ds.sources.clone(),
        standardization: ds.standardization.clone(),
        weights: plan.config.weights,
        lambda_trace: trace,
        fit,
    })
}
