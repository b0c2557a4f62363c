use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generators::{sample_contaminated, scenario2_covariances};
use crate::admm::{fit_pca, AdmmConfig};
use crate::error::{Error, Result};
use crate::metrics::{classification_metrics, source_angles, ClassificationMetrics};
use crate::numerics::sym_eigen;
use crate::ssmrcd::{band_weights, fit as ssmrcd_fit, select_lambda, SsmrcdConfig};
use crate::tuning::{tune_eta, tune_gamma};
use crate::types::{CovarianceSet, LoadingsMatrix, LoadingsSet, MultiSourceData};

/// `start, start + step, ...` up to `end`, rounded to 12 decimals.
pub fn grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    let n = ((end - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningGrids {
    pub gamma: Vec<f64>,
    pub eta: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl TuningGrids {
    /// `gamma` in steps of 0.1, `eta` in `[0, 5]` by 0.1, `lambda` in `[0, 1]` by 0.05.
    pub fn paper() -> Self {
        Self { gamma: grid(0.0, 1.0, 0.1), eta: grid(0.0, 5.0, 0.1), lambda: grid(0.0, 1.0, 0.05) }
    }

    /// Coarser grids for quick runs.
    pub fn desk() -> Self {
        Self { gamma: grid(0.0, 1.0, 0.25), eta: grid(0.0, 2.0, 0.2), lambda: grid(0.0, 1.0, 0.25) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub p: usize,
    pub n_sources: usize,
    pub n_per_source: usize,
    pub eps_out: f64,
    /// Sources receiving outliers; all when `None`.
    pub contaminated_sources: Option<Vec<usize>>,
    pub seed: u64,
    pub repetitions: usize,
    pub n_components: usize,
}

impl ScenarioConfig {
    pub fn desk() -> Self {
        Self {
            p: 10,
            n_sources: 10,
            n_per_source: 100,
            eps_out: 0.0,
            contaminated_sources: None,
            seed: 1,
            repetitions: 20,
            n_components: 2,
        }
    }

    pub fn paper() -> Self {
        Self { repetitions: 100, ..Self::desk() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 6 {
            return Err(Error::InvalidArgument(format!("scenario needs p >= 6, got {}", self.p)));
        }
        if self.n_sources < 2 || self.repetitions == 0 || self.n_per_source < 2 {
            return Err(Error::InvalidArgument("need N >= 2, n >= 2 and at least one repetition".into()));
        }
        if !(0.0..1.0).contains(&self.eps_out) {
            return Err(Error::InvalidArgument(format!("contamination must lie in [0, 1), got {}", self.eps_out)));
        }
        if self.n_components == 0 || self.n_components > self.p {
            return Err(Error::InvalidArgument(format!("bad component count {}", self.n_components)));
        }
        if let Some(srcs) = &self.contaminated_sources {
            if let Some(s) = srcs.iter().find(|s| **s >= self.n_sources) {
                return Err(Error::Index(format!("contaminated source {s} with N = {}", self.n_sources)));
            }
        }
        Ok(())
    }

    fn contamination_of(&self, source: usize) -> f64 {
        match &self.contaminated_sources {
            Some(srcs) if !srcs.contains(&source) => 0.0,
            _ => self.eps_out,
        }
    }
}

/// Generated data of one repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct Repetition {
    pub data: MultiSourceData,
    /// Outlier flag per row of `data`.
    pub outlier: Vec<bool>,
}

/// Data for repetition `rep`; each repetition draws from its own stream.
pub fn generate_repetition(config: &ScenarioConfig, rep: usize) -> Result<Repetition> {
    config.validate()?;
    let sigmas = scenario2_covariances(config.n_sources, config.p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(rep as u64);
    let mut blocks = Vec::with_capacity(config.n_sources);
    let mut outlier = Vec::with_capacity(config.n_sources * config.n_per_source);
    for (i, s) in sigmas.iter().enumerate() {
        let sample = sample_contaminated(s, config.n_per_source, config.contamination_of(i), &mut rng)?;
        blocks.push(sample.x);
        outlier.extend(sample.outlier);
    }
    Ok(Repetition { data: MultiSourceData::from_blocks(&blocks)?, outlier })
}

/// Leading eigenvectors of the shifting covariances, one loadings matrix per
/// component.
pub fn scenario2_truth(n_sources: usize, p: usize, n_components: usize) -> Result<LoadingsSet> {
    let sigmas = scenario2_covariances(n_sources, p)?;
    let eig = sigmas.iter().map(sym_eigen).collect::<Result<Vec<_>>>()?;
    let components = (0..n_components)
        .map(|k| {
            let mut v = LoadingsMatrix::zeros(p, n_sources);
            for (i, e) in eig.iter().enumerate() {
                v.0.set_column(i, &e.vector(k));
            }
            v
        })
        .collect();
    Ok(LoadingsSet { components })
}

/// What a method hands back for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodFit {
    pub mus: Vec<DVector<f64>>,
    pub loadings: LoadingsSet,
    pub converged: bool,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub eta: Option<f64>,
}

/// A method evaluated by the harness. Implementations must be deterministic
/// in `(rep, data)`.
pub trait Fitter: Sync {
    fn name(&self) -> String;
    fn fit(&self, rep: usize, data: &MultiSourceData, n_components: usize) -> Result<MethodFit>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    SparseRobust,
    SparseNonRobust,
    NonSmoothed,
    NonSparse,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::SparseRobust, Variant::SparseNonRobust, Variant::NonSmoothed, Variant::NonSparse];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SparseRobust => "ssmrcd-sparse-robust",
            Variant::SparseNonRobust => "ssmrcd-sparse-nonrobust",
            Variant::NonSmoothed => "ssmrcd-nonsmoothed",
            Variant::NonSparse => "ssmrcd-nonsparse",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    pub fn alpha(self) -> f64 {
        if self == Variant::SparseNonRobust {
            1.0
        } else {
            0.5
        }
    }
}

/// Built-in pipeline: ssMRCD covariances, tuned sparsity, ADMM loadings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsmrcdMethod {
    pub variant: Variant,
    pub grids: TuningGrids,
    pub admm: AdmmConfig,
    /// Band width of the source weights.
    pub band: usize,
    pub seed: u64,
}

impl SsmrcdMethod {
    pub fn new(variant: Variant, grids: TuningGrids) -> Self {
        Self { variant, grids, admm: AdmmConfig::default(), band: 1, seed: 7 }
    }

    fn covariances(&self, rep: usize, data: &MultiSourceData) -> Result<(CovarianceSet, f64)> {
        let w = band_weights(data.n_sources(), self.band)?;
        let mut cfg = SsmrcdConfig::new(self.variant.alpha(), 0.0, w);
        cfg.seed = self.seed ^ (rep as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        if self.variant == Variant::NonSmoothed {
            return Ok((ssmrcd_fit(data, &cfg)?.covset, 0.0));
        }
        let sel = select_lambda(data, &cfg, &self.grids.lambda)?;
        Ok((sel.fit.covset, sel.lambda))
    }
}

impl Fitter for SsmrcdMethod {
    fn name(&self) -> String {
        self.variant.name().to_string()
    }

    fn fit(&self, rep: usize, data: &MultiSourceData, n_components: usize) -> Result<MethodFit> {
        let (covset, lambda) = self.covariances(rep, data)?;
        let (gamma, eta, tuning_ok) = if self.variant == Variant::NonSparse {
            (0.5, 0.0, true)
        } else {
            let g = tune_gamma(&covset, &self.grids.gamma, &self.grids.eta, &self.admm)?;
            let e = tune_eta(&covset, g.gamma, &self.grids.eta, &self.admm)?;
            let ok = g.path.iter().chain(&e.path).all(|p| p.converged);
            (g.gamma, e.eta, ok)
        };
        let pca = fit_pca(&covset, eta, gamma, n_components, &self.admm)?;
        Ok(MethodFit {
            mus: covset.mus.clone(),
            converged: tuning_ok && pca.converged(),
            loadings: pca.loadings,
            lambda: Some(lambda),
            gamma: (self.variant != Variant::NonSparse).then_some(gamma),
            eta: Some(eta),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionRecord {
    pub rep: usize,
    pub error: Option<String>,
    pub converged: bool,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub eta: Option<f64>,
    /// `angle[k][i]`: angle of the first `k + 1` components in source `i`.
    pub angle: Vec<Vec<f64>>,
    /// `od[k][i]`: mean orthogonal distance of the clean rows of source `i`
    /// using the first `k + 1` components.
    pub od: Vec<Vec<f64>>,
    /// Sparsity recovery per component.
    pub classification: Vec<ClassificationMetrics>,
    pub loadings: Option<LoadingsSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSummary {
    pub source: usize,
    /// Mean angle per subspace size.
    pub angle: Vec<f64>,
    pub od: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub method: String,
    pub config: ScenarioConfig,
    pub records: Vec<RepetitionRecord>,
    pub summary: Vec<MetricSummary>,
    pub per_source: Vec<SourceSummary>,
    pub failures: usize,
}

impl SimulationReport {
    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.summary.iter().find(|m| m.metric == name)
    }
}

fn summarize(metric: String, values: &[f64]) -> MetricSummary {
    let n = values.len();
    let mean = if n == 0 { f64::NAN } else { values.iter().sum::<f64>() / n as f64 };
    let se = if n < 2 {
        f64::NAN
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    };
    MetricSummary { metric, mean, se, count: n }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn evaluate(
    rep: usize,
    generated: &Repetition,
    truth: &LoadingsSet,
    fit: MethodFit,
    keep_loadings: bool,
) -> Result<RepetitionRecord> {
    let data = &generated.data;
    let k_max = truth.len();
    if fit.loadings.len() < k_max || fit.mus.len() != data.n_sources() {
        return Err(Error::Dimension("method returned too few components or centers".into()));
    }
    let mut angle = Vec::with_capacity(k_max);
    let mut od = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let t = LoadingsSet { components: truth.components[..k].to_vec() };
        let e = LoadingsSet { components: fit.loadings.components[..k].to_vec() };
        angle.push(source_angles(&t, &e)?);
        let mut sums = vec![0.0; data.n_sources()];
        let mut counts = vec![0usize; data.n_sources()];
        let bases: Vec<_> = (0..data.n_sources()).map(|i| e.source_basis(i).expect("nonempty")).collect();
        for r in (0..data.n()).filter(|r| !generated.outlier[*r]) {
            let i = data.source_of(r);
            let x = data.x().row(r).transpose() - &fit.mus[i];
            let b = &bases[i];
            sums[i] += (&x - b * b.tr_mul(&x)).norm();
            counts[i] += 1;
        }
        od.push(sums.iter().zip(&counts).map(|(s, c)| if *c > 0 { s / *c as f64 } else { f64::NAN }).collect());
    }
    let classification = (0..k_max)
        .map(|k| classification_metrics(&truth.components[k], &fit.loadings.components[k]))
        .collect::<Result<Vec<_>>>()?;
    Ok(RepetitionRecord {
        rep,
        error: None,
        converged: fit.converged,
        lambda: fit.lambda,
        gamma: fit.gamma,
        eta: fit.eta,
        angle,
        od,
        classification,
        loadings: keep_loadings.then_some(fit.loadings),
    })
}

/// Runs every repetition (in parallel, each on its own random stream) and
/// aggregates in repetition order. Failures are recorded, not raised.
pub fn run_scenario(config: &ScenarioConfig, method: &dyn Fitter, keep_loadings: bool) -> Result<SimulationReport> {
    config.validate()?;
    let truth = scenario2_truth(config.n_sources, config.p, config.n_components)?;
    let records: Vec<RepetitionRecord> = (0..config.repetitions)
        .into_par_iter()
        .map(|rep| {
            let outcome = generate_repetition(config, rep).and_then(|g| {
                let fit = method.fit(rep, &g.data, config.n_components)?;
                evaluate(rep, &g, &truth, fit, keep_loadings)
            });
            outcome.unwrap_or_else(|e| RepetitionRecord {
                rep,
                error: Some(e.to_string()),
                converged: false,
                lambda: None,
                gamma: None,
                eta: None,
                angle: Vec::new(),
                od: Vec::new(),
                classification: Vec::new(),
                loadings: None,
            })
        })
        .collect();

    let ok: Vec<&RepetitionRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let mut summary = Vec::new();
    for k in 0..config.n_components {
        let kk = k + 1;
        summary.push(summarize(format!("angle_k{kk}"), &ok.iter().map(|r| mean(&r.angle[k])).collect::<Vec<_>>()));
        summary.push(summarize(format!("od_k{kk}"), &ok.iter().map(|r| mean(&r.od[k])).collect::<Vec<_>>()));
    }
    for k in 0..config.n_components {
        let pc = k + 1;
        let cls: Vec<&ClassificationMetrics> = ok.iter().map(|r| &r.classification[k]).collect();
        let pick = |f: &dyn Fn(&ClassificationMetrics) -> Option<f64>| cls.iter().filter_map(|c| f(c)).collect::<Vec<_>>();
        summary.push(summarize(format!("tnr_pc{pc}"), &pick(&|c| Some(c.tnr))));
        summary.push(summarize(format!("tpr_pc{pc}"), &pick(&|c| c.tpr)));
        summary.push(summarize(format!("gmean_pc{pc}"), &pick(&|c| c.gmean)));
        summary.push(summarize(format!("f1_pc{pc}"), &pick(&|c| Some(c.f1))));
        summary.push(summarize(format!("z_pc{pc}"), &pick(&|c| Some(c.z_measure))));
        summary.push(summarize(format!("sparsity_pc{pc}"), &pick(&|c| Some(c.sparsity_fraction))));
    }
    let per_source = (0..config.n_sources)
        .map(|i| SourceSummary {
            source: i,
            angle: (0..config.n_components).map(|k| mean(&ok.iter().map(|r| r.angle[k][i]).collect::<Vec<_>>())).collect(),
            od: (0..config.n_components).map(|k| mean(&ok.iter().map(|r| r.od[k][i]).collect::<Vec<_>>())).collect(),
        })
        .collect();
    let failures = records.len() - ok.len();
    Ok(SimulationReport { method: method.name(), config: config.clone(), records, summary, per_source, failures })
}
