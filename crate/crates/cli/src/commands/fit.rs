use std::path::Path;

use mspca_core::admm::{fit_pca, fit_pca_to_cpv, PcaFit};
use mspca_core::metrics::compute_scores;
use mspca_core::tuning::{cpv, CpvTable};
use mspca_core::LoadingsSet;
use serde::{Deserialize, Serialize};

use crate::args::FitCmd;
use crate::commands::{check_admm, check_estimator, estimate, resolve_seed, scaling, CovarianceFile, Problems, TOOL};
use crate::error::{CliError, CliResult};
use crate::io::{num, read_data, read_json, write_json, DataSet, Scaling, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentInfo {
    /// 1-based.
    pub component: usize,
    /// Penalty after the per-component scaling.
    pub eta: f64,
    pub converged: bool,
    pub iterations: usize,
    pub escalations: usize,
    pub rho: f64,
    pub objective: f64,
    pub kept_start: bool,
    pub fully_sparse_sources: Vec<String>,
}

/// Loadings as written by `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadingsFile {
    pub tool: String,
    pub seed: u64,
    pub eta: f64,
    pub gamma: f64,
    pub variables: Vec<String>,
    pub sources: Vec<String>,
    pub loadings: LoadingsSet,
    pub components: Vec<ComponentInfo>,
    pub cpv: CpvTable,
    pub converged: bool,
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Reads the covariance fit (running the estimator on CSV input) and the data
/// used for scores. Flag problems found so far are reported together with
/// estimator problems.
fn load(cmd: &FitCmd, mut problems: Problems) -> CliResult<(CovarianceFile, Option<DataSet>, bool)> {
    if is_json(&cmd.input) {
        problems.finish()?;
        let file: CovarianceFile = read_json(&cmd.input)?;
        let data = match &cmd.data_csv {
            Some(path) => {
                let sc = file.standardization.as_ref().map_or(Scaling::Raw, Scaling::Fixed);
                let ds = read_data(path, &cmd.data.source_col, sc)?;
                if ds.variables != file.variables || ds.sources != file.sources {
                    return Err(CliError::Input(format!(
                        "{} does not match the variables and sources of the fit",
                        path.display()
                    )));
                }
                Some(ds)
            }
            None => None,
        };
        return Ok((file, data, false));
    }
    let seed = resolve_seed(cmd.estimator.seed);
    let ds = read_data(&cmd.input, &cmd.data.source_col, scaling(cmd.data.standardize))?;
    let plan = check_estimator(&cmd.estimator, ds.data.n_sources(), seed, &mut problems);
    problems.finish()?;
    let file = estimate(&ds, plan.expect("validated"), seed)?;
    Ok((file, Some(ds), true))
}

pub fn run(cmd: &FitCmd) -> CliResult<()> {
    let mut problems = Problems::new();
    problems.check(cmd.eta.is_finite() && cmd.eta >= 0.0, || format!("--eta must be nonnegative, got {}", cmd.eta));
    problems.check((0.0..=1.0).contains(&cmd.gamma), || format!("--gamma must lie in [0, 1], got {}", cmd.gamma));
    if let Some(k) = cmd.k {
        problems.check(k >= 1, || "--k must be at least 1".into());
    }
    if let Some(c) = cmd.cpv {
        problems.check(c > 0.0 && c <= 1.0, || format!("--cpv must lie in (0, 1], got {c}"));
    }
    let admm = check_admm(&cmd.admm, &mut problems);
    let (file, data, estimated) = load(cmd, problems)?;
    let covset = &file.fit.covset;
    let p = covset.p();
    if let Some(k) = cmd.k.filter(|k| *k > p) {
        return Err(CliError::Input(format!("--k {k} exceeds the {p} variables")));
    }
    if estimated {
        write_json(&cmd.out_dir.join("fit.json"), &file)?;
    }

    let fit: PcaFit = match cmd.cpv {
        Some(threshold) => fit_pca_to_cpv(covset, cmd.eta, cmd.gamma, threshold, &admm)?,
        None => fit_pca(covset, cmd.eta, cmd.gamma, cmd.k.unwrap_or(1), &admm)?,
    };
    let table = cpv(&fit.loadings, covset)?;
    let label = |i: &usize| file.sources[*i].clone();
    let components = fit
        .results
        .iter()
        .enumerate()
        .map(|(l, r)| ComponentInfo {
            component: l + 1,
            eta: fit.etas[l],
            converged: r.converged,
            iterations: r.iterations,
            escalations: r.escalations,
            rho: r.rho_used,
            objective: r.objective,
            kept_start: r.kept_start,
            fully_sparse_sources: r.fully_sparse_sources.iter().map(label).collect(),
        })
        .collect();
    let out = LoadingsFile {
        tool: TOOL.into(),
        seed: file.seed,
        eta: cmd.eta,
        gamma: cmd.gamma,
        variables: file.variables.clone(),
        sources: file.sources.clone(),
        loadings: fit.loadings.clone(),
        components,
        cpv: table,
        converged: fit.converged(),
    };
    write_json(&cmd.out_dir.join("loadings.json"), &out)?;

    let mut variance = Table::new(&["component", "source", "explained_share"]);
    for (i, src) in out.sources.iter().enumerate() {
        for (l, share) in out.cpv.per_source[i].iter().enumerate() {
            variance.push(vec![(l + 1).to_string(), src.clone(), num(*share)]);
        }
    }
    variance.write(&cmd.out_dir.join("variance.csv"))?;

    if let Some(ds) = &data {
        let scores = compute_scores(&ds.data, covset, &fit.loadings)?;
        let mut header = vec!["row".to_string(), "source".to_string()];
        header.extend((1..=fit.loadings.len()).map(|l| format!("t{l}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut t = Table::new(&header);
        for r in 0..ds.data.n() {
            let mut row = vec![(r + 1).to_string(), ds.sources[ds.data.source_of(r)].clone()];
            row.extend(scores.0.row(r).iter().map(|v| num(*v)));
            t.push(row);
        }
        t.write(&cmd.out_dir.join("scores.csv"))?;
    }

    let k = out.loadings.len();
    eprintln!("fit: {k} component(s), cumulative share {}", out.cpv.cumulative.last().copied().unwrap_or(0.0));
    if !out.converged {
        let bad: Vec<String> = out.components.iter().filter(|c| !c.converged).map(|c| c.component.to_string()).collect();
        return Err(CliError::NonConvergence(format!(
            "ADMM did not converge for component(s) {}; partial results written",
            bad.join(", ")
        )));
    }
    Ok(())
}
