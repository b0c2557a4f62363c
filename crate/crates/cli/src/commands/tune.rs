use mspca_core::tuning::{tune_eta, tune_gamma, PathPoint};
use serde::{Deserialize, Serialize};

use crate::args::TuneCmd;
use crate::commands::{check_admm, CovarianceFile, Problems, TOOL};
use crate::error::{CliError, CliResult};
use crate::io::{num, parse_grid, read_json, write_json, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedParams {
    pub tool: String,
    pub seed: u64,
    pub gamma: f64,
    pub eta: f64,
    /// `(gamma, auc)` per grid value.
    pub aucs: Vec<(f64, f64)>,
    pub converged: bool,
}

fn path_table(points: &[PathPoint], selected: impl Fn(&PathPoint) -> bool) -> Table {
    let mut t = Table::new(&["gamma", "eta", "sparsity", "scaled_variance", "entrywise_sparsity", "tpo", "converged", "selected"]);
    for p in points {
        t.push(vec![
            num(p.gamma),
            num(p.eta),
            num(p.sparsity_s),
            num(p.scaled_var),
            num(p.entrywise_sparsity),
            num(p.tpo),
            p.converged.to_string(),
            selected(p).to_string(),
        ]);
    }
    t
}

pub fn run(cmd: &TuneCmd) -> CliResult<()> {
    let mut problems = Problems::new();
    let gammas = parse_grid(&cmd.gamma_grid).map_err(|e| problems.add(format!("--gamma-grid: {e}"))).ok();
    let etas = parse_grid(&cmd.eta_grid).map_err(|e| problems.add(format!("--eta-grid: {e}"))).ok();
    if let Some(g) = &gammas {
        problems.check(g.iter().all(|x| (0.0..=1.0).contains(x)), || "--gamma-grid values must lie in [0, 1]".into());
    }
    if let Some(e) = &etas {
        problems.check(e.iter().all(|x| *x >= 0.0), || "--eta-grid values must be nonnegative".into());
    }
    let admm = check_admm(&cmd.admm, &mut problems);
    problems.finish()?;
    let (gammas, etas) = (gammas.expect("validated"), etas.expect("validated"));
    let file: CovarianceFile = read_json(&cmd.input)?;
    let covset = &file.fit.covset;

    let g = tune_gamma(covset, &gammas, &etas, &admm)?;
    let e = tune_eta(covset, g.gamma, &etas, &admm)?;
    let converged = g.path.iter().chain(&e.path).all(|p| p.converged);
    let params = TunedParams { tool: TOOL.into(), seed: file.seed, gamma: g.gamma, eta: e.eta, aucs: g.aucs.clone(), converged };
    write_json(&cmd.out_dir.join("params.json"), &params)?;
    path_table(&e.path, |p| p.eta == e.eta).write(&cmd.out_dir.join("path.csv"))?;
    path_table(&g.path, |p| p.gamma == g.gamma).write(&cmd.out_dir.join("gamma_paths.csv"))?;
    let mut auc = Table::new(&["gamma", "auc", "selected"]);
    for (gm, a) in &g.aucs {
        auc.push(vec![num(*gm), num(*a), (*gm == g.gamma).to_string()]);
    }
    auc.write(&cmd.out_dir.join("auc.csv"))?;
    eprintln!("tune: gamma = {}, eta = {}", g.gamma, e.eta);
    if !converged {
        return Err(CliError::NonConvergence("some tuning solves did not converge; results written".into()));
    }
    Ok(())
}
