use std::path::Path;

use mspca_core::admm::AdmmConfig;
use mspca_core::metrics::ClassificationMetrics;
use mspca_core::simulation::{
    generate_repetition, run_scenario, scenario1_covariances, scenario1_study, starting_value_study, Fitter, Scenario1Config,
    ScenarioConfig, SimulationReport, SsmrcdMethod, StartStudyConfig, TuningGrids, Variant,
};
use mspca_core::CovarianceSet;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::args::{Profile, Scenario, SimulateCmd};
use crate::commands::{check_admm, resolve_seed, Problems, TOOL};
use crate::error::{CliError, CliResult};
use crate::external::ExternalFitter;
use crate::io::{num, opt, parse_grid, write_json, Table};

fn grid_flag(flag: &str, value: &Option<String>, problems: &mut Problems) -> Option<Vec<f64>> {
    value.as_deref().and_then(|v| parse_grid(v).map_err(|e| problems.add(format!("--{flag}: {e}"))).ok())
}

fn metrics_row(c: &ClassificationMetrics) -> Vec<String> {
    vec![num(c.tnr), opt(c.tpr), opt(c.gmean), num(c.f1), num(c.z_measure), num(c.sparsity_fraction)]
}

const METRIC_COLUMNS: [&str; 6] = ["tnr", "tpr", "gmean", "f1", "z", "sparsity"];

fn with_metrics(prefix: &[&str]) -> Vec<String> {
    prefix.iter().chain(METRIC_COLUMNS.iter()).map(|s| s.to_string()).collect()
}

fn table(columns: &[String]) -> Table {
    Table::new(&columns.iter().map(String::as_str).collect::<Vec<_>>())
}

pub fn run(cmd: &SimulateCmd) -> CliResult<()> {
    let seed = resolve_seed(cmd.seed);
    let mut problems = Problems::new();
    let admm = check_admm(&cmd.admm, &mut problems);
    let gamma_grid = grid_flag("gamma-grid", &cmd.gamma_grid, &mut problems);
    let eta_grid = grid_flag("eta-grid", &cmd.eta_grid, &mut problems);
    let lambda_grid = grid_flag("lambda-grid", &cmd.lambda_grid, &mut problems);
    problems.check(cmd.components >= 1 && cmd.components <= cmd.p, || format!("--components must lie in 1..={}", cmd.p));
    problems.check(cmd.reps != Some(0), || "--reps must be positive".into());
    match cmd.scenario {
        Scenario::Shifting => shifting(cmd, seed, admm, gamma_grid, eta_grid, lambda_grid, problems),
        Scenario::Two => two_source(cmd, seed, admm, gamma_grid, eta_grid, problems),
        Scenario::Starts => starts(cmd, seed, gamma_grid, eta_grid, problems),
    }
}

fn methods(cmd: &SimulateCmd, grids: &TuningGrids, admm: &AdmmConfig, seed: u64, problems: &mut Problems) -> Vec<Box<dyn Fitter>> {
    let mut out: Vec<Box<dyn Fitter>> = Vec::new();
    let names: Vec<&str> = if cmd.method == "all" {
        Variant::ALL.iter().map(|v| v.name()).collect()
    } else {
        cmd.method.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
    };
    for name in names {
        if name == cmd.external_name && cmd.external.is_some() {
            continue;
        }
        match Variant::parse(name) {
            Some(v) => {
                let mut m = SsmrcdMethod::new(v, grids.clone());
                m.admm = admm.clone();
                m.seed = seed;
                out.push(Box::new(m));
            }
            None => problems.add(format!("--method: unknown method '{name}'")),
        }
    }
    if let Some(path) = &cmd.external {
        match ExternalFitter::load(&cmd.external_name, path, cmd.external_centers.as_deref()) {
            Ok(f) => out.push(Box::new(f)),
            Err(e) => problems.add(format!("--external: {e}")),
        }
    }
    if out.is_empty() {
        problems.add("no method selected".into());
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn shifting(
    cmd: &SimulateCmd,
    seed: u64,
    admm: AdmmConfig,
    gamma_grid: Option<Vec<f64>>,
    eta_grid: Option<Vec<f64>>,
    lambda_grid: Option<Vec<f64>>,
    mut problems: Problems,
) -> CliResult<()> {
    let base = match cmd.profile {
        Profile::Desk => ScenarioConfig::desk(),
        Profile::Paper => ScenarioConfig::paper(),
    };
    let mut grids = match cmd.profile {
        Profile::Desk => TuningGrids::desk(),
        Profile::Paper => TuningGrids::paper(),
    };
    grids.gamma = gamma_grid.unwrap_or(grids.gamma);
    grids.eta = eta_grid.unwrap_or(grids.eta);
    grids.lambda = lambda_grid.unwrap_or(grids.lambda);
    if let Some(l) = cmd.local {
        problems.check(l >= 1 && l <= cmd.n_sources, || format!("--local must lie in 1..={}", cmd.n_sources));
    }
    let config = ScenarioConfig {
        p: cmd.p,
        n_sources: cmd.n_sources,
        n_per_source: cmd.n,
        eps_out: cmd.eps,
        contaminated_sources: cmd.local.map(|l| vec![l.saturating_sub(1)]),
        seed,
        repetitions: cmd.reps.unwrap_or(base.repetitions),
        n_components: cmd.components,
    };
    if let Err(e) = config.validate() {
        problems.add(e.to_string());
    }
    let methods = methods(cmd, &grids, &admm, seed, &mut problems);
    problems.finish()?;

    if let Some(dir) = &cmd.export_data {
        export_data(dir, &config)?;
    }

    let reports = methods.iter().map(|m| run_scenario(&config, m.as_ref(), false)).collect::<mspca_core::Result<Vec<_>>>()?;
    write_reports(&cmd.out_dir, &reports)?;
    for r in &reports {
        let a = r.metric("angle_k1").map_or(f64::NAN, |m| m.mean);
        eprintln!("{}: mean PC1 angle {a:.4}, {} failed repetition(s)", r.method, r.failures);
    }
    if reports.iter().any(|r| r.failures > 0) {
        return Err(CliError::NonConvergence("some repetitions failed; see the error column of records.csv".into()));
    }
    Ok(())
}

fn export_data(dir: &Path, config: &ScenarioConfig) -> CliResult<()> {
    for rep in 0..config.repetitions {
        let g = generate_repetition(config, rep)?;
        let mut header = vec!["source".to_string(), "outlier".to_string()];
        header.extend((1..=config.p).map(|j| format!("x{j}")));
        let mut t = table(&header);
        for r in 0..g.data.n() {
            let mut row = vec![(g.data.source_of(r) + 1).to_string(), u8::from(g.outlier[r]).to_string()];
            row.extend(g.data.x().row(r).iter().map(|v| num(*v)));
            t.push(row);
        }
        t.write(&dir.join(format!("rep_{:04}.csv", rep + 1)))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ReportFile<'a> {
    tool: &'a str,
    reports: &'a [SimulationReport],
}

fn write_reports(dir: &Path, reports: &[SimulationReport]) -> CliResult<()> {
    write_json(&dir.join("report.json"), &ReportFile { tool: TOOL, reports })?;
    let mut summary = Table::new(&["method", "seed", "metric", "mean", "se", "count"]);
    let mut per_source = Table::new(&["method", "source", "k", "angle", "od"]);
    let mut records = Table::new(&["method", "rep", "k", "source", "angle", "od", "converged", "lambda", "gamma", "eta", "error"]);
    let mut cls = table(&with_metrics(&["method", "rep", "component"]));
    for r in reports {
        for m in &r.summary {
            summary.push(vec![r.method.clone(), r.config.seed.to_string(), m.metric.clone(), num(m.mean), num(m.se), m.count.to_string()]);
        }
        for s in &r.per_source {
            for k in 0..s.angle.len() {
                per_source.push(vec![r.method.clone(), (s.source + 1).to_string(), (k + 1).to_string(), num(s.angle[k]), num(s.od[k])]);
            }
        }
        for rec in &r.records {
            let common = |k: String, src: String, a: String, o: String| {
                vec![
                    r.method.clone(),
                    (rec.rep + 1).to_string(),
                    k,
                    src,
                    a,
                    o,
                    rec.converged.to_string(),
                    opt(rec.lambda),
                    opt(rec.gamma),
                    opt(rec.eta),
                    rec.error.clone().unwrap_or_default(),
                ]
            };
            if rec.error.is_some() {
                records.push(common("NA".into(), "NA".into(), "NA".into(), "NA".into()));
                continue;
            }
            for k in 0..rec.angle.len() {
                for i in 0..rec.angle[k].len() {
                    records.push(common((k + 1).to_string(), (i + 1).to_string(), num(rec.angle[k][i]), num(rec.od[k][i])));
                }
            }
            for (l, c) in rec.classification.iter().enumerate() {
                let mut row = vec![r.method.clone(), (rec.rep + 1).to_string(), (l + 1).to_string()];
                row.extend(metrics_row(c));
                cls.push(row);
            }
        }
    }
    summary.write(&dir.join("summary.csv"))?;
    per_source.write(&dir.join("per_source.csv"))?;
    records.write(&dir.join("records.csv"))?;
    cls.write(&dir.join("classification.csv"))
}

fn two_source(
    cmd: &SimulateCmd,
    seed: u64,
    admm: AdmmConfig,
    gamma_grid: Option<Vec<f64>>,
    eta_grid: Option<Vec<f64>>,
    mut problems: Problems,
) -> CliResult<()> {
    problems.check(cmd.noise_sd.is_finite() && cmd.noise_sd >= 0.0, || "--noise-sd must be nonnegative".into());
    let defaults = Scenario1Config::default();
    let config = Scenario1Config {
        p: cmd.p,
        noise_sd: cmd.noise_sd,
        repetitions: cmd.reps.unwrap_or(match cmd.profile {
            Profile::Desk => 20,
            Profile::Paper => 100,
        }),
        seed,
        gammas: gamma_grid.unwrap_or(defaults.gammas),
        etas: eta_grid.unwrap_or(defaults.etas),
        n_components: cmd.components,
        admm,
    };
    problems.finish()?;
    let records = scenario1_study(&config)?;
    let mut t = table(&with_metrics(&["seed", "rep", "gamma", "eta", "component", "converged"]));
    let mut loadings = Table::new(&["rep", "gamma", "eta", "component", "source", "variable", "value"]);
    for r in &records {
        let mut row = vec![seed.to_string(), (r.rep + 1).to_string(), num(r.gamma), num(r.eta), (r.component + 1).to_string(), r.converged.to_string()];
        row.extend(metrics_row(&r.metrics));
        t.push(row);
        for i in 0..r.loadings.n_sources() {
            for j in 0..r.loadings.p() {
                loadings.push(vec![
                    (r.rep + 1).to_string(),
                    num(r.gamma),
                    num(r.eta),
                    (r.component + 1).to_string(),
                    (i + 1).to_string(),
                    (j + 1).to_string(),
                    num(r.loadings.0[(j, i)]),
                ]);
            }
        }
    }
    t.write(&cmd.out_dir.join("scenario1.csv"))?;
    loadings.write(&cmd.out_dir.join("scenario1_loadings.csv"))?;
    eprintln!("scenario 1: {} fits over {} repetitions", records.len(), config.repetitions);
    if records.iter().any(|r| !r.converged) {
        return Err(CliError::NonConvergence("some fits did not converge; results written".into()));
    }
    Ok(())
}

fn starts(cmd: &SimulateCmd, seed: u64, gamma_grid: Option<Vec<f64>>, eta_grid: Option<Vec<f64>>, mut problems: Problems) -> CliResult<()> {
    problems.check(cmd.random >= 1, || "--random must be at least 1".into());
    let mut config = StartStudyConfig::for_dimension(cmd.p);
    config.gammas = gamma_grid.unwrap_or(config.gammas);
    config.etas = eta_grid.unwrap_or(config.etas);
    config.n_random = if cmd.profile == Profile::Paper && cmd.random == 25 { 100 } else { cmd.random };
    config.n_components = cmd.components;
    config.seed = seed;
    if let Some(r) = cmd.admm.rho {
        config.admm.rho_override = Some(r);
    }
    problems.finish()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = scenario1_covariances(cmd.p, cmd.noise_sd, &mut rng)?;
    let covset = CovarianceSet::from_covariances(s.perturbed.to_vec())?;
    let points = starting_value_study(&covset, &config)?;
    let mut detail = Table::new(&["seed", "gamma", "eta", "component", "start", "objective"]);
    let mut summary = Table::new(&["gamma", "eta", "component", "proposed", "median_random", "min_random", "proposed_le_median", "random_converged"]);
    for pt in &points {
        let base = |start: String, v: f64| vec![seed.to_string(), num(pt.gamma), num(pt.eta), (pt.component + 1).to_string(), start, num(v)];
        detail.push(base("proposed".into(), pt.proposed));
        for (k, v) in pt.random.iter().enumerate() {
            detail.push(base(format!("random{}", k + 1), *v));
        }
        let min = pt.random.iter().copied().fold(f64::INFINITY, f64::min);
        summary.push(vec![
            num(pt.gamma),
            num(pt.eta),
            (pt.component + 1).to_string(),
            num(pt.proposed),
            num(pt.median_random),
            num(min),
            (pt.proposed <= pt.median_random).to_string(),
            pt.random_converged.to_string(),
        ]);
    }
    detail.write(&cmd.out_dir.join("starts.csv"))?;
    summary.write(&cmd.out_dir.join("starts_summary.csv"))?;
    let wins = points.iter().filter(|p| p.proposed <= p.median_random).count();
    eprintln!("starting values: proposed <= median random at {wins} of {} points", points.len());
    Ok(())
}
