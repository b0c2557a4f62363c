use crate::args::SsmrcdCmd;
use crate::commands::{check_estimator, estimate, resolve_seed, scaling, Problems};
use crate::error::CliResult;
use crate::io::{num, read_data, write_json, Table};

pub fn run(cmd: &SsmrcdCmd) -> CliResult<()> {
    let seed = resolve_seed(cmd.estimator.seed);
    let ds = read_data(&cmd.input, &cmd.data.source_col, scaling(cmd.data.standardize))?;
    let mut problems = Problems::new();
    let plan = check_estimator(&cmd.estimator, ds.data.n_sources(), seed, &mut problems);
    problems.finish()?;
    let file = estimate(&ds, plan.expect("validated"), seed)?;
    write_json(&cmd.out, &file)?;
    if let Some(trace) = &file.lambda_trace {
        let mut t = Table::new(&["lambda", "R", "selected"]);
        for (l, r) in trace {
            t.push(vec![num(*l), num(*r), (*l == file.fit.lambda).to_string()]);
        }
        t.write(&cmd.trace)?;
    }
    eprintln!(
        "ssMRCD: {} sources, {} variables, lambda = {}, objective = {}",
        file.sources.len(),
        file.variables.len(),
        file.fit.lambda,
        file.fit.objective
    );
    Ok(())
}
