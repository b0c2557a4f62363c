use std::ffi::OsString;
use std::fs;
use std::path::Path;

use crate::error::{CliError, CliResult};

const SUBCOMMANDS: [&str; 5] = ["ssmrcd", "fit", "tune", "simulate", "plot"];
const GLOBAL_KEYS: [&str; 1] = ["threads"];

/// Parses `key = value` lines; `#` starts a comment. All malformed lines are
/// reported together.
pub fn parse_config(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut entries = Vec::new();
    let mut problems = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => {
                let key = k.trim().trim_start_matches("--").replace('_', "-");
                if key == "config" {
                    problems.push(format!("line {}: nested config files are not supported", no + 1));
                } else {
                    entries.push((key, v.trim().to_string()));
                }
            }
            _ => problems.push(format!("line {}: expected key=value, found '{line}'", no + 1)),
        }
    }
    if problems.is_empty() {
        Ok(entries)
    } else {
        Err(CliError::Config(problems))
    }
}

fn tokens(entries: &[(String, String)]) -> Vec<OsString> {
    let mut out = Vec::new();
    for (k, v) in entries {
        match v.as_str() {
            "false" => {}
            "true" => out.push(format!("--{k}").into()),
            _ => {
                out.push(format!("--{k}").into());
                out.push(v.into());
            }
        }
    }
    out
}

fn config_path(args: &[OsString]) -> CliResult<Option<(usize, usize, String)>> {
    for (i, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if let Some(p) = s.strip_prefix("--config=") {
            return Ok(Some((i, 1, p.to_string())));
        }
        if s == "--config" {
            let p = args.get(i + 1).ok_or_else(|| CliError::Input("--config needs a file".into()))?;
            return Ok(Some((i, 2, p.to_string_lossy().into_owned())));
        }
    }
    Ok(None)
}

/// Splices the entries of `--config FILE` into the argument list: global keys
/// before the subcommand, the rest right after it, so explicit flags (which
/// come later) override them.
pub fn expand_args(args: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let Some((at, width, path)) = config_path(&args)? else { return Ok(args) };
    let text = fs::read_to_string(&path).map_err(|source| CliError::Read { path: Path::new(&path).to_path_buf(), source })?;
    let entries = parse_config(&text)?;
    let (global, local): (Vec<_>, Vec<_>) = entries.into_iter().partition(|(k, _)| GLOBAL_KEYS.contains(&k.as_str()));
    let mut rest: Vec<OsString> = args[..at].iter().chain(&args[at + width..]).cloned().collect();
    let sub = rest.iter().position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()));
    if let Some(sub) = sub {
        let tail = rest.split_off(sub + 1);
        rest.extend(tokens(&local));
        rest.extend(tail);
    }
    let mut out: Vec<OsString> = rest.drain(..1.min(rest.len())).collect();
    out.extend(tokens(&global));
    out.extend(rest);
    Ok(out)
}
