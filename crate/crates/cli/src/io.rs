use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use mspca_core::ssmrcd::{band_weights, uniform_weights};
use mspca_core::MultiSourceData;
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

const MAD_CONSISTENCY: f64 = 1.482_602_218_505_602;

/// Center and scale subtracted from and divided into every column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

/// How the columns of a data file are scaled after reading.
#[derive(Debug, Clone, Copy)]
pub enum Scaling<'a> {
    Raw,
    MedianMad,
    Fixed(&'a Standardization),
}

#[derive(Debug, Clone)]
pub struct DataSet {
    pub data: MultiSourceData,
    pub variables: Vec<String>,
    /// Source label of each source index.
    pub sources: Vec<String>,
    pub standardization: Option<Standardization>,
}

fn label_order(a: &str, b: &str) -> Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y).then_with(|| a.cmp(b)),
        _ => a.cmp(b),
    }
}

/// Sorts labels numerically when they all parse as numbers, lexically
/// otherwise.
pub fn sort_labels(labels: &mut [String]) {
    if labels.iter().all(|l| l.parse::<f64>().is_ok()) {
        labels.sort_by(|a, b| label_order(a, b));
    } else {
        labels.sort();
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Column-wise median and scaled median absolute deviation.
pub fn median_mad(x: &DMatrix<f64>, names: &[String]) -> CliResult<Standardization> {
    let mut center = Vec::with_capacity(x.ncols());
    let mut scale = Vec::with_capacity(x.ncols());
    for (j, name) in names.iter().enumerate() {
        let mut col: Vec<f64> = x.column(j).iter().copied().collect();
        let med = median(&mut col);
        let mut dev: Vec<f64> = col.iter().map(|v| (v - med).abs()).collect();
        let mad = MAD_CONSISTENCY * median(&mut dev);
        if !(mad > 0.0) {
            return Err(CliError::Input(format!("column '{name}' has zero MAD and cannot be standardized")));
        }
        center.push(med);
        scale.push(mad);
    }
    Ok(Standardization { center, scale })
}

/// Reads a headed CSV with one source-label column and numeric variables.
pub fn read_data(path: &Path, source_col: &str, scaling: Scaling) -> CliResult<DataSet> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let label_idx = headers
        .iter()
        .position(|h| h == source_col)
        .ok_or_else(|| CliError::Input(format!("source column '{source_col}' not found in {}", path.display())))?;
    let variables: Vec<String> = headers.iter().enumerate().filter(|(j, _)| *j != label_idx).map(|(_, h)| h.clone()).collect();
    if variables.is_empty() {
        return Err(CliError::Input(format!("{} has no numeric columns", path.display())));
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(CliError::Input(format!("line {}: expected {} fields, found {}", r + 2, headers.len(), rec.len())));
        }
        for (j, cell) in rec.iter().enumerate() {
            if j == label_idx {
                labels.push(cell.trim().to_string());
                continue;
            }
            let v: f64 = cell.trim().parse().map_err(|_| {
                CliError::Input(format!("line {}, column '{}': non-numeric value '{cell}'", r + 2, headers[j]))
            })?;
            if !v.is_finite() {
                return Err(CliError::Input(format!("line {}, column '{}': non-finite value", r + 2, headers[j])));
            }
            values.push(v);
        }
    }
    if labels.is_empty() {
        return Err(CliError::Input(format!("{} has no data rows", path.display())));
    }
    let mut sources: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    sort_labels(&mut sources);
    let index_of = |l: &String| sources.iter().position(|s| s == l).expect("label collected");
    let source_of: Vec<usize> = labels.iter().map(index_of).collect();
    let mut x = DMatrix::from_row_slice(labels.len(), variables.len(), &values);
    let standardization = match scaling {
        Scaling::Raw => None,
        Scaling::MedianMad => Some(median_mad(&x, &variables)?),
        Scaling::Fixed(st) => {
            if st.center.len() != variables.len() || st.scale.len() != variables.len() {
                return Err(CliError::Input(format!("{}: standardization does not match the columns", path.display())));
            }
            Some(st.clone())
        }
    };
    if let Some(st) = &standardization {
        for (j, mut col) in x.column_iter_mut().enumerate() {
            col.iter_mut().for_each(|v| *v = (*v - st.center[j]) / st.scale[j]);
        }
    }
    let data = MultiSourceData::new(x, source_of).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(DataSet { data, variables, sources, standardization })
}

/// `band:W`, `uniform`, or a header-free CSV file with an `N x N` matrix.
pub fn read_weights(spec: &str, n_sources: usize) -> CliResult<DMatrix<f64>> {
    if let Some(w) = spec.strip_prefix("band:") {
        let width: usize = w.parse().map_err(|_| CliError::Input(format!("bad band width '{w}'")))?;
        return band_weights(n_sources, width).map_err(|e| CliError::Input(e.to_string()));
    }
    if spec == "uniform" {
        return Ok(uniform_weights(n_sources));
    }
    let path = Path::new(spec);
    let text = fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    for (r, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|c| c.trim().parse::<f64>().map_err(|_| CliError::Input(format!("weights line {}: non-numeric '{c}'", r + 1))))
            .collect::<CliResult<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.len() != n_sources || rows.iter().any(|r| r.len() != n_sources) {
        return Err(CliError::Input(format!("weights must be {n_sources} x {n_sources}")));
    }
    Ok(DMatrix::from_fn(n_sources, n_sources, |i, j| rows[i][j]))
}

/// `start:end:step`, a comma list, or a single value.
pub fn parse_grid(spec: &str) -> CliResult<Vec<f64>> {
    let bad = || CliError::Input(format!("bad grid '{spec}' (expected start:end:step or a comma list)"));
    let num = |s: &str| s.trim().parse::<f64>().ok().filter(|v| v.is_finite());
    let parts: Vec<&str> = spec.split(':').collect();
    let grid = match parts.as_slice() {
        [a, b, step] => {
            let (a, b, step) = (num(a).ok_or_else(bad)?, num(b).ok_or_else(bad)?, num(step).ok_or_else(bad)?);
            if !(step > 0.0) || b < a {
                return Err(bad());
            }
            mspca_core::simulation::grid(a, b, step)
        }
        [list] => list.split(',').filter(|s| !s.trim().is_empty()).map(|s| num(s).ok_or_else(bad)).collect::<CliResult<Vec<_>>>()?,
        _ => return Err(bad()),
    };
    if grid.is_empty() {
        return Err(CliError::Input(format!("grid '{spec}' is empty")));
    }
    Ok(grid)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, text).map_err(|source| CliError::Write { path: path.to_path_buf(), source })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Comma-separated table with a header row.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Input(e.to_string()))?;
        write_text(path, &String::from_utf8(bytes).expect("utf-8 CSV"))
    }
}

/// Shortest representation that parses back to the same value.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "NA".into()
    } else {
        format!("{x}")
    }
}

pub fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".into(), num)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_syntax() {
        let g = parse_grid("0:5:0.1").unwrap();
        assert_eq!(g.len(), 51);
        assert_eq!(g[3], 0.3);
        assert_eq!(parse_grid("0.5").unwrap(), vec![0.5]);
        assert_eq!(parse_grid("0.1, 0.2").unwrap(), vec![0.1, 0.2]);
        assert!(parse_grid("").is_err());
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("0:1:0").is_err());
        assert!(parse_grid("a:b:c").is_err());
    }

    #[test]
    fn label_sorting() {
        let mut l = vec!["10".to_string(), "2".into(), "1".into()];
        sort_labels(&mut l);
        assert_eq!(l, vec!["1", "2", "10"]);
        let mut l = vec!["b".to_string(), "a".into(), "10".into()];
        sort_labels(&mut l);
        assert_eq!(l, vec!["10", "a", "b"]);
    }

    #[test]
    fn median_mad_of_known_column() {
        let x = DMatrix::from_column_slice(5, 1, &[1.0, 2.0, 3.0, 4.0, 100.0]);
        let st = median_mad(&x, &["a".into()]).unwrap();
        assert_eq!(st.center, vec![3.0]);
        assert!((st.scale[0] - MAD_CONSISTENCY).abs() < 1e-15);
        let flat = DMatrix::from_element(4, 1, 2.0);
        assert!(median_mad(&flat, &["a".into()]).is_err());
    }

    #[test]
    fn weights_specs() {
        let w = read_weights("band:1", 4).unwrap();
        assert_eq!(w[(0, 1)], 1.0);
        assert!((w[(1, 0)] - 0.5).abs() < 1e-15);
        assert!(read_weights("band:x", 4).is_err());
        assert!(read_weights("/nonexistent/w.csv", 4).is_err());
    }

    #[test]
    fn number_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-17, 12345.678901234567] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(f64::NAN), "NA");
    }
}
