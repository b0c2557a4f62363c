use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use mspca_core::simulation::{Fitter, MethodFit};
use mspca_core::{LoadingsMatrix, LoadingsSet, MultiSourceData};
use nalgebra::DVector;

use crate::error::{CliError, CliResult};

type Cell = (usize, usize, usize);

/// Results of a method run outside this tool, read from tidy CSV files with
/// 1-based `rep`, `component`, `source` and `variable` columns.
#[derive(Debug, Clone)]
pub struct ExternalFitter {
    name: String,
    /// `(rep, component, source, variable) -> value`, 0-based keys.
    loadings: BTreeMap<(usize, usize, usize, usize), f64>,
    /// `(rep, source, variable) -> value`.
    centers: Option<BTreeMap<Cell, f64>>,
}

fn read_rows(path: &Path, columns: &[&str]) -> CliResult<Vec<(Vec<usize>, f64)>> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |c: &str| {
        headers.iter().position(|h| h == c).ok_or_else(|| CliError::Input(format!("{}: missing column '{c}'", path.display())))
    };
    let idx = columns.iter().map(|c| find(c)).collect::<CliResult<Vec<_>>>()?;
    let value = find("value")?;
    let mut out = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = || CliError::Input(format!("{}: line {} is malformed", path.display(), line + 2));
        let keys = idx
            .iter()
            .map(|&j| rec.get(j).and_then(|v| v.trim().parse::<usize>().ok()).filter(|v| *v >= 1).map(|v| v - 1).ok_or_else(bad))
            .collect::<CliResult<Vec<_>>>()?;
        let v = rec.get(value).and_then(|v| v.trim().parse::<f64>().ok()).filter(|v| v.is_finite()).ok_or_else(bad)?;
        out.push((keys, v));
    }
    Ok(out)
}

impl ExternalFitter {
    pub fn load(name: &str, loadings: &Path, centers: Option<&Path>) -> CliResult<Self> {
        let loadings = read_rows(loadings, &["rep", "component", "source", "variable"])?
            .into_iter()
            .map(|(k, v)| ((k[0], k[1], k[2], k[3]), v))
            .collect();
        let centers = centers
            .map(|c| read_rows(c, &["rep", "source", "variable"]))
            .transpose()?
            .map(|rows| rows.into_iter().map(|(k, v)| ((k[0], k[1], k[2]), v)).collect());
        Ok(Self { name: name.to_string(), loadings, centers })
    }
}

fn median_center(data: &MultiSourceData, i: usize) -> mspca_core::Result<DVector<f64>> {
    let rows = data.rows_of_source(i)?;
    Ok(DVector::from_iterator(
        rows.ncols(),
        rows.column_iter().map(|c| {
            let mut v: Vec<f64> = c.iter().copied().collect();
            v.sort_by(f64::total_cmp);
            let m = v.len();
            if m % 2 == 1 {
                v[m / 2]
            } else {
                0.5 * (v[m / 2 - 1] + v[m / 2])
            }
        }),
    ))
}

impl Fitter for ExternalFitter {
    fn name(&self) -> String {
        self.name.clone()
    }

    /// Missing loadings entries are zero; missing centers fall back to the
    /// coordinatewise median of the source.
    fn fit(&self, rep: usize, data: &MultiSourceData, n_components: usize) -> mspca_core::Result<MethodFit> {
        let (p, n) = (data.p(), data.n_sources());
        if !self.loadings.keys().any(|k| k.0 == rep) {
            return Err(mspca_core::Error::InvalidArgument(format!("external results lack repetition {}", rep + 1)));
        }
        let components = (0..n_components)
            .map(|l| {
                let mut v = LoadingsMatrix::zeros(p, n);
                for ((_, _, i, j), val) in self.loadings.range((rep, l, 0, 0)..(rep, l + 1, 0, 0)) {
                    if *i < n && *j < p {
                        v.0[(*j, *i)] = *val;
                    }
                }
                v
            })
            .collect();
        let mus = (0..n)
            .map(|i| match &self.centers {
                Some(c) if c.contains_key(&(rep, i, 0)) => {
                    Ok(DVector::from_fn(p, |j, _| c.get(&(rep, i, j)).copied().unwrap_or(0.0)))
                }
                _ => median_center(data, i),
            })
            .collect::<mspca_core::Result<Vec<_>>>()?;
        Ok(MethodFit { mus, loadings: LoadingsSet { components }, converged: true, lambda: None, gamma: None, eta: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn reads_tidy_loadings() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("ext.csv");
        fs::write(&f, "rep,component,source,variable,value\n1,1,1,1,1\n1,1,2,2,1\n2,1,1,1,1\n2,1,2,1,1\n").unwrap();
        let ext = ExternalFitter::load("rospca", &f, None).unwrap();
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 9.0]);
        let data = MultiSourceData::new(x, vec![0, 0, 1, 1]).unwrap();
        let fit = ext.fit(0, &data, 1).unwrap();
        assert_eq!(fit.loadings.components[0].0, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        assert_eq!(fit.mus[1].as_slice(), &[6.0, 7.5]);
        assert!(ext.fit(5, &data, 1).is_err());
    }

    #[test]
    fn rejects_zero_based_indices() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("ext.csv");
        fs::write(&f, "rep,component,source,variable,value\n0,1,1,1,1\n").unwrap();
        assert!(ExternalFitter::load("x", &f, None).is_err());
    }
}
