//! Dataset directories: `sources.csv`, `observations.csv` and `meta.json`.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{Dataset, StructureMask};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub generator: String,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub variances: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<StructureMask>,
}

impl DatasetMeta {
    pub fn of(d: &Dataset) -> Self {
        Self {
            generator: d.generator.clone(),
            seed: d.seed,
            n: d.n(),
            m: d.m(),
            k: d.k(),
            variances: d.variances.clone(),
            mask: d.mask.clone(),
        }
    }
}

/// Writes a `k x c` matrix with header `{prefix}1..{prefix}c`, 17 significant digits.
pub(crate) fn write_matrix_csv(path: &Path, prefix: &str, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((1..=m.ncols()).map(|j| format!("{prefix}{j}")))?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| format!("{v:.16e}")))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub(crate) fn read_matrix_csv(path: &Path, prefix: &str) -> Result<DMatrix<f64>> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut r = csv::ReaderBuilder::new().from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => parse_err(1, format!("{other:?}")),
    })?;
    let headers = r.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    for (j, h) in headers.iter().enumerate() {
        let want = format!("{prefix}{}", j + 1);
        if h.trim() != want {
            return Err(parse_err(1, format!("column {} is `{h}`, expected `{want}`", j + 1)));
        }
    }
    let cols = headers.len();
    if cols == 0 {
        return Err(parse_err(1, "empty header".into()));
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != cols {
            return Err(parse_err(line, format!("expected {cols} fields, found {}", rec.len())));
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("field {} is not a number: `{field}`", j + 1)))?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(parse_err(2, "no data rows".into()));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub fn save_dataset(d: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_matrix_csv(&dir.join("sources.csv"), "s", &d.sources)?;
    write_matrix_csv(&dir.join("observations.csv"), "x", &d.observations)?;
    let meta = serde_json::to_string_pretty(&DatasetMeta::of(d))?;
    let path = dir.join("meta.json");
    fs::write(&path, meta + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: meta_path.clone(),
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    let sources = read_matrix_csv(&dir.join("sources.csv"), "s")?;
    let observations = read_matrix_csv(&dir.join("observations.csv"), "x")?;
    if sources.shape() != (meta.k, meta.n) || observations.shape() != (meta.k, meta.m) {
        return Err(Error::shape(
            format!("sources {}x{}, observations {}x{}", meta.k, meta.n, meta.k, meta.m),
            format!(
                "sources {}x{}, observations {}x{}",
                sources.nrows(),
                sources.ncols(),
                observations.nrows(),
                observations.ncols()
            ),
        ));
    }
    Ok(Dataset {
        generator: meta.generator,
        seed: meta.seed,
        sources,
        observations,
        variances: meta.variances,
        mask: meta.mask,
        truth: None,
    })
}
