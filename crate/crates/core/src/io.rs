//! CSV datasets, JSON model files and flat `key = value` config files.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PdiError, Result};
use crate::eval::FittedPolicy;
use crate::linalg::Matrix;
use crate::types::{Dataset, DoseBounds};

pub const MODEL_FORMAT_VERSION: u32 = 1;

struct Layout {
    x: Vec<usize>,
    a: Option<usize>,
    y: Option<usize>,
    w: Option<usize>,
}

fn layout(header: &csv::StringRecord) -> Result<Layout> {
    let mut l = Layout {
        x: Vec::new(),
        a: None,
        y: None,
        w: None,
    };
    for (j, name) in header.iter().enumerate() {
        match name.trim() {
            "a" => l.a = Some(j),
            "y" => l.y = Some(j),
            "w" => l.w = Some(j),
            other if other.starts_with('x') => l.x.push(j),
            other => {
                return Err(PdiError::Parse {
                    line: 1,
                    msg: format!("unexpected column `{other}`"),
                })
            }
        }
    }
    Ok(l)
}

fn field(rec: &csv::StringRecord, j: usize, line: usize) -> Result<f64> {
    let raw = rec.get(j).ok_or_else(|| PdiError::Parse {
        line,
        msg: "short row".into(),
    })?;
    raw.trim().parse::<f64>().map_err(|_| PdiError::Parse {
        line,
        msg: format!("not a number: `{raw}`"),
    })
}

/// Reads `x1..xd, a, y[, w]`; a `w` column becomes the weight vector.
pub fn read_dataset<R: Read>(reader: R, bounds: DoseBounds) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let l = layout(rdr.headers()?)?;
    let (ai, yi) = match (l.a, l.y) {
        (Some(a), Some(y)) => (a, y),
        _ => {
            return Err(PdiError::Parse {
                line: 1,
                msg: "columns `a` and `y` are required".into(),
            })
        }
    };
    let (mut xs, mut a, mut y, mut w) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let row = l.x.iter().map(|&j| field(&rec, j, line)).collect::<Result<Vec<_>>>()?;
        xs.extend(row);
        a.push(field(&rec, ai, line)?);
        y.push(field(&rec, yi, line)?);
        if let Some(wi) = l.w {
            w.push(field(&rec, wi, line)?);
        }
    }
    if a.is_empty() {
        return Err(PdiError::Empty);
    }
    let x = Matrix::from_row_major(a.len(), l.x.len(), xs)?;
    Dataset::new(x, a, y, l.w.map(|_| w), bounds)
}

pub fn read_dataset_path(path: &Path, bounds: DoseBounds) -> Result<Dataset> {
    read_dataset(std::fs::File::open(path)?, bounds)
}

/// Covariate columns only; any `a`, `y`, `w` columns are ignored.
pub fn read_covariates<R: Read>(reader: R) -> Result<Matrix> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let l = layout(rdr.headers()?)?;
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = l.x.iter().map(|&j| field(&rec, j, k + 2)).collect::<Result<Vec<_>>>()?;
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(PdiError::NonFinite { row: k + 1, column: format!("x{}", j + 1) });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(PdiError::Empty);
    }
    if l.x.is_empty() {
        return Matrix::from_row_major(rows.len(), 0, Vec::new());
    }
    Matrix::from_rows(&rows)
}

pub fn read_covariates_path(path: &Path) -> Result<Matrix> {
    read_covariates(std::fs::File::open(path)?)
}

pub fn dataset_header(d: usize, with_weights: bool) -> Vec<String> {
    let mut h: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    h.push("a".into());
    h.push("y".into());
    if with_weights {
        h.push("w".into());
    }
    h
}

pub fn write_dataset<W: Write>(writer: W, data: &Dataset) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(dataset_header(data.d(), data.w.is_some()))?;
    for i in 0..data.n() {
        let mut rec: Vec<String> = data.x.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(data.a[i].to_string());
        rec.push(data.y[i].to_string());
        if let Some(w) = &data.w {
            rec.push(w[i].to_string());
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_dataset_path(path: &Path, data: &Dataset) -> Result<()> {
    write_dataset(std::fs::File::create(path)?, data)
}

/// Provenance stored alongside a fitted policy.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub penalty: f64,
    pub epsilon: f64,
    pub n_train: usize,
    pub weight_source: String,
    #[serde(default)]
    pub cv_table: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub policy: FittedPolicy,
    pub meta: ModelMeta,
}

impl ModelFile {
    pub fn new(policy: FittedPolicy, meta: ModelMeta) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            policy,
            meta,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: ModelFile = serde_json::from_str(s)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(PdiError::Unsupported(format!(
                "model format version {} (expected {MODEL_FORMAT_VERSION})",
                m.format_version
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Flat `key = value` pairs; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| PdiError::Parse {
            line: k + 1,
            msg: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(PdiError::Parse {
                line: k + 1,
                msg: "empty key".into(),
            });
        }
        out.insert(key.to_string(), value.trim().to_string());
    }
    Ok(out)
}

pub fn render_config(map: &BTreeMap<String, String>) -> String {
    map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bounds() -> DoseBounds {
        DoseBounds::new(-2.0, 2.0).unwrap()
    }

    #[test]
    fn dataset_round_trip() {
        let text = "x1,x2,a,y,w\n0.1,0.2,0.5,1.5,2.0\n-0.3,0.4,-1.0,-0.5,1.0\n";
        let d = read_dataset(text.as_bytes(), bounds()).unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(d.d(), 2);
        assert_eq!(d.w.as_deref(), Some(&[2.0, 1.0][..]));
        let mut buf = Vec::new();
        write_dataset(&mut buf, &d).unwrap();
        let again = read_dataset(buf.as_slice(), bounds()).unwrap();
        assert_eq!(d, again);
    }

    #[test]
    fn dataset_errors() {
        assert!(matches!(
            read_dataset("x1,a\n0,0\n".as_bytes(), bounds()),
            Err(PdiError::Parse { .. })
        ));
        assert!(matches!(
            read_dataset("x1,a,y\n0,1,abc\n".as_bytes(), bounds()),
            Err(PdiError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            read_dataset("x1,a,y\n0,3,0\n".as_bytes(), bounds()),
            Err(PdiError::DoseOutOfBounds { row: 1, .. })
        ));
        assert!(matches!(
            read_dataset("x1,a,y\n".as_bytes(), bounds()),
            Err(PdiError::Empty)
        ));
    }

    #[test]
    fn covariates_ignore_other_columns() {
        let m = read_covariates("x1,a,x2\n1,9,2\n3,9,4\n".as_bytes()).unwrap();
        assert_eq!(m.to_rows(), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }

    #[test]
    fn config_parsing() {
        let c = parse_config("# top\nalpha = 0.3\n\nmethod=lo-linear  # trailing\n").unwrap();
        assert_eq!(c["alpha"], "0.3");
        assert_eq!(c["method"], "lo-linear");
        assert!(matches!(parse_config("oops\n"), Err(PdiError::Parse { line: 1, .. })));
        let again = parse_config(&render_config(&c)).unwrap();
        assert_eq!(c, again);
    }
}
