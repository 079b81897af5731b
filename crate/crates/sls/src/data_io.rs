//! CSV datasets, schema files and the synthetic-manifest sidecar.
//!
//! Schema files are plain `key = value` lines; `#` starts a comment.
//!
//! ```text
//! # columns used as features, in order
//! features = duration, src_bytes, dst_bytes
//! # optional label column
//! label = class
//! # label values meaning "normal" and "attack"; `*` matches anything else
//! normal = normal, benign
//! attack = *
//! ```
//!
//! `normal` defaults to `0` and `attack` to `1`. Rows whose label matches
//! neither list, or whose feature cells do not parse as finite numbers, are
//! dropped and counted.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use sls_core::data::{Dataset, SynthManifest};
use sls_core::Matrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelValues {
    Any,
    List(Vec<String>),
}

impl LabelValues {
    fn matches(&self, v: &str) -> bool {
        match self {
            LabelValues::Any => true,
            LabelValues::List(l) => l.iter().any(|x| x == v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub features: Vec<String>,
    pub label: Option<String>,
    pub normal: LabelValues,
    pub attack: LabelValues,
}

fn list(v: &str) -> Vec<String> {
    v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

fn values(v: &str) -> LabelValues {
    if v.trim() == "*" {
        LabelValues::Any
    } else {
        LabelValues::List(list(v))
    }
}

impl Schema {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Schema(format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim();
            if !matches!(k, "features" | "label" | "normal" | "attack") {
                return Err(Error::Schema(format!("line {}: unknown key `{k}`", n + 1)));
            }
            if kv.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Schema(format!("line {}: `{k}` given twice", n + 1)));
            }
        }
        let features = list(kv.get("features").ok_or_else(|| Error::Schema("`features` is required".into()))?);
        if features.is_empty() {
            return Err(Error::Schema("`features` lists no columns".into()));
        }
        let normal = values(kv.get("normal").map_or("0", String::as_str));
        let attack = values(kv.get("attack").map_or("1", String::as_str));
        if normal == LabelValues::Any {
            return Err(Error::Schema("`normal` must list values".into()));
        }
        Ok(Self {
            features,
            label: kv.get("label").cloned().filter(|s| !s.is_empty()),
            normal,
            attack,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::format(path, e))
    }

    /// Every column except `label` is a feature; labels are `0`/`1`.
    pub fn all_columns(headers: &[String]) -> Self {
        Self {
            features: headers.iter().filter(|h| *h != "label").cloned().collect(),
            label: headers.iter().any(|h| h == "label").then(|| "label".to_string()),
            normal: LabelValues::List(vec!["0".into()]),
            attack: LabelValues::List(vec!["1".into()]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub dataset: Dataset,
    pub rows_read: usize,
    pub dropped: usize,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e)
}

fn headers(path: &Path, rdr: &mut csv::Reader<std::fs::File>) -> Result<Vec<String>> {
    Ok(rdr.headers().map_err(|e| csv_err(path, e))?.iter().map(|h| h.trim().to_string()).collect())
}

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(f))
}

pub fn ingest_csv(path: &Path, schema: &Schema) -> Result<Ingested> {
    let mut rdr = open(path)?;
    let hdr = headers(path, &mut rdr)?;
    ingest_records(path, &mut rdr, &hdr, schema)
}

fn ingest_records(
    path: &Path,
    rdr: &mut csv::Reader<std::fs::File>,
    hdr: &[String],
    schema: &Schema,
) -> Result<Ingested> {
    let col = |name: &str| {
        hdr.iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("{}: column `{name}` not found", path.display())))
    };
    let fcols = schema.features.iter().map(|f| col(f)).collect::<Result<Vec<_>>>()?;
    let lcol = schema.label.as_deref().map(col).transpose()?;
    let (mut data, mut labels) = (Vec::new(), Vec::new());
    let (mut rows_read, mut dropped) = (0, 0);
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        rows_read += 1;
        let parsed: Option<Vec<f64>> = fcols
            .iter()
            .map(|&c| rec.get(c).and_then(|s| s.trim().parse::<f64>().ok()).filter(|v| v.is_finite()))
            .collect();
        let label = match lcol {
            None => Some(0),
            Some(c) => rec.get(c).map(str::trim).and_then(|v| {
                if schema.normal.matches(v) {
                    Some(0)
                } else if schema.attack.matches(v) {
                    Some(1)
                } else {
                    None
                }
            }),
        };
        match (parsed, label) {
            (Some(row), Some(l)) => {
                data.extend(row);
                labels.push(l);
            }
            _ => dropped += 1,
        }
    }
    if labels.is_empty() {
        return Err(sls_core::Error::EmptyDataset.into());
    }
    let x = Matrix::from_vec(labels.len(), fcols.len(), data)?;
    let dataset = Dataset::new(x, lcol.map(|_| labels), schema.features.clone())?;
    Ok(Ingested {
        dataset,
        rows_read,
        dropped,
    })
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Writes features (and a `label` column when labeled) with shortest
/// round-trip float formatting, plus the manifest sidecar if present.
pub fn write_dataset_csv(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut hdr: Vec<String> = ds.feature_names().to_vec();
    if ds.labels().is_some() {
        hdr.push("label".into());
    }
    w.write_record(&hdr).map_err(|e| csv_err(path, e))?;
    let x = ds.features();
    for r in 0..x.rows() {
        let mut rec: Vec<String> = x.row(r).iter().map(|v| v.to_string()).collect();
        if let Some(l) = ds.labels() {
            rec.push(l[r].to_string());
        }
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    if let Some(m) = ds.manifest() {
        write_json(&sidecar_path(path), m)?;
    }
    Ok(())
}

/// Reads a file written by [`write_dataset_csv`], attaching its sidecar
/// manifest when one exists.
pub fn read_dataset_csv(path: &Path) -> Result<Ingested> {
    let mut rdr = open(path)?;
    let hdr = headers(path, &mut rdr)?;
    let mut ing = ingest_records(path, &mut rdr, &hdr, &Schema::all_columns(&hdr))?;
    let side = sidecar_path(path);
    if side.exists() {
        let m: SynthManifest = read_json(&side)?;
        ing.dataset.set_manifest(m);
    }
    Ok(ing)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::format(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use sls_core::data::{generate_synthetic, SynthConfig};

    #[test]
    fn schema_defaults_and_errors() {
        let s = Schema::parse("features = a, b\n# note\nlabel = y\n").unwrap();
        assert_eq!(s.features, vec!["a", "b"]);
        assert_eq!(s.normal, LabelValues::List(vec!["0".into()]));
        assert!(Schema::parse("label = y").is_err());
        assert!(Schema::parse("features = a\ncolour = red").is_err());
        assert!(Schema::parse("features = a\nfeatures = b").is_err());
        assert!(Schema::parse("features = a\nnormal = *").is_err());
    }

    #[test]
    fn malformed_rows_are_dropped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("flows.csv");
        let mut text = String::from("id,a,b,class\n");
        for i in 0..10 {
            if i == 4 {
                text.push_str("4,oops,1.0,normal\n");
            } else {
                text.push_str(&format!("{i},{i}.5,{},{}\n", i * 2, if i % 3 == 0 { "dos" } else { "normal" }));
            }
        }
        std::fs::write(&p, text).unwrap();
        let schema = Schema::parse("features = a, b\nlabel = class\nnormal = normal\nattack = *").unwrap();
        let ing = ingest_csv(&p, &schema).unwrap();
        assert_eq!((ing.rows_read, ing.dropped, ing.dataset.rows()), (10, 1, 9));
        assert_eq!(ing.dataset.count_label(1), 4);
        assert_eq!(ing.dataset.features().row(0), &[0.5, 0.0]);
    }

    #[test]
    fn missing_column_and_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        std::fs::write(&p, "a,b\n1,2\n").unwrap();
        let err = ingest_csv(&p, &Schema::parse("features = a, c").unwrap()).unwrap_err();
        assert!(err.to_string().contains("`c`"));
        std::fs::write(&p, "a,b\nx,y\n").unwrap();
        assert!(matches!(
            ingest_csv(&p, &Schema::parse("features = a, b").unwrap()),
            Err(Error::Core(sls_core::Error::EmptyDataset))
        ));
    }

    #[test]
    fn dataset_round_trip_with_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let ds = generate_synthetic(&SynthConfig::standard(3, 20, 5, 3.0, 7)).unwrap();
        write_dataset_csv(&p, &ds).unwrap();
        let back = read_dataset_csv(&p).unwrap();
        assert_eq!(back.dropped, 0);
        assert_eq!(back.dataset.features(), ds.features());
        assert_eq!(back.dataset.labels(), ds.labels());
        assert_eq!(back.dataset.manifest(), ds.manifest());
        assert_eq!(back.dataset.content_hash(), ds.content_hash());
    }
}
