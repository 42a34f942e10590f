//! Clinical field schema: z-scored numerics, one-hot categoricals with an
//! `unknown` slot, and presence flags for numerics that have gaps.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Numeric,
    Categorical,
}

/// A field as declared in the run config.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
}

impl FieldSpec {
    pub fn numeric(name: &str) -> Self {
        Self { name: name.into(), kind: FieldKind::Numeric }
    }

    pub fn categorical(name: &str) -> Self {
        Self { name: name.into(), kind: FieldKind::Categorical }
    }
}

pub const UNKNOWN_CATEGORY: &str = "<unknown>";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "encoding", rename_all = "lowercase")]
pub enum FieldEncoding {
    /// z-scored with training mean and population std.
    Numeric { mean: f64, std: f64 },
    /// 1 when the source numeric is observed, 0 when missing.
    Presence { source: String },
    /// One-hot over `categories` followed by the unknown slot.
    Categorical { categories: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldDescriptor {
    pub name: String,
    /// Index of the source column in the raw record.
    pub source: usize,
    pub encoding: FieldEncoding,
}

impl FieldDescriptor {
    /// Width of the encoded value `c_k`.
    pub fn width(&self) -> usize {
        match &self.encoding {
            FieldEncoding::Numeric { .. } | FieldEncoding::Presence { .. } => 1,
            FieldEncoding::Categorical { categories } => categories.len() + 1,
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.encoding, FieldEncoding::Categorical { .. })
    }

    /// Observed training categories (the unknown slot excluded).
    pub fn known_categories(&self) -> usize {
        match &self.encoding {
            FieldEncoding::Categorical { categories } => categories.len(),
            _ => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClinicalSchema {
    pub specs: Vec<FieldSpec>,
    pub fields: Vec<FieldDescriptor>,
}

/// Encoded values `c_k`, one vector per schema field.
#[derive(Clone, Debug, PartialEq)]
pub struct ClinicalRecord {
    pub values: Vec<Vec<f64>>,
}

/// A raw clinical row aligned with the declared field specs; `None` is missing.
pub type RawRecord = Vec<Option<String>>;

fn parse_numeric(name: &str, s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Schema(format!("field {name}: {s:?} is not numeric")))?;
    if !v.is_finite() {
        return Err(Error::Schema(format!("field {name}: non-finite value {s:?}")));
    }
    Ok(v)
}

/// Fits normalization statistics and vocabularies on training rows only.
pub fn fit_schema(records: &[RawRecord], specs: &[FieldSpec]) -> Result<ClinicalSchema> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("fit_schema needs at least one record".into()));
    }
    if specs.is_empty() {
        return Err(Error::InvalidArgument("fit_schema needs at least one field".into()));
    }
    let names: BTreeSet<&str> = specs.iter().map(|s| s.name.as_str()).collect();
    if names.len() != specs.len() {
        return Err(Error::Schema("clinical field names must be unique".into()));
    }
    for (r, rec) in records.iter().enumerate() {
        if rec.len() != specs.len() {
            return Err(Error::Schema(format!("record {r} has {} fields, expected {}", rec.len(), specs.len())));
        }
    }

    let mut fields = Vec::new();
    for (k, spec) in specs.iter().enumerate() {
        let column = records.iter().map(|r| r[k].as_deref());
        match spec.kind {
            FieldKind::Numeric => {
                let mut vals = Vec::new();
                let mut missing = false;
                for v in column {
                    match v {
                        Some(s) => vals.push(parse_numeric(&spec.name, s)?),
                        None => missing = true,
                    }
                }
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let std = var.sqrt();
                if vals.len() < 2 || !(std > 0.0) {
                    return Err(Error::Degenerate(format!(
                        "numeric field {} needs at least two distinct training values",
                        spec.name
                    )));
                }
                fields.push(FieldDescriptor {
                    name: spec.name.clone(),
                    source: k,
                    encoding: FieldEncoding::Numeric { mean, std },
                });
                if missing {
                    fields.push(FieldDescriptor {
                        name: format!("{}__present", spec.name),
                        source: k,
                        encoding: FieldEncoding::Presence { source: spec.name.clone() },
                    });
                }
            }
            FieldKind::Categorical => {
                let categories: BTreeSet<String> = column.flatten().map(|s| s.trim().to_string()).collect();
                if categories.is_empty() {
                    return Err(Error::Degenerate(format!("categorical field {} has no observed values", spec.name)));
                }
                fields.push(FieldDescriptor {
                    name: spec.name.clone(),
                    source: k,
                    encoding: FieldEncoding::Categorical { categories: categories.into_iter().collect() },
                });
            }
        }
    }
    Ok(ClinicalSchema { specs: specs.to_vec(), fields })
}

impl ClinicalSchema {
    pub fn num_fields(&self) -> usize {
        self.fields.len()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.fields.iter().map(FieldDescriptor::width).collect()
    }

    /// Encodes a raw row. Missing numerics become 0 (the training mean);
    /// missing or unseen categories go to the unknown slot.
    pub fn encode(&self, raw: &[Option<String>]) -> Result<ClinicalRecord> {
        if raw.len() != self.specs.len() {
            return Err(Error::Schema(format!("record has {} fields, schema expects {}", raw.len(), self.specs.len())));
        }
        let mut values = Vec::with_capacity(self.fields.len());
        for f in &self.fields {
            let v = raw[f.source].as_deref();
            values.push(match &f.encoding {
                FieldEncoding::Numeric { mean, std } => match v {
                    Some(s) => vec![(parse_numeric(&f.name, s)? - mean) / std],
                    None => vec![0.0],
                },
                FieldEncoding::Presence { .. } => vec![if v.is_some() { 1.0 } else { 0.0 }],
                FieldEncoding::Categorical { categories } => {
                    let mut one_hot = vec![0.0; categories.len() + 1];
                    let slot = v
                        .and_then(|s| categories.binary_search_by(|c| c.as_str().cmp(s.trim())).ok())
                        .unwrap_or(categories.len());
                    one_hot[slot] = 1.0;
                    one_hot
                }
            });
        }
        Ok(ClinicalRecord { values })
    }
}

/// Clinical CSV: header row of field names, keyed by `id_column`. Empty
/// cells and `NA` are missing. Returns rows aligned with `specs`.
pub fn read_clinical_csv(path: &Path, id_column: &str, specs: &[FieldSpec]) -> Result<BTreeMap<String, RawRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Error::MissingFile(path.into()),
        _ => Error::Csv(e),
    })?;
    let header = rdr.headers()?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("{}: missing column {name}", path.display())))
    };
    let id_idx = find(id_column)?;
    let cols: Vec<usize> = specs.iter().map(|s| find(&s.name)).collect::<Result<_>>()?;
    let mut out = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let id = row.get(id_idx).unwrap_or_default().to_string();
        let rec = cols
            .iter()
            .map(|&c| {
                let v = row.get(c).unwrap_or_default().trim();
                (!v.is_empty() && v != "NA").then(|| v.to_string())
            })
            .collect();
        if out.insert(id.clone(), rec).is_some() {
            return Err(Error::Schema(format!("{}: duplicate patient id {id}", path.display())));
        }
    }
    Ok(out)
}

pub fn write_clinical_csv(
    path: &Path,
    id_column: &str,
    specs: &[FieldSpec],
    rows: &BTreeMap<String, RawRecord>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::Csv)?;
    let mut header = vec![id_column.to_string()];
    header.extend(specs.iter().map(|s| s.name.clone()));
    w.write_record(&header)?;
    for (id, rec) in rows {
        let mut line = vec![id.clone()];
        line.extend(rec.iter().map(|v| v.clone().unwrap_or_default()));
        w.write_record(&line)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
