//! Dataset directories: `bags/<id>.pbag`, `labels.csv`, optional `clinical.csv`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pbag::{read_bag, write_bag};
use crate::clinical::{read_clinical_csv, write_clinical_csv, FieldSpec, RawRecord};
use crate::error::{Error, Result};
use crate::graph::PatchBag;
use crate::objectives::{SurvivalLabel, Task};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    Class(bool),
    Survival(SurvivalLabel),
}

impl Target {
    pub fn class(&self) -> Option<bool> {
        match self {
            Target::Class(c) => Some(*c),
            Target::Survival(_) => None,
        }
    }

    pub fn survival(&self) -> Option<SurvivalLabel> {
        match self {
            Target::Survival(s) => Some(*s),
            Target::Class(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub bag: PatchBag,
    pub target: Target,
    pub clinical: Option<RawRecord>,
    /// Generator ground truth, when known.
    pub latent_risk: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: Task,
    /// Sorted by id.
    pub samples: Vec<Sample>,
    pub clinical_fields: Vec<FieldSpec>,
}

/// Generation summary written to `meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub task: Task,
    pub samples: usize,
    pub seed: u64,
    pub event_fraction: Option<f64>,
    pub oracle_c_index: Option<f64>,
}

const LABELS: &str = "labels.csv";
const CLINICAL: &str = "clinical.csv";
const BAGS: &str = "bags";

pub fn write_dataset(dir: &Path, data: &Dataset, id_column: &str) -> Result<()> {
    let bags = dir.join(BAGS);
    std::fs::create_dir_all(&bags).map_err(|e| Error::io(&bags, e))?;
    let labels = dir.join(LABELS);
    let mut w = csv::Writer::from_path(&labels).map_err(Error::Csv)?;
    match data.task {
        Task::Classification => w.write_record(["bag_id", "label"])?,
        Task::Survival => w.write_record([id_column, "time", "event", "latent_risk"])?,
    }
    for s in &data.samples {
        write_bag(&bags.join(format!("{}.pbag", s.id)), &s.bag)?;
        match s.target {
            Target::Class(c) => w.write_record([s.id.clone(), (c as u8).to_string()])?,
            Target::Survival(l) => w.write_record([
                s.id.clone(),
                l.time.to_string(),
                (l.event as u8).to_string(),
                s.latent_risk.map(|r| r.to_string()).unwrap_or_default(),
            ])?,
        }
    }
    w.flush().map_err(|e| Error::io(&labels, e))?;
    if !data.clinical_fields.is_empty() {
        let rows: BTreeMap<String, RawRecord> =
            data.samples.iter().filter_map(|s| s.clinical.clone().map(|c| (s.id.clone(), c))).collect();
        write_clinical_csv(&dir.join(CLINICAL), id_column, &data.clinical_fields, &rows)?;
    }
    Ok(())
}

pub fn write_meta(dir: &Path, meta: &DatasetMeta) -> Result<()> {
    let p = dir.join("meta.json");
    std::fs::write(&p, serde_json::to_string_pretty(meta)? + "\n").map_err(|e| Error::io(&p, e))
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Error::MissingFile(path.into()),
        _ => Error::Csv(e),
    })
}

fn parse<T: std::str::FromStr>(path: &Path, row: usize, col: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Schema(format!("{} row {row}: bad {col} value {v:?}", path.display())))
}

/// Loads a dataset. `clinical_fields` is empty unless the clinical branch is on.
pub fn read_dataset(dir: &Path, task: Task, id_column: &str, clinical_fields: &[FieldSpec]) -> Result<Dataset> {
    let labels_path = dir.join(LABELS);
    let mut rdr = open_csv(&labels_path)?;
    let header = rdr.headers()?.clone();
    let expected: Vec<&str> = match task {
        Task::Classification => vec!["bag_id", "label"],
        Task::Survival => vec![id_column, "time", "event"],
    };
    let cols: Vec<usize> = expected
        .iter()
        .map(|c| {
            header.iter().position(|h| h == *c).ok_or_else(|| {
                Error::Schema(format!("{}: missing column {c} for a {task:?} dataset", labels_path.display()))
            })
        })
        .collect::<Result<_>>()?;
    let latent_col = header.iter().position(|h| h == "latent_risk");
    let clinical = if clinical_fields.is_empty() {
        None
    } else {
        Some(read_clinical_csv(&dir.join(CLINICAL), id_column, clinical_fields)?)
    };

    let mut samples = Vec::new();
    for (r, row) in rdr.records().enumerate() {
        let row = row?;
        let get = |i: usize| row.get(i).unwrap_or_default();
        let id = get(cols[0]).to_string();
        let target = match task {
            Task::Classification => {
                let v: u8 = parse(&labels_path, r, "label", get(cols[1]))?;
                if v > 1 {
                    return Err(Error::Schema(format!("{} row {r}: label must be 0 or 1", labels_path.display())));
                }
                Target::Class(v == 1)
            }
            Task::Survival => {
                let time: f64 = parse(&labels_path, r, "time", get(cols[1]))?;
                let ev: u8 = parse(&labels_path, r, "event", get(cols[2]))?;
                if ev > 1 {
                    return Err(Error::Schema(format!("{} row {r}: event must be 0 or 1", labels_path.display())));
                }
                Target::Survival(SurvivalLabel::new(time, ev == 1)?)
            }
        };
        let latent_risk = match latent_col.map(get).filter(|s| !s.trim().is_empty()) {
            Some(v) => Some(parse(&labels_path, r, "latent_risk", v)?),
            None => None,
        };
        let clin = match &clinical {
            Some(rows) => Some(
                rows.get(&id)
                    .cloned()
                    .ok_or_else(|| Error::Schema(format!("no clinical row for {id}")))?,
            ),
            None => None,
        };
        let mut bag = read_bag(&dir.join(BAGS).join(format!("{id}.pbag")))?;
        bag.bag_id = id.clone();
        samples.push(Sample { id, bag, target, clinical: clin, latent_risk });
    }
    if samples.is_empty() {
        return Err(Error::Schema(format!("{}: no samples", labels_path.display())));
    }
    samples.sort_by(|a, b| a.id.cmp(&b.id));
    if samples.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(Error::Schema(format!("{}: duplicate sample ids", labels_path.display())));
    }
    let d = samples[0].bag.dim();
    if let Some(s) = samples.iter().find(|s| s.bag.dim() != d) {
        return Err(Error::Schema(format!("bag {} has {} features, expected {d}", s.id, s.bag.dim())));
    }
    Ok(Dataset { task, samples, clinical_fields: clinical_fields.to_vec() })
}
