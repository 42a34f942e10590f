//! JSON checkpoints. Arrays are stored as base64 little-endian `f32` so a
//! reload reproduces every bit of the parameters and optimizer moments.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::clinical::ClinicalSchema;
use crate::error::{Error, Result};
use crate::numkit::{Matrix, ParameterStore};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestEpoch {
    pub epoch: usize,
    pub metric: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ArrayRecord {
    name: String,
    rows: usize,
    cols: usize,
    value: String,
    m: String,
    v: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    config: RunConfig,
    schema: Option<ClinicalSchema>,
    d_patch: usize,
    step: u64,
    best: Option<BestEpoch>,
    params: Vec<ArrayRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub schema: Option<ClinicalSchema>,
    pub d_patch: usize,
    pub best: Option<BestEpoch>,
    pub store: ParameterStore<f32>,
}

fn encode(m: &Matrix<f32>) -> String {
    let bytes: Vec<u8> = m.data().iter().flat_map(|x| x.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(s: &str, rows: usize, cols: usize, name: &str) -> Result<Matrix<f32>> {
    let bytes = STANDARD.decode(s).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
    if bytes.len() != rows * cols * 4 {
        return Err(Error::Checkpoint(format!("{name}: expected {} bytes, found {}", rows * cols * 4, bytes.len())));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(Matrix::from_vec(rows, cols, data))
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let params = ck
        .store
        .iter()
        .map(|(name, e)| ArrayRecord {
            name: name.clone(),
            rows: e.value.rows(),
            cols: e.value.cols(),
            value: encode(&e.value),
            m: encode(&e.m),
            v: encode(&e.v),
        })
        .collect();
    let file = CheckpointFile {
        format_version: CHECKPOINT_VERSION,
        config: ck.config.clone(),
        schema: ck.schema.clone(),
        d_patch: ck.d_patch,
        step: ck.store.step,
        best: ck.best.clone(),
        params,
    };
    let s = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile =
        serde_json::from_str(&s).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if file.format_version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: format version {} (supported: {CHECKPOINT_VERSION})",
            path.display(),
            file.format_version
        )));
    }
    file.config.validate()?;
    let mut store = ParameterStore::new();
    for a in &file.params {
        store.insert(a.name.clone(), decode(&a.value, a.rows, a.cols, &a.name)?)?;
        let e = store.get_mut(&a.name).expect("just inserted");
        e.m = decode(&a.m, a.rows, a.cols, &a.name)?;
        e.v = decode(&a.v, a.rows, a.cols, &a.name)?;
    }
    store.step = file.step;
    Ok(Checkpoint { config: file.config, schema: file.schema, d_patch: file.d_patch, best: file.best, store })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::Task;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut store = ParameterStore::<f32>::new();
        store.insert("a.w", Matrix::from_vec(2, 2, vec![1.0, -0.0, f32::MIN_POSITIVE, 1.0 / 3.0])).unwrap();
        store.get_mut("a.w").unwrap().m = Matrix::from_vec(2, 2, vec![0.1, 0.2, 0.3, 0.4]);
        store.step = 9;
        let ck = Checkpoint {
            config: RunConfig::new(Task::Classification),
            schema: None,
            d_patch: 4,
            best: Some(BestEpoch { epoch: 3, metric: 0.75 }),
            store,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.json");
        save_checkpoint(&p, &ck).unwrap();
        let back = load_checkpoint(&p).unwrap();
        let bits = |s: &ParameterStore<f32>| s.flatten().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.store), bits(&ck.store));
        assert_eq!(back, ck);
    }

    #[test]
    fn malformed_files_are_checkpoint_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        std::fs::write(&p, "{\"format_version\": 1}").unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Checkpoint(_))));
        assert!(matches!(load_checkpoint(&dir.path().join("none.json")), Err(Error::MissingFile(_))));
    }
}
