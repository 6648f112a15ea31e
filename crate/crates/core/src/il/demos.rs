use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::generator::STATE_DIM;
use crate::policy::{Action, FEATURE_DIM};

/// Append-only set of `(features, expert action)` pairs. Features are kept
/// in single precision, one row of [`FEATURE_DIM`] per pair.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DemoSet {
    features: Vec<f32>,
    actions: Vec<Action>,
}

impl DemoSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Rejects wrong-length features and actions outside the bounds.
    pub fn push(&mut self, features: &[f64], action: Action) -> Result<()> {
        if features.len() != FEATURE_DIM {
            return Err(Error::shape("demo features", format!("expected {FEATURE_DIM}, got {}", features.len())));
        }
        if !action.within_bounds() {
            return Err(Error::InvalidArgument("expert action outside the action bounds".into()));
        }
        self.features.extend(features.iter().map(|&v| v as f32));
        self.actions.push(action);
        Ok(())
    }

    pub fn features(&self, i: usize) -> &[f32] {
        &self.features[i * FEATURE_DIM..(i + 1) * FEATURE_DIM]
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }
}

const CSV_NAME: &str = "demos.csv";
const BLOB_NAME: &str = "features.bin";

fn csv_header() -> Vec<String> {
    let mut h: Vec<String> = (0..3).map(|i| format!("dtheta{i}")).collect();
    h.extend((0..3).map(|i| format!("dt{i}")));
    h.extend((0..STATE_DIM - 6).map(|i| format!("dz{i}")));
    h.push("feature_offset".into());
    h
}

/// Writes `demos.csv` (22 action values and the byte offset of the feature
/// row) and `features.bin` (little-endian f32 rows) into `dir`.
pub fn write_demo_set(dir: &Path, set: &DemoSet) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let blob_path = dir.join(BLOB_NAME);
    let file = fs::File::create(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let mut blob = BufWriter::new(file);
    for v in &set.features {
        blob.write_all(&v.to_le_bytes()).map_err(|e| Error::io(&blob_path, e))?;
    }
    blob.flush().map_err(|e| Error::io(&blob_path, e))?;

    let csv_path = dir.join(CSV_NAME);
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(csv_header())?;
    let row_bytes = FEATURE_DIM * 4;
    for (i, a) in set.actions.iter().enumerate() {
        let mut rec: Vec<String> = a.to_vec().iter().map(|v| v.to_string()).collect();
        rec.push((i * row_bytes).to_string());
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))
}

pub fn read_demo_set(dir: &Path) -> Result<DemoSet> {
    let blob_path = dir.join(BLOB_NAME);
    let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let mut r = csv::Reader::from_path(dir.join(CSV_NAME))?;
    let mut set = DemoSet::new();
    for rec in r.records() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Format(format!("demo csv: {e}"))))
            .collect::<Result<_>>()?;
        if vals.len() != STATE_DIM + 1 {
            return Err(Error::Format(format!("demo csv row has {} fields", vals.len())));
        }
        let offset = vals[STATE_DIM] as usize;
        let end = offset + FEATURE_DIM * 4;
        let row = bytes
            .get(offset..end)
            .ok_or_else(|| Error::Format(format!("feature offset {offset} past end of blob")))?;
        set.features
            .extend(row.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])));
        set.actions.push(Action::from_slice(&vals[..STATE_DIM])?);
    }
    Ok(set)
}
