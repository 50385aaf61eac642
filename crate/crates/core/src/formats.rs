//! On-disk formats for region features and dataset records.

use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::tensor::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"RAFX";

/// `K` region vectors of width `D` for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFile {
    pub regions: usize,
    pub dim: usize,
    pub values: Vec<f32>,
}

impl FeatureFile {
    pub fn new(regions: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != regions * dim {
            return Err(Error::dim("feature file", &[regions, dim], &[values.len()]));
        }
        Ok(FeatureFile {
            regions,
            dim,
            values,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; 12 + 4 * self.values.len()];
        out[..4].copy_from_slice(FEATURE_MAGIC);
        LittleEndian::write_u32(&mut out[4..8], self.regions as u32);
        LittleEndian::write_u32(&mut out[8..12], self.dim as u32);
        LittleEndian::write_f32_into(&self.values, &mut out[12..]);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != FEATURE_MAGIC {
            return Err(Error::format("not a feature file"));
        }
        let regions = LittleEndian::read_u32(&bytes[4..8]) as usize;
        let dim = LittleEndian::read_u32(&bytes[8..12]) as usize;
        let expected = 12 + 4 * regions * dim;
        if bytes.len() != expected {
            return Err(Error::format(format!(
                "feature file is {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let mut values = vec![0f32; regions * dim];
        LittleEndian::read_f32_into(&bytes[12..], &mut values);
        Ok(FeatureFile {
            regions,
            dim,
            values,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::format(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.to_bytes())
    }

    /// `[K, D]` tensor in `f64`.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.values.iter().map(|&v| f64::from(v)).collect();
        Tensor::matrix(self.regions, self.dim, data).expect("checked shape")
    }

    /// Global average pool `v̄ = (1/K) Σ v_i`.
    pub fn pooled(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for r in self.values.chunks(self.dim) {
            for (o, &v) in out.iter_mut().zip(r) {
                *o += f64::from(v);
            }
        }
        out.iter_mut().for_each(|o| *o /= self.regions as f64);
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RecordPayload {
    Image {
        feature_path: String,
        captions: Vec<String>,
    },
    Text {
        text: String,
        label: u8,
    },
}

/// One line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: u64,
    pub split: Split,
    #[serde(flatten)]
    pub payload: RecordPayload,
}

impl DatasetRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        match &self.payload {
            RecordPayload::Image { captions, .. } => {
                if captions.is_empty() {
                    return Err("record has no captions".into());
                }
                if captions
                    .iter()
                    .any(|c| c.split_whitespace().next().is_none())
                {
                    return Err("record has an empty caption".into());
                }
            }
            RecordPayload::Text { label, .. } if *label > 1 => {
                return Err(format!("label {label} is not 0 or 1"));
            }
            RecordPayload::Text { .. } => {}
        }
        Ok(())
    }
}

/// Parses JSON-lines records; errors carry the 1-based line number.
pub fn parse_records(text: &str, path: &Path) -> Result<Vec<DatasetRecord>> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: DatasetRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        rec.validate().map_err(err)?;
        if !seen.insert(rec.id) {
            return Err(err(format!("duplicate id {}", rec.id)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_records(path: &Path) -> Result<Vec<DatasetRecord>> {
    parse_records(&fsutil::read_to_string(path)?, path)
}

pub fn records_to_text(records: &[DatasetRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}
