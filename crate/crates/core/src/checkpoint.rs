//! Model checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! "RAFM" | u16 version | u32 config_len | config JSON
//!        | u32 tensor_count
//!        | per tensor: u32 name_len | name | u32 rank | u64 dims[rank] | f64 data[..]
//! ```

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::models::{CaptionModel, CaptionModelConfig, SentimentModel, SentimentModelConfig};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RAFM";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum ModelConfig {
    Caption(CaptionModelConfig),
    Sentiment(SentimentModelConfig),
}

#[derive(Clone, Debug)]
pub enum Model {
    Caption(CaptionModel),
    Sentiment(SentimentModel),
}

impl Model {
    pub fn config(&self) -> ModelConfig {
        match self {
            Model::Caption(m) => ModelConfig::Caption(m.config.clone()),
            Model::Sentiment(m) => ModelConfig::Sentiment(m.config.clone()),
        }
    }

    pub fn params(&self) -> &ParamStore {
        match self {
            Model::Caption(m) => &m.params,
            Model::Sentiment(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            Model::Caption(m) => &mut m.params,
            Model::Sentiment(m) => &mut m.params,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode(&self.config(), self.params())
    }

    /// Rebuilds the model from its config, then overwrites every parameter.
    /// Names and shapes must match the config exactly.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (config, stored) = decode(bytes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = match config {
            ModelConfig::Caption(c) => {
                let emb = Tensor::zeros(&[c.vocab_size, c.embed_dim]);
                Model::Caption(CaptionModel::new(c, emb, &mut rng)?)
            }
            ModelConfig::Sentiment(c) => {
                let emb = Tensor::zeros(&[c.vocab_size, c.embed_dim]);
                Model::Sentiment(SentimentModel::new(c, emb, &mut rng)?)
            }
        };
        let params = model.params_mut();
        if params.names() != stored.names() {
            return Err(Error::format(
                "checkpoint parameters do not match its config",
            ));
        }
        for id in stored.ids() {
            params
                .set(id, stored.get(id).clone())
                .map_err(|e| Error::format(format!("parameter {}: {e}", stored.name(id))))?;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn encode(config: &ModelConfig, params: &ParamStore) -> Vec<u8> {
    let json = serde_json::to_vec(config).expect("config serializes");
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.write_u16::<LittleEndian>(CHECKPOINT_VERSION).unwrap();
    out.write_u32::<LittleEndian>(json.len() as u32).unwrap();
    out.extend_from_slice(&json);
    out.write_u32::<LittleEndian>(params.len() as u32).unwrap();
    for (name, t) in params.iter() {
        out.write_u32::<LittleEndian>(name.len() as u32).unwrap();
        out.extend_from_slice(name.as_bytes());
        out.write_u32::<LittleEndian>(t.rank() as u32).unwrap();
        for &d in t.shape() {
            out.write_u64::<LittleEndian>(d as u64).unwrap();
        }
        for &v in t.data() {
            out.write_f64::<LittleEndian>(v).unwrap();
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<(ModelConfig, ParamStore)> {
    let trunc = |_: std::io::Error| Error::format("checkpoint truncated");
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(trunc)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::format("bad checkpoint magic"));
    }
    let version = r.read_u16::<LittleEndian>().map_err(trunc)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let json_len = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let json = take(&mut r, json_len)?;
    let config: ModelConfig = serde_json::from_slice(json)
        .map_err(|e| Error::format(format!("checkpoint config: {e}")))?;
    let count = r.read_u32::<LittleEndian>().map_err(trunc)?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        let name = std::str::from_utf8(take(&mut r, name_len)?)
            .map_err(|_| Error::format("parameter name is not UTF-8"))?
            .to_string();
        let rank = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        if rank > 8 {
            return Err(Error::format(format!("parameter {name}: rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u64::<LittleEndian>().map_err(trunc)? as usize);
        }
        let n: usize = shape.iter().product();
        if n.saturating_mul(8) > bytes.len() {
            return Err(Error::format("checkpoint truncated"));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.read_f64::<LittleEndian>().map_err(trunc)?);
        }
        params.insert(name, Tensor::new(shape, data)?)?;
    }
    if r.position() as usize != bytes.len() {
        return Err(Error::format("trailing bytes in checkpoint"));
    }
    Ok((config, params))
}

fn take<'a>(r: &mut Cursor<&'a [u8]>, n: usize) -> Result<&'a [u8]> {
    let start = r.position() as usize;
    let buf: &'a [u8] = r.get_ref();
    let end = start
        .checked_add(n)
        .filter(|&e| e <= buf.len())
        .ok_or_else(|| Error::format("checkpoint truncated"))?;
    r.set_position(end as u64);
    Ok(&buf[start..end])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::RetrievalMode;
    use crate::target::EncoderMode;

    fn sentiment() -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = SentimentModelConfig {
            vocab_size: 6,
            embed_dim: 2,
            hidden_dim: 3,
            attn_dim: 2,
            retrieval: RetrievalMode::Combined,
            encoder: EncoderMode::ClassAvg,
            encode_dim: 2,
            dropout: 0.5,
            fine_tune_embeddings: false,
        };
        let emb = crate::params::uniform(&[6, 2], 1, &mut rng);
        Model::Sentiment(SentimentModel::new(cfg, emb, &mut rng).unwrap())
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = sentiment();
        let bytes = m.to_bytes();
        let back = Model::from_bytes(&bytes).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupt_checkpoints_rejected() {
        let bytes = sentiment().to_bytes();
        for cut in [0, 5, 12, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(Model::from_bytes(&bytes[..cut]), Err(Error::Format(_))),
                "cut {cut}"
            );
        }
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(Model::from_bytes(&bad).is_err());
    }
}
