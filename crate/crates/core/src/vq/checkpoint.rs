//! Generator checkpoints.
//!
//! Layout: 8-byte magic, `u64` LE header length, JSON header, then every
//! tensor as `f32` LE in header order: parameters, Adam first moments,
//! Adam second moments. Loading restores the f32-rounded values.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Generator, GeneratorParams, TrainState};
use super::{Codebook, GeneratorConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"VARIGEN1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: GeneratorConfig,
    step: u64,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct TensorEntry {
    name: String,
    len: usize,
}

pub fn save(generator: &Generator, path: impl AsRef<Path>) -> Result<()> {
    let bytes = to_bytes(generator)?;
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Generator> {
    let mut bytes = Vec::new();
    std::fs::File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

pub fn to_bytes(generator: &Generator) -> Result<Vec<u8>> {
    let params = generator.params();
    let state = generator.train_state();
    let header = Header {
        config: generator.config().clone(),
        step: state.step,
        tensors: params
            .tensors()
            .into_iter()
            .map(|(name, t)| TensorEntry { name, len: t.len() })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let blocks = params
        .tensors()
        .into_iter()
        .map(|(_, t)| t)
        .chain(state.first_moment.iter().map(Vec::as_slice))
        .chain(state.second_moment.iter().map(Vec::as_slice));
    for block in blocks {
        for &v in block {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Generator> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing checkpoint magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body_start = 16usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[16..body_start])
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;

    let mut template = Generator::new(header.config.clone())?;
    let expected: Vec<TensorEntry> = template
        .params()
        .tensors()
        .into_iter()
        .map(|(name, t)| TensorEntry { name, len: t.len() })
        .collect();
    if expected != header.tensors {
        return Err(bad("tensor table does not match the stored configuration"));
    }
    let total: usize = expected.iter().map(|e| e.len).sum();
    let body = &bytes[body_start..];
    if body.len() != total * 3 * 4 {
        return Err(Error::Checkpoint(format!(
            "expected {} payload bytes, found {}",
            total * 3 * 4,
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let (p, rest) = values.split_at(total);
    let (m1, m2) = rest.split_at(total);

    let params: &mut GeneratorParams = template.params_mut();
    params.set_flat(p);
    let codebook = Codebook::from_rows(
        params.codebook.size(),
        params.codebook.dim(),
        params.codebook.as_slice().to_vec(),
    )
    .map_err(|e| Error::Checkpoint(e.to_string()))?;
    params.codebook = codebook;
    let params = params.clone();

    let split = |flat: &[f64]| -> Vec<Vec<f64>> {
        let mut offset = 0;
        expected
            .iter()
            .map(|e| {
                let v = flat[offset..offset + e.len].to_vec();
                offset += e.len;
                v
            })
            .collect()
    };
    let state = TrainState {
        step: header.step,
        first_moment: split(m1),
        second_moment: split(m2),
    };
    Generator::from_parts(header.config, params, state)
}
