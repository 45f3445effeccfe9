//! Binary snapshots of the model pair, contrast queue and prototype bank.
//!
//! Layout: the 8 bytes `SAVCCKPT`, a little-endian `u32` format version, a
//! `u64` header length, the JSON header, then raw little-endian payloads in
//! order: query parameters (`f32`), key parameters (`f32`), queue features
//! (`f64`), prototype vectors (`f64`, in header key order).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use savc_core::contrast::ContrastQueue;
use savc_core::network::{EncoderConfig, ModelPair, Network, Param, ParamStore};
use savc_core::prototypes::{PrototypeBank, PrototypeKey};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SAVCCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamSpec {
    name: String,
    layer: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    session: usize,
    config_hash: String,
    encoder: EncoderConfig,
    momentum: f64,
    query_params: Vec<ParamSpec>,
    key_params: Vec<ParamSpec>,
    queue_capacity: usize,
    queue_dim: usize,
    queue_head: usize,
    queue_labels: Vec<usize>,
    bank_transforms: usize,
    bank_dim: usize,
    bank_keys: Vec<PrototypeKey>,
    bank_counts: BTreeMap<usize, usize>,
}

/// Training state after a session.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// Last completed session.
    pub session: usize,
    pub config_hash: String,
    pub pair: ModelPair,
    pub queue: ContrastQueue,
    pub bank: PrototypeBank,
}

fn specs(store: &ParamStore) -> Vec<ParamSpec> {
    store.params().iter().map(|p| ParamSpec { name: p.name.clone(), layer: p.layer.clone(), shape: p.shape.clone() }).collect()
}

/// Serializes a snapshot into `w`.
pub fn write_to(
    w: &mut impl Write,
    session: usize,
    config_hash: &str,
    pair: &ModelPair,
    queue: &ContrastQueue,
    bank: &PrototypeBank,
) -> std::io::Result<()> {
    let (bank_keys, bank_values): (Vec<PrototypeKey>, Vec<&[f64]>) = bank.entries().map(|(k, v)| (*k, v)).unzip();
    let header = Header {
        session,
        config_hash: config_hash.to_string(),
        encoder: pair.network.config().clone(),
        momentum: pair.momentum,
        query_params: specs(&pair.query),
        key_params: specs(&pair.key),
        queue_capacity: queue.capacity(),
        queue_dim: queue.dim(),
        queue_head: queue.write_head(),
        queue_labels: queue.stored_labels().to_vec(),
        bank_transforms: bank.num_transforms(),
        bank_dim: bank.dim(),
        bank_keys,
        bank_counts: bank.counts().clone(),
    };
    let json = serde_json::to_vec(&header).map_err(std::io::Error::other)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for store in [&pair.query, &pair.key] {
        for p in store.params() {
            for v in &p.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    for v in queue.stored_features() {
        w.write_all(&v.to_le_bytes())?;
    }
    for proto in bank_values {
        for v in proto {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save(path: &Path, session: usize, config_hash: &str, pair: &ModelPair, queue: &ContrastQueue, bank: &PrototypeBank) -> Result<()> {
    let mut bytes = Vec::new();
    write_to(&mut bytes, session, config_hash, pair, queue, bank).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self.take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// Parses a snapshot produced by [`write_to`].
pub fn read_from(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut cur = Cursor { bytes, path };
    if cur.take(8)? != MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let len = u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(cur.take(len)?).map_err(|e| Error::format(path, e))?;
    let network = Network::new(header.encoder.clone())?;
    let mut read_store = |specs: &[ParamSpec]| -> Result<ParamStore> {
        let mut params = Vec::with_capacity(specs.len());
        for spec in specs {
            let n = spec.shape.iter().product();
            params.push(Param { name: spec.name.clone(), layer: spec.layer.clone(), shape: spec.shape.clone(), data: cur.f32s(n)? });
        }
        Ok(ParamStore::new(params))
    };
    let query = read_store(&header.query_params)?;
    let key = read_store(&header.key_params)?;
    let expected = network.init_params(0);
    if specs(&expected) != header.query_params || specs(&network.key_params_from(&expected)) != header.key_params {
        return Err(Error::format(path, "parameter layout does not match the encoder configuration"));
    }
    let features = cur.f64s(header.queue_labels.len() * header.queue_dim)?;
    let queue = ContrastQueue::from_parts(header.queue_capacity, header.queue_dim, features, header.queue_labels, header.queue_head)?;
    let mut entries = Vec::with_capacity(header.bank_keys.len());
    for k in header.bank_keys {
        entries.push((k, cur.f64s(header.bank_dim)?));
    }
    let bank = PrototypeBank::from_entries(header.bank_transforms, header.bank_dim, entries, header.bank_counts)?;
    if !cur.bytes.is_empty() {
        return Err(Error::format(path, format!("{} trailing bytes", cur.bytes.len())));
    }
    Ok(Checkpoint {
        session: header.session,
        config_hash: header.config_hash,
        pair: ModelPair { network, query, key, momentum: header.momentum },
        queue,
        bank,
    })
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
    read_from(&bytes, path)
}
