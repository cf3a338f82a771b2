//! Versioned binary checkpoint container.
//!
//! ```text
//! b"TRANSFIG" | u32 version | u64 header length | JSON header
//!   | f32 arrays, little endian, in header order | SHA-256 of all preceding bytes
//! ```
//!
//! Arrays are named `g_ab/<param>`, `g_ba/<param>`, `d_shared/<param>`,
//! `opt_<net>/m/<i>`, `opt_<net>/v/<i>` and `pool_<task>/buffer/<i>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use transfig_core::nn::ParamStore;
use transfig_core::pool::PoolState;
use transfig_core::trainer::ProvenanceCounts;
use transfig_core::{
    Arch, Discriminator, EpochOrder, Generator, GeneratorRole, Optimizer, OptimizerConfig, PoolConfig,
    Tensor, TrainConfig, TrainSnapshot, TrainingStage,
};

use crate::error::{io_at, AppError, Result};

pub const MAGIC: &[u8; 8] = b"TRANSFIG";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;
const PREFIX_LEN: usize = 8 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OptimizerMeta {
    config: OptimizerConfig,
    step: u64,
    first: usize,
    second: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PoolMeta {
    task: GeneratorRole,
    config: PoolConfig,
    order: EpochOrder,
    alternate_next_generated: bool,
    buffered: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub arch: Arch,
    pub dtype: String,
    pub config_hash: String,
    pub step: u64,
    pub epoch: usize,
    pub stage: TrainingStage,
    pub config: TrainConfig,
    rng: ChaCha8Rng,
    order_a: EpochOrder,
    order_b: EpochOrder,
    provenance: ProvenanceCounts,
    optimizers: BTreeMap<String, OptimizerMeta>,
    pools: BTreeMap<String, PoolMeta>,
    pub arrays: Vec<ArraySpec>,
}

struct Arrays {
    specs: Vec<ArraySpec>,
    data: Vec<u8>,
}

impl Arrays {
    fn push(&mut self, name: String, shape: &[usize], values: &[f32]) {
        self.specs.push(ArraySpec {
            name,
            shape: shape.to_vec(),
        });
        for v in values {
            self.data.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn push_params(&mut self, prefix: &str, params: &ParamStore<f32>) {
        for (name, t) in params.iter() {
            self.push(format!("{prefix}/{name}"), t.shape(), t.data());
        }
    }

    fn push_optimizer(&mut self, prefix: &str, opt: &Optimizer<f32>) -> OptimizerMeta {
        let (first, second) = opt.moments();
        for (i, m) in first.iter().enumerate() {
            self.push(format!("{prefix}/m/{i}"), &[m.len()], m);
        }
        for (i, v) in second.iter().enumerate() {
            self.push(format!("{prefix}/v/{i}"), &[v.len()], v);
        }
        OptimizerMeta {
            config: *opt.config(),
            step: opt.steps(),
            first: first.len(),
            second: second.len(),
        }
    }

    fn push_pool(&mut self, prefix: &str, pool: &PoolState<f32>) -> PoolMeta {
        for (i, item) in pool.buffer.iter().enumerate() {
            self.push(format!("{prefix}/buffer/{i}"), &[item.len()], item);
        }
        PoolMeta {
            task: pool.task,
            config: pool.config,
            order: pool.order.clone(),
            alternate_next_generated: pool.alternate_next_generated,
            buffered: pool.buffer.len(),
        }
    }
}

pub fn encode(snap: &TrainSnapshot<f32>) -> Result<Vec<u8>> {
    let mut arrays = Arrays {
        specs: Vec::new(),
        data: Vec::new(),
    };
    arrays.push_params("g_ab", snap.g_ab.params());
    arrays.push_params("g_ba", snap.g_ba.params());
    arrays.push_params("d_shared", snap.d_shared.params());
    let mut optimizers = BTreeMap::new();
    for (name, opt) in [("g_ab", &snap.opt_g_ab), ("g_ba", &snap.opt_g_ba), ("d_shared", &snap.opt_d)] {
        optimizers.insert(name.to_string(), arrays.push_optimizer(&format!("opt_{name}"), opt));
    }
    let mut pools = BTreeMap::new();
    for (name, pool) in [("ab", &snap.pool_ab), ("ba", &snap.pool_ba)] {
        pools.insert(name.to_string(), arrays.push_pool(&format!("pool_{name}"), pool));
    }
    let header = Header {
        arch: snap.config.generator.arch,
        dtype: "f32".into(),
        config_hash: crate::config::config_hash(&snap.config)?,
        step: snap.step,
        epoch: snap.epoch,
        stage: snap.stage,
        config: snap.config.clone(),
        rng: snap.rng.clone(),
        order_a: snap.order_a.clone(),
        order_b: snap.order_b.clone(),
        provenance: snap.provenance,
        optimizers,
        pools,
        arrays: arrays.specs,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(PREFIX_LEN + header_bytes.len() + arrays.data.len() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&arrays.data);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

/// Reads the array section back in header order.
struct Reader<'a> {
    specs: std::slice::Iter<'a, ArraySpec>,
    data: &'a [u8],
    path: &'a Path,
}

impl Reader<'_> {
    fn next(&mut self, expected: &str) -> Result<(Vec<usize>, Vec<f32>)> {
        let spec = self
            .specs
            .next()
            .ok_or_else(|| AppError::checkpoint(self.path, format!("missing array `{expected}`")))?;
        if spec.name != expected {
            return Err(AppError::checkpoint(
                self.path,
                format!("expected array `{expected}`, found `{}`", spec.name),
            ));
        }
        let n: usize = spec.shape.iter().product();
        if self.data.len() < 4 * n {
            return Err(AppError::checkpoint(self.path, format!("array `{expected}` is truncated")));
        }
        let (head, rest) = self.data.split_at(4 * n);
        self.data = rest;
        let values = head
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok((spec.shape.clone(), values))
    }

    fn params(&mut self, prefix: &str, like: &ParamStore<f32>) -> Result<ParamStore<f32>> {
        let mut store = ParamStore::new();
        for (name, _) in like.iter() {
            let (shape, values) = self.next(&format!("{prefix}/{name}"))?;
            store.push(name.to_string(), Tensor::from_vec(&shape, values)?);
        }
        Ok(store)
    }

    fn optimizer(&mut self, prefix: &str, meta: &OptimizerMeta) -> Result<Optimizer<f32>> {
        let mut first = Vec::with_capacity(meta.first);
        for i in 0..meta.first {
            first.push(self.next(&format!("{prefix}/m/{i}"))?.1);
        }
        let mut second = Vec::with_capacity(meta.second);
        for i in 0..meta.second {
            second.push(self.next(&format!("{prefix}/v/{i}"))?.1);
        }
        Ok(Optimizer::from_parts(meta.config, meta.step, first, second)?)
    }

    fn pool(&mut self, prefix: &str, meta: &PoolMeta) -> Result<PoolState<f32>> {
        let mut buffer = std::collections::VecDeque::with_capacity(meta.buffered);
        for i in 0..meta.buffered {
            buffer.push_back(self.next(&format!("{prefix}/buffer/{i}"))?.1);
        }
        Ok(PoolState {
            task: meta.task,
            config: meta.config,
            buffer,
            order: meta.order.clone(),
            alternate_next_generated: meta.alternate_next_generated,
        })
    }
}

/// Validates framing and digest and returns the header and array section.
fn split(bytes: &[u8], path: &Path) -> Result<(Header, usize)> {
    let bad = |m: &str| AppError::checkpoint(path, m.to_string());
    if bytes.len() < PREFIX_LEN + DIGEST_LEN || &bytes[..8] != MAGIC {
        return Err(bad("not a transfig checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(AppError::checkpoint(
            path,
            format!("incompatible checkpoint version {version}; this build reads version {VERSION}"),
        ));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch (file is corrupt or was modified)"));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    if header_len > body.len() - PREFIX_LEN {
        return Err(bad("header length exceeds file size"));
    }
    let header: Header = serde_json::from_slice(&body[PREFIX_LEN..PREFIX_LEN + header_len])
        .map_err(|e| AppError::checkpoint(path, format!("unreadable header: {e}")))?;
    if header.dtype != "f32" {
        return Err(AppError::checkpoint(path, format!("unsupported dtype {}", header.dtype)));
    }
    if header.config_hash != crate::config::config_hash(&header.config)? {
        return Err(bad("config hash does not match the stored config"));
    }
    Ok((header, PREFIX_LEN + header_len))
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<TrainSnapshot<f32>> {
    let (header, start) = split(bytes, path)?;
    let cfg = &header.config;
    let mut reader = Reader {
        specs: header.arrays.iter(),
        data: &bytes[start..bytes.len() - DIGEST_LEN],
        path,
    };
    // Parameter names come from freshly built networks of the same config.
    let g_ab_like = transfig_core::build_generator::<f32>(&cfg.generator, GeneratorRole::AB, 0)?;
    let g_ba_like = transfig_core::build_generator::<f32>(&cfg.generator, GeneratorRole::BA, 0)?;
    let d_like = transfig_core::build_discriminator::<f32>(&cfg.discriminator, 0)?;
    let g_ab = Generator::with_params(&cfg.generator, GeneratorRole::AB, &reader.params("g_ab", g_ab_like.params())?)?;
    let g_ba = Generator::with_params(&cfg.generator, GeneratorRole::BA, &reader.params("g_ba", g_ba_like.params())?)?;
    let d_shared = Discriminator::with_params(&cfg.discriminator, &reader.params("d_shared", d_like.params())?)?;
    let opt_meta = |name: &str| {
        header
            .optimizers
            .get(name)
            .ok_or_else(|| AppError::checkpoint(path, format!("missing optimizer `{name}`")))
    };
    let pool_meta = |name: &str| {
        header
            .pools
            .get(name)
            .ok_or_else(|| AppError::checkpoint(path, format!("missing pool `{name}`")))
    };
    let opt_g_ab = reader.optimizer("opt_g_ab", opt_meta("g_ab")?)?;
    let opt_g_ba = reader.optimizer("opt_g_ba", opt_meta("g_ba")?)?;
    let opt_d = reader.optimizer("opt_d_shared", opt_meta("d_shared")?)?;
    let pool_ab = reader.pool("pool_ab", pool_meta("ab")?)?;
    let pool_ba = reader.pool("pool_ba", pool_meta("ba")?)?;
    if reader.specs.next().is_some() || !reader.data.is_empty() {
        return Err(AppError::checkpoint(path, "unexpected trailing arrays"));
    }
    Ok(TrainSnapshot {
        config: header.config.clone(),
        g_ab,
        g_ba,
        d_shared,
        opt_g_ab,
        opt_g_ba,
        opt_d,
        pool_ab,
        pool_ba,
        order_a: header.order_a.clone(),
        order_b: header.order_b.clone(),
        step: header.step,
        epoch: header.epoch,
        stage: header.stage,
        rng: header.rng.clone(),
        provenance: header.provenance,
    })
}

pub fn save(path: &Path, snap: &TrainSnapshot<f32>) -> Result<()> {
    crate::fsutil::write_atomic(path, &encode(snap)?)
}

pub fn load(path: &Path) -> Result<TrainSnapshot<f32>> {
    decode(&fs::read(path).map_err(io_at(path))?, path)
}

/// Header only, after full validation.
pub fn read_header(path: &Path) -> Result<Header> {
    Ok(split(&fs::read(path).map_err(io_at(path))?, path)?.0)
}
