//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `ADCRCKPT` |
//! | 4 | format version, u32 (currently 1) |
//! | 8 | header length `h`, u64 |
//! | h | UTF-8 JSON header: `{"kind", "config", "blocks": [{"name", "len"}]}` |
//! | ... | per block in header order: `len` f64 values, then `len` f64 Adagrad accumulators |
//!
//! The model is rebuilt from `config` and then every named block is
//! overwritten, so loading is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::model::{ArModel, ArModelConfig, CrModel, CrModelConfig, JacConfig, JacModel};
use super::towers::{ArConfig, ArTower, CrConfig, CrTower};
use super::two_tower::{TwoTower, TwoTowerConfig};
use crate::error::{Error, Result};
use crate::nnet::Param;

pub const MAGIC: [u8; 8] = *b"ADCRCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub config: serde_json::Value,
    pub blocks: Vec<BlockInfo>,
}

fn ck(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(
    w: &mut W,
    kind: &str,
    config: serde_json::Value,
    blocks: &[(String, &Param)],
) -> Result<()> {
    let header = CheckpointHeader {
        kind: kind.to_string(),
        config,
        blocks: blocks
            .iter()
            .map(|(n, p)| BlockInfo {
                name: n.clone(),
                len: p.len(),
            })
            .collect(),
    };
    let h = serde_json::to_vec(&header)?;
    let io = |e: std::io::Error| ck(e.to_string());
    w.write_all(&MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(h.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&h).map_err(io)?;
    for (_, p) in blocks {
        for v in p.value.iter().chain(&p.accum) {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| ck(format!("truncated {what}: {e}")))
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(CheckpointHeader, Vec<(String, Param)>)> {
    let mut magic = [0u8; 8];
    read_exact(r, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(ck("not a checkpoint file (bad magic)"));
    }
    let mut b4 = [0u8; 4];
    read_exact(r, &mut b4, "version")?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(ck(format!("unsupported version {version}")));
    }
    let mut b8 = [0u8; 8];
    read_exact(r, &mut b8, "header length")?;
    let hlen = u64::from_le_bytes(b8) as usize;
    if hlen > 1 << 30 {
        return Err(ck("header length implausible"));
    }
    let mut h = vec![0u8; hlen];
    read_exact(r, &mut h, "header")?;
    let header: CheckpointHeader = serde_json::from_slice(&h).map_err(|e| ck(format!("header: {e}")))?;
    let mut blocks = Vec::with_capacity(header.blocks.len());
    for b in &header.blocks {
        let mut read_vec = |n: usize| -> Result<Vec<f64>> {
            let mut bytes = vec![0u8; n * 8];
            read_exact(r, &mut bytes, &b.name)?;
            Ok(bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };
        let value = read_vec(b.len)?;
        let accum = read_vec(b.len)?;
        blocks.push((b.name.clone(), Param { value, accum }));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| ck(e.to_string()))? != 0 {
        return Err(ck("trailing bytes after last block"));
    }
    Ok((header, blocks))
}

/// Overwrites `target` blocks by name; names and lengths must match exactly.
pub fn restore_blocks(target: &mut [(String, &mut Param)], loaded: Vec<(String, Param)>) -> Result<()> {
    if target.len() != loaded.len() {
        return Err(ck(format!("expected {} blocks, found {}", target.len(), loaded.len())));
    }
    for ((name, p), (lname, lp)) in target.iter_mut().zip(loaded) {
        if *name != lname {
            return Err(ck(format!("block `{lname}` where `{name}` expected")));
        }
        if p.len() != lp.len() {
            return Err(Error::ShapeMismatch {
                context: format!("checkpoint block {name}"),
                expected: p.len(),
                actual: lp.len(),
            });
        }
        **p = lp;
    }
    Ok(())
}

/// A model that can be rebuilt from its config and a set of named blocks.
pub trait Checkpoint: Sized {
    const KIND: &'static str;
    type Config: Serialize + DeserializeOwned;

    fn checkpoint_config(&self) -> Self::Config;
    fn from_config(config: &Self::Config) -> Result<Self>;
    fn blocks(&self) -> Vec<(String, &Param)>;
    fn blocks_mut(&mut self) -> Vec<(String, &mut Param)>;

    fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let cfg = serde_json::to_value(self.checkpoint_config())?;
        write_checkpoint(w, Self::KIND, cfg, &self.blocks())
    }

    fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let (header, blocks) = read_checkpoint(r)?;
        if header.kind != Self::KIND {
            return Err(ck(format!("checkpoint holds `{}`, expected `{}`", header.kind, Self::KIND)));
        }
        let cfg: Self::Config = serde_json::from_value(header.config).map_err(|e| ck(format!("config: {e}")))?;
        let mut model = Self::from_config(&cfg)?;
        restore_blocks(&mut model.blocks_mut(), blocks)?;
        Ok(model)
    }

    fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(f))
    }
}

/// Kind tag of a checkpoint file without loading its blocks.
pub fn checkpoint_kind(path: &Path) -> Result<String> {
    let mut f = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut head = [0u8; 20];
    read_exact(&mut f, &mut head, "preamble")?;
    if head[..8] != MAGIC {
        return Err(ck("not a checkpoint file (bad magic)"));
    }
    let hlen = u64::from_le_bytes(head[12..20].try_into().expect("8 bytes")) as usize;
    if hlen > 1 << 30 {
        return Err(ck("header length implausible"));
    }
    let mut h = vec![0u8; hlen];
    read_exact(&mut f, &mut h, "header")?;
    let header: CheckpointHeader = serde_json::from_slice(&h).map_err(|e| ck(format!("header: {e}")))?;
    Ok(header.kind)
}

impl Checkpoint for JacModel {
    const KIND: &'static str = "jac";
    type Config = JacConfig;

    fn checkpoint_config(&self) -> JacConfig {
        self.config.clone()
    }
    fn from_config(c: &JacConfig) -> Result<Self> {
        JacModel::new(c)
    }
    fn blocks(&self) -> Vec<(String, &Param)> {
        self.params()
    }
    fn blocks_mut(&mut self) -> Vec<(String, &mut Param)> {
        self.params_mut()
    }
}

impl Checkpoint for ArModel {
    const KIND: &'static str = "ar";
    type Config = ArModelConfig;

    fn checkpoint_config(&self) -> ArModelConfig {
        self.config.clone()
    }
    fn from_config(c: &ArModelConfig) -> Result<Self> {
        ArModel::new(c)
    }
    fn blocks(&self) -> Vec<(String, &Param)> {
        let mut v = Vec::new();
        self.tower.params(&mut v);
        v
    }
    fn blocks_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut v = Vec::new();
        self.tower.params_mut(&mut v);
        v
    }
}

impl Checkpoint for CrModel {
    const KIND: &'static str = "cr";
    type Config = CrModelConfig;

    fn checkpoint_config(&self) -> CrModelConfig {
        self.config.clone()
    }
    fn from_config(c: &CrModelConfig) -> Result<Self> {
        CrModel::new(c)
    }
    fn blocks(&self) -> Vec<(String, &Param)> {
        let mut v = Vec::new();
        self.tower.params(&mut v);
        v
    }
    fn blocks_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut v = Vec::new();
        self.tower.params_mut(&mut v);
        v
    }
}

/// Seed plus tower config, the rebuild recipe of a bare tower.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TowerRecipe<C> {
    pub seed: u64,
    pub config: C,
}

impl Checkpoint for ArTower {
    const KIND: &'static str = "ar-tower";
    type Config = TowerRecipe<ArConfig>;

    fn checkpoint_config(&self) -> Self::Config {
        TowerRecipe {
            seed: self.seed,
            config: self.config.clone(),
        }
    }
    fn from_config(c: &Self::Config) -> Result<Self> {
        ArTower::new(&c.config, c.seed)
    }
    fn blocks(&self) -> Vec<(String, &Param)> {
        let mut v = Vec::new();
        self.params(&mut v);
        v
    }
    fn blocks_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut v = Vec::new();
        self.params_mut(&mut v);
        v
    }
}

impl Checkpoint for CrTower {
    const KIND: &'static str = "cr-tower";
    type Config = TowerRecipe<CrConfig>;

    fn checkpoint_config(&self) -> Self::Config {
        TowerRecipe {
            seed: self.seed,
            config: self.config.clone(),
        }
    }
    fn from_config(c: &Self::Config) -> Result<Self> {
        CrTower::new(&c.config, c.seed)
    }
    fn blocks(&self) -> Vec<(String, &Param)> {
        let mut v = Vec::new();
        self.params(&mut v);
        v
    }
    fn blocks_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut v = Vec::new();
        self.params_mut(&mut v);
        v
    }
}

impl Checkpoint for TwoTower {
    const KIND: &'static str = "two-tower";
    type Config = TwoTowerConfig;

    fn checkpoint_config(&self) -> TwoTowerConfig {
        self.config.clone()
    }
    fn from_config(c: &TwoTowerConfig) -> Result<Self> {
        TwoTower::new(c)
    }
    fn blocks(&self) -> Vec<(String, &Param)> {
        let mut v = Vec::new();
        self.params(&mut v);
        v
    }
    fn blocks_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut v = Vec::new();
        self.params_mut(&mut v);
        v
    }
}
