//! Checkpoint container.
//!
//! Layout: `u32` little-endian header length, a UTF-8 JSON header, then every
//! network's parameters as little-endian `f32`, in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{param_count, Activation, Mlp};
use crate::error::{Error, Result};

pub const FORMAT: &str = "telesync-ckpt";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEntry {
    pub name: String,
    pub sizes: Vec<usize>,
    pub output: Activation,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub step: u64,
    pub seeds: Vec<u64>,
    pub networks: Vec<NetworkEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    nets: Vec<Mlp>,
}

impl Checkpoint {
    pub fn new(kind: &str, step: u64, seeds: Vec<u64>, meta: serde_json::Value) -> Self {
        Self {
            header: CheckpointHeader {
                format: FORMAT.into(),
                version: VERSION,
                kind: kind.into(),
                step,
                seeds,
                networks: Vec::new(),
                meta,
            },
            nets: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, net: &Mlp) {
        self.header.networks.push(NetworkEntry {
            name: name.into(),
            sizes: net.sizes().to_vec(),
            output: net.output_activation(),
            params: net.num_params(),
        });
        self.nets.push(net.clone());
    }

    pub fn network(&self, name: &str) -> Result<&Mlp> {
        self.header
            .networks
            .iter()
            .position(|e| e.name == name)
            .map(|i| &self.nets[i])
            .ok_or_else(|| Error::Checkpoint(format!("no network named {name:?}")))
    }

    pub fn networks(&self) -> impl Iterator<Item = (&str, &Mlp)> {
        self.header.networks.iter().map(|e| e.name.as_str()).zip(&self.nets)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let len = u32::try_from(header.len()).map_err(|_| Error::Checkpoint("header too large".into()))?;
        let total: usize = self.nets.iter().map(Mlp::num_params).sum();
        let mut out = Vec::with_capacity(4 + header.len() + 4 * total);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&header);
        for net in &self.nets {
            for p in net.params() {
                out.extend_from_slice(&(*p as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let short = || Error::Checkpoint("truncated checkpoint".into());
        let len_bytes: [u8; 4] = bytes.get(..4).ok_or_else(short)?.try_into().expect("4 bytes");
        let len = u32::from_le_bytes(len_bytes) as usize;
        let header_bytes = bytes.get(4..4 + len).ok_or_else(short)?;
        let header: CheckpointHeader = serde_json::from_slice(header_bytes)?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format {:?} version {}",
                header.format, header.version
            )));
        }
        for e in &header.networks {
            if e.sizes.len() < 2 || e.sizes.contains(&0) || param_count(&e.sizes) != e.params {
                return Err(Error::Checkpoint(format!(
                    "network {:?}: sizes {:?} do not give {} parameters",
                    e.name, e.sizes, e.params
                )));
            }
        }
        let declared: usize = header.networks.iter().map(|e| e.params).sum();
        let block = &bytes[4 + len..];
        if block.len() != 4 * declared {
            return Err(Error::Checkpoint(format!(
                "parameter block holds {} floats, header declares {declared}",
                block.len() as f64 / 4.0
            )));
        }
        let mut floats = block
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
        let mut nets = Vec::with_capacity(header.networks.len());
        for e in &header.networks {
            let params: Vec<f64> = floats.by_ref().take(e.params).collect();
            nets.push(Mlp::from_params(&e.sizes, e.output, params)?);
        }
        Ok(Self { header, nets })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
