//! Flat binary model files.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 6 | magic `SLSNET` |
//! | 4 | format version (`u32`, currently 1) |
//! | 4 | header length `h` (`u32`) |
//! | h | UTF-8 JSON [`ModelHeader`] |
//! | rest | per layer: weights (`out x in`, row-major) then biases, `f64` LE |
//!
//! The header's `param_sha256` covers the parameter section and is checked on
//! read.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sls_core::nn::{Activation, DenseLayer, Network, Origin};
use sls_core::synthesis::{SourceRecord, SynthesisPlan, SynthesizedModel};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"SLSNET";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerHeader {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub widths: Vec<usize>,
    pub layers: Vec<LayerHeader>,
    pub param_count: usize,
    pub param_sha256: String,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Free-form echo of the configuration that produced the model.
    #[serde(default)]
    pub config: Option<serde_json::Value>,
    #[serde(default)]
    pub plan: Option<SynthesisPlan>,
    #[serde(default)]
    pub sources: Vec<SourceRecord>,
}

/// A network with the metadata stored next to it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub net: Network,
    pub seed: Option<u64>,
    pub config: Option<serde_json::Value>,
    pub plan: Option<SynthesisPlan>,
    pub sources: Vec<SourceRecord>,
}

impl ModelFile {
    pub fn new(net: Network) -> Self {
        Self {
            net,
            seed: None,
            config: None,
            plan: None,
            sources: Vec::new(),
        }
    }

    pub fn from_synthesized(m: &SynthesizedModel) -> Self {
        Self {
            plan: m.plan.clone(),
            sources: m.sources.clone(),
            ..Self::new(m.net.clone())
        }
    }

    pub fn into_synthesized(self) -> SynthesizedModel {
        let mut m = SynthesizedModel::from_network(self.net);
        m.plan = self.plan;
        m.sources = self.sources;
        m
    }
}

fn params(net: &Network) -> Vec<u8> {
    let mut out = Vec::with_capacity(net.param_count() * 8);
    for l in net.layers() {
        for v in l.weights().iter().chain(l.biases()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn encode(model: &ModelFile) -> Result<Vec<u8>> {
    let body = params(&model.net);
    let header = ModelHeader {
        widths: model.net.widths(),
        layers: model
            .net
            .layers()
            .iter()
            .map(|l| LayerHeader {
                in_dim: l.in_dim(),
                out_dim: l.out_dim(),
                activation: l.activation(),
                origin: l.origin(),
            })
            .collect(),
        param_count: model.net.param_count(),
        param_sha256: hex::encode(Sha256::digest(&body)),
        seed: model.seed,
        config: model.config.clone(),
        plan: model.plan.clone(),
        sources: model.sources.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::with_capacity(14 + json.len() + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<ModelFile> {
    let bad = |msg: &str| Error::format(path, msg);
    if bytes.len() < 14 || &bytes[..6] != MAGIC {
        return Err(bad("not a model file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported model file version {version}")));
    }
    let h = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes")) as usize;
    let json = bytes.get(14..14 + h).ok_or_else(|| bad("truncated header"))?;
    let header: ModelHeader = serde_json::from_slice(json).map_err(|e| Error::format(path, e))?;
    let body = &bytes[14 + h..];
    if body.len() != header.param_count * 8 {
        return Err(Error::format(
            path,
            format!("expected {} parameter bytes, found {}", header.param_count * 8, body.len()),
        ));
    }
    if hex::encode(Sha256::digest(body)) != header.param_sha256 {
        return Err(bad("parameter checksum mismatch"));
    }
    let mut vals = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut layers = Vec::with_capacity(header.layers.len());
    for l in &header.layers {
        let w: Vec<f64> = vals.by_ref().take(l.in_dim * l.out_dim).collect();
        let b: Vec<f64> = vals.by_ref().take(l.out_dim).collect();
        layers.push(DenseLayer::from_parts(l.in_dim, l.out_dim, w, b, l.activation, l.origin)?);
    }
    let net = Network::from_layers(layers)?;
    if net.param_count() != header.param_count || net.widths() != header.widths {
        return Err(bad("header shape disagrees with layer list"));
    }
    Ok(ModelFile {
        net,
        seed: header.seed,
        config: header.config,
        plan: header.plan,
        sources: header.sources,
    })
}

pub fn write_model(path: &Path, model: &ModelFile) -> Result<()> {
    std::fs::write(path, encode(model)?).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
