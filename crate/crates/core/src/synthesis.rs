//! Assembly of the central model from selected trained edge layers.
//!
//! Two strategies:
//!
//! * **stack**: a fresh input layer, the selected layers in plan order with
//!   fresh glue layers wherever widths disagree, then a fresh head back to the
//!   input width.
//! * **widen**: the `j`-th selected layer of every participating edge
//!   becomes block `k` of a block-diagonal layer at position `j`; off-diagonal
//!   weights are drawn on `[-cross_block_scale, cross_block_scale]`. Edge
//!   input layers are instead stacked over the shared input, and edge output
//!   layers are averaged into the final layer.
//!
//! Copied parameters are bit-equal to their sources, except averaged output
//! layers, which are scaled by `1/blocks`. All layers stay trainable.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::distr::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{LayerRef, SelectionMask};
use crate::data::Dataset;
use crate::edge::EdgeModelSet;
use crate::error::{Error, Result};
use crate::nn::{fit, Activation, DenseLayer, Network, OptimState, Origin, TrainConfig, TrainTrace};
use crate::rng::{stream_rng, STREAM_GLUE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Stack,
    Widen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GlueInit {
    UniformPm1,
    #[default]
    UniformScaled,
    /// Uniform on `[-NEAR_ZERO_BOUND, NEAR_ZERO_BOUND]`.
    NearZero,
}

pub const NEAR_ZERO_BOUND: f64 = 1e-3;

impl GlueInit {
    pub fn bound(self, in_dim: usize) -> f64 {
        match self {
            GlueInit::UniformPm1 => 1.0,
            GlueInit::UniformScaled => 1.0 / libm::sqrt(in_dim as f64),
            GlueInit::NearZero => NEAR_ZERO_BOUND,
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisPlan {
    pub mask: SelectionMask,
    /// Exactly the mask's selected layers, each once. Widen ignores the order.
    pub layer_order: Vec<LayerRef>,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub glue_init: GlueInit,
    /// Widths of fresh hidden layers placed before the final fresh output layer.
    #[serde(default)]
    pub head: Vec<usize>,
    /// Widen only: bound of the off-diagonal weights (0 keeps blocks independent).
    #[serde(default)]
    pub cross_block_scale: f64,
    /// Stack only: permit fresh glue layers between mismatched widths.
    #[serde(default = "default_true")]
    pub allow_glue: bool,
}

impl SynthesisPlan {
    /// Stack plan in (model, layer) order.
    pub fn stack(mask: SelectionMask) -> Self {
        Self {
            layer_order: mask.selected(),
            mask,
            strategy: Strategy::Stack,
            glue_init: GlueInit::default(),
            head: Vec::new(),
            cross_block_scale: 0.0,
            allow_glue: true,
        }
    }

    pub fn widen(mask: SelectionMask, cross_block_scale: f64) -> Self {
        Self {
            strategy: Strategy::Widen,
            cross_block_scale,
            glue_init: GlueInit::NearZero,
            ..Self::stack(mask)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut order = self.layer_order.clone();
        order.sort();
        let len = order.len();
        order.dedup();
        if order.len() != len {
            return Err(Error::Synthesis("layer order repeats a layer".into()));
        }
        if order != self.mask.selected() {
            return Err(Error::Synthesis(
                "layer order must list exactly the mask's selected layers".into(),
            ));
        }
        if self.head.contains(&0) {
            return Err(Error::Synthesis("head widths must be positive".into()));
        }
        if !(self.cross_block_scale >= 0.0 && self.cross_block_scale.is_finite()) {
            return Err(Error::Synthesis("cross-block scale must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Where the copied parameters of one central layer came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    /// Dense index in the synthesized network.
    pub central_layer: usize,
    pub source: LayerRef,
    /// Block position inside a widened layer.
    pub block: Option<usize>,
    /// Parameter hash of the source edge layer at synthesis time.
    pub source_hash: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesizedModel {
    pub net: Network,
    pub plan: Option<SynthesisPlan>,
    pub sources: Vec<SourceRecord>,
    /// Share of parameters copied from edges.
    pub fraction_pretrained: f64,
}

impl SynthesizedModel {
    /// Wraps any network; provenance comes from its layer origin tags.
    pub fn from_network(net: Network) -> Self {
        let total = net.param_count();
        let copied: usize = net.layers().iter().map(DenseLayer::pretrained_param_count).sum();
        Self {
            fraction_pretrained: if total == 0 { 0.0 } else { copied as f64 / total as f64 },
            net,
            plan: None,
            sources: Vec::new(),
        }
    }
}

struct Fresh<'a, R> {
    rng: &'a mut R,
    init: GlueInit,
}

impl<R: Rng> Fresh<'_, R> {
    fn layer(&mut self, i: usize, o: usize, act: Activation) -> Result<DenseLayer> {
        DenseLayer::new_uniform(i, o, act, self.init.bound(i), self.rng)
    }
}

fn source(edges: &EdgeModelSet, r: LayerRef) -> Result<&DenseLayer> {
    edges
        .model(r.model)
        .and_then(|m| m.layers().get(r.layer))
        .ok_or_else(|| Error::Synthesis(format!("{r} does not exist in the edge set")))
}

pub fn synthesize(
    edges: &EdgeModelSet,
    plan: &SynthesisPlan,
    input_dim: usize,
    config: &TrainConfig,
) -> Result<SynthesizedModel> {
    plan.validate()?;
    if plan.mask.models() != edges.m() {
        return Err(Error::Synthesis(format!(
            "mask covers {} models, edge set has {}",
            plan.mask.models(),
            edges.m()
        )));
    }
    for (k, (&d, net)) in edges.depths().iter().zip(&edges.models).enumerate() {
        if plan.mask.depth_of(k + 1) != Some(d) {
            return Err(Error::Synthesis(format!("mask depth differs from edge model {}", k + 1)));
        }
        if net.input_dim() != input_dim {
            return Err(Error::Synthesis(format!(
                "edge model {} has input width {}, central input is {input_dim}",
                k + 1,
                net.input_dim()
            )));
        }
    }
    let first = edges.model(1).ok_or_else(|| Error::Synthesis("empty edge set".into()))?;
    let hidden = first.layers()[0].activation();
    let output = first.layers()[first.depth() - 1].activation();
    let mut rng = stream_rng(config.seed, STREAM_GLUE);
    let mut fresh = Fresh {
        rng: &mut rng,
        init: plan.glue_init,
    };
    let (layers, sources) = match plan.strategy {
        Strategy::Stack => stack(edges, plan, input_dim, hidden, output, &mut fresh)?,
        Strategy::Widen => widen(edges, plan, input_dim, hidden, output, &mut fresh)?,
    };
    let net = Network::from_layers(layers).map_err(|e| Error::Synthesis(format!("{e}")))?;
    let mut model = SynthesizedModel::from_network(net);
    model.plan = Some(plan.clone());
    model.sources = sources;
    Ok(model)
}

type Built = (Vec<DenseLayer>, Vec<SourceRecord>);

fn close_head<R: Rng>(
    layers: &mut Vec<DenseLayer>,
    mut cur: usize,
    head: &[usize],
    input_dim: usize,
    hidden: Activation,
    output: Activation,
    fresh: &mut Fresh<'_, R>,
) -> Result<()> {
    for &h in head {
        layers.push(fresh.layer(cur, h, hidden)?);
        cur = h;
    }
    layers.push(fresh.layer(cur, input_dim, output)?);
    Ok(())
}

fn stack<R: Rng>(
    edges: &EdgeModelSet,
    plan: &SynthesisPlan,
    input_dim: usize,
    hidden: Activation,
    output: Activation,
    fresh: &mut Fresh<'_, R>,
) -> Result<Built> {
    let refs = &plan.layer_order;
    let mut layers = Vec::new();
    let mut sources = Vec::new();
    let mut cur = input_dim;
    let head_ref = refs[0];
    let head_src = source(edges, head_ref)?;
    if head_ref.layer != 0 {
        layers.push(fresh.layer(cur, head_src.in_dim(), hidden)?);
        cur = head_src.in_dim();
    }
    let mut prev: Option<LayerRef> = None;
    for &r in refs {
        let src = source(edges, r)?;
        if src.in_dim() != cur {
            if !plan.allow_glue {
                let from = prev.map_or_else(|| String::from("input"), |p| format!("{p}"));
                return Err(Error::Synthesis(format!(
                    "{from} emits width {cur} but {r} expects {}; glue is disabled",
                    src.in_dim()
                )));
            }
            layers.push(fresh.layer(cur, src.in_dim(), hidden)?);
        }
        sources.push(SourceRecord {
            central_layer: layers.len(),
            source: r,
            block: None,
            source_hash: src.param_hash(),
        });
        layers.push(src.copied_from_edge(r.model, r.layer));
        cur = src.out_dim();
        prev = Some(r);
    }
    let last = *refs.last().expect("validated non-empty");
    let last_is_output = edges.model(last.model).is_some_and(|m| last.layer + 1 == m.depth());
    if !(last_is_output && plan.head.is_empty()) {
        close_head(&mut layers, cur, &plan.head, input_dim, hidden, output, fresh)?;
    }
    Ok((layers, sources))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Position {
    FanOut,
    Diagonal,
    Average,
}

fn widen<R: Rng>(
    edges: &EdgeModelSet,
    plan: &SynthesisPlan,
    input_dim: usize,
    hidden: Activation,
    output: Activation,
    fresh: &mut Fresh<'_, R>,
) -> Result<Built> {
    let per_model: Vec<(usize, Vec<usize>)> = (1..=edges.m())
        .map(|k| (k, plan.mask.selected_in(k)))
        .filter(|(_, s)| !s.is_empty())
        .collect();
    let positions = per_model[0].1.len();
    if let Some((k, s)) = per_model.iter().find(|(_, s)| s.len() != positions) {
        return Err(Error::Synthesis(format!(
            "widen needs the same number of layers per edge: E{} selects {}, E{k} selects {}",
            per_model[0].0,
            positions,
            s.len()
        )));
    }
    let depths = edges.depths();
    let nb = per_model.len();
    let mut layers = Vec::new();
    let mut sources = Vec::new();
    let mut cur = input_dim;
    let mut ended = false;
    for j in 0..positions {
        let refs: Vec<LayerRef> = per_model.iter().map(|(k, s)| LayerRef::new(*k, s[j])).collect();
        let blocks = refs.iter().map(|&r| source(edges, r)).collect::<Result<Vec<_>>>()?;
        let b0 = blocks[0];
        for (r, b) in refs.iter().zip(&blocks).skip(1) {
            if (b.in_dim(), b.out_dim()) != (b0.in_dim(), b0.out_dim()) {
                return Err(Error::Synthesis(format!(
                    "widen position {}: {} is {}x{} but {} is {}x{}",
                    j + 1,
                    refs[0],
                    b0.in_dim(),
                    b0.out_dim(),
                    r,
                    b.in_dim(),
                    b.out_dim()
                )));
            }
            if b.activation() != b0.activation() {
                return Err(Error::Synthesis(format!(
                    "widen position {}: {} and {r} use different activations",
                    j + 1,
                    refs[0]
                )));
            }
        }
        let is_in = |r: &LayerRef| r.layer == 0;
        let is_out = |r: &LayerRef| r.layer + 1 == depths[r.model - 1];
        let kind = if refs.iter().all(is_in) {
            Position::FanOut
        } else if refs.iter().all(is_out) {
            Position::Average
        } else if !refs.iter().any(|r| is_in(r) || is_out(r)) {
            Position::Diagonal
        } else {
            let odd = refs.iter().find(|r| is_in(r) || is_out(r)).expect("some end layer");
            let other = refs.iter().find(|r| !(is_in(r) || is_out(r))).unwrap_or(&refs[0]);
            return Err(Error::Synthesis(format!(
                "widen position {}: {odd} is an input or output layer but {other} is not",
                j + 1
            )));
        };
        let (bi, bo) = (b0.in_dim(), b0.out_dim());
        let wi = if kind == Position::FanOut { bi } else { nb * bi };
        if kind != Position::FanOut && (j == 0 || cur != wi) {
            if j > 0 && !plan.allow_glue {
                return Err(Error::Synthesis(format!(
                    "widen position {j} emits width {cur} but position {} expects {wi}; glue is disabled",
                    j + 1
                )));
            }
            layers.push(fresh.layer(cur, wi, hidden)?);
        }
        for (k, (r, b)) in refs.iter().zip(&blocks).enumerate() {
            sources.push(SourceRecord {
                central_layer: layers.len(),
                source: *r,
                block: Some(k),
                source_hash: b.param_hash(),
            });
        }
        let layer = match kind {
            Position::FanOut => fan_out(&blocks)?,
            Position::Average => {
                if !plan.head.is_empty() {
                    return Err(Error::Synthesis(
                        "an averaged edge output layer ends the model; the head must be empty".into(),
                    ));
                }
                ended = true;
                average(&blocks)?
            }
            Position::Diagonal => {
                let mut w = vec![0.0; nb * bo * wi];
                if plan.cross_block_scale > 0.0 {
                    let dist = Uniform::new_inclusive(-plan.cross_block_scale, plan.cross_block_scale)
                        .map_err(|e| Error::Synthesis(format!("{e}")))?;
                    for v in &mut w {
                        *v = dist.sample(fresh.rng);
                    }
                }
                let mut bias = Vec::with_capacity(nb * bo);
                for (k, b) in blocks.iter().enumerate() {
                    for o in 0..bo {
                        let row = (k * bo + o) * wi + k * bi;
                        w[row..row + bi].copy_from_slice(&b.weights()[o * bi..(o + 1) * bi]);
                    }
                    bias.extend_from_slice(b.biases());
                }
                DenseLayer::from_parts(
                    wi,
                    nb * bo,
                    w,
                    bias,
                    b0.activation(),
                    Origin::EdgeBlocks {
                        position: j + 1,
                        blocks: nb,
                    },
                )?
            }
        };
        cur = layer.out_dim();
        layers.push(layer);
    }
    if !ended {
        close_head(&mut layers, cur, &plan.head, input_dim, hidden, output, fresh)?;
    }
    Ok((layers, sources))
}

/// Equal-shape layers reading the same input, outputs concatenated.
fn fan_out(blocks: &[&DenseLayer]) -> Result<DenseLayer> {
    let (bi, bo) = (blocks[0].in_dim(), blocks[0].out_dim());
    let mut w = Vec::with_capacity(blocks.len() * bo * bi);
    let mut bias = Vec::with_capacity(blocks.len() * bo);
    for b in blocks {
        w.extend_from_slice(b.weights());
        bias.extend_from_slice(b.biases());
    }
    DenseLayer::from_parts(
        bi,
        blocks.len() * bo,
        w,
        bias,
        blocks[0].activation(),
        Origin::EdgeFanOut { blocks: blocks.len() },
    )
}

/// Mean of equal-shape layers, each reading its own slice of the input.
fn average(blocks: &[&DenseLayer]) -> Result<DenseLayer> {
    let nb = blocks.len();
    let n = nb as f64;
    let (bi, bo) = (blocks[0].in_dim(), blocks[0].out_dim());
    let wi = nb * bi;
    let mut w = vec![0.0; bo * wi];
    let mut bias = vec![0.0; bo];
    for (k, b) in blocks.iter().enumerate() {
        for o in 0..bo {
            for i in 0..bi {
                w[o * wi + k * bi + i] = b.weights()[o * bi + i] / n;
            }
            bias[o] += b.biases()[o];
        }
    }
    for v in &mut bias {
        *v /= n;
    }
    DenseLayer::from_parts(wi, bo, w, bias, blocks[0].activation(), Origin::EdgeAverage { blocks: nb })
}

/// Diagonal block `k` of a widened layer made of `blocks` equal blocks.
pub fn extract_block(layer: &DenseLayer, blocks: usize, k: usize) -> Result<DenseLayer> {
    if blocks == 0 || k >= blocks || !layer.in_dim().is_multiple_of(blocks) || !layer.out_dim().is_multiple_of(blocks) {
        return Err(Error::Synthesis(format!("cannot take block {k} of {blocks}")));
    }
    let (bi, bo) = (layer.in_dim() / blocks, layer.out_dim() / blocks);
    let wi = layer.in_dim();
    let mut w = Vec::with_capacity(bi * bo);
    for o in 0..bo {
        let row = (k * bo + o) * wi + k * bi;
        w.extend_from_slice(&layer.weights()[row..row + bi]);
    }
    let b = layer.biases()[k * bo..(k + 1) * bo].to_vec();
    DenseLayer::from_parts(bi, bo, w, b, layer.activation(), Origin::Fresh)
}

/// Checks recorded source hashes against the current parameters of `model`.
/// Averaged output layers are not bit copies and are skipped; see
/// [`verify_sources`].
pub fn sources_match(model: &SynthesizedModel) -> bool {
    model.sources.iter().all(|s| {
        let Some(layer) = model.net.layers().get(s.central_layer) else {
            return false;
        };
        let hash = match (s.block, layer.origin()) {
            (None, _) => layer.param_hash(),
            (Some(k), Origin::EdgeBlocks { blocks, .. }) => match extract_block(layer, blocks, k) {
                Ok(b) => b.param_hash(),
                Err(_) => return false,
            },
            (Some(k), Origin::EdgeFanOut { blocks }) => match extract_rows(layer, blocks, k) {
                Ok(b) => b.param_hash(),
                Err(_) => return false,
            },
            (Some(_), Origin::EdgeAverage { .. }) => return true,
            (Some(_), _) => return false,
        };
        hash == s.source_hash
    })
}

/// Row block `k` of a fan-out layer made of `blocks` equal blocks.
pub fn extract_rows(layer: &DenseLayer, blocks: usize, k: usize) -> Result<DenseLayer> {
    if blocks == 0 || k >= blocks || !layer.out_dim().is_multiple_of(blocks) {
        return Err(Error::Synthesis(format!("cannot take rows {k} of {blocks}")));
    }
    let (i, bo) = (layer.in_dim(), layer.out_dim() / blocks);
    let w = layer.weights()[k * bo * i..(k + 1) * bo * i].to_vec();
    let b = layer.biases()[k * bo..(k + 1) * bo].to_vec();
    DenseLayer::from_parts(i, bo, w, b, layer.activation(), Origin::Fresh)
}

/// Recomputes every edge-derived part of `model` from `edges` and compares
/// exactly. Fresh layers and cross-block weights are not checked.
pub fn verify_sources(model: &SynthesizedModel, edges: &EdgeModelSet) -> bool {
    let same = |a: &DenseLayer, b: &DenseLayer| a.weights() == b.weights() && a.biases() == b.biases();
    for (i, layer) in model.net.layers().iter().enumerate() {
        let mut recs: Vec<&SourceRecord> = model.sources.iter().filter(|s| s.central_layer == i).collect();
        recs.sort_by_key(|s| s.block);
        let srcs: Option<Vec<&DenseLayer>> = recs.iter().map(|s| source(edges, s.source).ok()).collect();
        let Some(srcs) = srcs else { return false };
        let ok = match layer.origin() {
            Origin::Fresh => recs.is_empty(),
            Origin::Edge { model: m, layer: l } => {
                srcs.len() == 1 && recs[0].source == LayerRef::new(m, l) && same(layer, srcs[0])
            }
            Origin::EdgeBlocks { blocks, .. } => {
                srcs.len() == blocks
                    && srcs
                        .iter()
                        .enumerate()
                        .all(|(k, s)| extract_block(layer, blocks, k).is_ok_and(|b| same(&b, s)))
            }
            Origin::EdgeFanOut { blocks } => srcs.len() == blocks && fan_out(&srcs).is_ok_and(|b| same(&b, layer)),
            Origin::EdgeAverage { blocks } => srcs.len() == blocks && average(&srcs).is_ok_and(|b| same(&b, layer)),
        };
        if !ok {
            return false;
        }
    }
    true
}

/// Trains every layer of the synthesized model on central data with a fresh
/// optimizer state. Zero epochs leaves the model untouched.
pub fn fine_tune(
    model: &mut SynthesizedModel,
    central_train: &Dataset,
    central_val: &Dataset,
    config: &TrainConfig,
) -> Result<TrainTrace> {
    if config.epochs == 0 {
        config.validate_hyper()?;
        return Ok(TrainTrace::default());
    }
    if central_val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut state = OptimState::new(&model.net, config.optimizer);
    fit(
        &mut model.net,
        central_train.features(),
        Some(central_val.features()),
        config,
        0,
        &mut state,
    )
}

/// Per-layer provenance table.
pub fn describe(model: &SynthesizedModel) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>5}  {:>6}  {:>6}  {:<9} {:<22} {:>9}  {:>10}", "layer", "in", "out", "act", "origin", "params", "pretrained");
    for (i, l) in model.net.layers().iter().enumerate() {
        let origin = match l.origin() {
            Origin::Fresh => String::from("fresh"),
            Origin::Edge { model, layer } => format!("edge E{model}.L{layer}"),
            Origin::EdgeBlocks { position, blocks } => format!("widen pos {position} x{blocks}"),
            Origin::EdgeFanOut { blocks } => format!("edge inputs x{blocks}"),
            Origin::EdgeAverage { blocks } => format!("edge output mean x{blocks}"),
        };
        let _ = writeln!(
            s,
            "{:>5}  {:>6}  {:>6}  {:<9} {:<22} {:>9}  {:>10}",
            i,
            l.in_dim(),
            l.out_dim(),
            l.activation().name(),
            origin,
            l.param_count(),
            l.pretrained_param_count()
        );
    }
    let widths: Vec<String> = model.net.widths().iter().map(|w| format!("{w}")).collect();
    let _ = writeln!(s, "widths: {}", widths.join(","));
    let _ = writeln!(s, "trainable parameters: {}", model.net.param_count());
    let _ = writeln!(s, "fraction pretrained: {:.4}", model.fraction_pretrained);
    s
}
