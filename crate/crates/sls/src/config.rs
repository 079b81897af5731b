//! Experiment configuration (TOML). See `configs/example.toml` for an
//! annotated file covering every key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sls_core::analysis::{select_layers, ContributionScores, LayerRef, SelectionMask, SelectionPolicy, SumVariant};
use sls_core::convergence::ConvergenceCriterion;
use sls_core::data::NormMethod;
use sls_core::detector::ThresholdMethod;
use sls_core::edge::EdgeSpec;
use sls_core::fl::FlConfig;
use sls_core::nn::{Activation, Activations, Init, Optimizer, TrainConfig};
use sls_core::synthesis::{GlueInit, Strategy, SynthesisPlan};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; single-run subcommands use it directly.
    #[serde(default = "one")]
    pub seed: u64,
    /// Seeds for `compare`. Empty means `[seed]`.
    #[serde(default)]
    pub seeds: Vec<u64>,
    pub data: DataConfig,
    pub partition: PartitionConfig,
    pub edge: EdgeConfig,
    #[serde(default)]
    pub central: CentralConfig,
    #[serde(default)]
    pub plans: Vec<PlanSpec>,
    #[serde(default)]
    pub fl: Option<FlSection>,
    #[serde(default)]
    pub criterion: ConvergenceCriterion,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub run: RunConfig,
}

fn one() -> u64 {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    #[serde(flatten)]
    pub source: DataSource,
    #[serde(default = "minmax")]
    pub normalize: NormMethod,
    /// Separate labeled evaluation set for detection (synthetic source only).
    #[serde(default)]
    pub holdout: Option<Holdout>,
}

fn minmax() -> NormMethod {
    NormMethod::MinMax
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic {
        dim: usize,
        n_normal: usize,
        #[serde(default)]
        n_attack: usize,
        #[serde(default = "three")]
        attack_shift: f64,
        #[serde(default)]
        region_jitter: f64,
    },
    Csv {
        path: PathBuf,
        schema: PathBuf,
    },
}

fn three() -> f64 {
    3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Holdout {
    pub n_normal: usize,
    pub n_attack: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub edges: usize,
    pub train_rows: usize,
    pub test_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeConfig {
    /// `[d, h1, ..., hk, d]`.
    pub shape: Vec<usize>,
    #[serde(default = "tanh")]
    pub hidden_activation: Activation,
    #[serde(default = "sigmoid")]
    pub output_activation: Activation,
    #[serde(default)]
    pub train: TrainConfig,
}

fn tanh() -> Activation {
    Activation::Tanh
}

fn sigmoid() -> Activation {
    Activation::Sigmoid
}

impl EdgeConfig {
    pub fn activations(&self) -> Activations {
        Activations::new(self.hidden_activation, self.output_activation)
    }

    /// Edge spec under master seed `seed`.
    pub fn spec(&self, seed: u64) -> EdgeSpec {
        EdgeSpec {
            shape: self.shape.clone(),
            activations: self.activations(),
            train: TrainConfig {
                seed,
                ..self.train.clone()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CentralConfig {
    /// Fine-tuning and fresh-central training settings.
    #[serde(default)]
    pub train: TrainConfig,
    /// Fresh-central shape; defaults to the first plan's synthesized shape.
    #[serde(default)]
    pub fresh_shape: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectKind {
    All,
    TopKPerModel,
    TopKGlobal,
    Threshold,
    /// Dense layer `i` of the central model comes from edge `(i mod M) + 1`;
    /// the central model has the edge shape.
    Alternate,
    /// Explicit `layers` list.
    Layers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    pub name: String,
    pub select: SelectKind,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub tau: Option<f64>,
    /// `E<model>.L<layer>` refs for `select = "layers"`, in stacking order.
    #[serde(default)]
    pub layers: Vec<String>,
    #[serde(default)]
    pub variant: SumVariant,
    #[serde(default)]
    pub strategy: Strategy,
    /// Adds every edge's output layer to a score-based selection.
    #[serde(default)]
    pub include_outputs: bool,
    #[serde(default)]
    pub glue_init: Option<GlueInit>,
    #[serde(default)]
    pub cross_block_scale: f64,
    #[serde(default)]
    pub head: Vec<usize>,
    #[serde(default = "yes")]
    pub allow_glue: bool,
}

impl PlanSpec {
    pub fn policy(&self) -> Result<Option<SelectionPolicy>> {
        let need_k = || self.k.ok_or_else(|| Error::Config(format!("plan `{}` needs `k`", self.name)));
        Ok(Some(match self.select {
            SelectKind::All => SelectionPolicy::All,
            SelectKind::TopKPerModel => SelectionPolicy::TopKPerModel { k: need_k()? },
            SelectKind::TopKGlobal => SelectionPolicy::TopKGlobal { k: need_k()? },
            SelectKind::Threshold => SelectionPolicy::Threshold {
                tau: self
                    .tau
                    .ok_or_else(|| Error::Config(format!("plan `{}` needs `tau`", self.name)))?,
            },
            SelectKind::Alternate | SelectKind::Layers => return Ok(None),
        }))
    }

    /// Layer refs in stacking order for the kinds that do not use scores.
    fn fixed_order(&self, depths: &[usize]) -> Result<Option<Vec<LayerRef>>> {
        match self.select {
            SelectKind::Alternate => {
                let m = depths.len();
                if m == 0 || depths.iter().any(|&d| d != depths[0]) {
                    return Err(Error::Config(format!(
                        "plan `{}`: alternate needs edges of equal depth",
                        self.name
                    )));
                }
                Ok(Some((0..depths[0]).map(|i| LayerRef::new(i % m + 1, i)).collect()))
            }
            SelectKind::Layers => {
                if self.layers.is_empty() {
                    return Err(Error::Config(format!("plan `{}` lists no layers", self.name)));
                }
                let refs = self
                    .layers
                    .iter()
                    .map(|s| s.parse::<LayerRef>())
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                Ok(Some(refs))
            }
            _ => Ok(None),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.policy()?;
        if self.select == SelectKind::Layers {
            self.fixed_order(&[])?;
        }
        Ok(())
    }

    /// Builds the synthesis plan from per-edge scores.
    pub fn build(&self, scores: &[ContributionScores], depths: &[usize]) -> Result<SynthesisPlan> {
        let (mask, order) = match self.fixed_order(depths)? {
            Some(order) => {
                let mut mask = SelectionMask::from_refs(depths, &order)?;
                mask.scoring = None;
                (mask, Some(order))
            }
            None => {
                let policy = self.policy()?.expect("score-based kind");
                let mut mask = select_layers(scores, depths, policy)?;
                if self.include_outputs {
                    let mut refs = mask.selected();
                    refs.extend(depths.iter().enumerate().map(|(k, &d)| LayerRef::new(k + 1, d - 1)));
                    let scoring = mask.scoring.take();
                    mask = SelectionMask::from_refs(depths, &refs)?;
                    mask.scoring = scoring;
                }
                (mask, None)
            }
        };
        let mut plan = match self.strategy {
            Strategy::Stack => SynthesisPlan::stack(mask),
            Strategy::Widen => SynthesisPlan::widen(mask, self.cross_block_scale),
        };
        if let Some(order) = order {
            plan.layer_order = order;
        }
        if let Some(g) = self.glue_init {
            plan.glue_init = g;
        }
        plan.head = self.head.clone();
        plan.allow_glue = self.allow_glue;
        plan.validate()?;
        Ok(plan)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlSection {
    #[serde(default = "fl_rounds")]
    pub rounds: usize,
    #[serde(default = "fl_local_epochs")]
    pub local_epochs: usize,
    #[serde(default = "fl_edge_lr")]
    pub edge_lr: f64,
    #[serde(default = "fl_central_lr")]
    pub central_lr: f64,
    #[serde(default = "fl_l2")]
    pub l2_reg: f64,
    #[serde(default = "fl_batch")]
    pub batch_size: Option<usize>,
    #[serde(default = "fl_init")]
    pub init: Init,
    #[serde(default = "fl_opt")]
    pub local_optimizer: Optimizer,
    /// Defaults to the edge shape.
    #[serde(default)]
    pub shape: Option<Vec<usize>>,
}

fn fl_rounds() -> usize {
    FlConfig::default().rounds
}
fn fl_local_epochs() -> usize {
    FlConfig::default().local_epochs
}
fn fl_edge_lr() -> f64 {
    FlConfig::default().edge_lr
}
fn fl_central_lr() -> f64 {
    FlConfig::default().central_lr
}
fn fl_l2() -> f64 {
    FlConfig::default().l2_reg
}
fn fl_batch() -> Option<usize> {
    FlConfig::default().batch_size
}
fn fl_init() -> Init {
    FlConfig::default().init
}
fn fl_opt() -> Optimizer {
    FlConfig::default().local_optimizer
}

impl Default for FlSection {
    fn default() -> Self {
        toml::from_str("").expect("all fields default")
    }
}

impl FlSection {
    pub fn config(&self, n_clients: usize, edge: &EdgeConfig, seed: u64) -> FlConfig {
        FlConfig {
            n_clients,
            rounds: self.rounds,
            local_epochs: self.local_epochs,
            edge_lr: self.edge_lr,
            central_lr: self.central_lr,
            l2_reg: self.l2_reg,
            shape: self.shape.clone().unwrap_or_else(|| edge.shape.clone()),
            activations: edge.activations(),
            batch_size: self.batch_size,
            init: self.init,
            local_optimizer: self.local_optimizer,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub method: ThresholdMethod,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            method: ThresholdMethod::Percentile { p: 0.99 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Worker threads for seeds, edges and FL clients; 1 runs serially.
    #[serde(default = "one_usize")]
    pub jobs: usize,
    /// Record wall-clock times (never part of the manifest hashes).
    #[serde(default = "yes")]
    pub wall_clock: bool,
}

fn one_usize() -> usize {
    1
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            jobs: 1,
            wall_clock: true,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| Error::format(path, e))?;
        // relative data paths are resolved against the config file
        if let DataSource::Csv { path: p, schema } = &mut cfg.data.source {
            let base = path.parent().unwrap_or(Path::new("."));
            for f in [p, schema] {
                if f.is_relative() {
                    *f = base.join(&*f);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let d = match &self.data.source {
            DataSource::Synthetic { dim, .. } => Some(*dim),
            DataSource::Csv { .. } => None,
        };
        let shape = &self.edge.shape;
        if shape.len() < 2 || shape.first() != shape.last() {
            return Err(Error::Config("edge.shape must be [d, ..., d]".into()));
        }
        if let Some(d) = d {
            if shape[0] != d {
                return Err(Error::Config(format!("edge.shape starts with {} but data.dim is {d}", shape[0])));
            }
        }
        if self.data.holdout.is_some() && d.is_none() {
            return Err(Error::Config("data.holdout needs the synthetic source".into()));
        }
        if self.run.jobs == 0 {
            return Err(Error::Config("run.jobs must be at least 1".into()));
        }
        let mut names: Vec<&str> = self.plans.iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("plan names must be unique".into()));
        }
        for p in &self.plans {
            p.validate()?;
        }
        self.criterion.validate()?;
        self.edge.train.validate()?;
        Ok(())
    }

    pub fn seed_list(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    pub fn plan(&self, name: &str) -> Result<&PlanSpec> {
        self.plans
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Config(format!("no plan named `{name}`")))
    }
}
