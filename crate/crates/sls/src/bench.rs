//! Paired comparison of synthesized, fresh-central and federated arms.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sls_core::analysis::{compute_layer_stats, contribution_score, ContributionScores, SumVariant};
use sls_core::convergence::{epochs_to_converge, ConvergenceCriterion};
use sls_core::detector::{calibrate, evaluate, score, DetectionReport, ThresholdMethod};
use sls_core::edge::{train_edges, EdgeModelSet};
use sls_core::fl::fl_bytes_exchanged;
use sls_core::nn::{estimate_cost, init_network, train, Network, TrainConfig, TrainTrace};
use sls_core::synthesis::{fine_tune, synthesize};

use crate::config::ExperimentConfig;
use crate::data_io::write_json;
use crate::error::{Error, Result};
use crate::parallel::{fl_run_parallel, map_jobs};
use crate::pipeline::{prepare, DataHashes, Prepared};

pub const FRESH: &str = "fresh";
pub const FL: &str = "fl";

pub fn plan_arm(name: &str) -> String {
    format!("plan:{name}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSummary {
    pub edge: usize,
    pub epochs_run: usize,
    pub epochs_to_converge: Option<usize>,
    pub final_val_rmse: Option<f64>,
    /// L1 contribution score per hidden layer.
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ArmResult {
    pub arm: String,
    pub shape: Vec<usize>,
    pub params: usize,
    pub fraction_pretrained: Option<f64>,
    /// Epochs (rounds for FL) trained.
    pub epochs_run: usize,
    pub epochs_to_converge: Option<usize>,
    pub final_val_rmse: Option<f64>,
    pub min_val_rmse: Option<f64>,
    /// Training operations of one epoch over this arm's central data (one
    /// round of all clients for FL).
    pub cost_per_epoch: u64,
    /// Operations until convergence, including edge training for
    /// synthesized arms and all local epochs for FL.
    pub compute_to_converge: Option<u64>,
    /// For a run that did not converge: operations up to the earliest epoch
    /// at which it still could, `epochs_run - patience + 2`. A longer run
    /// only lowers the minimum, so no earlier epoch can qualify.
    pub compute_lower_bound: Option<u64>,
    /// Synthesized: parameters of the transferred edge layers once. FL:
    /// uploads plus downloads up to the convergence round.
    pub bytes_exchanged: Option<u64>,
    pub detection: Option<DetectionReport>,
    pub wall_clock_s: Option<f64>,
    /// Wall clock scaled by the share of epochs needed to converge.
    pub time_to_converge_s: Option<f64>,
    pub train_curve: Vec<f64>,
    pub val_curve: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub hashes: DataHashes,
    pub edges: Vec<EdgeSummary>,
    pub arms: Vec<ArmResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    pub seeds: usize,
    pub seeds_converged: usize,
    /// Median over seeds; a run that never converged counts as `epochs_run + 1`.
    pub epochs_median: Option<f64>,
    /// `[q1, q3]`, absent with fewer than two seeds.
    pub epochs_iqr: Option<[f64; 2]>,
    pub time_to_converge_median_s: Option<f64>,
    pub accuracy_median: Option<f64>,
    pub fpr_median: Option<f64>,
    pub compute_median: Option<f64>,
    pub bytes_median: Option<f64>,
    pub cost_per_epoch: Option<u64>,
    /// `1 - epochs_median / fresh epochs_median`.
    pub epoch_improvement_vs_fresh: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub tool_version: String,
    pub config_sha256: String,
    pub criterion: ConvergenceCriterion,
    pub seeds: Vec<u64>,
    pub summaries: Vec<ArmSummary>,
    pub per_seed: Vec<SeedResult>,
    pub failures: Vec<String>,
}

impl ComparisonReport {
    pub fn summary(&self, arm: &str) -> Option<&ArmSummary> {
        self.summaries.iter().find(|s| s.arm == arm)
    }

    /// Copy without wall-clock fields; hashed into the manifest.
    pub fn deterministic_view(&self) -> Self {
        let mut r = self.clone();
        for s in &mut r.summaries {
            s.time_to_converge_median_s = None;
        }
        for a in r.per_seed.iter_mut().flat_map(|s| s.arms.iter_mut()) {
            a.wall_clock_s = None;
            a.time_to_converge_s = None;
        }
        r
    }
}

/// Median of a non-empty sample.
pub fn median(v: &[f64]) -> Option<f64> {
    quantile(v, 0.5)
}

/// Linear-interpolation quantile of the sorted sample.
pub fn quantile(v: &[f64], q: f64) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q * (s.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(s[lo] + (s[hi] - s[lo]) * (pos - lo as f64))
}

fn sha(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn train_ops(shape: &[usize], rows: usize) -> Result<u64> {
    Ok(estimate_cost(shape, rows as u64)?.training_ops())
}

fn curves(t: &TrainTrace) -> (Vec<f64>, Vec<f64>) {
    (t.train_losses(), t.val_losses())
}

fn detection(net: &Network, prep: &Prepared, method: ThresholdMethod) -> Result<Option<DetectionReport>> {
    let Some(d) = &prep.detect else { return Ok(None) };
    let cal = score(net, prep.partition.central.test.features())?;
    let th = calibrate(&cal, None, method)?;
    Ok(Some(evaluate(net, d.features(), d.labels().expect("detection set is labeled"), &th)?))
}

struct Timed<T> {
    value: T,
    secs: f64,
}

fn timed<T>(f: impl FnOnce() -> T) -> Timed<T> {
    let t = Instant::now();
    let value = f();
    Timed {
        value,
        secs: t.elapsed().as_secs_f64(),
    }
}

fn finish_curve(arm: &mut ArmResult, train_c: Vec<f64>, val_c: Vec<f64>, crit: &ConvergenceCriterion, secs: Option<f64>) {
    arm.epochs_run = val_c.len();
    arm.epochs_to_converge = epochs_to_converge(&val_c, crit);
    arm.final_val_rmse = val_c.last().copied();
    arm.min_val_rmse = val_c.iter().copied().reduce(f64::min);
    arm.wall_clock_s = secs;
    arm.time_to_converge_s = match (secs, arm.epochs_to_converge) {
        (Some(s), Some(e)) if arm.epochs_run > 0 => Some(s * e as f64 / arm.epochs_run as f64),
        _ => None,
    };
    arm.train_curve = train_c;
    arm.val_curve = val_c;
}

fn earliest_possible(arm: &ArmResult, crit: &ConvergenceCriterion) -> Option<u64> {
    arm.epochs_to_converge
        .is_none()
        .then(|| (arm.epochs_run + 2).saturating_sub(crit.patience).max(1) as u64)
}

fn failed(arm: String, e: Error) -> ArmResult {
    ArmResult {
        arm,
        error: Some(e.to_string()),
        ..ArmResult::default()
    }
}

/// All arms for one seed. Errors before any arm starts (data, edges) abort
/// the seed; individual arm failures are recorded in the arm.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedResult> {
    let prep = prepare(cfg, seed)?;
    let wall = cfg.run.wall_clock;
    let spec = cfg.edge.spec(seed);
    let edges = timed(|| train_edges(&prep.partition, &spec));
    let edge_secs = edges.secs;
    let edges = edges.value?;
    let mut edge_summaries = Vec::new();
    let mut scores_l1 = Vec::new();
    for (k, t) in edges.traces.iter().enumerate() {
        let s = contribution_score(&compute_layer_stats(k + 1, t)?, SumVariant::L1)?;
        let v = t.val_losses();
        edge_summaries.push(EdgeSummary {
            edge: k + 1,
            epochs_run: t.len(),
            epochs_to_converge: epochs_to_converge(&v, &cfg.criterion),
            final_val_rmse: v.last().copied(),
            scores: s.scores.clone(),
        });
        scores_l1.push(s);
    }
    let edge_ops: u64 = prep
        .partition
        .edges
        .iter()
        .zip(&edges.traces)
        .map(|(b, t)| Ok(train_ops(&spec.shape, b.train.rows())? * t.len() as u64))
        .sum::<Result<u64>>()?;

    let central_cfg = TrainConfig {
        seed,
        ..cfg.central.train.clone()
    };
    let ctrain = &prep.partition.central.train;
    let cval = &prep.partition.central.test;
    let mut arms = Vec::new();
    let mut first_shape: Option<Vec<usize>> = None;
    for p in &cfg.plans {
        let name = plan_arm(&p.name);
        let arm = (|| -> Result<ArmResult> {
            let scores = scores_for(&edges, &scores_l1, p.variant)?;
            let plan = p.build(&scores, &edges.depths())?;
            let mut model = synthesize(&edges, &plan, spec.shape[0], &central_cfg)?;
            let shape = model.net.widths();
            first_shape.get_or_insert_with(|| shape.clone());
            let transferred: BTreeSet<_> = plan.mask.selected().into_iter().collect();
            let bytes: u64 = transferred
                .iter()
                .map(|r| edges.model(r.model).expect("validated").layers()[r.layer].param_count() as u64 * 8)
                .sum();
            let ft = timed(|| fine_tune(&mut model, ctrain, cval, &central_cfg));
            let trace = ft.value?;
            let mut arm = ArmResult {
                arm: name.clone(),
                params: model.net.param_count(),
                fraction_pretrained: Some(model.fraction_pretrained),
                cost_per_epoch: train_ops(&shape, ctrain.rows())?,
                bytes_exchanged: Some(bytes),
                shape,
                ..ArmResult::default()
            };
            let (tc, vc) = curves(&trace);
            finish_curve(&mut arm, tc, vc, &cfg.criterion, wall.then_some(ft.secs + edge_secs));
            arm.compute_to_converge = arm.epochs_to_converge.map(|e| edge_ops + e as u64 * arm.cost_per_epoch);
            arm.compute_lower_bound = earliest_possible(&arm, &cfg.criterion).map(|e| edge_ops + e * arm.cost_per_epoch);
            arm.detection = detection(&model.net, &prep, cfg.detector.method)?;
            Ok(arm)
        })()
        .unwrap_or_else(|e| failed(name, e));
        arms.push(arm);
    }

    let fresh_shape = cfg.central.fresh_shape.clone().or(first_shape).unwrap_or_else(|| spec.shape.clone());
    let fresh = (|| -> Result<ArmResult> {
        let mut net = init_network(&fresh_shape, spec.activations, &central_cfg)?;
        let run = timed(|| train(&mut net, ctrain.features(), cval.features(), &central_cfg));
        let trace = run.value?;
        let mut arm = ArmResult {
            arm: FRESH.into(),
            shape: fresh_shape.clone(),
            params: net.param_count(),
            fraction_pretrained: Some(0.0),
            cost_per_epoch: train_ops(&fresh_shape, ctrain.rows())?,
            ..ArmResult::default()
        };
        let (tc, vc) = curves(&trace);
        finish_curve(&mut arm, tc, vc, &cfg.criterion, wall.then_some(run.secs));
        arm.compute_to_converge = arm.epochs_to_converge.map(|e| e as u64 * arm.cost_per_epoch);
        arm.compute_lower_bound = earliest_possible(&arm, &cfg.criterion).map(|e| e * arm.cost_per_epoch);
        arm.detection = detection(&net, &prep, cfg.detector.method)?;
        Ok(arm)
    })()
    .unwrap_or_else(|e| failed(FRESH.into(), e));
    arms.push(fresh);

    if let Some(fl) = &cfg.fl {
        let arm = (|| -> Result<ArmResult> {
            let flc = fl.config(prep.partition.m(), &cfg.edge, seed);
            let clients: Vec<_> = prep.partition.edges.iter().map(|b| b.train.features()).collect();
            let run = timed(|| fl_run_parallel(&clients, cval.features(), &flc, 1, false));
            let (trace, global) = run.value?;
            let round_ops: u64 = prep
                .partition
                .edges
                .iter()
                .map(|b| Ok(train_ops(&flc.shape, b.train.rows())? * flc.local_epochs as u64))
                .sum::<Result<u64>>()?;
            let mut arm = ArmResult {
                arm: FL.into(),
                shape: flc.shape.clone(),
                params: global.param_count(),
                cost_per_epoch: round_ops,
                ..ArmResult::default()
            };
            let vc = trace.val_losses();
            let tc = trace
                .rounds
                .iter()
                .map(|r| r.client_losses.iter().sum::<f64>() / r.client_losses.len().max(1) as f64)
                .collect();
            finish_curve(&mut arm, tc, vc, &cfg.criterion, wall.then_some(run.secs));
            arm.compute_to_converge = arm.epochs_to_converge.map(|r| r as u64 * round_ops);
            arm.compute_lower_bound = earliest_possible(&arm, &cfg.criterion).map(|r| r * round_ops);
            arm.bytes_exchanged = Some(fl_bytes_exchanged(
                global.param_count(),
                arm.epochs_to_converge
                    .or(earliest_possible(&arm, &cfg.criterion).map(|r| r as usize))
                    .unwrap_or(arm.epochs_run),
                flc.n_clients,
            ));
            arm.detection = detection(&global, &prep, cfg.detector.method)?;
            Ok(arm)
        })()
        .unwrap_or_else(|e| failed(FL.into(), e));
        arms.push(arm);
    }

    Ok(SeedResult {
        seed,
        hashes: prep.hashes,
        edges: edge_summaries,
        arms,
    })
}

fn scores_for(edges: &EdgeModelSet, l1: &[ContributionScores], variant: SumVariant) -> Result<Vec<ContributionScores>> {
    if variant == SumVariant::L1 {
        return Ok(l1.to_vec());
    }
    edges
        .traces
        .iter()
        .enumerate()
        .map(|(k, t)| Ok(contribution_score(&compute_layer_stats(k + 1, t)?, variant)?))
        .collect()
}

fn summarize(arm: &str, results: &[&ArmResult], fresh_median: Option<f64>) -> ArmSummary {
    let ok: Vec<&&ArmResult> = results.iter().filter(|a| a.error.is_none()).collect();
    let epochs: Vec<f64> = ok
        .iter()
        .map(|a| a.epochs_to_converge.unwrap_or(a.epochs_run + 1) as f64)
        .collect();
    let pick = |f: &dyn Fn(&ArmResult) -> Option<f64>| -> Option<f64> {
        median(&ok.iter().filter_map(|a| f(a)).collect::<Vec<_>>())
    };
    let epochs_median = median(&epochs);
    ArmSummary {
        arm: arm.to_string(),
        seeds: results.len(),
        seeds_converged: ok.iter().filter(|a| a.epochs_to_converge.is_some()).count(),
        epochs_iqr: (epochs.len() >= 2).then(|| [quantile(&epochs, 0.25).unwrap(), quantile(&epochs, 0.75).unwrap()]),
        time_to_converge_median_s: pick(&|a| a.time_to_converge_s),
        accuracy_median: pick(&|a| a.detection.as_ref().map(|d| d.accuracy)),
        fpr_median: pick(&|a| a.detection.as_ref().and_then(|d| d.fpr)),
        compute_median: pick(&|a| a.compute_to_converge.map(|c| c as f64)),
        bytes_median: pick(&|a| a.bytes_exchanged.map(|b| b as f64)),
        cost_per_epoch: ok.first().map(|a| a.cost_per_epoch),
        epoch_improvement_vs_fresh: match (epochs_median, fresh_median) {
            (Some(a), Some(f)) if f > 0.0 => Some(1.0 - a / f),
            _ => None,
        },
        epochs_median,
    }
}

/// Aggregates per-seed results (in seed order) into a report.
pub fn build_report(cfg: &ExperimentConfig, per_seed: Vec<SeedResult>, mut failures: Vec<String>) -> Result<ComparisonReport> {
    let mut arm_names: Vec<String> = cfg.plans.iter().map(|p| plan_arm(&p.name)).collect();
    arm_names.push(FRESH.into());
    if cfg.fl.is_some() {
        arm_names.push(FL.into());
    }
    let of = |name: &str| -> Vec<&ArmResult> {
        per_seed.iter().flat_map(|s| s.arms.iter().filter(move |a| a.arm == name)).collect()
    };
    let fresh = summarize(FRESH, &of(FRESH), None);
    let summaries = arm_names
        .iter()
        .map(|n| if n == FRESH { fresh.clone() } else { summarize(n, &of(n), fresh.epochs_median) })
        .collect();
    for s in &per_seed {
        for a in &s.arms {
            if let Some(e) = &a.error {
                failures.push(format!("seed {}: {}: {e}", s.seed, a.arm));
            }
        }
    }
    let config_json = serde_json::to_vec(cfg).map_err(|e| Error::Config(e.to_string()))?;
    Ok(ComparisonReport {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: sha(&config_json),
        criterion: cfg.criterion,
        seeds: per_seed.iter().map(|s| s.seed).collect(),
        summaries,
        per_seed,
        failures,
    })
}

/// Runs every seed (on `cfg.run.jobs` threads) and aggregates. Seeds whose
/// data or edges fail are listed in `failures`.
pub fn run_comparison(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<ComparisonReport> {
    let results = map_jobs(seeds, cfg.run.jobs, |&s| run_seed(cfg, s));
    let mut per_seed = Vec::new();
    let mut failures = Vec::new();
    for (s, r) in seeds.iter().zip(results) {
        match r {
            Ok(v) => per_seed.push(v),
            Err(e) => failures.push(format!("seed {s}: {e}")),
        }
    }
    build_report(cfg, per_seed, failures)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
    Plotdata,
}

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const CURVES_CSV: &str = "curves.csv";
pub const MANIFEST: &str = "manifest.json";

pub const CSV_HEADER: [&str; 12] = [
    "seed",
    "arm",
    "epochs_run",
    "epochs_to_converge",
    "final_val_rmse",
    "accuracy",
    "fpr",
    "compute_to_converge",
    "bytes_exchanged",
    "params",
    "wall_clock_s",
    "error",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the requested formats into `dir`; returns the file names written.
pub fn emit_report(report: &ComparisonReport, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for f in formats {
        match f {
            ReportFormat::Json => {
                write_json(&dir.join(REPORT_JSON), report)?;
                written.push(REPORT_JSON.to_string());
            }
            ReportFormat::Csv => {
                let p = dir.join(REPORT_CSV);
                let mut w = csv::Writer::from_path(&p).map_err(|e| Error::format(&p, e))?;
                w.write_record(CSV_HEADER).map_err(|e| Error::format(&p, e))?;
                for s in &report.per_seed {
                    for a in &s.arms {
                        w.write_record([
                            s.seed.to_string(),
                            a.arm.clone(),
                            a.epochs_run.to_string(),
                            opt(a.epochs_to_converge),
                            opt(a.final_val_rmse),
                            opt(a.detection.as_ref().map(|d| d.accuracy)),
                            opt(a.detection.as_ref().and_then(|d| d.fpr)),
                            opt(a.compute_to_converge),
                            opt(a.bytes_exchanged),
                            a.params.to_string(),
                            opt(a.wall_clock_s),
                            a.error.clone().unwrap_or_default(),
                        ])
                        .map_err(|e| Error::format(&p, e))?;
                    }
                }
                w.flush().map_err(|e| Error::io(&p, e))?;
                written.push(REPORT_CSV.to_string());
            }
            ReportFormat::Plotdata => {
                let p = dir.join(CURVES_CSV);
                let mut w = csv::Writer::from_path(&p).map_err(|e| Error::format(&p, e))?;
                w.write_record(["seed", "arm", "epoch", "train_rmse", "val_rmse"])
                    .map_err(|e| Error::format(&p, e))?;
                for s in &report.per_seed {
                    for a in &s.arms {
                        for (i, v) in a.val_curve.iter().enumerate() {
                            w.write_record([
                                s.seed.to_string(),
                                a.arm.clone(),
                                (i + 1).to_string(),
                                opt(a.train_curve.get(i)),
                                v.to_string(),
                            ])
                            .map_err(|e| Error::format(&p, e))?;
                        }
                    }
                }
                w.flush().map_err(|e| Error::io(&p, e))?;
                written.push(CURVES_CSV.to_string());
            }
        }
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub data: Vec<(u64, DataHashes)>,
    /// SHA-256 of the report JSON with wall-clock fields removed.
    pub results_sha256: String,
    pub files: Vec<String>,
}

pub fn manifest(report: &ComparisonReport, files: &[String]) -> Result<Manifest> {
    let det = serde_json::to_vec(&report.deterministic_view()).map_err(|e| Error::Config(e.to_string()))?;
    Ok(Manifest {
        tool_version: report.tool_version.clone(),
        config_sha256: report.config_sha256.clone(),
        seeds: report.seeds.clone(),
        data: report.per_seed.iter().map(|s| (s.seed, s.hashes.clone())).collect(),
        results_sha256: sha(&det),
        files: files.to_vec(),
    })
}

pub fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    write_json(&dir.join(MANIFEST), m)
}
