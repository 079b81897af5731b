use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sls::bench::{emit_report, manifest, run_comparison, write_manifest, ComparisonReport, ReportFormat};
use sls::config::ExperimentConfig;
use sls::data_io::{read_json, write_dataset_csv, write_json};
use sls::error::{Error, Result};
use sls::model_file::{read_model, write_model, ModelFile};
use sls::parallel::{fl_run_parallel, train_edges_parallel};
use sls::pipeline::{load_source, prepare, Prepared};
use sls::trace_io::{read_trace_csv, write_fl_trace_csv, write_stats_csv, write_trace_csv};
use sls_core::analysis::{compute_layer_stats, contribution_score, ContributionScores, SumVariant};
use sls_core::detector::{calibrate, evaluate, score};
use sls_core::edge::EdgeModelSet;
use sls_core::nn::{Network, TrainConfig, TrainTrace};
use sls_core::synthesis::{describe, fine_tune, synthesize};

/// Synthesized learning across edge and central clouds.
#[derive(Parser)]
#[command(name = "sls", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment file (TOML); see configs/example.toml.
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `run.jobs`.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Writes the source dataset (and detection holdout) as CSV.
    GenData(Common),
    /// Trains one autoencoder per edge block.
    TrainEdges(Common),
    /// Layer statistics, contribution scores and, with a plan, the selection mask.
    Analyze {
        /// Edge model file; repeat once per edge, in edge order.
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        /// Matching training trace CSV per model.
        #[arg(long = "trace", required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, short)]
        config: Option<PathBuf>,
        /// Plan whose selection mask is written (needs --config).
        #[arg(long)]
        plan: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, short, default_value = "out")]
        out: PathBuf,
    },
    /// Builds a central model from trained edges.
    Synthesize {
        #[command(flatten)]
        common: Common,
        /// Directory written by train-edges.
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        plan: String,
    },
    /// Trains a model on the central data.
    FineTune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Calibrates a threshold on central validation data and scores the detection set.
    Detect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Federated averaging baseline over the edge blocks.
    Fl(Common),
    /// Paired comparison of plans, fresh central training and FL.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Runs seeds seed, seed+1, ..., seed+N-1 instead of the config's list.
        #[arg(long)]
        seeds: Option<u64>,
        /// Restricts the plans run; repeatable.
        #[arg(long = "plan")]
        plans: Vec<String>,
        /// Comma-separated subset of json, csv, plotdata.
        #[arg(long, value_delimiter = ',', default_value = "json,csv,plotdata")]
        format: Vec<ReportFormat>,
    },
    /// Re-emits a saved report.json in other formats.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "csv,plotdata")]
        format: Vec<ReportFormat>,
        #[arg(long, short, default_value = "out")]
        out: PathBuf,
    },
}

fn load(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::read(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(j) = c.jobs {
        cfg.run.jobs = j;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn edge_file(dir: &Path, k: usize, ext: &str) -> PathBuf {
    dir.join(format!("edge{k}.{ext}"))
}

fn config_value(cfg: &ExperimentConfig) -> Option<serde_json::Value> {
    serde_json::to_value(cfg).ok()
}

fn central_cfg(cfg: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        seed: cfg.seed,
        ..cfg.central.train.clone()
    }
}

fn scores_of(traces: &[TrainTrace], variant: SumVariant) -> Result<Vec<ContributionScores>> {
    traces
        .iter()
        .enumerate()
        .map(|(k, t)| Ok(contribution_score(&compute_layer_stats(k + 1, t)?, variant)?))
        .collect()
}

fn load_edges(cfg: &ExperimentConfig, prep: &Prepared, dir: &Path) -> Result<EdgeModelSet> {
    let mut trained = Vec::new();
    for k in 1..=prep.partition.m() {
        let net = read_model(&edge_file(dir, k, "bin"))?.net;
        let trace = read_trace_csv(&edge_file(dir, k, "trace.csv"))?;
        trained.push((net, trace));
    }
    Ok(EdgeModelSet::from_parts(&prep.partition, cfg.edge.spec(cfg.seed), trained)?)
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenData(c) => {
            let cfg = load(&c)?;
            mkdir(&c.out)?;
            let (raw, dropped) = load_source(&cfg, cfg.seed)?;
            write_dataset_csv(&c.out.join("data.csv"), &raw)?;
            let prep = prepare(&cfg, cfg.seed)?;
            if let Some(d) = &prep.detect {
                write_dataset_csv(&c.out.join("detect.csv"), d)?;
            }
            write_json(&c.out.join("hashes.json"), &prep.hashes)?;
            println!("{} rows ({} dropped) -> {}", raw.rows(), dropped, c.out.display());
        }
        Cmd::TrainEdges(c) => {
            let cfg = load(&c)?;
            mkdir(&c.out)?;
            let prep = prepare(&cfg, cfg.seed)?;
            let set = train_edges_parallel(&prep.partition, &cfg.edge.spec(cfg.seed), cfg.run.jobs)?;
            for (k, (net, trace)) in set.models.iter().zip(&set.traces).enumerate() {
                let k = k + 1;
                let mut f = ModelFile::new(net.clone());
                f.seed = Some(cfg.seed ^ k as u64);
                f.config = config_value(&cfg);
                write_model(&edge_file(&c.out, k, "bin"), &f)?;
                write_trace_csv(&edge_file(&c.out, k, "trace.csv"), trace)?;
                println!("edge {k}: {} epochs, final val rmse {:.6}", trace.len(), trace.val_losses().last().copied().unwrap_or(f64::NAN));
            }
            write_json(&c.out.join("hashes.json"), &prep.hashes)?;
        }
        Cmd::Analyze { models, traces, config, plan, seed, out } => {
            if models.len() != traces.len() {
                return Err(Error::Config(format!("{} --model but {} --trace", models.len(), traces.len())));
            }
            mkdir(&out)?;
            let mut loaded = Vec::new();
            let mut depths = Vec::new();
            for (k, (m, t)) in models.iter().zip(&traces).enumerate() {
                let net: Network = read_model(m)?.net;
                let trace = read_trace_csv(t)?;
                let traced = trace.records.first().map_or(0, |r| r.layer_sums.len());
                if traced != net.depth() {
                    return Err(Error::format(t, format!("trace has {traced} layers, model has {}", net.depth())));
                }
                let stats = compute_layer_stats(k + 1, &trace)?;
                write_stats_csv(&edge_file(&out, k + 1, "stats.csv"), &stats)?;
                depths.push(net.depth());
                loaded.push(trace);
            }
            let l1 = scores_of(&loaded, SumVariant::L1)?;
            let signed = scores_of(&loaded, SumVariant::Signed)?;
            write_json(&out.join("scores.json"), &serde_json::json!({ "l1": l1, "signed": signed }))?;
            if let Some(name) = plan {
                let path = config.ok_or_else(|| Error::Config("--plan needs --config".into()))?;
                let mut cfg = ExperimentConfig::read(&path)?;
                if let Some(s) = seed {
                    cfg.seed = s;
                }
                let spec = cfg.plan(&name)?;
                let scores = if spec.variant == SumVariant::L1 { &l1 } else { &signed };
                let built = spec.build(scores, &depths)?;
                write_json(&out.join("mask.json"), &built.mask)?;
                write_json(&out.join("plan.json"), &built)?;
            }
            println!("analyzed {} model(s) -> {}", models.len(), out.display());
        }
        Cmd::Synthesize { common: c, edges, plan } => {
            let cfg = load(&c)?;
            mkdir(&c.out)?;
            let prep = prepare(&cfg, cfg.seed)?;
            let set = load_edges(&cfg, &prep, &edges)?;
            let spec = cfg.plan(&plan)?;
            let scores = scores_of(&set.traces, spec.variant)?;
            let built = spec.build(&scores, &set.depths())?;
            let model = synthesize(&set, &built, cfg.edge.shape[0], &central_cfg(&cfg))?;
            let mut f = ModelFile::from_synthesized(&model);
            f.seed = Some(cfg.seed);
            f.config = config_value(&cfg);
            write_model(&c.out.join("central.bin"), &f)?;
            print!("{}", describe(&model));
        }
        Cmd::FineTune { common: c, model } => {
            let cfg = load(&c)?;
            mkdir(&c.out)?;
            let prep = prepare(&cfg, cfg.seed)?;
            let file = read_model(&model)?;
            let (seed, config) = (file.seed, file.config.clone());
            let mut m = file.into_synthesized();
            let central = &prep.partition.central;
            let trace = fine_tune(&mut m, &central.train, &central.test, &central_cfg(&cfg))?;
            let mut f = ModelFile::from_synthesized(&m);
            f.seed = seed.or(Some(cfg.seed));
            f.config = config.or_else(|| config_value(&cfg));
            write_model(&c.out.join("tuned.bin"), &f)?;
            write_trace_csv(&c.out.join("tuned.trace.csv"), &trace)?;
            let v = trace.val_losses();
            println!(
                "{} epochs, converged at {:?}, final val rmse {:.6}",
                v.len(),
                sls_core::convergence::epochs_to_converge(&v, &cfg.criterion),
                v.last().copied().unwrap_or(f64::NAN)
            );
        }
        Cmd::Detect { common: c, model } => {
            let cfg = load(&c)?;
            mkdir(&c.out)?;
            let prep = prepare(&cfg, cfg.seed)?;
            let net = read_model(&model)?.net;
            let d = prep
                .detect
                .as_ref()
                .ok_or_else(|| Error::Config("no labeled detection data: configure data.holdout or attack rows".into()))?;
            let cal = score(&net, prep.partition.central.test.features())?;
            let th = calibrate(&cal, None, cfg.detector.method)?;
            let r = evaluate(&net, d.features(), d.labels().expect("labeled"), &th)?;
            write_json(&c.out.join("detection.json"), &r)?;
            println!("accuracy {:.4} fpr {:?} tpr {:?} threshold {:.6}", r.accuracy, r.fpr, r.tpr, th.value);
        }
        Cmd::Fl(c) => {
            let cfg = load(&c)?;
            mkdir(&c.out)?;
            let prep = prepare(&cfg, cfg.seed)?;
            let fl = cfg.fl.clone().unwrap_or_default();
            let flc = fl.config(prep.partition.m(), &cfg.edge, cfg.seed);
            let clients: Vec<_> = prep.partition.edges.iter().map(|b| b.train.features()).collect();
            let (trace, global) = fl_run_parallel(&clients, prep.partition.central.test.features(), &flc, cfg.run.jobs, cfg.run.wall_clock)?;
            let mut f = ModelFile::new(global);
            f.seed = Some(cfg.seed);
            f.config = config_value(&cfg);
            write_model(&c.out.join("fl_global.bin"), &f)?;
            write_fl_trace_csv(&c.out.join("fl_trace.csv"), &trace)?;
            let v = trace.val_losses();
            println!(
                "{} rounds, converged at {:?}, final val rmse {:.6}",
                v.len(),
                sls_core::convergence::epochs_to_converge(&v, &cfg.criterion),
                v.last().copied().unwrap_or(f64::NAN)
            );
        }
        Cmd::Compare { common: c, seeds, plans, format } => {
            let mut cfg = load(&c)?;
            if !plans.is_empty() {
                for p in &plans {
                    cfg.plan(p)?;
                }
                cfg.plans.retain(|p| plans.contains(&p.name));
            }
            let seed_list: Vec<u64> = match seeds {
                Some(n) => (cfg.seed..cfg.seed + n).collect(),
                None => cfg.seed_list(),
            };
            let report = run_comparison(&cfg, &seed_list)?;
            let files = emit_report(&report, &c.out, &format)?;
            write_manifest(&c.out, &manifest(&report, &files)?)?;
            for s in &report.summaries {
                println!(
                    "{:<24} epochs median {:>6} converged {}/{} accuracy {}",
                    s.arm,
                    s.epochs_median.map_or("-".into(), |v| format!("{v:.1}")),
                    s.seeds_converged,
                    s.seeds,
                    s.accuracy_median.map_or("-".into(), |v| format!("{v:.4}")),
                );
            }
            if !report.failures.is_empty() {
                return Err(Error::ArmsFailed(report.failures.len(), report.failures.join("; ")));
            }
        }
        Cmd::Report { input, format, out } => {
            let report: ComparisonReport = read_json(&input)?;
            let files = emit_report(&report, &out, &format)?;
            println!("wrote {}", files.join(", "));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match std::panic::catch_unwind(|| run(cli.cmd)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(2),
    }
}
