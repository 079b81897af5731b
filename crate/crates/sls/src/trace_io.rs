//! CSV exports of training traces, layer statistics and federated rounds.
//! Floats are written in shortest round-trip form; missing values are empty.

use std::path::Path;

use sls_core::analysis::LayerStats;
use sls_core::fl::FlTrace;
use sls_core::nn::{EpochRecord, LayerSums, TrainTrace};

use crate::error::{Error, Result};

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::format(path, e))
}

fn finish(path: &Path, mut w: csv::Writer<std::fs::File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Columns: `epoch, train_rmse, val_rmse`, then `signed_i, l1_i` per dense layer.
pub fn write_trace_csv(path: &Path, trace: &TrainTrace) -> Result<()> {
    let mut w = writer(path)?;
    let depth = trace.records.first().map_or(0, |r| r.layer_sums.len());
    let mut hdr = vec!["epoch".to_string(), "train_rmse".into(), "val_rmse".into()];
    for i in 0..depth {
        hdr.push(format!("signed_{i}"));
        hdr.push(format!("l1_{i}"));
    }
    w.write_record(&hdr).map_err(|e| Error::format(path, e))?;
    for r in &trace.records {
        let mut rec = vec![r.epoch.to_string(), r.train_rmse.to_string(), opt(r.val_rmse)];
        for s in &r.layer_sums {
            rec.push(s.signed.to_string());
            rec.push(s.l1.to_string());
        }
        w.write_record(&rec).map_err(|e| Error::format(path, e))?;
    }
    finish(path, w)
}

pub fn read_trace_csv(path: &Path) -> Result<TrainTrace> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(f);
    let hdr = rdr.headers().map_err(|e| Error::format(path, e))?.clone();
    if hdr.len() < 3 || hdr.len() % 2 == 0 || &hdr[0] != "epoch" {
        return Err(Error::format(path, "not a training trace (bad header)"));
    }
    let num = |s: &str, line: usize| -> Result<f64> {
        s.parse().map_err(|_| Error::format(path, format!("line {line}: bad number `{s}`")))
    };
    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e))?;
        let line = i + 2;
        let epoch = rec[0]
            .parse()
            .map_err(|_| Error::format(path, format!("line {line}: bad epoch")))?;
        let val = if rec[2].is_empty() { None } else { Some(num(&rec[2], line)?) };
        let layer_sums = (3..rec.len())
            .step_by(2)
            .map(|c| {
                Ok(LayerSums {
                    signed: num(&rec[c], line)?,
                    l1: num(&rec[c + 1], line)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        records.push(EpochRecord {
            epoch,
            train_rmse: num(&rec[1], line)?,
            val_rmse: val,
            layer_sums,
        });
    }
    Ok(TrainTrace { records })
}

pub const STATS_HEADER: [&str; 8] =
    ["epoch", "layer", "signed_sum", "l1_sum", "alpha_signed", "alpha_l1", "beta_signed", "beta_l1"];

pub fn write_stats_csv(path: &Path, stats: &LayerStats) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(STATS_HEADER).map_err(|e| Error::format(path, e))?;
    for r in stats.rows() {
        w.write_record([
            r.epoch.to_string(),
            r.layer.to_string(),
            r.signed_sum.to_string(),
            r.l1_sum.to_string(),
            opt(r.alpha_signed),
            opt(r.alpha_l1),
            opt(r.beta_signed),
            opt(r.beta_l1),
        ])
        .map_err(|e| Error::format(path, e))?;
    }
    finish(path, w)
}

/// Columns: `round, global_val_loss, global_val_acc, client_1..client_M, wall_clock_s`.
pub fn write_fl_trace_csv(path: &Path, trace: &FlTrace) -> Result<()> {
    let mut w = writer(path)?;
    let m = trace.rounds.first().map_or(0, |r| r.client_losses.len());
    let mut hdr = vec!["round".to_string(), "global_val_loss".into(), "global_val_acc".into()];
    hdr.extend((1..=m).map(|k| format!("client_{k}")));
    hdr.push("wall_clock_s".into());
    w.write_record(&hdr).map_err(|e| Error::format(path, e))?;
    for r in &trace.rounds {
        let mut rec = vec![r.round.to_string(), r.global_val_loss.to_string(), opt(r.global_val_acc)];
        rec.extend(r.client_losses.iter().map(f64::to_string));
        rec.push(opt(r.wall_clock_s));
        w.write_record(&rec).map_err(|e| Error::format(path, e))?;
    }
    finish(path, w)
}
