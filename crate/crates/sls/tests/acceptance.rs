//! The eleven acceptance criteria. Each test writes one PASS/FAIL line to
//! stdout (uncaptured) and then asserts.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sls::bench::{run_comparison, ArmResult, ComparisonReport, FL, FRESH};
use sls::config::ExperimentConfig;
use sls_core::analysis::{compute_layer_stats, contribution_score, SumVariant};
use sls_core::data::{generate_synthetic, normalize, partition_edges, split_80_20, NormMethod, SynthConfig};
use sls_core::detector::DetectionReport;
use sls_core::fl::{fl_aggregate, fl_local_update, fl_run, FlConfig, FlState};
use sls_core::nn::{
    estimate_cost, fit, init_network, rmse_loss, train, uniform_forward_mults, Activation, Activations, DenseLayer,
    EpochRecord, Init, LayerSums, Network, OptimState, Optimizer, Origin, TrainConfig, TrainTrace,
};
use sls_core::Matrix;

fn verdict(n: u32, name: &str, pass: bool, detail: String) {
    let line = format!(
        "acceptance #{n:<2} {} {name}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(pass, "{line}");
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn median(v: &[f64]) -> f64 {
    sls::bench::median(v).expect("non-empty")
}

// ---- 1: gradients ----

const ACTS: [Activation; 4] = [Activation::Relu, Activation::Sigmoid, Activation::Tanh, Activation::Identity];

fn random_net(rng: &mut ChaCha8Rng, depth: usize) -> Network {
    let d = rng.random_range(1..=16);
    let mut widths = vec![d];
    widths.extend((0..depth - 1).map(|_| rng.random_range(1..=16)));
    widths.push(d);
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            // cycle so every net mixes activations and all four appear
            let act = ACTS[(i + depth) % 4];
            let l = DenseLayer::new_random(w[0], w[1], act, Init::UniformPm1, rng).unwrap();
            let b = (0..w[1]).map(|_| rng.random_range(-0.5..0.5)).collect();
            DenseLayer::from_parts(w[0], w[1], l.weights().to_vec(), b, act, Origin::Fresh).unwrap()
        })
        .collect();
    Network::from_layers(layers).unwrap()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn objective(net: &Network, x: &Matrix, t: &Matrix, lambda: f64) -> f64 {
    let reg: f64 = net.layers().iter().flat_map(|l| l.weights()).map(|w| w * w).sum();
    rmse_loss(&net.predict(x).unwrap(), t).unwrap() + 0.5 * lambda * reg
}

fn nudged(net: &Network, layer: usize, idx: usize, weight: bool, h: f64) -> Network {
    let layers = net
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let (mut w, mut b) = (l.weights().to_vec(), l.biases().to_vec());
            if i == layer {
                if weight {
                    w[idx] += h
                } else {
                    b[idx] += h
                }
            }
            DenseLayer::from_parts(l.in_dim(), l.out_dim(), w, b, l.activation(), l.origin()).unwrap()
        })
        .collect();
    Network::from_layers(layers).unwrap()
}

fn worst_gradient_error(net: &Network, x: &Matrix, t: &Matrix, lambda: f64) -> f64 {
    let (_, cache) = net.forward(x).unwrap();
    let (_, grads) = net.backward(&cache, t, lambda).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (li, l) in net.layers().iter().enumerate() {
        for (weight, g) in [(true, &grads.layers[li].weights), (false, &grads.layers[li].biases)] {
            let n = if weight { l.weights().len() } else { l.biases().len() };
            for idx in 0..n {
                let num = (objective(&nudged(net, li, idx, weight, h), x, t, lambda)
                    - objective(&nudged(net, li, idx, weight, -h), x, t, lambda))
                    / (2.0 * h);
                worst = worst.max((g[idx] - num).abs() / 1f64.max(g[idx].abs()).max(num.abs()));
            }
        }
    }
    worst
}

fn near_relu_kink(net: &Network, x: &Matrix) -> bool {
    let (_, cache) = net.forward(x).unwrap();
    net.layers()
        .iter()
        .zip(cache.pre_activations())
        .any(|(l, z)| l.activation() == Activation::Relu && z.as_slice().iter().any(|v| v.abs() < 1e-3))
}

#[test]
fn criterion_01_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut seen = [false; 4];
    let mut checked = 0;
    while checked < 24 {
        let depth = 3 + checked % 4;
        let net = random_net(&mut rng, depth);
        let rows = rng.random_range(1..=5);
        let x = random_matrix(&mut rng, rows, net.input_dim());
        let t = random_matrix(&mut rng, rows, net.input_dim());
        if near_relu_kink(&net, &x) {
            continue;
        }
        for l in net.layers() {
            seen[ACTS.iter().position(|a| *a == l.activation()).unwrap()] = true;
        }
        worst = worst.max(worst_gradient_error(&net, &x, &t, if checked % 2 == 0 { 0.0 } else { 1e-3 }));
        checked += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        "gradient check",
        worst < 1e-5 && seen.iter().all(|&s| s) && secs < 60.0,
        format!("{checked} nets, depth 3-6, worst error {worst:.2e}, {secs:.1}s"),
    );
}

// ---- 2, 3: layer statistics on four-hidden-layer edges ----

struct Edges {
    traces: Vec<TrainTrace>,
    elapsed: Duration,
}

fn edges_d90() -> &'static Edges {
    static E: OnceLock<Edges> = OnceLock::new();
    E.get_or_init(|| {
        let start = Instant::now();
        let d = 90;
        let traces = (1..=10u64)
            .map(|seed| {
                let raw = generate_synthetic(&SynthConfig::standard(d, 3000, 0, 3.0, seed)).unwrap();
                let (ds, _) = normalize(&raw, NormMethod::MinMax).unwrap();
                let s = split_80_20(&ds, seed).unwrap();
                let cfg = TrainConfig {
                    epochs: 40,
                    seed,
                    init: Init::UniformScaled,
                    ..TrainConfig::default()
                };
                let acts = Activations::new(Activation::Tanh, Activation::Sigmoid);
                let mut net = init_network(&[d, 60, 60, 60, 60, d], acts, &cfg).unwrap();
                train(&mut net, s.train.features(), s.test.features(), &cfg).unwrap()
            })
            .collect();
        Edges {
            traces,
            elapsed: start.elapsed(),
        }
    })
}

fn crafted_trace() -> TrainTrace {
    // second epoch: signed hidden sums cancel, so signed alphas are undefined
    let rec = |epoch, signed: [f64; 3]| EpochRecord {
        epoch,
        train_rmse: 0.1,
        val_rmse: Some(0.1),
        layer_sums: signed.iter().map(|&s| LayerSums { signed: s, l1: s.abs() + 1.0 }).collect(),
    };
    TrainTrace {
        records: vec![rec(1, [1.0, 2.0, 0.5]), rec(2, [1.0, -1.0, 0.5]), rec(3, [2.0, 1.0, 0.5])],
    }
}

#[test]
fn criterion_02_ratio_invariants() {
    let mut traces = edges_d90().traces.clone();
    traces.push(crafted_trace());
    let mut epochs = 0;
    let mut worst_sum: f64 = 0.0;
    let mut beta_ok = true;
    let mut flags_ok = true;
    for (k, t) in traces.iter().enumerate() {
        let s = compute_layer_stats(k + 1, t).unwrap();
        flags_ok &= s.epochs.len() == t.len();
        for e in &s.epochs {
            epochs += 1;
            let sum: f64 = e.l1.alpha.iter().map(|a| a.expect("l1 alpha defined")).sum();
            worst_sum = worst_sum.max((sum - 1.0).abs());
            beta_ok &= e.l1.beta.last() == Some(&Some(1.0));
            let undefined = e.signed.alpha.iter().any(Option::is_none);
            flags_ok &= undefined == s.signed_undefined_epochs.contains(&e.epoch);
        }
    }
    let crafted = compute_layer_stats(1, &crafted_trace()).unwrap();
    flags_ok &= crafted.signed_undefined_epochs == vec![2];
    verdict(
        2,
        "ratio invariants",
        worst_sum <= 1e-9 && beta_ok && flags_ok,
        format!(
            "{epochs} epochs over {} traces, max |sum alpha - 1| = {worst_sum:.1e}, undefined signed epochs flagged",
            traces.len()
        ),
    );
}

#[test]
fn criterion_03_first_hidden_layer_moves_most() {
    let e = edges_d90();
    let mut first = Vec::new();
    let mut last = Vec::new();
    let mut diff = Vec::new();
    for (k, t) in e.traces.iter().enumerate() {
        let s = contribution_score(&compute_layer_stats(k + 1, t).unwrap(), SumVariant::L1).unwrap();
        let (a, b) = (s.scores[0], *s.scores.last().unwrap());
        first.push(a);
        last.push(b);
        diff.push(a - b);
    }
    let (mf, ml, md) = (median(&first), median(&last), median(&diff));
    let secs = e.elapsed.as_secs_f64();
    verdict(
        3,
        "early-layer contribution",
        mf > ml && md > 0.0 && secs < 300.0,
        format!("d=90, 10 seeds: median score layer 1 {mf:.4} vs last hidden {ml:.4} (paired median diff {md:.4}), {secs:.0}s"),
    );
}

// ---- 4, 5, 6, 7: the bundled comparison ----

struct Bench {
    report: ComparisonReport,
    elapsed: Duration,
}

fn bench() -> &'static Bench {
    static B: OnceLock<Bench> = OnceLock::new();
    B.get_or_init(|| {
        let cfg = ExperimentConfig::read(&configs().join("bench.toml")).unwrap();
        let start = Instant::now();
        let report = run_comparison(&cfg, &cfg.seed_list()).unwrap();
        Bench {
            report,
            elapsed: start.elapsed(),
        }
    })
}

fn arms<'a>(r: &'a ComparisonReport, arm: &'a str) -> impl Iterator<Item = &'a ArmResult> + 'a {
    r.per_seed.iter().flat_map(move |s| s.arms.iter().filter(move |a| a.arm == arm))
}

#[test]
fn criterion_04_synthesized_converges_faster() {
    let b = bench();
    let r = &b.report;
    let syn = r.summary("plan:all").unwrap();
    let fresh = r.summary(FRESH).unwrap();
    let (s, f) = (syn.epochs_median.unwrap(), fresh.epochs_median.unwrap());
    let shapes_match = arms(r, "plan:all").zip(arms(r, FRESH)).all(|(a, b)| a.shape == b.shape);
    let secs = b.elapsed.as_secs_f64();
    verdict(
        4,
        "convergence speedup",
        r.seeds.len() >= 10 && r.failures.is_empty() && shapes_match && s <= 0.8 * f && secs < 1800.0,
        format!(
            "{} seeds, median epochs synthesized {s} vs fresh {f} (ratio {:.2}, IQR {:?} vs {:?}), {secs:.0}s",
            r.seeds.len(),
            s / f,
            syn.epochs_iqr,
            fresh.epochs_iqr
        ),
    );
}

#[test]
fn criterion_05_layer_choice_matters() {
    let r = &bench().report;
    let plans: Vec<(&str, f64)> = r
        .summaries
        .iter()
        .filter(|s| s.arm.starts_with("plan:"))
        .map(|s| (s.arm.as_str(), s.epochs_median.unwrap()))
        .collect();
    let mut distinct: Vec<f64> = plans.iter().map(|p| p.1).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let worst = distinct.last().copied().unwrap();
    let all = plans.iter().find(|p| p.0 == "plan:all").unwrap().1;
    let unique_worst = all == worst && plans.iter().filter(|p| p.1 == worst).count() == 1;
    verdict(
        5,
        "layer-choice sensitivity",
        distinct.len() >= 2 && !unique_worst,
        format!("median epochs per plan {plans:?}"),
    );
}

#[test]
fn criterion_06_detection_quality() {
    let s = bench().report.summary("plan:all").unwrap().clone();
    let (acc, fpr) = (s.accuracy_median.unwrap(), s.fpr_median.unwrap());
    verdict(
        6,
        "detection quality",
        s.seeds >= 10 && acc >= 0.95 && fpr <= 0.02,
        format!("shift 3 sigma, percentile 0.99, {} seeds: median accuracy {acc:.4}, FPR {fpr:.4}", s.seeds),
    );
}

fn identities_hold(r: &DetectionReport) -> bool {
    let exact = DetectionReport::from_counts(r.tp, r.fn_, r.fp, r.tn);
    r.total == r.tp + r.fn_ + r.fp + r.tn
        && r.accuracy == exact.accuracy
        && r.precision == exact.precision
        && r.tpr == exact.tpr
        && r.fpr == exact.fpr
}

#[test]
fn criterion_07_detector_identities() {
    let r = &bench().report;
    let reports: Vec<&DetectionReport> = r
        .per_seed
        .iter()
        .flat_map(|s| s.arms.iter())
        .filter_map(|a| a.detection.as_ref())
        .collect();
    let all_ok = !reports.is_empty() && reports.iter().all(|d| identities_hold(d));
    let row1 = format!("{:.2}", DetectionReport::from_counts(200, 0, 19, 355).accuracy_percent());
    let row2 = format!("{:.2}", DetectionReport::from_counts(188, 0, 0, 511).accuracy_percent());
    verdict(
        7,
        "detector identities",
        all_ok && row1 == "96.69" && row2 == "100.00",
        format!("{} emitted reports consistent; table rows from counts give {row1}% and {row2}%", reports.len()),
    );
}

// ---- 8: FedAvg ----

fn scalar_net(w: f64) -> Network {
    let l = DenseLayer::from_parts(1, 1, vec![w], vec![0.0], Activation::Identity, Origin::Fresh).unwrap();
    Network::from_layers(vec![l.clone(), l]).unwrap()
}

#[test]
fn criterion_08_fedavg_oracles() {
    let d = 6;
    let raw = generate_synthetic(&SynthConfig::standard(d, 1200, 0, 3.0, 5)).unwrap();
    let (ds, _) = normalize(&raw, NormMethod::MinMax).unwrap();
    let split = split_80_20(&ds, 5).unwrap();
    let p1 = partition_edges(&split, 1, 300, 40).unwrap();
    let cfg = |m| FlConfig {
        n_clients: m,
        rounds: 3,
        local_epochs: 2,
        edge_lr: 0.05,
        central_lr: 1.0,
        shape: vec![d, 5, 3, 5, d],
        init: Init::UniformScaled,
        seed: 21,
        ..FlConfig::default()
    };

    let c = cfg(1);
    let (_, global) = fl_run(&p1, &c).unwrap();
    let mut net = init_network(&c.shape, c.activations, &c.global_init_config()).unwrap();
    let tc = TrainConfig {
        epochs: c.total_local_epochs(),
        optimizer: Optimizer::Sgd,
        ..c.client_config(1)
    };
    let mut st = OptimState::new(&net, Optimizer::Sgd);
    fit(&mut net, p1.edges[0].train.features(), None, &tc, 0, &mut st).unwrap();
    let single = global.param_hash() == net.param_hash();

    let state = FlState::new(FlConfig { seed: 0, ..cfg(3) }).unwrap();
    let data = p1.edges[0].train.features();
    let cc = state.config.client_config(1);
    let local: Vec<Network> = (0..3)
        .map(|_| {
            let mut n = state.global.clone();
            fl_local_update(&mut n, data, &cc, 0).unwrap();
            n
        })
        .collect();
    let symmetric = fl_aggregate(&local, &[data.rows(); 3]).unwrap().param_hash() == local[0].param_hash();

    let mean = fl_aggregate(&[scalar_net(2.0), scalar_net(4.0)], &[10, 10]).unwrap();
    let mean_ok = mean.layers().iter().all(|l| l.weights() == [3.0]);
    verdict(
        8,
        "FedAvg oracles",
        single && symmetric && mean_ok,
        format!("one client == centralized SGD bitwise: {single}; symmetric clients == any client: {symmetric}; (2, 4) -> 3: {mean_ok}"),
    );
}

// ---- 9: SLS against FL ----

#[test]
fn criterion_09_sls_cheaper_than_fl() {
    let cfg = ExperimentConfig::read(&configs().join("bench-fl.toml")).unwrap();
    let r = run_comparison(&cfg, &cfg.seed_list()).unwrap();
    let mut lines = Vec::new();
    let mut pass = r.seeds.len() >= 5 && r.failures.is_empty();
    for s in &r.per_seed {
        let sls = s.arms.iter().find(|a| a.arm == "plan:alternate").unwrap();
        let fl = s.arms.iter().find(|a| a.arm == FL).unwrap();
        // an unconverged FL run is charged the least it could still cost
        let (fl_compute, measured) = match (fl.compute_to_converge, fl.compute_lower_bound) {
            (Some(c), _) => (Some(c), true),
            (None, b) => (b, false),
        };
        let ok = sls.shape.len() == 8
            && sls.shape == fl.shape
            && matches!((sls.compute_to_converge, fl_compute), (Some(a), Some(b)) if a < b)
            && matches!((sls.bytes_exchanged, fl.bytes_exchanged), (Some(a), Some(b)) if a < b);
        pass &= ok;
        lines.push(format!(
            "seed {}: SLS {:.2e} ops vs FL {}{:.2e} ({}), bytes {} vs {}",
            s.seed,
            sls.compute_to_converge.unwrap_or(0) as f64,
            if measured { "" } else { ">= " },
            fl_compute.unwrap_or(0) as f64,
            fl.epochs_to_converge.map_or(format!("not converged in {} rounds", fl.epochs_run), |r| format!("round {r}")),
            sls.bytes_exchanged.unwrap_or(0),
            fl.bytes_exchanged.unwrap_or(0),
        ));
    }
    verdict(9, "SLS vs FL compute and bytes", pass, lines.join("; "));
}

// ---- 10: cost model ----

#[test]
fn criterion_10_cost_estimator() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut exact = 0;
    for i in 0..10 {
        let net = random_net(&mut rng, 3 + i % 4);
        let rows = rng.random_range(1..=9);
        let x = random_matrix(&mut rng, rows, net.input_dim());
        let (_, counted) = net.forward_counting(&x).unwrap();
        if counted == estimate_cost(&net.widths(), rows as u64).unwrap().mult_forward_total {
            exact += 1;
        }
    }
    let closed = [(4u64, 60u64), (3, 7), (6, 16)]
        .iter()
        .all(|&(l, n)| estimate_cost(&vec![n as usize; l as usize + 1], n).unwrap().mult_forward_total == uniform_forward_mults(l, n));
    verdict(
        10,
        "cost estimator",
        exact == 10 && closed,
        format!("{exact}/10 shapes counted exactly; n_layers * n^3 closed form: {closed}"),
    );
}

// ---- 11: reproducible compare ----

const TINY: &str = r#"
seed = 3
seeds = [3, 4]
[data]
source = "synthetic"
dim = 6
n_normal = 900
[data.holdout]
n_normal = 100
n_attack = 30
[partition]
edges = 2
train_rows = 200
test_rows = 40
[edge]
shape = [6, 8, 8, 6]
[edge.train]
epochs = 6
init = "uniform_scaled"
[central.train]
epochs = 6
init = "uniform_scaled"
[[plans]]
name = "all"
select = "all"
strategy = "widen"
include_outputs = true
[[plans]]
name = "top1"
select = "top_k_per_model"
k = 1
[fl]
rounds = 3
local_epochs = 2
edge_lr = 0.1
central_lr = 1.0
init = "uniform_scaled"
[run]
jobs = 1
"#;

#[test]
fn criterion_11_compare_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let run = |out: &str| {
        let st = std::process::Command::new(env!("CARGO_BIN_EXE_sls"))
            .args(["compare", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path().join(out))
            .output()
            .unwrap();
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
        std::fs::read(dir.path().join(out).join("manifest.json")).unwrap()
    };
    let (a, b) = (run("a"), run("b"));
    verdict(
        11,
        "reproducible compare",
        a == b,
        format!("two serial runs, manifests {} bytes, identical: {}", a.len(), a == b),
    );
}
