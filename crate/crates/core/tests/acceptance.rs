//! Acceptance suite. Each test prints one `criterion N ... PASS|FAIL` line
//! and then asserts it.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use termrec::autoencoder::{mirrored_sizes, Autoencoder, DEFAULT_ENCODER, EMBED_DIM};
use termrec::behavior::BehaviorCodeTable;
use termrec::classifier::ClassifierKind;
use termrec::cluster::{fit_gmm, fit_kmeans, GmmConfig, KMeansConfig};
use termrec::commands::{cmd_evaluate, cmd_predict, cmd_train};
use termrec::config::PipelineConfig;
use termrec::encoding::encode_flow;
use termrec::features::{BEHAVIOR_DIM, STAT_DIM};
use termrec::flow::{assemble_flows, segment_count, SegmentGrid};
use termrec::metrics::{evaluate, AccuracyMode};
use termrec::nn::TrainConfig;
use termrec::pcap::ingest_capture;
use termrec::pipeline::{prepare, train_pipeline};
use termrec::synthgen::generate_dataset;

fn verdict(n: u32, name: &str, ok: bool, detail: &str) {
    println!("criterion {n} {name}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} {name} failed: {detail}");
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

#[test]
fn criterion_1_hierarchical_advantage() {
    let started = Instant::now();
    let (full, flow_only) = single_threaded(|| {
        let mut cfg = PipelineConfig::default();
        cfg.generator.hard_mode = true;
        cfg.generator.flows_per_class = 300;
        let ds = generate_dataset(&cfg.generator, &cfg.behavior).unwrap();
        let raw = ds.pcap_bytes().unwrap();
        let full = train_pipeline(&raw, &ds.labels, &cfg).unwrap();
        cfg.features.flow_features_only = true;
        let flow_only = train_pipeline(&raw, &ds.labels, &cfg).unwrap();
        (
            full.metrics.test.unwrap().f1_macro,
            flow_only.metrics.test.unwrap().f1_macro,
        )
    });
    let secs = started.elapsed().as_secs_f64();
    let ok = full >= flow_only + 0.05 && full >= 0.95 && secs < 300.0;
    verdict(
        1,
        "hierarchical advantage",
        ok,
        &format!("full F1 {full:.4}, flow-only F1 {flow_only:.4}, {secs:.1}s single-threaded"),
    );
}

#[test]
fn criterion_2_easy_mode_sanity() {
    let cfg = PipelineConfig::default();
    let ds = generate_dataset(&cfg.generator, &cfg.behavior).unwrap();
    let raw = ds.pcap_bytes().unwrap();
    let mut scores = Vec::new();
    for kind in ClassifierKind::ALL {
        let mut c = cfg.clone();
        c.classifier.kind = kind;
        let p = train_pipeline(&raw, &ds.labels, &c).unwrap();
        scores.push((kind, p.metrics.test.unwrap().f1_macro));
    }
    let gbt = scores[0].1;
    let ok = scores.iter().all(|(_, f)| *f >= 0.90) && scores.iter().all(|(_, f)| gbt >= f - 0.02);
    let detail: Vec<String> = scores.iter().map(|(k, f)| format!("{k} {f:.4}")).collect();
    verdict(2, "easy-mode sanity", ok, &detail.join(", "));
}

struct Oracle {
    accuracy: f64,
    literal_accuracy: f64,
    precision: f64,
    recall: f64,
    f1: f64,
    confusion: Vec<Vec<usize>>,
}

fn brute_force(t: &[usize], p: &[usize], k: usize) -> Oracle {
    let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let (mut ps, mut rs) = (0.0, 0.0);
    let (mut tp_all, mut err_all) = (0, 0);
    for c in 0..k {
        let tp = t.iter().zip(p).filter(|(a, b)| **a == c && **b == c).count();
        let fp = t.iter().zip(p).filter(|(a, b)| **a != c && **b == c).count();
        let fn_ = t.iter().zip(p).filter(|(a, b)| **a == c && **b != c).count();
        ps += div(tp, tp + fp);
        rs += div(tp, tp + fn_);
        tp_all += tp;
        err_all += fp + fn_;
    }
    let (precision, recall) = (ps / k as f64, rs / k as f64);
    let confusion = (0..k)
        .map(|r| {
            (0..k)
                .map(|c| t.iter().zip(p).filter(|(a, b)| **a == r && **b == c).count())
                .collect()
        })
        .collect();
    Oracle {
        accuracy: div(t.iter().zip(p).filter(|(a, b)| a == b).count(), t.len()),
        literal_accuracy: div(tp_all, tp_all + err_all),
        precision,
        recall,
        f1: if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        },
        confusion,
    }
}

#[test]
fn criterion_3_metric_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut confusion_ok = true;
    for _ in 0..1000 {
        let k = rng.random_range(2..=5);
        let n = rng.random_range(1..=60);
        let t: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let p: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let names: Vec<String> = (0..k).map(|i| format!("c{i}")).collect();
        let o = brute_force(&t, &p, k);
        let m = evaluate(&t, &p, &names, AccuracyMode::Standard).unwrap();
        let lit = evaluate(&t, &p, &names, AccuracyMode::TpOverTpFpFn).unwrap();
        for (a, b) in [
            (m.accuracy, o.accuracy),
            (m.precision_macro, o.precision),
            (m.recall_macro, o.recall),
            (m.f1_macro, o.f1),
            (lit.accuracy, o.literal_accuracy),
        ] {
            worst = worst.max((a - b).abs());
        }
        confusion_ok &= m.confusion == o.confusion;
    }
    let names = vec!["A".to_string(), "B".to_string()];
    let w = evaluate(&[0, 0, 1, 1], &[0, 1, 1, 1], &names, AccuracyMode::Standard).unwrap();
    let worked = (w.precision_macro - 5.0 / 6.0).abs() <= 1e-12
        && (w.recall_macro - 0.75).abs() <= 1e-12
        && (w.f1_macro - 15.0 / 19.0).abs() <= 1e-12;
    verdict(
        3,
        "metric oracle",
        worst <= 1e-12 && confusion_ok && worked,
        &format!("max deviation {worst:e} over 1000 cases, worked example {worked}"),
    );
}

#[test]
fn criterion_4_autoencoder_gradients() {
    let sizes = mirrored_sizes(&DEFAULT_ENCODER).unwrap();
    let mut ae = Autoencoder::init(&sizes, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    // Zero initial biases put pre-activations of all-zero inputs exactly on
    // the ReLU kink, where central differences are undefined.
    let mut generic = ae.network().params();
    generic.iter_mut().for_each(|p| *p += rng.random_range(-0.05..0.05));
    ae.network_mut().set_params(&generic).unwrap();
    let net = ae.network();
    let batch: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..BEHAVIOR_DIM).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let (_, grad) = net.loss_and_gradient(&batch, &batch).unwrap();
    let analytic = grad.flatten();
    let base = net.params();
    let eps = 1e-5;
    let mut probe = net.clone();
    let numeric: Vec<f64> = (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            p[i] = base[i] + eps;
            probe.set_params(&p).unwrap();
            let up = probe.loss(&batch, &batch).unwrap();
            p[i] = base[i] - eps;
            probe.set_params(&p).unwrap();
            let down = probe.loss(&batch, &batch).unwrap();
            (up - down) / (2.0 * eps)
        })
        .collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    let rel = norm(&diff) / norm(&analytic).max(norm(&numeric));

    let mut ae = Autoencoder::from_encoder(&DEFAULT_ENCODER, 4).unwrap();
    let row: Vec<f64> = (0..BEHAVIOR_DIM).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
    let rows = vec![row; 1024];
    let report = ae.train(&rows, &TrainConfig::default()).unwrap();
    let last = *report.loss_curve.last().unwrap();
    verdict(
        4,
        "autoencoder gradient check",
        rel < 1e-4 && last < 1e-3,
        &format!("relative gradient error {rel:e}, constant-data loss {last:e}"),
    );
}

fn planted_points() -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    (0..20)
        .map(|i| {
            let c = if i < 11 { [0.0, 0.0] } else { [4.0, 3.0] };
            vec![c[0] + rng.random_range(-1.5..1.5), c[1] + rng.random_range(-1.5..1.5)]
        })
        .collect()
}

/// Minimum inertia over all two-way partitions, with its labels.
fn exhaustive_two_means(x: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = x.len();
    let mut best = (f64::INFINITY, Vec::new());
    // point 0 always in group 0
    for mask in 0u32..(1 << (n - 1)) {
        let labels: Vec<usize> = (0..n).map(|i| if i == 0 { 0 } else { ((mask >> (i - 1)) & 1) as usize }).collect();
        if labels.iter().all(|&l| l == 0) {
            continue;
        }
        let mut inertia = 0.0;
        for g in 0..2 {
            let members: Vec<&Vec<f64>> = x.iter().zip(&labels).filter(|(_, l)| **l == g).map(|(r, _)| r).collect();
            let m = members.len() as f64;
            for d in 0..2 {
                let mean = members.iter().map(|r| r[d]).sum::<f64>() / m;
                inertia += members.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>();
            }
        }
        if inertia < best.0 {
            best = (inertia, labels);
        }
    }
    best
}

fn same_partition(a: &[usize], b: &[usize]) -> bool {
    a.iter().zip(b).all(|(x, y)| x == y) || a.iter().zip(b).all(|(x, y)| *x == 1 - *y)
}

fn random_rows(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let shift = (i % 4) as f64 * 3.0;
            (0..d).map(|_| shift + rng.random_range(-1.0..1.0)).collect()
        })
        .collect()
}

#[test]
fn criterion_5_kmeans_correctness() {
    let x = planted_points();
    let (best, best_labels) = exhaustive_two_means(&x);
    let fit = fit_kmeans(
        &x,
        &KMeansConfig {
            k: 2,
            ..KMeansConfig::default()
        },
    )
    .unwrap();
    let matches = (fit.inertia - best).abs() <= 1e-9 * best && same_partition(&fit.labels, &best_labels);

    let datasets = [
        x.clone(),
        random_rows(1, 200, 5),
        random_rows(2, 500, 24),
        random_rows(3, 60, 3),
    ];
    let mut lloyd_ok = true;
    let mut em_ok = true;
    for (i, rows) in datasets.iter().enumerate() {
        for k in [2, 4, 15.min(rows.len())] {
            let fit = fit_kmeans(
                rows,
                &KMeansConfig {
                    k,
                    seed: i as u64,
                    ..KMeansConfig::default()
                },
            )
            .unwrap();
            lloyd_ok &= fit.inertia_history[0] == fit.initial_inertia;
            lloyd_ok &= fit.inertia_history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
        }
        for k in [2, 4] {
            let gmm = fit_gmm(
                rows,
                &GmmConfig {
                    k,
                    em_iters: 50,
                    seed: i as u64,
                },
            )
            .unwrap();
            em_ok &= gmm.log_likelihood.len() == 51;
            em_ok &= gmm.log_likelihood.windows(2).all(|w| w[1] >= w[0] - 1e-8);
        }
    }
    verdict(
        5,
        "k-means correctness",
        matches && lloyd_ok && em_ok,
        &format!(
            "fit inertia {:.6} vs exhaustive {best:.6}, Lloyd monotone {lloyd_ok}, EM monotone {em_ok}",
            fit.inertia
        ),
    );
}

#[test]
fn criterion_6_structural_constants() {
    let mut cfg = PipelineConfig::default();
    cfg.generator.flows_per_class = 30;
    let ds = generate_dataset(&cfg.generator, &cfg.behavior).unwrap();
    let p = train_pipeline(&ds.pcap_bytes().unwrap(), &ds.labels, &cfg).unwrap();
    let k = cfg.cluster.k();
    let h_dim = p.encoder.clusters.as_ref().unwrap().dim();
    let ae_sizes = p.encoder.autoencoder.as_ref().unwrap().network().sizes();
    let se_dim = encode_flow(&[0], true, k).unwrap().len();
    let l = segment_count(3600.0, 300.0).unwrap();
    let checks = [
        ("D", STAT_DIM, 16),
        ("Q", BEHAVIOR_DIM, 30),
        ("V", EMBED_DIM, 8),
        ("P+V", h_dim, 24),
        ("K", k, 15),
        ("K+1", se_dim, 16),
        ("I", p.encoder.input_dim(), 32),
        ("classifier input", p.classifier.input_dim(), 32),
        ("L", l, 12),
        ("tau", cfg.segmentation.tau as usize, 300),
    ];
    let ok = checks.iter().all(|(_, got, want)| got == want) && ae_sizes == vec![30, 24, 16, 8, 16, 24, 30];
    let detail: Vec<String> = checks.iter().map(|(n, g, _)| format!("{n}={g}")).collect();
    verdict(6, "structural constants", ok, &format!("{} AE={ae_sizes:?}", detail.join(" ")));
}

#[test]
fn criterion_7_determinism_and_persistence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::default();
    let ds_dir = dir.path().join("data");
    let paths = termrec::commands::cmd_generate(&cfg, &ds_dir).unwrap();
    let run = |name: &str, threads: usize| {
        let model = dir.path().join(format!("{name}.tp"));
        let report = dir.path().join(format!("{name}.report.json"));
        let p = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| cmd_train(&cfg, &paths.pcap, &paths.labels, &model, &report).unwrap());
        (p, std::fs::read(&model).unwrap(), std::fs::read(&report).unwrap())
    };
    let (p1, model1, report1) = run("a", 1);
    let (_, model2, report2) = run("b", 4);
    let identical = report1 == report2 && model1 == model2;

    let model = dir.path().join("a.tp");
    let preds = dir.path().join("preds.csv");
    cmd_predict(&model, &paths.pcap, &preds).unwrap();
    let unchanged = std::fs::read(&model).unwrap() == model1;
    let m = cmd_evaluate(&cfg, &preds, &paths.labels, &dir.path().join("eval.json")).unwrap();
    let reproduced = m.accuracy == p1.metrics.capture.accuracy && m == p1.metrics.capture;
    verdict(
        7,
        "determinism and persistence",
        identical && reproduced && unchanged,
        &format!(
            "reports identical {identical}, stored accuracy {} vs re-predicted {}, artifact untouched {unchanged}",
            p1.metrics.capture.accuracy, m.accuracy
        ),
    );
}

fn mutate(base: &[u8], rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut f = base.to_vec();
    match rng.random_range(0..6) {
        0 => {
            for _ in 0..rng.random_range(1..16) {
                let i = rng.random_range(0..f.len());
                f[i] ^= 1 << rng.random_range(0..8);
            }
        }
        1 => f.truncate(rng.random_range(0..f.len())),
        2 => {
            // corrupt a record length field
            let at = 24 + 8 + 4 * rng.random_range(0..2);
            let v: u32 = rng.random();
            f[at..at + 4].copy_from_slice(&v.to_le_bytes());
        }
        3 => {
            let magic = [0xa1b2_c3d4u32, 0xd4c3_b2a1, 0xa1b2_3c4d, 0x4d3c_b2a1, rng.random()];
            f[..4].copy_from_slice(&magic[rng.random_range(0..magic.len())].to_le_bytes());
            let link: u32 = [0, 1, 101, 113, rng.random()][rng.random_range(0..5)];
            f[20..24].copy_from_slice(&link.to_le_bytes());
        }
        4 => {
            let at = rng.random_range(0..f.len());
            let junk: Vec<u8> = (0..rng.random_range(1..64)).map(|_| rng.random()).collect();
            f.splice(at..at, junk);
        }
        _ => {
            let start = rng.random_range(24..f.len());
            let end = (start + rng.random_range(1..200)).min(f.len());
            for b in &mut f[start..end] {
                *b = rng.random();
            }
        }
    }
    f
}

#[test]
fn criterion_8_ingestion_round_trip() {
    let cfg = PipelineConfig::default();
    let table = BehaviorCodeTable::default();
    let ds = generate_dataset(&cfg.generator, &table).unwrap();
    let raw = ds.pcap_bytes().unwrap();
    let (packets, _) = ingest_capture(&raw, &table).unwrap();
    let origin = packets[0].timestamp;
    let flows = assemble_flows(packets, |k| ds.labels.label_flow(k));
    let grid = SegmentGrid::new(origin, cfg.generator.tau, ds.manifest.segment_count).unwrap();
    let mut exact = flows.len() == ds.manifest.flows.len();
    for f in &flows {
        let ip = if f.key.a.ip == cfg.generator.master_ip { f.key.b.ip } else { f.key.a.ip };
        let Some(m) = ds.manifest.flows.iter().find(|m| m.terminal_ip == ip) else {
            exact = false;
            continue;
        };
        let per_segment: Vec<usize> = grid.segment(f).segments.iter().map(|s| s.packets.len()).collect();
        exact &= f.packets.len() == m.packets && per_segment == m.segment_counts;
    }

    // fuzz on a small capture
    let mut small = cfg.generator.clone();
    small.flows_per_class = 1;
    let base = generate_dataset(&small, &table).unwrap();
    let mut trimmed = base.clone();
    trimmed.packets.truncate(60);
    let base = trimmed.pcap_bytes().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut panics = 0;
    let mut errors = 0;
    for _ in 0..10_000 {
        let file = mutate(&base, &mut rng);
        let outcome = catch_unwind(AssertUnwindSafe(|| {
            let parsed = ingest_capture(&file, &table).is_err();
            let prepared = prepare(&file, None, &cfg).is_err();
            parsed || prepared
        }));
        match outcome {
            Ok(failed) => errors += usize::from(failed),
            Err(_) => panics += 1,
        }
    }
    verdict(
        8,
        "ingestion round-trip",
        exact && panics == 0,
        &format!(
            "{} flows match manifest {exact}; 10000 mutated files, {errors} rejected, {panics} panics",
            flows.len()
        ),
    );
}

#[test]
fn criterion_9_long_connection_fraction() {
    let cfg = PipelineConfig::default();
    let ds = generate_dataset(&cfg.generator, &cfg.behavior).unwrap();
    let prepared = prepare(&ds.pcap_bytes().unwrap(), Some(&ds.labels), &cfg).unwrap();
    let f = prepared.filter.long_fraction;
    verdict(
        9,
        "long-connection filter",
        (f - 0.86).abs() <= 0.02,
        &format!(
            "long fraction {f:.4} ({} of {} flows)",
            prepared.filter.long, prepared.filter.total
        ),
    );
}
