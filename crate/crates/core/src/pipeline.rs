//! End-to-end training and prediction, and the persisted pipeline artifact.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoencoder::Autoencoder;
use crate::classifier::{self, build_input, Classifier};
use crate::cluster::{fit_gmm, fit_kmeans, ClusterModel};
use crate::config::{ClusterKind, PipelineConfig, SplitConfig, StandardizeScope};
use crate::encoding::{build_segment_matrix, encode_flow};
use crate::error::{Error, Result, StageExt};
use crate::features::{flow_features, segment_features, FeatureBundle, Standardizer};
use crate::flow::{assemble_flows, filter_long_connections, FilterStats, LabelMap, SegmentGrid, TerminalType};
use crate::metrics::{evaluate, MetricsReport};
use crate::pcap::{ingest_capture, IngestStats};

pub const FORMAT_VERSION: u32 = 1;
const ARTIFACT_TAG: &str = "termrec-pipeline";

pub fn class_names() -> Vec<String> {
    TerminalType::ALL.iter().map(|t| t.name().to_string()).collect()
}

/// A long flow reduced to its features.
#[derive(Debug, Clone)]
pub struct PreparedFlow {
    pub id: String,
    pub label: Option<TerminalType>,
    pub features: FeatureBundle,
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub flows: Vec<PreparedFlow>,
    pub ingest: IngestStats,
    pub filter: FilterStats,
    /// Packets outside the segment grid, clamped into the edge windows.
    pub clamped: usize,
}

/// Ingest, assemble, filter, segment and extract features. The segment grid
/// starts at the earliest packet of the capture.
pub fn prepare(raw: &[u8], labels: Option<&LabelMap>, cfg: &PipelineConfig) -> Result<Prepared> {
    let (packets, ingest) = ingest_capture(raw, &cfg.behavior).stage("ingest")?;
    let origin = packets.iter().map(|p| p.timestamp).fold(f64::INFINITY, f64::min);
    let flows = assemble_flows(packets, |k| labels.and_then(|m| m.label_flow(k)));
    let (kept, filter) = if cfg.filter.enabled {
        let out = filter_long_connections(flows, cfg.filter.min_duration, cfg.segmentation.observation_window);
        (out.kept, out.stats)
    } else {
        let n = flows.len();
        let stats = FilterStats {
            total: n,
            long: n,
            short: 0,
            long_fraction: if n == 0 { 0.0 } else { 1.0 },
        };
        (flows, stats)
    };
    let l = cfg.segmentation.segments().stage("segment")?;
    let grid = SegmentGrid::new(if origin.is_finite() { origin } else { 0.0 }, cfg.segmentation.tau, l)
        .stage("segment")?;
    let per_flow: Vec<(PreparedFlow, usize)> = kept
        .par_iter()
        .map(|f| {
            let seg = grid.segment(f);
            let bundle = FeatureBundle {
                flow: flow_features(f),
                segments: seg.segments.iter().map(|s| segment_features(f, s)).collect(),
            };
            (
                PreparedFlow {
                    id: f.id(),
                    label: f.label,
                    features: bundle,
                },
                seg.clamped,
            )
        })
        .collect();
    let clamped = per_flow.iter().map(|(_, c)| c).sum();
    Ok(Prepared {
        flows: per_flow.into_iter().map(|(f, _)| f).collect(),
        ingest,
        filter,
        clamped,
    })
}

/// Stratified split into sorted train, validation and test index lists.
pub fn stratified_split(labels: &[usize], cfg: &SplitConfig) -> [Vec<usize>; 3] {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    for idx in by_class.values_mut() {
        idx.shuffle(&mut rng);
        let n = idx.len() as f64;
        let n_train = ((n * cfg.train).round() as usize).clamp(1, idx.len());
        let n_val = ((n * cfg.validation).round() as usize).min(idx.len() - n_train);
        out[0].extend_from_slice(&idx[..n_train]);
        out[1].extend_from_slice(&idx[n_train..n_train + n_val]);
        out[2].extend_from_slice(&idx[n_train + n_val..]);
    }
    for part in &mut out {
        part.sort_unstable();
    }
    out
}

/// Everything fitted before the classifier; turns prepared flows into
/// classifier inputs without refitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub flow_std: Standardizer,
    pub segment_stat_std: Option<Standardizer>,
    pub segment_behavior_std: Option<Standardizer>,
    pub autoencoder: Option<Autoencoder>,
    pub clusters: Option<ClusterModel>,
}

impl FeatureEncoder {
    pub fn input_dim(&self) -> usize {
        self.flow_std.dim() + self.clusters.as_ref().map_or(0, |c| c.k() + 1)
    }

    /// Segment-matrix rows (standardized statistics joined with behavior
    /// embeddings) of the non-empty segments, grouped per flow.
    fn segment_rows(&self, flows: &[&PreparedFlow]) -> Result<Vec<crate::encoding::SegmentRow>> {
        let (Some(tf), Some(bf), Some(ae)) = (&self.segment_stat_std, &self.segment_behavior_std, &self.autoencoder)
        else {
            return Ok(Vec::new());
        };
        let stats: Vec<Vec<Vec<f64>>> = flows
            .iter()
            .map(|f| {
                f.features
                    .segments
                    .iter()
                    .map(|s| if s.empty { Ok(vec![0.0; s.stats.len()]) } else { tf.apply_row(&s.stats) })
                    .collect()
            })
            .collect::<Result<_>>()
            .stage("standardize")?;
        let embeds: Vec<Vec<Vec<f64>>> = flows
            .par_iter()
            .map(|f| {
                f.features
                    .segments
                    .iter()
                    .filter(|s| !s.empty)
                    .map(|s| ae.encode(&bf.apply_row(&s.behavior)?))
                    .collect()
            })
            .collect::<Result<_>>()
            .stage("encode")?;
        let masks: Vec<Vec<bool>> = flows.iter().map(|f| f.features.empty_mask()).collect();
        build_segment_matrix(&stats, &embeds, &masks).stage("segment-matrix")
    }

    pub fn inputs(&self, flows: &[&PreparedFlow]) -> Result<Vec<Vec<f64>>> {
        let ff: Vec<Vec<f64>> = flows
            .iter()
            .map(|f| self.flow_std.apply_row(&f.features.flow))
            .collect::<Result<_>>()
            .stage("standardize")?;
        let Some(clusters) = &self.clusters else {
            return Ok(ff);
        };
        let rows = self.segment_rows(flows)?;
        let z = clusters.assign(&rows).stage("cluster")?;
        let k = clusters.k();
        let mut per_flow: Vec<Vec<usize>> = vec![Vec::new(); flows.len()];
        for (r, c) in rows.iter().zip(z) {
            per_flow[r.flow].push(c);
        }
        flows
            .iter()
            .zip(per_flow)
            .zip(ff)
            .map(|((f, zs), x)| {
                let had_empty = f.features.segments.iter().any(|s| s.empty);
                build_input(&encode_flow(&zs, had_empty, k)?, &x, k)
            })
            .collect::<Result<_>>()
            .stage("encode")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetrics {
    pub config_hash: String,
    pub ingest: IngestStats,
    pub filter: FilterStats,
    pub unlabeled_flows: usize,
    pub split_sizes: [usize; 3],
    pub segment_rows: usize,
    pub autoencoder_loss: Vec<f64>,
    pub train: MetricsReport,
    pub validation: Option<MetricsReport>,
    pub test: Option<MetricsReport>,
    /// Every labeled long flow of the training capture.
    pub capture: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPipeline {
    pub version: u32,
    pub config_hash: String,
    pub config: PipelineConfig,
    pub classes: Vec<String>,
    pub encoder: FeatureEncoder,
    pub classifier: Classifier,
    pub metrics: TrainingMetrics,
}

fn labeled(flows: &[PreparedFlow]) -> (Vec<&PreparedFlow>, Vec<usize>) {
    flows
        .iter()
        .filter_map(|f| f.label.map(|l| (f, l.index())))
        .unzip()
}

fn score(
    model: &Classifier,
    inputs: &[Vec<f64>],
    y: &[usize],
    idx: &[usize],
    cfg: &PipelineConfig,
) -> Result<Option<MetricsReport>> {
    if idx.is_empty() {
        return Ok(None);
    }
    let rows: Vec<&[f64]> = idx.iter().map(|&i| inputs[i].as_slice()).collect();
    let (pred, _) = model.predict(&rows)?;
    let truth: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
    evaluate(&truth, &pred, &class_names(), cfg.evaluation.accuracy_mode).map(Some)
}

fn fit_encoder(
    flows: &[&PreparedFlow],
    fit_idx: &[usize],
    train_idx: &[usize],
    cfg: &PipelineConfig,
) -> Result<(FeatureEncoder, Vec<f64>, usize)> {
    let flow_rows: Vec<&[f64]> = fit_idx.iter().map(|&i| flows[i].features.flow.as_slice()).collect();
    let flow_std = Standardizer::fit(&flow_rows).stage("standardize")?;
    if cfg.features.flow_features_only {
        let enc = FeatureEncoder {
            flow_std,
            segment_stat_std: None,
            segment_behavior_std: None,
            autoencoder: None,
            clusters: None,
        };
        return Ok((enc, Vec::new(), 0));
    }
    let non_empty = |idx: &[usize]| -> Vec<&crate::features::SegmentFeatures> {
        idx.iter()
            .flat_map(|&i| flows[i].features.segments.iter().filter(|s| !s.empty))
            .collect()
    };
    let fit_segs = non_empty(fit_idx);
    let tf_rows: Vec<&[f64]> = fit_segs.iter().map(|s| s.stats.as_slice()).collect();
    let bf_rows: Vec<&[f64]> = fit_segs.iter().map(|s| s.behavior.as_slice()).collect();
    let tf = Standardizer::fit(&tf_rows).stage("standardize")?;
    let bf = Standardizer::fit(&bf_rows).stage("standardize")?;

    let train_bf: Vec<Vec<f64>> = non_empty(train_idx)
        .iter()
        .map(|s| bf.apply_row(&s.behavior))
        .collect::<Result<_>>()
        .stage("standardize")?;
    let mut ae = Autoencoder::from_encoder(&cfg.autoencoder.encoder, cfg.autoencoder.seed).stage("autoencoder")?;
    let report = ae.train(&train_bf, &cfg.autoencoder.train).stage("autoencoder")?;

    let mut enc = FeatureEncoder {
        flow_std,
        segment_stat_std: Some(tf),
        segment_behavior_std: Some(bf),
        autoencoder: Some(ae),
        clusters: None,
    };
    let train_flows: Vec<&PreparedFlow> = train_idx.iter().map(|&i| flows[i]).collect();
    let h = enc.segment_rows(&train_flows)?;
    let model = match cfg.cluster.kind {
        ClusterKind::Kmeans => ClusterModel::Kmeans {
            centroids: fit_kmeans(&h, &cfg.cluster.kmeans).stage("cluster")?.centroids,
        },
        ClusterKind::Gmm => ClusterModel::Gmm(fit_gmm(&h, &cfg.cluster.gmm).stage("cluster")?.model),
    };
    enc.clusters = Some(model);
    Ok((enc, report.loss_curve, h.len()))
}

/// Fits every stage on the training split of a labeled capture.
pub fn train_pipeline(raw: &[u8], labels: &LabelMap, cfg: &PipelineConfig) -> Result<TrainedPipeline> {
    cfg.validate()?;
    let prepared = prepare(raw, Some(labels), cfg)?;
    let (flows, y) = labeled(&prepared.flows);
    if flows.is_empty() {
        return Err(Error::EmptyInput("no labeled long flows in the capture")).stage("split");
    }
    if y.iter().all(|&c| c == y[0]) {
        return Err(Error::SingleClass).stage("split");
    }
    let [train_idx, val_idx, test_idx] = stratified_split(&y, &cfg.split);
    let all_idx: Vec<usize> = (0..flows.len()).collect();
    let fit_idx = match cfg.features.standardize_scope {
        StandardizeScope::Train => &train_idx,
        StandardizeScope::All => &all_idx,
    };
    let (encoder, ae_loss, segment_rows) = fit_encoder(&flows, fit_idx, &train_idx, cfg)?;
    let inputs = encoder.inputs(&flows)?;
    let train_x: Vec<&[f64]> = train_idx.iter().map(|&i| inputs[i].as_slice()).collect();
    let train_y: Vec<usize> = train_idx.iter().map(|&i| y[i]).collect();
    let model = classifier::train(cfg.classifier.kind, &train_x, &train_y, TerminalType::ALL.len(), &cfg.classifier)
        .stage("classify")?;

    let hash = cfg.hash();
    let metrics = TrainingMetrics {
        config_hash: hash.clone(),
        ingest: prepared.ingest,
        filter: prepared.filter,
        unlabeled_flows: prepared.flows.len() - flows.len(),
        split_sizes: [train_idx.len(), val_idx.len(), test_idx.len()],
        segment_rows,
        autoencoder_loss: ae_loss,
        train: score(&model, &inputs, &y, &train_idx, cfg)?.expect("train split is non-empty"),
        validation: score(&model, &inputs, &y, &val_idx, cfg)?,
        test: score(&model, &inputs, &y, &test_idx, cfg)?,
        capture: score(&model, &inputs, &y, &all_idx, cfg)?.expect("capture is non-empty"),
    };
    Ok(TrainedPipeline {
        version: FORMAT_VERSION,
        config_hash: hash,
        config: cfg.clone(),
        classes: class_names(),
        encoder,
        classifier: model,
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub flow_id: String,
    pub predicted: TerminalType,
    pub proba: Vec<f64>,
    pub truth: Option<TerminalType>,
}

#[derive(Debug, Clone)]
pub struct PredictOutcome {
    pub predictions: Vec<Prediction>,
    pub filter: FilterStats,
}

impl TrainedPipeline {
    /// Applies the persisted stages to the long flows of a capture.
    pub fn predict(&self, raw: &[u8], labels: Option<&LabelMap>) -> Result<PredictOutcome> {
        let prepared = prepare(raw, labels, &self.config)?;
        let flows: Vec<&PreparedFlow> = prepared.flows.iter().collect();
        if flows.is_empty() {
            return Ok(PredictOutcome {
                predictions: Vec::new(),
                filter: prepared.filter,
            });
        }
        let inputs = self.encoder.inputs(&flows)?;
        let (pred, proba) = self.classifier.predict(&inputs).stage("classify")?;
        let predictions = flows
            .iter()
            .zip(pred)
            .zip(proba)
            .map(|((f, p), proba)| Prediction {
                flow_id: f.id.clone(),
                predicted: TerminalType::ALL[p],
                proba,
                truth: f.label,
            })
            .collect();
        Ok(PredictOutcome {
            predictions,
            filter: prepared.filter,
        })
    }

    /// Header line followed by the JSON body.
    pub fn to_text(&self) -> String {
        let body = serde_json::to_string(self).expect("pipeline serializes");
        format!("{ARTIFACT_TAG} v{} config_hash={}\n{body}\n", self.version, self.config_hash)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (header, body) = text.split_once('\n').unwrap_or((text, ""));
        let mut parts = header.split_whitespace();
        if parts.next() != Some(ARTIFACT_TAG) {
            return Err(Error::Corrupt("not a pipeline artifact".into()));
        }
        let found: u32 = parts
            .next()
            .and_then(|v| v.strip_prefix('v'))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Corrupt("artifact header lacks a version".into()))?;
        if found != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found,
                expected: FORMAT_VERSION,
            });
        }
        let p: Self = serde_json::from_str(body).map_err(|e| Error::Corrupt(e.to_string()))?;
        if p.version != found {
            return Err(Error::Corrupt("header and body versions disagree".into()));
        }
        if p.encoder.input_dim() != p.classifier.input_dim() {
            return Err(Error::Corrupt("encoder and classifier dimensions disagree".into()));
        }
        Ok(p)
    }
}

/// Scores predictions that carry ground truth.
pub fn evaluate_predictions(predictions: &[Prediction], cfg: &PipelineConfig) -> Result<MetricsReport> {
    let mut truth = Vec::with_capacity(predictions.len());
    for p in predictions {
        truth.push(p.truth.ok_or_else(|| Error::MissingLabel(p.flow_id.clone()))?.index());
    }
    let pred: Vec<usize> = predictions.iter().map(|p| p.predicted.index()).collect();
    evaluate(&truth, &pred, &class_names(), cfg.evaluation.accuracy_mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::generate_dataset;

    fn quick_config() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.generator.flows_per_class = 30;
        cfg.autoencoder.train.epochs = 20;
        cfg.autoencoder.train.batch_size = 16;
        cfg.classifier.gbt.stages = 20;
        cfg.cluster.kmeans.k = 6;
        cfg
    }

    fn dataset(cfg: &PipelineConfig) -> (Vec<u8>, LabelMap) {
        let ds = generate_dataset(&cfg.generator, &cfg.behavior).unwrap();
        (ds.pcap_bytes().unwrap(), ds.labels)
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let y: Vec<usize> = (0..100).map(|i| i % 3).collect();
        let parts = stratified_split(&y, &SplitConfig::default());
        let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        for c in 0..3 {
            let n_train = parts[0].iter().filter(|&&i| y[i] == c).count();
            let n = y.iter().filter(|&&v| v == c).count();
            assert!((n_train as f64 - 0.7 * n as f64).abs() <= 1.0);
        }
        assert_eq!(parts, stratified_split(&y, &SplitConfig::default()));
    }

    #[test]
    fn train_predict_round_trip() {
        let cfg = quick_config();
        let (raw, labels) = dataset(&cfg);
        let p = train_pipeline(&raw, &labels, &cfg).unwrap();
        assert_eq!(p.encoder.input_dim(), 6 + 1 + 16);
        let text = p.to_text();
        let back = TrainedPipeline::from_text(&text).unwrap();
        assert_eq!(back, p);
        let out = back.predict(&raw, Some(&labels)).unwrap();
        let m = evaluate_predictions(&out.predictions, &cfg).unwrap();
        assert_eq!(m, p.metrics.capture);
    }

    #[test]
    fn flow_only_skips_segment_stages() {
        let mut cfg = quick_config();
        cfg.features.flow_features_only = true;
        let (raw, labels) = dataset(&cfg);
        let p = train_pipeline(&raw, &labels, &cfg).unwrap();
        assert!(p.encoder.autoencoder.is_none() && p.encoder.clusters.is_none());
        assert_eq!(p.classifier.input_dim(), 16);
    }

    #[test]
    fn artifact_version_is_checked() {
        let cfg = quick_config();
        let (raw, labels) = dataset(&cfg);
        let text = train_pipeline(&raw, &labels, &cfg).unwrap().to_text();
        let bumped = text.replacen(" v1 ", " v2 ", 1);
        assert!(matches!(
            TrainedPipeline::from_text(&bumped),
            Err(Error::VersionMismatch { found: 2, expected: 1 })
        ));
        assert!(matches!(TrainedPipeline::from_text("garbage"), Err(Error::Corrupt(_))));
    }

    #[test]
    fn single_class_capture_is_rejected() {
        let cfg = quick_config();
        let (raw, _) = dataset(&cfg);
        let ds = generate_dataset(&cfg.generator, &cfg.behavior).unwrap();
        let mut only_ttu = LabelMap::default();
        for f in ds.manifest.flows.iter().filter(|f| f.archetype == TerminalType::Ttu) {
            only_ttu.insert(f.terminal_ip, f.archetype);
        }
        let err = train_pipeline(&raw, &only_ttu, &cfg).unwrap_err();
        assert_eq!(err.stage(), Some("split"));
    }
}
