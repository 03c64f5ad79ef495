//! File-level entry points behind the CLI subcommands. Every text output
//! starts with a `#` header line carrying the resolved config hash.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{Error, Result, StageExt};
use crate::flow::{LabelMap, TerminalType};
use crate::metrics::MetricsReport;
use crate::pipeline::{evaluate_predictions, Prediction, TrainedPipeline, TrainingMetrics};
use crate::synthgen::{generate_dataset, DatasetPaths};

fn header(kind: &str, hash: &str) -> String {
    format!("# termrec {kind} config_hash={hash}\n")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn json_doc<T: Serialize>(kind: &str, hash: &str, value: &T) -> String {
    let body = serde_json::to_string_pretty(value).expect("report serializes");
    format!("{}{body}\n", header(kind, hash))
}

/// Splits a `# termrec <kind> config_hash=<hash>` header from the body.
fn split_header(text: &str) -> (Option<String>, &str) {
    match text.split_once('\n') {
        Some((first, rest)) if first.starts_with("# termrec ") => {
            let hash = first.split("config_hash=").nth(1).map(|h| h.trim().to_string());
            (hash, rest)
        }
        _ => (None, text),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn cmd_generate(cfg: &PipelineConfig, out_dir: &Path) -> Result<DatasetPaths> {
    let mut ds = generate_dataset(&cfg.generator, &cfg.behavior).stage("generate")?;
    ds.write(out_dir, &cfg.hash()).stage("generate")
}

/// Default report location next to a model file.
pub fn default_report_path(model: &Path) -> PathBuf {
    let mut name = model.file_name().unwrap_or_default().to_os_string();
    name.push(".report.json");
    model.with_file_name(name)
}

/// Autoencoder loss-curve file written next to a model.
pub fn loss_curve_path(model: &Path) -> PathBuf {
    let mut name = model.file_name().unwrap_or_default().to_os_string();
    name.push(".ae-loss.csv");
    model.with_file_name(name)
}

pub fn loss_curve_to_text(hash: &str, curve: &[f64]) -> String {
    let mut s = header("ae-loss", hash);
    s.push_str("epoch,loss\n");
    for (i, l) in curve.iter().enumerate() {
        let _ = writeln!(s, "{},{l}", i + 1);
    }
    s
}

pub fn cmd_train(
    cfg: &PipelineConfig,
    pcap: &Path,
    labels: &Path,
    model_out: &Path,
    report_out: &Path,
) -> Result<TrainedPipeline> {
    let raw = read(pcap).stage("ingest")?;
    let labels = LabelMap::load(labels).stage("labels")?;
    let pipeline = crate::pipeline::train_pipeline(&raw, &labels, cfg)?;
    write_file(model_out, &pipeline.to_text())?;
    write_file(report_out, &json_doc("train-report", &pipeline.config_hash, &pipeline.metrics))?;
    write_file(
        &loss_curve_path(model_out),
        &loss_curve_to_text(&pipeline.config_hash, &pipeline.metrics.autoencoder_loss),
    )?;
    Ok(pipeline)
}

pub fn load_pipeline(path: &Path) -> Result<TrainedPipeline> {
    let bytes = read(path).stage("load")?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Corrupt("artifact is not UTF-8".into()))?;
    TrainedPipeline::from_text(&text).stage("load")
}

pub fn predictions_to_text(hash: &str, predictions: &[Prediction]) -> String {
    let mut s = header("predictions", hash);
    s.push_str("flow_id,predicted");
    for t in TerminalType::ALL {
        let _ = write!(s, ",p_{t}");
    }
    s.push('\n');
    for p in predictions {
        let _ = write!(s, "{},{}", p.flow_id, p.predicted);
        for v in &p.proba {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

/// Parsed predictions file: config hash and `(flow_id, predicted)` rows.
pub fn parse_predictions(text: &str) -> Result<(Option<String>, Vec<(String, TerminalType)>)> {
    let (hash, body) = split_header(text);
    let mut lines = body.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.starts_with("flow_id,predicted") => {}
        Some(_) => return Err(Error::Parse("predictions file lacks its header row".into())),
        None => return Ok((hash, Vec::new())),
    }
    let rows = lines
        .enumerate()
        .map(|(i, line)| {
            let mut cols = line.split(',');
            match (cols.next(), cols.next()) {
                (Some(id), Some(label)) => Ok((id.to_string(), label.parse()?)),
                _ => Err(Error::Parse(format!("predictions row {}: too few columns", i + 1))),
            }
        })
        .collect::<Result<_>>()?;
    Ok((hash, rows))
}

/// Flow ids are `ip:port-ip:port`.
fn flow_label(id: &str, labels: &LabelMap) -> Option<TerminalType> {
    id.split('-')
        .filter_map(|ep| ep.rsplit_once(':'))
        .filter_map(|(ip, _)| ip.parse().ok())
        .find_map(|ip| labels.get(&ip))
}

pub fn cmd_predict(model: &Path, pcap: &Path, out: &Path) -> Result<Vec<Prediction>> {
    let pipeline = load_pipeline(model)?;
    let raw = read(pcap).stage("ingest")?;
    let outcome = pipeline.predict(&raw, None)?;
    write_file(out, &predictions_to_text(&pipeline.config_hash, &outcome.predictions))?;
    Ok(outcome.predictions)
}

pub fn cmd_evaluate(cfg: &PipelineConfig, predictions: &Path, labels: &Path, out: &Path) -> Result<MetricsReport> {
    let text = String::from_utf8(read(predictions)?).map_err(|_| Error::Parse("predictions are not UTF-8".into()))?;
    let (hash, rows) = parse_predictions(&text).stage("evaluate")?;
    let labels = LabelMap::load(labels).stage("labels")?;
    let preds: Vec<Prediction> = rows
        .into_iter()
        .map(|(flow_id, predicted)| Prediction {
            truth: flow_label(&flow_id, &labels),
            flow_id,
            predicted,
            proba: Vec::new(),
        })
        .collect();
    let report = evaluate_predictions(&preds, cfg).stage("evaluate")?;
    let hash = hash.unwrap_or_else(|| cfg.hash());
    write_file(out, &json_doc("metrics", &hash, &report))?;
    Ok(report)
}

/// Reads either a metrics file or a training report (its validation split,
/// or the training split when there is none).
pub fn load_metrics(path: &Path) -> Result<(Option<String>, MetricsReport)> {
    let text = String::from_utf8(read(path)?).map_err(|_| Error::Parse("report is not UTF-8".into()))?;
    let (hash, body) = split_header(&text);
    if let Ok(m) = serde_json::from_str::<MetricsReport>(body) {
        return Ok((hash, m));
    }
    let t: TrainingMetrics =
        serde_json::from_str(body).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Ok((hash, t.validation.unwrap_or(t.train)))
}

pub fn cmd_report(metrics: &Path, out: &Path, svg: Option<&Path>) -> Result<String> {
    let (hash, m) = load_metrics(metrics)?;
    let hash = hash.unwrap_or_else(|| "unknown".into());
    let text = format!("{}{}", header("report", &hash), m.render_text());
    write_file(out, &text)?;
    if let Some(svg) = svg {
        let doc = m.render_svg();
        let doc = doc.replacen('\n', &format!("\n<!-- termrec report config_hash={hash} -->\n"), 1);
        write_file(svg, &doc)?;
    }
    Ok(text)
}
