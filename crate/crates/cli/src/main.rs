use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use termrec::commands::{cmd_evaluate, cmd_generate, cmd_predict, cmd_report, cmd_train, default_report_path};
use termrec::config::PipelineConfig;
use termrec::error::ErrorCategory;
use termrec::Error;

/// Terminal-type recognition from grid traffic captures.
#[derive(Debug, Parser)]
#[command(name = "termrec", version)]
struct Cli {
    /// Pipeline configuration (TOML); defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap for all parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Classify on flow statistics only, without the segment encoding.
    #[arg(long, global = true)]
    flow_features_only: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic capture, its labels and a manifest.
    Generate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the pipeline on a labeled capture.
    Train {
        #[arg(long)]
        pcap: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Defaults to `<model>.report.json`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Classify every long flow of a capture with a trained model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pcap: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a predictions file against labels.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a metrics file or training report as text, optionally SVG.
    Report {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Print the resolved configuration.
    Config,
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if cli.flow_features_only {
        cfg.features.flow_features_only = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Error> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("--threads: {e}")))?;
    }
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Generate { out } => {
            let paths = cmd_generate(&cfg, out)?;
            println!("wrote {} {} {}", paths.pcap.display(), paths.labels.display(), paths.manifest.display());
        }
        Command::Train {
            pcap,
            labels,
            model,
            report,
        } => {
            let report = report.clone().unwrap_or_else(|| default_report_path(model));
            let p = cmd_train(&cfg, pcap, labels, model, &report)?;
            let m = p.metrics.validation.as_ref().unwrap_or(&p.metrics.train);
            println!(
                "trained {} on {} flows; validation accuracy {:.4} macro-F1 {:.4}; wrote {} {}",
                p.classifier.kind(),
                p.metrics.split_sizes.iter().sum::<usize>(),
                m.accuracy,
                m.f1_macro,
                model.display(),
                report.display()
            );
        }
        Command::Predict { model, pcap, out } => {
            let preds = cmd_predict(model, pcap, out)?;
            println!("predicted {} flows; wrote {}", preds.len(), out.display());
        }
        Command::Evaluate {
            predictions,
            labels,
            out,
        } => {
            let m = cmd_evaluate(&cfg, predictions, labels, out)?;
            println!(
                "accuracy {:.4} precision {:.4} recall {:.4} macro-F1 {:.4}; wrote {}",
                m.accuracy,
                m.precision_macro,
                m.recall_macro,
                m.f1_macro,
                out.display()
            );
        }
        Command::Report { metrics, out, svg } => {
            print!("{}", cmd_report(metrics, out, svg.as_deref())?);
        }
        Command::Config => print!("{}", cfg.to_toml_string()),
    }
    Ok(())
}

fn category_name(c: ErrorCategory) -> &'static str {
    match c {
        ErrorCategory::Config => "config",
        ErrorCategory::Data => "data",
        ErrorCategory::Model => "model",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            let message = e.to_string().replace(['\n', '\r'], " ").replace('"', "'");
            eprintln!(
                "error category={} kind={} stage={} message=\"{message}\"",
                category_name(category),
                e.kind(),
                e.stage().unwrap_or("-"),
            );
            ExitCode::from(category.exit_code() as u8)
        }
    }
}
