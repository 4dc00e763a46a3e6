//! `methodtag` command line.
//!
//! Values come from defaults, then the `--config` file, then flags; a flag
//! always wins over the file.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use methodtag_core::cluster::{LinkageMethod, Metric};

use crate::config::{load_config, PipelineConfig};
use crate::error::{StageContext, StageError};
use crate::pipeline::{self, FetchSource, SyntheticSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "methodtag", version, about = "Ontology-driven methodology tagging of biomedical articles")]
struct Cli {
    /// Pipeline config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Top-level seed shared by every stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
struct TextFlags {
    /// Use abstracts only.
    #[arg(long, conflicts_with = "with_fulltext")]
    abstract_only: bool,
    /// Append methods and results sections to the abstract.
    #[arg(long)]
    with_fulltext: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the lexicon and label space from the ontology.
    ExtractOntology {
        /// Subtree root id (repeatable); defaults to the config's roots.
        #[arg(long = "root")]
        roots: Vec<String>,
        #[arg(long)]
        include_synonyms: bool,
    },
    /// Retrieve articles for the pmid list into the corpus store.
    Fetch {
        /// Read records from a fixture directory instead of the network.
        #[arg(long, value_name = "DIR", conflicts_with = "live")]
        offline_fixtures: Option<PathBuf>,
        /// Use the live NCBI services (needs CONTACT_EMAIL).
        #[arg(long)]
        live: bool,
        #[arg(long)]
        max_results: Option<usize>,
        #[command(flatten)]
        text: TextFlags,
    },
    /// Annotate the corpus and write the label matrix.
    Annotate {
        #[arg(long)]
        min_score: Option<u32>,
        #[command(flatten)]
        text: TextFlags,
    },
    /// Cluster label-matrix rows and export the dendrogram.
    Cluster {
        #[arg(long, value_parser = parse_linkage)]
        linkage: Option<LinkageMethod>,
        #[arg(long, value_parser = parse_metric)]
        metric: Option<Metric>,
        #[arg(long)]
        truncate: Option<usize>,
    },
    /// Train the classifier and write the checkpoint and loss curve.
    Train {
        #[command(flatten)]
        text: TextFlags,
    },
    /// Score the checkpoint on the held-out split.
    Evaluate {
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        text: TextFlags,
    },
    /// Predict labels for a text or for every corpus document.
    Predict {
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        text: Option<String>,
        #[command(flatten)]
        flags: TextFlags,
    },
    /// Write a seeded synthetic workspace (ontology, vocab, corpus, config).
    Synthetic {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        docs: usize,
        #[arg(long, default_value_t = 8)]
        labels: usize,
        #[arg(long, default_value_t = 0.3)]
        mention_rate: f64,
    },
    /// Run extract-ontology, annotate, train and evaluate in sequence.
    Pipeline {
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        min_score: Option<u32>,
        #[command(flatten)]
        text: TextFlags,
    },
}

fn parse_linkage(s: &str) -> Result<LinkageMethod, String> {
    match s.to_ascii_lowercase().as_str() {
        "ward" => Ok(LinkageMethod::Ward),
        "single" => Ok(LinkageMethod::Single),
        "complete" => Ok(LinkageMethod::Complete),
        "average" => Ok(LinkageMethod::Average),
        _ => Err(format!("unknown linkage `{s}` (ward, single, complete, average)")),
    }
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    match s.to_ascii_lowercase().as_str() {
        "euclidean" => Ok(Metric::Euclidean),
        "jaccard" => Ok(Metric::Jaccard),
        _ => Err(format!("unknown metric `{s}` (euclidean, jaccard)")),
    }
}

impl TextFlags {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if self.with_fulltext {
            cfg.with_fulltext = true;
        }
        if self.abstract_only {
            cfg.with_fulltext = false;
        }
    }
}

enum Failure {
    Usage(String),
    Data(StageError),
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        Failure::Data(e)
    }
}

fn base_config(cli: &Cli) -> Result<PipelineConfig, StageError> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path).stage("config")?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn finish(mut cfg: PipelineConfig) -> Result<PipelineConfig, StageError> {
    cfg.sync();
    cfg.validate().stage("config")?;
    Ok(cfg)
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), Failure> {
    let mut cfg = base_config(&cli)?;
    let line = match cli.command {
        Command::ExtractOntology { roots, include_synonyms } => {
            if !roots.is_empty() {
                cfg.annotate.roots = roots;
            }
            cfg.annotate.include_synonyms |= include_synonyms;
            pipeline::stage_extract(&finish(cfg)?)?
        }
        Command::Fetch {
            offline_fixtures,
            live,
            max_results,
            text,
        } => {
            text.apply(&mut cfg);
            if let Some(n) = max_results {
                cfg.fetch.max_results = n;
            }
            if let Some(dir) = offline_fixtures {
                cfg.paths.fixtures = Some(dir);
            }
            let source = match (&cfg.paths.fixtures, live) {
                (_, true) => FetchSource::Live,
                (Some(dir), false) => FetchSource::Fixtures(dir.clone()),
                (None, false) => {
                    return Err(Failure::Usage(
                        "fetch needs --offline-fixtures DIR, paths.fixtures, or --live".into(),
                    ))
                }
            };
            pipeline::stage_fetch(&finish(cfg)?, source)?
        }
        Command::Annotate { min_score, text } => {
            text.apply(&mut cfg);
            if let Some(m) = min_score {
                cfg.annotate.min_score = m;
            }
            pipeline::stage_annotate(&finish(cfg)?)?
        }
        Command::Cluster {
            linkage,
            metric,
            truncate,
        } => {
            if let Some(m) = linkage {
                cfg.cluster.method = m;
            }
            if let Some(m) = metric {
                cfg.cluster.metric = m;
            }
            if truncate.is_some() {
                cfg.cluster.truncate = truncate;
            }
            pipeline::stage_cluster(&finish(cfg)?)?
        }
        Command::Train { text } => {
            text.apply(&mut cfg);
            pipeline::stage_train(&finish(cfg)?)?
        }
        Command::Evaluate { threshold, text } => {
            text.apply(&mut cfg);
            if let Some(t) = threshold {
                cfg.train.threshold = t;
            }
            pipeline::stage_evaluate(&finish(cfg)?)?.0
        }
        Command::Predict { threshold, text, flags } => {
            flags.apply(&mut cfg);
            if let Some(t) = threshold {
                cfg.train.threshold = t;
            }
            pipeline::stage_predict(&finish(cfg)?, text.as_deref())?.0
        }
        Command::Synthetic {
            out: dir,
            docs,
            labels,
            mention_rate,
        } => {
            let spec = SyntheticSpec {
                n_docs: docs,
                n_labels: labels,
                mention_rate,
                seed: cfg.seed,
            };
            pipeline::write_synthetic_workspace(&dir, spec).stage("synthetic")?;
            format!(
                "synthetic: {docs} documents over {labels} techniques -> {}",
                dir.join("config.toml").display()
            )
        }
        Command::Pipeline {
            threshold,
            min_score,
            text,
        } => {
            text.apply(&mut cfg);
            if let Some(t) = threshold {
                cfg.train.threshold = t;
            }
            if let Some(m) = min_score {
                cfg.annotate.min_score = m;
            }
            pipeline::run_pipeline(&finish(cfg)?)?.summaries.join("\n")
        }
    };
    let _ = writeln!(out, "{line}");
    Ok(())
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(cli, out) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(message)) => {
            let _ = writeln!(err, "error: {message}");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_DATA
        }
    }
}
