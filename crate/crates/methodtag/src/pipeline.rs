//! Pipeline stages over the configured files, plus the seeded synthetic
//! workspace used for the end-to-end run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use methodtag_core::annotate::{annotate_text, labels_from_annotations, build_label_matrix, Annotation, LabelMatrix};
use methodtag_core::cluster::{linkage, truncate};
use methodtag_core::corpus::{filter_corpus, Document, FetchRequest};
use methodtag_core::metrics::MetricReport;
use methodtag_core::model::{ModelConfig, ModelParams};
use methodtag_core::ontology::{build_label_space, extract_subtrees, parse_obo, LabelSpace, TermLexicon};
use methodtag_core::synthetic;
use methodtag_core::tokenizer::Vocab;
use methodtag_core::train::{
    build_examples, curve_csv, predict, predict_matrix, split_indices, train_loop, EpochRecord, TrainConfig, TrainError,
    TrainOutcome,
};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::client::{fetch_batch, read_pmid_list, FetchOptions, FixtureClient, LiveClient, RetrievalClient};
use crate::config::{require_inputs, ModelSection, PipelineConfig};
use crate::error::{Error, Result, StageContext, StageError};
use crate::formats::{
    self, annotations_jsonl, load_corpus, load_label_matrix, load_label_space, load_lexicon, metrics_json,
    predictions_jsonl, read_text, store_corpus, store_dendrogram, store_label_matrix, store_label_space,
    store_lexicon, write_bytes, PredictedLabel, Prediction,
};

/// Lexicon of the configured subtrees (the whole ontology when no roots are given) and its label space.
pub fn extract_ontology(obo: &str, roots: &[String], include_synonyms: bool) -> Result<(TermLexicon, LabelSpace)> {
    let terms = parse_obo(obo)?;
    let lexicon = if roots.is_empty() {
        TermLexicon::from_terms(terms)
    } else {
        let ids: Vec<&str> = roots.iter().map(String::as_str).collect();
        extract_subtrees(&terms, &ids)?
    };
    let labels = build_label_space(&lexicon, include_synonyms)?;
    Ok((lexicon, labels))
}

pub struct Annotated {
    pub matrix: LabelMatrix,
    pub annotations: Vec<(String, Vec<Annotation>)>,
}

pub fn annotate_corpus(
    docs: &[Document],
    lexicon: &TermLexicon,
    labels: &LabelSpace,
    min_score: u32,
    with_fulltext: bool,
) -> Result<Annotated> {
    let mut sets = Vec::with_capacity(docs.len());
    let mut annotations = Vec::with_capacity(docs.len());
    for doc in docs {
        let anns = annotate_text(&doc.training_text(with_fulltext), lexicon, labels);
        sets.push(labels_from_annotations(&anns, min_score));
        annotations.push((doc.pmid.clone(), anns));
    }
    Ok(Annotated {
        matrix: build_label_matrix(docs, &sets, labels)?,
        annotations,
    })
}

/// Training and held-out document indices for this config's seed and ratio.
pub fn split_for(n_docs: usize, train: &TrainConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    Ok(split_indices(n_docs, train.split_ratio, train.seed)?)
}

fn effective_max_len(model: &ModelConfig, train: &TrainConfig) -> usize {
    train.max_len.min(model.max_positions)
}

pub struct TrainRun {
    pub outcome: TrainOutcome,
    pub model_config: ModelConfig,
}

pub fn train_model(
    docs: &[Document],
    matrix: &LabelMatrix,
    vocab: &Vocab,
    model: &ModelSection,
    train: &TrainConfig,
) -> Result<TrainRun> {
    let model_config = model.model_config(vocab.len(), matrix.n_labels());
    let examples = build_examples(docs, matrix, vocab, effective_max_len(&model_config, train), train.with_fulltext)?;
    let (tr, va) = split_for(docs.len(), train)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| examples[i].clone()).collect::<Vec<_>>();
    let outcome = train_loop(&pick(&tr), &pick(&va), &model_config, train)?;
    Ok(TrainRun { outcome, model_config })
}

fn check_compatible(config: &ModelConfig, vocab: &Vocab, labels: &LabelSpace) -> Result<()> {
    if config.vocab_size != vocab.len() || config.num_labels != labels.len() {
        return Err(TrainError::Incompatible(format!(
            "checkpoint expects {} vocab entries and {} labels, inputs have {} and {}",
            config.vocab_size,
            config.num_labels,
            vocab.len(),
            labels.len()
        ))
        .into());
    }
    Ok(())
}

/// Metrics of `params` on the held-out split.
pub fn evaluate_model(
    params: &ModelParams,
    model_config: &ModelConfig,
    docs: &[Document],
    matrix: &LabelMatrix,
    vocab: &Vocab,
    train: &TrainConfig,
) -> Result<MetricReport> {
    let (_, held_out) = split_for(docs.len(), train)?;
    let rows: BTreeMap<&str, usize> = matrix.row_index();
    let mut gold_rows = Vec::with_capacity(held_out.len());
    let mut test_docs = Vec::with_capacity(held_out.len());
    for &i in &held_out {
        let doc = &docs[i];
        let row = *rows
            .get(doc.pmid.as_str())
            .ok_or_else(|| Error::Invalid(format!("pmid {} not in label matrix", doc.pmid)))?;
        gold_rows.push(row);
        test_docs.push(doc.clone());
    }
    let gold = matrix.select_rows(&gold_rows);
    let examples = build_examples(
        &test_docs,
        &gold,
        vocab,
        effective_max_len(model_config, train),
        train.with_fulltext,
    )?;
    let pred = predict_matrix(params, model_config, &examples, gold.row_ids().to_vec(), train.threshold)?;
    Ok(MetricReport::evaluate(&pred, &gold)?)
}

/// Where `fetch` gets its records.
pub enum FetchSource {
    Fixtures(PathBuf),
    Live,
}

pub fn stage_extract(cfg: &PipelineConfig) -> Result<String, StageError> {
    const S: &str = "extract-ontology";
    let p = &cfg.paths;
    require_inputs(&[("ontology", &p.ontology)]).stage(S)?;
    let obo = read_text(&p.ontology).stage(S)?;
    let (lexicon, labels) = extract_ontology(&obo, &cfg.annotate.roots, cfg.annotate.include_synonyms).stage(S)?;
    store_lexicon(&p.lexicon, &lexicon).stage(S)?;
    store_label_space(&p.label_space, &labels).stage(S)?;
    Ok(format!(
        "{S}: {} terms, {} labels -> {}, {}",
        lexicon.len(),
        labels.len(),
        p.lexicon.display(),
        p.label_space.display()
    ))
}

pub fn stage_fetch(cfg: &PipelineConfig, source: FetchSource) -> Result<String, StageError> {
    const S: &str = "fetch";
    let p = &cfg.paths;
    require_inputs(&[("pmids", &p.pmids)]).stage(S)?;
    let pmids = read_pmid_list(&p.pmids).stage(S)?;
    let request = FetchRequest::new(pmids, cfg.fetch.max_results).stage(S)?;
    let mut client: Box<dyn RetrievalClient> = match source {
        FetchSource::Fixtures(dir) => Box::new(FixtureClient::new(dir).stage(S)?),
        FetchSource::Live => {
            Box::new(LiveClient::from_env(cfg.fetch.requests_per_second, cfg.fetch.retries).stage(S)?)
        }
    };
    let options = FetchOptions {
        chunk_size: cfg.fetch.chunk_size,
        with_fulltext: cfg.with_fulltext,
    };
    let outcome = fetch_batch(&request, client.as_mut(), options).stage(S)?;
    let fetched = outcome.docs.len();
    let docs = filter_corpus(outcome.docs);
    store_corpus(&p.corpus, &docs).stage(S)?;
    Ok(format!(
        "{S}: {} requested, {fetched} fetched, {} kept, {} missing, {} without pmid -> {}",
        request.effective_pmids().len(),
        docs.len(),
        outcome.missing.len(),
        outcome.skipped_without_pmid,
        p.corpus.display()
    ))
}

pub fn stage_annotate(cfg: &PipelineConfig) -> Result<String, StageError> {
    const S: &str = "annotate";
    let p = &cfg.paths;
    require_inputs(&[("corpus", &p.corpus), ("lexicon", &p.lexicon), ("label_space", &p.label_space)]).stage(S)?;
    let docs = load_corpus(&p.corpus).stage(S)?;
    let lexicon = load_lexicon(&p.lexicon).stage(S)?;
    let labels = load_label_space(&p.label_space).stage(S)?;
    let a = annotate_corpus(&docs, &lexicon, &labels, cfg.annotate.min_score, cfg.with_fulltext).stage(S)?;
    store_label_matrix(&p.labels, &a.matrix, &labels).stage(S)?;
    write_bytes(&p.annotations, annotations_jsonl(&a.annotations).as_bytes()).stage(S)?;
    let n_ann: usize = a.annotations.iter().map(|(_, v)| v.len()).sum();
    Ok(format!(
        "{S}: {} documents, {n_ann} annotations, {} label cells -> {}",
        docs.len(),
        a.matrix.nnz(),
        p.labels.display()
    ))
}

pub fn stage_cluster(cfg: &PipelineConfig) -> Result<String, StageError> {
    const S: &str = "cluster";
    let p = &cfg.paths;
    require_inputs(&[("labels", &p.labels), ("label_space", &p.label_space)]).stage(S)?;
    let labels = load_label_space(&p.label_space).stage(S)?;
    let matrix = load_label_matrix(&p.labels, Some(&labels)).stage(S)?;
    let mut d = linkage(&matrix, cfg.cluster.method, cfg.cluster.metric).stage(S)?;
    if let Some(k) = cfg.cluster.truncate {
        d = truncate(&d, k).stage(S)?;
    }
    let dir = p.dendrogram_dir();
    store_dendrogram(&dir, &d, matrix.row_ids()).stage(S)?;
    Ok(format!(
        "{S}: {} rows, {} merges, {} leaves -> {}",
        matrix.n_rows(),
        d.steps().len(),
        d.n_leaves(),
        dir.display()
    ))
}

struct TrainingInputs {
    docs: Vec<Document>,
    labels: LabelSpace,
    matrix: LabelMatrix,
    vocab: Vocab,
}

fn training_inputs(cfg: &PipelineConfig, stage: &'static str) -> Result<TrainingInputs, StageError> {
    let p = &cfg.paths;
    require_inputs(&[
        ("corpus", &p.corpus),
        ("labels", &p.labels),
        ("label_space", &p.label_space),
        ("vocab", &p.vocab),
    ])
    .stage(stage)?;
    let docs = load_corpus(&p.corpus).stage(stage)?;
    let labels = load_label_space(&p.label_space).stage(stage)?;
    let matrix = load_label_matrix(&p.labels, Some(&labels)).stage(stage)?;
    let vocab = Vocab::load(&read_text(&p.vocab).stage(stage)?).stage(stage)?;
    Ok(TrainingInputs {
        docs,
        labels,
        matrix,
        vocab,
    })
}

pub fn stage_train(cfg: &PipelineConfig) -> Result<String, StageError> {
    const S: &str = "train";
    let p = &cfg.paths;
    let inputs = training_inputs(cfg, S)?;
    let run = train_model(&inputs.docs, &inputs.matrix, &inputs.vocab, &cfg.model, &cfg.train).stage(S)?;
    save_checkpoint(&p.checkpoint, &run.outcome.best_params, &run.model_config).stage(S)?;
    write_bytes(&p.curve(), curve_csv(&run.outcome.curve).as_bytes()).stage(S)?;
    let best: &EpochRecord = &run.outcome.curve[run.outcome.best_epoch - 1];
    Ok(format!(
        "{S}: {} epochs, best epoch {} (val loss {:.6}), final train loss {:.6} -> {}",
        run.outcome.curve.len(),
        run.outcome.best_epoch,
        best.val_loss,
        run.outcome.curve.last().map_or(f64::NAN, |r| r.train_loss),
        p.checkpoint.display()
    ))
}

pub fn stage_evaluate(cfg: &PipelineConfig) -> Result<(String, MetricReport), StageError> {
    const S: &str = "evaluate";
    let p = &cfg.paths;
    require_inputs(&[("checkpoint", &p.checkpoint)]).stage(S)?;
    let inputs = training_inputs(cfg, S)?;
    let (params, model_config) = load_checkpoint(&p.checkpoint).stage(S)?;
    check_compatible(&model_config, &inputs.vocab, &inputs.labels).stage(S)?;
    let report = evaluate_model(&params, &model_config, &inputs.docs, &inputs.matrix, &inputs.vocab, &cfg.train)
        .stage(S)?;
    write_bytes(&p.metrics(), metrics_json(&report).as_bytes()).stage(S)?;
    let show = |v: Option<f64>| v.map_or("null".to_string(), |x| format!("{x:.4}"));
    Ok((
        format!(
            "{S}: accuracy {} precision {} recall {} f1 {} hamming {} -> {}",
            show(report.accuracy),
            show(report.precision),
            show(report.recall),
            show(report.f1),
            show(report.hamming_loss),
            p.metrics().display()
        ),
        report,
    ))
}

/// Predicts labels for `text`, or for every corpus document when `text` is `None`.
pub fn stage_predict(cfg: &PipelineConfig, text: Option<&str>) -> Result<(String, Vec<Prediction>), StageError> {
    const S: &str = "predict";
    let p = &cfg.paths;
    require_inputs(&[("checkpoint", &p.checkpoint), ("vocab", &p.vocab), ("label_space", &p.label_space)]).stage(S)?;
    let (params, model_config) = load_checkpoint(&p.checkpoint).stage(S)?;
    let vocab = Vocab::load(&read_text(&p.vocab).stage(S)?).stage(S)?;
    let labels = load_label_space(&p.label_space).stage(S)?;
    let inputs: Vec<(String, String)> = match text {
        Some(t) => vec![("-".into(), t.to_string())],
        None => {
            require_inputs(&[("corpus", &p.corpus)]).stage(S)?;
            load_corpus(&p.corpus)
                .stage(S)?
                .into_iter()
                .map(|d| {
                    let t = d.training_text(cfg.with_fulltext);
                    (d.pmid, t)
                })
                .collect()
        }
    };
    let mut preds = Vec::with_capacity(inputs.len());
    for (pmid, t) in inputs {
        let found = predict(&params, &model_config, &labels, &vocab, &t, cfg.train.threshold, cfg.train.max_len)
            .stage(S)?;
        preds.push(Prediction {
            pmid,
            labels: found
                .into_iter()
                .map(|(id, probability)| PredictedLabel {
                    id,
                    surface: labels.labels()[id].surface.clone(),
                    probability,
                })
                .collect(),
        });
    }
    let summary = if text.is_some() {
        predictions_jsonl(&preds).trim_end().to_string()
    } else {
        write_bytes(&p.predictions(), predictions_jsonl(&preds).as_bytes()).stage(S)?;
        format!("{S}: {} documents -> {}", preds.len(), p.predictions().display())
    };
    Ok((summary, preds))
}

/// Size and seed of a generated workspace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n_docs: usize,
    pub n_labels: usize,
    pub mention_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_docs: 500,
            n_labels: 8,
            mention_rate: 0.3,
            seed: 42,
        }
    }
}

/// Desk-sized training settings for the synthetic corpus.
pub fn synthetic_config(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        seed,
        ..PipelineConfig::default()
    };
    cfg.annotate.roots = vec![synthetic::ROOT_ID.to_string()];
    cfg.train = TrainConfig {
        learning_rate: 1e-3,
        epochs: 10,
        batch_size: 4,
        init_std: 0.1,
        ..TrainConfig::default()
    };
    cfg.sync();
    cfg
}

/// Generates an ontology, vocabulary and corpus under `dir` and writes a
/// matching `config.toml`. Returns the config with paths resolved.
pub fn write_synthetic_workspace(dir: &Path, spec: SyntheticSpec) -> Result<PipelineConfig> {
    if !(1..=synthetic::technique_count()).contains(&spec.n_labels) {
        return Err(Error::Invalid(format!(
            "n_labels must be between 1 and {}",
            synthetic::technique_count()
        )));
    }
    if !(0.0..=1.0).contains(&spec.mention_rate) {
        return Err(Error::Invalid("mention_rate must lie in [0, 1]".into()));
    }
    let corpus = synthetic::generate(spec.n_docs, spec.n_labels, spec.mention_rate, spec.seed);
    let cfg = synthetic_config(spec.seed);
    write_bytes(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    let cfg = crate::config::load_config(&dir.join("config.toml"))?;
    write_bytes(&cfg.paths.ontology, corpus.obo.as_bytes())?;
    write_bytes(&cfg.paths.vocab, (corpus.vocab.join("\n") + "\n").as_bytes())?;
    store_corpus(&cfg.paths.corpus, &corpus.docs)?;
    Ok(cfg)
}

/// Result of [`run_pipeline`].
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub summaries: Vec<String>,
    pub report: MetricReport,
    pub curve: Vec<(usize, f64, f64)>,
}

/// extract-ontology, annotate, train and evaluate in sequence.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineRun, StageError> {
    let mut summaries = vec![stage_extract(cfg)?, stage_annotate(cfg)?, stage_train(cfg)?];
    let (eval, report) = stage_evaluate(cfg)?;
    summaries.push(eval);
    let curve = formats::parse_curve_csv(&cfg.paths.curve()).stage("train")?;
    Ok(PipelineRun {
        summaries,
        report,
        curve,
    })
}
