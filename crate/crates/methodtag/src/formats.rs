//! On-disk formats: corpus JSONL, lexicon and label-space JSON, label-matrix
//! CSV, annotation JSONL, dendrogram exports, training curve and metrics.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use methodtag_core::annotate::{annotation_score2, Annotation, LabelMatrix};
use methodtag_core::cluster::{export_dendrogram, Dendrogram, ExportFormat};
use methodtag_core::corpus::Document;
use methodtag_core::metrics::MetricReport;
use methodtag_core::ontology::{LabelSpace, OntologyTerm, TermLexicon};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes`, creating parent directories as needed.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn json_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("serializable record")
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let raw = read_text(path)?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(path, i + 1, e.to_string())))
        .collect()
}

pub fn corpus_to_jsonl(docs: &[Document]) -> String {
    docs.iter().map(|d| json_line(d) + "\n").collect()
}

pub fn store_corpus(path: &Path, docs: &[Document]) -> Result<()> {
    write_bytes(path, corpus_to_jsonl(docs).as_bytes())
}

pub fn load_corpus(path: &Path) -> Result<Vec<Document>> {
    let docs: Vec<Document> = read_jsonl(path)?;
    if let Some(i) = docs.iter().position(|d| d.pmid.is_empty()) {
        return Err(Error::Invalid(format!("{}: document {} has an empty pmid", path.display(), i + 1)));
    }
    Ok(docs)
}

#[derive(Serialize, Deserialize)]
struct LexiconFile {
    terms: Vec<OntologyTerm>,
}

pub fn lexicon_json(lexicon: &TermLexicon) -> String {
    let file = LexiconFile {
        terms: lexicon.terms().to_vec(),
    };
    serde_json::to_string_pretty(&file).expect("serializable lexicon") + "\n"
}

pub fn store_lexicon(path: &Path, lexicon: &TermLexicon) -> Result<()> {
    write_bytes(path, lexicon_json(lexicon).as_bytes())
}

pub fn load_lexicon(path: &Path) -> Result<TermLexicon> {
    let file: LexiconFile = serde_json::from_str(&read_text(path)?).map_err(|e| Error::format(path, e.line(), e.to_string()))?;
    Ok(TermLexicon::from_terms(file.terms))
}

pub fn label_space_json(labels: &LabelSpace) -> String {
    serde_json::to_string_pretty(labels).expect("serializable label space") + "\n"
}

pub fn store_label_space(path: &Path, labels: &LabelSpace) -> Result<()> {
    write_bytes(path, label_space_json(labels).as_bytes())
}

pub fn load_label_space(path: &Path) -> Result<LabelSpace> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::format(path, e.line(), e.to_string()))
}

/// `pmid,<surface>...` header, one 0/1 row per article.
pub fn label_matrix_csv(matrix: &LabelMatrix, labels: &LabelSpace) -> Result<String> {
    if matrix.n_labels() != labels.len() {
        return Err(Error::Invalid(format!(
            "label matrix has {} columns but the label space has {} labels",
            matrix.n_labels(),
            labels.len()
        )));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["pmid".to_string()];
    header.extend(labels.labels().iter().map(|l| l.surface.clone()));
    w.write_record(&header).expect("in-memory write");
    for (r, pmid) in matrix.row_ids().iter().enumerate() {
        let mut record = vec![pmid.clone()];
        record.extend(matrix.dense_row(r).iter().map(|v| v.to_string()));
        w.write_record(&record).expect("in-memory write");
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv"))
}

pub fn store_label_matrix(path: &Path, matrix: &LabelMatrix, labels: &LabelSpace) -> Result<()> {
    write_bytes(path, label_matrix_csv(matrix, labels)?.as_bytes())
}

/// Reads a label-matrix CSV; with `labels`, the header must list exactly its surfaces in id order.
pub fn load_label_matrix(path: &Path, labels: Option<&LabelSpace>) -> Result<LabelMatrix> {
    let raw = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(raw.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::format(path, 1, e.to_string()))?
        .clone();
    if header.get(0) != Some("pmid") {
        return Err(Error::format(path, 1, "first column must be `pmid`"));
    }
    let surfaces: Vec<&str> = header.iter().skip(1).collect();
    if let Some(space) = labels {
        let expected: Vec<&str> = space.labels().iter().map(|l| l.surface.as_str()).collect();
        if surfaces != expected {
            return Err(Error::format(path, 1, "header does not match the label space"));
        }
    }
    let mut row_ids = Vec::new();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::format(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let mut fields = record.iter();
        let pmid = fields.next().unwrap_or_default();
        if pmid.is_empty() {
            return Err(Error::format(path, line, "empty pmid"));
        }
        let cells: Vec<u8> = fields
            .map(|v| match v {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(Error::format(path, line, format!("cell {other:?} is not 0 or 1"))),
            })
            .collect::<Result<_>>()?;
        if cells.len() != surfaces.len() {
            return Err(Error::format(path, line, format!("{} cells for {} labels", cells.len(), surfaces.len())));
        }
        row_ids.push(pmid.to_string());
        rows.push(cells);
    }
    if rows.is_empty() {
        return Ok(LabelMatrix::new(row_ids, surfaces.len()));
    }
    Ok(LabelMatrix::from_dense(row_ids, &rows)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub pmid: String,
    #[serde(flatten)]
    pub annotation: Annotation,
    pub score: u32,
}

pub fn annotations_jsonl(per_doc: &[(String, Vec<Annotation>)]) -> String {
    let mut out = String::new();
    for (pmid, anns) in per_doc {
        for a in anns {
            out.push_str(&json_line(&AnnotationRecord {
                pmid: pmid.clone(),
                annotation: a.clone(),
                score: annotation_score2(a),
            }));
            out.push('\n');
        }
    }
    out
}

pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    read_jsonl(path)
}

/// Writes the linkage CSV, the Newick tree and a leaf-membership CSV.
pub fn store_dendrogram(dir: &Path, d: &Dendrogram, row_ids: &[String]) -> Result<()> {
    write_bytes(&dir.join("linkage.csv"), export_dendrogram(d, ExportFormat::LinkageCsv).as_bytes())?;
    write_bytes(
        &dir.join("dendrogram.nwk"),
        (export_dendrogram(d, ExportFormat::Newick) + "\n").as_bytes(),
    )?;
    let mut leaves = String::from("leaf,pmids\n");
    for (i, group) in d.leaves().iter().enumerate() {
        let pmids: Vec<&str> = group.members.iter().map(|&m| row_ids[m].as_str()).collect();
        leaves.push_str(&format!("{i},{}\n", pmids.join(";")));
    }
    write_bytes(&dir.join("leaves.csv"), leaves.as_bytes())
}

fn fixed4(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "null".into(),
    }
}

/// Metrics JSON with every score rendered to four decimals; undefined scores are `null`.
pub fn metrics_json(report: &MetricReport) -> String {
    let c = &report.counts;
    let flags: Vec<String> = report.flags.iter().map(|f| json_line(f)).collect();
    format!(
        "{{\n  \"accuracy\": {},\n  \"precision\": {},\n  \"recall\": {},\n  \"f1\": {},\n  \"hamming_loss\": {},\n  \"counts\": {{\"tp\": {}, \"fp\": {}, \"tn\": {}, \"fn\": {}}},\n  \"flags\": [{}]\n}}\n",
        fixed4(report.accuracy),
        fixed4(report.precision),
        fixed4(report.recall),
        fixed4(report.f1),
        fixed4(report.hamming_loss),
        c.tp,
        c.fp,
        c.tn,
        c.fn_,
        flags.join(", ")
    )
}

pub fn load_metrics(path: &Path) -> Result<MetricReport> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::format(path, e.line(), e.to_string()))
}

/// Parses a curve CSV back into `(epoch, train_loss, val_loss)` rows.
pub fn parse_curve_csv(path: &Path) -> Result<Vec<(usize, f64, f64)>> {
    let raw = read_text(path)?;
    let mut reader = csv::Reader::from_reader(raw.as_bytes());
    let header = reader.headers().map_err(|e| Error::format(path, 1, e.to_string()))?;
    if header != vec!["epoch", "train_loss", "val_loss"] {
        return Err(Error::format(path, 1, "expected header epoch,train_loss,val_loss"));
    }
    let mut out = Vec::new();
    for (i, record) in reader.deserialize().enumerate() {
        let row: (usize, f64, f64) = record.map_err(|e| Error::format(path, i + 2, e.to_string()))?;
        out.push(row);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub pmid: String,
    pub labels: Vec<PredictedLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedLabel {
    pub id: usize,
    pub surface: String,
    pub probability: f64,
}

pub fn predictions_jsonl(preds: &[Prediction]) -> String {
    preds.iter().map(|p| json_line(p) + "\n").collect()
}
