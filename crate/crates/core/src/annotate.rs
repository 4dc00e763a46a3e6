//! Dictionary annotation, annotation scoring and the binary label matrix.
//!
//! Scoring follows the recommender-style annotation score: a preferred-name
//! match is worth 10 and a synonym match 5, multi-word matches earn a further
//! 3, and the sum is scaled by the number of matched words.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::ontology::{normalize_surface, FormKind, LabelSpace, TermLexicon};

/// Default labeling floor: any single synonym match qualifies.
pub const DEFAULT_MIN_SCORE: u32 = 5;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnnotateError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub term_id: String,
    /// Filled in once the annotation is resolved against a label space.
    pub label_id: Option<usize>,
    pub form_kind: FormKind,
    /// Char offsets into the normalized text, end exclusive.
    pub span: (usize, usize),
    pub surface: String,
    pub annotated_words: usize,
}

pub fn annotation_type_score(a: &Annotation) -> u32 {
    match a.form_kind {
        FormKind::Pref => 10,
        FormKind::Syn => 5,
    }
}

pub fn multi_word_score(a: &Annotation) -> u32 {
    if a.annotated_words > 1 {
        3
    } else {
        0
    }
}

pub fn annotation_score2(a: &Annotation) -> u32 {
    (annotation_type_score(a) + multi_word_score(a)) * a.annotated_words as u32
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// True when `pos` does not split a run of word characters.
pub(crate) fn is_boundary(chars: &[char], pos: usize) -> bool {
    pos == 0 || pos >= chars.len() || !(is_word_char(chars[pos - 1]) && is_word_char(chars[pos]))
}

/// Greedy leftmost-longest dictionary scan over the normalized text.
///
/// Matches must start and end on word boundaries; once a match is taken the
/// scan resumes after it, so nested and overlapping shorter matches are
/// suppressed. Results are sorted by span start.
pub fn match_terms(text: &str, lexicon: &TermLexicon) -> Vec<Annotation> {
    let normalized = normalize_surface(text);
    let chars: Vec<char> = normalized.chars().collect();
    let max_len = lexicon.max_surface_chars();
    let mut out = Vec::new();
    let mut start = 0;
    let mut window = String::new();
    while start < chars.len() {
        if chars[start] == ' ' || !is_boundary(&chars, start) {
            start += 1;
            continue;
        }
        let longest = (start + max_len).min(chars.len());
        let mut found = None;
        for end in (start + 1..=longest).rev() {
            if !is_boundary(&chars, end) {
                continue;
            }
            window.clear();
            window.extend(&chars[start..end]);
            if let Some(entry) = lexicon.lookup(&window) {
                found = Some((end, entry));
                break;
            }
        }
        match found {
            Some((end, entry)) => {
                out.push(Annotation {
                    term_id: entry.term_id.clone(),
                    label_id: None,
                    form_kind: entry.kind,
                    span: (start, end),
                    surface: window.clone(),
                    annotated_words: window.split_whitespace().count(),
                });
                start = end;
            }
            None => start += 1,
        }
    }
    out
}

/// Resolves each annotation's label against `labels`.
pub fn assign_labels(annotations: &mut [Annotation], labels: &LabelSpace) {
    for a in annotations {
        a.label_id = labels.resolve(&a.surface, &a.term_id);
    }
}

/// Scans `text` and resolves labels in one go.
pub fn annotate_text(text: &str, lexicon: &TermLexicon, labels: &LabelSpace) -> Vec<Annotation> {
    let mut annotations = match_terms(text, lexicon);
    assign_labels(&mut annotations, labels);
    annotations
}

/// Labels whose best annotation reaches `min_score`.
pub fn labels_from_annotations(annotations: &[Annotation], min_score: u32) -> BTreeSet<usize> {
    annotations
        .iter()
        .filter(|a| annotation_score2(a) >= min_score)
        .filter_map(|a| a.label_id)
        .collect()
}

pub fn label_document(
    doc: &Document,
    lexicon: &TermLexicon,
    labels: &LabelSpace,
    min_score: u32,
    with_fulltext: bool,
) -> BTreeSet<usize> {
    let annotations = annotate_text(&doc.training_text(with_fulltext), lexicon, labels);
    labels_from_annotations(&annotations, min_score)
}

/// Sparse binary matrix: rows are articles, columns are labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMatrix {
    row_ids: Vec<String>,
    n_labels: usize,
    cells: BTreeSet<(usize, usize)>,
}

impl LabelMatrix {
    pub fn new(row_ids: Vec<String>, n_labels: usize) -> Self {
        LabelMatrix {
            row_ids,
            n_labels,
            cells: BTreeSet::new(),
        }
    }

    pub fn from_dense(row_ids: Vec<String>, rows: &[Vec<u8>]) -> Result<Self, AnnotateError> {
        if row_ids.len() != rows.len() {
            return Err(AnnotateError::InvalidInput(format!(
                "{} row ids for {} rows",
                row_ids.len(),
                rows.len()
            )));
        }
        let n_labels = rows.first().map_or(0, Vec::len);
        let mut m = LabelMatrix::new(row_ids, n_labels);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != n_labels {
                return Err(AnnotateError::InvalidInput(format!("row {r} is ragged")));
            }
            for (c, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => {
                        m.cells.insert((r, c));
                    }
                    _ => return Err(AnnotateError::InvalidInput(format!("cell ({r},{c}) is not binary"))),
                }
            }
        }
        Ok(m)
    }

    pub fn set(&mut self, row: usize, label: usize) -> Result<(), AnnotateError> {
        if row >= self.row_ids.len() || label >= self.n_labels {
            return Err(AnnotateError::InvalidInput(format!(
                "cell ({row},{label}) outside {}x{}",
                self.row_ids.len(),
                self.n_labels
            )));
        }
        self.cells.insert((row, label));
        Ok(())
    }

    pub fn get(&self, row: usize, label: usize) -> bool {
        self.cells.contains(&(row, label))
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cells.iter().copied()
    }

    pub fn nnz(&self) -> usize {
        self.cells.len()
    }

    pub fn row_labels(&self, row: usize) -> impl Iterator<Item = usize> + '_ {
        self.cells
            .range((row, 0)..(row + 1, 0))
            .map(|&(_, label)| label)
    }

    pub fn dense_row(&self, row: usize) -> Vec<u8> {
        let mut out = vec![0u8; self.n_labels];
        for label in self.row_labels(row) {
            out[label] = 1;
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        (0..self.n_rows()).map(|r| self.dense_row(r)).collect()
    }

    /// Keeps the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> LabelMatrix {
        let mut m = LabelMatrix::new(rows.iter().map(|&r| self.row_ids[r].clone()).collect(), self.n_labels);
        for (new_r, &r) in rows.iter().enumerate() {
            for label in self.row_labels(r) {
                m.cells.insert((new_r, label));
            }
        }
        m
    }

    pub fn row_index(&self) -> BTreeMap<&str, usize> {
        self.row_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }
}

/// Builds the matrix with one row per document, in input order.
pub fn build_label_matrix(
    docs: &[Document],
    label_sets: &[BTreeSet<usize>],
    labels: &LabelSpace,
) -> Result<LabelMatrix, AnnotateError> {
    if docs.len() != label_sets.len() {
        return Err(AnnotateError::InvalidInput(format!(
            "{} documents but {} label sets",
            docs.len(),
            label_sets.len()
        )));
    }
    let mut m = LabelMatrix::new(docs.iter().map(|d| d.pmid.clone()).collect(), labels.len());
    for (row, set) in label_sets.iter().enumerate() {
        for &label in set {
            m.set(row, label)?;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::{build_label_space, OntologyTerm};
    use alloc::string::ToString;

    fn ann(kind: FormKind, words: usize) -> Annotation {
        Annotation {
            term_id: "T".into(),
            label_id: None,
            form_kind: kind,
            span: (0, 1),
            surface: "x".into(),
            annotated_words: words,
        }
    }

    fn lexicon(entries: &[(&str, &str, &[&str])]) -> TermLexicon {
        TermLexicon::from_terms(
            entries
                .iter()
                .map(|(id, name, syns)| OntologyTerm {
                    id: id.to_string(),
                    preferred_name: name.to_string(),
                    synonyms: syns.iter().map(|s| s.to_string()).collect(),
                    parent_ids: Vec::new(),
                    obsolete: false,
                })
                .collect(),
        )
    }

    #[test]
    fn type_and_multiword_scores() {
        assert_eq!(annotation_type_score(&ann(FormKind::Pref, 1)), 10);
        assert_eq!(annotation_type_score(&ann(FormKind::Syn, 1)), 5);
        assert_eq!(multi_word_score(&ann(FormKind::Syn, 1)), 0);
        assert_eq!(multi_word_score(&ann(FormKind::Syn, 2)), 3);
        assert_eq!(multi_word_score(&ann(FormKind::Syn, 5)), 3);
    }

    #[test]
    fn score2_hand_values() {
        assert_eq!(annotation_score2(&ann(FormKind::Pref, 2)), 26);
        assert_eq!(annotation_score2(&ann(FormKind::Syn, 1)), 5);
        assert_eq!(annotation_score2(&ann(FormKind::Syn, 3)), 24);
    }

    #[test]
    fn no_match() {
        let lex = lexicon(&[("A", "tomography", &[])]);
        assert!(match_terms("nothing relevant here", &lex).is_empty());
        assert!(match_terms("", &lex).is_empty());
    }

    #[test]
    fn longest_match_wins() {
        let lex = lexicon(&[("A", "computed tomography", &[]), ("B", "tomography", &[])]);
        let m = match_terms("Computed Tomography scan", &lex);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].term_id, "A");
        assert_eq!(m[0].annotated_words, 2);
        assert_eq!(m[0].span, (0, 19));
    }

    #[test]
    fn two_synonym_matches() {
        let lex = lexicon(&[("A", "computed tomography", &["ct"]), ("B", "positron emission", &["pet"])]);
        let m = match_terms("ct and pet", &lex);
        assert_eq!(m.len(), 2);
        assert!(m.iter().all(|a| a.form_kind == FormKind::Syn && a.annotated_words == 1));
        assert_eq!(m[0].span, (0, 2));
        assert_eq!(m[1].span, (7, 10));
    }

    #[test]
    fn respects_word_boundaries() {
        let lex = lexicon(&[("A", "ct", &[])]);
        assert!(match_terms("the fact that", &lex).is_empty());
        assert_eq!(match_terms("(ct) imaging", &lex).len(), 1);
    }

    #[test]
    fn label_document_threshold() {
        let lex = lexicon(&[("A", "computed tomography", &["ct"])]);
        let labels = build_label_space(&lex, false).unwrap();
        let doc = Document::new("1", "", "we used computed tomography");
        assert_eq!(label_document(&doc, &lex, &labels, 5, false).len(), 1);
        let syn_doc = Document::new("2", "", "we used ct");
        assert_eq!(label_document(&syn_doc, &lex, &labels, 5, false).len(), 1);
        assert!(label_document(&syn_doc, &lex, &labels, 6, false).is_empty());
        let none = Document::new("3", "", "no method");
        assert!(label_document(&none, &lex, &labels, 0, false).is_empty());
    }

    #[test]
    fn synonym_mode_resolves_by_surface() {
        let lex = lexicon(&[("A", "computed tomography", &["ct"])]);
        let labels = build_label_space(&lex, true).unwrap();
        let a = annotate_text("ct", &lex, &labels);
        assert_eq!(a[0].label_id, labels.by_surface("ct"));
    }

    #[test]
    fn matrix_cells() {
        let lex = lexicon(&[("A", "a", &[]), ("B", "b", &[]), ("C", "c", &[])]);
        let labels = build_label_space(&lex, false).unwrap();
        let docs = [Document::new("p1", "", "x"), Document::new("p2", "", "y")];
        let sets = [BTreeSet::from([0]), BTreeSet::from([0, 2])];
        let m = build_label_matrix(&docs, &sets, &labels).unwrap();
        assert_eq!(m.cells().collect::<Vec<_>>(), vec![(0, 0), (1, 0), (1, 2)]);
        assert_eq!(m.dense_row(1), vec![1, 0, 1]);
    }

    #[test]
    fn empty_and_unlabeled_matrices() {
        let lex = lexicon(&[("A", "a", &[]), ("B", "b", &[])]);
        let labels = build_label_space(&lex, false).unwrap();
        let m = build_label_matrix(&[], &[], &labels).unwrap();
        assert_eq!(m.n_rows(), 0);
        let docs = [Document::new("p1", "", "x"), Document::new("p2", "", "y")];
        let m = build_label_matrix(&docs, &[BTreeSet::new(), BTreeSet::new()], &labels).unwrap();
        assert_eq!((m.n_rows(), m.n_labels(), m.nnz()), (2, 2, 0));
    }

    #[test]
    fn out_of_range_label_rejected() {
        let lex = lexicon(&[("A", "a", &[])]);
        let labels = build_label_space(&lex, false).unwrap();
        let docs = [Document::new("p1", "", "x")];
        assert!(build_label_matrix(&docs, &[BTreeSet::from([3])], &labels).is_err());
    }
}
