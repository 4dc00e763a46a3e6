//! Article records, corpus filtering and hallmark search-term expansion.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::ontology::normalize_surface;

/// Upper bound on results per retrieval request.
pub const MAX_RESULTS_CAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CorpusError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unknown hallmark `{0}`")]
    UnknownHallmark(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DocumentSource {
    #[default]
    AbstractXml,
    FulltextBioc,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Document {
    pub pmid: String,
    pub title: String,
    pub r#abstract: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub methods: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub results: Option<String>,
    #[serde(default)]
    pub source: DocumentSource,
}

impl Document {
    pub fn new(pmid: impl Into<String>, title: impl Into<String>, abstract_text: impl Into<String>) -> Self {
        Document {
            pmid: pmid.into(),
            title: title.into(),
            r#abstract: abstract_text.into(),
            ..Document::default()
        }
    }

    /// Text fed to annotation and training: the abstract, optionally followed
    /// by the methods and results sections.
    pub fn training_text(&self, with_fulltext: bool) -> String {
        let mut text = self.r#abstract.clone();
        if with_fulltext {
            for section in [&self.methods, &self.results].into_iter().flatten() {
                if !section.is_empty() {
                    if !text.is_empty() {
                        text.push(' ');
                    }
                    text.push_str(section);
                }
            }
        }
        text
    }

    /// Copies methods/results from a full-text partial, marking the source.
    pub fn merge_fulltext(&mut self, methods: String, results: String) {
        if methods.is_empty() && results.is_empty() {
            return;
        }
        self.methods = Some(methods);
        self.results = Some(results);
        self.source = DocumentSource::FulltextBioc;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchRequest {
    pub pmids: Vec<String>,
    pub max_results: usize,
}

impl FetchRequest {
    pub fn new(pmids: Vec<String>, max_results: usize) -> Result<Self, CorpusError> {
        let request = FetchRequest { pmids, max_results };
        request.validate()?;
        Ok(request)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.max_results > MAX_RESULTS_CAP {
            return Err(CorpusError::InvalidInput(format!(
                "max_results {} exceeds the cap of {MAX_RESULTS_CAP}",
                self.max_results
            )));
        }
        Ok(())
    }

    /// The pmids that will actually be requested, capped at `max_results`.
    pub fn effective_pmids(&self) -> &[String] {
        &self.pmids[..self.pmids.len().min(self.max_results)]
    }
}

/// Drops documents without an abstract and repeated pmids (first wins).
pub fn filter_corpus(docs: Vec<Document>) -> Vec<Document> {
    let mut seen = BTreeSet::new();
    docs.into_iter()
        .filter(|d| !d.r#abstract.trim().is_empty())
        .filter(|d| seen.insert(d.pmid.clone()))
        .collect()
}

/// Hallmark → representative search terms.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExpansionTable {
    entries: BTreeMap<String, (String, Vec<String>)>,
}

impl ExpansionTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// The hallmark table used for the methodology searches.
    pub fn builtin() -> Self {
        let mut table = Self::new();
        table.insert("Tomography", &["CT", "PET", "Computed tomography", "TDM"]);
        table.insert(
            "Imaging",
            &[
                "Microscopy imaging",
                "Diffraction experiment",
                "Optical super-resolution microscopy",
                "Photonic microscopy",
            ],
        );
        table.insert(
            "RNA immunoprecipitation",
            &["RIP", "PAR-CLIP", "CLIP", "CLIP-seq", "HITS-CLIP", "iCLIP"],
        );
        table.insert(
            "NMR",
            &[
                "Rotational Frame Nuclear Overhauser Effect Spectroscopy",
                "Nuclear magnetic resonance spectroscopy",
            ],
        );
        table.insert(
            "Neutron diffraction",
            &[
                "Neutron diffraction experiment",
                "Neutron microscopy",
                "Elastic neutron scattering",
            ],
        );
        table.insert(
            "X-ray diffraction",
            &["Crystallography", "X-ray crystallography", "X-ray microscopy"],
        );
        table
    }

    pub fn insert(&mut self, hallmark: &str, terms: &[&str]) {
        self.entries.insert(
            normalize_surface(hallmark),
            (
                hallmark.to_string(),
                terms.iter().map(|t| t.to_string()).collect(),
            ),
        );
    }

    pub fn hallmarks(&self) -> impl Iterator<Item = &str> {
        self.entries.values().map(|(name, _)| name.as_str())
    }
}

/// Looks up a hallmark (case- and whitespace-insensitive).
pub fn expand_search_terms(hallmark: &str, table: &ExpansionTable) -> Result<Vec<String>, CorpusError> {
    table
        .entries
        .get(&normalize_surface(hallmark))
        .map(|(_, terms)| terms.clone())
        .ok_or_else(|| CorpusError::UnknownHallmark(hallmark.to_string()))
}
