//! OBO flat-file parsing, subtree extraction and label-space construction.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OntologyError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown root term `{0}`")]
    UnknownRoot(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// One non-obsolete `[Term]` stanza.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OntologyTerm {
    pub id: String,
    pub preferred_name: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
    #[serde(default, rename = "parents")]
    pub parent_ids: Vec<String>,
    #[serde(skip)]
    pub obsolete: bool,
}

/// Whether a surface form is a term's preferred name or one of its synonyms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FormKind {
    Pref,
    Syn,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SurfaceEntry {
    pub term_id: String,
    pub kind: FormKind,
}

/// Lowercases and collapses whitespace runs to a single space.
pub fn normalize_surface(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        for c in word.chars() {
            out.extend(c.to_lowercase());
        }
    }
    out
}

fn parse_err(line: usize, message: impl Into<String>) -> OntologyError {
    OntologyError::Parse {
        line,
        message: message.into(),
    }
}

/// Extracts the quoted text of a `synonym:` value, honouring `\"` escapes.
fn quoted_text(value: &str, line: usize) -> Result<String, OntologyError> {
    let rest = value
        .trim_start()
        .strip_prefix('"')
        .ok_or_else(|| parse_err(line, "synonym value must start with a quote"))?;
    let mut out = String::new();
    let mut chars = rest.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => match chars.next() {
                Some('n') => out.push('\n'),
                Some('t') => out.push('\t'),
                Some(other) => out.push(other),
                None => break,
            },
            '"' => return Ok(out),
            c => out.push(c),
        }
    }
    Err(parse_err(line, "unterminated synonym quote"))
}

/// Drops a trailing `! comment` and `{qualifiers}` from a tag value.
fn strip_trailing(value: &str) -> &str {
    let mut v = value;
    if let Some(i) = v.find(" !") {
        v = &v[..i];
    }
    if let Some(i) = v.find(" {") {
        v = &v[..i];
    }
    v.trim()
}

#[derive(Default)]
struct Stanza {
    start_line: usize,
    id: Option<String>,
    name: Option<String>,
    synonyms: Vec<String>,
    parents: Vec<String>,
    obsolete: bool,
}

impl Stanza {
    fn finish(self) -> Result<Option<OntologyTerm>, OntologyError> {
        if self.obsolete {
            return Ok(None);
        }
        let id = self
            .id
            .ok_or_else(|| parse_err(self.start_line, "term stanza missing `id`"))?;
        let preferred_name = self
            .name
            .ok_or_else(|| parse_err(self.start_line, format!("term `{id}` missing `name`")))?;
        let mut seen = BTreeSet::new();
        let synonyms = self
            .synonyms
            .into_iter()
            .filter(|s| seen.insert(normalize_surface(s)))
            .collect();
        Ok(Some(OntologyTerm {
            id,
            preferred_name,
            synonyms,
            parent_ids: self.parents,
            obsolete: false,
        }))
    }
}

/// Parses OBO text into its non-obsolete terms, in file order.
pub fn parse_obo(raw: &str) -> Result<Vec<OntologyTerm>, OntologyError> {
    let mut terms: Vec<OntologyTerm> = Vec::new();
    let mut ids: BTreeMap<String, usize> = BTreeMap::new();
    let mut current: Option<Stanza> = None;

    let mut flush = |stanza: Option<Stanza>, terms: &mut Vec<OntologyTerm>| -> Result<(), OntologyError> {
        if let Some(stanza) = stanza {
            let line = stanza.start_line;
            if let Some(term) = stanza.finish()? {
                if ids.insert(term.id.clone(), line).is_some() {
                    return Err(parse_err(line, format!("duplicate term id `{}`", term.id)));
                }
                terms.push(term);
            }
        }
        Ok(())
    };

    let mut in_term = false;
    for (idx, raw_line) in raw.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('!') {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            flush(current.take(), &mut terms)?;
            in_term = line == "[Term]";
            if in_term {
                current = Some(Stanza {
                    start_line: line_no,
                    ..Stanza::default()
                });
            }
            continue;
        }
        if !in_term {
            continue;
        }
        let Some(stanza) = current.as_mut() else {
            continue;
        };
        let Some((tag, value)) = line.split_once(':') else {
            return Err(parse_err(line_no, "expected `tag: value`"));
        };
        let value = value.trim();
        match tag.trim() {
            "id" => {
                let id = strip_trailing(value);
                if id.is_empty() {
                    return Err(parse_err(line_no, "empty id"));
                }
                stanza.id = Some(id.to_string());
            }
            "name" => {
                let name = value.trim();
                if name.is_empty() {
                    return Err(parse_err(line_no, "empty name"));
                }
                stanza.name = Some(name.to_string());
            }
            "synonym" => {
                let text = quoted_text(value, line_no)?;
                if !text.trim().is_empty() {
                    stanza.synonyms.push(text);
                }
            }
            "is_a" => {
                let parent = strip_trailing(value);
                if !parent.is_empty() {
                    stanza.parents.push(parent.to_string());
                }
            }
            "is_obsolete" => stanza.obsolete = strip_trailing(value) == "true",
            _ => {}
        }
    }
    flush(current.take(), &mut terms)?;
    Ok(terms)
}

/// Serializes terms back into OBO stanzas.
pub fn write_obo(terms: &[OntologyTerm]) -> String {
    let mut out = String::from("format-version: 1.2\n");
    for term in terms {
        let _ = write!(out, "\n[Term]\nid: {}\nname: {}\n", term.id, term.preferred_name);
        for syn in &term.synonyms {
            let escaped = syn.replace('\\', "\\\\").replace('"', "\\\"");
            let _ = writeln!(out, "synonym: \"{escaped}\" EXACT []");
        }
        for parent in &term.parent_ids {
            let _ = writeln!(out, "is_a: {parent}");
        }
        if term.obsolete {
            out.push_str("is_obsolete: true\n");
        }
    }
    out
}

/// Terms plus an index from normalized surface form to the owning term.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "LexiconRecord", into = "LexiconRecord")]
pub struct TermLexicon {
    terms: Vec<OntologyTerm>,
    surface_index: BTreeMap<String, SurfaceEntry>,
}

#[derive(Serialize, Deserialize)]
struct LexiconRecord {
    terms: Vec<OntologyTerm>,
}

impl From<LexiconRecord> for TermLexicon {
    fn from(r: LexiconRecord) -> Self {
        TermLexicon::from_terms(r.terms)
    }
}

impl From<TermLexicon> for LexiconRecord {
    fn from(l: TermLexicon) -> Self {
        LexiconRecord { terms: l.terms }
    }
}

impl TermLexicon {
    /// Builds the surface index. Terms are ordered by id; preferred names are
    /// indexed before any synonym so a PREF/SYN collision resolves to PREF.
    pub fn from_terms(mut terms: Vec<OntologyTerm>) -> Self {
        terms.sort_by(|a, b| a.id.cmp(&b.id));
        let mut surface_index = BTreeMap::new();
        for term in &terms {
            surface_index
                .entry(normalize_surface(&term.preferred_name))
                .or_insert_with(|| SurfaceEntry {
                    term_id: term.id.clone(),
                    kind: FormKind::Pref,
                });
        }
        for term in &terms {
            for syn in &term.synonyms {
                surface_index
                    .entry(normalize_surface(syn))
                    .or_insert_with(|| SurfaceEntry {
                        term_id: term.id.clone(),
                        kind: FormKind::Syn,
                    });
            }
        }
        surface_index.remove("");
        TermLexicon {
            terms,
            surface_index,
        }
    }

    pub fn terms(&self) -> &[OntologyTerm] {
        &self.terms
    }

    pub fn surface_index(&self) -> &BTreeMap<String, SurfaceEntry> {
        &self.surface_index
    }

    pub fn lookup(&self, normalized: &str) -> Option<&SurfaceEntry> {
        self.surface_index.get(normalized)
    }

    pub fn term(&self, id: &str) -> Option<&OntologyTerm> {
        self.terms
            .binary_search_by(|t| t.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.terms[i])
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Length in chars of the longest indexed surface.
    pub fn max_surface_chars(&self) -> usize {
        self.surface_index
            .keys()
            .map(|s| s.chars().count())
            .max()
            .unwrap_or(0)
    }
}

/// Collects every term reachable from `root_ids` through child links
/// (the inverse of `is_a`), roots included.
pub fn extract_subtrees(
    terms: &[OntologyTerm],
    root_ids: &[&str],
) -> Result<TermLexicon, OntologyError> {
    let by_id: BTreeMap<&str, &OntologyTerm> = terms.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut children: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for term in terms {
        for parent in &term.parent_ids {
            children.entry(parent.as_str()).or_default().push(term.id.as_str());
        }
    }

    let mut seen: BTreeSet<&str> = BTreeSet::new();
    let mut queue: VecDeque<&str> = VecDeque::new();
    for &root in root_ids {
        if !by_id.contains_key(root) {
            return Err(OntologyError::UnknownRoot(root.to_string()));
        }
        if seen.insert(root) {
            queue.push_back(root);
        }
    }
    while let Some(id) = queue.pop_front() {
        for &child in children.get(id).map(Vec::as_slice).unwrap_or(&[]) {
            if seen.insert(child) {
                queue.push_back(child);
            }
        }
    }

    let selected = seen.iter().map(|id| by_id[id].clone()).collect();
    Ok(TermLexicon::from_terms(selected))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub id: usize,
    pub surface: String,
    pub term_id: String,
}

/// Ordered label inventory; `labels[i].id == i` and surfaces are sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LabelSpaceRecord", into = "LabelSpaceRecord")]
pub struct LabelSpace {
    labels: Vec<Label>,
}

#[derive(Serialize, Deserialize)]
struct LabelSpaceRecord {
    labels: Vec<Label>,
}

impl TryFrom<LabelSpaceRecord> for LabelSpace {
    type Error = OntologyError;

    fn try_from(r: LabelSpaceRecord) -> Result<Self, Self::Error> {
        LabelSpace::from_labels(r.labels)
    }
}

impl From<LabelSpace> for LabelSpaceRecord {
    fn from(s: LabelSpace) -> Self {
        LabelSpaceRecord { labels: s.labels }
    }
}

impl LabelSpace {
    pub fn from_labels(labels: Vec<Label>) -> Result<Self, OntologyError> {
        for (i, label) in labels.iter().enumerate() {
            if label.id != i {
                return Err(OntologyError::InvalidInput(format!(
                    "label `{}` has id {} at position {i}",
                    label.surface, label.id
                )));
            }
            if i > 0 && labels[i - 1].surface >= label.surface {
                return Err(OntologyError::InvalidInput(format!(
                    "label surfaces not strictly sorted at `{}`",
                    label.surface
                )));
            }
        }
        Ok(LabelSpace { labels })
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn by_surface(&self, surface: &str) -> Option<usize> {
        self.labels
            .binary_search_by(|l| l.surface.as_str().cmp(surface))
            .ok()
    }

    /// Resolves a matched surface to its label: the surface itself when it
    /// is a label, otherwise the first label owned by the same term.
    pub fn resolve(&self, surface: &str, term_id: &str) -> Option<usize> {
        self.by_surface(surface)
            .or_else(|| self.labels.iter().position(|l| l.term_id == term_id))
    }
}

/// One label per term (preferred name) or, with `include_synonyms`, one per
/// distinct indexed surface form.
pub fn build_label_space(
    lexicon: &TermLexicon,
    include_synonyms: bool,
) -> Result<LabelSpace, OntologyError> {
    if lexicon.is_empty() {
        return Err(OntologyError::InvalidInput("empty lexicon".into()));
    }
    let mut by_surface: BTreeMap<String, String> = BTreeMap::new();
    if include_synonyms {
        for (surface, entry) in lexicon.surface_index() {
            by_surface.insert(surface.clone(), entry.term_id.clone());
        }
    } else {
        for term in lexicon.terms() {
            by_surface
                .entry(normalize_surface(&term.preferred_name))
                .or_insert_with(|| term.id.clone());
        }
    }
    let labels = by_surface
        .into_iter()
        .enumerate()
        .map(|(id, (surface, term_id))| Label {
            id,
            surface,
            term_id,
        })
        .collect();
    Ok(LabelSpace { labels })
}
