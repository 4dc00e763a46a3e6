//! PubMed efetch XML and BioC full-text parsing.

use std::collections::BTreeMap;

use methodtag_core::corpus::{Document, DocumentSource};
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed XML at byte {offset}: {message}")]
pub struct XmlError {
    pub offset: u64,
    pub message: String,
}

/// Flattened XML event with entities already resolved.
enum Node {
    Open { name: String, attrs: BTreeMap<String, String> },
    Close,
    Text(String),
}

struct Walker<'a> {
    reader: Reader<&'a [u8]>,
    pending_close: bool,
}

impl<'a> Walker<'a> {
    fn new(raw: &'a str) -> Self {
        let mut reader = Reader::from_str(raw);
        reader.config_mut().check_end_names = true;
        Walker {
            reader,
            pending_close: false,
        }
    }

    fn fail(&self, message: impl Into<String>) -> XmlError {
        XmlError {
            offset: self.reader.buffer_position(),
            message: message.into(),
        }
    }

    fn open(&self, e: &BytesStart<'_>) -> Result<Node, XmlError> {
        let name = String::from_utf8_lossy(e.local_name().as_ref()).into_owned();
        let mut attrs = BTreeMap::new();
        for attr in e.attributes() {
            let attr = attr.map_err(|err| self.fail(err.to_string()))?;
            let key = String::from_utf8_lossy(attr.key.local_name().as_ref()).into_owned();
            let value = attr.unescape_value().map_err(|err| self.fail(err.to_string()))?;
            attrs.insert(key, value.into_owned());
        }
        Ok(Node::Open { name, attrs })
    }

    fn next(&mut self) -> Result<Option<Node>, XmlError> {
        if self.pending_close {
            self.pending_close = false;
            return Ok(Some(Node::Close));
        }
        loop {
            let event = self.reader.read_event().map_err(|err| XmlError {
                offset: self.reader.error_position(),
                message: err.to_string(),
            })?;
            return Ok(Some(match event {
                Event::Start(e) => self.open(&e)?,
                Event::Empty(e) => {
                    self.pending_close = true;
                    self.open(&e)?
                }
                Event::End(_) => Node::Close,
                Event::Text(t) => Node::Text(t.decode().map_err(|err| self.fail(err.to_string()))?.into_owned()),
                Event::CData(t) => Node::Text(t.decode().map_err(|err| self.fail(err.to_string()))?.into_owned()),
                Event::GeneralRef(r) => {
                    if let Some(c) = r.resolve_char_ref().map_err(|err| self.fail(err.to_string()))? {
                        Node::Text(c.to_string())
                    } else {
                        let name = r.decode().map_err(|err| self.fail(err.to_string()))?;
                        match quick_xml::escape::resolve_predefined_entity(&name) {
                            Some(s) => Node::Text(s.to_string()),
                            None => return Err(self.fail(format!("unknown entity &{name};"))),
                        }
                    }
                }
                Event::Eof => return Ok(None),
                _ => continue,
            }));
        }
    }
}

/// Walks the whole document, calling `visit` with the element path (local
/// names, outermost first) and the attributes of each open element.
fn walk(
    raw: &str,
    mut visit: impl FnMut(Visit<'_>) -> Result<(), String>,
) -> Result<(), XmlError> {
    let mut walker = Walker::new(raw);
    let mut path: Vec<String> = Vec::new();
    let mut attrs: Vec<BTreeMap<String, String>> = Vec::new();
    while let Some(node) = walker.next()? {
        let result = match node {
            Node::Open { name, attrs: a } => {
                path.push(name);
                attrs.push(a);
                visit(Visit::Open {
                    path: &path,
                    attrs: attrs.last().expect("pushed"),
                })
            }
            Node::Close => {
                let r = visit(Visit::Close { path: &path });
                path.pop();
                attrs.pop();
                r
            }
            Node::Text(text) => visit(Visit::Text { path: &path, text: &text }),
        };
        result.map_err(|m| walker.fail(m))?;
    }
    if !path.is_empty() {
        return Err(walker.fail(format!("unclosed element <{}>", path.last().expect("nonempty"))));
    }
    Ok(())
}

enum Visit<'a> {
    Open {
        path: &'a [String],
        attrs: &'a BTreeMap<String, String>,
    },
    Close {
        path: &'a [String],
    },
    Text {
        path: &'a [String],
        text: &'a str,
    },
}

fn collapse(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn append(buf: &mut String, piece: &str) {
    if piece.trim().is_empty() {
        if !buf.is_empty() && !buf.ends_with(' ') {
            buf.push(' ');
        }
        return;
    }
    buf.push_str(piece);
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PubmedParse {
    pub docs: Vec<Document>,
    /// Articles skipped because they had no pmid.
    pub skipped_without_pmid: usize,
}

#[derive(Default)]
struct ArticleDraft {
    pmid: Option<String>,
    title: String,
    sections: Vec<String>,
}

fn under(path: &[String], ancestor: &str) -> bool {
    path.iter().any(|p| p == ancestor)
}

/// Parses an efetch `PubmedArticleSet`, one document per `PubmedArticle`.
pub fn parse_pubmed_xml(raw: &str) -> Result<PubmedParse, XmlError> {
    let mut out = PubmedParse::default();
    let mut draft: Option<ArticleDraft> = None;
    let mut pmid_buf = String::new();
    walk(raw, |v| {
        match v {
            Visit::Open { path, .. } => {
                let name = path.last().map(String::as_str);
                match name {
                    Some("PubmedArticle") => draft = Some(ArticleDraft::default()),
                    Some("AbstractText") => {
                        if let Some(d) = draft.as_mut() {
                            d.sections.push(String::new());
                        }
                    }
                    Some("PMID") => pmid_buf.clear(),
                    _ => {}
                }
            }
            Visit::Text { path, text } => {
                let Some(d) = draft.as_mut() else { return Ok(()) };
                let n = path.len();
                if path.last().is_some_and(|p| p == "PMID") && n >= 2 && path[n - 2] == "MedlineCitation" {
                    pmid_buf.push_str(text);
                } else if under(path, "AbstractText") {
                    if let Some(s) = d.sections.last_mut() {
                        append(s, text);
                    }
                } else if under(path, "ArticleTitle") {
                    append(&mut d.title, text);
                }
            }
            Visit::Close { path } => {
                let n = path.len();
                match path.last().map(String::as_str) {
                    Some("PMID") if n >= 2 && path[n - 2] == "MedlineCitation" => {
                        if let Some(d) = draft.as_mut() {
                            let id = pmid_buf.trim();
                            if d.pmid.is_none() && !id.is_empty() {
                                d.pmid = Some(id.to_string());
                            }
                        }
                    }
                    Some("PubmedArticle") => {
                        let d = draft.take().ok_or("</PubmedArticle> without an open article")?;
                        match d.pmid {
                            Some(pmid) => {
                                let sections: Vec<String> = d
                                    .sections
                                    .iter()
                                    .map(|s| collapse(s))
                                    .filter(|s| !s.is_empty())
                                    .collect();
                                out.docs.push(Document {
                                    pmid,
                                    title: collapse(&d.title),
                                    r#abstract: sections.join(" "),
                                    methods: None,
                                    results: None,
                                    source: DocumentSource::AbstractXml,
                                });
                            }
                            None => out.skipped_without_pmid += 1,
                        }
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    })?;
    Ok(out)
}

/// Methods and results text recovered from one BioC document.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FulltextPartial {
    pub pmid: String,
    pub methods: String,
    pub results: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SectionKind {
    Methods,
    Results,
}

const METHOD_ALIASES: &[&str] = &["methods", "method", "materials and methods", "materials", "methodology"];
const RESULT_ALIASES: &[&str] = &["results", "result", "results and discussion"];

/// Classifies a BioC `section_type` infon value.
pub fn classify_section(section_type: &str) -> Option<SectionKind> {
    let key = collapse(&section_type.to_lowercase().replace(['_', '|'], " "));
    if METHOD_ALIASES.contains(&key.as_str()) {
        Some(SectionKind::Methods)
    } else if RESULT_ALIASES.contains(&key.as_str()) {
        Some(SectionKind::Results)
    } else {
        None
    }
}

#[derive(Default)]
struct PassageDraft {
    infons: BTreeMap<String, String>,
    text: String,
}

/// One partial per BioC `document`; the pmid is the `article-id_pmid` infon
/// when present, otherwise the document id.
pub fn parse_bioc_fulltext(raw: &str) -> Result<Vec<FulltextPartial>, XmlError> {
    let mut out = Vec::new();
    let mut doc_id = String::new();
    let mut doc_pmid: Option<String> = None;
    let mut methods: Vec<String> = Vec::new();
    let mut results: Vec<String> = Vec::new();
    let mut passage: Option<PassageDraft> = None;
    let mut infon_key: Option<String> = None;
    let mut infon_val = String::new();
    walk(raw, |v| {
        match v {
            Visit::Open { path, attrs } => match path.last().map(String::as_str) {
                Some("document") => {
                    doc_id.clear();
                    doc_pmid = None;
                    methods.clear();
                    results.clear();
                }
                Some("passage") => passage = Some(PassageDraft::default()),
                Some("infon") => {
                    infon_key = attrs.get("key").cloned();
                    infon_val.clear();
                }
                _ => {}
            },
            Visit::Text { path, text } => {
                let n = path.len();
                match path.last().map(String::as_str) {
                    Some("id") if n >= 2 && path[n - 2] == "document" => doc_id.push_str(text),
                    Some("infon") => infon_val.push_str(text),
                    Some("text") if n >= 2 && path[n - 2] == "passage" => {
                        if let Some(p) = passage.as_mut() {
                            append(&mut p.text, text);
                        }
                    }
                    _ => {}
                }
            }
            Visit::Close { path } => match path.last().map(String::as_str) {
                Some("infon") => {
                    if let Some(key) = infon_key.take() {
                        let value = infon_val.trim().to_string();
                        if key == "article-id_pmid" && !value.is_empty() {
                            doc_pmid.get_or_insert(value.clone());
                        }
                        if let Some(p) = passage.as_mut() {
                            p.infons.insert(key, value);
                        }
                    }
                }
                Some("passage") => {
                    let p = passage.take().ok_or("</passage> without an open passage")?;
                    let text = collapse(&p.text);
                    if text.is_empty() {
                        return Ok(());
                    }
                    match p.infons.get("section_type").and_then(|s| classify_section(s)) {
                        Some(SectionKind::Methods) => methods.push(text),
                        Some(SectionKind::Results) => results.push(text),
                        None => {}
                    }
                }
                Some("document") => {
                    let pmid = doc_pmid.take().unwrap_or_else(|| doc_id.trim().to_string());
                    out.push(FulltextPartial {
                        pmid,
                        methods: methods.join(" "),
                        results: results.join(" "),
                    });
                }
                _ => {}
            },
        }
        Ok(())
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn article(pmid: Option<&str>, body: &str) -> String {
        let pmid = pmid.map(|p| format!("<PMID Version=\"1\">{p}</PMID>")).unwrap_or_default();
        format!(
            "<PubmedArticle><MedlineCitation>{pmid}<Article><ArticleTitle>T</ArticleTitle>{body}</Article></MedlineCitation></PubmedArticle>"
        )
    }

    fn set(articles: &[String]) -> String {
        format!("<?xml version=\"1.0\"?><PubmedArticleSet>{}</PubmedArticleSet>", articles.concat())
    }

    #[test]
    fn single_article() {
        let raw = set(&[article(Some("1"), "<Abstract><AbstractText>We used CT.</AbstractText></Abstract>")]);
        let p = parse_pubmed_xml(&raw).unwrap();
        assert_eq!(p.docs.len(), 1);
        assert_eq!(p.docs[0].pmid, "1");
        assert_eq!(p.docs[0].r#abstract, "We used CT.");
    }

    #[test]
    fn sections_joined_in_order() {
        let body = "<Abstract><AbstractText Label=\"A\">one</AbstractText><AbstractText>two <i>x</i>\n y</AbstractText><AbstractText>three</AbstractText></Abstract>";
        let p = parse_pubmed_xml(&set(&[article(Some("2"), body)])).unwrap();
        assert_eq!(p.docs[0].r#abstract, "one two x y three");
    }

    #[test]
    fn missing_abstract_and_missing_pmid() {
        let raw = set(&[article(Some("3"), ""), article(None, "<Abstract><AbstractText>x</AbstractText></Abstract>")]);
        let p = parse_pubmed_xml(&raw).unwrap();
        assert_eq!(p.docs.len(), 1);
        assert_eq!(p.docs[0].r#abstract, "");
        assert_eq!(p.skipped_without_pmid, 1);
    }

    #[test]
    fn nested_pmids_ignored_and_entities_resolved() {
        let body = "<Abstract><AbstractText>a &lt; b &amp; c &#945;</AbstractText></Abstract>";
        let raw = set(&[format!(
            "<PubmedArticle><MedlineCitation><PMID>7</PMID><Article><ArticleTitle>T</ArticleTitle>{body}</Article><CommentsCorrectionsList><CommentsCorrections><PMID>99</PMID></CommentsCorrections></CommentsCorrectionsList></MedlineCitation></PubmedArticle>"
        )]);
        let p = parse_pubmed_xml(&raw).unwrap();
        assert_eq!(p.docs[0].pmid, "7");
        assert_eq!(p.docs[0].r#abstract, "a < b & c α");
    }

    #[test]
    fn malformed_reports_offset() {
        let raw = "<PubmedArticleSet><PubmedArticle></MedlineCitation></PubmedArticleSet>";
        let err = parse_pubmed_xml(raw).unwrap_err();
        assert!(err.offset > 0 && err.offset <= raw.len() as u64, "{err}");
        let unclosed = "<PubmedArticleSet><PubmedArticle>";
        assert!(parse_pubmed_xml(unclosed).is_err());
    }

    fn bioc(passages: &[(&str, &str)]) -> String {
        let body: String = passages
            .iter()
            .map(|(kind, text)| {
                format!("<passage><infon key=\"section_type\">{kind}</infon><offset>0</offset><text>{text}</text></passage>")
            })
            .collect();
        format!("<collection><source>PMC</source><document><id>PMC1</id><passage><infon key=\"article-id_pmid\">42</infon><infon key=\"section_type\">TITLE</infon><text>t</text></passage>{body}</document></collection>")
    }

    #[test]
    fn bioc_sections() {
        let p = parse_bioc_fulltext(&bioc(&[("METHODS", "m one"), ("RESULTS", "r one"), ("INTRO", "i")])).unwrap();
        assert_eq!(
            p,
            vec![FulltextPartial {
                pmid: "42".into(),
                methods: "m one".into(),
                results: "r one".into()
            }]
        );
        let p = parse_bioc_fulltext(&bioc(&[("Results", "a"), ("results", "b"), ("Materials and Methods", "c")])).unwrap();
        assert_eq!((p[0].methods.as_str(), p[0].results.as_str()), ("c", "a b"));
        let p = parse_bioc_fulltext(&bioc(&[("INTRO", "a"), ("DISCUSS", "b")])).unwrap();
        assert_eq!((p[0].methods.as_str(), p[0].results.as_str()), ("", ""));
    }

    #[test]
    fn section_aliases() {
        assert_eq!(classify_section("materials_and_methods"), Some(SectionKind::Methods));
        assert_eq!(classify_section("  METHODS "), Some(SectionKind::Methods));
        assert_eq!(classify_section("RESULTS"), Some(SectionKind::Results));
        assert_eq!(classify_section("ABSTRACT"), None);
    }
}
