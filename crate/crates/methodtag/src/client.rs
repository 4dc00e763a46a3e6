//! Article retrieval: an offline fixture-directory client, a rate-limited
//! live E-utilities/BioC client, and the chunked batch fetch on top of both.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use methodtag_core::corpus::{Document, FetchRequest};

use crate::xml::{parse_bioc_fulltext, parse_pubmed_xml, FulltextPartial, XmlError};

pub const CONTACT_ENV: &str = "CONTACT_EMAIL";
pub const DEFAULT_CHUNK_SIZE: usize = 200;
pub const DEFAULT_REQUESTS_PER_SECOND: f64 = 3.0;
pub const DEFAULT_RETRIES: usize = 3;

const EFETCH_URL: &str = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils/efetch.fcgi";
const BIOC_URL: &str = "https://www.ncbi.nlm.nih.gov/research/bionlp/RESTful/pmcoa.cgi/BioC_xml";

#[derive(Debug, thiserror::Error)]
pub enum FetchError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{CONTACT_ENV} must be set to use the live client")]
    MissingContact,
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{what}: {source}")]
    Xml {
        what: String,
        #[source]
        source: XmlError,
    },
}

impl FetchError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, FetchError::Transport { .. })
    }
}

pub trait RetrievalClient {
    /// Abstract records for one chunk; missing pmids are simply absent.
    fn fetch_abstracts(&mut self, pmids: &[String]) -> Result<AbstractChunk, FetchError>;

    /// Methods/results for one article, `None` when no full text exists.
    fn fetch_fulltext(&mut self, pmid: &str) -> Result<Option<FulltextPartial>, FetchError>;
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AbstractChunk {
    pub docs: Vec<Document>,
    pub skipped_without_pmid: usize,
}

/// Reads `<pmid>.xml` (efetch XML) and optional `<pmid>.bioc.xml` files.
#[derive(Debug, Clone)]
pub struct FixtureClient {
    dir: PathBuf,
}

impl FixtureClient {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, FetchError> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(FetchError::Io {
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "fixture directory not found"),
                path: dir,
            });
        }
        Ok(FixtureClient { dir })
    }

    fn read_optional(&self, name: &str) -> Result<Option<String>, FetchError> {
        let path = self.dir.join(name);
        match std::fs::read_to_string(&path) {
            Ok(s) => Ok(Some(s)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(FetchError::Io { path, source }),
        }
    }
}

fn check_pmid(pmid: &str) -> Result<(), FetchError> {
    if pmid.is_empty() || !pmid.chars().all(|c| c.is_ascii_alphanumeric()) {
        return Err(FetchError::InvalidInput(format!("malformed pmid {pmid:?}")));
    }
    Ok(())
}

impl RetrievalClient for FixtureClient {
    fn fetch_abstracts(&mut self, pmids: &[String]) -> Result<AbstractChunk, FetchError> {
        let mut chunk = AbstractChunk::default();
        for pmid in pmids {
            check_pmid(pmid)?;
            let name = format!("{pmid}.xml");
            if let Some(raw) = self.read_optional(&name)? {
                let parsed = parse_pubmed_xml(&raw).map_err(|source| FetchError::Xml { what: name, source })?;
                chunk.docs.extend(parsed.docs);
                chunk.skipped_without_pmid += parsed.skipped_without_pmid;
            }
        }
        Ok(chunk)
    }

    fn fetch_fulltext(&mut self, pmid: &str) -> Result<Option<FulltextPartial>, FetchError> {
        check_pmid(pmid)?;
        let name = format!("{pmid}.bioc.xml");
        let Some(raw) = self.read_optional(&name)? else {
            return Ok(None);
        };
        let partials = parse_bioc_fulltext(&raw).map_err(|source| FetchError::Xml { what: name, source })?;
        Ok(partials.into_iter().next().map(|p| FulltextPartial {
            pmid: pmid.to_string(),
            ..p
        }))
    }
}

/// Spaces consecutive requests at least `1 / rate` seconds apart.
#[derive(Debug, Clone)]
pub struct RateLimiter {
    interval: Duration,
    last: Option<Instant>,
}

impl RateLimiter {
    pub fn per_second(rate: f64) -> Self {
        RateLimiter {
            interval: Duration::from_secs_f64(1.0 / rate),
            last: None,
        }
    }

    /// How long the next request must wait, measured at `now`.
    pub fn delay_at(&self, now: Instant) -> Duration {
        match self.last {
            Some(last) => (last + self.interval).saturating_duration_since(now),
            None => Duration::ZERO,
        }
    }

    pub fn wait(&mut self) {
        let delay = self.delay_at(Instant::now());
        if !delay.is_zero() {
            thread::sleep(delay);
        }
        self.last = Some(Instant::now());
    }
}

/// NCBI efetch for abstracts and the PMC BioC service for full text.
pub struct LiveClient {
    agent: ureq::Agent,
    email: String,
    limiter: RateLimiter,
    retries: usize,
}

impl LiveClient {
    /// Reads the contact address from `CONTACT_EMAIL`.
    pub fn from_env(requests_per_second: f64, retries: usize) -> Result<Self, FetchError> {
        let email = std::env::var(CONTACT_ENV).map_err(|_| FetchError::MissingContact)?;
        Self::new(email, requests_per_second, retries)
    }

    pub fn new(email: String, requests_per_second: f64, retries: usize) -> Result<Self, FetchError> {
        if email.trim().is_empty() {
            return Err(FetchError::MissingContact);
        }
        if !(requests_per_second > 0.0 && requests_per_second <= DEFAULT_REQUESTS_PER_SECOND) {
            return Err(FetchError::InvalidInput(format!(
                "requests_per_second {requests_per_second} outside (0, {DEFAULT_REQUESTS_PER_SECOND}]"
            )));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(LiveClient {
            agent,
            email,
            limiter: RateLimiter::per_second(requests_per_second),
            retries: retries.max(1),
        })
    }

    /// GET with bounded retries; `Ok(None)` on 404.
    fn get(&mut self, url: &str, query: &[(&str, &str)]) -> Result<Option<String>, FetchError> {
        let mut last = String::new();
        for attempt in 0..self.retries {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(500 << attempt));
            }
            self.limiter.wait();
            let mut request = self.agent.get(url);
            for (k, v) in query {
                request = request.query(*k, *v);
            }
            match request.call() {
                Ok(mut response) => {
                    let status = response.status().as_u16();
                    if status == 404 {
                        return Ok(None);
                    }
                    if status == 429 || status >= 500 {
                        last = format!("HTTP {status} from {url}");
                        continue;
                    }
                    if status >= 400 {
                        return Err(FetchError::Transport {
                            attempts: attempt + 1,
                            message: format!("HTTP {status} from {url}"),
                        });
                    }
                    match response.body_mut().read_to_string() {
                        Ok(body) => return Ok(Some(body)),
                        Err(e) => last = e.to_string(),
                    }
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(FetchError::Transport {
            attempts: self.retries,
            message: last,
        })
    }
}

impl RetrievalClient for LiveClient {
    fn fetch_abstracts(&mut self, pmids: &[String]) -> Result<AbstractChunk, FetchError> {
        if pmids.is_empty() {
            return Ok(AbstractChunk::default());
        }
        for pmid in pmids {
            check_pmid(pmid)?;
        }
        let ids = pmids.join(",");
        let email = self.email.clone();
        let query = [
            ("db", "pubmed"),
            ("retmode", "xml"),
            ("id", ids.as_str()),
            ("tool", "methodtag"),
            ("email", email.as_str()),
        ];
        let Some(body) = self.get(EFETCH_URL, &query)? else {
            return Ok(AbstractChunk::default());
        };
        let parsed = parse_pubmed_xml(&body).map_err(|source| FetchError::Xml {
            what: "efetch response".into(),
            source,
        })?;
        Ok(AbstractChunk {
            docs: parsed.docs,
            skipped_without_pmid: parsed.skipped_without_pmid,
        })
    }

    fn fetch_fulltext(&mut self, pmid: &str) -> Result<Option<FulltextPartial>, FetchError> {
        check_pmid(pmid)?;
        let url = format!("{BIOC_URL}/{pmid}/unicode");
        let Some(body) = self.get(&url, &[])? else {
            return Ok(None);
        };
        let partials = parse_bioc_fulltext(&body).map_err(|source| FetchError::Xml {
            what: format!("BioC response for {pmid}"),
            source,
        })?;
        Ok(partials.into_iter().next().map(|p| FulltextPartial {
            pmid: pmid.to_string(),
            ..p
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FetchOptions {
    pub chunk_size: usize,
    pub with_fulltext: bool,
}

impl Default for FetchOptions {
    fn default() -> Self {
        FetchOptions {
            chunk_size: DEFAULT_CHUNK_SIZE,
            with_fulltext: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FetchOutcome {
    /// In request order.
    pub docs: Vec<Document>,
    /// Requested pmids that returned no record.
    pub missing: Vec<String>,
    pub skipped_without_pmid: usize,
}

/// Fetches the request's pmids chunk by chunk and returns the documents in
/// request order, optionally merged with their full-text sections.
pub fn fetch_batch(
    request: &FetchRequest,
    client: &mut dyn RetrievalClient,
    options: FetchOptions,
) -> Result<FetchOutcome, FetchError> {
    request
        .validate()
        .map_err(|e| FetchError::InvalidInput(e.to_string()))?;
    if options.chunk_size == 0 {
        return Err(FetchError::InvalidInput("chunk_size must be >= 1".into()));
    }
    let wanted = request.effective_pmids();
    let mut by_pmid: BTreeMap<String, Document> = BTreeMap::new();
    let mut outcome = FetchOutcome::default();
    for chunk in wanted.chunks(options.chunk_size) {
        let got = client.fetch_abstracts(chunk)?;
        outcome.skipped_without_pmid += got.skipped_without_pmid;
        for doc in got.docs {
            by_pmid.entry(doc.pmid.clone()).or_insert(doc);
        }
    }
    for pmid in wanted {
        match by_pmid.remove(pmid) {
            Some(mut doc) => {
                if options.with_fulltext {
                    if let Some(p) = client.fetch_fulltext(pmid)? {
                        doc.merge_fulltext(p.methods, p.results);
                    }
                }
                outcome.docs.push(doc);
            }
            None => outcome.missing.push(pmid.clone()),
        }
    }
    Ok(outcome)
}

/// Reads one pmid per line, ignoring blank lines and `#` comments.
pub fn read_pmid_list(path: &Path) -> Result<Vec<String>, FetchError> {
    let raw = std::fs::read_to_string(path).map_err(|source| FetchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(raw
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}
