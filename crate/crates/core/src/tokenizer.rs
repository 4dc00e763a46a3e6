//! Uncased WordPiece tokenization with fixed-length padding.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

/// Default sequence length.
pub const DEFAULT_MAX_LEN: usize = 512;

/// Words longer than this many chars become `[UNK]` without a lookup.
pub const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TokenizerError {
    #[error("vocab line {line}: {message}")]
    VocabLine { line: usize, message: String },
    #[error("vocab config: {0}")]
    Config(String),
    #[error("unknown token id {0}")]
    UnknownId(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    token_to_id: BTreeMap<String, u32>,
    pad: u32,
    unk: u32,
    cls: u32,
    sep: u32,
}

impl Vocab {
    /// One token per line; a token's id is its 0-based line index.
    pub fn load(raw: &str) -> Result<Self, TokenizerError> {
        let mut tokens = Vec::new();
        let mut token_to_id = BTreeMap::new();
        for (idx, line) in raw.lines().enumerate() {
            let token = line.trim_end_matches('\r');
            if token.is_empty() {
                return Err(TokenizerError::VocabLine {
                    line: idx + 1,
                    message: "empty token".into(),
                });
            }
            if token_to_id.insert(token.to_string(), idx as u32).is_some() {
                return Err(TokenizerError::VocabLine {
                    line: idx + 1,
                    message: format!("duplicate token `{token}`"),
                });
            }
            tokens.push(token.to_string());
        }
        Self::from_tokens(tokens, token_to_id)
    }

    fn from_tokens(tokens: Vec<String>, token_to_id: BTreeMap<String, u32>) -> Result<Self, TokenizerError> {
        let special = |name: &str| {
            token_to_id
                .get(name)
                .copied()
                .ok_or_else(|| TokenizerError::Config(format!("missing special token {name}")))
        };
        let pad = special(PAD)?;
        if pad != 0 {
            return Err(TokenizerError::Config(format!("{PAD} must have id 0, found {pad}")));
        }
        Ok(Vocab {
            pad,
            unk: special(UNK)?,
            cls: special(CLS)?,
            sep: special(SEP)?,
            tokens,
            token_to_id,
        })
    }

    /// Specials first, then `words` in order, skipping repeats.
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Result<Self, TokenizerError> {
        let mut raw = String::new();
        let mut seen = BTreeMap::new();
        for w in [PAD, UNK, CLS, SEP].into_iter().chain(words) {
            if seen.insert(w, ()).is_none() {
                raw.push_str(w);
                raw.push('\n');
            }
        }
        Self::load(&raw)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn pad_id(&self) -> u32 {
        self.pad
    }

    pub fn unk_id(&self) -> u32 {
        self.unk
    }

    pub fn cls_id(&self) -> u32 {
        self.cls
    }

    pub fn sep_id(&self) -> u32 {
        self.sep
    }

    pub fn is_special(&self, id: u32) -> bool {
        id == self.pad || id == self.unk || id == self.cls || id == self.sep
    }

    /// Serializes back to the one-token-per-line format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c,
            '\u{00A1}' | '\u{00A7}' | '\u{00AB}' | '\u{00B6}' | '\u{00B7}' | '\u{00BB}' | '\u{00BF}'
            | '\u{2010}'..='\u{2027}'
            | '\u{2030}'..='\u{205E}'
            | '\u{3001}'..='\u{3003}')
}

/// Lowercases, strips accents and control characters, collapses whitespace
/// and splits punctuation into standalone tokens separated by single spaces.
pub fn normalize(text: &str) -> String {
    let mut spaced = String::with_capacity(text.len() + 8);
    for c in text.chars() {
        if c.is_whitespace() {
            spaced.push(' ');
        } else if c == '\u{0}' || c == '\u{FFFD}' || c.is_control() {
            continue;
        } else {
            for lc in c.to_lowercase() {
                spaced.push(lc);
            }
        }
    }
    let mut out = String::with_capacity(spaced.len());
    let mut pending_space = false;
    for c in spaced.nfd().filter(|&c| !is_combining_mark(c)) {
        if c == ' ' {
            pending_space = true;
            continue;
        }
        let punct = is_punctuation(c);
        if !out.is_empty() && (pending_space || punct || out.ends_with(is_punctuation)) {
            out.push(' ');
        }
        pending_space = false;
        out.push(c);
    }
    out
}

/// Greedy longest-prefix WordPiece split of one normalized word.
/// Returns `None` when some remainder has no in-vocab piece.
pub fn wordpiece(word: &str, vocab: &Vocab) -> Option<Vec<u32>> {
    let chars: Vec<char> = word.chars().collect();
    if chars.len() > MAX_WORD_CHARS {
        return None;
    }
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut candidate = String::new();
    while start < chars.len() {
        let mut found = None;
        for end in (start + 1..=chars.len()).rev() {
            candidate.clear();
            if start > 0 {
                candidate.push_str("##");
            }
            candidate.extend(&chars[start..end]);
            if let Some(id) = vocab.id(&candidate) {
                found = Some((end, id));
                break;
            }
        }
        let (end, id) = found?;
        pieces.push(id);
        start = end;
    }
    Some(pieces)
}

/// Token ids of `text` without specials or padding.
pub fn tokenize(text: &str, vocab: &Vocab) -> Vec<u32> {
    let mut ids = Vec::new();
    for word in normalize(text).split(' ').filter(|w| !w.is_empty()) {
        match wordpiece(word, vocab) {
            Some(pieces) => ids.extend(pieces),
            None => ids.push(vocab.unk_id()),
        }
    }
    ids
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub truncated: bool,
}

impl Encoding {
    /// Number of unpadded positions.
    pub fn active_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }
}

/// `[CLS] tokens [SEP]`, head-truncated to `max_len` and padded with `[PAD]`.
pub fn encode(text: &str, vocab: &Vocab, max_len: usize) -> Encoding {
    assert!(max_len >= 2, "max_len must leave room for [CLS] and [SEP]");
    let mut body = tokenize(text, vocab);
    let truncated = body.len() > max_len - 2;
    body.truncate(max_len - 2);

    let mut ids = Vec::with_capacity(max_len);
    ids.push(vocab.cls_id());
    ids.extend(body);
    ids.push(vocab.sep_id());
    let active = ids.len();
    ids.resize(max_len, vocab.pad_id());
    let mut attention_mask = vec![1u8; active];
    attention_mask.resize(max_len, 0);
    Encoding {
        ids,
        attention_mask,
        truncated,
    }
}

/// Drops specials and fuses `##` continuations onto the previous piece.
pub fn decode(ids: &[u32], vocab: &Vocab) -> Result<String, TokenizerError> {
    let mut out = String::new();
    for &id in ids {
        let token = vocab.token(id).ok_or(TokenizerError::UnknownId(id))?;
        if vocab.is_special(id) {
            continue;
        }
        match token.strip_prefix("##") {
            Some(cont) if !out.is_empty() => out.push_str(cont),
            _ => {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(token);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "[PAD]\n[UNK]\n[CLS]\n[SEP]\nhpv\nm\n##rna\np16\n.\n##s\n";

    fn fixture() -> Vocab {
        Vocab::load(FIXTURE).unwrap()
    }

    #[test]
    fn specials_only_vocab() {
        assert_eq!(Vocab::load("[PAD]\n[UNK]\n[CLS]\n[SEP]\n").unwrap().len(), 4);
    }

    #[test]
    fn fixture_continuation_id() {
        let v = fixture();
        assert_eq!(v.len(), 10);
        assert_eq!(v.id("##rna"), Some(6));
    }

    #[test]
    fn duplicate_names_later_line() {
        let raw = "[PAD]\n[UNK]\nx\n[CLS]\n[SEP]\ny\nx\n";
        assert_eq!(
            Vocab::load(raw),
            Err(TokenizerError::VocabLine {
                line: 7,
                message: "duplicate token `x`".into()
            })
        );
    }

    #[test]
    fn missing_special() {
        assert!(matches!(Vocab::load("[PAD]\n[UNK]\n[CLS]\n"), Err(TokenizerError::Config(_))));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize("HPV mRNA"), "hpv mrna");
        assert_eq!(normalize("p16."), "p16 .");
        assert_eq!(normalize(""), "");
        assert_eq!(normalize("  Café\t(PET)\u{7}"), "cafe ( pet )");
    }

    #[test]
    fn empty_text_encoding() {
        let v = fixture();
        let e = encode("", &v, 8);
        assert_eq!(e.ids, vec![2, 3, 0, 0, 0, 0, 0, 0]);
        assert_eq!(e.attention_mask.iter().map(|&m| m as u32).sum::<u32>(), 2);
        assert!(!e.truncated);
    }

    #[test]
    fn unknown_word() {
        let e = encode("zebra", &fixture(), 5);
        assert_eq!(e.ids, vec![2, 1, 3, 0, 0]);
    }

    #[test]
    fn wordpiece_continuations() {
        let e = encode("hpv mrna", &fixture(), 8);
        assert_eq!(e.ids, vec![2, 4, 5, 6, 3, 0, 0, 0]);
        assert_eq!(e.attention_mask, vec![1, 1, 1, 1, 1, 0, 0, 0]);
    }

    #[test]
    fn truncation_keeps_sep() {
        let e = encode("hpv hpv hpv hpv", &fixture(), 4);
        assert_eq!(e.ids, vec![2, 4, 4, 3]);
        assert!(e.truncated);
    }

    #[test]
    fn decode_examples() {
        let v = fixture();
        assert_eq!(decode(&encode("hpv", &v, 6).ids, &v).unwrap(), "hpv");
        assert_eq!(decode(&[2, 5, 6, 3], &v).unwrap(), "mrna");
        assert_eq!(decode(&[2, 3, 0, 0], &v).unwrap(), "");
        assert_eq!(decode(&[99], &v), Err(TokenizerError::UnknownId(99)));
    }
}
