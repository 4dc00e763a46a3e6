mod oracle;

use methodtag_core::annotate::{annotation_score2, match_terms, Annotation};
use methodtag_core::corpus::filter_corpus;
use methodtag_core::ontology::{extract_subtrees, normalize_surface, parse_obo, write_obo};
use methodtag_core::tokenizer::{encode, normalize, wordpiece};
use methodtag_core::{Document, FormKind, OntologyTerm, TermLexicon, Vocab};
use proptest::prelude::*;

const FIXTURE_VOCAB: &str = "[PAD]\n[UNK]\n[CLS]\n[SEP]\nhpv\nm\n##rna\np16\n.\n##s\n";

#[test]
fn score_table_matches_hand_values() {
    for (pref, words, want) in oracle::SCORE_TABLE {
        let a = Annotation {
            term_id: "T:1".into(),
            label_id: None,
            form_kind: if pref { FormKind::Pref } else { FormKind::Syn },
            span: (0, 1),
            surface: "x".into(),
            annotated_words: words as usize,
        };
        assert_eq!(annotation_score2(&a), want, "{pref} {words}");
    }
}

fn lexicon() -> TermLexicon {
    let term = |id: &str, name: &str, syns: &[&str]| OntologyTerm {
        id: id.into(),
        preferred_name: name.into(),
        synonyms: syns.iter().map(|s| s.to_string()).collect(),
        parent_ids: vec![],
        obsolete: false,
    };
    TermLexicon::from_terms(vec![
        term("T:1", "western blot", &["immunoblot"]),
        term("T:2", "blot", &[]),
        term("T:3", "flow cytometry", &["facs", "flow"]),
        term("T:4", "mass spectrometry", &["ms"]),
        term("T:5", "tandem mass spectrometry", &[]),
    ])
}

/// Scans left to right; at each word start tries every lexicon surface and
/// keeps the longest that ends on a word boundary.
fn naive_match(text: &str, lex: &TermLexicon) -> Vec<(usize, usize, String)> {
    let norm: Vec<char> = normalize_surface(text).chars().collect();
    let word = |c: char| c.is_alphanumeric();
    let boundary = |p: usize| p == 0 || p >= norm.len() || !(word(norm[p - 1]) && word(norm[p]));
    let mut out = Vec::new();
    let mut i = 0;
    while i < norm.len() {
        if norm[i] == ' ' || !boundary(i) {
            i += 1;
            continue;
        }
        let mut best: Option<(usize, String)> = None;
        for surface in lex.surface_index().keys() {
            let s: Vec<char> = surface.chars().collect();
            let end = i + s.len();
            if end <= norm.len() && norm[i..end] == s[..] && boundary(end) && best.as_ref().is_none_or(|b| s.len() > b.0) {
                best = Some((s.len(), surface.clone()));
            }
        }
        match best {
            Some((len, surface)) => {
                out.push((i, i + len, surface));
                i += len;
            }
            None => i += 1,
        }
    }
    out
}

fn brute_wordpiece(word: &str, vocab: &Vocab) -> Option<Vec<u32>> {
    let mut rest = word;
    let mut first = true;
    let mut out = Vec::new();
    while !rest.is_empty() {
        let mut best: Option<(&str, u32)> = None;
        for (id, tok) in vocab.tokens().iter().enumerate() {
            if tok.starts_with('[') && tok.ends_with(']') {
                continue;
            }
            let body = match (first, tok.strip_prefix("##")) {
                (true, None) => tok.as_str(),
                (false, Some(b)) => b,
                _ => continue,
            };
            if !body.is_empty() && rest.starts_with(body) && best.is_none_or(|(b, _)| body.len() > b.len()) {
                best = Some((body, id as u32));
            }
        }
        let (body, id) = best?;
        out.push(id);
        rest = &rest[body.len()..];
        first = false;
    }
    Some(out)
}

fn text_from(words: &[&'static str]) -> impl Strategy<Value = String> {
    let words = words.to_vec();
    proptest::collection::vec(proptest::sample::select(words), 0..14).prop_map(|w| w.join(" "))
}

fn arb_term(i: usize) -> impl Strategy<Value = OntologyTerm> {
    let word = "[a-z]{1,8}( [a-z]{1,8}){0,2}";
    (word, proptest::collection::vec("[a-z\"\\\\ ]{1,10}", 0..3), proptest::collection::vec(0usize..8, 0..3)).prop_map(
        move |(name, syns, parents)| {
            let mut seen = std::collections::BTreeSet::new();
            let synonyms: Vec<String> = syns
                .into_iter()
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty() && seen.insert(normalize_surface(s)))
                .collect();
            let mut parent_ids = Vec::new();
            for p in parents {
                let id = format!("X:{p:03}");
                if p != i && !parent_ids.contains(&id) {
                    parent_ids.push(id);
                }
            }
            OntologyTerm { id: format!("X:{i:03}"), preferred_name: name, synonyms, parent_ids, obsolete: false }
        },
    )
}

fn arb_terms() -> impl Strategy<Value = Vec<OntologyTerm>> {
    (1usize..8).prop_flat_map(|n| (0..n).map(arb_term).collect::<Vec<_>>())
}

proptest! {
    #[test]
    fn matcher_equals_naive_scan(text in text_from(&[
        "western", "blot", "immunoblot", "flow", "cytometry", "facs", "mass", "spectrometry", "tandem",
        "ms", "msx", "blots", "the", "of", "-", ",", "(", ")", "western-blot", "FLOW", "  ",
    ])) {
        let lex = lexicon();
        let got: Vec<(usize, usize, String)> =
            match_terms(&text, &lex).into_iter().map(|a| (a.span.0, a.span.1, a.surface)).collect();
        prop_assert_eq!(got, naive_match(&text, &lex));
    }

    #[test]
    fn wordpiece_is_greedy_longest_prefix(word in "[hpvmrnas16.]{1,12}") {
        let vocab = Vocab::load(FIXTURE_VOCAB).unwrap();
        prop_assert_eq!(wordpiece(&word, &vocab), brute_wordpiece(&word, &vocab));
    }

    #[test]
    fn encodings_have_fixed_length_and_prefix_mask(text in "[a-z0-9 .,!?éü\\t\\n-]{0,80}", max_len in 2usize..40) {
        let vocab = Vocab::load(FIXTURE_VOCAB).unwrap();
        let enc = encode(&text, &vocab, max_len);
        prop_assert_eq!(enc.ids.len(), max_len);
        prop_assert_eq!(enc.attention_mask.len(), max_len);
        let active = enc.active_len();
        prop_assert!(active >= 2);
        prop_assert!(enc.attention_mask[..active].iter().all(|&m| m == 1));
        prop_assert!(enc.attention_mask[active..].iter().all(|&m| m == 0));
        prop_assert!(enc.ids[active..].iter().all(|&id| id == vocab.pad_id()));
        prop_assert_eq!(enc.ids[0], vocab.cls_id());
        prop_assert_eq!(enc.ids[active - 1], vocab.sep_id());
    }

    #[test]
    fn normalize_is_idempotent(text in "\\PC{0,60}") {
        let once = normalize(&text);
        prop_assert_eq!(normalize(&once), once.clone());
        prop_assert!(!once.contains("  "));
    }

    #[test]
    fn obo_round_trip(terms in arb_terms()) {
        let parsed = parse_obo(&write_obo(&terms)).unwrap();
        prop_assert_eq!(parsed, terms);
    }

    #[test]
    fn subtree_extraction_ignores_term_order(terms in arb_terms(), root in 0usize..8, seed in any::<u64>()) {
        let root_id = format!("X:{:03}", root % terms.len());
        let mut shuffled = terms.clone();
        let mut state = seed | 1;
        for i in (1..shuffled.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (state >> 33) as usize % (i + 1));
        }
        let a = extract_subtrees(&terms, &[root_id.as_str()]).unwrap();
        let b = extract_subtrees(&shuffled, &[root_id.as_str()]).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn filtering_is_idempotent(docs in proptest::collection::vec((0u8..6, "[a-z ]{0,6}"), 0..12)) {
        let docs: Vec<Document> = docs.into_iter().map(|(p, a)| Document::new(p.to_string(), "t", a)).collect();
        let once = filter_corpus(docs);
        prop_assert_eq!(filter_corpus(once.clone()), once.clone());
        prop_assert!(once.iter().all(|d| !d.r#abstract.trim().is_empty()));
    }
}
