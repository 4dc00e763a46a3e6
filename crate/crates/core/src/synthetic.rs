//! Seeded synthetic corpus: a small technique ontology (one root technique
//! with the others as children) and documents whose labels are exactly the
//! techniques they mention.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::corpus::Document;
use crate::seed;

/// Root of the technique subtree in the generated ontology.
pub const ROOT_ID: &str = "SYN:0000";

/// Entry 0 is the subtree root; the rest are its children.
const TECHNIQUES: &[(&str, &str)] = &[
    ("assay", "bioassay"),
    ("flow cytometry", "facs"),
    ("western blot", "immunoblot"),
    ("mass spectrometry", "proteomics"),
    ("confocal microscopy", "confocal imaging"),
    ("rna sequencing", "transcriptome profiling"),
    ("polymerase chain reaction", "pcr"),
    ("computed tomography", "ct"),
    ("x-ray crystallography", "crystallography"),
    ("chromatin immunoprecipitation", "chip"),
    ("electron tomography", "cryotomography"),
    ("nuclear magnetic resonance", "nmr"),
];

const FILLER: &[&str] = &[
    "we", "the", "a", "of", "in", "and", "to", "with", "for", "was", "were", "on", "by", "from", "that", "this",
    "study", "cells", "patients", "tissue", "expression", "analysis", "results", "samples", "protein", "gene",
    "genes", "levels", "mice", "model", "disease", "cancer", "tumor", "response", "treatment", "clinical", "human",
    "cohort", "significant", "increased", "decreased", "observed", "showed", "revealed", "associated", "role",
    "function", "pathway", "signaling", "binding", "activity", "mutation", "variants", "risk", "factor", "blood",
    "serum", "liver", "brain", "heart", "kidney", "lung", "immune", "infection", "virus", "bacterial", "drug",
    "therapy", "outcome", "survival", "age", "group", "control", "healthy", "subjects", "performed", "using",
    "measured", "identified", "novel", "potential", "mechanism", "regulation", "development", "growth", "stress",
    "inflammation", "metabolism", "receptor", "enzyme", "structure", "complex", "membrane", "cellular",
    "molecular", "data", "evidence", "suggest", "these", "findings", "here", "our", "its", "high", "low", "early",
    "late", "primary", "secondary", "vivo", "vitro", "overall", "compared", "between", "during", "after", "before",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub obo: String,
    pub root_id: String,
    pub docs: Vec<Document>,
    /// Technique indices mentioned by each document.
    pub mentions: Vec<BTreeSet<usize>>,
    pub preferred_names: Vec<String>,
    /// Vocabulary lines covering every generated word, specials first.
    pub vocab: Vec<String>,
}

pub fn technique_count() -> usize {
    TECHNIQUES.len()
}

fn ontology(n_labels: usize) -> String {
    let mut out = String::from("format-version: 1.2\nontology: synthetic\n\n");
    let (root_name, root_syn) = TECHNIQUES[0];
    let _ = write!(out, "[Term]\nid: {ROOT_ID}\nname: {root_name}\nsynonym: \"{root_syn}\" RELATED []\n\n");
    for (i, (name, syn)) in TECHNIQUES.iter().enumerate().take(n_labels).skip(1) {
        let _ = write!(
            out,
            "[Term]\nid: SYN:{i:04}\nname: {name}\nsynonym: \"{syn}\" EXACT []\nis_a: {ROOT_ID} ! {root_name}\n\n"
        );
    }
    out.push_str("[Term]\nid: SYN:0900\nname: disease\n\n");
    out.push_str("[Term]\nid: SYN:0901\nname: carcinoma\nis_a: SYN:0900 ! disease\n\n");
    out.push_str("[Term]\nid: SYN:0902\nname: retired technique\nis_a: SYN:0000\nis_obsolete: true\n\n");
    out.push_str("[Typedef]\nid: part_of\nname: part of\n");
    out
}

/// Generates `n_docs` documents over the first `n_labels` techniques; each
/// technique is mentioned with probability `mention_rate`, by its preferred
/// name or its synonym.
pub fn generate(n_docs: usize, n_labels: usize, mention_rate: f64, seed_value: u64) -> SyntheticCorpus {
    generate_with(n_docs, n_labels, mention_rate, DEFAULT_FILLER_WORDS, seed_value)
}

/// Filler words per document before technique mentions are inserted.
pub const DEFAULT_FILLER_WORDS: core::ops::Range<usize> = 20..40;

/// [`generate`] with an explicit filler-length range.
pub fn generate_with(
    n_docs: usize,
    n_labels: usize,
    mention_rate: f64,
    filler_words: core::ops::Range<usize>,
    seed_value: u64,
) -> SyntheticCorpus {
    assert!(!filler_words.is_empty(), "empty filler range");
    assert!(n_labels >= 1 && n_labels <= TECHNIQUES.len(), "n_labels out of range");
    let mut rng = seed::stage_rng(seed_value, "synthetic");
    let mut docs = Vec::with_capacity(n_docs);
    let mut mentions = Vec::with_capacity(n_docs);
    for i in 0..n_docs {
        let chosen: BTreeSet<usize> = (0..n_labels).filter(|_| rng.random::<f64>() < mention_rate).collect();
        let n_words = rng.random_range(filler_words.clone());
        let mut words: Vec<String> = (0..n_words)
            .map(|_| FILLER.choose(&mut rng).expect("filler").to_string())
            .collect();
        for &t in &chosen {
            let (pref, syn) = TECHNIQUES[t];
            let surface = if rng.random::<f64>() < 0.5 { pref } else { syn };
            let at = rng.random_range(0..=words.len());
            words.insert(at, surface.to_string());
        }
        let mut text = String::new();
        for (j, w) in words.iter().enumerate() {
            if j > 0 {
                text.push(' ');
            }
            text.push_str(w);
            if j + 1 == words.len() || rng.random::<f64>() < 0.08 {
                text.push('.');
            }
        }
        docs.push(Document::new(format!("{}", 30_000_000 + i), format!("synthetic article {i}"), text));
        mentions.push(chosen);
    }

    let mut vocab: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", ".", ",", "-", "(", ")"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut seen: BTreeSet<String> = vocab.iter().cloned().collect();
    let mut push = |w: &str, vocab: &mut Vec<String>| {
        if seen.insert(w.to_string()) {
            vocab.push(w.to_string());
        }
    };
    for w in FILLER {
        push(w, &mut vocab);
    }
    for (pref, syn) in TECHNIQUES.iter().take(n_labels) {
        for w in pref.split([' ', '-']).chain(syn.split([' ', '-'])) {
            push(w, &mut vocab);
        }
    }
    for piece in ["##s", "##ed", "##ing"] {
        push(piece, &mut vocab);
    }

    SyntheticCorpus {
        obo: ontology(n_labels),
        root_id: ROOT_ID.to_string(),
        docs,
        mentions,
        preferred_names: TECHNIQUES.iter().take(n_labels).map(|(p, _)| p.to_string()).collect(),
        vocab,
    }
}
