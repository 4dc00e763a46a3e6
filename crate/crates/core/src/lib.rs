//! Core algorithms for ontology-driven multi-label methodology tagging of
//! biomedical articles.
//!
//! Everything in this crate is pure computation over in-memory values and
//! only needs `alloc`: ontology parsing, dictionary annotation and scoring,
//! agglomerative clustering, WordPiece tokenization, a small transformer
//! encoder with exact gradients, the AdamW training loop and the multi-label
//! evaluation metrics. File formats, retrieval clients and the command line
//! live in the `methodtag` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod annotate;
pub mod cluster;
pub mod corpus;
pub mod metrics;
pub mod model;
pub mod ontology;
pub mod seed;
pub mod synthetic;
pub mod tokenizer;
pub mod train;

pub use annotate::{Annotation, LabelMatrix};
pub use cluster::{Dendrogram, LinkageMethod, LinkageStep, Metric};
pub use corpus::{Document, DocumentSource, FetchRequest};
pub use metrics::{ConfusionCounts, MetricReport};
pub use model::{ModelConfig, ModelParams, Tensor2D};
pub use ontology::{FormKind, LabelSpace, OntologyTerm, TermLexicon};
pub use tokenizer::{Encoding, Vocab};
pub use train::{LrSchedule, OptimizerState, TrainConfig};
