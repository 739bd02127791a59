//! Citation-treatment classification for case-law text.
//!
//! The crate covers the whole pipeline:
//!
//! - [`corpus`]: CSV ingestion, label encoding and stratified, seeded splits.
//! - [`textprep`]: cleaning, tokenization, stopword filtering, Porter stemming
//!   and a rule-based lemmatizer.
//! - [`embeddings`]: a skipgram/negative-sampling trainer over character
//!   n-gram subwords, plus token, document and sequence-matrix lookups.
//! - [`neural`]: dense arrays, a small reverse-mode tape, and Adam.
//! - [`cnn`]: the multi-kernel 1D convolutional classifier, its training loop
//!   with early stopping, parameter accounting and the `LXCN` model format.
//! - [`baselines`]: TF-IDF features with a cosine k-nearest-neighbour classifier.
//! - [`evaluation`]: confusion matrices, averaged metrics, one-vs-rest ROC/AUC,
//!   ablations, noise robustness and latency benchmarking.
//! - [`pipeline`]: glue that turns prepared splits into trained classifiers.
//! - [`synthetic`]: a planted-phrase corpus generator used for desk-scale runs.

mod binio;
pub mod baselines;
pub mod cnn;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod neural;
pub mod pipeline;
pub mod synthetic;
pub mod textprep;

pub use error::{Error, Result};
