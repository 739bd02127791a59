//! Glue from a document set to trained classifiers.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cnn::{self, EmbeddingInit, LabeledSet, ModelConfig, ModelParams, TrainHistory};
use crate::corpus::{carve_validation, encode_labels, stratified_split, Document, DocumentSet, LabelMap, SplitSpec};
use crate::embeddings::{EmbeddingTable, SequenceMatrix};
use crate::error::{Error, Result};
use crate::neural::Mode;
use crate::textprep::{document_text, preprocess_document, PrepConfig, TokenSequence};

/// Train, validation and test documents.
#[derive(Debug, Clone)]
pub struct Partition {
    pub train: DocumentSet,
    pub val: DocumentSet,
    pub test: DocumentSet,
}

/// Stratified train/test split followed by a stratified validation carve.
pub fn partition(docs: &DocumentSet, spec: &SplitSpec) -> Result<Partition> {
    let (train, test) = stratified_split(docs, spec)?;
    let (train, val) = carve_validation(&train, spec)?;
    Ok(Partition { train, val, test })
}

/// Token sequences of one partition with their class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedSplit {
    pub ids: Vec<String>,
    pub tokens: Vec<TokenSequence>,
    pub labels: Vec<usize>,
}

impl TokenizedSplit {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn preprocess(doc: &Document, prep: &PrepConfig) -> TokenSequence {
    preprocess_document(&document_text(&doc.title, &doc.body, prep), prep)
}

pub fn tokenize_split(set: &DocumentSet, labels: &LabelMap, prep: &PrepConfig) -> Result<TokenizedSplit> {
    let mut out = TokenizedSplit {
        ids: Vec::with_capacity(set.len()),
        tokens: Vec::with_capacity(set.len()),
        labels: Vec::with_capacity(set.len()),
    };
    for d in &set.docs {
        let y = labels.index(&d.outcome).ok_or_else(|| {
            Error::LabelMismatch(format!("document {} has unknown label {:?}", d.case_id, d.outcome))
        })?;
        out.ids.push(d.case_id.clone());
        out.tokens.push(preprocess(d, prep));
        out.labels.push(y);
    }
    Ok(out)
}

/// All three partitions preprocessed under one configuration.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub labels: LabelMap,
    pub train: TokenizedSplit,
    pub val: TokenizedSplit,
    pub test: TokenizedSplit,
}

impl Prepared {
    pub fn new(part: &Partition, labels: LabelMap, prep: &PrepConfig) -> Result<Self> {
        Ok(Self {
            train: tokenize_split(&part.train, &labels, prep)?,
            val: tokenize_split(&part.val, &labels, prep)?,
            test: tokenize_split(&part.test, &labels, prep)?,
            labels,
        })
    }

    /// Label map derived from `docs`, then partition and preprocess.
    pub fn from_documents(docs: &DocumentSet, spec: &SplitSpec, prep: &PrepConfig) -> Result<(Partition, Self)> {
        let labels = encode_labels(docs)?;
        let part = partition(docs, spec)?;
        let prepared = Self::new(&part, labels, prep)?;
        Ok((part, prepared))
    }
}

/// Distinct training tokens in lexicographic order: the model vocabulary.
pub fn training_vocab(train: &[TokenSequence]) -> Vec<String> {
    let set: BTreeSet<&str> = train.iter().flat_map(|s| s.tokens.iter().map(String::as_str)).collect();
    set.into_iter().map(str::to_string).collect()
}

/// A trained CNN with everything needed to classify raw text.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub params: ModelParams,
    pub labels: LabelMap,
    /// Composes vectors for tokens outside the model vocabulary.
    pub table: Option<EmbeddingTable>,
    pub prep: PrepConfig,
}

impl Classifier {
    /// Uses the preprocessing mode recorded in the model config.
    pub fn new(params: ModelParams, labels: LabelMap, table: Option<EmbeddingTable>, prep: PrepConfig) -> Self {
        let prep = prep.with_mode(params.config.prep_mode);
        Self {
            params,
            labels,
            table,
            prep,
        }
    }

    pub fn sequence_matrix(&self, tokens: &TokenSequence) -> SequenceMatrix {
        self.params.sequence_matrix(&self.params.encode(tokens, self.table.as_ref()))
    }

    pub fn predict_matrix(&self, x: &SequenceMatrix) -> Result<Vec<f32>> {
        // Inference never draws from the generator.
        cnn::forward(&self.params, x, Mode::Infer, &mut ChaCha8Rng::seed_from_u64(0))
    }

    pub fn predict_tokens(&self, tokens: &TokenSequence) -> Result<Vec<f32>> {
        self.predict_matrix(&self.sequence_matrix(tokens))
    }

    /// Preprocesses raw text and returns the predicted class and probabilities.
    pub fn predict_text(&self, raw: &str) -> Result<(usize, Vec<f32>)> {
        let probs = self.predict_tokens(&preprocess_document(raw, &self.prep))?;
        Ok((cnn::argmax(&probs), probs))
    }

    pub fn predict_batch(&self, docs: &[TokenSequence]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(docs.len());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for chunk in docs.chunks(self.params.config.batch_size.max(1)) {
            let mats: Vec<SequenceMatrix> = chunk.iter().map(|d| self.sequence_matrix(d)).collect();
            let refs: Vec<&SequenceMatrix> = mats.iter().collect();
            out.extend(cnn::forward_batch(&self.params, &refs, Mode::Infer, &mut rng)?);
        }
        Ok(out)
    }

    /// Checks that `labels` matches the model's label map exactly.
    pub fn check_labels(&self, labels: &LabelMap) -> Result<()> {
        if labels != &self.labels {
            return Err(Error::LabelMismatch(format!(
                "model labels {:?}, data labels {:?}",
                self.labels.labels(),
                labels.labels()
            )));
        }
        Ok(())
    }
}

/// Resolves the class count against the data and checks the embedding source.
pub fn resolve_config(cfg: &ModelConfig, labels: &LabelMap, table: Option<&EmbeddingTable>) -> Result<ModelConfig> {
    let mut cfg = cfg.clone();
    if cfg.classes == 0 {
        cfg.classes = labels.len();
    } else if cfg.classes != labels.len() {
        return Err(Error::LabelMismatch(format!(
            "config declares {} classes, data has {}",
            cfg.classes,
            labels.len()
        )));
    }
    if cfg.embedding_init == EmbeddingInit::Pretrained && table.is_none() {
        return Err(Error::InvalidConfig(
            "pretrained embedding init needs an embedding table".into(),
        ));
    }
    Ok(cfg)
}

/// Builds and trains a CNN on prepared splits. `table` is used for
/// pretrained initialisation and for out-of-vocabulary validation tokens.
pub fn fit_cnn(
    cfg: &ModelConfig,
    data: &Prepared,
    table: Option<&EmbeddingTable>,
    prep: &PrepConfig,
) -> Result<(Classifier, TrainHistory)> {
    let cfg = resolve_config(cfg, &data.labels, table)?;
    if let Some(&mode) = data.train.tokens.first().map(|t| &t.mode) {
        if mode != cfg.prep_mode {
            return Err(Error::InvalidConfig(format!(
                "model expects {} tokens, data was prepared as {mode}",
                cfg.prep_mode
            )));
        }
    }
    let vocab = training_vocab(&data.train.tokens);
    let init = cnn::build_model(&cfg, vocab, table, cfg.seed)?;
    let encode = |s: &TokenizedSplit| s.tokens.iter().map(|t| init.encode(t, table)).collect::<Vec<_>>();
    let (train_docs, val_docs) = (encode(&data.train), encode(&data.val));
    let (params, history) = cnn::train(
        init.clone(),
        LabeledSet::new(&train_docs, &data.train.labels)?,
        LabeledSet::new(&val_docs, &data.val.labels)?,
    )?;
    let clf = Classifier::new(params, data.labels.clone(), table.cloned(), prep.clone());
    Ok((clf, history))
}

/// Class counts of a labelled split.
pub fn class_counts(labels: &[usize], classes: usize) -> Vec<usize> {
    let mut c = vec![0; classes];
    for &y in labels {
        c[y] += 1;
    }
    c
}

