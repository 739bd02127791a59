//! Multi-kernel 1D convolutional classifier.
//!
//! Token rows go through one convolution branch per kernel size (ReLU, then
//! global max pooling over positions). The pooled values are concatenated in
//! ascending kernel order, passed through dropout during training, and fed to
//! a softmax layer.

mod format;
mod train;

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::{EmbeddingTable, SequenceMatrix};
use crate::error::{Error, Result};
use crate::neural::ops::dropout_mask;
use crate::neural::{Array, Graph, Mode, Real, Var};
use crate::textprep::{PrepMode, TokenSequence};

pub use format::{load_model, save_model, model_from_bytes, model_to_bytes};
pub use train::{train, EpochRecord, LabeledSet, TrainHistory};

/// Bound of the uniform distribution for randomly initialised embedding rows.
pub const RANDOM_EMBEDDING_BOUND: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingInit {
    #[default]
    Pretrained,
    Random,
}

impl std::str::FromStr for EmbeddingInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrained" => Ok(Self::Pretrained),
            "random" => Ok(Self::Random),
            other => Err(Error::InvalidConfig(format!("unknown embedding init {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kernels: Vec<usize>,
    pub filters: usize,
    pub dropout: f64,
    pub dim: usize,
    pub seq_len: usize,
    /// Class count; 0 means "derive from the data".
    pub classes: usize,
    pub fine_tune: bool,
    pub embedding_init: EmbeddingInit,
    /// Per-class loss weights; empty means all ones.
    pub class_weights: Vec<f64>,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub prep_mode: PrepMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kernels: vec![2, 3, 5],
            filters: 128,
            dropout: 0.4,
            dim: 500,
            seq_len: 400,
            classes: 0,
            fine_tune: true,
            embedding_init: EmbeddingInit::Pretrained,
            class_weights: Vec::new(),
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 50,
            patience: 3,
            seed: 42,
            prep_mode: PrepMode::Lemmatized,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.kernels.is_empty() {
            return bad("at least one kernel size is required".into());
        }
        let mut sorted = self.kernels.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.kernels.len() {
            return bad(format!("kernel sizes must be distinct: {:?}", self.kernels));
        }
        if let Some(&k) = self.kernels.iter().find(|&&k| k == 0 || k > self.seq_len) {
            return bad(format!("kernel size {k} must be in 1..={}", self.seq_len));
        }
        if self.filters == 0 || self.dim == 0 {
            return bad("filters and embedding dimension must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if !self.class_weights.is_empty() {
            if self.class_weights.len() != self.classes {
                return bad(format!(
                    "{} class weights for {} classes",
                    self.class_weights.len(),
                    self.classes
                ));
            }
            if self.class_weights.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
                return bad("class weights must be strictly positive".into());
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.batch_size == 0 {
            return bad("step size must be positive and batch size >= 1".into());
        }
        Ok(())
    }

    /// Kernel sizes in ascending order, the order features are concatenated in.
    pub fn sorted_kernels(&self) -> Vec<usize> {
        let mut k = self.kernels.clone();
        k.sort_unstable();
        k
    }

    pub fn max_kernel(&self) -> usize {
        self.kernels.iter().copied().max().unwrap_or(1)
    }

    pub fn alpha<T: Real>(&self) -> Vec<T> {
        if self.class_weights.is_empty() {
            vec![T::one(); self.classes]
        } else {
            self.class_weights.iter().map(|&a| T::lit(a)).collect()
        }
    }

    pub fn feature_width(&self) -> usize {
        self.filters * self.kernels.len()
    }
}

/// `alpha_j = N / (K * n_j)`; absent classes get weight 1.
pub fn inverse_frequency_weights(labels: &[usize], classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    for &y in labels {
        counts[y] += 1;
    }
    let n = labels.len() as f64;
    counts
        .iter()
        .map(|&c| if c == 0 { 1.0 } else { n / (classes as f64 * c as f64) })
        .collect()
}

/// Every trainable array of the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Real = f32> {
    pub config: ModelConfig,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    /// |V| x d
    pub embedding: Array<T>,
    /// One F x k x d array per kernel, ascending kernel size.
    pub conv_w: Vec<Array<T>>,
    /// One length-F array per kernel.
    pub conv_b: Vec<Array<T>>,
    /// K x (F * |kernels|)
    pub out_w: Array<T>,
    pub out_b: Array<T>,
}

/// Where a position's embedding row comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Slot {
    Row(usize),
    /// Out-of-vocabulary token composed from the embedding table.
    Fixed(Arc<Vec<f32>>),
    /// Out-of-vocabulary token with no table available.
    Zero,
}

/// A document mapped onto model rows, truncated to the sequence length.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDoc {
    pub slots: Vec<Slot>,
}

impl EncodedDoc {
    fn row_ids(&self) -> Option<Vec<usize>> {
        self.slots
            .iter()
            .map(|s| match s {
                Slot::Row(i) => Some(*i),
                _ => None,
            })
            .collect()
    }
}

fn glorot<T: Real, R: Rng>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Array<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.random_range(-bound..bound))).collect();
    Array::from_vec(shape, data).expect("shape product matches")
}

/// Initialises a model over `vocab` (the distinct training tokens).
///
/// Conv and output weights are Glorot-uniform with `fan_in = k*d`,
/// `fan_out = k*F` for a kernel of width `k` and `fan_in = H`, `fan_out = K`
/// for the output layer; biases start at zero. Embedding rows are copied from
/// `table` (subword composition) or drawn from U(-0.05, 0.05).
pub fn build_model(cfg: &ModelConfig, vocab: Vec<String>, table: Option<&EmbeddingTable>, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let d = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embedding = match cfg.embedding_init {
        EmbeddingInit::Pretrained => {
            let table = table.ok_or_else(|| {
                Error::InvalidConfig("pretrained initialisation needs an embedding table".into())
            })?;
            if table.dim() != d {
                return Err(Error::Shape(format!(
                    "embedding table has dimension {}, model expects {d}",
                    table.dim()
                )));
            }
            let data = vocab.iter().flat_map(|w| table.embed_token(w)).collect();
            Array::from_vec(&[vocab.len(), d], data)?
        }
        EmbeddingInit::Random => {
            let b = RANDOM_EMBEDDING_BOUND;
            let data = (0..vocab.len() * d).map(|_| rng.random_range(-b..b) as f32).collect();
            Array::from_vec(&[vocab.len(), d], data)?
        }
    };
    let f = cfg.filters;
    let mut conv_w = Vec::new();
    let mut conv_b = Vec::new();
    for k in cfg.sorted_kernels() {
        conv_w.push(glorot(&[f, k, d], k * d, k * f, &mut rng));
        conv_b.push(Array::zeros(&[f]));
    }
    let h = cfg.feature_width();
    let out_w = glorot(&[cfg.classes, h], h, cfg.classes, &mut rng);
    ModelParams::new(cfg.clone(), vocab, embedding, conv_w, conv_b, out_w, Array::zeros(&[cfg.classes]))
}

impl<T: Real> ModelParams<T> {
    pub fn new(
        config: ModelConfig,
        vocab: Vec<String>,
        embedding: Array<T>,
        conv_w: Vec<Array<T>>,
        conv_b: Vec<Array<T>>,
        out_w: Array<T>,
        out_b: Array<T>,
    ) -> Result<Self> {
        config.validate()?;
        let (d, f, h, k) = (config.dim, config.filters, config.feature_width(), config.classes);
        let kernels = config.sorted_kernels();
        let shapes_ok = embedding.shape() == [vocab.len(), d]
            && conv_w.len() == kernels.len()
            && conv_b.len() == kernels.len()
            && conv_w.iter().zip(&kernels).all(|(w, &kk)| w.shape() == [f, kk, d])
            && conv_b.iter().all(|b| b.shape() == [f])
            && out_w.shape() == [k, h]
            && out_b.shape() == [k];
        if !shapes_ok {
            return Err(Error::Shape("parameter shapes do not match the model config".into()));
        }
        let mut index = HashMap::with_capacity(vocab.len());
        for (i, w) in vocab.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Corrupt(format!("duplicate vocabulary token {w:?}")));
            }
        }
        Ok(Self {
            config,
            vocab,
            index,
            embedding,
            conv_w,
            conv_b,
            out_w,
            out_b,
        })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    /// Arrays in declaration order: embedding, then (W, b) per kernel, then
    /// output weights and bias.
    pub fn arrays(&self) -> Vec<&Array<T>> {
        let mut out = vec![&self.embedding];
        for (w, b) in self.conv_w.iter().zip(&self.conv_b) {
            out.push(w);
            out.push(b);
        }
        out.push(&self.out_w);
        out.push(&self.out_b);
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut Array<T>> {
        let mut out = vec![&mut self.embedding];
        for (w, b) in self.conv_w.iter_mut().zip(self.conv_b.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out.push(&mut self.out_w);
        out.push(&mut self.out_b);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.arrays().iter().all(|a| a.is_finite())
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            index: self.index.clone(),
            embedding: self.embedding.cast(),
            conv_w: self.conv_w.iter().map(Array::cast).collect(),
            conv_b: self.conv_b.iter().map(Array::cast).collect(),
            out_w: self.out_w.cast(),
            out_b: self.out_b.cast(),
        }
    }

    /// Maps tokens to rows. Out-of-vocabulary tokens are composed from
    /// `table` when given, otherwise left as zero rows.
    pub fn encode(&self, tokens: &TokenSequence, table: Option<&EmbeddingTable>) -> EncodedDoc {
        let slots = tokens
            .tokens
            .iter()
            .take(self.config.seq_len)
            .map(|t| match (self.index.get(t), table) {
                (Some(&i), _) => Slot::Row(i),
                (None, Some(tab)) => Slot::Fixed(Arc::new(tab.embed_token(t))),
                (None, None) => Slot::Zero,
            })
            .collect();
        EncodedDoc { slots }
    }

    /// The L x d input matrix of a document under the current embedding rows.
    pub fn sequence_matrix(&self, doc: &EncodedDoc) -> SequenceMatrix {
        let (l, d) = (self.config.seq_len, self.config.dim);
        let mut x = Array::zeros(&[l, d]);
        for (i, s) in doc.slots.iter().enumerate().take(l) {
            match s {
                Slot::Row(r) => {
                    let row: Vec<f32> = self.embedding.row(*r).iter().map(|v| v.to_f32().unwrap()).collect();
                    x.row_mut(i).copy_from_slice(&row);
                }
                Slot::Fixed(v) => x.row_mut(i).copy_from_slice(v),
                Slot::Zero => {}
            }
        }
        SequenceMatrix {
            x,
            len: doc.slots.len().min(l),
        }
    }

    /// Rows fed to the convolutions for a document of `len` tokens.
    ///
    /// Rows past `len + max_kernel` are all-zero windows identical to the
    /// ones already present, so dropping them leaves every pooled value (and
    /// its first argmax) unchanged while saving the work on short documents.
    fn effective_rows(&self, len: usize) -> usize {
        (len + self.config.max_kernel()).min(self.config.seq_len)
    }

    fn check_matrix(&self, x: &SequenceMatrix) -> Result<()> {
        let want = [self.config.seq_len, self.config.dim];
        if x.x.shape() != want {
            return Err(Error::Shape(format!(
                "sequence matrix {:?}, model expects {want:?}",
                x.x.shape()
            )));
        }
        Ok(())
    }
}

/// One document's input to a batch on the tape.
enum DocInput<'a> {
    /// Gather these embedding rows (trainable path).
    Rows(Vec<usize>),
    Matrix(&'a SequenceMatrix),
}

/// Parameter handles, in [`ModelParams::arrays`] order.
struct ParamVars {
    embedding: Var,
    conv: Vec<(Var, Var)>,
    out_w: Var,
    out_b: Var,
}

fn register<'p, T: Real>(g: &mut Graph<'p, T>, p: &'p ModelParams<T>) -> ParamVars {
    let embedding = g.param(&p.embedding);
    let conv = p
        .conv_w
        .iter()
        .zip(&p.conv_b)
        .map(|(w, b)| (g.param(w), g.param(b)))
        .collect();
    ParamVars {
        embedding,
        conv,
        out_w: g.param(&p.out_w),
        out_b: g.param(&p.out_b),
    }
}

/// Records a batch forward pass and returns the N x K probability node.
fn batch_probs<'p, T: Real, R: Rng + ?Sized>(
    g: &mut Graph<'p, T>,
    p: &'p ModelParams<T>,
    docs: &[DocInput<'_>],
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    if docs.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let vars = register(g, p);
    let d = p.config.dim;
    let mut features = Vec::with_capacity(docs.len());
    for doc in docs {
        let x = match doc {
            DocInput::Rows(ids) => {
                let n = p.effective_rows(ids.len().min(p.config.seq_len));
                let rows = (0..n).map(|i| ids.get(i).copied()).collect();
                g.gather_rows(vars.embedding, rows)?
            }
            DocInput::Matrix(m) => {
                p.check_matrix(m)?;
                let n = p.effective_rows(m.len);
                let data = m.x.data()[..n * d].iter().map(|&v| T::lit(f64::from(v))).collect();
                g.input(Array::from_vec(&[n, d], data)?)
            }
        };
        let pooled = vars
            .conv
            .iter()
            .map(|&(w, b)| {
                let c = g.conv1d_relu(x, w, b)?;
                g.max_pool_rows(c)
            })
            .collect::<Result<Vec<_>>>()?;
        features.push(g.concat(pooled));
    }
    let mut h = g.stack(features)?;
    if let Some(mask) = dropout_mask::<T, R>(g.value(h).len(), p.config.dropout, mode, rng) {
        h = g.scale(h, mask)?;
    }
    let logits = g.linear(h, vars.out_w, vars.out_b)?;
    g.softmax_rows(logits)
}

/// Probability vector for one input matrix.
pub fn forward<T: Real, R: Rng + ?Sized>(p: &ModelParams<T>, x: &SequenceMatrix, mode: Mode, rng: &mut R) -> Result<Vec<T>> {
    let mut rows = forward_batch(p, &[x], mode, rng)?;
    Ok(rows.remove(0))
}

/// Probability vectors for a batch of input matrices.
pub fn forward_batch<T: Real, R: Rng + ?Sized>(
    p: &ModelParams<T>,
    xs: &[&SequenceMatrix],
    mode: Mode,
    rng: &mut R,
) -> Result<Vec<Vec<T>>> {
    let docs: Vec<DocInput> = xs.iter().map(|m| DocInput::Matrix(m)).collect();
    let mut g = Graph::new();
    let probs = batch_probs(&mut g, p, &docs, mode, rng)?;
    let out = g.value(probs);
    Ok((0..xs.len()).map(|i| out.row(i).to_vec()).collect())
}

/// Mean weighted cross-entropy of a batch and its gradient with respect to
/// every array in [`ModelParams::arrays`] order.
pub fn loss_and_grads<T: Real, R: Rng + ?Sized>(
    p: &ModelParams<T>,
    xs: &[&SequenceMatrix],
    targets: &[usize],
    mode: Mode,
    rng: &mut R,
) -> Result<(T, Vec<Array<T>>)> {
    let docs: Vec<DocInput> = xs.iter().map(|m| DocInput::Matrix(m)).collect();
    let mut g = Graph::new();
    let probs = batch_probs(&mut g, p, &docs, mode, rng)?;
    let loss = g.weighted_ce(probs, targets.to_vec(), p.config.alpha())?;
    let value = g.value(loss).data()[0];
    Ok((value, g.backward(loss)?.grads))
}

/// Same as [`loss_and_grads`] but gathering trainable embedding rows, so the
/// embedding gradient is populated.
pub fn loss_and_grads_rows<T: Real, R: Rng + ?Sized>(
    p: &ModelParams<T>,
    docs: &[Vec<usize>],
    targets: &[usize],
    mode: Mode,
    rng: &mut R,
) -> Result<(T, Vec<Array<T>>)> {
    let inputs: Vec<DocInput> = docs.iter().map(|ids| DocInput::Rows(ids.clone())).collect();
    let mut g = Graph::new();
    let probs = batch_probs(&mut g, p, &inputs, mode, rng)?;
    let loss = g.weighted_ce(probs, targets.to_vec(), p.config.alpha())?;
    let value = g.value(loss).data()[0];
    Ok((value, g.backward(loss)?.grads))
}

/// Closed-form trainable-scalar count.
pub fn parameter_count_formula(kernels: &[usize], dim: usize, filters: usize, classes: usize, vocab: Option<usize>) -> u64 {
    let (d, f, k) = (dim as u64, filters as u64, classes as u64);
    let conv: u64 = kernels.iter().map(|&kk| kk as u64 * d * f + f).sum();
    let head = f * kernels.len() as u64 * k + k;
    conv + head + vocab.map_or(0, |v| d * v as u64)
}

/// Exact count of scalar trainables.
pub fn count_parameters<T: Real>(p: &ModelParams<T>, include_embeddings: bool) -> u64 {
    p.arrays()
        .iter()
        .skip(usize::from(!include_embeddings))
        .map(|a| a.len() as u64)
        .sum()
}

/// Index of the largest probability (first on ties).
pub fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests;
