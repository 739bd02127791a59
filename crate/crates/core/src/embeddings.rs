//! Subword-aware word vectors.
//!
//! A word is represented by its own row (when in the vocabulary) plus one row
//! per hashed character n-gram of `<word>`. The trainer is skipgram with
//! negative sampling: the center representation is the mean of those rows,
//! contexts use a separate output matrix, and negatives are drawn from the
//! unigram distribution raised to 0.75.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{read_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::neural::{axpy, dot, Array};
use crate::textprep::TokenSequence;

const MAGIC: &[u8; 4] = b"LXEM";
const VERSION: u32 = 1;

const HASH_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const HASH_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Negative-sampling distribution exponent.
const UNIGRAM_POWER: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub dim: usize,
    pub window: usize,
    pub min_count: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub buckets: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Initial step size, decayed linearly to zero over training.
    pub lr: f64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            dim: 500,
            window: 3,
            min_count: 2,
            ngram_min: 3,
            ngram_max: 6,
            buckets: 2_000_000,
            negatives: 5,
            epochs: 5,
            lr: 0.05,
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.dim == 0 {
            return bad("embedding dimension must be >= 1");
        }
        if self.window == 0 {
            return bad("context window must be >= 1");
        }
        if self.ngram_min == 0 || self.ngram_min > self.ngram_max {
            return bad("n-gram range must satisfy 1 <= min <= max");
        }
        if self.buckets == 0 {
            return bad("bucket count must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("step size must be positive");
        }
        Ok(())
    }
}

/// 64-bit FNV-style polynomial hash over UTF-8 bytes:
/// `h = h * 0x100000001b3 + byte`, starting from `0xcbf29ce484222325`.
pub fn subword_hash(gram: &str) -> u64 {
    gram.bytes()
        .fold(HASH_OFFSET, |h, b| h.wrapping_mul(HASH_PRIME).wrapping_add(u64::from(b)))
}

/// Character n-grams of `<word>` for every `n` in `[n_min, n_max]`, ordered
/// by start position then length, followed by the whole bracketed word. The
/// bracketed word appears once even when its length falls inside the range.
pub fn subword_strings(word: &str, n_min: usize, n_max: usize) -> Vec<String> {
    let chars: Vec<char> = format!("<{word}>").chars().collect();
    let mut grams = Vec::new();
    for start in 0..chars.len() {
        for n in n_min..=n_max {
            let end = start + n;
            if end > chars.len() {
                break;
            }
            if n == chars.len() {
                continue;
            }
            grams.push(chars[start..end].iter().collect());
        }
    }
    grams.push(chars.iter().collect());
    grams
}

/// Bucket ids of [`subword_strings`].
pub fn extract_subwords(word: &str, n_min: usize, n_max: usize, buckets: usize) -> Vec<usize> {
    subword_strings(word, n_min, n_max)
        .iter()
        .map(|g| (subword_hash(g) % buckets as u64) as usize)
        .collect()
}

pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Learned word and subword vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub config: EmbedConfig,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    /// |V| x d
    words: Array<f32>,
    /// buckets x d
    subwords: Array<f32>,
}

/// Fixed-length, zero-padded token-vector matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceMatrix {
    /// L x d
    pub x: Array<f32>,
    /// Number of filled rows before padding.
    pub len: usize,
}

impl EmbeddingTable {
    pub fn new(config: EmbedConfig, vocab: Vec<String>, words: Array<f32>, subwords: Array<f32>) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        if words.shape() != [vocab.len(), d] || subwords.shape() != [config.buckets, d] {
            return Err(Error::Shape(format!(
                "word matrix {:?} and subword matrix {:?} for {} tokens, d={d}, {} buckets",
                words.shape(),
                subwords.shape(),
                vocab.len(),
                config.buckets
            )));
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
            words,
            subwords,
        })
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word_matrix(&self) -> &Array<f32> {
        &self.words
    }

    pub fn subword_matrix(&self) -> &Array<f32> {
        &self.subwords
    }

    fn subwords_of(&self, word: &str) -> Vec<usize> {
        extract_subwords(word, self.config.ngram_min, self.config.ngram_max, self.config.buckets)
    }

    /// Mean of the word row (if in vocabulary) and its subword rows.
    pub fn embed_token(&self, word: &str) -> Vec<f32> {
        let mut out = vec![0.0; self.dim()];
        let grams = self.subwords_of(word);
        let mut n = grams.len();
        for g in grams {
            axpy(1.0, self.subwords.row(g), &mut out);
        }
        if let Some(&i) = self.index.get(word) {
            axpy(1.0, self.words.row(i), &mut out);
            n += 1;
        }
        let inv = 1.0 / n as f32;
        out.iter_mut().for_each(|v| *v *= inv);
        out
    }

    /// Unweighted mean of token vectors, duplicates counted.
    pub fn mean_pool(&self, tokens: &TokenSequence) -> Result<Vec<f32>> {
        if tokens.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        let mut out = vec![0.0; self.dim()];
        for t in &tokens.tokens {
            axpy(1.0, &self.embed_token(t), &mut out);
        }
        let inv = 1.0 / tokens.len() as f32;
        out.iter_mut().for_each(|v| *v *= inv);
        Ok(out)
    }

    /// First `min(|tokens|, l)` rows hold token vectors; the rest are zero.
    /// `min_len` is the largest kernel of the consuming model.
    pub fn sequence_matrix(&self, tokens: &TokenSequence, l: usize, min_len: usize) -> Result<SequenceMatrix> {
        sequence_matrix_with(self.dim(), tokens, l, min_len, |t| self.embed_token(t))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_writer()?.save(path)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(self.to_writer()?.into_bytes())
    }

    fn to_writer(&self) -> Result<Writer> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.json(&self.config)?;
        w.u64(self.vocab.len() as u64);
        for t in &self.vocab {
            w.str(t);
        }
        w.f32s(self.words.data());
        w.f32s(self.subwords.data());
        Ok(w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, MAGIC, VERSION)?;
        let config: EmbedConfig = r.json()?;
        config.validate().map_err(|e| Error::Corrupt(e.to_string()))?;
        let v = r.count("vocabulary", bytes.len() as u64)?;
        let vocab = (0..v).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let d = config.dim;
        let words = r.f32s(checked(v, d)?)?;
        let subwords = r.f32s(checked(config.buckets, d)?)?;
        r.finish()?;
        let words = Array::from_vec(&[v, d], words)?;
        let subwords = Array::from_vec(&[config.buckets, d], subwords)?;
        Self::new(config, vocab, words, subwords)
    }
}

fn checked(a: usize, b: usize) -> Result<usize> {
    a.checked_mul(b)
        .ok_or_else(|| Error::Corrupt("matrix size overflows".into()))
}

pub(crate) fn sequence_matrix_with(
    d: usize,
    tokens: &TokenSequence,
    l: usize,
    min_len: usize,
    mut embed: impl FnMut(&str) -> Vec<f32>,
) -> Result<SequenceMatrix> {
    if l < min_len.max(1) {
        return Err(Error::InvalidConfig(format!(
            "sequence length {l} is smaller than the largest kernel {min_len}"
        )));
    }
    let mut x = Array::zeros(&[l, d]);
    let len = tokens.len().min(l);
    for (i, t) in tokens.tokens.iter().take(len).enumerate() {
        x.row_mut(i).copy_from_slice(&embed(t));
    }
    Ok(SequenceMatrix { x, len })
}

/// Skipgram/negative-sampling trainer state.
pub struct SkipgramTrainer {
    config: EmbedConfig,
    vocab: Vec<String>,
    /// Per sentence: vocabulary ids of the in-vocabulary tokens, in order.
    sentences: Vec<Vec<usize>>,
    /// Per vocabulary id: its input rows (word row, then subword rows offset by |V|).
    inputs: Vec<Vec<usize>>,
    /// (|V| + buckets) x d
    input: Array<f32>,
    /// |V| x d
    output: Array<f32>,
    neg_cdf: Vec<f64>,
    rng: ChaCha8Rng,
    total_tokens: usize,
    processed: usize,
    epochs_done: usize,
}

impl SkipgramTrainer {
    pub fn new(corpus: &[TokenSequence], config: &EmbedConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if corpus.iter().all(TokenSequence::is_empty) {
            return Err(Error::Empty("embedding corpus"));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for seq in corpus {
            for t in &seq.tokens {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= config.min_count)
            .collect();
        if kept.is_empty() {
            return Err(Error::Empty("vocabulary after frequency cutoff"));
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let vocab: Vec<String> = kept.iter().map(|(w, _)| w.to_string()).collect();
        let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();

        let sentences: Vec<Vec<usize>> = corpus
            .iter()
            .map(|s| s.tokens.iter().filter_map(|t| index.get(t.as_str()).copied()).collect())
            .collect();
        let total_tokens = sentences.iter().map(Vec::len).sum();

        let v = vocab.len();
        let inputs = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let mut rows = vec![i];
                rows.extend(
                    extract_subwords(w, config.ngram_min, config.ngram_max, config.buckets)
                        .into_iter()
                        .map(|g| v + g),
                );
                rows
            })
            .collect();

        let mut weights: Vec<f64> = kept.iter().map(|&(_, c)| (c as f64).powf(UNIGRAM_POWER)).collect();
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        for w in &mut weights {
            acc += *w / total;
            *w = acc;
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.dim;
        let bound = 1.0 / d as f32;
        let input_data: Vec<f32> = (0..(v + config.buckets) * d)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Ok(Self {
            config: config.clone(),
            vocab,
            sentences,
            inputs,
            input: Array::from_vec(&[v + config.buckets, d], input_data)?,
            output: Array::zeros(&[v, d]),
            neg_cdf: weights,
            rng,
            total_tokens,
            processed: 0,
            epochs_done: 0,
        })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_id(&self, word: &str) -> Option<usize> {
        self.vocab.iter().position(|w| w == word)
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    fn hidden(&self, center: usize) -> Vec<f32> {
        let rows = &self.inputs[center];
        let mut h = vec![0.0; self.config.dim];
        for &r in rows {
            axpy(1.0, self.input.row(r), &mut h);
        }
        let inv = 1.0 / rows.len() as f32;
        h.iter_mut().for_each(|v| *v *= inv);
        h
    }

    /// Negative-sampling loss of one (center, context) pair against the given
    /// negatives, without updating anything.
    pub fn pair_loss(&self, center: usize, context: usize, negatives: &[usize]) -> f64 {
        let h = self.hidden(center);
        let pos = f64::from(dot(&h, self.output.row(context)));
        let mut loss = -log_sigmoid(pos);
        for &n in negatives {
            loss -= log_sigmoid(-f64::from(dot(&h, self.output.row(n))));
        }
        loss
    }

    /// Draws one negative id from the smoothed unigram distribution.
    pub fn sample_negative(&mut self) -> usize {
        let u: f64 = self.rng.random();
        self.neg_cdf.partition_point(|&c| c <= u).min(self.neg_cdf.len() - 1)
    }

    fn update_pair(&mut self, center: usize, context: usize, lr: f32) -> f64 {
        let h = self.hidden(center);
        let d = self.config.dim;
        let mut grad = vec![0.0f32; d];
        let mut loss = 0.0;
        let mut targets = Vec::with_capacity(self.config.negatives + 1);
        targets.push((context, 1.0f32));
        for _ in 0..self.config.negatives {
            let mut n = self.sample_negative();
            // Redraw a few times if the negative is the context itself.
            for _ in 0..4 {
                if n != context {
                    break;
                }
                n = self.sample_negative();
            }
            if n != context {
                targets.push((n, 0.0));
            }
        }
        for (t, label) in targets {
            let score = dot(&h, self.output.row(t));
            let s = sigmoid(score);
            loss -= if label > 0.0 {
                log_sigmoid(f64::from(score))
            } else {
                log_sigmoid(-f64::from(score))
            };
            let alpha = lr * (label - s);
            axpy(alpha, self.output.row(t), &mut grad);
            axpy(alpha, &h, self.output.row_mut(t));
        }
        for i in 0..self.inputs[center].len() {
            let r = self.inputs[center][i];
            axpy(1.0, &grad, self.input.row_mut(r));
        }
        loss
    }

    /// One pass over the corpus. Returns the mean pair loss.
    pub fn train_epoch(&mut self) -> f64 {
        let total_steps = (self.config.epochs.max(1) * self.total_tokens).max(1) as f64;
        let mut loss = 0.0;
        let mut pairs = 0usize;
        for s in 0..self.sentences.len() {
            let len = self.sentences[s].len();
            for pos in 0..len {
                let progress = (self.processed as f64 / total_steps).min(1.0);
                let lr = (self.config.lr * (1.0 - progress)) as f32;
                let center = self.sentences[s][pos];
                let lo = pos.saturating_sub(self.config.window);
                let hi = (pos + self.config.window).min(len - 1);
                for c in lo..=hi {
                    if c != pos {
                        let context = self.sentences[s][c];
                        loss += self.update_pair(center, context, lr);
                        pairs += 1;
                    }
                }
                self.processed += 1;
            }
        }
        self.epochs_done += 1;
        if pairs == 0 {
            0.0
        } else {
            loss / pairs as f64
        }
    }

    pub fn finish(self) -> Result<EmbeddingTable> {
        let v = self.vocab.len();
        let d = self.config.dim;
        let data = self.input.into_data();
        let words = Array::from_vec(&[v, d], data[..v * d].to_vec())?;
        let subwords = Array::from_vec(&[self.config.buckets, d], data[v * d..].to_vec())?;
        EmbeddingTable::new(self.config, self.vocab, words, subwords)
    }
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Trains a table for `cfg.epochs` passes over `corpus`.
pub fn train_fasttext(corpus: &[TokenSequence], cfg: &EmbedConfig, seed: u64) -> Result<EmbeddingTable> {
    let mut trainer = SkipgramTrainer::new(corpus, cfg, seed)?;
    for epoch in 0..cfg.epochs {
        let loss = trainer.train_epoch();
        log::info!("embedding epoch {}: mean pair loss {loss:.4}", epoch + 1);
    }
    trainer.finish()
}
