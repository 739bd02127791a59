//! Planted-phrase corpus for desk-scale runs.
//!
//! Every document contains the same three marker tokens `m0, m1, m2`. A class
//! `c` document holds the ordered pair `m[c] m[c+1]` (indices mod 3) side by
//! side and the remaining marker somewhere not adjacent to it. Bag-of-words
//! features therefore see identical marker counts in every class; only word
//! order separates them. Filler tokens come from a shared pool, except that
//! with probability `topic_rate` a token is drawn from a small per-class pool,
//! which gives order-blind baselines a partial signal.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_corpus, Document, DocumentSet};
use crate::error::{Error, Result};
use crate::textprep::{preprocess_document, PrepConfig, PrepMode};

const LABELS: [&str; 6] = ["applied", "distinguished", "followed", "overruled", "considered", "doubted"];
const MARKERS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub docs_per_class: usize,
    /// Filler tokens per document, inclusive range.
    pub min_len: usize,
    pub max_len: usize,
    pub shared_vocab: usize,
    pub topic_vocab: usize,
    pub topic_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 3,
            docs_per_class: 200,
            min_len: 30,
            max_len: 50,
            shared_vocab: 150,
            topic_vocab: 12,
            topic_rate: 0.1,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > MARKERS {
            return Err(Error::InvalidConfig(format!(
                "planted-phrase corpus supports 2..={MARKERS} classes, got {}",
                self.classes
            )));
        }
        if self.docs_per_class < 2 || self.min_len < 4 || self.min_len > self.max_len {
            return Err(Error::InvalidConfig(
                "need >= 2 documents per class and 4 <= min_len <= max_len".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.topic_rate) || self.shared_vocab == 0 || self.topic_vocab == 0 {
            return Err(Error::InvalidConfig("invalid vocabulary sizes or topic rate".into()));
        }
        Ok(())
    }
}

/// Pseudo-words ending in `a` or `o` (no English inflection or Porter suffix
/// applies), kept only if both normalisation modes leave them unchanged.
fn word_pool(n: usize, rng: &mut ChaCha8Rng, taken: &mut std::collections::HashSet<String>) -> Vec<String> {
    const C: &[u8] = b"bdfgklmnprtvz";
    const V: &[u8] = b"aeiou";
    let stem = PrepConfig::default().with_mode(PrepMode::Stemmed);
    let lemma = PrepConfig::default();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push(*C.choose(rng).unwrap() as char);
            w.push(*V.choose(rng).unwrap() as char);
        }
        w.push(*C.choose(rng).unwrap() as char);
        w.push(if rng.random_bool(0.5) { 'a' } else { 'o' });
        let stable = [&stem, &lemma]
            .iter()
            .all(|cfg| preprocess_document(&w, cfg).tokens == [w.clone()]);
        if stable && taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// The generated corpus with its construction details.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub docs: DocumentSet,
    pub markers: Vec<String>,
    /// Post-preprocessing token sequence of each document.
    pub tokens: Vec<Vec<String>>,
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut taken = Default::default();
    let markers = word_pool(MARKERS, &mut rng, &mut taken);
    let shared = word_pool(spec.shared_vocab, &mut rng, &mut taken);
    let topics: Vec<Vec<String>> = (0..spec.classes)
        .map(|_| word_pool(spec.topic_vocab, &mut rng, &mut taken))
        .collect();
    let fillers = ["the", "of", "and", "was", "in", "that", "to"];

    let mut docs = Vec::new();
    let mut all_tokens = Vec::new();
    for i in 0..spec.docs_per_class * spec.classes {
        let c = i % spec.classes;
        let n = rng.random_range(spec.min_len..=spec.max_len);
        let mut tokens: Vec<String> = (0..n)
            .map(|_| {
                let pool = if rng.random_bool(spec.topic_rate) { &topics[c] } else { &shared };
                pool.choose(&mut rng).unwrap().clone()
            })
            .collect();
        let first = &markers[c];
        let second = &markers[(c + 1) % MARKERS];
        let third = &markers[(c + 2) % MARKERS];
        // Phrase at p..p+2 and the lone marker at q, with at least one filler
        // token between them on either side.
        let total = n + 3;
        let (p, q) = loop {
            let p = rng.random_range(0..total - 1);
            let q = rng.random_range(0..total);
            if q + 1 < p || q > p + 2 {
                break (p, q);
            }
        };
        let mut seq: Vec<Option<String>> = vec![None; total];
        seq[p] = Some(first.clone());
        seq[p + 1] = Some(second.clone());
        seq[q] = Some(third.clone());
        let mut filler = tokens.drain(..);
        let seq: Vec<String> = seq
            .into_iter()
            .map(|s| s.unwrap_or_else(|| filler.next().expect("filler count matches")))
            .collect();

        let mut body = String::new();
        for (j, t) in seq.iter().enumerate() {
            if rng.random_bool(0.2) {
                body.push_str(fillers.choose(&mut rng).unwrap());
                body.push(' ');
            }
            if j == 0 {
                let mut cs = t.chars();
                body.extend(cs.next().map(|ch| ch.to_ascii_uppercase()));
                body.push_str(cs.as_str());
            } else {
                body.push_str(t);
            }
            match rng.random_range(0..20) {
                0 => body.push_str(", "),
                1 => body.push_str(&format!(" s {}. ", rng.random_range(1..200))),
                _ => body.push(' '),
            }
        }
        docs.push(Document {
            case_id: format!("syn-{i:05}"),
            outcome: LABELS[c].to_string(),
            title: format!("Synthetic case {i}"),
            body: body.trim_end().to_string(),
        });
        all_tokens.push(seq);
    }
    Ok(SyntheticCorpus {
        docs: DocumentSet::new(docs),
        markers,
        tokens: all_tokens,
    })
}

pub fn write_synthetic_csv(path: &Path, spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    let corpus = generate(spec)?;
    write_corpus(path, &corpus.docs.docs)?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documents_preprocess_to_the_planted_sequence() {
        let corpus = generate(&SyntheticSpec::default()).unwrap();
        assert_eq!(corpus.docs.len(), 600);
        for mode in [PrepMode::Lemmatized, PrepMode::Stemmed, PrepMode::RawFiltered] {
            let cfg = PrepConfig::default().with_mode(mode);
            for (d, want) in corpus.docs.docs.iter().zip(&corpus.tokens) {
                assert_eq!(&preprocess_document(&d.body, &cfg).tokens, want, "{}", d.body);
            }
        }
    }

    #[test]
    fn marker_layout() {
        let corpus = generate(&SyntheticSpec::default()).unwrap();
        let m = &corpus.markers;
        for (d, toks) in corpus.docs.docs.iter().zip(&corpus.tokens) {
            let c = LABELS.iter().position(|l| *l == d.outcome).unwrap();
            let pos = |w: &str| toks.iter().position(|t| t == w).unwrap();
            for w in m {
                assert_eq!(toks.iter().filter(|t| *t == w).count(), 1);
            }
            let (a, b, lone) = (pos(&m[c]), pos(&m[(c + 1) % 3]), pos(&m[(c + 2) % 3]));
            assert_eq!(b, a + 1);
            assert!(lone + 1 < a || lone > b + 1);
        }
    }

    #[test]
    fn deterministic_and_validated() {
        let a = generate(&SyntheticSpec::default()).unwrap();
        let b = generate(&SyntheticSpec::default()).unwrap();
        assert_eq!(a.docs, b.docs);
        assert!(generate(&SyntheticSpec { classes: 4, ..Default::default() }).is_err());
        assert!(generate(&SyntheticSpec { min_len: 60, ..Default::default() }).is_err());
    }
}
