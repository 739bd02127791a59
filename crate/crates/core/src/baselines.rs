//! TF-IDF features with an exact cosine k-nearest-neighbour classifier.
//!
//! `idf(t) = ln((1 + N) / (1 + df(t))) + 1`; document vectors are raw counts
//! times idf, L2-normalised. Neighbours are ranked by cosine similarity with
//! ties going to the lower training ordinal; vote ties go to the lower class.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{read_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::textprep::TokenSequence;

const MAGIC: &[u8; 4] = b"LXTK";
const VERSION: u32 = 1;

/// Sparse vector as `(term id, weight)` pairs sorted by term id.
pub type SparseVec = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfModel {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    df: Vec<u32>,
    n_docs: usize,
    idf: Vec<f64>,
}

impl TfidfModel {
    fn from_counts(terms: Vec<String>, df: Vec<u32>, n_docs: usize) -> Self {
        let idf = df
            .iter()
            .map(|&d| ((1.0 + n_docs as f64) / (1.0 + f64::from(d))).ln() + 1.0)
            .collect();
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            terms,
            index,
            df,
            n_docs,
            idf,
        }
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.index.get(term).map(|&i| self.idf[i])
    }
}

/// Fits document frequencies on the training documents.
pub fn tfidf_fit(train: &[TokenSequence]) -> Result<TfidfModel> {
    if train.is_empty() {
        return Err(Error::Empty("TF-IDF corpus"));
    }
    let mut df: BTreeMap<&str, u32> = BTreeMap::new();
    for doc in train {
        let mut seen: Vec<&str> = doc.tokens.iter().map(String::as_str).collect();
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_default() += 1;
        }
    }
    let (terms, counts) = df.into_iter().map(|(t, c)| (t.to_string(), c)).unzip();
    Ok(TfidfModel::from_counts(terms, counts, train.len()))
}

/// Count-times-idf vector, L2-normalised; out-of-vocabulary tokens are ignored.
pub fn tfidf_transform(model: &TfidfModel, doc: &TokenSequence) -> SparseVec {
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for t in &doc.tokens {
        if let Some(&i) = model.index.get(t) {
            *counts.entry(i).or_default() += 1.0;
        }
    }
    let mut v: SparseVec = counts.into_iter().map(|(i, c)| (i, c * model.idf[i])).collect();
    let norm = v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|(_, w)| *w /= norm);
    }
    v
}

pub fn sparse_dot(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let (mut i, mut j, mut s) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                s += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnConfig {
    pub k: usize,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { k: 5 }
    }
}

/// Unit-normalised training vectors with labels and an inverted index.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnIndex {
    pub k: usize,
    classes: usize,
    vectors: Vec<SparseVec>,
    labels: Vec<usize>,
    /// term id -> (document ordinal, weight)
    postings: Vec<Vec<(usize, f64)>>,
    majority: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnPrediction {
    pub class: usize,
    /// Vote share per class.
    pub scores: Vec<f64>,
    /// The query had no in-vocabulary terms; `class` is the global majority.
    pub zero_query: bool,
}

impl KnnIndex {
    pub fn new(vectors: Vec<SparseVec>, labels: Vec<usize>, classes: usize, k: usize) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::Empty("KNN index"));
        }
        if vectors.len() != labels.len() {
            return Err(Error::Shape(format!("{} vectors, {} labels", vectors.len(), labels.len())));
        }
        if k == 0 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::ClassOutOfRange { index: y, bound: classes });
        }
        let n_terms = vectors
            .iter()
            .flat_map(|v| v.iter().map(|&(t, _)| t + 1))
            .max()
            .unwrap_or(0);
        let mut postings = vec![Vec::new(); n_terms];
        for (d, v) in vectors.iter().enumerate() {
            for &(t, w) in v {
                postings[t].push((d, w));
            }
        }
        let mut counts = vec![0usize; classes];
        for &y in &labels {
            counts[y] += 1;
        }
        // First maximum: ties go to the lower class index.
        let majority = (0..classes).fold(0, |best, c| if counts[c] > counts[best] { c } else { best });
        Ok(Self {
            k,
            classes,
            vectors,
            labels,
            postings,
            majority,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Training ordinals flagged as zero vectors.
    pub fn zero_vectors(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.vectors[i].is_empty()).collect()
    }

    pub fn majority_class(&self) -> usize {
        self.majority
    }
}

/// Majority vote over the `k` most cosine-similar training vectors.
pub fn knn_classify(index: &KnnIndex, query: &[(usize, f64)], k: usize) -> Result<KnnPrediction> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    if query.iter().all(|&(_, w)| w == 0.0) {
        log::warn!("query has no in-vocabulary terms; predicting the majority class");
        let mut scores = vec![0.0; index.classes];
        scores[index.majority] = 1.0;
        return Ok(KnnPrediction {
            class: index.majority,
            scores,
            zero_query: true,
        });
    }
    let mut sims = vec![0.0f64; index.len()];
    for &(t, w) in query {
        if let Some(list) = index.postings.get(t) {
            for &(d, dw) in list {
                sims[d] += w * dw;
            }
        }
    }
    let by_rank = |a: &usize, b: &usize| sims[*b].total_cmp(&sims[*a]).then(a.cmp(b));
    let mut order: Vec<usize> = (0..index.len()).collect();
    let k = k.min(order.len());
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, by_rank);
        order.truncate(k);
    }
    order.sort_by(by_rank);
    let mut votes = vec![0usize; index.classes];
    for &d in &order {
        votes[index.labels[d]] += 1;
    }
    let class = (0..index.classes).fold(0, |best, c| if votes[c] > votes[best] { c } else { best });
    Ok(KnnPrediction {
        class,
        scores: votes.iter().map(|&v| v as f64 / k as f64).collect(),
        zero_query: false,
    })
}

/// Fitted TF-IDF model plus its KNN index.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnClassifier {
    pub tfidf: TfidfModel,
    pub index: KnnIndex,
}

impl KnnClassifier {
    pub fn fit(train: &[TokenSequence], labels: &[usize], classes: usize, cfg: KnnConfig) -> Result<Self> {
        let tfidf = tfidf_fit(train)?;
        let vectors = train.iter().map(|d| tfidf_transform(&tfidf, d)).collect();
        let index = KnnIndex::new(vectors, labels.to_vec(), classes, cfg.k)?;
        Ok(Self { tfidf, index })
    }

    pub fn predict(&self, doc: &TokenSequence) -> Result<KnnPrediction> {
        knn_classify(&self.index, &tfidf_transform(&self.tfidf, doc), self.index.k)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.json(&serde_json::json!({
            "k": self.index.k,
            "classes": self.index.classes,
            "n_docs": self.tfidf.n_docs,
        }))?;
        w.u64(self.tfidf.terms.len() as u64);
        for (t, &d) in self.tfidf.terms.iter().zip(&self.tfidf.df) {
            w.str(t);
            w.u32(d);
        }
        w.u64(self.index.len() as u64);
        for (v, &y) in self.index.vectors.iter().zip(&self.index.labels) {
            w.u32(y as u32);
            w.u64(v.len() as u64);
            for &(t, x) in v {
                w.u32(t as u32);
                w.u64(x.to_bits());
            }
        }
        Ok(w.into_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            k: usize,
            classes: usize,
            n_docs: usize,
        }
        let mut r = Reader::open(bytes, MAGIC, VERSION)?;
        let h: Header = r.json()?;
        let bound = bytes.len() as u64;
        let n_terms = r.count("term", bound)?;
        let mut terms = Vec::with_capacity(n_terms);
        let mut df = Vec::with_capacity(n_terms);
        for _ in 0..n_terms {
            terms.push(r.str()?);
            df.push(r.u32()?);
        }
        let n = r.count("document", bound)?;
        let mut vectors = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            labels.push(r.u32()? as usize);
            let nnz = r.count("entry", bound)?;
            let v = (0..nnz)
                .map(|_| Ok((r.u32()? as usize, f64::from_bits(r.u64()?))))
                .collect::<Result<SparseVec>>()?;
            if v.iter().any(|&(t, _)| t >= n_terms) {
                return Err(Error::Corrupt("term id out of range".into()));
            }
            vectors.push(v);
        }
        r.finish()?;
        let tfidf = TfidfModel::from_counts(terms, df, h.n_docs);
        let index = KnnIndex::new(vectors, labels, h.classes, h.k).map_err(|e| Error::Corrupt(e.to_string()))?;
        Ok(Self { tfidf, index })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}
