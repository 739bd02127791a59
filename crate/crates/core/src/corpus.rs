//! Corpus ingestion, label encoding and stratified partitioning.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One case-law record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub case_id: String,
    pub outcome: String,
    pub title: String,
    pub body: String,
}

/// Documents plus the count of rows dropped during ingestion.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DocumentSet {
    pub docs: Vec<Document>,
    pub dropped: usize,
}

impl DocumentSet {
    pub fn new(docs: Vec<Document>) -> Self {
        Self { docs, dropped: 0 }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.docs.iter().map(|d| d.case_id.as_str())
    }
}

const FIELDS: [&str; 4] = ["case_id", "case_outcome", "case_title", "case_text"];

fn normalize_header(h: &str) -> String {
    let mut out = String::with_capacity(h.len());
    for c in h.trim().trim_start_matches('\u{feff}').chars() {
        if c.is_alphanumeric() {
            out.extend(c.to_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

/// Reads the corpus CSV at `path`.
///
/// Header names are matched case-insensitively, with spaces and underscores
/// treated alike, so both `case_id` and `Case ID` are accepted.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<DocumentSet> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(file)
}

/// Same as [`load_corpus`] over any reader.
pub fn read_corpus<R: Read>(reader: R) -> Result<DocumentSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);

    let headers = rdr
        .headers()
        .map_err(|e| Error::MalformedHeader(e.to_string()))?
        .clone();
    let names: Vec<String> = headers.iter().map(normalize_header).collect();
    let mut cols = [0usize; 4];
    for (slot, field) in cols.iter_mut().zip(FIELDS) {
        *slot = names.iter().position(|n| n == field).ok_or_else(|| {
            Error::MalformedHeader(format!(
                "missing column {field:?} (found {:?})",
                headers.iter().collect::<Vec<_>>()
            ))
        })?;
    }

    let mut set = DocumentSet::default();
    let mut seen = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        // Header is row 1.
        let row = i + 2;
        let rec = rec.map_err(|e| Error::BadRow {
            row,
            message: e.to_string(),
        })?;
        let get = |c: usize| rec.get(c).unwrap_or("").to_string();
        let doc = Document {
            case_id: get(cols[0]).trim().to_string(),
            outcome: get(cols[1]).trim().to_string(),
            title: get(cols[2]),
            body: get(cols[3]),
        };
        if doc.body.trim().is_empty() || doc.outcome.is_empty() {
            set.dropped += 1;
            continue;
        }
        if doc.case_id.is_empty() {
            return Err(Error::BadRow {
                row,
                message: "empty case_id".into(),
            });
        }
        if !seen.insert(doc.case_id.clone()) {
            return Err(Error::BadRow {
                row,
                message: format!("duplicate case_id {:?}", doc.case_id),
            });
        }
        set.docs.push(doc);
    }
    Ok(set)
}

/// Writes documents in the ingestion CSV layout.
pub fn write_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let to_io = |e: csv::Error| Error::io(path, e.into());
    w.write_record(FIELDS).map_err(to_io)?;
    for d in docs {
        w.write_record([&d.case_id, &d.outcome, &d.title, &d.body])
            .map_err(to_io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Bijection between label texts and contiguous class indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    labels: Vec<String>,
}

impl LabelMap {
    /// Builds a map from already-ordered distinct labels.
    pub fn from_labels(labels: Vec<String>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::TooFewLabels(labels.len()));
        }
        let distinct: HashSet<&String> = labels.iter().collect();
        if distinct.len() != labels.len() {
            return Err(Error::InvalidConfig("duplicate label in label map".into()));
        }
        Ok(Self { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Assigns class indices by ascending lexicographic order of the label text.
pub fn encode_labels(set: &DocumentSet) -> Result<LabelMap> {
    if set.is_empty() {
        return Err(Error::Empty("document set"));
    }
    let distinct: BTreeSet<&str> = set.docs.iter().map(|d| d.outcome.as_str()).collect();
    LabelMap::from_labels(distinct.into_iter().map(str::to_string).collect())
}

/// Partition parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub validation_fraction_of_train: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.75,
            validation_fraction_of_train: 0.10,
            seed: 42,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train_fraction must lie in (0,1), got {}",
                self.train_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction_of_train) {
            return Err(Error::InvalidConfig(format!(
                "validation_fraction_of_train must lie in [0,1), got {}",
                self.validation_fraction_of_train
            )));
        }
        Ok(())
    }
}

// Absorbs binary representation error so that e.g. 1000 * (1 - 0.8) floors to 200.
fn floor_count(x: f64) -> usize {
    (x + 1e-6).floor().max(0.0) as usize
}

/// Core stratified partition. Returns `(kept, held_out)`, where `held_out`
/// receives `holdout_fraction` of each class.
///
/// Per-class quotas are floored, then the shortfall against
/// `floor(N * holdout_fraction)` is handed out one document at a time to the
/// classes with the largest fractional remainders (ties to the lower class
/// index). Whatever rounding leaves over stays on the kept side.
fn stratify(
    docs: &[Document],
    holdout_fraction: f64,
    seed: u64,
    min_per_class: usize,
) -> Result<(Vec<Document>, Vec<Document>)> {
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, d) in docs.iter().enumerate() {
        by_class.entry(d.outcome.as_str()).or_default().push(i);
    }
    for (label, members) in &by_class {
        if members.len() < min_per_class {
            return Err(Error::ClassTooSmall {
                label: label.to_string(),
                count: members.len(),
                needed: min_per_class,
            });
        }
    }

    let sizes: Vec<usize> = by_class.values().map(Vec::len).collect();
    let exact: Vec<f64> = sizes
        .iter()
        .map(|&n| n as f64 * holdout_fraction)
        .collect();
    let mut quota: Vec<usize> = exact.iter().map(|&x| floor_count(x)).collect();
    let target = floor_count(docs.len() as f64 * holdout_fraction);
    let mut order: Vec<usize> = (0..quota.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - quota[a] as f64;
        let rb = exact[b] - quota[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut short = target.saturating_sub(quota.iter().sum());
    for &c in order.iter().cycle().take(order.len() * 2) {
        if short == 0 {
            break;
        }
        if quota[c] < sizes[c] && exact[c] > quota[c] as f64 {
            quota[c] += 1;
            short -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut held = vec![false; docs.len()];
    for (members, &q) in by_class.values().zip(&quota) {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        for &i in &shuffled[..q] {
            held[i] = true;
        }
    }

    let mut kept = Vec::with_capacity(docs.len() - target);
    let mut out = Vec::with_capacity(target);
    for (d, h) in docs.iter().zip(held) {
        if h {
            out.push(d.clone());
        } else {
            kept.push(d.clone());
        }
    }
    Ok((kept, out))
}

/// Stratified train/test split. Input order is preserved within each side.
pub fn stratified_split(set: &DocumentSet, spec: &SplitSpec) -> Result<(DocumentSet, DocumentSet)> {
    spec.validate()?;
    let (train, test) = stratify(&set.docs, 1.0 - spec.train_fraction, spec.seed, 2)?;
    Ok((DocumentSet::new(train), DocumentSet::new(test)))
}

/// Carves a stratified validation set out of the training split.
///
/// The carve uses a seed derived from `spec.seed` so that it does not replay
/// the shuffles of the train/test split.
pub fn carve_validation(train: &DocumentSet, spec: &SplitSpec) -> Result<(DocumentSet, DocumentSet)> {
    spec.validate()?;
    if spec.validation_fraction_of_train <= 0.0 {
        return Err(Error::InvalidConfig(
            "validation carve requested with validation_fraction_of_train = 0".into(),
        ));
    }
    let (rest, val) = stratify(
        &train.docs,
        spec.validation_fraction_of_train,
        spec.seed ^ 0x9e37_79b9_7f4a_7c15,
        1,
    )?;
    let remaining: HashSet<&str> = rest.iter().map(|d| d.outcome.as_str()).collect();
    for d in &val {
        if !remaining.contains(d.outcome.as_str()) {
            return Err(Error::ClassTooSmall {
                label: d.outcome.clone(),
                count: 0,
                needed: 1,
            });
        }
    }
    Ok((DocumentSet::new(rest), DocumentSet::new(val)))
}

/// Writes one case id per line.
pub fn write_manifest(path: impl AsRef<Path>, set: &DocumentSet) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for id in set.ids() {
        text.push_str(id);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}
