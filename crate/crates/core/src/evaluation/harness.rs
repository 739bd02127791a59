use std::hint::black_box;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{confusion, metrics, roc_auc, ConfusionMatrix, MetricsReport, RocReport};
use crate::baselines::KnnClassifier;
use crate::cnn::{self, argmax, count_parameters, ModelConfig, TrainHistory};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::pipeline::{fit_cnn, Classifier, Prepared, TokenizedSplit};
use crate::textprep::{PrepConfig, TokenSequence};

/// Predictions and every derived measurement for one labelled split.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub truths: Vec<usize>,
    pub predictions: Vec<usize>,
    pub scores: Vec<Vec<f32>>,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsReport,
    pub roc: RocReport,
}

impl Evaluation {
    /// Predicts the highest-scoring class of each document.
    pub fn from_scores(scores: Vec<Vec<f32>>, truths: Vec<usize>, classes: usize) -> Result<Self> {
        let predictions = scores.iter().map(|s| argmax(s)).collect();
        Self::new(scores, predictions, truths, classes)
    }

    pub fn new(scores: Vec<Vec<f32>>, predictions: Vec<usize>, truths: Vec<usize>, classes: usize) -> Result<Self> {
        let confusion = confusion(&predictions, &truths, classes)?;
        let roc = roc_auc(&scores, &truths)?;
        let metrics = metrics(&confusion)?.with_roc(&roc);
        Ok(Self {
            truths,
            predictions,
            scores,
            confusion,
            metrics,
            roc,
        })
    }

    pub fn accuracy(&self) -> f64 {
        self.metrics.accuracy
    }
}

pub fn evaluate_classifier(clf: &Classifier, split: &TokenizedSplit) -> Result<Evaluation> {
    let scores = clf.predict_batch(&split.tokens)?;
    Evaluation::from_scores(scores, split.labels.clone(), clf.labels.len())
}

/// Scores are neighbour vote shares.
pub fn evaluate_knn(knn: &KnnClassifier, split: &TokenizedSplit) -> Result<Evaluation> {
    let mut scores = Vec::with_capacity(split.len());
    let mut predictions = Vec::with_capacity(split.len());
    for doc in &split.tokens {
        let p = knn.predict(doc)?;
        scores.push(p.scores.iter().map(|&s| s as f32).collect());
        predictions.push(p.class);
    }
    Evaluation::new(scores, predictions, split.labels.clone(), knn.index.classes())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub kernels: Vec<usize>,
    pub test_accuracy: Option<f64>,
    /// Trainable parameters excluding the embedding matrix.
    pub parameters: Option<u64>,
    pub epochs: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// `kernels,test_accuracy,parameters,epochs,error`, kernels space-separated.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kernels,test_accuracy,parameters,epochs,error\n");
        for r in &self.rows {
            let k: Vec<String> = r.kernels.iter().map(usize::to_string).collect();
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                k.join(" "),
                r.test_accuracy.map(|a| format!("{a:.6}")).unwrap_or_default(),
                r.parameters.map(|p| p.to_string()).unwrap_or_default(),
                r.epochs,
                r.error.as_deref().unwrap_or("").replace([',', '\n'], " "),
            ));
        }
        s
    }

    /// Human-readable table.
    pub fn render(&self) -> String {
        let mut s = format!("{:<14}{:>10}{:>12}{:>8}\n", "kernels", "accuracy", "params", "epochs");
        for r in &self.rows {
            let k = format!("{:?}", r.kernels);
            match (&r.error, r.test_accuracy, r.parameters) {
                (None, Some(a), Some(p)) => {
                    s.push_str(&format!("{k:<14}{:>10.4}{p:>12}{:>8}\n", a, r.epochs));
                }
                _ => s.push_str(&format!("{k:<14}  failed: {}\n", r.error.as_deref().unwrap_or("unknown"))),
            }
        }
        s
    }
}

/// Trains one model per kernel set with every other setting taken from
/// `base`, and scores each on the test split. A failed run fills its row
/// with the error and the sweep continues.
pub fn ablate(
    kernel_sets: &[Vec<usize>],
    base: &ModelConfig,
    data: &Prepared,
    table: Option<&EmbeddingTable>,
    prep: &PrepConfig,
) -> Result<AblationTable> {
    if kernel_sets.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one kernel set".into()));
    }
    let mut rows = Vec::with_capacity(kernel_sets.len());
    for kernels in kernel_sets {
        let cfg = ModelConfig {
            kernels: kernels.clone(),
            ..base.clone()
        };
        let run = fit_cnn(&cfg, data, table, prep).and_then(|(clf, history)| {
            let eval = evaluate_classifier(&clf, &data.test)?;
            Ok((eval.accuracy(), count_parameters(&clf.params, false), history.epochs.len()))
        });
        rows.push(match run {
            Ok((acc, params, epochs)) => AblationRow {
                kernels: kernels.clone(),
                test_accuracy: Some(acc),
                parameters: Some(params),
                epochs,
                error: None,
            },
            Err(e) => {
                log::warn!("ablation run {kernels:?} failed: {e}");
                AblationRow {
                    kernels: kernels.clone(),
                    test_accuracy: None,
                    parameters: None,
                    epochs: 0,
                    error: Some(e.to_string()),
                }
            }
        });
    }
    Ok(AblationTable { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Robustness {
    pub sigma: f64,
    pub clean_accuracy: f64,
    pub noisy_accuracy: f64,
    pub clean_scores: Vec<Vec<f32>>,
    pub noisy_scores: Vec<Vec<f32>>,
}

/// Adds zero-mean Gaussian noise of standard deviation `sigma` to every
/// dimension of every real token row (padding untouched) at inference, and
/// compares accuracy against the unperturbed matrices.
pub fn noise_robustness(clf: &Classifier, split: &TokenizedSplit, sigma: f64, seed: u64) -> Result<Robustness> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidConfig(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if split.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut clean_scores, mut noisy_scores) = (Vec::new(), Vec::new());
    let (mut clean_hits, mut noisy_hits) = (0usize, 0usize);
    for (doc, &y) in split.tokens.iter().zip(&split.labels) {
        let mut m = clf.sequence_matrix(doc);
        let clean = clf.predict_matrix(&m)?;
        if sigma > 0.0 {
            let filled = m.len * m.x.shape()[1];
            for v in &mut m.x.data_mut()[..filled] {
                *v += normal.sample(&mut rng) as f32;
            }
        }
        let noisy = clf.predict_matrix(&m)?;
        clean_hits += usize::from(argmax(&clean) == y);
        noisy_hits += usize::from(argmax(&noisy) == y);
        clean_scores.push(clean);
        noisy_scores.push(noisy);
    }
    let n = split.len() as f64;
    Ok(Robustness {
        sigma,
        clean_accuracy: clean_hits as f64 / n,
        noisy_accuracy: noisy_hits as f64 / n,
        clean_scores,
        noisy_scores,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub docs: usize,
    pub reps: usize,
    pub warmup: usize,
    /// Per-document milliseconds, repetition-major.
    pub samples_ms: Vec<f64>,
    pub mean_ms: f64,
    pub median_ms: f64,
    /// Nearest-rank 95th percentile.
    pub p95_ms: f64,
    pub docs_per_second: f64,
    pub parameters: u64,
    pub parameters_without_embeddings: u64,
    pub epoch_seconds: Option<f64>,
    pub machine: String,
}

/// OS, architecture, logical cores and CPU model where available.
pub fn machine_description() -> String {
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    format!("{} {} {cores} threads, {cpu}", std::env::consts::OS, std::env::consts::ARCH)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Times single-document inference (token lookup plus forward pass) on one
/// dedicated thread. `warmup` untimed passes over `docs` run first.
pub fn latency_bench(
    clf: &Classifier,
    docs: &[TokenSequence],
    reps: usize,
    warmup: usize,
    history: Option<&TrainHistory>,
) -> Result<BenchReport> {
    if docs.is_empty() {
        return Err(Error::Empty("benchmark documents"));
    }
    if reps == 0 {
        return Err(Error::InvalidConfig("benchmark needs at least one repetition".into()));
    }
    let samples_ms = std::thread::scope(|s| {
        s.spawn(|| -> Result<Vec<f64>> {
            for _ in 0..warmup {
                for d in docs {
                    black_box(clf.predict_matrix(&clf.sequence_matrix(d))?);
                }
            }
            let mut out = Vec::with_capacity(reps * docs.len());
            for _ in 0..reps {
                for d in docs {
                    let t = Instant::now();
                    black_box(clf.predict_matrix(&clf.sequence_matrix(black_box(d)))?);
                    out.push(t.elapsed().as_secs_f64() * 1e3);
                }
            }
            Ok(out)
        })
        .join()
        .expect("benchmark thread panicked")
    })?;
    let mut sorted = samples_ms.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean_ms = sorted.iter().sum::<f64>() / n as f64;
    let rank = (0.95 * n as f64).ceil() as usize;
    Ok(BenchReport {
        docs: docs.len(),
        reps,
        warmup,
        mean_ms,
        median_ms: median(&sorted),
        p95_ms: sorted[rank.clamp(1, n) - 1],
        docs_per_second: if mean_ms > 0.0 { 1e3 / mean_ms } else { f64::INFINITY },
        parameters: cnn::count_parameters(&clf.params, true),
        parameters_without_embeddings: cnn::count_parameters(&clf.params, false),
        epoch_seconds: history.and_then(TrainHistory::mean_epoch_seconds),
        machine: machine_description(),
        samples_ms,
    })
}
