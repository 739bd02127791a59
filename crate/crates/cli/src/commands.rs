//! Command implementations. Each writes its outputs plus the resolved
//! `config.toml` into its output directory and a short summary to `out`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lexcite::baselines::KnnClassifier;
use lexcite::cnn::{self, inverse_frequency_weights, EmbeddingInit, ModelConfig};
use lexcite::corpus::{load_corpus, read_manifest, write_manifest, LabelMap};
use lexcite::embeddings::{train_fasttext, EmbeddingTable};
use lexcite::evaluation::{self, write_bench, write_evaluation};
use lexcite::pipeline::{preprocess, Classifier, Partition, Prepared, TokenizedSplit};
use lexcite::synthetic::write_synthetic_csv;
use lexcite::textprep::{document_text, preprocess_document, PrepConfig, PrepMode, TokenSequence};
use serde::{Deserialize, Serialize};

use crate::config::{ClassWeighting, RunConfig};
use crate::Baseline;

const SPLITS: [&str; 3] = ["train", "val", "test"];

/// One line of a token cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedDoc {
    pub id: String,
    pub split: String,
    pub label: String,
    pub tokens: Vec<String>,
}

pub fn token_cache_path(data: &Path, mode: PrepMode) -> PathBuf {
    data.join(format!("tokens_{mode}.jsonl"))
}

fn out_dir(explicit: Option<PathBuf>, default: PathBuf) -> Result<PathBuf> {
    let dir = explicit.unwrap_or(default);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn prepare(cfg: &RunConfig, corpus: Option<PathBuf>, dir: Option<PathBuf>, out: &mut dyn Write) -> Result<()> {
    let corpus = corpus
        .or_else(|| cfg.paths.corpus.clone())
        .unwrap_or_else(|| cfg.data_dir().join("corpus.csv"));
    let docs = load_corpus(&corpus)?;
    if docs.dropped > 0 {
        log::warn!("{} rows dropped while reading {}", docs.dropped, corpus.display());
    }
    let dir = out_dir(dir, cfg.data_dir().to_path_buf())?;
    let labels = lexcite::corpus::encode_labels(&docs)?;
    let part = lexcite::pipeline::partition(&docs, &cfg.split)?;
    for (name, set) in SPLITS.iter().zip([&part.train, &part.val, &part.test]) {
        write_manifest(dir.join(format!("{name}.txt")), set)?;
    }
    write_text(&dir.join("labels.json"), &serde_json::to_string_pretty(&labels)?)?;

    let mut modes = vec![PrepMode::Stemmed, PrepMode::Lemmatized];
    if !modes.contains(&cfg.prep.mode) {
        modes.push(cfg.prep.mode);
    }
    for mode in modes {
        let mut settings = cfg.prep.clone();
        settings.mode = mode;
        write_token_cache(&token_cache_path(&dir, mode), &part, &settings.build()?)?;
    }
    cfg.echo(&dir)?;
    writeln!(
        out,
        "prepared {} documents ({} labels): train={} val={} test={} -> {}",
        docs.len(),
        labels.len(),
        part.train.len(),
        part.val.len(),
        part.test.len(),
        dir.display()
    )?;
    Ok(())
}

fn write_token_cache(path: &Path, part: &Partition, prep: &PrepConfig) -> Result<()> {
    let file = File::create(path).with_context(|| format!("writing {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for (name, set) in SPLITS.iter().zip([&part.train, &part.val, &part.test]) {
        for d in &set.docs {
            let rec = CachedDoc {
                id: d.case_id.clone(),
                split: name.to_string(),
                label: d.outcome.clone(),
                tokens: preprocess(d, prep).tokens,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Label map and token splits cached by `prepare` for the configured mode.
/// The manifests fix the document order within each split.
pub fn load_prepared(cfg: &RunConfig) -> Result<Prepared> {
    let data = cfg.data_dir();
    let labels_path = data.join("labels.json");
    let text = std::fs::read_to_string(&labels_path)
        .with_context(|| format!("reading {} (run `prepare` first)", labels_path.display()))?;
    let labels: LabelMap = serde_json::from_str(&text)?;
    let mode = cfg.prep.mode;
    let cache = token_cache_path(data, mode);
    let file = File::open(&cache).with_context(|| format!("opening {} (run `prepare --mode {mode}`)", cache.display()))?;
    let mut by_id: HashMap<(String, String), CachedDoc> = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CachedDoc =
            serde_json::from_str(&line).with_context(|| format!("{} line {}", cache.display(), i + 1))?;
        by_id.insert((rec.split.clone(), rec.id.clone()), rec);
    }
    let mut splits = Vec::new();
    for name in SPLITS {
        let ids = read_manifest(data.join(format!("{name}.txt")))?;
        let mut s = TokenizedSplit {
            ids: Vec::new(),
            tokens: Vec::new(),
            labels: Vec::new(),
        };
        for id in ids {
            let rec = by_id
                .remove(&(name.to_string(), id.clone()))
                .with_context(|| format!("document {id} of the {name} manifest is missing from {}", cache.display()))?;
            let y = labels
                .index(&rec.label)
                .with_context(|| format!("document {id} has label {:?} outside labels.json", rec.label))?;
            s.ids.push(id);
            s.tokens.push(TokenSequence::new(rec.tokens, mode));
            s.labels.push(y);
        }
        splits.push(s);
    }
    let test = splits.pop().unwrap();
    let val = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok(Prepared {
        labels,
        train,
        val,
        test,
    })
}

pub fn train_embeddings(cfg: &RunConfig, dir: Option<PathBuf>, out: &mut dyn Write) -> Result<()> {
    let data = load_prepared(cfg)?;
    let table = train_fasttext(&data.train.tokens, &cfg.embeddings, cfg.seed)?;
    let path = match dir {
        Some(d) => {
            let name = cfg.embeddings_path().file_name().map(PathBuf::from);
            out_dir(Some(d), PathBuf::new())?.join(name.unwrap_or_else(|| "embeddings.lxem".into()))
        }
        None => cfg.embeddings_path(),
    };
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    table.save(&path)?;
    cfg.echo(parent)?;
    writeln!(
        out,
        "embeddings: {} words x {} dims -> {}",
        table.vocab().len(),
        table.dim(),
        path.display()
    )?;
    Ok(())
}

/// Model config with class weights resolved against the training labels.
fn model_config(cfg: &RunConfig, data: &Prepared) -> ModelConfig {
    let mut m = cfg.model.clone();
    if cfg.class_weighting == ClassWeighting::InverseFrequency {
        m.class_weights = inverse_frequency_weights(&data.train.labels, data.labels.len());
    }
    m
}

fn pretrained_table(cfg: &RunConfig, init: EmbeddingInit) -> Result<Option<EmbeddingTable>> {
    match init {
        EmbeddingInit::Random => Ok(None),
        EmbeddingInit::Pretrained => {
            let path = cfg.embeddings_path();
            let table = EmbeddingTable::load(&path)
                .with_context(|| format!("loading embeddings {} (run `train-embeddings`)", path.display()))?;
            Ok(Some(table))
        }
    }
}

pub fn train(cfg: &RunConfig, dir: Option<PathBuf>, out: &mut dyn Write) -> Result<()> {
    let data = load_prepared(cfg)?;
    let table = pretrained_table(cfg, cfg.model.embedding_init)?;
    let prep = cfg.prep.build()?;
    let mcfg = model_config(cfg, &data);
    let (clf, history) = lexcite::pipeline::fit_cnn(&mcfg, &data, table.as_ref(), &prep)?;
    let default_dir = cfg.model_path().parent().map(Path::to_path_buf).unwrap_or_default();
    let dir = out_dir(dir, default_dir)?;
    let model_path = dir.join("model.lxcn");
    cnn::save_model(&clf.params, &clf.labels, &model_path)?;
    history.write_csv(&dir.join("history.csv"))?;
    cfg.echo(&dir)?;
    let last = history.epochs.last();
    writeln!(
        out,
        "trained {} epochs (best {}), val_acc={:.4} -> {}",
        history.epochs.len(),
        history.best_epoch.map_or("-".into(), |e| e.to_string()),
        last.map_or(0.0, |r| r.val_acc),
        model_path.display()
    )?;
    Ok(())
}

/// Loads the model and, for pretrained-init models, the table used for
/// out-of-vocabulary tokens, and applies the model's preprocessing mode.
pub fn load_classifier(cfg: &RunConfig) -> Result<Classifier> {
    let path = cfg.model_path();
    let (params, labels) =
        cnn::load_model(&path).with_context(|| format!("loading model {}", path.display()))?;
    let table = pretrained_table(cfg, params.config.embedding_init)?;
    Ok(Classifier::new(params, labels, table, cfg.prep.build()?))
}

/// Prepared data re-read under the model's preprocessing mode.
fn load_for_model(cfg: &RunConfig, clf: &Classifier) -> Result<Prepared> {
    let mut cfg = cfg.clone();
    cfg.prep.mode = clf.params.config.prep_mode;
    let data = load_prepared(&cfg)?;
    clf.check_labels(&data.labels)?;
    Ok(data)
}

pub fn evaluate(cfg: &RunConfig, baseline: Option<Baseline>, dir: Option<PathBuf>, out: &mut dyn Write) -> Result<()> {
    let (eval, labels, dir, robustness) = match baseline {
        Some(Baseline::Knn) => {
            let data = load_prepared(cfg)?;
            let knn = KnnClassifier::fit(&data.train.tokens, &data.train.labels, data.labels.len(), cfg.knn)?;
            let eval = evaluation::evaluate_knn(&knn, &data.test)?;
            let dir = out_dir(dir, cfg.data_dir().join("evaluate-knn"))?;
            (eval, data.labels, dir, None)
        }
        None => {
            let clf = load_classifier(cfg)?;
            let data = load_for_model(cfg, &clf)?;
            let eval = evaluation::evaluate_classifier(&clf, &data.test)?;
            let dir = out_dir(dir, cfg.data_dir().join("evaluate"))?;
            let robustness = cfg
                .evaluation
                .sigma
                .map(|s| evaluation::noise_robustness(&clf, &data.test, s, cfg.seed))
                .transpose()?;
            (eval, data.labels, dir, robustness)
        }
    };
    write_evaluation(&dir, &eval, &labels)?;
    let m = &eval.metrics;
    writeln!(out, "accuracy={:.4}", m.accuracy)?;
    writeln!(out, "macro_f1={:.4}", m.macro_avg.f1)?;
    writeln!(out, "weighted_f1={:.4}", m.weighted.f1)?;
    if let Some(auc) = m.macro_auc {
        writeln!(out, "macro_auc={auc:.4}")?;
    }
    if let Some(r) = robustness {
        let text = format!(
            "sigma={}\nclean_accuracy={:.6}\nnoisy_accuracy={:.6}\n",
            r.sigma, r.clean_accuracy, r.noisy_accuracy
        );
        write_text(&dir.join("robustness.txt"), &text)?;
        writeln!(
            out,
            "noise sigma={}: clean={:.4} noisy={:.4}",
            r.sigma, r.clean_accuracy, r.noisy_accuracy
        )?;
    }
    cfg.echo(&dir)?;
    Ok(())
}

pub fn ablate(cfg: &RunConfig, dir: Option<PathBuf>, out: &mut dyn Write) -> Result<()> {
    let data = load_prepared(cfg)?;
    let table = pretrained_table(cfg, cfg.model.embedding_init)?;
    let prep = cfg.prep.build()?;
    let mcfg = model_config(cfg, &data);
    let result = evaluation::ablate(&cfg.evaluation.ablation_kernels, &mcfg, &data, table.as_ref(), &prep)?;
    let dir = out_dir(dir, cfg.data_dir().join("ablate"))?;
    write_text(&dir.join("ablation.csv"), &result.to_csv())?;
    cfg.echo(&dir)?;
    write!(out, "{}", result.render())?;
    Ok(())
}

/// Mean of the `seconds` column of a training history, if readable.
fn history_epoch_seconds(path: &Path) -> Option<f64> {
    let text = std::fs::read_to_string(path).ok()?;
    let secs: Vec<f64> = text
        .lines()
        .skip(1)
        .filter_map(|l| l.rsplit(',').next()?.parse().ok())
        .collect();
    (!secs.is_empty()).then(|| secs.iter().sum::<f64>() / secs.len() as f64)
}

pub fn bench(cfg: &RunConfig, dir: Option<PathBuf>, out: &mut dyn Write) -> Result<()> {
    let clf = load_classifier(cfg)?;
    let data = load_for_model(cfg, &clf)?;
    let mut report = evaluation::latency_bench(
        &clf,
        &data.test.tokens,
        cfg.evaluation.bench_reps,
        cfg.evaluation.bench_warmup,
        None,
    )?;
    report.epoch_seconds = cfg
        .model_path()
        .parent()
        .and_then(|p| history_epoch_seconds(&p.join("history.csv")));
    let dir = out_dir(dir, cfg.data_dir().join("bench"))?;
    write_bench(&dir, &report)?;
    cfg.echo(&dir)?;
    writeln!(
        out,
        "{} samples: mean={:.4}ms median={:.4}ms p95={:.4}ms ({:.0} docs/s) on {}",
        report.samples_ms.len(),
        report.mean_ms,
        report.median_ms,
        report.p95_ms,
        report.docs_per_second,
        report.machine
    )?;
    Ok(())
}

/// Reads `(id, text)` pairs: a corpus CSV when the file ends in `.csv`,
/// otherwise one document per non-empty line.
fn read_inputs(path: Option<PathBuf>, stdin: &mut dyn BufRead, prep: &PrepConfig) -> Result<Vec<(String, String)>> {
    let path = path.filter(|p| p.as_os_str() != "-");
    if let Some(p) = &path {
        if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            let docs = load_corpus(p)?;
            return Ok(docs
                .docs
                .into_iter()
                .map(|d| (d.case_id, document_text(&d.title, &d.body, prep)))
                .collect());
        }
    }
    let text = match &path {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => {
            let mut s = String::new();
            stdin.read_to_string(&mut s)?;
            s
        }
    };
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| ((i + 1).to_string(), l.to_string()))
        .collect())
}

/// Prints `id<TAB>label<TAB>p_1,...,p_K` per document, probabilities in
/// label-map order.
pub fn classify(cfg: &RunConfig, input: Option<PathBuf>, stdin: &mut dyn BufRead, out: &mut dyn Write) -> Result<()> {
    let clf = load_classifier(cfg)?;
    let docs = read_inputs(input, stdin, &clf.prep)?;
    if docs.is_empty() {
        bail!("no documents to classify");
    }
    for (id, text) in docs {
        let tokens = preprocess_document(&text, &clf.prep);
        let probs = clf.predict_tokens(&tokens)?;
        let label = clf.labels.label(cnn::argmax(&probs)).unwrap_or("?");
        let p: Vec<String> = probs.iter().map(|v| format!("{v:.6}")).collect();
        writeln!(out, "{id}\t{label}\t{}", p.join(","))?;
    }
    Ok(())
}

pub fn make_synthetic(cfg: &RunConfig, dir: Option<PathBuf>, out: &mut dyn Write) -> Result<()> {
    let dir = out_dir(dir, cfg.data_dir().to_path_buf())?;
    let path = dir.join("corpus.csv");
    let corpus = write_synthetic_csv(&path, &cfg.synthetic)?;
    cfg.echo(&dir)?;
    writeln!(out, "wrote {} documents -> {}", corpus.docs.len(), path.display())?;
    Ok(())
}
