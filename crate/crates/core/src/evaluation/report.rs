//! Plain-text reports: `name=value` lines plus CSV sidecars.

use std::fmt::Write as _;
use std::path::Path;

use super::{BenchReport, Evaluation, MetricsReport, RocReport};
use crate::corpus::LabelMap;
use crate::error::{Error, Result};

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Lowercase ASCII alphanumerics; anything else becomes `_`.
pub fn sanitize_label(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

pub fn metrics_text(r: &MetricsReport, labels: &LabelMap) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k}={v}");
    };
    kv("samples", r.samples.to_string());
    kv("accuracy", format!("{:.6}", r.accuracy));
    for (name, a) in [("macro", &r.macro_avg), ("weighted", &r.weighted)] {
        kv(&format!("{name}_precision"), format!("{:.6}", a.precision));
        kv(&format!("{name}_recall"), format!("{:.6}", a.recall));
        kv(&format!("{name}_f1"), format!("{:.6}", a.f1));
    }
    kv(
        "macro_auc",
        r.macro_auc.map(|a| format!("{a:.6}")).unwrap_or_else(|| "undefined".into()),
    );
    for (c, m) in r.per_class.iter().enumerate() {
        let l = sanitize_label(labels.label(c).unwrap_or("?"));
        kv(&format!("support_{l}"), m.support.to_string());
        kv(&format!("precision_{l}"), format!("{:.6}", m.precision));
        kv(&format!("recall_{l}"), format!("{:.6}", m.recall));
        kv(&format!("f1_{l}"), format!("{:.6}", m.f1));
        if m.precision_undefined {
            kv(&format!("precision_undefined_{l}"), "true".into());
        }
        if m.recall_undefined {
            kv(&format!("recall_undefined_{l}"), "true".into());
        }
        let auc = r.per_class_auc.get(c).copied().flatten();
        kv(
            &format!("auc_{l}"),
            auc.map(|a| format!("{a:.6}")).unwrap_or_else(|| "undefined".into()),
        );
    }
    s
}

pub fn write_metrics_report(path: &Path, r: &MetricsReport, labels: &LabelMap) -> Result<()> {
    write(path, &metrics_text(r, labels))
}

/// One `roc_<label>.csv` per scored class with columns `fpr,tpr,threshold`.
pub fn write_roc_csvs(dir: &Path, roc: &RocReport, labels: &LabelMap) -> Result<()> {
    for (c, curve) in roc.classes.iter().enumerate() {
        let Some(curve) = curve else { continue };
        let mut s = String::from("fpr,tpr,threshold\n");
        for p in &curve.points {
            let _ = writeln!(s, "{},{},{}", p.fpr, p.tpr, p.threshold);
        }
        let name = sanitize_label(labels.label(c).unwrap_or("?"));
        write(&dir.join(format!("roc_{name}.csv")), &s)?;
    }
    Ok(())
}

/// `report.txt`, `confusion.csv` and the ROC curves.
pub fn write_evaluation(dir: &Path, eval: &Evaluation, labels: &LabelMap) -> Result<()> {
    write_metrics_report(&dir.join("report.txt"), &eval.metrics, labels)?;
    write(&dir.join("confusion.csv"), &eval.confusion.to_csv())?;
    write_roc_csvs(dir, &eval.roc, labels)
}

/// `bench.csv` with columns `rep,doc,ms` and a `bench.txt` summary.
pub fn write_bench(dir: &Path, b: &BenchReport) -> Result<()> {
    let mut csv = String::from("rep,doc,ms\n");
    for (i, ms) in b.samples_ms.iter().enumerate() {
        let _ = writeln!(csv, "{},{},{ms}", i / b.docs, i % b.docs);
    }
    write(&dir.join("bench.csv"), &csv)?;
    let mut s = String::new();
    let _ = writeln!(s, "docs={}\nreps={}\nwarmup={}", b.docs, b.reps, b.warmup);
    let _ = writeln!(s, "mean_ms={:.6}\nmedian_ms={:.6}\np95_ms={:.6}", b.mean_ms, b.median_ms, b.p95_ms);
    let _ = writeln!(s, "docs_per_second={:.3}", b.docs_per_second);
    let _ = writeln!(s, "parameters={}", b.parameters);
    let _ = writeln!(s, "parameters_without_embeddings={}", b.parameters_without_embeddings);
    if let Some(e) = b.epoch_seconds {
        let _ = writeln!(s, "epoch_seconds={e:.3}");
    }
    let _ = writeln!(s, "machine={}", b.machine);
    write(&dir.join("bench.txt"), &s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::Evaluation;

    #[test]
    fn labels_are_sanitized() {
        assert_eq!(sanitize_label("Cited / Applied"), "cited___applied");
    }

    #[test]
    fn evaluation_files() {
        let dir = tempfile::tempdir().unwrap();
        let labels = LabelMap::from_labels(vec!["applied".into(), "cited".into()]).unwrap();
        let scores = vec![vec![0.9, 0.1], vec![0.3, 0.7], vec![0.6, 0.4]];
        let eval = Evaluation::from_scores(scores, vec![0, 1, 1], 2).unwrap();
        write_evaluation(dir.path(), &eval, &labels).unwrap();
        let report = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
        assert!(report.lines().all(|l| l.split_once('=').is_some()));
        assert!(report.contains("accuracy=0.666667"));
        assert!(report.contains("auc_cited=1.000000"));
        let conf = std::fs::read_to_string(dir.path().join("confusion.csv")).unwrap();
        assert_eq!(conf, "1,0\n1,1\n");
        let roc = std::fs::read_to_string(dir.path().join("roc_applied.csv")).unwrap();
        assert!(roc.starts_with("fpr,tpr,threshold\n0,0,inf\n"));
    }
}
