use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{argmax, batch_probs, DocInput, EncodedDoc, ModelParams};
use crate::embeddings::SequenceMatrix;
use crate::error::{Error, Result};
use crate::neural::{AdamConfig, AdamState, Graph, Mode};

/// Keeps the shuffle/dropout stream apart from the initialisation stream.
const TRAIN_STREAM: u64 = 0x7f4a_7c15_9e37_79b9;

/// Documents with their class indices.
#[derive(Debug, Clone, Copy)]
pub struct LabeledSet<'a> {
    pub docs: &'a [EncodedDoc],
    pub labels: &'a [usize],
}

impl<'a> LabeledSet<'a> {
    pub fn new(docs: &'a [EncodedDoc], labels: &'a [usize]) -> Result<Self> {
        if docs.len() != labels.len() {
            return Err(Error::Shape(format!("{} documents, {} labels", docs.len(), labels.len())));
        }
        Ok(Self { docs, labels })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_acc,val_loss,val_acc,seconds\n");
        for r in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.seconds
            ));
        }
        s
    }

    pub fn mean_epoch_seconds(&self) -> Option<f64> {
        (!self.epochs.is_empty())
            .then(|| self.epochs.iter().map(|r| r.seconds).sum::<f64>() / self.epochs.len() as f64)
    }
}

/// Inputs for a batch. Fully in-vocabulary documents gather trainable rows;
/// the rest are materialised against the current embedding rows.
fn batch_inputs<'m>(p: &ModelParams, docs: &[&EncodedDoc], mats: &'m mut Vec<SequenceMatrix>) -> Vec<(Option<Vec<usize>>, usize)> {
    mats.clear();
    docs.iter()
        .map(|d| match d.row_ids() {
            Some(ids) => (Some(ids), 0),
            None => {
                mats.push(p.sequence_matrix(d));
                (None, mats.len() - 1)
            }
        })
        .collect()
}

fn to_doc_inputs<'m>(plan: Vec<(Option<Vec<usize>>, usize)>, mats: &'m [SequenceMatrix]) -> Vec<DocInput<'m>> {
    plan.into_iter()
        .map(|(ids, m)| match ids {
            Some(ids) => DocInput::Rows(ids),
            None => DocInput::Matrix(&mats[m]),
        })
        .collect()
}

/// Loss and accuracy of `set` in inference mode.
fn evaluate(p: &ModelParams, set: LabeledSet<'_>) -> Result<(f64, f64)> {
    let alpha = p.config.alpha::<f32>();
    let mut total = 0.0;
    let mut correct = 0usize;
    let mut mats = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (docs, labels) in set.docs.chunks(p.config.batch_size).zip(set.labels.chunks(p.config.batch_size)) {
        let refs: Vec<&EncodedDoc> = docs.iter().collect();
        let plan = batch_inputs(p, &refs, &mut mats);
        let inputs = to_doc_inputs(plan, &mats);
        let mut g = Graph::new();
        let probs = batch_probs(&mut g, p, &inputs, Mode::Infer, &mut rng)?;
        let loss = g.weighted_ce(probs, labels.to_vec(), alpha.clone())?;
        total += f64::from(g.value(loss).data()[0]) * docs.len() as f64;
        let pv = g.value(probs);
        correct += labels.iter().enumerate().filter(|&(i, &y)| argmax(pv.row(i)) == y).count();
    }
    let n = set.len() as f64;
    Ok((total / n, correct as f64 / n))
}

/// Mini-batch Adam with early stopping on validation loss.
///
/// Validation loss is checked after every epoch; a strict improvement resets
/// the patience counter and snapshots the parameters. Training stops when the
/// counter reaches `patience` or after `max_epochs`, and the snapshot with the
/// lowest validation loss is returned.
pub fn train(params: ModelParams, train: LabeledSet<'_>, val: LabeledSet<'_>) -> Result<(ModelParams, TrainHistory)> {
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let cfg = params.config.clone();
    cfg.validate()?;
    if let Some(&y) = train.labels.iter().chain(val.labels).find(|&&y| y >= cfg.classes) {
        return Err(Error::ClassOutOfRange {
            index: y,
            bound: cfg.classes,
        });
    }
    let mut history = TrainHistory::default();
    if cfg.max_epochs == 0 {
        return Ok((params, history));
    }

    let mut params = params;
    let skip = usize::from(!cfg.fine_tune);
    let shapes: Vec<Vec<usize>> = params.arrays().iter().skip(skip).map(|a| a.shape().to_vec()).collect();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::<f32>::new(adam_cfg, &shape_refs);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ TRAIN_STREAM);
    let alpha = cfg.alpha::<f32>();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut wait = 0;
    let mut mats = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let docs: Vec<&EncodedDoc> = chunk.iter().map(|&i| &train.docs[i]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let plan = batch_inputs(&params, &docs, &mut mats);
            let inputs = to_doc_inputs(plan, &mats);
            let (loss, grads) = {
                let mut g = Graph::new();
                let probs = batch_probs(&mut g, &params, &inputs, Mode::Train, &mut rng)?;
                let loss = g.weighted_ce(probs, labels.clone(), alpha.clone())?;
                let pv = g.value(probs);
                correct += labels.iter().enumerate().filter(|&(i, &y)| argmax(pv.row(i)) == y).count();
                (g.value(loss).data()[0], g.backward(loss)?.grads)
            };
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b + 1,
                    last_good: history
                        .epochs
                        .last()
                        .map_or_else(|| "none".to_string(), |r| r.epoch.to_string()),
                });
            }
            loss_sum += f64::from(loss) * chunk.len() as f64;
            let mut arrays = params.arrays_mut();
            adam.update(&mut arrays[skip..], &grads[skip..])?;
        }
        let n = train.len() as f64;
        let (val_loss, val_acc) = evaluate(&params, val)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: 0,
                last_good: history.best_epoch.map_or_else(|| "none".to_string(), |e| e.to_string()),
            });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_loss,
            val_acc,
            seconds: started.elapsed().as_secs_f64(),
        });
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.4}, val loss {val_loss:.4} acc {val_acc:.4}",
            loss_sum / n,
            correct as f64 / n
        );
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, params.clone()));
            history.best_epoch = Some(epoch);
            wait = 0;
        } else {
            wait += 1;
            if wait >= cfg.patience {
                break;
            }
        }
    }
    let (_, best_params) = best.expect("at least one epoch ran");
    Ok((best_params, history))
}
