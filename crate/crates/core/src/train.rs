//! Mini-batch training with best-validation-loss snapshotting, and
//! evaluation.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::{Dataset, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::model::Model;
use crate::optim::{Optimizer, DEFAULT_LR};
use crate::rng::{self, streams};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Stop after this many consecutive epochs without a new best validation loss.
    #[serde(default)]
    pub patience: Option<usize>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 100,
            batch_size: 64,
            lr: DEFAULT_LR,
            seed: 0,
            patience: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub epoch: usize,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub config_hash: String,
    pub seed: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: Vec<EpochRecord>,
    pub best: Option<BestRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum RecordLine {
    Epoch(EpochRecord),
    Summary {
        config_hash: String,
        seed: u64,
        batch_size: usize,
        lr: f64,
        epochs: usize,
        best: Option<BestRecord>,
    },
}

impl TrainRecord {
    /// One JSON object per epoch followed by a summary object.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(&RecordLine::Epoch(e.clone())).expect("record serializes"));
            out.push('\n');
        }
        let summary = RecordLine::Summary {
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            batch_size: self.batch_size,
            lr: self.lr,
            epochs: self.epochs.len(),
            best: self.best.clone(),
        };
        out.push_str(&serde_json::to_string(&summary).expect("record serializes"));
        out.push('\n');
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut epochs = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str(line)? {
                RecordLine::Epoch(e) => epochs.push(e),
                RecordLine::Summary {
                    config_hash,
                    seed,
                    batch_size,
                    lr,
                    best,
                    ..
                } => {
                    return Ok(TrainRecord {
                        config_hash,
                        seed,
                        batch_size,
                        lr,
                        epochs,
                        best,
                    })
                }
            }
        }
        Err(Error::Data("training record has no summary line".into()))
    }

    /// `epoch,train_loss,val_loss,val_accuracy` table for plotting.
    pub fn write_curve_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "train_loss", "val_loss", "val_accuracy"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.val_loss.to_string(),
                e.val_accuracy.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

/// Mean cross-entropy and accuracy in evaluation mode.
pub fn evaluate(model: &Model, ds: &Dataset) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let mut total = 0.0;
    let mut correct = 0;
    let mut predictions = Vec::with_capacity(ds.len());
    for t in &ds.trials {
        let mut g = Graph::inference(model.params.values());
        let logits = model.forward(&mut g, &t.data, &mut Mode::Eval, None)?;
        let pred = argmax(g.value(logits).data());
        let loss = g.softmax_cross_entropy(logits, t.label)?;
        total += g.value(loss).data()[0];
        correct += usize::from(pred == t.label);
        predictions.push(pred);
    }
    Ok(Evaluation {
        loss: total / ds.len() as f64,
        accuracy: correct as f64 / ds.len() as f64,
        predictions,
    })
}

pub fn evaluate_accuracy(model: &Model, ds: &Dataset) -> Result<f64> {
    Ok(evaluate(model, ds)?.accuracy)
}

/// Cross-entropy of a probability vector, `−ln p[label]`.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::Data(format!("label {label} outside 0..{}", probs.len())));
    }
    Ok(-probs[label].ln())
}

pub fn fit(model: &mut Model, train: &Dataset, val: &Dataset, opts: &TrainOptions) -> Result<TrainRecord> {
    fit_observed(model, train, val, opts, &mut |_| {})
}

/// Shuffled mini-batch training. After every epoch the validation loss is
/// measured and the parameters with the lowest one are kept; the model
/// holds them when this returns.
pub fn fit_observed(
    model: &mut Model,
    train: &Dataset,
    val: &Dataset,
    opts: &TrainOptions,
    observe: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainRecord> {
    let mut record = TrainRecord {
        config_hash: model.config.hash(),
        seed: opts.seed,
        batch_size: opts.batch_size,
        lr: opts.lr,
        epochs: Vec::with_capacity(opts.epochs),
        best: None,
    };
    if opts.epochs == 0 {
        return Ok(record);
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("training and validation sets must be nonempty".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let counts = train.class_counts();
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Data(format!("training set has no '{}' trials", CLASS_NAMES[c])));
    }
    let mut optimizer = Optimizer::new(model.config.minimizer, opts.lr, &model.params);
    let mut shuffle_rng = rng::stream(opts.seed, streams::SHUFFLE);
    let mut dropout_rng = rng::stream(opts.seed, streams::DROPOUT);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best_params: Option<Vec<Tensor>> = None;
    model.params.zero_grads();

    for epoch in 0..opts.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(opts.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let trial = &train.trials[i];
                let (values, grads) = model.params.split_mut();
                let mut g = Graph::new(values);
                let logits = model.arch.forward(&mut g, &trial.data, &mut Mode::Train(&mut dropout_rng), None)?;
                let loss = g.softmax_cross_entropy(logits, trial.label)?;
                batch_loss += g.value(loss).data()[0];
                g.backward(loss)?;
                g.accumulate_param_grads(grads, scale);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    lr: opts.lr,
                });
            }
            loss_sum += batch_loss;
            optimizer.step(&mut model.params)?;
        }
        let eval = evaluate(model, val)?;
        if !eval.loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
                lr: opts.lr,
            });
        }
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss: eval.loss,
            val_accuracy: eval.accuracy,
        };
        observe(&rec);
        if record.best.as_ref().is_none_or(|b| rec.val_loss < b.val_loss) {
            record.best = Some(BestRecord {
                epoch,
                val_loss: rec.val_loss,
                val_accuracy: rec.val_accuracy,
            });
            best_params = Some(model.params.values().to_vec());
        }
        record.epochs.push(rec);
        let best_epoch = record.best.as_ref().map_or(0, |b| b.epoch);
        if opts.patience.is_some_and(|p| epoch - best_epoch >= p) {
            break;
        }
    }
    if let Some(best) = best_params {
        model.params.restore(&best)?;
    }
    Ok(record)
}
