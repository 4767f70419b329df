use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::TcnModel;
use super::TcnConfig;
use crate::corpus::{evaluation_windows, training_windows, DatasetSplit, EncodedSequence, MAX_SEQ_LEN};
use crate::error::{Error, Result};
use crate::kv::Kv;
use crate::nn::{Adam, Params, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Windows per optimizer step.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub window_len: usize,
    pub stride: usize,
    pub seed: u64,
    /// Stop as soon as the validation loss falls below this value.
    pub stop_below: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 1,
            max_epochs: 100,
            patience: 5,
            window_len: MAX_SEQ_LEN,
            stride: MAX_SEQ_LEN,
            seed: 0,
            stop_below: None,
        }
    }
}

impl TrainConfig {
    pub fn to_kv(&self) -> Kv {
        let mut kv = Kv::new();
        kv.set("learning_rate", self.learning_rate)
            .set("batch_size", self.batch_size)
            .set("max_epochs", self.max_epochs)
            .set("patience", self.patience)
            .set("window_len", self.window_len)
            .set("stride", self.stride)
            .set("stop_below", self.stop_below.map_or("none".into(), |v| v.to_string()));
        kv
    }

    pub fn from_kv(kv: &Kv) -> Result<Self> {
        let mut c = Self::default();
        kv.read_into("learning_rate", &mut c.learning_rate)?;
        kv.read_into("batch_size", &mut c.batch_size)?;
        kv.read_into("max_epochs", &mut c.max_epochs)?;
        kv.read_into("patience", &mut c.patience)?;
        kv.read_into("window_len", &mut c.window_len)?;
        kv.read_into("stride", &mut c.stride)?;
        match kv.get("stop_below") {
            None | Some("none") => {}
            Some(_) => c.stop_below = kv.parse_opt("stop_below")?,
        }
        Ok(c)
    }
}

/// Patience-based early stopping on a loss that should decrease.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_loss: f64,
    /// 1-based epoch of the best loss so far (0 before the first update).
    pub best_epoch: usize,
    pub epochs_without_improvement: usize,
    epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            epochs_without_improvement: 0,
            epoch: 0,
        }
    }

    /// Records one epoch; returns whether it improved on the best loss.
    pub fn update(&mut self, loss: f64) -> bool {
        self.epoch += 1;
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_epoch = self.epoch;
            self.epochs_without_improvement = 0;
            true
        } else {
            self.epochs_without_improvement += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.epochs_without_improvement >= self.patience
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory {
    pub epochs: Vec<EpochRecord>,
}

impl LossHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for r in &self.epochs {
            let _ = writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.val_loss);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S: Scalar> {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: TcnModel<S>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub history: LossHistory,
}

/// Mean per-character cross-entropy of `seq` in evaluation mode.
pub fn evaluate_loss<S: Scalar>(model: &TcnModel<S>, seq: &EncodedSequence, window_len: usize) -> Result<f64> {
    let windows = evaluation_windows(seq, window_len);
    if windows.is_empty() {
        return Err(Error::InsufficientData("sequence too short to evaluate".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for w in &windows {
        total += model.loss(w.input, w.target)?;
        count += w.target.len();
    }
    Ok(total / count as f64)
}

/// Trains a freshly initialised model.
pub fn train<S: Scalar>(
    config: &TcnConfig,
    train_config: &TrainConfig,
    split: &DatasetSplit,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let model = TcnModel::new(config.clone(), &mut rng)?;
    train_model(model, train_config, split, on_epoch)
}

/// Trains `model` with Adam, shuffling windows every epoch, and keeps the
/// parameters of the epoch with the lowest validation loss.
pub fn train_model<S: Scalar>(
    mut model: TcnModel<S>,
    tc: &TrainConfig,
    split: &DatasetSplit,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome<S>> {
    if tc.window_len > model.config.max_seq_len {
        return Err(Error::InvalidConfig(format!(
            "window length {} exceeds the model's maximum sequence length {}",
            tc.window_len, model.config.max_seq_len
        )));
    }
    let windows: Vec<_> = training_windows(&split.train, tc.window_len, tc.stride).collect();
    if windows.is_empty() {
        return Err(Error::InsufficientData(format!(
            "training part of {} ids holds no window of {}",
            split.train.len(),
            tc.window_len
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed.wrapping_add(0x7c3));
    let mut adam = Adam::new(tc.learning_rate);
    let mut grads = model.zeros_like();
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut stopper = EarlyStopping::new(tc.patience);
    let mut best = model.clone();
    let mut history = LossHistory::default();
    let batch = tc.batch_size.max(1);

    for epoch in 1..=tc.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_count = 0usize;
        for chunk in order.chunks(batch) {
            grads.zero();
            let positions: usize = chunk.iter().map(|&i| windows[i].target.len()).sum();
            let scale = S::of(1.0 / positions as f64);
            let mut batch_loss = 0.0;
            for &i in chunk {
                let w = &windows[i];
                batch_loss += model.accumulate_gradients(w.input, w.target, Some(&mut rng), &mut grads, scale)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    context: format!("TCN training, epoch {epoch}"),
                    loss: batch_loss,
                });
            }
            adam.update(&mut model, &grads);
            epoch_loss += batch_loss;
            epoch_count += positions;
        }
        let train_loss = epoch_loss / epoch_count as f64;
        let val_loss = evaluate_loss(&model, &split.validation, tc.window_len)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                context: format!("TCN validation, epoch {epoch}"),
                loss: val_loss,
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
        };
        history.epochs.push(record);
        on_epoch(&record);
        if stopper.update(val_loss) {
            best = model.clone();
        }
        if stopper.should_stop() || tc.stop_below.is_some_and(|t| val_loss < t) {
            break;
        }
    }
    Ok(TrainOutcome {
        model: best,
        best_epoch: stopper.best_epoch,
        best_val_loss: stopper.best_loss,
        history,
    })
}
