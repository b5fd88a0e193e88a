use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::{evaluate, ToyDataset};
use super::model::{decompose_model, Params, ToyModel, ToyModelSpec};
use super::sr::{sr_grad, sr_loss};
use crate::error::{Error, Result};
use crate::tensor::{SplitMix64, Tensor};

/// Residual tolerance used for the decomposition at the end of training.
/// Regularized weights are only approximately structured, so everything is
/// accepted and the accuracy change is reported instead.
pub const POST_TRAINING_TOLERANCE: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Full weights with the structural penalty.
    Regularized,
    /// Structured coefficients `α` behind a fixed sum-pool, no penalty.
    Direct,
    /// Full weights, no penalty.
    Plain,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mode: TrainMode,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            learning_rate: 0.05,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            mode: TrainMode::Regularized,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidConfig(format!("lambda {} must be finite and ≥ 0", self.lambda)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch size must be positive".into()));
        }
        Ok(())
    }

    /// The penalty weight actually applied: zero outside regularized mode.
    pub fn effective_lambda(&self) -> f64 {
        match self.mode {
            TrainMode::Regularized => self.lambda,
            TrainMode::Direct | TrainMode::Plain => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's mini-batches.
    pub task_loss: f64,
    /// Unweighted `Σ_l r_l` at the end of the epoch.
    pub sr_loss: f64,
    pub residuals: Vec<f64>,
    pub eval_accuracy: f64,
    pub eval_loss: f64,
}

impl EpochRecord {
    pub fn mean_residual(&self) -> f64 {
        self.residuals.iter().sum::<f64>() / self.residuals.len().max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config: TrainingConfig,
    pub final_residuals: Vec<f64>,
    pub mean_residual: f64,
    /// Test accuracy of the trained network as is.
    pub acc_pre: f64,
    /// Test accuracy after decomposing every layer.
    pub acc_post: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub summary: TrainSummary,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum LogLine {
    Epoch(EpochRecord),
    Summary(TrainSummary),
}

impl TrainLog {
    /// One JSON object per line: every epoch, then the summary.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for e in &self.epochs {
            serde_json::to_writer(&mut out, &LogLine::Epoch(e.clone()))?;
            out.write_all(b"\n")?;
        }
        serde_json::to_writer(&mut out, &LogLine::Summary(self.summary.clone()))?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let mut epochs = Vec::new();
        let mut summary = None;
        for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: LogLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                column: e.column(),
                message: e.to_string(),
            })?;
            match parsed {
                LogLine::Epoch(e) => epochs.push(e),
                LogLine::Summary(s) => summary = Some(s),
            }
        }
        let summary = summary.ok_or_else(|| Error::InvalidConfig("log has no summary record".into()))?;
        Ok(Self { epochs, summary })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ToyModel,
    pub log: TrainLog,
}

/// Mini-batch SGD on `L_task + λ·Σ_l r_l`, followed by decomposition of the
/// trained network. Deterministic for a given config.
pub fn train(spec: ToyModelSpec, data: &ToyDataset, tc: &TrainingConfig) -> Result<TrainOutcome> {
    tc.validate()?;
    let lambda = tc.effective_lambda();
    let structured = tc.mode == TrainMode::Direct;
    let mut model = ToyModel::init(spec, structured, &mut SplitMix64::new(SplitMix64::derive(tc.seed, 1)))?;
    let cfgs = model.cfgs();
    let mut order_rng = SplitMix64::new(SplitMix64::derive(tc.seed, 2));
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut records = Vec::with_capacity(tc.epochs);

    for epoch in 1..=tc.epochs {
        order_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (step, batch) in order.chunks(tc.batch_size).enumerate() {
            let mut total: Option<Vec<Option<(Tensor, Tensor)>>> = None;
            let mut batch_loss = 0.0;
            for &i in batch {
                let (loss, grads) = model.loss_and_grad(&data.train.inputs[i], data.train.labels[i])?;
                batch_loss += loss;
                match &mut total {
                    None => total = Some(grads),
                    Some(acc) => accumulate(acc, &grads),
                }
            }
            let scale = 1.0 / batch.len() as f64;
            batch_loss *= scale;
            if !batch_loss.is_finite() {
                return Err(Error::Divergence { epoch, step, loss: batch_loss });
            }
            let mut grads = total.expect("non-empty batch");
            let mut trainable = 0;
            for (g, p) in grads.iter_mut().zip(model.params()) {
                let (Some((gw, gb)), Some(p)) = (g.as_mut(), p) else { continue };
                gw.data_mut().iter_mut().for_each(|v| *v *= scale);
                gb.data_mut().iter_mut().for_each(|v| *v *= scale);
                if lambda > 0.0 {
                    let Params::Dense { weight, .. } = p else { unreachable!("penalty on full weights") };
                    let sr = sr_grad(weight, &cfgs[trainable])?;
                    gw.data_mut().iter_mut().zip(sr.data()).for_each(|(v, s)| *v += lambda * s);
                }
                trainable += 1;
            }
            model.apply(&grads, tc.learning_rate);
            loss_sum += batch_loss;
            batches += 1;
        }

        let sr = sr_loss(&model.effective_weights()?, &cfgs)?;
        let eval = evaluate(&model, &data.test)?;
        let record = EpochRecord {
            epoch,
            task_loss: loss_sum / batches as f64,
            sr_loss: sr.total,
            residuals: sr.per_layer,
            eval_accuracy: eval.accuracy,
            eval_loss: eval.loss,
        };
        if !(record.sr_loss.is_finite() && record.eval_loss.is_finite()) {
            return Err(Error::Divergence { epoch, step: batches, loss: record.eval_loss });
        }
        records.push(record);
    }

    let last = records.last().expect("at least one epoch");
    let decomposed = decompose_model(&model, POST_TRAINING_TOLERANCE)?;
    let summary = TrainSummary {
        config: *tc,
        final_residuals: last.residuals.clone(),
        mean_residual: last.mean_residual(),
        acc_pre: last.eval_accuracy,
        acc_post: evaluate(&decomposed, &data.test)?.accuracy,
    };
    Ok(TrainOutcome {
        model,
        log: TrainLog { epochs: records, summary },
    })
}

fn accumulate(acc: &mut [Option<(Tensor, Tensor)>], grads: &[Option<(Tensor, Tensor)>]) {
    for (a, g) in acc.iter_mut().zip(grads) {
        if let (Some((aw, ab)), Some((gw, gb))) = (a.as_mut(), g) {
            aw.data_mut().iter_mut().zip(gw.data()).for_each(|(x, y)| *x += y);
            ab.data_mut().iter_mut().zip(gb.data()).for_each(|(x, y)| *x += y);
        }
    }
}
