use serde::Serialize;
use structconv::training::{
    decompose_model, make_toy_dataset, train, ToyModelSpec, TrainMode, TrainingConfig,
    POST_TRAINING_TOLERANCE,
};

use crate::args::{Mode, TrainArgs};
use crate::output::{emit, Failure};

#[derive(Serialize)]
struct TrainReport {
    mode: TrainMode,
    lambda: f64,
    epochs: usize,
    seed: u64,
    final_residuals: Vec<f64>,
    mean_residual: f64,
    acc_pre: f64,
    acc_post: f64,
}

pub fn run(args: &TrainArgs) -> Result<(), Failure> {
    let mode = match args.mode {
        Mode::Regularized => TrainMode::Regularized,
        Mode::Direct => TrainMode::Direct,
        Mode::Plain => TrainMode::Plain,
    };
    let tc = TrainingConfig {
        lambda: args.lambda,
        learning_rate: args.lr,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
        mode,
    };
    tc.validate()?;
    let data = make_toy_dataset(args.seed)?;
    let outcome = train(ToyModelSpec::student(), &data, &tc)?;
    let log = &outcome.log;
    if let Some(path) = &args.log {
        log.write_jsonl(path)?;
    }
    if let Some(dir) = &args.out {
        decompose_model(&outcome.model, POST_TRAINING_TOLERANCE)?.save(dir)?;
    }
    let s = &log.summary;
    let report = TrainReport {
        mode,
        lambda: tc.effective_lambda(),
        epochs: tc.epochs,
        seed: tc.seed,
        final_residuals: s.final_residuals.clone(),
        mean_residual: s.mean_residual,
        acc_pre: s.acc_pre,
        acc_post: s.acc_post,
    };
    emit(args.format, &report, || {
        format!(
            "mode {:?}, lambda {}, {} epochs, seed {}\nresiduals {:?} (mean {:.4})\naccuracy before decomposition {:.4}\naccuracy after decomposition  {:.4}\n",
            report.mode, report.lambda, report.epochs, report.seed, report.final_residuals,
            report.mean_residual, report.acc_pre, report.acc_post
        )
    })
}
