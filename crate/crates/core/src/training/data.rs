use super::model::{argmax, Classifier, ToyModel, ToyModelSpec};
use crate::error::{Error, Result};
use crate::tensor::{SplitMix64, Tensor};

pub const TRAIN_SIZE: usize = 2048;
pub const TEST_SIZE: usize = 512;
/// Allowed relative deviation of each class count from uniform.
pub const BALANCE_TOLERANCE: f64 = 0.10;
const MAX_ATTEMPTS: u64 = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        self.labels.iter().for_each(|&l| counts[l] += 1);
        counts
    }

    fn balanced(&self, classes: usize) -> bool {
        let uniform = self.len() as f64 / classes as f64;
        self.class_counts(classes)
            .iter()
            .all(|&n| (n as f64 - uniform).abs() <= BALANCE_TOLERANCE * uniform)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyDataset {
    pub train: Split,
    pub test: Split,
    /// The frozen network whose argmax defines the labels.
    pub teacher: ToyModel,
    pub classes: usize,
}

/// Synthetic 4-class task: `3×8×8` inputs uniform in `[-1, 1)`, labelled by
/// a random teacher. The teacher's output biases are tuned so that every
/// class holds within ±10% of its uniform share in both splits; if that
/// fails the teacher and inputs are redrawn from the next derived seed.
pub fn make_toy_dataset(seed: u64) -> Result<ToyDataset> {
    let spec = ToyModelSpec::teacher();
    let classes = spec.classes;
    for attempt in 0..MAX_ATTEMPTS {
        let s = SplitMix64::derive(seed, attempt);
        let mut teacher = ToyModel::init(spec.clone(), false, &mut SplitMix64::new(SplitMix64::derive(s, 1)))?;
        let mut rng = SplitMix64::new(SplitMix64::derive(s, 2));
        let inputs: Vec<Tensor> = (0..TRAIN_SIZE + TEST_SIZE)
            .map(|_| Tensor::from_fn(&spec.input, |_| rng.next_signed()))
            .collect();
        let logits: Vec<Tensor> = inputs.iter().map(|x| teacher.logits(x)).collect::<Result<_>>()?;
        let Some(bias) = balance(&logits, classes) else { continue };
        set_output_bias(&mut teacher, &bias);

        let labels: Vec<usize> = logits
            .iter()
            .map(|z| argmax(&z.data().iter().zip(&bias).map(|(a, b)| a + b).collect::<Vec<_>>()))
            .collect();
        let mut inputs = inputs;
        let test_inputs = inputs.split_off(TRAIN_SIZE);
        let mut labels = labels;
        let test_labels = labels.split_off(TRAIN_SIZE);
        let train = Split { inputs, labels };
        let test = Split { inputs: test_inputs, labels: test_labels };
        if train.balanced(classes) && test.balanced(classes) {
            return Ok(ToyDataset { train, test, teacher, classes });
        }
    }
    Err(Error::InvalidConfig(format!(
        "no class-balanced teacher found for seed {seed} in {MAX_ATTEMPTS} attempts"
    )))
}

/// Additive logit offsets that equalize class frequencies, found by nudging
/// under-represented classes up. `None` if it does not settle.
fn balance(logits: &[Tensor], classes: usize) -> Option<Vec<f64>> {
    let n = logits.len() as f64;
    let spread = {
        let all: Vec<f64> = logits.iter().flat_map(|z| z.data().iter().copied()).collect();
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len() as f64).sqrt()
    };
    let mut bias = vec![0.0; classes];
    for _ in 0..500 {
        let mut counts = vec![0usize; classes];
        for z in logits {
            let shifted: Vec<f64> = z.data().iter().zip(&bias).map(|(a, b)| a + b).collect();
            counts[argmax(&shifted)] += 1;
        }
        let worst = counts
            .iter()
            .map(|&c| (c as f64 / n - 1.0 / classes as f64).abs())
            .fold(0.0, f64::max);
        if worst * classes as f64 <= 0.02 {
            return Some(bias);
        }
        for (b, &c) in bias.iter_mut().zip(&counts) {
            *b += spread * (1.0 / classes as f64 - c as f64 / n);
        }
    }
    None
}

fn set_output_bias(teacher: &mut ToyModel, offset: &[f64]) {
    use super::model::Params;
    let last = teacher.params_mut().iter_mut().rev().flatten().next().expect("output layer");
    if let Params::Dense { bias, .. } = last {
        bias.data_mut().iter_mut().zip(offset).for_each(|(b, o)| *b += o);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// Accuracy and mean cross-entropy over a split.
pub fn evaluate(model: &impl Classifier, split: &Split) -> Result<Evaluation> {
    let mut correct = 0usize;
    let mut loss = 0.0;
    for (x, &y) in split.inputs.iter().zip(&split.labels) {
        let z = model.logits(x)?;
        correct += (argmax(z.data()) == y) as usize;
        loss += super::nn::softmax_cross_entropy(&z, y).0;
    }
    let n = split.len().max(1) as f64;
    Ok(Evaluation { accuracy: correct as f64 / n, loss: loss / n })
}
