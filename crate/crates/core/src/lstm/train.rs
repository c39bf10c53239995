use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{add_l2_grad, backward_into, bce, forward, infer, Mode};
use super::params::ModelParams;
use super::{ModelConfig, TrainConfig};
use crate::balance::SequenceSample;
use crate::error::{Error, Result};
use crate::features::Label;
use crate::seeds;

/// Decision threshold on the infected-class probability (strict `>`).
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "epoch",
            "train_loss",
            "train_accuracy",
            "val_loss",
            "val_accuracy",
        ])?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.train_accuracy.to_string(),
                opt(e.val_loss),
                opt(e.val_accuracy),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<history>", e))?;
        Ok(())
    }
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(cfg: &TrainConfig, n: usize) -> Self {
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((w, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *w -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

fn check_dataset(samples: &[SequenceSample], config: &ModelConfig) -> Result<()> {
    for s in samples {
        if s.row_width() != config.input_dim {
            return Err(Error::invalid(format!(
                "plant {} has {} features per step, model expects {}",
                s.plant_id,
                s.row_width(),
                config.input_dim
            )));
        }
    }
    Ok(())
}

/// Mean loss (BCE plus L2 penalty) and accuracy in inference mode.
pub fn evaluate_loss(params: &ModelParams, samples: &[SequenceSample]) -> Result<(f64, f64)> {
    let penalty = params.config().l2 * params.kernel_sq_norm();
    let mut loss = 0.0;
    let mut correct = 0usize;
    for s in samples {
        let p = infer(params, &s.matrix)?;
        loss += bce(p, s.label.target());
        correct += (Label::from_positive(p > THRESHOLD) == s.label) as usize;
    }
    let n = samples.len() as f64;
    Ok((loss / n + penalty, correct as f64 / n))
}

/// Mini-batch Adam with max-norm after every update. Fully determined by
/// `train_config.seed`.
pub fn train(
    train_set: &[SequenceSample],
    val_set: &[SequenceSample],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    model_config.validate()?;
    train_config.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let infected = train_set
        .iter()
        .filter(|s| s.label == Label::Infected)
        .count();
    if infected == 0 || infected == train_set.len() {
        return Err(Error::invalid("training split holds a single class"));
    }
    check_dataset(train_set, model_config)?;
    check_dataset(val_set, model_config)?;

    let seed = train_config.seed;
    let mut params = ModelParams::glorot(model_config, &mut seeds::rng_for(seed, "init", 0))?;
    params.apply_maxnorm(model_config.maxnorm)?;
    let mut shuffle_rng = seeds::rng_for(seed, "shuffle", 0);
    let mut dropout_rng = seeds::rng_for(seed, "dropout", 0);
    let mut adam = Adam::new(train_config, params.len());
    let mut grad = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory::default();

    for epoch in 1..=train_config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(train_config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let s = &train_set[i];
                let target = s.label.target();
                let cache = forward(&params, &s.matrix, Mode::Train, &mut dropout_rng)?;
                loss_sum += bce(cache.probability, target);
                correct +=
                    (Label::from_positive(cache.probability > THRESHOLD) == s.label) as usize;
                backward_into(&params, &cache, target, scale, &mut grad)?;
            }
            add_l2_grad(&params, model_config.l2, &mut grad);
            adam.update(params.as_mut_slice(), &grad);
            params.apply_maxnorm(model_config.maxnorm)?;
        }
        let n = train_set.len() as f64;
        let (val_loss, val_accuracy) = if val_set.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate_loss(&params, val_set)?;
            (Some(l), Some(a))
        };
        let train_loss = loss_sum / n + model_config.l2 * params.kernel_sq_norm();
        if !train_loss.is_finite() {
            return Err(Error::Invariant(format!(
                "training loss diverged at epoch {epoch}"
            )));
        }
        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            train_accuracy: correct as f64 / n,
            val_loss,
            val_accuracy,
        });
    }
    Ok((params, history))
}

/// Infected iff the infected-class probability exceeds 0.5.
pub fn predict(params: &ModelParams, sample: &SequenceSample) -> Result<(Label, f64)> {
    let p = infer(params, &sample.matrix)?;
    Ok((Label::from_positive(p > THRESHOLD), p))
}

pub fn predict_batch(
    params: &ModelParams,
    samples: &[SequenceSample],
) -> Result<Vec<(Label, f64)>> {
    samples.iter().map(|s| predict(params, s)).collect()
}
