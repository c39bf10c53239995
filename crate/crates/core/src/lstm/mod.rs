//! Stacked-LSTM binary classifier with dropout, L2 and max-norm constraints,
//! trained by backpropagation through time and Adam.

mod checkpoint;
pub mod gradcheck;
mod network;
mod params;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::N_FEATURES;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use network::{
    add_l2_grad, backward, backward_into, bce, forward, forward_with_masks, infer, loss,
    DropoutMasks, ForwardCache, Mode, PROB_EPS,
};
pub use params::{LayerLayout, Layout, ModelParams};
pub use train::{
    evaluate_loss, predict, predict_batch, train, EpochStats, TrainHistory, THRESHOLD,
};

/// Parameter total reported for the reference model; no two-layer LSTM with a
/// single sigmoid head on 49 inputs reaches it exactly.
pub const REFERENCE_PARAM_COUNT: usize = 42_689;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub l2: f64,
    pub maxnorm: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: N_FEATURES,
            hidden: vec![64, 32],
            dropout: 0.2,
            l2: 1e-3,
            maxnorm: 3.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input dimension must be positive"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::invalid("every LSTM layer needs at least one unit"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::invalid("L2 strength must be nonnegative"));
        }
        if !(self.maxnorm > 0.0) {
            return Err(Error::invalid("max-norm cap must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 1e-3,
            batch_size: 16,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            split: [0.65, 0.15, 0.20],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::invalid("learning rate must be nonnegative"));
        }
        if self.split.iter().any(|f| !(*f >= 0.0))
            || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::invalid(format!(
                "split fractions {:?} must be nonnegative and sum to 1",
                self.split
            )));
        }
        Ok(())
    }
}

/// `sum over layers of 4h(d + h + 1)`, plus `h_last + 1` for the sigmoid head.
pub fn param_count(config: &ModelConfig) -> usize {
    let mut d = config.input_dim;
    let mut total = 0;
    for &h in &config.hidden {
        total += 4 * h * (d + h + 1);
        d = h;
    }
    total + d + 1
}

/// Two-layer layouts `(h1, h2)` with `h1, h2 <= max_hidden` whose parameter
/// count is closest to `target`, nearest first.
pub fn nearest_two_layer_layouts(
    input_dim: usize,
    target: usize,
    max_hidden: usize,
    take: usize,
) -> Vec<(usize, usize, usize)> {
    let mut all: Vec<(usize, usize, usize)> = (1..=max_hidden)
        .flat_map(|h1| (1..=max_hidden).map(move |h2| (h1, h2)))
        .map(|(h1, h2)| {
            let n = param_count(&ModelConfig {
                input_dim,
                hidden: vec![h1, h2],
                ..ModelConfig::default()
            });
            (h1, h2, n)
        })
        .collect();
    all.sort_by_key(|&(h1, h2, n)| (n.abs_diff(target), h1, h2));
    all.truncate(take);
    all
}

/// One-line note on reproducing the reference parameter total.
pub fn param_count_note(config: &ModelConfig) -> String {
    let n = param_count(config);
    let nearest = nearest_two_layer_layouts(config.input_dim, REFERENCE_PARAM_COUNT, 128, 1)[0];
    format!(
        "parameters: {n} for input {} hidden {:?}; reference total {} is not reconstructable from a two-layer LSTM with a single sigmoid head (nearest two-layer layout [{}, {}] gives {}; [64, 32] plus an unlisted 32-unit dense layer would give exactly {})",
        config.input_dim,
        config.hidden,
        REFERENCE_PARAM_COUNT,
        nearest.0,
        nearest.1,
        nearest.2,
        param_count(&ModelConfig::default()) + 32 * 32 + 32,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_formula() {
        let tiny = ModelConfig {
            input_dim: 1,
            hidden: vec![1],
            ..ModelConfig::default()
        };
        assert_eq!(param_count(&tiny), 14);
        // 4*64*(49+64+1) + 4*32*(64+32+1) + 33
        assert_eq!(4 * 64 * 114, 29_184);
        assert_eq!(4 * 32 * 97, 12_416);
        assert_eq!(param_count(&ModelConfig::default()), 41_633);
    }

    #[test]
    fn reference_total_is_not_a_two_layer_count() {
        let nearest = nearest_two_layer_layouts(49, REFERENCE_PARAM_COUNT, 128, 3);
        assert!(nearest.iter().all(|&(_, _, n)| n != REFERENCE_PARAM_COUNT));
        assert_eq!(nearest[0], (53, 50, 42_687));
        assert!(param_count_note(&ModelConfig::default()).contains("42689"));
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig {
            dropout: 1.0,
            ..ModelConfig::default()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            hidden: vec![],
            ..ModelConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            split: [0.5, 0.2, 0.2],
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
    }
}
