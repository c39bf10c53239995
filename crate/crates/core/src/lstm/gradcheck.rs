//! Central finite-difference check of the analytic gradient.

use rand::Rng as _;

use super::network::{backward, forward_with_masks, loss, DropoutMasks};
use super::params::{Layout, ModelParams};
use super::ModelConfig;
use crate::error::Result;
use crate::seeds;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub n_params: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradcheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// Denominator floor for [`relative_error`]. Central differences at `eps = 1e-5`
/// carry roundoff near 1e-11, so gradients much smaller than this floor
/// are compared on absolute error instead.
pub const GRADIENT_FLOOR: f64 = 1e-6;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRADIENT_FLOOR)
}

/// Compare `backward` against central differences of `loss` for every
/// parameter, on random weights in `[-0.5, 0.5)`, a random `seq_len`-step
/// input and a random label. Dropout masks (if the config has dropout) are
/// drawn once and replayed for every perturbed evaluation.
pub fn check(config: &ModelConfig, seq_len: usize, seed: u64, eps: f64) -> Result<GradcheckReport> {
    config.validate()?;
    let mut rng = seeds::rng(seed);
    let n = Layout::new(config).len;
    let mut params = ModelParams::from_vec(
        config,
        (0..n).map(|_| rng.random_range(-0.5..0.5)).collect(),
    )?;
    let sequence: Vec<Vec<f64>> = (0..seq_len)
        .map(|_| {
            (0..config.input_dim)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect()
        })
        .collect();
    let target = if rng.random::<bool>() { 1.0 } else { 0.0 };
    let masks = DropoutMasks::sample(&params, seq_len, config.dropout, &mut rng);

    let cache = forward_with_masks(&params, &sequence, masks.clone())?;
    let analytic = backward(&params, &cache, target, config.l2)?;

    let objective = |p: &ModelParams| -> Result<f64> {
        let prob = forward_with_masks(p, &sequence, masks.clone())?.probability;
        Ok(loss(prob, target, p, config.l2))
    };
    let mut numeric = Vec::with_capacity(n);
    for i in 0..n {
        let orig = params.as_slice()[i];
        params.as_mut_slice()[i] = orig + eps;
        let up = objective(&params)?;
        params.as_mut_slice()[i] = orig - eps;
        let down = objective(&params)?;
        params.as_mut_slice()[i] = orig;
        numeric.push((up - down) / (2.0 * eps));
    }

    let (worst_index, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &b)| relative_error(a, b))
        .enumerate()
        .fold(
            (0, 0.0),
            |best, (i, e)| if e > best.1 { (i, e) } else { best },
        );
    Ok(GradcheckReport {
        n_params: n,
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}
