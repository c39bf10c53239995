use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use rand::Rng as _;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::seeds;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn next_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Offsets of one LSTM layer's tensors in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerLayout {
    pub input_dim: usize,
    pub hidden: usize,
    /// Input kernel, `4h x d` row-major, gate blocks ordered input, forget, cell, output.
    pub w_x: Range<usize>,
    /// Recurrent kernel, `4h x h` row-major.
    pub w_h: Range<usize>,
    pub bias: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub layers: Vec<LayerLayout>,
    pub head_w: Range<usize>,
    pub head_b: usize,
    pub len: usize,
}

impl Layout {
    pub fn new(config: &ModelConfig) -> Self {
        let mut offset = 0;
        let mut take = |n: usize| {
            let r = offset..offset + n;
            offset += n;
            r
        };
        let mut layers = Vec::with_capacity(config.hidden.len());
        let mut input_dim = config.input_dim;
        for &hidden in &config.hidden {
            layers.push(LayerLayout {
                input_dim,
                hidden,
                w_x: take(4 * hidden * input_dim),
                w_h: take(4 * hidden * hidden),
                bias: take(4 * hidden),
            });
            input_dim = hidden;
        }
        let head_w = take(input_dim);
        let head_b = take(1).start;
        Layout {
            layers,
            head_w,
            head_b,
            len: offset,
        }
    }

    /// Ranges holding kernel weights (L2-penalized); biases are excluded.
    pub fn kernel_ranges(&self) -> Vec<Range<usize>> {
        let mut out: Vec<_> = self
            .layers
            .iter()
            .flat_map(|l| [l.w_x.clone(), l.w_h.clone()])
            .collect();
        out.push(self.head_w.clone());
        out
    }
}

/// All trainable weights in one flat `f64` vector, addressed through [`Layout`].
///
/// Flat order: for each layer, input kernel, recurrent kernel, bias; then the
/// head weights and head bias. This is also the checkpoint payload order.
#[derive(Debug, Clone)]
pub struct ModelParams {
    config: ModelConfig,
    layout: Layout,
    data: Vec<f64>,
    version: u64,
    /// Per layer, the input and recurrent kernels transposed to `d x 4h` and
    /// `h x 4h`; rebuilt lazily after every mutation.
    transposed: OnceLock<Vec<(Vec<f64>, Vec<f64>)>>,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.data == other.data
    }
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        Ok(ModelParams {
            data: vec![0.0; layout.len],
            layout,
            config: config.clone(),
            version: next_version(),
            transposed: OnceLock::new(),
        })
    }

    pub fn from_vec(config: &ModelConfig, data: Vec<f64>) -> Result<Self> {
        let mut p = ModelParams::zeros(config)?;
        if data.len() != p.data.len() {
            return Err(Error::invalid(format!(
                "parameter vector has {} values, config needs {}",
                data.len(),
                p.data.len()
            )));
        }
        p.data = data;
        Ok(p)
    }

    /// Glorot-uniform kernels, zero biases except a forget-gate bias of 1.
    pub fn glorot(config: &ModelConfig, rng: &mut seeds::Rng) -> Result<Self> {
        let mut p = ModelParams::zeros(config)?;
        let layout = p.layout.clone();
        let mut fill = |data: &mut [f64], range: Range<usize>, fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut data[range] {
                *w = rng.random_range(-limit..limit);
            }
        };
        for l in &layout.layers {
            fill(&mut p.data, l.w_x.clone(), l.input_dim, 4 * l.hidden);
            fill(&mut p.data, l.w_h.clone(), l.hidden, 4 * l.hidden);
            let forget = l.bias.start + l.hidden..l.bias.start + 2 * l.hidden;
            p.data[forget].fill(1.0);
        }
        let last = layout.head_w.len();
        fill(&mut p.data, layout.head_w.clone(), last, 1);
        Ok(p)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access; any forward cache taken before this call becomes stale.
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        self.version = next_version();
        self.transposed = OnceLock::new();
        &mut self.data
    }

    pub(crate) fn transposed_kernels(&self, layer: usize) -> (&[f64], &[f64]) {
        let all = self.transposed.get_or_init(|| {
            self.layout
                .layers
                .iter()
                .map(|l| {
                    let t = |range: Range<usize>, cols: usize| {
                        let w = &self.data[range];
                        let rows = w.len() / cols;
                        let mut out = vec![0.0; w.len()];
                        for r in 0..rows {
                            for c in 0..cols {
                                out[c * rows + r] = w[r * cols + c];
                            }
                        }
                        out
                    };
                    (t(l.w_x.clone(), l.input_dim), t(l.w_h.clone(), l.hidden))
                })
                .collect()
        });
        (&all[layer].0, &all[layer].1)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub(crate) fn version(&self) -> u64 {
        self.version
    }

    /// Sum of squared kernel weights (biases excluded).
    pub fn kernel_sq_norm(&self) -> f64 {
        self.layout
            .kernel_ranges()
            .into_iter()
            .flat_map(|r| self.data[r].iter())
            .map(|w| w * w)
            .sum()
    }

    /// Rescale every per-unit fan-in vector of the input and recurrent kernels
    /// whose Euclidean norm exceeds `c` down to norm `c`.
    ///
    /// A fan-in vector is the set of weights feeding one gate unit: a row of
    /// the `4h x d` (or `4h x h`) kernel here, a column in the `d x 4h`
    /// convention used by most frameworks.
    pub fn apply_maxnorm(&mut self, c: f64) -> Result<()> {
        if !(c > 0.0) {
            return Err(Error::invalid(format!(
                "max-norm cap must be positive, got {c}"
            )));
        }
        let layout = self.layout.clone();
        let data = self.as_mut_slice();
        for l in &layout.layers {
            for (range, width) in [(l.w_x.clone(), l.input_dim), (l.w_h.clone(), l.hidden)] {
                for unit in data[range].chunks_mut(width) {
                    let norm = unit.iter().map(|w| w * w).sum::<f64>().sqrt();
                    if norm > c {
                        let scale = c / norm;
                        unit.iter_mut().for_each(|w| *w *= scale);
                    }
                }
            }
        }
        Ok(())
    }

    /// Largest fan-in norm across all constrained kernels.
    pub fn max_unit_norm(&self) -> f64 {
        self.layout
            .layers
            .iter()
            .flat_map(|l| {
                [(l.w_x.clone(), l.input_dim), (l.w_h.clone(), l.hidden)]
                    .into_iter()
                    .flat_map(|(r, width)| {
                        self.data[r]
                            .chunks(width)
                            .map(|u| u.iter().map(|w| w * w).sum::<f64>().sqrt())
                            .collect::<Vec<_>>()
                    })
            })
            .fold(0.0, f64::max)
    }
}
