//! Forward pass, loss and backpropagation through time.

use rand::Rng as _;

use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::seeds;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` inside the loss.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline(always)]
fn dot_body(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let j = 8 * i;
        for k in 0..8 {
            acc[k] += a[j + k] * b[j + k];
        }
    }
    let mut tail = 0.0;
    for j in 8 * chunks..a.len() {
        tail += a[j] * b[j];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline(always)]
fn axpy_body(out: &mut [f64], g: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += g * v;
    }
}

/// `out += W^T g` for a row-major `g.len() x out.len()` matrix.
#[inline(always)]
fn matvec_t_add_body(out: &mut [f64], w: &[f64], g: &[f64]) {
    let cols = out.len();
    if cols == 0 {
        return;
    }
    for (row, &gr) in w.chunks_exact(cols).zip(g) {
        if gr != 0.0 {
            axpy_body(out, gr, row);
        }
    }
}

/// `W += g x^T`.
#[inline(always)]
fn outer_add_body(w: &mut [f64], g: &[f64], x: &[f64]) {
    let cols = x.len();
    if cols == 0 {
        return;
    }
    for (row, &gr) in w.chunks_exact_mut(cols).zip(g) {
        if gr != 0.0 {
            axpy_body(row, gr, x);
        }
    }
}

// The same kernels compiled for AVX2. No FMA: results are bit-identical to
// the portable path.
#[cfg(target_arch = "x86_64")]
mod avx2 {
    #[target_feature(enable = "avx2")]
    pub unsafe fn dot(a: &[f64], b: &[f64]) -> f64 {
        super::dot_body(a, b)
    }

    #[target_feature(enable = "avx2")]
    pub unsafe fn matvec_t_add(out: &mut [f64], w: &[f64], g: &[f64]) {
        super::matvec_t_add_body(out, w, g)
    }

    #[target_feature(enable = "avx2")]
    pub unsafe fn outer_add(w: &mut [f64], g: &[f64], x: &[f64]) {
        super::outer_add_body(w, g, x)
    }
}

macro_rules! dispatch {
    ($name:ident, $body:ident, ($($arg:ident: $ty:ty),*) $(-> $ret:ty)?) => {
        #[inline]
        fn $name($($arg: $ty),*) $(-> $ret)? {
            #[cfg(target_arch = "x86_64")]
            if std::arch::is_x86_feature_detected!("avx2") {
                // SAFETY: the CPU supports AVX2.
                return unsafe { avx2::$name($($arg),*) };
            }
            $body($($arg),*)
        }
    };
}

dispatch!(dot, dot_body, (a: &[f64], b: &[f64]) -> f64);
dispatch!(matvec_t_add, matvec_t_add_body, (out: &mut [f64], w: &[f64], g: &[f64]));
dispatch!(outer_add, outer_add_body, (w: &mut [f64], g: &[f64], x: &[f64]));

/// Inverted-dropout masks: one per timestep on every non-final layer's output
/// sequence, plus one on the top layer's last hidden state. Kept units carry
/// `1 / (1 - rate)`, dropped units 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub between: Vec<Vec<Vec<f64>>>,
    pub top: Option<Vec<f64>>,
}

impl DropoutMasks {
    pub fn none() -> Self {
        DropoutMasks {
            between: Vec::new(),
            top: None,
        }
    }

    pub fn sample(params: &ModelParams, seq_len: usize, rate: f64, rng: &mut seeds::Rng) -> Self {
        if rate == 0.0 {
            return DropoutMasks::none();
        }
        let keep = 1.0 / (1.0 - rate);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    if rng.random::<f64>() < rate {
                        0.0
                    } else {
                        keep
                    }
                })
                .collect()
        };
        let layers = &params.layout().layers;
        let between = layers[..layers.len() - 1]
            .iter()
            .map(|l| (0..seq_len).map(|_| draw(l.hidden)).collect())
            .collect();
        let top = Some(draw(layers.last().unwrap().hidden));
        DropoutMasks { between, top }
    }
}

#[derive(Debug, Clone)]
struct LayerTrace {
    /// Layer inputs per timestep (after the previous layer's dropout).
    inputs: Vec<Vec<f64>>,
    /// Post-activation gates per timestep: `[i, f, g, o]` blocks of `h`.
    gates: Vec<Vec<f64>>,
    /// Cell states, index 0 is the zero initial state.
    cells: Vec<Vec<f64>>,
    /// Hidden states, index 0 is the zero initial state.
    hidden: Vec<Vec<f64>>,
    tanh_cells: Vec<Vec<f64>>,
}

/// Everything `backward` needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    params_version: u64,
    layers: Vec<LayerTrace>,
    masks: DropoutMasks,
    head_input: Vec<f64>,
    pub probability: f64,
}

impl ForwardCache {
    /// Hidden state of `layer` after `t` steps (`t = 0` is the zero state).
    pub fn hidden_state(&self, layer: usize, t: usize) -> &[f64] {
        &self.layers[layer].hidden[t]
    }

    pub fn cell_state(&self, layer: usize, t: usize) -> &[f64] {
        &self.layers[layer].cells[t]
    }
}

fn check_sequence(params: &ModelParams, sequence: &[Vec<f64>]) -> Result<()> {
    if sequence.is_empty() {
        return Err(Error::invalid("sequence must have at least one timestep"));
    }
    let d = params.config().input_dim;
    if let Some(row) = sequence.iter().find(|r| r.len() != d) {
        return Err(Error::invalid(format!(
            "timestep has {} features, model expects {d}",
            row.len()
        )));
    }
    Ok(())
}

/// Run the network with explicit dropout masks (`DropoutMasks::none()` for inference).
pub fn forward_with_masks(
    params: &ModelParams,
    sequence: &[Vec<f64>],
    masks: DropoutMasks,
) -> Result<ForwardCache> {
    check_sequence(params, sequence)?;
    let data = params.as_slice();
    let layout = params.layout();
    let steps = sequence.len();
    let mut traces = Vec::with_capacity(layout.layers.len());
    let mut inputs: Vec<Vec<f64>> = sequence.to_vec();

    for (li, l) in layout.layers.iter().enumerate() {
        let h = l.hidden;
        let bias = &data[l.bias.clone()];
        // W x computed as a sum of columns, which vectorizes better than row dots
        let (wt_x, wt_h) = params.transposed_kernels(li);
        let mut trace = LayerTrace {
            inputs: Vec::with_capacity(steps),
            gates: Vec::with_capacity(steps),
            cells: vec![vec![0.0; h]],
            hidden: vec![vec![0.0; h]],
            tanh_cells: Vec::with_capacity(steps),
        };
        for x in inputs.drain(..) {
            let mut z = bias.to_vec();
            matvec_t_add(&mut z, wt_x, &x);
            matvec_t_add(&mut z, wt_h, trace.hidden.last().unwrap());
            for v in &mut z[..2 * h] {
                *v = sigmoid(*v);
            }
            for v in &mut z[2 * h..3 * h] {
                *v = v.tanh();
            }
            for v in &mut z[3 * h..] {
                *v = sigmoid(*v);
            }
            let c_prev = trace.cells.last().unwrap();
            let c: Vec<f64> = (0..h)
                .map(|j| z[h + j] * c_prev[j] + z[j] * z[2 * h + j])
                .collect();
            let tc: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
            let hid: Vec<f64> = (0..h).map(|j| z[3 * h + j] * tc[j]).collect();
            trace.inputs.push(x);
            trace.gates.push(z);
            trace.cells.push(c);
            trace.tanh_cells.push(tc);
            trace.hidden.push(hid);
        }
        inputs = trace.hidden[1..].to_vec();
        if let Some(layer_masks) = masks.between.get(li) {
            for (x, m) in inputs.iter_mut().zip(layer_masks) {
                x.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
            }
        }
        traces.push(trace);
    }

    let mut head_input = traces.last().unwrap().hidden[steps].clone();
    if let Some(m) = &masks.top {
        head_input.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
    }
    let logit = dot(&data[layout.head_w.clone()], &head_input) + data[layout.head_b];
    Ok(ForwardCache {
        params_version: params.version(),
        layers: traces,
        masks,
        head_input,
        probability: sigmoid(logit),
    })
}

/// Forward pass. Train mode draws fresh dropout masks from `rng`; infer mode is deterministic.
pub fn forward(
    params: &ModelParams,
    sequence: &[Vec<f64>],
    mode: Mode,
    rng: &mut seeds::Rng,
) -> Result<ForwardCache> {
    let masks = match mode {
        Mode::Train => DropoutMasks::sample(params, sequence.len(), params.config().dropout, rng),
        Mode::Infer => DropoutMasks::none(),
    };
    forward_with_masks(params, sequence, masks)
}

pub fn infer(params: &ModelParams, sequence: &[Vec<f64>]) -> Result<f64> {
    Ok(forward_with_masks(params, sequence, DropoutMasks::none())?.probability)
}

pub fn bce(prob: f64, target: f64) -> f64 {
    let p = prob.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// Binary cross-entropy plus `l2 * sum(kernel weights^2)`.
pub fn loss(prob: f64, target: f64, params: &ModelParams, l2: f64) -> f64 {
    let penalty = if l2 == 0.0 {
        0.0
    } else {
        l2 * params.kernel_sq_norm()
    };
    bce(prob, target) + penalty
}

/// Add `2 * l2 * w` to the kernel entries of `grad`.
pub fn add_l2_grad(params: &ModelParams, l2: f64, grad: &mut [f64]) {
    if l2 == 0.0 {
        return;
    }
    let data = params.as_slice();
    for r in params.layout().kernel_ranges() {
        for i in r {
            grad[i] += 2.0 * l2 * data[i];
        }
    }
}

/// Accumulate `scale * dBCE/dparams` for one sample into `grad`.
pub fn backward_into(
    params: &ModelParams,
    cache: &ForwardCache,
    target: f64,
    scale: f64,
    grad: &mut [f64],
) -> Result<()> {
    if cache.params_version != params.version() {
        return Err(Error::invalid(
            "stale forward cache: parameters changed since the forward pass",
        ));
    }
    if grad.len() != params.len() {
        return Err(Error::invalid(
            "gradient buffer does not match the parameter layout",
        ));
    }
    let data = params.as_slice();
    let layout = params.layout();
    let n_layers = layout.layers.len();
    let steps = cache.layers[0].inputs.len();

    // d(BCE)/d(logit) for a sigmoid output
    let dlogit = scale * (cache.probability - target);
    for (g, x) in grad[layout.head_w.clone()]
        .iter_mut()
        .zip(&cache.head_input)
    {
        *g += dlogit * x;
    }
    grad[layout.head_b] += dlogit;

    // gradient w.r.t. each layer's output sequence, filled top-down
    let top_h = layout.layers[n_layers - 1].hidden;
    let mut d_out: Vec<Vec<f64>> = vec![vec![0.0; top_h]; steps];
    for (j, w) in data[layout.head_w.clone()].iter().enumerate() {
        let m = cache.masks.top.as_ref().map_or(1.0, |m| m[j]);
        d_out[steps - 1][j] = dlogit * w * m;
    }

    for li in (0..n_layers).rev() {
        let l = &layout.layers[li];
        let trace = &cache.layers[li];
        let h = l.hidden;
        let (w_x, w_h) = (&data[l.w_x.clone()], &data[l.w_h.clone()]);
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut d_in: Vec<Vec<f64>> = vec![vec![0.0; l.input_dim]; steps];
        let mut dz = vec![0.0; 4 * h];

        for t in (0..steps).rev() {
            let gates = &trace.gates[t];
            let c_prev = &trace.cells[t];
            let tc = &trace.tanh_cells[t];
            for j in 0..h {
                let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                let dh = d_out[t][j] + dh_next[j];
                let dc = dc_next[j] + dh * o * (1.0 - tc[j] * tc[j]);
                dz[j] = dc * g * i * (1.0 - i);
                dz[h + j] = dc * c_prev[j] * f * (1.0 - f);
                dz[2 * h + j] = dc * i * (1.0 - g * g);
                dz[3 * h + j] = dh * tc[j] * o * (1.0 - o);
                dc_next[j] = dc * f;
            }
            outer_add(&mut grad[l.w_x.clone()], &dz, &trace.inputs[t]);
            outer_add(&mut grad[l.w_h.clone()], &dz, &trace.hidden[t]);
            add_slice(&mut grad[l.bias.clone()], &dz);
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            matvec_t_add(&mut dh_next, w_h, &dz);
            if li > 0 {
                matvec_t_add(&mut d_in[t], w_x, &dz);
            }
        }

        if li > 0 {
            // replay the dropout applied to this layer's inputs
            if let Some(masks) = cache.masks.between.get(li - 1) {
                for (d, m) in d_in.iter_mut().zip(masks) {
                    d.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
                }
            }
            d_out = d_in;
        }
    }
    Ok(())
}

fn add_slice(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Full gradient of [`loss`] for one sample, L2 term included.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    target: f64,
    l2: f64,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; params.len()];
    backward_into(params, cache, target, 1.0, &mut grad)?;
    add_l2_grad(params, l2, &mut grad);
    Ok(grad)
}
