//! Score network (a small tanh MLP with hand-written backpropagation),
//! the denoising training loss, and the training loop.
//!
//! The network sees the full flattened state plus sinusoidal time
//! features and predicts only the h-dimensional score of the last block,
//! the one the diffusion acts on. Batch loss terms are computed over
//! fixed-size chunks with per-item seeds drawn up front from the master
//! stream, so parallel and sequential evaluation agree bit for bit.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::dynamics::DriftSpec;
use crate::error::{Error, Result};
use crate::parallel;
use crate::sde::{self, PhaseState};

/// Width of the sinusoidal time embedding: sin and cos of 2^k * t/T for
/// k = 0..7.
pub const TIME_FEATURES: usize = 16;

/// Fixed sinusoidal features of normalized time.
pub fn time_features(t: f64, t_scale: f64) -> [f64; TIME_FEATURES] {
    let u = t / t_scale;
    let mut out = [0.0; TIME_FEATURES];
    let mut freq = 1.0;
    for k in 0..TIME_FEATURES / 2 {
        let arg = freq * u;
        out[2 * k] = arg.sin();
        out[2 * k + 1] = arg.cos();
        freq *= 2.0;
    }
    out
}

/// Multilayer perceptron scoring the last state block.
///
/// `layer_dims[0]` is n*h + TIME_FEATURES and the final entry is h.
/// Parameters are stored flat, per layer: the weight matrix row-major
/// (out x in) followed by the bias. Hidden layers apply tanh; the output
/// layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNet {
    layer_dims: Vec<usize>,
    params: Vec<f64>,
    t_scale: f64,
}

impl ScoreNet {
    pub fn param_count_for(layer_dims: &[usize]) -> usize {
        layer_dims.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    /// Default architecture for an order-n model over h data dimensions.
    pub fn default_dims(n: usize, h: usize) -> Vec<usize> {
        vec![n * h + TIME_FEATURES, 128, 128, 128, h]
    }

    /// Random initialization: weights N(0, 1/fan_in), biases zero. The
    /// output layer is scaled down by 100x so the initial score is near
    /// zero and early training is stable.
    pub fn new(layer_dims: Vec<usize>, t_scale: f64, rng: &mut impl Rng) -> Result<Self> {
        Self::check_dims(&layer_dims, t_scale)?;
        let n_layers = layer_dims.len() - 1;
        let mut params = Vec::with_capacity(Self::param_count_for(&layer_dims));
        for (l, w) in layer_dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut std = (1.0 / fan_in as f64).sqrt();
            if l == n_layers - 1 {
                std *= 0.01;
            }
            for _ in 0..fan_out * fan_in {
                params.push(std * rng.sample::<f64, _>(StandardNormal));
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Ok(ScoreNet {
            layer_dims,
            params,
            t_scale,
        })
    }

    /// All-zero parameters; the network output is identically zero.
    pub fn zeroed(layer_dims: Vec<usize>, t_scale: f64) -> Result<Self> {
        Self::check_dims(&layer_dims, t_scale)?;
        let params = vec![0.0; Self::param_count_for(&layer_dims)];
        Ok(ScoreNet {
            layer_dims,
            params,
            t_scale,
        })
    }

    /// Rebuilds a network from stored pieces, validating the count.
    pub fn from_parts(layer_dims: Vec<usize>, params: Vec<f64>, t_scale: f64) -> Result<Self> {
        Self::check_dims(&layer_dims, t_scale)?;
        let want = Self::param_count_for(&layer_dims);
        if params.len() != want {
            return Err(Error::InvalidSpec(format!(
                "network shape {:?} needs {} parameters, got {}",
                layer_dims,
                want,
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidSpec(
                "network parameters must be finite".into(),
            ));
        }
        Ok(ScoreNet {
            layer_dims,
            params,
            t_scale,
        })
    }

    fn check_dims(layer_dims: &[usize], t_scale: f64) -> Result<()> {
        if layer_dims.len() < 2 || layer_dims.iter().any(|d| *d == 0) {
            return Err(Error::InvalidSpec(
                "network needs at least input and output layers of positive width".into(),
            ));
        }
        if layer_dims[0] <= TIME_FEATURES {
            return Err(Error::InvalidSpec(format!(
                "input width {} leaves no room for the state before {} time features",
                layer_dims[0], TIME_FEATURES
            )));
        }
        if !(t_scale > 0.0 && t_scale.is_finite()) {
            return Err(Error::InvalidSpec("time scale must be positive".into()));
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn t_scale(&self) -> f64 {
        self.t_scale
    }

    pub fn state_dim(&self) -> usize {
        self.layer_dims[0] - TIME_FEATURES
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Forward pass from an assembled input, optionally recording the
    /// post-activation of every hidden layer for backpropagation.
    fn forward_from_input(&self, input: &[f64], mut acts: Option<&mut Vec<Vec<f64>>>) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.layer_dims[0]);
        let n_layers = self.layer_dims.len() - 1;
        let mut offset = 0;
        let mut current: Vec<f64> = input.to_vec();
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let w = &self.params[offset..offset + fan_out * fan_in];
            let b = &self.params[offset + fan_out * fan_in..offset + fan_out * (fan_in + 1)];
            offset += fan_out * (fan_in + 1);
            let mut next = vec![0.0; fan_out];
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let mut acc = b[o];
                for i in 0..fan_in {
                    acc += row[i] * current[i];
                }
                next[o] = if l + 1 < n_layers { acc.tanh() } else { acc };
            }
            if l + 1 < n_layers {
                if let Some(store) = acts.as_deref_mut() {
                    store.push(next.clone());
                }
            }
            current = next;
        }
        current
    }

    /// Accumulates d(loss)/d(params) into `grads` given the input, the
    /// recorded hidden activations, and d(loss)/d(output).
    fn backward(&self, input: &[f64], acts: &[Vec<f64>], dout: &[f64], grads: &mut [f64]) {
        debug_assert_eq!(grads.len(), self.params.len());
        let n_layers = self.layer_dims.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for w in self.layer_dims.windows(2) {
            offsets.push(offset);
            offset += w[1] * (w[0] + 1);
        }
        let mut delta: Vec<f64> = dout.to_vec();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let base = offsets[l];
            let a_prev: &[f64] = if l == 0 { input } else { &acts[l - 1] };
            for o in 0..fan_out {
                let row = base + o * fan_in;
                for i in 0..fan_in {
                    grads[row + i] += delta[o] * a_prev[i];
                }
                grads[base + fan_out * fan_in + o] += delta[o];
            }
            if l > 0 {
                let w = &self.params[base..base + fan_out * fan_in];
                let mut prev = vec![0.0; fan_in];
                for i in 0..fan_in {
                    let mut acc = 0.0;
                    for o in 0..fan_out {
                        acc += w[o * fan_in + i] * delta[o];
                    }
                    // tanh'(z) expressed through the stored activation.
                    prev[i] = acc * (1.0 - a_prev[i] * a_prev[i]);
                }
                delta = prev;
            }
        }
    }
}

fn assemble_input(state: &PhaseState, t: f64, t_scale: f64) -> Vec<f64> {
    let mut input = Vec::with_capacity(state.as_slice().len() + TIME_FEATURES);
    input.extend_from_slice(state.as_slice());
    input.extend_from_slice(&time_features(t, t_scale));
    input
}

/// Deterministic score evaluation: flattened state plus time features
/// through the network. Panics on a state whose size does not match the
/// network input.
pub fn net_forward(net: &ScoreNet, state: &PhaseState, t: f64) -> Vec<f64> {
    assert_eq!(
        state.as_slice().len(),
        net.state_dim(),
        "state size does not match network input"
    );
    net.forward_from_input(&assemble_input(state, t, net.t_scale()), None)
}

/// Training hyperparameters; `l_inv` mirrors the drift spec value used
/// to build the process and is carried here for manifests/checkpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub t_horizon: f64,
    pub l_inv: f64,
    pub alpha: f64,
    pub batch: usize,
    pub iters: usize,
    pub lr: f64,
    pub t_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            t_horizon: 5.0,
            l_inv: 0.5,
            alpha: 0.08,
            batch: 256,
            iters: 20_000,
            lr: 2e-4,
            t_eps: 5e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.t_horizon > 0.0
            && self.l_inv > 0.0
            && self.alpha > 0.0
            && self.lr > 0.0
            && self.t_eps > 0.0;
        if !positive {
            return Err(Error::InvalidSpec(
                "training config values must be positive".into(),
            ));
        }
        if self.t_eps >= self.t_horizon {
            return Err(Error::InvalidSpec("t_eps must be below the horizon".into()));
        }
        if self.batch == 0 {
            return Err(Error::InvalidSpec("batch must be at least 1".into()));
        }
        Ok(())
    }
}

/// One batch item: sampled time, forward draw, network residual; returns
/// the squared residual and accumulates parameter gradients.
fn loss_term(
    net: &ScoreNet,
    spec: &DriftSpec,
    position: &[f64],
    cfg: &TrainConfig,
    seed: u64,
    grads: &mut [f64],
) -> Result<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let t = rng.random_range(cfg.t_eps..cfg.t_horizon);
    let (state, eps_n, ell) = sde::sample_forward(spec, position, t, cfg.alpha, &mut rng)?;
    let input = assemble_input(&state, t, net.t_scale());
    let mut acts = Vec::with_capacity(net.layer_dims().len().saturating_sub(2));
    let s = net.forward_from_input(&input, Some(&mut acts));
    let h = eps_n.len();
    let mut value = 0.0;
    let mut dout = vec![0.0; h];
    for d in 0..h {
        let r = eps_n[d] + ell * s[d];
        value += r * r;
        dout[d] = 2.0 * ell * r;
    }
    net.backward(&input, &acts, &dout, grads);
    Ok(value)
}

fn loss_impl(
    net: &ScoreNet,
    spec: &DriftSpec,
    batch: &[Vec<f64>],
    cfg: &TrainConfig,
    rng: &mut impl Rng,
    parallel: bool,
) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::InvalidSpec("loss batch must be nonempty".into()));
    }
    // Per-item seeds come off the master stream sequentially, so the
    // randomness is identical however the items are later scheduled.
    let items: Vec<(usize, u64)> = (0..batch.len()).map(|i| (i, rng.next_u64())).collect();
    let chunks = parallel::map_chunks(&items, 32, parallel, |chunk| {
        let mut sum = 0.0;
        let mut grads = vec![0.0; net.params().len()];
        for &(i, seed) in chunk {
            match loss_term(net, spec, &batch[i], cfg, seed, &mut grads) {
                Ok(v) => sum += v,
                Err(e) => return Err(e),
            }
        }
        Ok((sum, grads))
    });
    let mut value = 0.0;
    let mut grads = vec![0.0; net.params().len()];
    for chunk in chunks {
        let (s, g) = chunk?;
        value += s;
        for (acc, v) in grads.iter_mut().zip(g.iter()) {
            *acc += v;
        }
    }
    let scale = 1.0 / batch.len() as f64;
    for g in grads.iter_mut() {
        *g *= scale;
    }
    Ok((value * scale, grads))
}

/// Batch denoising loss and its parameter gradient: the mean over the
/// batch of ||eps_n + ell_t * s(x_t, t)||^2 with t ~ U(t_eps, T), where
/// eps_n, ell_t, and x_t come from one closed-form forward draw per item
/// and are treated as constants by the gradient.
pub fn loss(
    net: &ScoreNet,
    spec: &DriftSpec,
    batch: &[Vec<f64>],
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<(f64, Vec<f64>)> {
    loss_impl(net, spec, batch, cfg, rng, parallel::parallel_enabled())
}

/// Same computation as `loss` forced onto one thread; the results agree
/// bit for bit. Kept public for benchmarking the parallel speedup.
pub fn loss_sequential(
    net: &ScoreNet,
    spec: &DriftSpec,
    batch: &[Vec<f64>],
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<(f64, Vec<f64>)> {
    loss_impl(net, spec, batch, cfg, rng, false)
}

/// Runs Adam (beta1 = 0.9, beta2 = 0.999, eps = 1e-8) on the batch loss
/// for `cfg.iters` steps, drawing batches uniformly with replacement.
/// Returns the trained network and a loss trace sampled every 100
/// iterations plus the final one.
pub fn train(
    net: ScoreNet,
    spec: &DriftSpec,
    positions: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<(ScoreNet, Vec<(usize, f64)>)> {
    cfg.validate()?;
    if positions.is_empty() {
        return Err(Error::InvalidSpec("training data must be nonempty".into()));
    }
    let h = net.output_dim();
    if positions.iter().any(|p| p.len() != h) {
        return Err(Error::Dimension(format!(
            "training positions must have {} entries",
            h
        )));
    }
    if spec.n * h != net.state_dim() {
        return Err(Error::Dimension(format!(
            "network input expects state size {}, spec provides {}",
            net.state_dim(),
            spec.n * h
        )));
    }
    let mut net = net;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut m = vec![0.0; net.params.len()];
    let mut v = vec![0.0; net.params.len()];
    let mut trace = Vec::new();
    let (beta1, beta2, adam_eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    for it in 0..cfg.iters {
        let batch: Vec<Vec<f64>> = (0..cfg.batch)
            .map(|_| positions[rng.random_range(0..positions.len())].clone())
            .collect();
        let (value, grads) = loss(&net, spec, &batch, cfg, &mut rng)?;
        if !value.is_finite() {
            return Err(Error::Diverged { step: it });
        }
        let step = (it + 1) as f64;
        let bc1 = 1.0 - beta1.powf(step);
        let bc2 = 1.0 - beta2.powf(step);
        for (((p, g), mi), vi) in net
            .params
            .iter_mut()
            .zip(grads.iter())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * g;
            *vi = beta2 * *vi + (1.0 - beta2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p -= cfg.lr * m_hat / (v_hat.sqrt() + adam_eps);
        }
        if it % 100 == 0 || it + 1 == cfg.iters {
            trace.push((it, value));
        }
    }
    Ok((net, trace))
}
