//! Small dense networks with hand-written reverse-mode gradients and an Adam
//! optimizer.
//!
//! Parameters live in one flat vector. Each layer stores its weight matrix
//! row-major (`fan_out × fan_in`) followed by its bias (`fan_out`).

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }

    fn code(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    fn from_code(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Format(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
}

/// Per-layer outputs of a batched forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    batch: usize,
    layers: Vec<Vec<f64>>,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Row-major `batch × output_dim` network output.
    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("tape holds at least the input")
    }
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

impl Mlp {
    /// All-zero network. `activations` has one entry per layer
    /// (`sizes.len() - 1`).
    pub fn zeros(sizes: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        check_dim(sizes.len() - 1, activations.len())?;
        let params = vec![0.0; param_count(&sizes)];
        Ok(Self {
            sizes,
            activations,
            params,
        })
    }

    /// Hidden layers share `hidden`; the last layer uses `output`. Weights
    /// are uniform in `±√(6/(fan_in+fan_out))`, biases zero.
    pub fn init<R: Rng + ?Sized>(
        sizes: Vec<usize>,
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let n_layers = sizes.len().saturating_sub(1);
        let mut activations = vec![hidden; n_layers];
        if let Some(last) = activations.last_mut() {
            *last = output;
        }
        let mut net = Self::zeros(sizes, activations)?;
        for layer in 0..net.layers() {
            let (fan_in, fan_out) = (net.sizes[layer], net.sizes[layer + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let (w, _) = net.layer_offsets(layer);
            for p in &mut net.params[w..w + fan_in * fan_out] {
                *p = rng.random_range(-limit..=limit);
            }
        }
        Ok(net)
    }

    pub fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_dim(self.params.len(), params.len())?;
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Offsets of the weight block and the bias block of `layer`.
    fn layer_offsets(&self, layer: usize) -> (usize, usize) {
        let start = param_count(&self.sizes[..=layer]);
        (start, start + self.sizes[layer] * self.sizes[layer + 1])
    }

    /// Mutable view of the final layer's `(weights, bias)`.
    pub fn output_layer_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        let last = self.layers() - 1;
        let (w, b) = self.layer_offsets(last);
        let (head, bias) = self.params[w..].split_at_mut(b - w);
        (head, bias)
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(input, 1)?.layers.pop().unwrap())
    }

    /// Forward pass over `batch` row-major inputs.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<Tape> {
        check_dim(batch * self.input_dim(), inputs.len())?;
        let mut layers = Vec::with_capacity(self.sizes.len());
        layers.push(inputs.to_vec());
        for layer in 0..self.layers() {
            let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
            let (w_off, b_off) = self.layer_offsets(layer);
            let weights = &self.params[w_off..b_off];
            let bias = &self.params[b_off..b_off + fan_out];
            let act = self.activations[layer];
            let input = layers.last().unwrap();
            let mut out = vec![0.0; batch * fan_out];
            for (x, y) in input.chunks_exact(fan_in).zip(out.chunks_exact_mut(fan_out)) {
                for ((yj, row), bj) in y.iter_mut().zip(weights.chunks_exact(fan_in)).zip(bias) {
                    let dot: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                    *yj = act.apply(dot + bj);
                }
            }
            layers.push(out);
        }
        Ok(Tape { batch, layers })
    }

    /// Backpropagates `grad_output` (∂L/∂output, row-major `batch ×
    /// output_dim`) through the recorded pass. Parameter gradients are
    /// accumulated into `grad_params` when given; the gradient with respect
    /// to the inputs is returned.
    pub fn backward(
        &self,
        tape: &Tape,
        grad_output: &[f64],
        mut grad_params: Option<&mut [f64]>,
    ) -> Result<Vec<f64>> {
        check_dim(tape.batch * self.output_dim(), grad_output.len())?;
        if let Some(g) = grad_params.as_deref() {
            check_dim(self.params.len(), g.len())?;
        }
        let mut delta = grad_output.to_vec();
        for layer in (0..self.layers()).rev() {
            let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
            let (w_off, b_off) = self.layer_offsets(layer);
            let weights = &self.params[w_off..b_off];
            let act = self.activations[layer];
            let output = &tape.layers[layer + 1];
            let input = &tape.layers[layer];
            for (d, y) in delta.iter_mut().zip(output) {
                *d *= act.derivative_from_output(*y);
            }
            let mut grad_in = vec![0.0; tape.batch * fan_in];
            for b in 0..tape.batch {
                let x = &input[b * fan_in..(b + 1) * fan_in];
                let gx = &mut grad_in[b * fan_in..(b + 1) * fan_in];
                for j in 0..fan_out {
                    let d = delta[b * fan_out + j];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &weights[j * fan_in..(j + 1) * fan_in];
                    for (g, w) in gx.iter_mut().zip(row) {
                        *g += d * w;
                    }
                    if let Some(gp) = grad_params.as_deref_mut() {
                        let gw = &mut gp[w_off + j * fan_in..w_off + (j + 1) * fan_in];
                        for (g, xi) in gw.iter_mut().zip(x) {
                            *g += d * xi;
                        }
                        gp[b_off + j] += d;
                    }
                }
            }
            delta = grad_in;
        }
        Ok(delta)
    }

    /// Writes `sizes`, activation codes and parameters as plain text.
    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        let sizes: Vec<String> = self.sizes.iter().map(ToString::to_string).collect();
        let acts: Vec<&str> = self.activations.iter().map(|a| a.code()).collect();
        writeln!(out, "sizes {}", sizes.join(" "))?;
        writeln!(out, "activations {}", acts.join(" "))?;
        writeln!(out, "params {}", self.params.len())?;
        for p in &self.params {
            writeln!(out, "{p:?}")?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let mut header = |key: &str| -> Result<Vec<String>> {
            let line = lines.next().ok_or(Error::Empty("network file"))??;
            let mut parts = line.split_whitespace().map(str::to_owned);
            if parts.next().as_deref() != Some(key) {
                return Err(Error::Format(format!("expected `{key}` line, got `{line}`")));
            }
            Ok(parts.collect())
        };
        let sizes = header("sizes")?
            .iter()
            .map(|s| s.parse().map_err(|_| Error::Format(format!("bad size `{s}`"))))
            .collect::<Result<Vec<usize>>>()?;
        let activations = header("activations")?
            .iter()
            .map(|s| Activation::from_code(s))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = header("params")?
            .first()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("bad parameter count".into()))?;
        let mut net = Self::zeros(sizes, activations)?;
        check_dim(net.params.len(), count)?;
        let params = lines
            .take(count)
            .map(|l| {
                let l = l?;
                l.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad parameter `{l}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        net.set_params(&params)?;
        Ok(net)
    }
}

/// A per-sample scalar loss on network outputs.
pub trait Loss {
    fn value(&self, sample: usize, output: &[f64]) -> f64;
    fn gradient(&self, sample: usize, output: &[f64]) -> Vec<f64>;
}

/// Mean batch loss.
pub fn batch_loss<L: Loss + ?Sized>(net: &Mlp, loss: &L, inputs: &[f64], batch: usize) -> Result<f64> {
    let tape = net.forward_batch(inputs, batch)?;
    let k = net.output_dim();
    let total: f64 = tape
        .output()
        .chunks_exact(k)
        .enumerate()
        .map(|(i, y)| loss.value(i, y))
        .sum();
    Ok(total / batch as f64)
}

/// Reverse-mode gradient of the mean batch loss with respect to every
/// parameter.
pub fn gradients<L: Loss + ?Sized>(net: &Mlp, loss: &L, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
    let tape = net.forward_batch(inputs, batch)?;
    let k = net.output_dim();
    let scale = 1.0 / batch as f64;
    let mut grad_out = Vec::with_capacity(batch * k);
    for (i, y) in tape.output().chunks_exact(k).enumerate() {
        grad_out.extend(loss.gradient(i, y).into_iter().map(|g| g * scale));
    }
    let mut grads = vec![0.0; net.params.len()];
    net.backward(&tape, &grad_out, Some(&mut grads))?;
    Ok(grads)
}

/// Relative error `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Worst coordinate-wise relative error between `analytic` and central
/// differences of `objective` around `params` with step `h`.
pub fn finite_difference_check<F>(params: &[f64], analytic: &[f64], h: f64, mut objective: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        probe[i] = params[i] + h;
        let up = objective(&probe);
        probe[i] = params[i] - h;
        let down = objective(&probe);
        probe[i] = params[i];
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

/// Compares [`gradients`] with central differences (step `1e-5`) and
/// returns the worst relative error.
pub fn grad_check<L: Loss + ?Sized>(net: &Mlp, loss: &L, inputs: &[f64], batch: usize) -> Result<f64> {
    let analytic = gradients(net, loss, inputs, batch)?;
    let mut probe = net.clone();
    Ok(finite_difference_check(net.params(), &analytic, 1e-5, |p| {
        probe.params.copy_from_slice(p);
        batch_loss(&probe, loss, inputs, batch).expect("dimensions checked above")
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, m: Vec<f64>, v: Vec<f64>, step: u64) -> Result<()> {
        check_dim(self.m.len(), m.len())?;
        check_dim(self.v.len(), v.len())?;
        self.m = m;
        self.v = v;
        self.step = step;
        Ok(())
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_dim(self.m.len(), params.len())?;
        check_dim(self.m.len(), grads.len())?;
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
