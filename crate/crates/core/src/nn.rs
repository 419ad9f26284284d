//! Neural building blocks: linear layers, MLPs, the predictive VAE,
//! instance normalization, Gaussian KL and the Adam optimizer.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("glorot shape")
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor {
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("normal shape")
}

#[derive(Clone, Debug)]
pub struct Linear {
    name: String,
    weight: ParamId,
    bias: Option<ParamId>,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.register(format!("{name}.weight"), glorot_uniform(rng, in_dim, out_dim));
        let bias = with_bias.then(|| store.register(format!("{name}.bias"), Tensor::zeros(&[out_dim])));
        Self {
            name: name.to_string(),
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> Option<ParamId> {
        self.bias
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// `x[m×in] · W[in×out] + b`
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let shape = g.value(x).shape();
        let got = shape.last().copied().unwrap_or(0);
        if shape.len() != 2 || got != self.in_dim {
            return Err(Error::WidthMismatch {
                layer: self.name.clone(),
                expected: self.in_dim,
                got,
            });
        }
        let w = g.param(self.weight)?;
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(b)?;
                Ok(g.add_row(y, b)?)
            }
            None => Ok(y),
        }
    }
}

/// Linear layers with GELU between them and no activation after the last.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], true, rng))
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h)?;
            if i + 1 < self.layers.len() {
                h = g.gelu(h);
            }
        }
        Ok(h)
    }
}

/// Hidden width shared by VAE encoder and decoder.
pub fn vae_hidden_width(latent: usize) -> usize {
    (2 * latent).max(32)
}

/// Row-wise VAE mapping length-`in` rows to length-`out` rows through a
/// `latent`-dimensional Gaussian bottleneck.
#[derive(Clone, Debug)]
pub struct PredictiveVae {
    encoder: Mlp,
    decoder: Mlp,
    latent: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct VaeOutput {
    pub y: Var,
    pub mu: Var,
    pub logvar: Var,
}

impl PredictiveVae {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        latent: usize,
        rng: &mut R,
    ) -> Self {
        let hidden = vae_hidden_width(latent);
        let encoder = Mlp::new(store, &format!("{name}.encoder"), &[in_dim, hidden, 2 * latent], rng);
        let decoder = Mlp::new(store, &format!("{name}.decoder"), &[latent, hidden, out_dim], rng);
        Self {
            encoder,
            decoder,
            latent,
        }
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn latent(&self) -> usize {
        self.latent
    }

    pub fn in_dim(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.decoder.out_dim()
    }

    /// Encodes each row of `x[C×in]`, samples (Train) or takes the mean
    /// (Eval), and decodes to `C×out`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        x: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<VaeOutput> {
        let noise = match mode {
            Mode::Train => Some(standard_normal(rng, &[g.value(x).rows(), self.latent])),
            Mode::Eval => None,
        };
        self.forward_with_noise(g, x, noise)
    }

    /// As [`forward`](Self::forward) with explicit reparameterization noise;
    /// `None` decodes the posterior mean.
    pub fn forward_with_noise(&self, g: &mut Graph, x: Var, noise: Option<Tensor>) -> Result<VaeOutput> {
        let stats = self.encoder.forward(g, x)?;
        if !g.value(stats).is_finite() {
            return Err(Error::NonFinite("VAE encoder output".into()));
        }
        let mu = g.slice(stats, 1, 0, self.latent)?;
        let logvar = g.slice(stats, 1, self.latent, 2 * self.latent)?;
        let z = match noise {
            Some(eps) => {
                let half = g.scale(logvar, 0.5);
                let std = g.exp(half);
                let eps = g.constant(eps);
                let spread = g.mul(std, eps)?;
                g.add(mu, spread)?
            }
            None => mu,
        };
        let y = self.decoder.forward(g, z)?;
        Ok(VaeOutput { y, mu, logvar })
    }
}

/// Mean over latent entries of `½(mu² + exp(logvar) − logvar − 1)`.
pub fn kl_divergence(g: &mut Graph, mu: Var, logvar: Var) -> Result<Var> {
    let mu2 = g.mul(mu, mu)?;
    let var = g.exp(logvar);
    let a = g.add(mu2, var)?;
    let b = g.sub(a, logvar)?;
    let c = g.add_scalar(b, -1.0);
    let m = g.mean(c);
    Ok(g.scale(m, 0.5))
}

pub const DEFAULT_NORM_EPS: f64 = 1e-5;

/// Per-channel statistics of one lookback window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceNormState {
    pub mean: Vec<f64>,
    /// Population std, floored at `eps`.
    pub std: Vec<f64>,
    pub eps: f64,
}

impl InstanceNormState {
    /// Fits per-row statistics on `x[C×T]` and returns the normalized rows.
    pub fn fit_apply(x: &Tensor, eps: f64) -> Result<(Tensor, Self)> {
        if x.rank() != 2 || x.cols() < 2 {
            return Err(Error::Shape(format!(
                "instance norm needs a C×T input with T ≥ 2, got {:?}",
                x.shape()
            )));
        }
        let t = x.cols() as f64;
        let mut mean = Vec::with_capacity(x.rows());
        let mut std = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let row = x.row(i);
            // Shifted by the first value so constant rows get an exact mean.
            let m = row[0] + row.iter().map(|v| v - row[0]).sum::<f64>() / t;
            let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / t;
            mean.push(m);
            std.push(var.sqrt().max(eps));
        }
        let state = Self { mean, std, eps };
        let normed = state.apply(x, 0)?;
        Ok((normed, state))
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    fn check_rows(&self, y: &Tensor, first_channel: usize) -> Result<()> {
        if y.rank() != 2 || first_channel + y.rows() > self.channels() {
            return Err(Error::Shape(format!(
                "rows {}..{} exceed {} normalized channels",
                first_channel,
                first_channel + y.shape().first().copied().unwrap_or(0),
                self.channels()
            )));
        }
        Ok(())
    }

    /// Normalizes rows of `y` using channels `first_channel..`.
    pub fn apply(&self, y: &Tensor, first_channel: usize) -> Result<Tensor> {
        self.check_rows(y, first_channel)?;
        let mut out = y.clone();
        let cols = y.cols();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            let c = first_channel + k / cols;
            *v = (*v - self.mean[c]) / self.std[c];
        }
        Ok(out)
    }

    /// `y·std + mean` using channels `first_channel..`.
    pub fn invert(&self, y_norm: &Tensor, first_channel: usize) -> Result<Tensor> {
        self.check_rows(y_norm, first_channel)?;
        let mut out = y_norm.clone();
        let cols = y_norm.cols();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            let c = first_channel + k / cols;
            *v = *v * self.std[c] + self.mean[c];
        }
        Ok(out)
    }

    /// Differentiable inversion inside a graph.
    pub fn invert_var(&self, g: &mut Graph, y_norm: Var, first_channel: usize) -> Result<Var> {
        let shape = g.value(y_norm).shape().to_vec();
        self.check_rows(g.value(y_norm), first_channel)?;
        let cols = shape[1];
        let std: Vec<f64> = (0..shape[0] * cols)
            .map(|k| self.std[first_channel + k / cols])
            .collect();
        let mean: Vec<f64> = (0..shape[0] * cols)
            .map(|k| self.mean[first_channel + k / cols])
            .collect();
        let std = g.constant(Tensor::new(shape.clone(), std)?);
        let mean = g.constant(Tensor::new(shape, mean)?);
        let scaled = g.mul(y_norm, std)?;
        Ok(g.add(scaled, mean)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm clip threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || store.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Applies one update. `grads[i]` is the gradient of parameter `i`.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::GradientCount {
                expected: store.len(),
                got: grads.len(),
            });
        }
        for (id, g) in store.ids().zip(grads) {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(store.name(id).to_string()));
            }
            if g.numel() != store.get(id).map_or(0, Tensor::numel) {
                return Err(Error::Shape(format!("gradient for {}", store.name(id))));
            }
        }
        let clip_scale = match self.config.clip_norm {
            Some(max) => {
                let norm = grads
                    .iter()
                    .flat_map(|g| g.data())
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (id, g)) in store.ids().collect::<Vec<_>>().into_iter().zip(grads).enumerate() {
            let param = store.get_mut(id).expect("param id");
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, w) in param.data_mut().iter_mut().enumerate() {
                let gk = g.data()[k] * clip_scale;
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
