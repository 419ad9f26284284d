//! The forecaster: a variational generator drafts the horizon, a graph
//! structure aligner compares patch-relation graphs of the drafted and true
//! full sequences, and a graph refiner propagates over the sparsified
//! generated graph before a flatten head emits the forecast.
//!
//! Internally a patch-embedded sequence is a `(C·L)×d` matrix whose row
//! `c·L + l` is patch `l` of channel `c`. Channels are ordered exogenous
//! first, endogenous last.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::SeriesWindow;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{kl_divergence, standard_normal, vae_hidden_width, InstanceNormState, Linear, Mlp, Mode, PredictiveVae};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeMode {
    /// `L` nodes; per-channel patch scores are averaged over channels.
    TemporalOnly,
    /// `(N+D)·L` nodes, one per (channel, patch).
    ChannelPatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// Each endogenous channel's `L·d` features map to `F` with shared weights.
    PerChannel,
    /// All channels flattened into one vector mapped to `N·F`.
    FullFlatten,
}

/// Ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Generator VAE replaced by an MLP.
    A,
    /// Alignment loss removed.
    B,
    /// Graph VAE bypassed; raw adjacency used directly.
    C,
    /// Refiner removed; the coarse forecast is the output.
    D,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Self::Full),
            "a" => Ok(Self::A),
            "b" => Ok(Self::B),
            "c" => Ok(Self::C),
            "d" => Ok(Self::D),
            other => Err(Error::Config(format!("unknown ablation variant {other:?}"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Full => "full",
            Self::A => "a",
            Self::B => "b",
            Self::C => "c",
            Self::D => "d",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_endo: usize,
    pub n_exo: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub patch_len: usize,
    pub d_model: usize,
    pub latent_gen: usize,
    pub latent_graph: usize,
    pub gcn_layers: usize,
    pub sparsity_ratio: f64,
    pub node_mode: NodeMode,
    pub future_exo_available: bool,
    pub head_mode: HeadMode,
    pub variant: Variant,
    /// Give exogenous rows their own generator VAE.
    pub separate_exo_vae: bool,
    /// Detach the ground-truth graph inside the alignment loss.
    pub stop_truth_grad: bool,
    /// Average graph KL over both branches in training; otherwise only the
    /// generated branch.
    pub kl_graph_both_branches: bool,
    /// Compute the forecast loss after inverting instance normalization.
    pub denormalize_output: bool,
    pub norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_endo: 1,
            n_exo: 1,
            lookback: 168,
            horizon: 24,
            patch_len: 16,
            d_model: 64,
            latent_gen: 16,
            latent_graph: 16,
            gcn_layers: 2,
            sparsity_ratio: 0.5,
            node_mode: NodeMode::ChannelPatch,
            future_exo_available: true,
            head_mode: HeadMode::PerChannel,
            variant: Variant::Full,
            separate_exo_vae: false,
            stop_truth_grad: false,
            kl_graph_both_branches: true,
            denormalize_output: true,
            norm_eps: crate::nn::DEFAULT_NORM_EPS,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_endo", self.n_endo),
            ("n_exo", self.n_exo),
            ("horizon", self.horizon),
            ("patch_len", self.patch_len),
            ("d_model", self.d_model),
            ("latent_gen", self.latent_gen),
            ("latent_graph", self.latent_graph),
            ("gcn_layers", self.gcn_layers),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be ≥ 1")));
        }
        if self.lookback < 2 {
            return Err(Error::Config("lookback must be ≥ 2".into()));
        }
        if !(self.sparsity_ratio > 0.0 && self.sparsity_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "sparsity_ratio {} not in (0, 1]",
                self.sparsity_ratio
            )));
        }
        if !(self.norm_eps > 0.0) {
            return Err(Error::Config("norm_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.n_endo + self.n_exo
    }

    pub fn num_patches(&self) -> usize {
        (self.lookback + self.horizon).div_ceil(self.patch_len)
    }

    pub fn num_nodes(&self) -> usize {
        match self.node_mode {
            NodeMode::TemporalOnly => self.num_patches(),
            NodeMode::ChannelPatch => self.channels() * self.num_patches(),
        }
    }

    /// Number of retained edges per row after sparsification.
    pub fn top_k(&self) -> usize {
        top_k_count(self.sparsity_ratio, self.num_nodes())
    }
}

/// `max(1, ceil(ratio · m))`, tolerant of representation error in `ratio · m`.
pub fn top_k_count(ratio: f64, m: usize) -> usize {
    (((ratio * m as f64) - 1e-9).ceil() as usize).clamp(1, m.max(1))
}

/// Loss components in the order they enter the total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_f: f64,
    pub l_align: f64,
    pub kl_v: f64,
    pub kl_g: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub l_f: Var,
    pub l_align: Var,
    pub kl_v: Var,
    pub kl_g: Var,
    pub total: Var,
}

impl LossVars {
    pub fn values(&self, g: &Graph) -> LossBreakdown {
        LossBreakdown {
            l_f: g.value(self.l_f).item(),
            l_align: g.value(self.l_align).item(),
            kl_v: g.value(self.kl_v).item(),
            kl_g: g.value(self.kl_g).item(),
            total: g.value(self.total).item(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyGraph {
    pub weights: Tensor,
    pub symmetric: bool,
    pub node_mode: NodeMode,
}

impl AdjacencyGraph {
    pub fn nodes(&self) -> usize {
        self.weights.rows()
    }

    pub fn is_exactly_symmetric(&self) -> bool {
        let m = self.nodes();
        (0..m).all(|i| (0..m).all(|j| self.weights.at(i, j) == self.weights.at(j, i)))
    }
}

/// Output of a forward pass with values extracted from the graph.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub y_hat: Tensor,
    pub coarse_y: Tensor,
    pub coarse_exo: Option<Tensor>,
    pub losses: LossBreakdown,
    pub adjacency_generated: AdjacencyGraph,
    pub adjacency_truth: Option<AdjacencyGraph>,
}

/// Graph handles of a forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub y_hat: Var,
    pub coarse_y: Var,
    pub coarse_exo: Option<Var>,
    pub s_tilde: Var,
    pub raw_generated: Var,
    pub adjacency_generated: Var,
    pub adjacency_truth: Option<Var>,
    pub losses: LossVars,
}

/// Runtime switches that do not change parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ForwardOptions {
    /// Overrides `future_exo_available` (e.g. evaluating without future
    /// exogenous values).
    pub future_exo: Option<bool>,
    /// Test hook: feed the generated sequence to the ground-truth branch
    /// with identical noise.
    pub truth_as_generated: bool,
    /// Test hook: replace the prediction with the target.
    pub clamp_prediction_to_target: bool,
}

#[derive(Clone, Debug)]
enum Generator {
    Vae {
        shared: PredictiveVae,
        exo: Option<PredictiveVae>,
    },
    Mlp {
        shared: Mlp,
        exo: Option<Mlp>,
    },
}

/// Result of the coarse generation step.
#[derive(Clone, Copy, Debug)]
pub struct Coarse {
    pub s_tilde: Var,
    pub kl_v: Var,
    pub coarse_y: Var,
    pub coarse_exo: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct GcgNet {
    config: ModelConfig,
    params: ParamStore,
    generator: Generator,
    embed: Linear,
    w_query: Linear,
    w_key: Linear,
    graph_vae: Option<PredictiveVae>,
    gcn: Vec<Linear>,
    head: Option<Linear>,
}

impl GcgNet {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let c = &config;
        let (t, f, d) = (c.lookback, c.horizon, c.d_model);

        let generator = if c.variant == Variant::A {
            let widths = [t, vae_hidden_width(c.latent_gen), f];
            let shared = Mlp::new(&mut params, "generator.mlp", &widths, &mut rng);
            let exo = c
                .separate_exo_vae
                .then(|| Mlp::new(&mut params, "generator.exo_mlp", &widths, &mut rng));
            Generator::Mlp { shared, exo }
        } else {
            let shared = PredictiveVae::new(&mut params, "generator.vae", t, f, c.latent_gen, &mut rng);
            let exo = c
                .separate_exo_vae
                .then(|| PredictiveVae::new(&mut params, "generator.exo_vae", t, f, c.latent_gen, &mut rng));
            Generator::Vae { shared, exo }
        };

        let embed = Linear::new(&mut params, "aligner.embed", c.patch_len, d, true, &mut rng);
        let w_query = Linear::new(&mut params, "aligner.w_query", d, d, false, &mut rng);
        let w_key = Linear::new(&mut params, "aligner.w_key", d, d, false, &mut rng);
        let m = c.num_nodes();
        let graph_vae = (c.variant != Variant::C)
            .then(|| PredictiveVae::new(&mut params, "aligner.graph_vae", m, m, c.latent_graph, &mut rng));

        let (gcn, head) = if c.variant == Variant::D {
            (Vec::new(), None)
        } else {
            let gcn = (0..c.gcn_layers)
                .map(|i| Linear::new(&mut params, &format!("refiner.gcn.{i}"), d, d, false, &mut rng))
                .collect();
            let l = c.num_patches();
            let head = match c.head_mode {
                HeadMode::PerChannel => Linear::new(&mut params, "refiner.head", l * d, f, true, &mut rng),
                HeadMode::FullFlatten => Linear::new(
                    &mut params,
                    "refiner.head",
                    c.channels() * l * d,
                    c.n_endo * f,
                    true,
                    &mut rng,
                ),
            };
            (gcn, Some(head))
        };

        Ok(Self {
            config,
            params,
            generator,
            embed,
            w_query,
            w_key,
            graph_vae,
            gcn,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn embed(&self) -> &Linear {
        &self.embed
    }

    pub fn query(&self) -> &Linear {
        &self.w_query
    }

    pub fn key(&self) -> &Linear {
        &self.w_key
    }

    pub fn graph_vae(&self) -> Option<&PredictiveVae> {
        self.graph_vae.as_ref()
    }

    pub fn gcn_layers(&self) -> &[Linear] {
        &self.gcn
    }

    pub fn head(&self) -> Option<&Linear> {
        self.head.as_ref()
    }

    fn check_window(&self, w: &SeriesWindow) -> Result<()> {
        let c = &self.config;
        let expect = [
            ("x_endo", &w.x_endo, c.n_endo, c.lookback),
            ("x_exo", &w.x_exo, c.n_exo, c.lookback),
            ("y_exo", &w.y_exo, c.n_exo, c.horizon),
            ("y_endo", &w.y_endo, c.n_endo, c.horizon),
        ];
        for (name, t, rows, cols) in expect {
            if t.shape() != [rows, cols] {
                return Err(Error::Shape(format!(
                    "{name} has shape {:?}, model expects [{rows}, {cols}]",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// Coarse generation over instance-normalized inputs; assembles the
    /// generated full sequence with exogenous rows on top and history on
    /// the left.
    pub fn generate_coarse(
        &self,
        g: &mut Graph,
        x_endo: Var,
        x_exo: Var,
        y_exo: Option<Var>,
        use_future_exo: bool,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Coarse> {
        let c = &self.config;
        let future = if use_future_exo {
            Some(y_exo.ok_or(Error::MissingInput("y_exo"))?)
        } else {
            None
        };

        let (coarse_y, generated_exo, kl_v) = match &self.generator {
            Generator::Vae { shared, exo } => match (future, exo) {
                (Some(_), _) => {
                    let out = shared.forward(g, x_endo, mode, rng)?;
                    let kl = kl_divergence(g, out.mu, out.logvar)?;
                    (out.y, None, kl)
                }
                (None, Some(exo_vae)) => {
                    let en = shared.forward(g, x_endo, mode, rng)?;
                    let ex = exo_vae.forward(g, x_exo, mode, rng)?;
                    let mu = g.concat(&[ex.mu, en.mu], 0)?;
                    let lv = g.concat(&[ex.logvar, en.logvar], 0)?;
                    let kl = kl_divergence(g, mu, lv)?;
                    (en.y, Some(ex.y), kl)
                }
                (None, None) => {
                    let rows = g.concat(&[x_exo, x_endo], 0)?;
                    let out = shared.forward(g, rows, mode, rng)?;
                    let kl = kl_divergence(g, out.mu, out.logvar)?;
                    let ex = g.slice(out.y, 0, 0, c.n_exo)?;
                    let en = g.slice(out.y, 0, c.n_exo, c.channels())?;
                    (en, Some(ex), kl)
                }
            },
            Generator::Mlp { shared, exo } => {
                let zero = g.constant(Tensor::scalar(0.0));
                match (future, exo) {
                    (Some(_), _) => (shared.forward(g, x_endo)?, None, zero),
                    (None, Some(exo_mlp)) => {
                        let en = shared.forward(g, x_endo)?;
                        let ex = exo_mlp.forward(g, x_exo)?;
                        (en, Some(ex), zero)
                    }
                    (None, None) => {
                        let rows = g.concat(&[x_exo, x_endo], 0)?;
                        let y = shared.forward(g, rows)?;
                        let ex = g.slice(y, 0, 0, c.n_exo)?;
                        let en = g.slice(y, 0, c.n_exo, c.channels())?;
                        (en, Some(ex), zero)
                    }
                }
            }
        };

        let z = future.or(generated_exo).expect("one exogenous future block");
        let top = g.concat(&[x_exo, z], 1)?;
        let bottom = g.concat(&[x_endo, coarse_y], 1)?;
        let s_tilde = g.concat(&[top, bottom], 0)?;
        Ok(Coarse {
            s_tilde,
            kl_v,
            coarse_y,
            coarse_exo: generated_exo,
        })
    }

    /// Splits each row of `s[C×(T+F)]` into `L` right-zero-padded patches of
    /// length `p` and embeds them, giving `(C·L)×d`.
    pub fn patch_embed(&self, g: &mut Graph, s: Var) -> Result<Var> {
        let patches = patchify(g, s, self.config.patch_len)?;
        self.embed.forward(g, patches)
    }

    /// Symmetrized GELU similarity between projected patch embeddings.
    /// Returns `(A', Ã)`.
    pub fn compute_raw_adjacency(&self, g: &mut Graph, xp: Var) -> Result<(Var, Var)> {
        let q = self.w_query.forward(g, xp)?;
        let k = self.w_key.forward(g, xp)?;
        let scores = match self.config.node_mode {
            NodeMode::ChannelPatch => {
                let kt = g.transpose(k)?;
                g.matmul(q, kt)?
            }
            NodeMode::TemporalOnly => {
                let l = self.config.num_patches();
                let mut acc: Option<Var> = None;
                for ch in 0..self.config.channels() {
                    let qc = g.slice(q, 0, ch * l, (ch + 1) * l)?;
                    let kc = g.slice(k, 0, ch * l, (ch + 1) * l)?;
                    let kct = g.transpose(kc)?;
                    let sc = g.matmul(qc, kct)?;
                    acc = Some(match acc {
                        Some(a) => g.add(a, sc)?,
                        None => sc,
                    });
                }
                let sum = acc.expect("at least one channel");
                g.scale(sum, 1.0 / self.config.channels() as f64)
            }
        };
        let a_prime = g.gelu(scores);
        Ok((a_prime, symmetrize(g, a_prime)?))
    }

    /// Row-wise Graph VAE over `Ã`, re-symmetrized. Returns `(A, kl)`.
    /// With variant C (no Graph VAE) the input is returned with zero KL.
    pub fn graph_vae_forward(&self, g: &mut Graph, a_tilde: Var, noise: Option<Tensor>) -> Result<(Var, Var)> {
        let m = self.config.num_nodes();
        let shape = g.value(a_tilde).shape();
        if shape != [m, m] {
            return Err(Error::Shape(format!("adjacency {shape:?}, expected [{m}, {m}]")));
        }
        match &self.graph_vae {
            Some(vae) => {
                let out = vae.forward_with_noise(g, a_tilde, noise)?;
                let kl = kl_divergence(g, out.mu, out.logvar)?;
                Ok((symmetrize(g, out.y)?, kl))
            }
            None => Ok((a_tilde, g.constant(Tensor::scalar(0.0)))),
        }
    }

    /// Residual GCN layers `H ← H + gelu(norm(A_s + I)·H·W)`.
    pub fn gcn_refine(&self, g: &mut Graph, h: Var, a_s: Var) -> Result<Var> {
        let c = &self.config;
        let m = c.num_nodes();
        let a_shape = g.value(a_s).shape();
        if a_shape != [m, m] {
            return Err(Error::Shape(format!("sparse adjacency {a_shape:?}, expected [{m}, {m}]")));
        }
        let norm = normalized_propagation(g, a_s)?;
        let mut h = h;
        for layer in &self.gcn {
            let agg = match c.node_mode {
                NodeMode::ChannelPatch => g.matmul(norm, h)?,
                NodeMode::TemporalOnly => {
                    let l = c.num_patches();
                    let parts = (0..c.channels())
                        .map(|ch| {
                            let hc = g.slice(h, 0, ch * l, (ch + 1) * l)?;
                            Ok(g.matmul(norm, hc)?)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    g.concat(&parts, 0)?
                }
            };
            let mixed = layer.forward(g, agg)?;
            let act = g.gelu(mixed);
            h = g.add(h, act)?;
        }
        Ok(h)
    }

    /// Flatten head over refined features `(C·L)×d`, returning `N×F`.
    pub fn predict_head(&self, g: &mut Graph, h: Var) -> Result<Var> {
        let c = &self.config;
        let head = self
            .head
            .as_ref()
            .ok_or_else(|| Error::Config("variant d has no prediction head".into()))?;
        let (l, d) = (c.num_patches(), c.d_model);
        match c.head_mode {
            HeadMode::PerChannel => {
                let endo = g.slice(h, 0, c.n_exo * l, c.channels() * l)?;
                let flat = g.reshape(endo, &[c.n_endo, l * d])?;
                head.forward(g, flat)
            }
            HeadMode::FullFlatten => {
                let flat = g.reshape(h, &[1, c.channels() * l * d])?;
                let y = head.forward(g, flat)?;
                Ok(g.reshape(y, &[c.n_endo, c.horizon])?)
            }
        }
    }

    /// Full pipeline on one window.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        window: &SeriesWindow,
        mode: Mode,
        rng: &mut Rng,
        opts: ForwardOptions,
    ) -> Result<ForwardVars> {
        self.check_window(window)?;
        let c = &self.config;
        let (n, dx) = (c.n_endo, c.n_exo);
        let use_future = opts.future_exo.unwrap_or(c.future_exo_available);
        let train = mode == Mode::Train;

        // Instance statistics come from the lookback window only.
        let hist = stack_rows(&window.x_exo, &window.x_endo)?;
        let (hist_n, norm) = InstanceNormState::fit_apply(&hist, c.norm_eps)?;
        let x_exo_n = row_block(&hist_n, 0, dx)?;
        let x_endo_n = row_block(&hist_n, dx, dx + n)?;
        let y_exo_n = norm.apply(&window.y_exo, 0)?;
        let y_endo_n = norm.apply(&window.y_endo, dx)?;

        let x_endo_v = g.constant(x_endo_n.clone());
        let x_exo_v = g.constant(x_exo_n.clone());
        let y_exo_v = g.constant(y_exo_n.clone());
        let coarse = self.generate_coarse(g, x_endo_v, x_exo_v, Some(y_exo_v), use_future, mode, rng)?;

        let m = c.num_nodes();
        let mut graph_noise = || train.then(|| standard_normal(rng, &[m, c.latent_graph]));
        let noise_gen = graph_noise();
        let noise_truth = if opts.truth_as_generated {
            noise_gen.clone()
        } else {
            graph_noise()
        };

        let sp_gen = self.patch_embed(g, coarse.s_tilde)?;
        let (_, raw_gen) = self.compute_raw_adjacency(g, sp_gen)?;
        let (a_hat, kl_g_gen) = self.graph_vae_forward(g, raw_gen, noise_gen)?;

        let zero = g.constant(Tensor::scalar(0.0));
        let mut l_align = zero;
        let mut kl_g = kl_g_gen;
        let mut a_truth = None;
        if train && c.variant != Variant::B {
            let s = if opts.truth_as_generated {
                coarse.s_tilde
            } else {
                let top = concat_cols(&x_exo_n, &y_exo_n)?;
                let bottom = concat_cols(&x_endo_n, &y_endo_n)?;
                g.constant(stack_rows(&top, &bottom)?)
            };
            let sp_truth = self.patch_embed(g, s)?;
            let (_, raw_truth) = self.compute_raw_adjacency(g, sp_truth)?;
            let (a, kl_g_truth) = self.graph_vae_forward(g, raw_truth, noise_truth)?;
            a_truth = Some(a);
            let a_for_loss = if c.stop_truth_grad { g.detach(a) } else { a };
            l_align = g.l1_loss(a_for_loss, a_hat)?;
            if c.kl_graph_both_branches && self.graph_vae.is_some() {
                let both = g.add(kl_g_gen, kl_g_truth)?;
                kl_g = g.scale(both, 0.5);
            }
        }

        let y_hat_n = if c.variant == Variant::D {
            coarse.coarse_y
        } else {
            let a_s = sparsify_topk(g, a_hat, c.sparsity_ratio)?;
            let h = self.gcn_refine(g, sp_gen, a_s)?;
            self.predict_head(g, h)?
        };

        let (mut y_hat, coarse_y, target) = if c.denormalize_output {
            let y_hat = norm.invert_var(g, y_hat_n, dx)?;
            let coarse_y = if c.variant == Variant::D {
                y_hat
            } else {
                norm.invert_var(g, coarse.coarse_y, dx)?
            };
            (y_hat, coarse_y, window.y_endo.clone())
        } else {
            (y_hat_n, coarse.coarse_y, y_endo_n)
        };
        if opts.clamp_prediction_to_target {
            y_hat = g.constant(target.clone());
        }
        let coarse_exo = match coarse.coarse_exo {
            Some(ex) if c.denormalize_output => Some(norm.invert_var(g, ex, 0)?),
            other => other,
        };

        let l_f = if train {
            let t = g.constant(target);
            g.l1_loss(y_hat, t)?
        } else {
            zero
        };
        let mut total = g.add(l_f, coarse.kl_v)?;
        total = g.add(total, kl_g)?;
        if c.variant != Variant::B {
            total = g.add(total, l_align)?;
        }

        Ok(ForwardVars {
            y_hat,
            coarse_y,
            coarse_exo,
            s_tilde: coarse.s_tilde,
            raw_generated: raw_gen,
            adjacency_generated: a_hat,
            adjacency_truth: a_truth,
            losses: LossVars {
                l_f,
                l_align,
                kl_v: coarse.kl_v,
                kl_g,
                total,
            },
        })
    }

    pub fn forward(&self, window: &SeriesWindow, mode: Mode, rng: &mut Rng) -> Result<ForwardOutput> {
        self.forward_with(window, mode, rng, ForwardOptions::default())
    }

    pub fn forward_with(
        &self,
        window: &SeriesWindow,
        mode: Mode,
        rng: &mut Rng,
        opts: ForwardOptions,
    ) -> Result<ForwardOutput> {
        let mut g = Graph::with_params(&self.params);
        let v = self.forward_graph(&mut g, window, mode, rng, opts)?;
        let adj = |var: Var| AdjacencyGraph {
            weights: g.value(var).clone(),
            symmetric: true,
            node_mode: self.config.node_mode,
        };
        Ok(ForwardOutput {
            y_hat: g.value(v.y_hat).clone(),
            coarse_y: g.value(v.coarse_y).clone(),
            coarse_exo: v.coarse_exo.map(|e| g.value(e).clone()),
            losses: v.losses.values(&g),
            adjacency_generated: adj(v.adjacency_generated),
            adjacency_truth: v.adjacency_truth.map(adj),
        })
    }

    /// Deterministic point forecast in the window's units.
    pub fn predict_with(&self, window: &SeriesWindow, future_exo: Option<bool>) -> Result<Tensor> {
        let mut rng = Rng::seed_from_u64(0);
        let opts = ForwardOptions {
            future_exo,
            ..ForwardOptions::default()
        };
        let mut g = Graph::with_params(&self.params);
        let v = self.forward_graph(&mut g, window, Mode::Eval, &mut rng, opts)?;
        let y = g.value(v.y_hat).clone();
        if self.config.denormalize_output {
            return Ok(y);
        }
        let hist = stack_rows(&window.x_exo, &window.x_endo)?;
        let (_, norm) = InstanceNormState::fit_apply(&hist, self.config.norm_eps)?;
        norm.invert(&y, self.config.n_exo)
    }
}

/// Builds an ablation variant of `config`.
pub fn build_ablation(variant: Variant, config: &ModelConfig, seed: u64) -> Result<GcgNet> {
    GcgNet::new(
        ModelConfig {
            variant,
            ..config.clone()
        },
        seed,
    )
}

/// `½(A + Aᵀ)`; exactly symmetric in floating point.
pub fn symmetrize(g: &mut Graph, a: Var) -> Result<Var> {
    let at = g.transpose(a)?;
    let s = g.add(a, at)?;
    Ok(g.scale(s, 0.5))
}

/// Right-pads each row of `s[C×W]` with zeros to a multiple of `p` and
/// reshapes to `(C·L)×p`.
pub fn patchify(g: &mut Graph, s: Var, p: usize) -> Result<Var> {
    let (rows, width) = (g.value(s).rows(), g.value(s).cols());
    let l = width.div_ceil(p);
    let padded = if l * p > width {
        let pad = g.constant(Tensor::zeros(&[rows, l * p - width]));
        g.concat(&[s, pad], 1)?
    } else {
        s
    };
    Ok(g.reshape(padded, &[rows * l, p])?)
}

/// Mask keeping the `k` largest entries of each row; ties go to the lower
/// column index.
pub fn topk_mask(a: &Tensor, k: usize) -> Tensor {
    let (m, n) = (a.rows(), a.cols());
    let mut mask = Tensor::zeros(&[m, n]);
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for i in 0..m {
        let row = a.row(i);
        order.clear();
        order.extend(0..n);
        order.sort_by(|&x, &y| row[y].total_cmp(&row[x]).then(x.cmp(&y)));
        for &j in order.iter().take(k) {
            mask.set(i, j, 1.0);
        }
    }
    mask
}

/// Keeps the top `max(1, ceil(ratio·M))` entries of each row. Selection is
/// a constant mask, so gradients reach only surviving entries.
pub fn sparsify_topk(g: &mut Graph, a: Var, ratio: f64) -> Result<Var> {
    let k = top_k_count(ratio, g.value(a).cols());
    if k >= g.value(a).cols() {
        return Ok(a);
    }
    let mask = g.constant(topk_mask(g.value(a), k));
    Ok(g.mul(a, mask)?)
}

/// `(A + I)` with each row divided by `Σ_j |A_ij| + 1`.
pub fn normalized_propagation(g: &mut Graph, a: Var) -> Result<Var> {
    let m = g.value(a).rows();
    let eye = g.constant(Tensor::identity(m));
    let with_self = g.add(a, eye)?;
    let abs = g.abs(a);
    let deg = g.row_sum(abs)?;
    let deg = g.add_scalar(deg, 1.0);
    Ok(g.div_col(with_self, deg)?)
}

fn stack_rows(top: &Tensor, bottom: &Tensor) -> Result<Tensor> {
    if top.cols() != bottom.cols() {
        return Err(Error::Shape(format!("cannot stack {:?} on {:?}", top.shape(), bottom.shape())));
    }
    let mut data = top.data().to_vec();
    data.extend_from_slice(bottom.data());
    Ok(Tensor::new(vec![top.rows() + bottom.rows(), top.cols()], data)?)
}

fn concat_cols(left: &Tensor, right: &Tensor) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = (0..left.rows())
        .map(|i| left.row(i).iter().chain(right.row(i)).copied().collect())
        .collect();
    if rows.is_empty() {
        return Ok(Tensor::zeros(&[0, left.cols() + right.cols()]));
    }
    Ok(Tensor::from_rows(&rows)?)
}

fn row_block(t: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let cols = t.cols();
    Ok(Tensor::new(vec![end - start, cols], t.data()[start * cols..end * cols].to_vec())?)
}
