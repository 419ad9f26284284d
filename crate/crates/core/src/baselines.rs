//! Reference forecasters: an exogenous-blind linear model and an MLP fusion
//! wrapper that injects future exogenous values into an inner forecast.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::SeriesWindow;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::model::LossVars;
use crate::nn::{InstanceNormState, Linear, Mlp};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::{Forecaster, Trainable};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearConfig {
    pub n_endo: usize,
    pub n_exo: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub denormalize_output: bool,
    pub norm_eps: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self {
            n_endo: 1,
            n_exo: 1,
            lookback: 168,
            horizon: 24,
            denormalize_output: true,
            norm_eps: crate::nn::DEFAULT_NORM_EPS,
        }
    }
}

impl LinearConfig {
    fn validate(&self) -> Result<()> {
        if self.n_endo == 0 || self.horizon == 0 || self.lookback < 2 {
            return Err(Error::Config("linear baseline needs n_endo ≥ 1, horizon ≥ 1, lookback ≥ 2".into()));
        }
        Ok(())
    }
}

fn check_shape(name: &str, t: &Tensor, rows: usize, cols: usize) -> Result<()> {
    if t.shape() != [rows, cols] {
        return Err(Error::Shape(format!("{name} has shape {:?}, expected [{rows}, {cols}]", t.shape())));
    }
    Ok(())
}

/// Shared `T → F` map over instance-normalized endogenous rows.
#[derive(Clone, Debug)]
pub struct LinearForecaster {
    config: LinearConfig,
    params: ParamStore,
    layer: Linear,
}

struct EndoProjection {
    norm: InstanceNormState,
    z: Var,
}

impl LinearForecaster {
    pub fn new(config: LinearConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let layer = Linear::new(&mut params, "linear", config.lookback, config.horizon, true, &mut rng);
        Ok(Self { config, params, layer })
    }

    pub fn config(&self) -> &LinearConfig {
        &self.config
    }

    pub fn layer(&self) -> &Linear {
        &self.layer
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn project(&self, g: &mut Graph, window: &SeriesWindow) -> Result<EndoProjection> {
        let c = &self.config;
        check_shape("x_endo", &window.x_endo, c.n_endo, c.lookback)?;
        let (xn, norm) = InstanceNormState::fit_apply(&window.x_endo, c.norm_eps)?;
        let x = g.constant(xn);
        let z = self.layer.forward(g, x)?;
        Ok(EndoProjection { norm, z })
    }

    /// Builds the forecast on `g`; returns `(ŷ, target)` in the loss space.
    pub fn forecast_graph(&self, g: &mut Graph, window: &SeriesWindow) -> Result<(Var, Tensor)> {
        let p = self.project(g, window)?;
        if self.config.denormalize_output {
            Ok((p.norm.invert_var(g, p.z, 0)?, window.y_endo.clone()))
        } else {
            Ok((p.z, p.norm.apply(&window.y_endo, 0)?))
        }
    }

    pub fn linear_forecast(&self, window: &SeriesWindow) -> Result<Tensor> {
        let mut g = Graph::with_params(&self.params);
        let p = self.project(&mut g, window)?;
        let z = g.value(p.z).clone();
        if self.config.denormalize_output {
            p.norm.invert(&z, 0)
        } else {
            Ok(z)
        }
    }
}

fn plain_losses(g: &mut Graph, l_f: Var) -> LossVars {
    let zero = g.constant(Tensor::scalar(0.0));
    LossVars {
        l_f,
        l_align: zero,
        kl_v: zero,
        kl_g: zero,
        total: l_f,
    }
}

impl Forecaster for LinearForecaster {
    fn predict(&self, window: &SeriesWindow) -> Result<Tensor> {
        self.linear_forecast(window)
    }
}

impl Trainable for LinearForecaster {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn loss_graph<'p>(&'p self, g: &mut Graph<'p>, window: &SeriesWindow, _rng: &mut Rng) -> Result<LossVars> {
        let (y, target) = self.forecast_graph(g, window)?;
        let t = g.constant(target);
        let l = g.l1_loss(y, t)?;
        Ok(plain_losses(g, l))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub n_endo: usize,
    pub n_exo: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub hidden: usize,
    pub norm_eps: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            n_endo: 1,
            n_exo: 1,
            lookback: 168,
            horizon: 24,
            hidden: 64,
            norm_eps: crate::nn::DEFAULT_NORM_EPS,
        }
    }
}

/// Inner linear forecast `z` concatenated per endogenous channel with the
/// flattened future exogenous block, then mapped by a 2-layer MLP.
#[derive(Clone, Debug)]
pub struct FusionWrapper {
    config: FusionConfig,
    params: ParamStore,
    inner: Linear,
    fusion: Mlp,
}

impl FusionWrapper {
    pub fn new(config: FusionConfig, seed: u64) -> Result<Self> {
        if config.n_endo == 0 || config.n_exo == 0 || config.horizon == 0 || config.lookback < 2 || config.hidden == 0 {
            return Err(Error::Config("fusion baseline needs positive sizes and at least one exogenous channel".into()));
        }
        let mut rng = Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let (t, f, d) = (config.lookback, config.horizon, config.n_exo);
        let inner = Linear::new(&mut params, "inner.linear", t, f, true, &mut rng);
        let fusion = Mlp::new(&mut params, "fusion", &[f + d * f, config.hidden, f], &mut rng);
        Ok(Self {
            config,
            params,
            inner,
            fusion,
        })
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    pub fn inner(&self) -> &Linear {
        &self.inner
    }

    pub fn fusion(&self) -> &Mlp {
        &self.fusion
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Normalized-space forecast. Without future exogenous values the inner
    /// forecast is returned unchanged.
    fn forecast_graph(
        &self,
        g: &mut Graph,
        window: &SeriesWindow,
        use_future: bool,
    ) -> Result<(Var, InstanceNormState)> {
        let c = &self.config;
        check_shape("x_endo", &window.x_endo, c.n_endo, c.lookback)?;
        let (x_endo_n, endo_norm) = InstanceNormState::fit_apply(&window.x_endo, c.norm_eps)?;
        let x = g.constant(x_endo_n);
        let z = self.inner.forward(g, x)?;
        if !use_future {
            return Ok((z, endo_norm));
        }
        if window.y_exo.rank() != 2 || window.y_exo.numel() == 0 {
            return Err(Error::MissingInput("y_exo"));
        }
        check_shape("y_exo", &window.y_exo, c.n_exo, c.horizon)?;
        check_shape("x_exo", &window.x_exo, c.n_exo, c.lookback)?;
        let (_, exo_norm) = InstanceNormState::fit_apply(&window.x_exo, c.norm_eps)?;
        let y_exo_n = exo_norm.apply(&window.y_exo, 0)?;
        let flat = y_exo_n.data().to_vec();
        let repeated: Vec<f64> = (0..c.n_endo).flat_map(|_| flat.iter().copied()).collect();
        let exo = g.constant(Tensor::new(vec![c.n_endo, flat.len()], repeated)?);
        let joined = g.concat(&[z, exo], 1)?;
        Ok((self.fusion.forward(g, joined)?, endo_norm))
    }

    pub fn fusion_forecast(&self, window: &SeriesWindow, use_future: bool) -> Result<Tensor> {
        let mut g = Graph::with_params(&self.params);
        let (y, norm) = self.forecast_graph(&mut g, window, use_future)?;
        norm.invert(g.value(y), 0)
    }
}

impl Forecaster for FusionWrapper {
    fn predict(&self, window: &SeriesWindow) -> Result<Tensor> {
        self.fusion_forecast(window, true)
    }
}

impl Trainable for FusionWrapper {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn loss_graph<'p>(&'p self, g: &mut Graph<'p>, window: &SeriesWindow, _rng: &mut Rng) -> Result<LossVars> {
        let (y, norm) = self.forecast_graph(g, window, true)?;
        let y = norm.invert_var(g, y, 0)?;
        let t = g.constant(window.y_endo.clone());
        let l = g.l1_loss(y, t)?;
        Ok(plain_losses(g, l))
    }
}
