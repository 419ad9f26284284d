//! Optimization loop with early stopping, and MSE/MAE evaluation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{ScalerStats, SeriesWindow};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{GcgNet, LossBreakdown, LossVars};
use crate::nn::{Adam, AdamConfig, Mode};
use crate::params::ParamStore;
use crate::rng::{seeded, Rng};
use crate::tensor::Tensor;

/// Produces a point forecast (`N×F`, window units) for one window.
pub trait Forecaster {
    fn predict(&self, window: &SeriesWindow) -> Result<Tensor>;
}

/// A forecaster with trainable parameters and a training objective.
pub trait Trainable: Forecaster {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Builds the training-mode loss for one window on `g`.
    fn loss_graph<'p>(&'p self, g: &mut Graph<'p>, window: &SeriesWindow, rng: &mut Rng) -> Result<LossVars>;
}

impl Forecaster for GcgNet {
    fn predict(&self, window: &SeriesWindow) -> Result<Tensor> {
        self.predict_with(window, None)
    }
}

impl Trainable for GcgNet {
    fn params(&self) -> &ParamStore {
        GcgNet::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        GcgNet::params_mut(self)
    }

    fn loss_graph<'p>(&'p self, g: &mut Graph<'p>, window: &SeriesWindow, rng: &mut Rng) -> Result<LossVars> {
        Ok(self
            .forward_graph(g, window, Mode::Train, rng, Default::default())?
            .losses)
    }
}

/// Evaluates a [`GcgNet`] with the future-exogenous switch forced.
pub struct FutureExoOverride<'a> {
    pub model: &'a GcgNet,
    pub future_exo: bool,
}

impl Forecaster for FutureExoOverride<'_> {
    fn predict(&self, window: &SeriesWindow) -> Result<Tensor> {
        self.model.predict_with(window, Some(self.future_exo))
    }
}

/// Which loss components enter the optimized objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossFlags {
    pub forecast: bool,
    pub align: bool,
    pub kl_gen: bool,
    pub kl_graph: bool,
}

impl Default for LossFlags {
    fn default() -> Self {
        Self {
            forecast: true,
            align: true,
            kl_gen: true,
            kl_graph: true,
        }
    }
}

impl LossFlags {
    fn all(&self) -> bool {
        self.forecast && self.align && self.kl_gen && self.kl_graph
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub losses: LossFlags,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            lr: 1e-3,
            patience: 10,
            seed: 0,
            clip_norm: Some(5.0),
            losses: LossFlags::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config("epochs, batch_size and patience must be ≥ 1".into()));
        }
        if self.patience > self.epochs {
            return Err(Error::Config("patience must not exceed epochs".into()));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::Config("learning rate must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss components over the epoch's windows.
    pub train: LossBreakdown,
    pub val_mse: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
}

impl History {
    /// CSV with one row per epoch: loss components, total and validation MSE.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,l_f,l_align,kl_v,kl_g,total,val_mse\n");
        for r in &self.epochs {
            let t = &r.train;
            out.push_str(&format!(
                "{},{:?},{:?},{:?},{:?},{:?},{:?}\n",
                r.epoch, t.l_f, t.l_align, t.kl_v, t.kl_g, t.total, r.val_mse
            ));
        }
        out
    }
}

/// Builds the optimized objective from the enabled components.
fn objective(g: &mut Graph, lv: &LossVars, flags: &LossFlags) -> Result<crate::graph::Var> {
    if flags.all() {
        return Ok(lv.total);
    }
    let mut acc = g.constant(Tensor::scalar(0.0));
    for (on, v) in [
        (flags.forecast, lv.l_f),
        (flags.align, lv.l_align),
        (flags.kl_gen, lv.kl_v),
        (flags.kl_graph, lv.kl_g),
    ] {
        if on {
            acc = g.add(acc, v)?;
        }
    }
    Ok(acc)
}

/// Gradient of the objective for one window, plus its loss components.
pub fn window_gradients<M: Trainable + ?Sized>(
    model: &M,
    window: &SeriesWindow,
    rng: &mut Rng,
    flags: &LossFlags,
) -> Result<(Vec<Tensor>, LossBreakdown)> {
    let store = model.params();
    let mut g = Graph::with_params(store);
    let lv = model.loss_graph(&mut g, window, rng)?;
    let obj = objective(&mut g, &lv, flags)?;
    let mut losses = lv.values(&g);
    losses.total = g.value(obj).item();
    let grads = g.backward(obj)?;
    let mut out: Vec<Tensor> = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
    for (id, grad) in g.param_grads(&grads) {
        out[id.0] = grad;
    }
    Ok((out, losses))
}

/// Mini-batch training with per-epoch validation and early stopping. The
/// parameters with the lowest validation MSE are restored on return.
pub fn train<M: Trainable>(
    model: &mut M,
    train_windows: &[SeriesWindow],
    val_windows: &[SeriesWindow],
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    if train_windows.is_empty() || val_windows.is_empty() {
        return Err(Error::NoWindows);
    }
    let mut opt = Adam::new(
        model.params(),
        AdamConfig {
            lr: cfg.lr,
            clip_norm: cfg.clip_norm,
            ..AdamConfig::default()
        },
    );
    let mut history = History {
        best_val_mse: f64::INFINITY,
        ..History::default()
    };
    let mut best_params = model.params().clone();
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train_windows.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut seeded(cfg.seed, &[epoch as u64]));
        let mut sums = LossBreakdown::default();
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut acc: Vec<Tensor> = model.params().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
            for &wi in batch {
                let mut rng = seeded(cfg.seed, &[epoch as u64, wi as u64, 1]);
                let (grads, l) = window_gradients(&*model, &train_windows[wi], &mut rng, &cfg.losses)?;
                if !l.total.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: batch_idx,
                    });
                }
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y);
                }
                sums.l_f += l.l_f;
                sums.l_align += l.l_align;
                sums.kl_v += l.kl_v;
                sums.kl_g += l.kl_g;
                sums.total += l.total;
            }
            let scale = 1.0 / batch.len() as f64;
            for a in &mut acc {
                a.data_mut().iter_mut().for_each(|x| *x *= scale);
            }
            opt.step(model.params_mut(), &acc)?;
        }
        let n = train_windows.len() as f64;
        let train_means = LossBreakdown {
            l_f: sums.l_f / n,
            l_align: sums.l_align / n,
            kl_v: sums.kl_v / n,
            kl_g: sums.kl_g / n,
            total: sums.total / n,
        };
        let val_mse = evaluate(&*model, val_windows)?.mse;
        history.epochs.push(EpochRecord {
            epoch,
            train: train_means,
            val_mse,
        });
        if val_mse < history.best_val_mse {
            history.best_val_mse = val_mse;
            history.best_epoch = epoch;
            best_params = model.params().clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    *model.params_mut() = best_params;
    Ok(history)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub window_count: usize,
}

/// MSE and MAE over every element of every window.
pub fn evaluate<F: Forecaster + ?Sized>(model: &F, windows: &[SeriesWindow]) -> Result<Metrics> {
    evaluate_in_units(model, windows, None)
}

/// As [`evaluate`]; with `scaler`, predictions and targets are first mapped
/// back to original units.
pub fn evaluate_in_units<F: Forecaster + ?Sized>(
    model: &F,
    windows: &[SeriesWindow],
    scaler: Option<&ScalerStats>,
) -> Result<Metrics> {
    if windows.is_empty() {
        return Err(Error::NoWindows);
    }
    let (mut sq, mut abs, mut count) = (0.0, 0.0, 0usize);
    for w in windows {
        let mut pred = model.predict(w)?;
        let mut truth = w.y_endo.clone();
        if pred.shape() != truth.shape() {
            return Err(Error::Shape(format!(
                "prediction {:?} vs target {:?}",
                pred.shape(),
                truth.shape()
            )));
        }
        if let Some(s) = scaler {
            pred = s.invert_endo(&pred);
            truth = s.invert_endo(&truth);
        }
        for (p, t) in pred.data().iter().zip(truth.data()) {
            let e = p - t;
            sq += e * e;
            abs += e.abs();
        }
        count += pred.numel();
    }
    Ok(Metrics {
        mse: sq / count as f64,
        mae: abs / count as f64,
        window_count: windows.len(),
    })
}
