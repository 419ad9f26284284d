//! Central-difference gradient checks against the autograd tape.

use serde::Serialize;

use crate::data::SeriesWindow;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::params::ParamStore;
use crate::rng::seeded;
use crate::train::{window_gradients, LossFlags, Trainable};

pub const DEFAULT_STEP: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares analytic gradients with central differences for every scalar of
/// every parameter (or every `stride`-th scalar when `stride > 1`). The same
/// RNG seed is used for every evaluation so stochastic paths are frozen.
pub fn check_model<M: Trainable + Clone>(
    model: &M,
    window: &SeriesWindow,
    seed: u64,
    step: f64,
    stride: usize,
) -> Result<GradCheckReport> {
    let flags = LossFlags::default();
    let (analytic, _) = window_gradients(model, window, &mut seeded(seed, &[]), &flags)?;
    let mut probe = model.clone();
    let loss_at = |m: &M| -> Result<f64> {
        let mut g = Graph::with_params(m.params());
        let lv = m.loss_graph(&mut g, window, &mut seeded(seed, &[]))?;
        Ok(g.value(lv.total).item())
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    let ids: Vec<_> = model.params().ids().collect();
    let mut counter = 0usize;
    for id in ids {
        let n = model.params().get(id).expect("own id").numel();
        for i in 0..n {
            counter += 1;
            if stride > 1 && counter % stride != 0 {
                continue;
            }
            let original = probe.params().get(id).expect("own id").data()[i];
            set(probe.params_mut(), id, i, original + step);
            let plus = loss_at(&probe)?;
            set(probe.params_mut(), id, i, original - step);
            let minus = loss_at(&probe)?;
            set(probe.params_mut(), id, i, original);
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[id.0].data()[i];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFiniteGradient(model.params().name(id).to_string()));
            }
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_param = model.params().name(id).to_string();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

fn set(store: &mut ParamStore, id: crate::params::ParamId, i: usize, v: f64) {
    store.get_mut(id).expect("own id").data_mut()[i] = v;
}
