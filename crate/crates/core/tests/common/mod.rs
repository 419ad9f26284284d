#![allow(dead_code)]

use gcgnet::data::{fit_apply_scaler, make_windows, split, synth_generate, SeriesWindow, SynthSpec};
use gcgnet::gradcheck::relative_error;
use gcgnet::graph::{Graph, Var};
use gcgnet::model::ModelConfig;
use gcgnet::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Loss `Σ out ⊙ R` for a fixed random `R`, so every output entry matters.
fn weighted_loss(g: &mut Graph, out: Var, weights: &Tensor) -> Var {
    let w = g.constant(weights.clone());
    let prod = g.mul(out, w).unwrap();
    g.sum(prod)
}

/// Largest elementwise relative error between the tape gradient and
/// central differences (`h = 1e-5`) for `op` at `inputs`.
pub fn op_grad_error(inputs: &[Tensor], seed: u64, op: &dyn Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let eval = |xs: &[Tensor], weights: Option<&Tensor>| -> (f64, Tensor, Vec<Tensor>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.variable(x.clone())).collect();
        let out = op(&mut g, &vars);
        let shape = g.value(out).shape().to_vec();
        let w = match weights {
            Some(w) => w.clone(),
            None => random_tensor(&mut ChaCha8Rng::seed_from_u64(seed), &shape, -1.0, 1.0),
        };
        let loss = weighted_loss(&mut g, out, &w);
        let value = g.value(loss).item();
        let grads = g.backward(loss).unwrap();
        let gs = vars
            .iter()
            .zip(xs)
            .map(|(v, x)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
            .collect();
        (value, w, gs)
    };
    let (_, w, analytic) = eval(inputs, None);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        for i in 0..x.numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(&plus, Some(&w)).0 - eval(&minus, Some(&w)).0) / (2.0 * h);
            worst = worst.max(relative_error(analytic[k].data()[i], numeric));
        }
    }
    worst
}

/// The micro configuration used for end-to-end gradient checks.
pub fn micro_config() -> ModelConfig {
    ModelConfig {
        n_endo: 1,
        n_exo: 1,
        lookback: 8,
        horizon: 4,
        patch_len: 4,
        d_model: 4,
        latent_gen: 2,
        latent_graph: 2,
        ..ModelConfig::default()
    }
}

pub fn random_window(rng: &mut ChaCha8Rng, n: usize, d: usize, t: usize, f: usize) -> SeriesWindow {
    SeriesWindow {
        x_endo: random_tensor(rng, &[n, t], -2.0, 2.0),
        x_exo: random_tensor(rng, &[d, t], -2.0, 2.0),
        y_exo: random_tensor(rng, &[d, f], -2.0, 2.0),
        y_endo: random_tensor(rng, &[n, f], -2.0, 2.0),
        origin_index: 0,
    }
}

pub struct Splits {
    pub train: Vec<SeriesWindow>,
    pub val: Vec<SeriesWindow>,
    pub test: Vec<SeriesWindow>,
}

/// Standardized 7:1:2 windows of a synthetic dataset.
pub fn synthetic_splits(spec: &SynthSpec, seed: u64, lookback: usize, horizon: usize) -> Splits {
    let syn = synth_generate(spec, seed).unwrap();
    let (tr, va, te) = split(&syn.dataset, [0.7, 0.1, 0.2]).unwrap();
    let (tr, rest, _) = fit_apply_scaler(&tr, &[&va, &te]).unwrap();
    Splits {
        train: make_windows(&tr, lookback, horizon, 1).unwrap(),
        val: make_windows(&rest[0], lookback, horizon, 1).unwrap(),
        test: make_windows(&rest[1], lookback, horizon, 1).unwrap(),
    }
}
