mod common;

use common::{random_window, synthetic_splits};
use gcgnet::baselines::{FusionConfig, FusionWrapper, LinearConfig, LinearForecaster};
use gcgnet::data::SynthSpec;
use gcgnet::gradcheck::check_model;
use gcgnet::params::{ParamId, ParamStore};
use gcgnet::tensor::Tensor;
use gcgnet::train::{evaluate, train, Forecaster, TrainConfig};
use gcgnet::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Standardized test MSE the trained fusion baseline must beat on
/// noiseless `y = x` data.
const FUSION_MSE_BOUND: f64 = 0.05;

fn set(store: &mut ParamStore, id: ParamId, value: Tensor) {
    *store.get_mut(id).unwrap() = value;
}

fn linear(lookback: usize, horizon: usize, denormalize_output: bool) -> LinearForecaster {
    LinearForecaster::new(
        LinearConfig {
            n_endo: 2,
            n_exo: 1,
            lookback,
            horizon,
            denormalize_output,
            ..LinearConfig::default()
        },
        3,
    )
    .unwrap()
}

#[test]
fn zero_weight_linear_gives_bias() {
    let mut m = linear(8, 4, false);
    let layer = m.layer().clone();
    set(m.params_mut(), layer.weight(), Tensor::zeros(&[8, 4]));
    set(m.params_mut(), layer.bias().unwrap(), Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]));
    let w = random_window(&mut ChaCha8Rng::seed_from_u64(1), 2, 1, 8, 4);
    let y = m.linear_forecast(&w).unwrap();
    assert_eq!(y.to_rows(), vec![vec![1.0, 2.0, 3.0, 4.0]; 2]);
}

#[test]
fn last_value_selector_is_persistence() {
    let mut m = linear(8, 4, true);
    let layer = m.layer().clone();
    let mut weight = Tensor::zeros(&[8, 4]);
    for j in 0..4 {
        weight.set(7, j, 1.0);
    }
    set(m.params_mut(), layer.weight(), weight);
    let w = random_window(&mut ChaCha8Rng::seed_from_u64(2), 2, 1, 8, 4);
    let y = m.predict(&w).unwrap();
    for i in 0..2 {
        for j in 0..4 {
            assert!((y.at(i, j) - w.x_endo.at(i, 7)).abs() < 1e-12);
        }
    }
}

#[test]
fn linear_gradients_match_finite_differences() {
    let m = LinearForecaster::new(
        LinearConfig {
            n_endo: 1,
            n_exo: 1,
            lookback: 8,
            horizon: 4,
            ..LinearConfig::default()
        },
        4,
    )
    .unwrap();
    let w = random_window(&mut ChaCha8Rng::seed_from_u64(4), 1, 1, 8, 4);
    let r = check_model(&m, &w, 0, 1e-5, 1).unwrap();
    assert_eq!(r.checked, 8 * 4 + 4);
    assert!(r.max_relative_error < 1e-4, "{r:?}");
}

#[test]
fn linear_rejects_wrong_shapes() {
    let m = linear(8, 4, true);
    let w = random_window(&mut ChaCha8Rng::seed_from_u64(5), 1, 1, 8, 4);
    assert!(matches!(m.predict(&w), Err(Error::Shape(_))));
}

fn fusion(hidden: usize) -> FusionWrapper {
    FusionWrapper::new(
        FusionConfig {
            n_endo: 2,
            n_exo: 2,
            lookback: 8,
            horizon: 3,
            hidden,
            ..FusionConfig::default()
        },
        6,
    )
    .unwrap()
}

#[test]
fn identity_fusion_returns_inner_forecast() {
    let f = 3;
    let mut m = fusion(2 * f);
    let layers = m.fusion().layers().to_vec();
    let (in_dim, hidden) = (layers[0].in_dim(), layers[0].out_dim());
    let mut w0 = Tensor::zeros(&[in_dim, hidden]);
    let mut w1 = Tensor::zeros(&[hidden, f]);
    for j in 0..f {
        w0.set(j, j, 1.0);
        w0.set(j, f + j, -1.0);
        w1.set(j, j, 1.0);
        w1.set(f + j, j, -1.0);
    }
    set(m.params_mut(), layers[0].weight(), w0);
    set(m.params_mut(), layers[1].weight(), w1);
    set(m.params_mut(), layers[0].bias().unwrap(), Tensor::zeros(&[hidden]));
    set(m.params_mut(), layers[1].bias().unwrap(), Tensor::zeros(&[f]));
    let w = random_window(&mut ChaCha8Rng::seed_from_u64(7), 2, 2, 8, 3);
    let fused = m.fusion_forecast(&w, true).unwrap();
    let inner = m.fusion_forecast(&w, false).unwrap();
    assert!(fused.max_abs_diff(&inner) < 1e-12);
}

#[test]
fn bypass_equals_standalone_inner_model() {
    let m = fusion(16);
    let mut lin = LinearForecaster::new(
        LinearConfig {
            n_endo: 2,
            n_exo: 2,
            lookback: 8,
            horizon: 3,
            ..LinearConfig::default()
        },
        0,
    )
    .unwrap();
    let (src, dst) = (m.inner().clone(), lin.layer().clone());
    let weight = m.params().get(src.weight()).unwrap().clone();
    let bias = m.params().get(src.bias().unwrap()).unwrap().clone();
    set(lin.params_mut(), dst.weight(), weight);
    set(lin.params_mut(), dst.bias().unwrap(), bias);
    let w = random_window(&mut ChaCha8Rng::seed_from_u64(8), 2, 2, 8, 3);
    assert_eq!(m.fusion_forecast(&w, false).unwrap(), lin.predict(&w).unwrap());
}

#[test]
fn fusion_requires_future_exo() {
    let m = fusion(16);
    let mut w = random_window(&mut ChaCha8Rng::seed_from_u64(9), 2, 2, 8, 3);
    w.y_exo = Tensor::zeros(&[0, 0]);
    assert!(matches!(m.fusion_forecast(&w, true), Err(Error::MissingInput("y_exo"))));
    assert!(m.fusion_forecast(&w, false).is_ok());
}

#[test]
fn fusion_gradients_match_finite_differences() {
    let m = FusionWrapper::new(
        FusionConfig {
            n_endo: 1,
            n_exo: 1,
            lookback: 6,
            horizon: 3,
            hidden: 5,
            ..FusionConfig::default()
        },
        10,
    )
    .unwrap();
    let w = random_window(&mut ChaCha8Rng::seed_from_u64(10), 1, 1, 6, 3);
    let r = check_model(&m, &w, 0, 1e-5, 1).unwrap();
    assert!(r.max_relative_error < 1e-4, "{r:?}");
}

#[test]
fn fusion_uses_future_exo_that_linear_cannot() {
    let spec = SynthSpec {
        length: 1200,
        coupling: vec![1.0],
        noise_std: 0.0,
        season_amplitude: 0.0,
        ..SynthSpec::default()
    };
    let (t, f) = (24, 6);
    let s = synthetic_splits(&spec, 11, t, f);
    let cfg = TrainConfig {
        epochs: 40,
        batch_size: 16,
        lr: 3e-3,
        patience: 8,
        seed: 11,
        ..TrainConfig::default()
    };
    let mut lin = LinearForecaster::new(
        LinearConfig {
            n_endo: 1,
            n_exo: 1,
            lookback: t,
            horizon: f,
            ..LinearConfig::default()
        },
        11,
    )
    .unwrap();
    train(&mut lin, &s.train, &s.val, &cfg).unwrap();
    let mut fus = FusionWrapper::new(
        FusionConfig {
            n_endo: 1,
            n_exo: 1,
            lookback: t,
            horizon: f,
            ..FusionConfig::default()
        },
        11,
    )
    .unwrap();
    train(&mut fus, &s.train, &s.val, &cfg).unwrap();
    let lin_mse = evaluate(&lin, &s.test).unwrap().mse;
    let fus_mse = evaluate(&fus, &s.test).unwrap().mse;
    println!("linear {lin_mse:.4}, fusion {fus_mse:.4}");
    assert!(fus_mse < FUSION_MSE_BOUND);
    assert!(lin_mse > FUSION_MSE_BOUND);
}
