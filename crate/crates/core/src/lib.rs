//! Graph-consistent generative forecasting with exogenous variables.
//!
//! A small f64 autograd engine ([`graph`]), neural building blocks ([`nn`]),
//! the forecasting model ([`model`]), data handling ([`data`]), training and
//! evaluation ([`train`]), reference baselines ([`baselines`]) and
//! checkpointing ([`checkpoint`]).

pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod nn;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
