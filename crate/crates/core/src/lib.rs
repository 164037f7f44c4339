//! Image captioning with a convolutional encoder over the caption history.
//!
//! Each step embeds the words generated so far, summarizes the most recent
//! window of them with stacked temporal convolutions and a highway layer,
//! fuses that summary with projected image features, and feeds the result
//! to a recurrent cell (simple RNN, LSTM, GRU or RHN) whose output scores
//! the next word. Everything runs on a small reverse-mode autograd tape in
//! `f64`.

pub mod autograd;
pub mod cells;
pub mod cli;
pub mod config;
pub mod data;
pub mod decode;
pub mod error;
pub mod gradcheck;
pub mod lang_cnn;
pub mod metrics;
pub mod model;
pub mod params;
pub mod train;

pub use error::{Error, Result};
