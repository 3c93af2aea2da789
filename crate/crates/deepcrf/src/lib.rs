//! Channel-resilient CSI fingerprint identification workbench.
//!
//! End-to-end pipeline: synthetic CSI generation under WLAN multipath models
//! ([`channel`], [`signal`]), model-based fingerprint extraction baselines
//! ([`extract`]), model-inspired data augmentation ([`augment`]), a compact
//! convolutional identifier trained in two stages ([`net`]), multi-measurement
//! decision fusion and evaluation ([`fusion`]), and the file formats plus the
//! scaled experiment harness that tie it together ([`io`], [`harness`]).

pub mod augment;
pub mod channel;
pub mod error;
pub mod extract;
pub mod fusion;
pub mod harness;
pub mod io;
pub mod net;
pub mod signal;
pub mod stats;
pub mod wavelet;
pub mod spectrum;

pub use error::{Error, Result};
