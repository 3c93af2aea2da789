//! File formats and configuration.
//!
//! * [`csir`] — the binary CSI record container (magic `CSIR`).
//! * [`checkpoint`] — named-array parameter checkpoints (magic `DCKP`).
//! * [`config`] — the TOML run configuration with typo-safe parsing.
//! * [`import`] — adapter mapping external layouts onto the `CSIR` format.

pub mod checkpoint;
pub mod config;
pub mod csir;
pub mod import;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use config::RunConfig;
pub use csir::{CsirReader, CsirWriter};
