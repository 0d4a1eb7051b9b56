//! BLE RSSI indoor localization: recurrent fingerprint localization,
//! learned cross-phone signal translation, semi-supervised adaptation to
//! unseen phones, and a synthetic RSSI environment to exercise all of it.

pub mod augment;
pub mod baseline;
pub mod bench;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod nn;
pub mod simulate;
pub mod stats;
pub mod train;

pub use error::{Error, Result};
