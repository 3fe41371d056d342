//! Model zoo, objectives, optimization, decoding, and training loops
//! for cross-modal visual-speech learning: a 3D+2D spatial encoder,
//! conformer temporal encoder with relative positions, task heads, a
//! transformer decoder, hybrid CTC/attention training and beam search.

pub mod config;
pub mod conformer;
pub mod data;
pub mod decode;
pub mod decoder;
pub mod error;
pub mod heads;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod pretext;
pub mod schedule;
pub mod sentence;
pub mod spatial;
pub mod word;

pub use config::{init_params, param_count_report, ModelConfig, Parts};
pub use error::{ModelError, Result};
