//! Breath-sound removal for studio vocal recordings.
//!
//! The pipeline analyzes a recording with a short-time Fourier transform,
//! feeds the log-compressed magnitude spectrogram through an attention
//! U-Net that predicts a per-bin soft mask in (0, 1), attenuates the linear
//! magnitudes with that mask, and resynthesizes audio with the original
//! phase. Training minimizes a mean-absolute-error term plus a
//! speech-preservation term, optimized with Adam under early stopping on
//! validation loss.
//!
//! The crate ships a deterministic synthetic corpus generator (harmonic
//! "speech" plus band-passed breath bursts in the pauses) so the whole
//! train/evaluate loop runs at desk scale without any external data.
//!
//! Start with the runnable examples:
//!
//! ```bash
//! cargo run --release --example stft_roundtrip
//! cargo run --release --example synthesize_corpus
//! cargo run --release --example train_desk_model
//! cargo run --release --example remove_breaths
//! cargo run --release --example evaluate_model
//! cargo run --release --example gradient_check
//! cargo run --release --example parameter_count
//! ```
//!
//! The same functionality is reachable through the `debreath` binary
//! (`synth`, `train`, `infer`, `eval`, `stft-dump` subcommands).

pub mod audio;
pub mod cli;
pub mod config;
pub mod dsp;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod data;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod tensor;
pub mod training;

pub use audio::AudioClip;
pub use error::{Error, ModelFormatError, Result};
pub use tensor::{Scalar, Tensor};
