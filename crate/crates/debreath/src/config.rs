//! Run configuration: built-in defaults, overridden by a `key = value`
//! config file, overridden by command-line `--seed` / `--set` flags.
//!
//! The file format is line-based UTF-8; `#` starts a comment, keys live in
//! a flat dotted namespace (`stft.hop = 512`). Unknown keys are hard
//! errors. `seed` is the master seed: `train.seed` and `synth.seed`
//! default to it unless set explicitly, and the corpus split always uses
//! it. `sample_rate` likewise feeds the analysis, synthesis and MFCC
//! configurations.

use std::collections::HashSet;
use std::path::Path;

use crate::data::{LabelConfig, SynthConfig};
use crate::dsp::{SpectrogramConfig, WindowKind};
use crate::error::{Error, Result};
use crate::eval::MfccConfig;
use crate::model::UNetConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub stft: SpectrogramConfig,
    pub unet: UNetConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub mfcc: MfccConfig,
    pub label: LabelConfig,
    pub split_fractions: (f64, f64, f64),
    explicit: HashSet<&'static str>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            stft: SpectrogramConfig::default(),
            unet: UNetConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            mfcc: MfccConfig::default(),
            label: LabelConfig::default(),
            split_fractions: (0.80, 0.11, 0.09),
            explicit: HashSet::new(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("key {key:?}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "key {key:?}: expected true or false, got {value:?}"
        ))),
    }
}

impl RunConfig {
    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let key = key.trim();
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "sample_rate" => {
                let rate: u32 = parse_num(key, value)?;
                self.stft.sample_rate = rate;
                self.synth.sample_rate = rate;
                self.mfcc.sample_rate = rate;
            }
            "stft.frame_length" => self.stft.frame_length = parse_num(key, value)?,
            "stft.hop" => self.stft.hop = parse_num(key, value)?,
            "stft.window" => self.stft.window_kind = WindowKind::parse(value)?,
            "stft.centered" => self.stft.centered = parse_bool(key, value)?,
            "unet.depth" => self.unet.depth = parse_num(key, value)?,
            "unet.base_filters" => self.unet.base_filters = parse_num(key, value)?,
            "unet.dropout" => self.unet.dropout_rate = parse_num(key, value)?,
            "unet.batch_norm" => self.unet.use_batch_norm = parse_bool(key, value)?,
            "unet.out_classes" => self.unet.out_classes = parse_num(key, value)?,
            "unet.input_frames" => self.unet.input_frames = parse_num(key, value)?,
            "unet.input_bins" => self.unet.input_bins = parse_num(key, value)?,
            "train.learning_rate" => self.train.learning_rate = parse_num(key, value)?,
            "train.beta1" => self.train.beta1 = parse_num(key, value)?,
            "train.beta2" => self.train.beta2 = parse_num(key, value)?,
            "train.epsilon" => self.train.epsilon = parse_num(key, value)?,
            "train.batch_size" => self.train.batch_size = parse_num(key, value)?,
            "train.max_epochs" => self.train.max_epochs = parse_num(key, value)?,
            "train.patience" => self.train.patience = parse_num(key, value)?,
            "train.min_delta" => self.train.min_delta = parse_num(key, value)?,
            "train.seed" => {
                self.train.seed = parse_num(key, value)?;
                self.explicit.insert("train.seed");
            }
            "train.patches_per_pair" => self.train.patches_per_pair = parse_num(key, value)?,
            "train.max_bin" => {
                self.train.max_bin = if value == "none" {
                    None
                } else {
                    Some(parse_num(key, value)?)
                }
            }
            "synth.seed" => {
                self.synth.seed = parse_num(key, value)?;
                self.explicit.insert("synth.seed");
            }
            "synth.clip_seconds" => self.synth.clip_seconds = parse_num(key, value)?,
            "synth.f0_min" => self.synth.f0_min_hz = parse_num(key, value)?,
            "synth.f0_max" => self.synth.f0_max_hz = parse_num(key, value)?,
            "synth.harmonics" => self.synth.harmonics = parse_num(key, value)?,
            "synth.vibrato_depth" => self.synth.vibrato_depth = parse_num(key, value)?,
            "synth.vibrato_rate" => self.synth.vibrato_rate_hz = parse_num(key, value)?,
            "synth.pause_density" => self.synth.pause_density = parse_num(key, value)?,
            "synth.bursts_per_clip" => self.synth.bursts_per_clip = parse_num(key, value)?,
            "synth.burst_min_seconds" => self.synth.burst_min_seconds = parse_num(key, value)?,
            "synth.burst_max_seconds" => self.synth.burst_max_seconds = parse_num(key, value)?,
            "synth.burst_low_hz" => self.synth.burst_low_hz = parse_num(key, value)?,
            "synth.burst_high_hz" => self.synth.burst_high_hz = parse_num(key, value)?,
            "synth.burst_attack_ms" => self.synth.burst_attack_ms = parse_num(key, value)?,
            "synth.burst_decay_ms" => self.synth.burst_decay_ms = parse_num(key, value)?,
            "synth.burst_gain_db" => self.synth.burst_gain_db = parse_num(key, value)?,
            "synth.noise_floor_db" => self.synth.noise_floor_db = parse_num(key, value)?,
            "mfcc.mel_bands" => self.mfcc.mel_bands = parse_num(key, value)?,
            "mfcc.coefficients" => self.mfcc.coefficients = parse_num(key, value)?,
            "mfcc.fmin" => self.mfcc.fmin_hz = parse_num(key, value)?,
            "mfcc.fmax" => {
                self.mfcc.fmax_hz = if value == "nyquist" {
                    None
                } else {
                    Some(parse_num(key, value)?)
                }
            }
            "mfcc.frame_length" => self.mfcc.frame_length = parse_num(key, value)?,
            "mfcc.hop" => self.mfcc.hop = parse_num(key, value)?,
            "mfcc.log_floor" => self.mfcc.log_floor = parse_num(key, value)?,
            "eval.theta" => self.label.theta = parse_num(key, value)?,
            "eval.floor_db" => self.label.floor_db = parse_num(key, value)?,
            "split.train" => self.split_fractions.0 = parse_num(key, value)?,
            "split.validation" => self.split_fractions.1 = parse_num(key, value)?,
            "split.test" => self.split_fractions.2 = parse_num(key, value)?,
            _ => {
                return Err(Error::Config(format!("unknown configuration key {key:?}")));
            }
        }
        Ok(())
    }

    /// Parse a config file's contents into this configuration.
    pub fn apply_file_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{origin}:{}: expected \"key = value\", got {raw:?}",
                    lineno + 1
                )));
            };
            self.set(key, value)
                .map_err(|e| Error::Config(format!("{origin}:{}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_file_text(&text, &path.display().to_string())
    }

    /// Apply one `KEY=VALUE` command-line override.
    pub fn apply_set_flag(&mut self, assignment: &str) -> Result<()> {
        let Some((key, value)) = assignment.split_once('=') else {
            return Err(Error::Config(format!(
                "--set expects KEY=VALUE, got {assignment:?}"
            )));
        };
        self.set(key, value)
    }

    /// Propagate the master seed into unset per-module seeds and validate
    /// every sub-configuration. Call once after all overrides.
    pub fn finalize(&mut self) -> Result<()> {
        if !self.explicit.contains("train.seed") {
            self.train.seed = self.seed;
        }
        if !self.explicit.contains("synth.seed") {
            self.synth.seed = self.seed;
        }
        self.stft.validate()?;
        self.unet.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        self.mfcc.validate()?;
        if !(0.0..=1.0).contains(&self.label.theta) {
            return Err(Error::Config("eval.theta must lie in [0, 1]".into()));
        }
        let sum = self.split_fractions.0 + self.split_fractions.1 + self.split_fractions.2;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}
