//! Quality metrics: MFCC distance between processed and target audio, and
//! frame-level breath-removal accuracy.

mod mfcc;

pub use mfcc::{mfcc, mfcc_distance, MfccConfig};

use std::path::Path;

use crate::audio::AudioClip;
use crate::data::{frame_breath_labels, Corpus, LabelConfig};
use crate::dsp::SpectrogramConfig;
use crate::error::{Error, Result};
use crate::model::load_model;
use crate::pipeline::process_clip;

/// Per-pair metrics.
#[derive(Clone, Debug)]
pub struct EvalRow {
    pub pair: String,
    pub mfcc_distance: f64,
    pub accuracy: f64,
    pub duration_s: f64,
}

/// Metrics for a whole split; aggregates are duration-weighted means.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn total_duration(&self) -> f64 {
        self.rows.iter().map(|r| r.duration_s).sum()
    }

    pub fn aggregate_mfcc_distance(&self) -> f64 {
        let total = self.total_duration();
        self.rows
            .iter()
            .map(|r| r.mfcc_distance * r.duration_s)
            .sum::<f64>()
            / total
    }

    pub fn aggregate_accuracy(&self) -> f64 {
        let total = self.total_duration();
        self.rows
            .iter()
            .map(|r| r.accuracy * r.duration_s)
            .sum::<f64>()
            / total
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("pair,mfcc_distance,accuracy,duration_s\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.pair, r.mfcc_distance, r.accuracy, r.duration_s
            ));
        }
        out
    }

    pub fn summary_line(&self) -> String {
        format!(
            "pairs={} mfcc_distance={} accuracy={} duration_s={}",
            self.rows.len(),
            self.aggregate_mfcc_distance(),
            self.aggregate_accuracy(),
            self.total_duration()
        )
    }
}

/// Fraction of frames where the prediction matches the ground truth.
pub fn breath_accuracy(labels_true: &[bool], labels_pred: &[bool]) -> Result<f64> {
    if labels_true.len() != labels_pred.len() {
        return Err(Error::Input(format!(
            "label sequences differ in length: {} vs {}",
            labels_true.len(),
            labels_pred.len()
        )));
    }
    if labels_true.is_empty() {
        return Err(Error::Input("label sequences are empty".into()));
    }
    let matches = labels_true
        .iter()
        .zip(labels_pred)
        .filter(|(a, b)| a == b)
        .count();
    Ok(matches as f64 / labels_true.len() as f64)
}

/// Evaluate a stored model over the given pairs: run the removal pipeline,
/// score MFCC distance between output and target, and score frame-level
/// breath accuracy against labels derived from the (input, target) pair.
pub fn evaluate(
    model_path: &Path,
    corpus: &Corpus,
    pair_ids: &[String],
    stft_config: &SpectrogramConfig,
    mfcc_config: &MfccConfig,
    label_config: &LabelConfig,
    identity_mask: bool,
) -> Result<EvalReport> {
    if pair_ids.is_empty() {
        return Err(Error::Input("no pairs to evaluate".into()));
    }
    let (model_config, params) = load_model(model_path)?;
    let mut rows = Vec::new();
    for id in pair_ids {
        let pair = corpus.by_id(id)?;
        // Trim both sides to a common length so the spectrogram frames and
        // metric windows line up exactly.
        let common = pair.input.len().min(pair.target.len());
        let input = AudioClip::new(pair.input.samples()[..common].to_vec(), pair.input.sample_rate())?;
        let target =
            AudioClip::new(pair.target.samples()[..common].to_vec(), pair.target.sample_rate())?;

        let processed = process_clip(&params, &model_config, stft_config, &input, identity_mask)?;
        let target_processed = process_clip(&params, &model_config, stft_config, &target, true)?;

        let truth = frame_breath_labels(&processed.input_mag, &target_processed.input_mag, label_config)?;
        let predicted = frame_breath_labels(&processed.input_mag, &processed.output_mag, label_config)?;
        let accuracy = breath_accuracy(&truth, &predicted)?;

        let out_len = processed.output.len().min(target.len());
        let output_trimmed =
            AudioClip::new(processed.output.samples()[..out_len].to_vec(), input.sample_rate())?;
        let target_trimmed = AudioClip::new(target.samples()[..out_len].to_vec(), target.sample_rate())?;
        let distance = mfcc_distance(&output_trimmed, &target_trimmed, mfcc_config)?;

        rows.push(EvalRow {
            pair: id.clone(),
            mfcc_distance: distance,
            accuracy,
            duration_s: input.duration_seconds(),
        });
    }
    Ok(EvalReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SynthConfig;
    use crate::model::{init_params, save_model, UNetConfig};

    #[test]
    fn breath_accuracy_counts_matches() {
        let truth = vec![true, false, false, true, false];
        assert_eq!(breath_accuracy(&truth, &truth).unwrap(), 1.0);

        // 10% breath frames scored all-false: accuracy 0.9.
        let mut labels = vec![false; 10];
        labels[3] = true;
        let none = vec![false; 10];
        assert_eq!(breath_accuracy(&labels, &none).unwrap(), 0.9);

        // Complement prediction flips the accuracy.
        let pred = vec![true, true, false, true, false];
        let acc = breath_accuracy(&truth, &pred).unwrap();
        let complement: Vec<bool> = pred.iter().map(|b| !b).collect();
        let acc_c = breath_accuracy(&truth, &complement).unwrap();
        assert!((acc + acc_c - 1.0).abs() < 1e-15);
    }

    #[test]
    fn breath_accuracy_rejects_length_mismatch() {
        assert!(breath_accuracy(&[true], &[true, false]).is_err());
    }

    #[test]
    fn identity_mask_reproduces_input_vs_target_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let stft_cfg = SpectrogramConfig {
            frame_length: 1024,
            hop: 256,
            ..SpectrogramConfig::default()
        };
        let synth_cfg = SynthConfig {
            clip_seconds: 2.0,
            ..SynthConfig::default()
        };
        let corpus = Corpus::synthetic(&synth_cfg, &stft_cfg, 2).unwrap();

        let unet_cfg = UNetConfig {
            depth: 2,
            base_filters: 2,
            input_frames: 16,
            input_bins: 16,
            ..UNetConfig::default()
        };
        let params = init_params(&unet_cfg, 0).unwrap();
        let model_path = dir.path().join("model.brnm");
        save_model(&model_path, &unet_cfg, &params).unwrap();

        let mfcc_cfg = MfccConfig::default();
        let ids: Vec<String> = corpus.pairs.iter().map(|p| p.id.clone()).collect();
        let report = evaluate(
            &model_path,
            &corpus,
            &ids,
            &stft_cfg,
            &mfcc_cfg,
            &LabelConfig::default(),
            true,
        )
        .unwrap();

        for (row, pair) in report.rows.iter().zip(&corpus.pairs) {
            let common = pair.input.len().min(pair.target.len());
            let trimmed = (common / stft_cfg.hop) * stft_cfg.hop;
            let input = AudioClip::new(pair.input.samples()[..trimmed].to_vec(), 22050).unwrap();
            let target = AudioClip::new(pair.target.samples()[..trimmed].to_vec(), 22050).unwrap();
            let direct = mfcc_distance(&input, &target, &mfcc_cfg).unwrap();
            assert!(
                (row.mfcc_distance - direct).abs() < 1e-6,
                "{} vs {direct}",
                row.mfcc_distance
            );
        }
    }

    #[test]
    fn report_aggregates_are_duration_weighted() {
        let report = EvalReport {
            rows: vec![
                EvalRow {
                    pair: "a".into(),
                    mfcc_distance: 1.0,
                    accuracy: 1.0,
                    duration_s: 3.0,
                },
                EvalRow {
                    pair: "b".into(),
                    mfcc_distance: 2.0,
                    accuracy: 0.5,
                    duration_s: 1.0,
                },
            ],
        };
        assert!((report.aggregate_mfcc_distance() - 1.25).abs() < 1e-12);
        assert!((report.aggregate_accuracy() - 0.875).abs() < 1e-12);
        assert!(report.to_csv().starts_with("pair,mfcc_distance,accuracy,duration_s\n"));
    }
}
