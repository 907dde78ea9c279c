use crate::dsp::MagnitudeSpectrogram;
use crate::error::{Error, Result};

/// Thresholds that define a "breath frame".
#[derive(Clone, Copy, Debug)]
pub struct LabelConfig {
    /// Minimum relative RMS drop between the raw and processed frame.
    pub theta: f64,
    /// Frames below this level (dBFS, windowed RMS) are never labeled.
    pub floor_db: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            theta: 0.5,
            floor_db: -60.0,
        }
    }
}

impl LabelConfig {
    pub fn floor_amplitude(&self) -> f64 {
        10f64.powf(self.floor_db / 20.0)
    }
}

/// Label each frame as breath iff the frame carries energy in `input` and
/// loses more than a `theta` fraction of its RMS in `reference`.
///
/// With `reference` being the clean recording this produces ground-truth
/// labels; with `reference` being a model output it produces predictions.
pub fn frame_breath_labels(
    input: &MagnitudeSpectrogram,
    reference: &MagnitudeSpectrogram,
    config: &LabelConfig,
) -> Result<Vec<bool>> {
    if input.frames != reference.frames || input.bins != reference.bins {
        return Err(Error::Input(format!(
            "spectrogram shapes disagree: {}x{} vs {}x{}",
            input.frames, input.bins, reference.frames, reference.bins
        )));
    }
    let floor = config.floor_amplitude();
    let in_rms = input.frame_rms_all();
    let ref_rms = reference.frame_rms_all();
    Ok(in_rms
        .iter()
        .zip(&ref_rms)
        .map(|(&i, &r)| i > floor && (i - r) / i > config.theta)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::SpectrogramConfig;

    fn mag(frames: usize, data: Vec<f64>) -> MagnitudeSpectrogram {
        let cfg = SpectrogramConfig {
            frame_length: 4,
            hop: 2,
            ..SpectrogramConfig::default()
        };
        MagnitudeSpectrogram::new(frames, 3, data, cfg).unwrap()
    }

    #[test]
    fn identical_spectrograms_have_no_breath_frames() {
        let m = mag(2, vec![1.0, 2.0, 0.5, 0.1, 0.2, 0.3]);
        let labels = frame_breath_labels(&m, &m, &LabelConfig::default()).unwrap();
        assert_eq!(labels, vec![false, false]);
    }

    #[test]
    fn loud_input_against_silent_reference_is_breath() {
        let input = mag(1, vec![1.0, 1.0, 1.0]);
        let silent = mag(1, vec![0.0, 0.0, 0.0]);
        let labels = frame_breath_labels(&input, &silent, &LabelConfig::default()).unwrap();
        assert_eq!(labels, vec![true]);
    }

    #[test]
    fn quiet_frames_stay_unlabeled_regardless_of_ratio() {
        // Frame RMS sits below the -60 dBFS floor.
        let input = mag(1, vec![1e-6, 1e-6, 1e-6]);
        let silent = mag(1, vec![0.0, 0.0, 0.0]);
        let labels = frame_breath_labels(&input, &silent, &LabelConfig::default()).unwrap();
        assert_eq!(labels, vec![false]);
    }

    #[test]
    fn raising_theta_never_adds_labels() {
        let input = mag(3, vec![1.0, 1.0, 1.0, 0.6, 0.5, 0.4, 0.2, 0.0, 0.1]);
        let reference = mag(3, vec![0.1, 0.0, 0.2, 0.3, 0.3, 0.2, 0.2, 0.0, 0.1]);
        let mut previous: Option<Vec<bool>> = None;
        for theta in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let cfg = LabelConfig {
                theta,
                ..LabelConfig::default()
            };
            let labels = frame_breath_labels(&input, &reference, &cfg).unwrap();
            if let Some(prev) = &previous {
                for (now, before) in labels.iter().zip(prev) {
                    assert!(!now | before, "theta {theta} added a label");
                }
            }
            previous = Some(labels);
        }
    }

    #[test]
    fn shape_mismatch_is_an_input_error() {
        let a = mag(1, vec![0.0; 3]);
        let b = mag(2, vec![0.0; 6]);
        assert!(matches!(
            frame_breath_labels(&a, &b, &LabelConfig::default()).unwrap_err(),
            Error::Input(_)
        ));
    }
}
