//! Mel-frequency cepstral coefficients and the distance metric built on
//! them.
//!
//! Pipeline: power spectrogram, triangular mel filterbank (HTK scale,
//! 2595 log10(1 + f/700)), floored log, orthonormal DCT-II, keep
//! coefficients 1..=13 (the 0th carries overall level and is dropped).

use std::f64::consts::PI;

use crate::audio::AudioClip;
use crate::dsp::{split, stft, SpectrogramConfig, WindowKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct MfccConfig {
    pub mel_bands: usize,
    pub coefficients: usize,
    pub fmin_hz: f64,
    /// Upper band edge; `None` uses the Nyquist frequency.
    pub fmax_hz: Option<f64>,
    pub frame_length: usize,
    pub hop: usize,
    pub log_floor: f64,
    pub sample_rate: u32,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            mel_bands: 40,
            coefficients: 13,
            fmin_hz: 0.0,
            fmax_hz: None,
            frame_length: 2048,
            hop: 512,
            log_floor: 1e-10,
            sample_rate: 22050,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self) -> Result<()> {
        if self.coefficients > self.mel_bands {
            return Err(Error::Config(format!(
                "{} coefficients exceed {} mel bands",
                self.coefficients, self.mel_bands
            )));
        }
        if self.mel_bands == 0 || self.coefficients == 0 {
            return Err(Error::Config("mel_bands and coefficients must be >= 1".into()));
        }
        let fmax = self.fmax();
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < fmax) {
            return Err(Error::Config(format!(
                "mel band range [{}, {fmax}) is empty",
                self.fmin_hz
            )));
        }
        if self.log_floor <= 0.0 {
            return Err(Error::Config("log_floor must be positive".into()));
        }
        self.spectrogram_config().validate()
    }

    pub fn fmax(&self) -> f64 {
        self.fmax_hz
            .unwrap_or(self.sample_rate as f64 / 2.0)
            .min(self.sample_rate as f64 / 2.0)
    }

    fn spectrogram_config(&self) -> SpectrogramConfig {
        SpectrogramConfig {
            frame_length: self.frame_length,
            hop: self.hop,
            window_kind: WindowKind::Hann,
            centered: true,
            sample_rate: self.sample_rate,
        }
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filter rows over the FFT bins, peak 1.
pub(crate) fn mel_filterbank(config: &MfccConfig) -> Vec<Vec<f64>> {
    let bins = config.frame_length / 2 + 1;
    let bin_hz = config.sample_rate as f64 / config.frame_length as f64;
    let mel_lo = hz_to_mel(config.fmin_hz);
    let mel_hi = hz_to_mel(config.fmax());
    let points: Vec<f64> = (0..config.mel_bands + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (config.mel_bands + 1) as f64))
        .collect();

    (0..config.mel_bands)
        .map(|band| {
            let (lo, center, hi) = (points[band], points[band + 1], points[band + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let rise = if center > lo { (f - lo) / (center - lo) } else { 1.0 };
                    let fall = if hi > center { (hi - f) / (hi - center) } else { 1.0 };
                    rise.min(fall).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// MFCC matrix, `frames x coefficients`.
pub fn mfcc(clip: &AudioClip, config: &MfccConfig) -> Result<Tensor<f64>> {
    config.validate()?;
    if clip.sample_rate() != config.sample_rate {
        return Err(Error::Input(format!(
            "clip sample rate {} does not match MFCC config {}",
            clip.sample_rate(),
            config.sample_rate
        )));
    }
    let spec_cfg = config.spectrogram_config();
    let (mag, _) = split(&stft(clip, &spec_cfg)?);
    let filterbank = mel_filterbank(config);
    let bands = config.mel_bands;
    let n_coeff = config.coefficients;

    // Orthonormal DCT-II scale for k >= 1; the k = 0 coefficient (overall
    // level) is discarded.
    let scale = (2.0 / bands as f64).sqrt();

    let mut out = vec![0.0f64; mag.frames * n_coeff];
    let mut log_mel = vec![0.0f64; bands];
    for frame in 0..mag.frames {
        let row = mag.frame(frame);
        for (b, filter) in filterbank.iter().enumerate() {
            let energy: f64 = filter
                .iter()
                .zip(row)
                .map(|(&w, &m)| w * m * m)
                .sum();
            log_mel[b] = energy.max(config.log_floor).ln();
        }
        for k in 1..=n_coeff {
            let mut acc = 0.0;
            for (n, &v) in log_mel.iter().enumerate() {
                acc += v * (PI * k as f64 * (2 * n + 1) as f64 / (2 * bands) as f64).cos();
            }
            out[frame * n_coeff + (k - 1)] = scale * acc;
        }
    }
    Tensor::new(vec![mag.frames, n_coeff], out)
}

/// Mean per-frame Euclidean distance between MFCC vectors, normalized by
/// the coefficient count. Clips may differ in length by at most one hop
/// and are trimmed to the shorter one.
pub fn mfcc_distance(a: &AudioClip, b: &AudioClip, config: &MfccConfig) -> Result<f64> {
    if a.len().abs_diff(b.len()) > config.hop {
        return Err(Error::Input(format!(
            "clip lengths {} and {} differ by more than one hop ({})",
            a.len(),
            b.len(),
            config.hop
        )));
    }
    let common = a.len().min(b.len());
    let ta = AudioClip::new(a.samples()[..common].to_vec(), a.sample_rate())?;
    let tb = AudioClip::new(b.samples()[..common].to_vec(), b.sample_rate())?;
    let ma = mfcc(&ta, config)?;
    let mb = mfcc(&tb, config)?;
    let frames = ma.shape()[0];
    let n_coeff = config.coefficients;
    let mut acc = 0.0;
    for f in 0..frames {
        let mut d2 = 0.0;
        for c in 0..n_coeff {
            let d = ma.data()[f * n_coeff + c] - mb.data()[f * n_coeff + c];
            d2 += d * d;
        }
        acc += d2.sqrt();
    }
    Ok(acc / frames as f64 / n_coeff as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_clip(len: usize, seed: u64, amp: f64) -> AudioClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioClip::new(
            (0..len).map(|_| rng.gen_range(-amp..amp)).collect(),
            22050,
        )
        .unwrap()
    }

    #[test]
    fn silence_maps_to_one_constant_vector_per_frame() {
        let clip = AudioClip::new(vec![0.0; 8192], 22050).unwrap();
        let m = mfcc(&clip, &MfccConfig::default()).unwrap();
        let n_coeff = 13;
        let first = &m.data()[..n_coeff];
        for f in 0..m.shape()[0] {
            for c in 0..n_coeff {
                assert_eq!(m.data()[f * n_coeff + c], first[c]);
            }
        }
        // A constant log-floor spectrum has no ripple, so the kept (non-0th)
        // coefficients vanish.
        for &v in first {
            assert!(v.abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn amplitude_scaling_only_moves_the_discarded_coefficient() {
        let cfg = MfccConfig::default();
        let a = noise_clip(22050, 5, 0.5);
        let scaled =
            AudioClip::new(a.samples().iter().map(|v| v * 0.5).collect(), 22050).unwrap();
        let ma = mfcc(&a, &cfg).unwrap();
        let mb = mfcc(&scaled, &cfg).unwrap();
        for (x, y) in ma.data().iter().zip(mb.data()) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn filterbank_rows_are_positive_and_overlap() {
        let cfg = MfccConfig::default();
        let fb = mel_filterbank(&cfg);
        assert_eq!(fb.len(), 40);
        for row in &fb {
            assert!(row.iter().sum::<f64>() > 0.0);
        }
        for pair in fb.windows(2) {
            let shared = pair[0]
                .iter()
                .zip(&pair[1])
                .any(|(&a, &b)| a > 0.0 && b > 0.0);
            assert!(shared, "adjacent filters do not overlap");
        }
    }

    #[test]
    fn distance_is_a_pseudometric() {
        let cfg = MfccConfig::default();
        let a = noise_clip(11025, 1, 0.5);
        let b = noise_clip(11025, 2, 0.5);
        let c = noise_clip(11025, 3, 0.5);
        assert_eq!(mfcc_distance(&a, &a, &cfg).unwrap(), 0.0);
        let ab = mfcc_distance(&a, &b, &cfg).unwrap();
        let ba = mfcc_distance(&b, &a, &cfg).unwrap();
        assert_eq!(ab, ba);
        assert!(ab >= 0.0);
        let ac = mfcc_distance(&a, &c, &cfg).unwrap();
        let bc = mfcc_distance(&b, &c, &cfg).unwrap();
        assert!(ac <= ab + bc + 1e-12, "{ac} vs {ab} + {bc}");
    }

    #[test]
    fn length_mismatch_beyond_one_hop_is_rejected() {
        let cfg = MfccConfig::default();
        let a = noise_clip(11025, 1, 0.5);
        let b = noise_clip(11025 + 513, 1, 0.5);
        assert!(matches!(
            mfcc_distance(&a, &b, &cfg).unwrap_err(),
            Error::Input(_)
        ));
        let c = noise_clip(11025 + 512, 1, 0.5);
        assert!(mfcc_distance(&a, &c, &cfg).is_ok());
    }

    #[test]
    fn sample_rate_mismatch_is_rejected() {
        let cfg = MfccConfig::default();
        let clip = AudioClip::new(vec![0.1; 4096], 44100).unwrap();
        assert!(matches!(mfcc(&clip, &cfg).unwrap_err(), Error::Input(_)));
    }
}
