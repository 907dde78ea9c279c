//! Mono audio clips and WAV file I/O.
//!
//! Supported container: RIFF/WAVE, single channel, 16-bit integer PCM or
//! 32-bit IEEE float. Anything else is rejected with an explicit
//! unsupported-format error rather than silently downmixed. 16-bit samples
//! map to [-1, 1) by division by 32768.

use std::path::Path;

use crate::error::{Error, Result};

/// A mono time-domain signal together with its sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Invariant("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Invariant(
                "audio samples must be finite (no NaN/Inf)".into(),
            ));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let e: f64 = self.samples.iter().map(|s| s * s).sum();
        (e / self.samples.len() as f64).sqrt()
    }
}

/// Read a mono WAV file.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: format!("{} channels (only mono is supported)", spec.channels),
        });
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (format, bits) => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!("{bits}-bit {format:?} samples (expected 16-bit PCM or 32-bit float)"),
            })
        }
    };
    AudioClip::new(samples, spec.sample_rate)
}

/// Sample rate and length of a WAV file without decoding the samples.
pub fn wav_info(path: &Path) -> Result<(u32, usize)> {
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: format!("{} channels (only mono is supported)", spec.channels),
        });
    }
    Ok((spec.sample_rate, reader.duration() as usize))
}

/// Write a clip as 16-bit PCM. Samples are clamped to the representable
/// range; the inverse of the read mapping is `round(x * 32768)`.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in clip.samples() {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))?;
    Ok(())
}

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::FormatError(msg) => Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: msg.to_string(),
        },
        hound::Error::Unsupported => Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: "unsupported WAV encoding".into(),
        },
        other => Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_rejects_nan() {
        assert!(AudioClip::new(vec![0.0, f64::NAN], 22050).is_err());
    }

    #[test]
    fn clip_rejects_zero_rate() {
        assert!(AudioClip::new(vec![0.0], 0).is_err());
    }

    #[test]
    fn pcm16_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        // Values chosen on the 1/32768 grid so quantization is exact.
        let samples: Vec<f64> = (-4i32..4).map(|i| i as f64 * 1024.0 / 32768.0).collect();
        let clip = AudioClip::new(samples.clone(), 22050).unwrap();
        write_wav(&path, &clip).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate(), 22050);
        assert_eq!(back.samples(), clip.samples());
    }

    #[test]
    fn stereo_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 22050,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..8 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        let err = read_wav(&path).unwrap_err();
        assert!(matches!(err, Error::UnsupportedFormat { .. }), "{err}");
    }

    #[test]
    fn wrong_bit_depth_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w8.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 22050,
            bits_per_sample: 8,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..8 {
            w.write_sample(0i8).unwrap();
        }
        w.finalize().unwrap();
        assert!(matches!(
            read_wav(&path).unwrap_err(),
            Error::UnsupportedFormat { .. }
        ));
    }

    #[test]
    fn float32_wavs_are_readable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f32.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 22050,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for i in 0..4 {
            w.write_sample(i as f32 * 0.25).unwrap();
        }
        w.finalize().unwrap();
        let clip = read_wav(&path).unwrap();
        assert_eq!(clip.samples(), &[0.0, 0.25, 0.5, 0.75]);
    }

    #[test]
    fn out_of_range_samples_clamp_on_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.wav");
        let clip = AudioClip::new(vec![1.5, -1.5], 22050).unwrap();
        write_wav(&path, &clip).unwrap();
        let back = read_wav(&path).unwrap();
        assert!((back.samples()[0] - 32767.0 / 32768.0).abs() < 1e-12);
        assert_eq!(back.samples()[1], -1.0);
    }
}
