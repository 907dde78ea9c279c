//! Deterministic synthetic corpus: harmonic "speech" with pauses as the
//! clean target, plus band-passed noise bursts inside the pauses as the
//! breath surrogate.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{write_wav, AudioClip};
use crate::dsp::{windowed_frame_rms, SpectrogramConfig};
use crate::error::{Error, Result};

use super::LabelConfig;

/// Parameters of the synthetic speech/breath generator. Everything a pair
/// contains is a pure function of `(seed, index)`.
#[derive(Clone, Copy, Debug)]
pub struct SynthConfig {
    pub seed: u64,
    pub clip_seconds: f64,
    /// Fundamental is drawn per clip from this range.
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
    pub harmonics: usize,
    /// Fractional frequency deviation of the vibrato.
    pub vibrato_depth: f64,
    pub vibrato_rate_hz: f64,
    /// Target fraction of the clip spent in pauses; scales pause lengths.
    pub pause_density: f64,
    pub bursts_per_clip: usize,
    pub burst_min_seconds: f64,
    pub burst_max_seconds: f64,
    pub burst_low_hz: f64,
    pub burst_high_hz: f64,
    pub burst_attack_ms: f64,
    pub burst_decay_ms: f64,
    /// Burst RMS relative to the speech RMS, in dB.
    pub burst_gain_db: f64,
    /// Broadband room tone shared by input and target, relative to the
    /// speech RMS, in dB.
    pub noise_floor_db: f64,
    pub sample_rate: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            clip_seconds: 3.5,
            f0_min_hz: 90.0,
            f0_max_hz: 250.0,
            harmonics: 10,
            vibrato_depth: 0.02,
            vibrato_rate_hz: 5.0,
            pause_density: 0.5,
            bursts_per_clip: 2,
            burst_min_seconds: 0.15,
            burst_max_seconds: 0.5,
            burst_low_hz: 300.0,
            burst_high_hz: 2000.0,
            burst_attack_ms: 30.0,
            burst_decay_ms: 80.0,
            burst_gain_db: -12.0,
            noise_floor_db: -50.0,
            sample_rate: 22050,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clip_seconds <= 0.0 || !self.clip_seconds.is_finite() {
            return Err(Error::Config("clip_seconds must be positive".into()));
        }
        if !(self.f0_min_hz > 0.0 && self.f0_min_hz <= self.f0_max_hz) {
            return Err(Error::Config("fundamental range is empty".into()));
        }
        if self.harmonics == 0 {
            return Err(Error::Config("harmonics must be >= 1".into()));
        }
        if !(0.0 < self.pause_density && self.pause_density < 1.0) {
            return Err(Error::Config("pause_density must lie in (0, 1)".into()));
        }
        if !(self.burst_min_seconds > 0.0 && self.burst_min_seconds <= self.burst_max_seconds) {
            return Err(Error::Config("burst duration range is empty".into()));
        }
        if !(0.0 < self.burst_low_hz && self.burst_low_hz < self.burst_high_hz) {
            return Err(Error::Config("burst band is empty".into()));
        }
        if self.burst_high_hz >= self.sample_rate as f64 / 2.0 {
            return Err(Error::Config("burst band exceeds Nyquist".into()));
        }
        if !self.burst_gain_db.is_finite() {
            return Err(Error::Config("burst gain must be finite".into()));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        Ok(())
    }
}

/// One generated pair: raw input (speech + breaths), clean target, and the
/// per-STFT-frame ground truth.
#[derive(Clone, Debug)]
pub struct SynthPair {
    pub input: AudioClip,
    pub target: AudioClip,
    pub labels: Vec<bool>,
    /// Sample spans `[start, end)` of the injected bursts.
    pub burst_spans: Vec<(usize, usize)>,
}

#[derive(Clone, Copy)]
struct Span {
    start: usize,
    end: usize,
}

/// Generate pair `index` of the corpus. Bursts live strictly inside pauses
/// with a margin of one analysis frame, so no window mixes speech and
/// breath.
pub fn synth_pair(
    config: &SynthConfig,
    stft: &SpectrogramConfig,
    index: u64,
) -> Result<SynthPair> {
    config.validate()?;
    stft.validate()?;
    if config.sample_rate != stft.sample_rate {
        return Err(Error::Config(format!(
            "synth sample rate {} does not match analysis rate {}",
            config.sample_rate, stft.sample_rate
        )));
    }
    let sr = config.sample_rate as f64;
    let total = (config.clip_seconds * sr).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index);

    // Alternate speech and pause segments until the clip is full.
    let mut speech_spans = Vec::new();
    let mut pause_spans = Vec::new();
    let mut cursor = 0usize;
    let pause_scale = config.pause_density / 0.5;
    while cursor < total {
        let speech_len = (rng.gen_range(0.5..0.9) * sr) as usize;
        let end = (cursor + speech_len).min(total);
        speech_spans.push(Span { start: cursor, end });
        cursor = end;
        if cursor >= total {
            break;
        }
        let pause_len = (rng.gen_range(0.7..1.0) * pause_scale * sr) as usize;
        let end = (cursor + pause_len).min(total);
        pause_spans.push(Span { start: cursor, end });
        cursor = end;
    }

    // Harmonic stack with vibrato under a per-segment envelope.
    let f0 = rng.gen_range(config.f0_min_hz..=config.f0_max_hz);
    let vibrato_phase = rng.gen_range(0.0..2.0 * PI);
    let harmonic_gains: Vec<f64> = (1..=config.harmonics)
        .map(|h| rng.gen_range(0.6..1.0) / h as f64)
        .collect();
    let ramp = (0.03 * sr) as usize; // 30 ms attack/release on speech

    let mut envelope = vec![0.0f64; total];
    for span in &speech_spans {
        let amp = rng.gen_range(0.7..1.0);
        let len = span.end - span.start;
        let r = ramp.min(len / 2);
        for i in 0..len {
            let shape = if i < r {
                0.5 * (1.0 - (PI * i as f64 / r as f64).cos())
            } else if i >= len - r {
                let j = len - 1 - i;
                0.5 * (1.0 - (PI * j as f64 / r as f64).cos())
            } else {
                1.0
            };
            envelope[span.start + i] = amp * shape;
        }
    }

    let mut target = vec![0.0f64; total];
    let mut phases = vec![0.0f64; config.harmonics];
    let nyquist = sr / 2.0;
    for n in 0..total {
        let t = n as f64 / sr;
        let f = f0 * (1.0 + config.vibrato_depth * (2.0 * PI * config.vibrato_rate_hz * t + vibrato_phase).sin());
        let mut sample = 0.0;
        for (h, phase) in phases.iter_mut().enumerate() {
            let freq = (h + 1) as f64 * f;
            *phase += 2.0 * PI * freq / sr;
            if freq < nyquist {
                sample += harmonic_gains[h] * phase.sin();
            }
        }
        target[n] = envelope[n] * sample;
    }

    // Reference level for the burst gain and room tone.
    let speech_energy: f64 = speech_spans
        .iter()
        .flat_map(|s| target[s.start..s.end].iter())
        .map(|v| v * v)
        .sum();
    let speech_len: usize = speech_spans.iter().map(|s| s.end - s.start).sum();
    let speech_rms = (speech_energy / speech_len.max(1) as f64).sqrt();

    // Room tone: both sides of the pair share it, so the clean recording
    // carries measurable energy in every band the way studio material does.
    let floor_amp = speech_rms * 10f64.powf(config.noise_floor_db / 20.0) * 3f64.sqrt();
    for v in target.iter_mut() {
        *v += floor_amp * rng.gen_range(-1.0..1.0);
    }

    // Bursts: at most one per pause, kept one analysis frame away from any
    // speech so no window straddles both.
    let margin = stft.frame_length;
    let burst_rms = speech_rms * 10f64.powf(config.burst_gain_db / 20.0);
    let fir = bandpass_fir(config.burst_low_hz, config.burst_high_hz, sr, 257);
    let mut input = target.clone();
    let mut burst_spans = Vec::new();
    if config.bursts_per_clip > 0 {
        let eligible: Vec<&Span> = pause_spans
            .iter()
            .filter(|p| {
                p.end - p.start
                    > 2 * margin + (config.burst_min_seconds * sr) as usize
            })
            .collect();
        for (b, pause) in eligible.iter().enumerate() {
            if b >= config.bursts_per_clip {
                break;
            }
            let usable = pause.end - pause.start - 2 * margin;
            let max_len = ((config.burst_max_seconds * sr) as usize).min(usable);
            let min_len = (config.burst_min_seconds * sr) as usize;
            let len = if min_len >= max_len {
                min_len
            } else {
                rng.gen_range(min_len..=max_len)
            };
            let slack = usable - len;
            let offset = if slack == 0 { 0 } else { rng.gen_range(0..=slack) };
            let start = pause.start + margin + offset;

            let noise: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut burst = convolve_same(&noise, &fir);
            let attack = ((config.burst_attack_ms / 1000.0 * sr) as usize).min(len / 2);
            let decay = ((config.burst_decay_ms / 1000.0 * sr) as usize).min(len / 2);
            for (i, v) in burst.iter_mut().enumerate() {
                let mut shape = 1.0;
                if i < attack {
                    shape *= 0.5 * (1.0 - (PI * i as f64 / attack as f64).cos());
                }
                if i >= len - decay {
                    let j = len - 1 - i;
                    shape *= 0.5 * (1.0 - (PI * j as f64 / decay as f64).cos());
                }
                *v *= shape;
            }
            let rms = (burst.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
            if rms > 0.0 {
                let scale = burst_rms / rms;
                for (i, v) in burst.iter().enumerate() {
                    input[start + i] += v * scale;
                }
                burst_spans.push((start, start + len));
            }
        }
    }

    // Joint normalization: the raw input peaks at exactly 0.9, the target
    // scales by the same factor so the difference stays burst-only.
    let peak = input.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let scale = 0.9 / peak;
        for v in input.iter_mut() {
            *v *= scale;
        }
        for v in target.iter_mut() {
            *v *= scale;
        }
    }

    // Ground truth: frames whose window sees meaningful burst energy.
    let breath: Vec<f64> = input.iter().zip(&target).map(|(i, t)| i - t).collect();
    let label_cfg = LabelConfig::default();
    let floor = label_cfg.floor_amplitude();
    let burst_frame_rms = windowed_frame_rms(&breath, stft);
    let input_frame_rms = windowed_frame_rms(&input, stft);
    let labels: Vec<bool> = burst_frame_rms
        .iter()
        .zip(&input_frame_rms)
        .map(|(&b, &i)| b > floor && b > label_cfg.theta * i)
        .collect();

    Ok(SynthPair {
        input: AudioClip::new(input, config.sample_rate)?,
        target: AudioClip::new(target, config.sample_rate)?,
        labels,
        burst_spans,
    })
}

/// Write `count` pairs plus `manifest.csv` and `labels.csv` into `out_dir`.
/// Returns the manifest path.
pub fn materialize_corpus(
    config: &SynthConfig,
    stft: &SpectrogramConfig,
    count: usize,
    out_dir: &Path,
) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = String::from("input,target\n");
    let mut labels_csv = String::from("pair_index,frame_index,is_breath\n");
    for index in 0..count {
        let pair = synth_pair(config, stft, index as u64)?;
        let input_name = format!("pair_{index:04}_input.wav");
        let target_name = format!("pair_{index:04}_target.wav");
        write_wav(&out_dir.join(&input_name), &pair.input)?;
        write_wav(&out_dir.join(&target_name), &pair.target)?;
        manifest.push_str(&format!("{input_name},{target_name}\n"));
        for (frame, &is_breath) in pair.labels.iter().enumerate() {
            labels_csv.push_str(&format!("{index},{frame},{}\n", u8::from(is_breath)));
        }
    }
    let manifest_path = out_dir.join("manifest.csv");
    std::fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    let labels_path = out_dir.join("labels.csv");
    std::fs::write(&labels_path, labels_csv).map_err(|e| Error::io(&labels_path, e))?;
    Ok(manifest_path)
}

/// Windowed-sinc band-pass filter (Hamming window, odd tap count).
fn bandpass_fir(low_hz: f64, high_hz: f64, sample_rate: f64, taps: usize) -> Vec<f64> {
    debug_assert!(taps % 2 == 1);
    let mid = (taps / 2) as isize;
    let w1 = 2.0 * PI * low_hz / sample_rate;
    let w2 = 2.0 * PI * high_hz / sample_rate;
    (0..taps as isize)
        .map(|n| {
            let k = n - mid;
            let ideal = if k == 0 {
                (w2 - w1) / PI
            } else {
                ((w2 * k as f64).sin() - (w1 * k as f64).sin()) / (PI * k as f64)
            };
            let window = 0.54 - 0.46 * (2.0 * PI * n as f64 / (taps - 1) as f64).cos();
            ideal * window
        })
        .collect()
}

fn convolve_same(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mid = h.len() / 2;
    (0..x.len())
        .map(|i| {
            let mut acc = 0.0;
            for (k, &hv) in h.iter().enumerate() {
                let j = i as isize + mid as isize - k as isize;
                if j >= 0 && (j as usize) < x.len() {
                    acc += hv * x[j as usize];
                }
            }
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::frame_breath_labels;
    use crate::dsp::{split, stft as run_stft};

    fn configs() -> (SynthConfig, SpectrogramConfig) {
        (SynthConfig::default(), SpectrogramConfig::default())
    }

    #[test]
    fn generation_is_deterministic_in_seed_and_index() {
        let (cfg, stft) = configs();
        let a = synth_pair(&cfg, &stft, 3).unwrap();
        let b = synth_pair(&cfg, &stft, 3).unwrap();
        assert_eq!(a.input.samples(), b.input.samples());
        assert_eq!(a.target.samples(), b.target.samples());
        assert_eq!(a.labels, b.labels);
        let c = synth_pair(&cfg, &stft, 4).unwrap();
        assert_ne!(a.input.samples(), c.input.samples());
    }

    #[test]
    fn difference_is_zero_outside_labeled_frame_windows() {
        let (cfg, stft) = configs();
        let pair = synth_pair(&cfg, &stft, 0).unwrap();
        assert!(!pair.burst_spans.is_empty(), "expected at least one burst");
        let half = stft.frame_length / 2;
        let n = pair.input.len();
        let mut covered = vec![false; n];
        for (frame, &label) in pair.labels.iter().enumerate() {
            if label {
                let center = frame * stft.hop;
                let lo = center.saturating_sub(half);
                let hi = (center + half).min(n);
                covered[lo..hi].iter_mut().for_each(|c| *c = true);
            }
        }
        for i in 0..n {
            if !covered[i] {
                assert_eq!(
                    pair.input.samples()[i],
                    pair.target.samples()[i],
                    "difference outside labeled windows at sample {i}"
                );
            }
        }
    }

    #[test]
    fn labeled_regions_carry_positive_breath_energy() {
        let (cfg, stft) = configs();
        let pair = synth_pair(&cfg, &stft, 1).unwrap();
        let diff: Vec<f64> = pair
            .input
            .samples()
            .iter()
            .zip(pair.target.samples())
            .map(|(i, t)| i - t)
            .collect();
        let rms_by_frame = windowed_frame_rms(&diff, &stft);
        let labeled: Vec<f64> = rms_by_frame
            .iter()
            .zip(&pair.labels)
            .filter(|(_, &l)| l)
            .map(|(&r, _)| r)
            .collect();
        assert!(!labeled.is_empty());
        assert!(labeled.iter().all(|&r| r > 0.0));
    }

    #[test]
    fn input_peaks_at_the_normalization_headroom() {
        let (cfg, stft) = configs();
        for index in 0..3 {
            let pair = synth_pair(&cfg, &stft, index).unwrap();
            let peak = pair.input.peak();
            assert!((peak - 0.9).abs() < 1e-9, "peak {peak}");
            assert!(peak <= 1.0);
        }
    }

    #[test]
    fn target_energy_never_exceeds_input_energy() {
        let (cfg, stft) = configs();
        for index in 0..4 {
            let pair = synth_pair(&cfg, &stft, index).unwrap();
            let e_in: f64 = pair.input.samples().iter().map(|v| v * v).sum();
            let e_tgt: f64 = pair.target.samples().iter().map(|v| v * v).sum();
            assert!(e_tgt <= e_in + 1e-12, "target {e_tgt} vs input {e_in}");
        }
    }

    #[test]
    fn magnitude_labels_agree_with_time_domain_labels() {
        let (cfg, stft) = configs();
        let mut agree = 0usize;
        let mut frames = 0usize;
        for index in 0..4 {
            let pair = synth_pair(&cfg, &stft, index).unwrap();
            let (in_mag, _) = split(&run_stft(&pair.input, &stft).unwrap());
            let (tgt_mag, _) = split(&run_stft(&pair.target, &stft).unwrap());
            let from_mags =
                frame_breath_labels(&in_mag, &tgt_mag, &LabelConfig::default()).unwrap();
            assert_eq!(from_mags.len(), pair.labels.len());
            frames += from_mags.len();
            agree += from_mags
                .iter()
                .zip(&pair.labels)
                .filter(|(a, b)| a == b)
                .count();
        }
        let rate = agree as f64 / frames as f64;
        assert!(rate >= 0.95, "agreement {rate}");
    }

    #[test]
    fn breath_frames_make_up_a_meaningful_minority() {
        // The desk corpus should punish an all-pass model but stay
        // speech-dominated.
        let (cfg, stft) = configs();
        let mut breath = 0usize;
        let mut frames = 0usize;
        for index in 0..8 {
            let pair = synth_pair(&cfg, &stft, index).unwrap();
            breath += pair.labels.iter().filter(|&&l| l).count();
            frames += pair.labels.len();
        }
        let fraction = breath as f64 / frames as f64;
        assert!(
            (0.08..=0.45).contains(&fraction),
            "breath fraction {fraction}"
        );
    }
}
