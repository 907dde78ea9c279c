//! Time-frequency analysis and synthesis.
//!
//! Analysis is a centered, hopped, Hann-windowed real-input DFT; synthesis
//! is weighted overlap-add with squared-window normalization, so a
//! round trip reconstructs the signal to well below 1e-6 relative error.
//! Everything here runs in double precision; single precision appears only
//! at the model boundary ([`log_compress`]).

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Guard for the overlap-add normalization denominator.
const WOLA_EPS: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowKind {
    Hann,
}

impl WindowKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "hann" => Ok(WindowKind::Hann),
            other => Err(Error::Config(format!(
                "unsupported window kind {other:?} (supported: hann)"
            ))),
        }
    }
}

/// Analysis parameters shared by every spectrogram derived from them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectrogramConfig {
    pub frame_length: usize,
    pub hop: usize,
    pub window_kind: WindowKind,
    pub centered: bool,
    pub sample_rate: u32,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        SpectrogramConfig {
            frame_length: 4096,
            hop: 512,
            window_kind: WindowKind::Hann,
            centered: true,
            sample_rate: 22050,
        }
    }
}

impl SpectrogramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.frame_length {
            return Err(Error::Config(format!(
                "hop {} must satisfy 0 < hop <= frame_length {}",
                self.hop, self.frame_length
            )));
        }
        if self.frame_length % 2 != 0 {
            return Err(Error::Config(format!(
                "frame_length {} must be even",
                self.frame_length
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.frame_length / 2 + 1
    }

    /// Sum of squared window values, the overlap-add normalization scale.
    pub fn window_energy(&self) -> f64 {
        make_window(self.window_kind, self.frame_length)
            .iter()
            .map(|w| w * w)
            .sum()
    }
}

/// Periodic window of the given length: w[n] = 0.5 (1 - cos(2 pi n / N)).
pub fn make_window(kind: WindowKind, frame_length: usize) -> Vec<f64> {
    match kind {
        WindowKind::Hann => (0..frame_length)
            .map(|n| {
                0.5 * (1.0
                    - (2.0 * std::f64::consts::PI * n as f64 / frame_length as f64).cos())
            })
            .collect(),
    }
}

/// Complex short-time spectrum, `frames x bins`, row-major by frame.
#[derive(Clone, Debug)]
pub struct ComplexSpectrogram {
    pub frames: usize,
    pub bins: usize,
    data: Vec<Complex64>,
    pub config: SpectrogramConfig,
}

impl ComplexSpectrogram {
    pub fn new(
        frames: usize,
        bins: usize,
        data: Vec<Complex64>,
        config: SpectrogramConfig,
    ) -> Result<Self> {
        if bins != config.bins() {
            return Err(Error::Input(format!(
                "bin count {bins} does not match frame_length {} (expected {})",
                config.frame_length,
                config.bins()
            )));
        }
        if data.len() != frames * bins {
            return Err(Error::Input(format!(
                "spectrogram data length {} does not match {frames} x {bins}",
                data.len()
            )));
        }
        Ok(ComplexSpectrogram {
            frames,
            bins,
            data,
            config,
        })
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn at(&self, frame: usize, bin: usize) -> Complex64 {
        self.data[frame * self.bins + bin]
    }
}

/// Nonnegative magnitudes of a complex spectrogram.
#[derive(Clone, Debug)]
pub struct MagnitudeSpectrogram {
    pub frames: usize,
    pub bins: usize,
    data: Vec<f64>,
    pub config: SpectrogramConfig,
}

impl MagnitudeSpectrogram {
    pub fn new(
        frames: usize,
        bins: usize,
        data: Vec<f64>,
        config: SpectrogramConfig,
    ) -> Result<Self> {
        if data.len() != frames * bins {
            return Err(Error::Input(format!(
                "magnitude data length {} does not match {frames} x {bins}",
                data.len()
            )));
        }
        if data.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(Error::Invariant(
                "magnitude spectrogram entries must be finite and >= 0".into(),
            ));
        }
        Ok(MagnitudeSpectrogram {
            frames,
            bins,
            data,
            config,
        })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, frame: usize, bin: usize) -> f64 {
        self.data[frame * self.bins + bin]
    }

    pub fn frame(&self, frame: usize) -> &[f64] {
        &self.data[frame * self.bins..(frame + 1) * self.bins]
    }

    /// RMS of the windowed time-domain frame, recovered from bin magnitudes
    /// via Parseval's relation for the real-input DFT.
    pub fn frame_rms(&self, frame: usize) -> f64 {
        self.frame_rms_with_energy(frame, self.config.window_energy())
    }

    /// Per-frame RMS for the whole spectrogram; computes the window
    /// normalization once.
    pub fn frame_rms_all(&self) -> Vec<f64> {
        let wenergy = self.config.window_energy();
        (0..self.frames)
            .map(|m| self.frame_rms_with_energy(m, wenergy))
            .collect()
    }

    fn frame_rms_with_energy(&self, frame: usize, window_energy: f64) -> f64 {
        let n = self.config.frame_length as f64;
        let row = self.frame(frame);
        let mut energy = 0.0;
        for (k, &m) in row.iter().enumerate() {
            let weight = if k == 0 || k == self.bins - 1 { 1.0 } else { 2.0 };
            energy += weight * m * m;
        }
        // energy/n is the windowed-frame sample energy; normalize by the
        // window's own energy so silence and full-scale read naturally.
        (energy / n / window_energy).sqrt()
    }
}

/// Phase angles in radians, each within (-pi, pi].
#[derive(Clone, Debug)]
pub struct PhaseSpectrogram {
    pub frames: usize,
    pub bins: usize,
    data: Vec<f64>,
}

impl PhaseSpectrogram {
    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

fn plan(frame_length: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(frame_length);
    let inv = planner.plan_fft_inverse(frame_length);
    (fwd, inv)
}

/// Reflect (bounce) index mapping used for center padding.
fn reflect_index(i: isize, len: usize) -> usize {
    debug_assert!(len >= 2);
    let period = 2 * (len as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= len as isize {
        j = period - j;
    }
    j as usize
}

/// Short-time Fourier transform of a clip.
///
/// With centering enabled the signal is reflect-padded by half a frame on
/// both ends, so frame `m` is centered at sample `m * hop` and the frame
/// count is `floor(len / hop) + 1`.
pub fn stft(clip: &AudioClip, config: &SpectrogramConfig) -> Result<ComplexSpectrogram> {
    config.validate()?;
    if clip.is_empty() {
        return Err(Error::Input("cannot analyze an empty clip".into()));
    }
    if clip.sample_rate() != config.sample_rate {
        return Err(Error::Input(format!(
            "clip sample rate {} does not match configured {}",
            clip.sample_rate(),
            config.sample_rate
        )));
    }
    let n = config.frame_length;
    let half = n / 2;
    let x = clip.samples();
    if config.centered && x.len() < 2 {
        return Err(Error::Input(
            "centered analysis needs at least 2 samples for reflect padding".into(),
        ));
    }

    let frames = if config.centered {
        x.len() / config.hop + 1
    } else {
        if x.len() < n {
            return Err(Error::Input(format!(
                "clip of {} samples is shorter than one frame ({n})",
                x.len()
            )));
        }
        (x.len() - n) / config.hop + 1
    };

    let window = make_window(config.window_kind, n);
    let (fwd, _) = plan(n);
    let bins = config.bins();
    let mut data = vec![Complex64::new(0.0, 0.0); frames * bins];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fwd.get_inplace_scratch_len()];

    for m in 0..frames {
        for (i, slot) in buf.iter_mut().enumerate() {
            let src = if config.centered {
                let idx = (m * config.hop + i) as isize - half as isize;
                if idx >= 0 && (idx as usize) < x.len() {
                    x[idx as usize]
                } else {
                    x[reflect_index(idx, x.len())]
                }
            } else {
                x[m * config.hop + i]
            };
            *slot = Complex64::new(src * window[i], 0.0);
        }
        fwd.process_with_scratch(&mut buf, &mut scratch);
        data[m * bins..(m + 1) * bins].copy_from_slice(&buf[..bins]);
    }

    ComplexSpectrogram::new(frames, bins, data, *config)
}

/// Inverse STFT via weighted overlap-add.
///
/// The output drops the center padding and has length `(frames - 1) * hop`,
/// i.e. `floor(len / hop) * hop` for a round trip.
pub fn istft(spec: &ComplexSpectrogram) -> Result<AudioClip> {
    let config = &spec.config;
    let n = config.frame_length;
    if spec.bins != config.bins() {
        return Err(Error::Input(format!(
            "malformed spectrogram: {} bins for frame_length {}",
            spec.bins, n
        )));
    }
    let half = n / 2;
    let window = make_window(config.window_kind, n);
    let (_, inv) = plan(n);
    let padded_len = (spec.frames - 1) * config.hop + n;
    let mut acc = vec![0.0f64; padded_len];
    let mut wsum = vec![0.0f64; padded_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); inv.get_inplace_scratch_len()];

    for m in 0..spec.frames {
        let row = &spec.data()[m * spec.bins..(m + 1) * spec.bins];
        buf[..spec.bins].copy_from_slice(row);
        for k in spec.bins..n {
            buf[k] = row[n - k].conj();
        }
        inv.process_with_scratch(&mut buf, &mut scratch);
        let offset = m * config.hop;
        for i in 0..n {
            // rustfft leaves the inverse unscaled; fold in 1/n here.
            acc[offset + i] += window[i] * buf[i].re / n as f64;
            wsum[offset + i] += window[i] * window[i];
        }
    }

    let out_len = (spec.frames - 1) * config.hop;
    let start = if config.centered { half } else { 0 };
    let samples: Vec<f64> = (0..out_len)
        .map(|i| acc[start + i] / wsum[start + i].max(WOLA_EPS))
        .collect();
    AudioClip::new(samples, config.sample_rate)
}

/// Split a complex spectrogram into magnitude and phase. Zero entries get
/// phase 0 by convention.
pub fn split(spec: &ComplexSpectrogram) -> (MagnitudeSpectrogram, PhaseSpectrogram) {
    let mut mags = Vec::with_capacity(spec.data().len());
    let mut phases = Vec::with_capacity(spec.data().len());
    for z in spec.data() {
        mags.push(z.norm());
        phases.push(if z.re == 0.0 && z.im == 0.0 {
            0.0
        } else {
            z.im.atan2(z.re)
        });
    }
    let mag = MagnitudeSpectrogram {
        frames: spec.frames,
        bins: spec.bins,
        data: mags,
        config: spec.config,
    };
    let phase = PhaseSpectrogram {
        frames: spec.frames,
        bins: spec.bins,
        data: phases,
    };
    (mag, phase)
}

/// Rebuild a complex spectrogram from magnitude and phase.
pub fn recombine(
    mag: &MagnitudeSpectrogram,
    phase: &PhaseSpectrogram,
) -> Result<ComplexSpectrogram> {
    if mag.frames != phase.frames || mag.bins != phase.bins {
        return Err(Error::Input(format!(
            "magnitude {}x{} and phase {}x{} shapes do not match",
            mag.frames, mag.bins, phase.frames, phase.bins
        )));
    }
    let data = mag
        .data()
        .iter()
        .zip(phase.data())
        .map(|(&m, &p)| Complex64::new(m * p.cos(), m * p.sin()))
        .collect();
    ComplexSpectrogram::new(mag.frames, mag.bins, data, mag.config)
}

/// Elementwise log(1 + m), converted to the single-precision model domain.
pub fn log_compress(mag: &MagnitudeSpectrogram) -> Result<Tensor<f32>> {
    if mag.data().iter().any(|&m| m < 0.0) {
        return Err(Error::Invariant(
            "log compression requires nonnegative magnitudes".into(),
        ));
    }
    let data: Vec<f32> = mag.data().iter().map(|&m| m.ln_1p() as f32).collect();
    Tensor::new(vec![mag.frames, mag.bins], data)
}

/// Attenuate a magnitude spectrogram with a soft mask in [0, 1].
///
/// The mask tensor is `frames x bins` to match the spectrogram.
pub fn apply_mask(mag: &MagnitudeSpectrogram, mask: &Tensor<f64>) -> Result<MagnitudeSpectrogram> {
    if mask.shape() != [mag.frames, mag.bins] {
        return Err(Error::Input(format!(
            "mask shape {:?} does not match spectrogram {}x{}",
            mask.shape(),
            mag.frames,
            mag.bins
        )));
    }
    if mask.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Invariant("mask entries must lie in [0, 1]".into()));
    }
    let data: Vec<f64> = mag
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&m, &a)| m * a)
        .collect();
    MagnitudeSpectrogram::new(mag.frames, mag.bins, data, mag.config)
}

/// Hann-windowed RMS of a signal around each STFT frame center, using the
/// same reflect padding as [`stft`] in centered mode so both routes see the
/// identical frame content. Used for breath-frame labeling.
pub fn windowed_frame_rms(samples: &[f64], config: &SpectrogramConfig) -> Vec<f64> {
    let n = config.frame_length;
    let half = n / 2;
    let window = make_window(config.window_kind, n);
    let wenergy: f64 = window.iter().map(|w| w * w).sum();
    let frames = samples.len() / config.hop + 1;
    (0..frames)
        .map(|m| {
            let center = (m * config.hop) as isize;
            let mut energy = 0.0;
            for (i, w) in window.iter().enumerate() {
                let idx = center - half as isize + i as isize;
                let s = if idx >= 0 && (idx as usize) < samples.len() {
                    samples[idx as usize]
                } else {
                    samples[reflect_index(idx, samples.len())]
                };
                let v = w * s;
                energy += v * v;
            }
            (energy / wenergy).sqrt()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn clip(samples: Vec<f64>) -> AudioClip {
        AudioClip::new(samples, 22050).unwrap()
    }

    #[test]
    fn hann_window_closed_form_length_4() {
        let w = make_window(WindowKind::Hann, 4);
        for (got, want) in w.iter().zip([0.0, 0.5, 1.0, 0.5]) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn hann_window_length_1_is_zero() {
        assert_eq!(make_window(WindowKind::Hann, 1), vec![0.0]);
    }

    #[test]
    fn hann_window_4096_sums_to_half_length() {
        // Summation oracle: sum of 0.5(1 - cos) telescopes to N/2.
        let sum: f64 = make_window(WindowKind::Hann, 4096).iter().sum();
        assert!((sum - 2048.0).abs() < 1e-9, "sum = {sum}");
    }

    #[test]
    fn window_kind_parse_rejects_unknown() {
        assert!(matches!(
            WindowKind::parse("hamming").unwrap_err(),
            Error::Config(_)
        ));
    }

    #[test]
    fn frame_count_formula_for_one_second() {
        let cfg = SpectrogramConfig::default();
        let x = clip(vec![0.25; 22050]);
        let spec = stft(&x, &cfg).unwrap();
        // Frame-counting oracle: floor(22050 / 512) + 1.
        assert_eq!(spec.frames, 22050 / 512 + 1);
        assert_eq!(spec.frames, 44);
        assert_eq!(spec.bins, 2049);
    }

    #[test]
    fn zero_clip_gives_zero_spectrogram() {
        let cfg = SpectrogramConfig::default();
        let spec = stft(&clip(vec![0.0; 4096]), &cfg).unwrap();
        assert!(spec.data().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn stft_rejects_rate_mismatch_and_empty() {
        let cfg = SpectrogramConfig::default();
        let wrong = AudioClip::new(vec![0.0; 100], 44100).unwrap();
        assert!(matches!(stft(&wrong, &cfg).unwrap_err(), Error::Input(_)));
        let empty = AudioClip::new(vec![], 22050).unwrap();
        assert!(matches!(stft(&empty, &cfg).unwrap_err(), Error::Input(_)));
    }

    /// Brute-force O(n^2) DFT of one windowed frame.
    fn dft_oracle(frame: &[f64]) -> Vec<Complex64> {
        let n = frame.len();
        (0..n / 2 + 1)
            .map(|k| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (i, &x) in frame.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                    acc += Complex64::new(x * ang.cos(), x * ang.sin());
                }
                acc
            })
            .collect()
    }

    #[test]
    fn cosine_concentrates_at_its_bin() {
        let cfg = SpectrogramConfig::default();
        let n = cfg.frame_length;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 512.0 * i as f64 / n as f64).cos())
            .collect();
        let spec = stft(&clip(x.clone()), &cfg).unwrap();
        // Frame 4 is centered at sample 2048, covering exactly [0, 4096).
        let m = 4;
        let peak = spec.at(m, 512).norm();
        for k in 0..spec.bins {
            if (k as i64 - 512).unsigned_abs() > 2 {
                assert!(
                    peak > 100.0 * spec.at(m, k).norm(),
                    "bin {k} too large: {} vs peak {peak}",
                    spec.at(m, k).norm()
                );
            }
        }
        // The same frame must match the brute-force DFT oracle.
        let window = make_window(cfg.window_kind, n);
        let windowed: Vec<f64> = x.iter().zip(&window).map(|(a, w)| a * w).collect();
        let oracle = dft_oracle(&windowed);
        for (k, want) in oracle.iter().enumerate() {
            let got = spec.at(m, k);
            assert!(
                (got - want).norm() <= 1e-9 * (1.0 + want.norm()),
                "bin {k}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn round_trip_one_second_of_noise() {
        let cfg = SpectrogramConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..22050).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let spec = stft(&clip(x.clone()), &cfg).unwrap();
        let back = istft(&spec).unwrap();
        let n = back.len();
        assert_eq!(n, (22050 / 512) * 512);
        let num: f64 = back
            .samples()
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let den: f64 = x[..n].iter().map(|v| v * v).sum();
        assert!((num / den).sqrt() < 1e-6, "rel err {}", (num / den).sqrt());
    }

    #[test]
    fn zero_spectrogram_inverts_to_silence() {
        let cfg = SpectrogramConfig::default();
        let spec =
            ComplexSpectrogram::new(8, cfg.bins(), vec![Complex64::new(0.0, 0.0); 8 * cfg.bins()], cfg)
                .unwrap();
        let out = istft(&spec).unwrap();
        assert!(out.samples().iter().all(|&s| s == 0.0));
        assert_eq!(out.len(), 7 * 512);
    }

    #[test]
    fn istft_rejects_malformed_bins() {
        let cfg = SpectrogramConfig::default();
        assert!(ComplexSpectrogram::new(4, 100, vec![Complex64::new(0.0, 0.0); 400], cfg).is_err());
    }

    #[test]
    fn split_recovers_textbook_values() {
        let cfg = SpectrogramConfig {
            frame_length: 2,
            hop: 1,
            ..SpectrogramConfig::default()
        };
        let spec = ComplexSpectrogram::new(
            1,
            2,
            vec![Complex64::new(3.0, 4.0), Complex64::new(0.0, 0.0)],
            cfg,
        )
        .unwrap();
        let (mag, phase) = split(&spec);
        assert!((mag.at(0, 0) - 5.0).abs() < 1e-12);
        assert!((phase.data()[0] - 4.0f64.atan2(3.0)).abs() < 1e-12);
        // Zero magnitude takes phase 0 by convention.
        assert_eq!(mag.at(0, 1), 0.0);
        assert_eq!(phase.data()[1], 0.0);
    }

    #[test]
    fn split_recombine_round_trip() {
        let cfg = SpectrogramConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..8192).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let spec = stft(&clip(x), &cfg).unwrap();
        let (mag, phase) = split(&spec);
        let back = recombine(&mag, &phase).unwrap();
        for (a, b) in spec.data().iter().zip(back.data()) {
            assert!((a - b).norm() <= 1e-12 * (1.0 + a.norm()));
        }
    }

    #[test]
    fn log_compress_known_points_and_monotonicity() {
        let cfg = SpectrogramConfig {
            frame_length: 4,
            hop: 2,
            ..SpectrogramConfig::default()
        };
        let mag = MagnitudeSpectrogram::new(
            1,
            3,
            vec![0.0, std::f64::consts::E - 1.0, 2.0],
            cfg,
        )
        .unwrap();
        let t = log_compress(&mag).unwrap();
        assert_eq!(t.data()[0], 0.0);
        assert!((t.data()[1] - 1.0).abs() < 1e-6);
        assert!(t.data()[1] < t.data()[2]);
    }

    #[test]
    fn apply_mask_edge_cases() {
        let cfg = SpectrogramConfig {
            frame_length: 4,
            hop: 2,
            ..SpectrogramConfig::default()
        };
        let mag = MagnitudeSpectrogram::new(1, 3, vec![2.0, 1.0, 0.5], cfg).unwrap();
        let ones = Tensor::new(vec![1, 3], vec![1.0f64; 3]).unwrap();
        assert_eq!(apply_mask(&mag, &ones).unwrap().data(), mag.data());
        let zeros = Tensor::new(vec![1, 3], vec![0.0f64; 3]).unwrap();
        assert!(apply_mask(&mag, &zeros).unwrap().data().iter().all(|&m| m == 0.0));
        let half = Tensor::new(vec![1, 3], vec![0.5f64; 3]).unwrap();
        assert_eq!(apply_mask(&mag, &half).unwrap().at(0, 0), 1.0);

        let bad = Tensor::new(vec![1, 3], vec![1.5f64, 0.0, 0.0]).unwrap();
        assert!(matches!(apply_mask(&mag, &bad).unwrap_err(), Error::Invariant(_)));
        let wrong = Tensor::new(vec![2, 3], vec![0.5f64; 6]).unwrap();
        assert!(matches!(apply_mask(&mag, &wrong).unwrap_err(), Error::Input(_)));
    }

    #[test]
    fn scaling_signal_scales_magnitudes() {
        let cfg = SpectrogramConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..6000).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let scaled: Vec<f64> = x.iter().map(|v| v * -2.5).collect();
        let (m1, _) = split(&stft(&clip(x), &cfg).unwrap());
        let (m2, _) = split(&stft(&clip(scaled), &cfg).unwrap());
        for (a, b) in m1.data().iter().zip(m2.data()) {
            assert!((b - 2.5 * a).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn parseval_frame_rms_matches_time_domain() {
        let cfg = SpectrogramConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..22050).map(|_| rng.gen_range(-0.8..0.8)).collect();
        let (mag, _) = split(&stft(&clip(x.clone()), &cfg).unwrap());
        let spectral = mag.frame_rms_all();
        let temporal = windowed_frame_rms(&x, &cfg);
        assert_eq!(spectral.len(), temporal.len());
        for (a, b) in spectral.iter().zip(&temporal) {
            assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }
}
