//! End-to-end clip processing: analyze, predict a mask tile by tile, apply
//! it to the linear magnitudes, and resynthesize with the original phase.

use crate::audio::AudioClip;
use crate::dsp::{
    apply_mask, istft, log_compress, recombine, split, stft, MagnitudeSpectrogram,
    SpectrogramConfig,
};
use crate::error::Result;
use crate::graph::Graph;
use crate::model::{load_param_nodes, unet_forward, ForwardMode, ModelParams, UNetConfig};
use crate::tensor::Tensor;

/// Tiles processed per forward pass; bounds peak activation memory.
const TILE_BATCH: usize = 8;

/// Predict the soft mask for a whole `frames x bins` log-magnitude
/// spectrogram by tiling non-overlapping `input_frames x input_bins`
/// patches. Edges are zero-padded up to whole patches and trimmed away.
pub fn predict_mask(
    params: &ModelParams,
    config: &UNetConfig,
    logmag: &[f32],
    frames: usize,
    bins: usize,
) -> Result<Vec<f32>> {
    config.validate()?;
    let pf = config.input_frames;
    let pb = config.input_bins;
    let padded_f = frames.div_ceil(pf) * pf;
    let padded_b = bins.div_ceil(pb) * pb;

    let mut padded = vec![0.0f32; padded_f * padded_b];
    for f in 0..frames {
        padded[f * padded_b..f * padded_b + bins]
            .copy_from_slice(&logmag[f * bins..(f + 1) * bins]);
    }

    let tiles: Vec<(usize, usize)> = (0..padded_f / pf)
        .flat_map(|tf| (0..padded_b / pb).map(move |tb| (tf * pf, tb * pb)))
        .collect();

    let mut mask_padded = vec![0.0f32; padded_f * padded_b];
    for chunk in tiles.chunks(TILE_BATCH) {
        let mut data = vec![0.0f32; chunk.len() * pf * pb];
        for (i, &(f0, b0)) in chunk.iter().enumerate() {
            for f in 0..pf {
                let src = (f0 + f) * padded_b + b0;
                let dst = i * pf * pb + f * pb;
                data[dst..dst + pb].copy_from_slice(&padded[src..src + pb]);
            }
        }
        let input = Tensor::new(vec![chunk.len(), pf, pb, 1], data)?;
        let mut g = Graph::<f32>::new();
        let nodes = load_param_nodes(&mut g, params, config, false)?;
        let id = g.leaf(input);
        let out = unet_forward(&mut g, &nodes, params, config, id, ForwardMode::Eval)?;
        let mask = g.value(out.output).data();
        for (i, &(f0, b0)) in chunk.iter().enumerate() {
            for f in 0..pf {
                let src = i * pf * pb + f * pb;
                let dst = (f0 + f) * padded_b + b0;
                mask_padded[dst..dst + pb].copy_from_slice(&mask[src..src + pb]);
            }
        }
    }

    let mut mask = vec![0.0f32; frames * bins];
    for f in 0..frames {
        mask[f * bins..(f + 1) * bins]
            .copy_from_slice(&mask_padded[f * padded_b..f * padded_b + bins]);
    }
    Ok(mask)
}

/// A processed clip together with the spectrograms the metrics need.
pub struct ProcessedClip {
    pub output: AudioClip,
    pub input_mag: MagnitudeSpectrogram,
    pub output_mag: MagnitudeSpectrogram,
}

/// Run the full pipeline on one clip. With `identity_mask` the model is
/// bypassed and every bin passes through unchanged (debug path).
///
/// The model consumes log-compressed magnitudes without the Nyquist bin;
/// that bin is restored as zero at resynthesis. Output length is the input
/// length trimmed to a whole number of hops.
pub fn process_clip(
    params: &ModelParams,
    unet_config: &UNetConfig,
    stft_config: &SpectrogramConfig,
    clip: &AudioClip,
    identity_mask: bool,
) -> Result<ProcessedClip> {
    let spec = stft(clip, stft_config)?;
    let (input_mag, phase) = split(&spec);
    let frames = input_mag.frames;
    let bins = input_mag.bins;

    let mask_full: Vec<f64> = if identity_mask {
        vec![1.0; frames * bins]
    } else {
        let logmag = log_compress(&input_mag)?;
        let model_bins = bins - 1;
        let mut trimmed = vec![0.0f32; frames * model_bins];
        for f in 0..frames {
            trimmed[f * model_bins..(f + 1) * model_bins]
                .copy_from_slice(&logmag.data()[f * bins..f * bins + model_bins]);
        }
        let mask = predict_mask(params, unet_config, &trimmed, frames, model_bins)?;
        let mut full = vec![0.0f64; frames * bins];
        for f in 0..frames {
            for b in 0..model_bins {
                full[f * bins + b] = mask[f * model_bins + b] as f64;
            }
            // Nyquist bin comes back as zero.
            full[f * bins + bins - 1] = 0.0;
        }
        full
    };

    let mask_tensor = Tensor::new(vec![frames, bins], mask_full)?;
    let output_mag = apply_mask(&input_mag, &mask_tensor)?;
    let masked_spec = recombine(&output_mag, &phase)?;
    let output = istft(&masked_spec)?;
    Ok(ProcessedClip {
        output,
        input_mag,
        output_mag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn desk() -> (UNetConfig, SpectrogramConfig) {
        let unet = UNetConfig {
            depth: 2,
            base_filters: 4,
            input_frames: 16,
            input_bins: 16,
            ..UNetConfig::default()
        };
        let stft = SpectrogramConfig {
            frame_length: 256,
            hop: 64,
            ..SpectrogramConfig::default()
        };
        (unet, stft)
    }

    #[test]
    fn identity_mask_round_trips_the_clip() {
        let (unet, stft_cfg) = desk();
        let params = init_params(&unet, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples: Vec<f64> = (0..4096).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let clip = AudioClip::new(samples.clone(), 22050).unwrap();
        let processed = process_clip(&params, &unet, &stft_cfg, &clip, true).unwrap();
        let n = processed.output.len();
        assert_eq!(n, (clip.len() / stft_cfg.hop) * stft_cfg.hop);
        let err: f64 = processed
            .output
            .samples()
            .iter()
            .zip(&samples)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = samples[..n].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err / norm < 1e-6);
    }

    #[test]
    fn masked_output_never_exceeds_input_peak() {
        let (unet, stft_cfg) = desk();
        let params = init_params(&unet, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples: Vec<f64> = (0..6000).map(|_| rng.gen_range(-0.8..0.8)).collect();
        let clip = AudioClip::new(samples, 22050).unwrap();
        let processed = process_clip(&params, &unet, &stft_cfg, &clip, false).unwrap();
        assert!(processed.output.peak() <= clip.peak() + 1e-6);
        // The mask also never raises any magnitude bin.
        for (o, i) in processed
            .output_mag
            .data()
            .iter()
            .zip(processed.input_mag.data())
        {
            assert!(o <= i);
        }
    }

    #[test]
    fn silence_stays_silent() {
        let (unet, stft_cfg) = desk();
        let params = init_params(&unet, 5).unwrap();
        let clip = AudioClip::new(vec![0.0; 4096], 22050).unwrap();
        let processed = process_clip(&params, &unet, &stft_cfg, &clip, false).unwrap();
        let peak = processed.output.peak();
        // -80 dBFS is 1e-4; exact zeros satisfy it trivially.
        assert!(peak <= 1e-4, "peak {peak}");
    }

    #[test]
    fn tiling_covers_non_multiple_extents() {
        let (unet, _) = desk();
        let params = init_params(&unet, 7).unwrap();
        let (frames, bins) = (21, 19); // neither is a multiple of 16
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logmag: Vec<f32> = (0..frames * bins).map(|_| rng.gen_range(0.0..2.0)).collect();
        let mask = predict_mask(&params, &unet, &logmag, frames, bins).unwrap();
        assert_eq!(mask.len(), frames * bins);
        assert!(mask.iter().all(|&m| m > 0.0 && m < 1.0));
    }
}
