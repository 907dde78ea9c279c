// Temporary diagnostic: mask statistics per frame class for a trained model.

use debreath::data::{synth_pair, LabelConfig, SynthConfig};
use debreath::dsp::{split, stft, SpectrogramConfig};
use debreath::model::load_model;
use debreath::pipeline::process_clip;

fn main() {
    let model_path = std::env::args().nth(1).expect("usage: diag MODEL [PAIR_INDEX]");
    let index: u64 = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(1);
    let stft_cfg = SpectrogramConfig::default();
    let synth_cfg = SynthConfig::default();
    let pair = synth_pair(&synth_cfg, &stft_cfg, index).unwrap();
    let (params_cfg, params) = load_model(std::path::Path::new(&model_path)).unwrap();

    let processed = process_clip(&params, &params_cfg, &stft_cfg, &pair.input, false).unwrap();
    let (tgt_mag, _) = split(&stft(&pair.target, &stft_cfg).unwrap());

    // Mask per bin = output/input magnitude.
    let frames = processed.input_mag.frames;
    let bins = processed.input_mag.bins;
    let in_rms = processed.input_mag.frame_rms_all();
    let out_rms = processed.output_mag.frame_rms_all();
    let floor = LabelConfig::default().floor_amplitude();

    let mut breath_drop_db = Vec::new();
    let mut speech_drop_db = Vec::new();
    for f in 0..frames.min(pair.labels.len()) {
        if in_rms[f] <= floor {
            continue;
        }
        let drop = 20.0 * (out_rms[f] / in_rms[f]).log10();
        if pair.labels[f] {
            breath_drop_db.push(drop);
        } else {
            speech_drop_db.push(drop);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    println!(
        "breath frames: {} mean drop {:.2} dB | speech frames: {} mean drop {:.2} dB",
        breath_drop_db.len(),
        mean(&breath_drop_db),
        speech_drop_db.len(),
        mean(&speech_drop_db)
    );

    // Mask medians per region: breath band on breath frames, active speech
    // bins on speech frames, quiet bins on speech frames.
    let hz_per_bin = stft_cfg.sample_rate as f64 / stft_cfg.frame_length as f64;
    let b_lo = (300.0 / hz_per_bin) as usize;
    let b_hi = (2000.0 / hz_per_bin) as usize;
    let mut mask_breath = Vec::new();
    let mut mask_speech_active = Vec::new();
    let mut mask_speech_quiet = Vec::new();
    for f in 0..frames.min(pair.labels.len()) {
        for b in 0..bins {
            let x = processed.input_mag.at(f, b);
            if x <= 0.0 {
                continue;
            }
            let m = processed.output_mag.at(f, b) / x;
            if pair.labels[f] && b >= b_lo && b < b_hi {
                mask_breath.push(m);
            } else if !pair.labels[f] && in_rms[f] > floor {
                if tgt_mag.at(f, b) > 1.0 {
                    mask_speech_active.push(m);
                } else {
                    mask_speech_quiet.push(m);
                }
            }
        }
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if v.is_empty() { f64::NAN } else { v[v.len() / 2] }
    };
    println!(
        "mask medians: breath-band/breath-frames {:.4}, speech-active {:.4}, speech-quiet {:.4}",
        median(&mut mask_breath),
        median(&mut mask_speech_active),
        median(&mut mask_speech_quiet)
    );

    // MFCC distance contributions by frame class.
    use debreath::eval::{mfcc, MfccConfig};
    let mcfg = MfccConfig::default();
    let common = processed.output.len().min(pair.target.len());
    let out_c = debreath::AudioClip::new(processed.output.samples()[..common].to_vec(), 22050).unwrap();
    let tgt_c = debreath::AudioClip::new(pair.target.samples()[..common].to_vec(), 22050).unwrap();
    let in_c = debreath::AudioClip::new(pair.input.samples()[..common].to_vec(), 22050).unwrap();
    let mo = mfcc(&out_c, &mcfg).unwrap();
    let mt = mfcc(&tgt_c, &mcfg).unwrap();
    let mi = mfcc(&in_c, &mcfg).unwrap();
    let nf = mo.shape()[0];
    let nc = 13;
    // Map MFCC frames (hop 512 too) onto labels.
    let mut d_out_breath = 0.0;
    let mut d_out_speech = 0.0;
    let mut d_in_breath = 0.0;
    let mut d_in_speech = 0.0;
    let mut nb = 0;
    let mut ns = 0;
    for f in 0..nf.min(pair.labels.len()) {
        let mut a = 0.0;
        let mut b = 0.0;
        for c in 0..nc {
            let d1 = mo.data()[f * nc + c] - mt.data()[f * nc + c];
            let d2 = mi.data()[f * nc + c] - mt.data()[f * nc + c];
            a += d1 * d1;
            b += d2 * d2;
        }
        if pair.labels[f] {
            d_out_breath += a.sqrt();
            d_in_breath += b.sqrt();
            nb += 1;
        } else {
            d_out_speech += a.sqrt();
            d_in_speech += b.sqrt();
            ns += 1;
        }
    }
    println!(
        "MFCC per-frame mean dist (×13): breath out {:.2} vs in {:.2} ({} frames) | speech out {:.2} vs in {:.2} ({} frames)",
        d_out_breath / nb as f64, d_in_breath / nb as f64, nb,
        d_out_speech / ns as f64, d_in_speech / ns as f64, ns
    );
}
