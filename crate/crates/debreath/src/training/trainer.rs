//! The training loop: seeded patch sampling, forward/backward over the
//! network, Adam updates, validation, and early stopping.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Corpus, CorpusSplit};
use crate::dsp::{log_compress, split as split_spec, stft, SpectrogramConfig};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{
    init_params, load_param_nodes, unet_forward, ForwardMode, ModelParams, UNetConfig,
};
use crate::tensor::Tensor;

use super::{adam_step, total_loss, AdamState, EarlyStopping, StopDecision};

/// Momentum of the running batch-norm statistics.
const BN_MOMENTUM: f32 = 0.9;

/// Optimization and loop hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
    /// Patches sampled from each training pair per epoch.
    pub patches_per_pair: usize,
    /// Restrict patch sampling to the lowest `max_bin` frequency bins.
    /// `None` samples the whole spectrogram.
    pub max_bin: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 4,
            max_epochs: 60,
            patience: 10,
            min_delta: 1e-4,
            seed: 42,
            patches_per_pair: 12,
            max_bin: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("beta1/beta2 must lie in [0, 1)".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.max_epochs < 1 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.patches_per_pair < 1 {
            return Err(Error::Config("patches_per_pair must be >= 1".into()));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

/// Per-epoch records plus where training stopped and which epoch won.
#[derive(Clone, Debug)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,seconds\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.epoch, r.train_loss, r.val_loss, r.seconds
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Per-pair spectrogram cache: log-magnitude network input plus linear
/// magnitudes for masking and loss, with the Nyquist bin dropped.
struct PairCache {
    frames: usize,
    bins: usize,
    logmag: Vec<f32>,
    inmag: Vec<f32>,
    tgtmag: Vec<f32>,
}

fn build_cache(
    corpus: &Corpus,
    ids: &[String],
    stft_config: &SpectrogramConfig,
    min_frames: usize,
) -> Result<Vec<PairCache>> {
    ids.iter()
        .map(|id| {
            let pair = corpus.by_id(id)?;
            let (in_mag, _) = split_spec(&stft(&pair.input, stft_config)?);
            let (tgt_mag, _) = split_spec(&stft(&pair.target, stft_config)?);
            let frames = in_mag.frames.min(tgt_mag.frames);
            let bins = in_mag.bins - 1;
            let logmag_full = log_compress(&in_mag)?;
            let padded = frames.max(min_frames);
            let mut logmag = vec![0.0f32; padded * bins];
            let mut inmag = vec![0.0f32; padded * bins];
            let mut tgtmag = vec![0.0f32; padded * bins];
            for f in 0..frames {
                for b in 0..bins {
                    logmag[f * bins + b] = logmag_full.data()[f * in_mag.bins + b];
                    inmag[f * bins + b] = in_mag.at(f, b) as f32;
                    tgtmag[f * bins + b] = tgt_mag.at(f, b) as f32;
                }
            }
            Ok(PairCache {
                frames: padded,
                bins,
                logmag,
                inmag,
                tgtmag,
            })
        })
        .collect()
}

#[derive(Clone, Copy)]
struct PatchRef {
    pair: usize,
    frame_off: usize,
    bin_off: usize,
}

fn gather_patch(dst: &mut [f32], src: &[f32], bins: usize, at: PatchRef, pf: usize, pb: usize) {
    for f in 0..pf {
        let row = (at.frame_off + f) * bins + at.bin_off;
        dst[f * pb..(f + 1) * pb].copy_from_slice(&src[row..row + pb]);
    }
}

fn batch_tensor(
    caches: &[PairCache],
    patches: &[PatchRef],
    field: fn(&PairCache) -> &[f32],
    pf: usize,
    pb: usize,
) -> Result<Tensor<f32>> {
    let mut data = vec![0.0f32; patches.len() * pf * pb];
    for (i, &p) in patches.iter().enumerate() {
        let cache = &caches[p.pair];
        gather_patch(
            &mut data[i * pf * pb..(i + 1) * pf * pb],
            field(cache),
            cache.bins,
            p,
            pf,
            pb,
        );
    }
    Tensor::new(vec![patches.len(), pf, pb, 1], data)
}

/// Usable bin range for patch sampling, rounded down to whole patches.
fn usable_bins(bins: usize, pb: usize, max_bin: Option<usize>) -> Result<usize> {
    if bins < pb {
        return Err(Error::Config(format!(
            "spectrogram has {bins} model bins, smaller than the {pb}-bin patch"
        )));
    }
    let capped = max_bin.unwrap_or(bins).min(bins).max(pb);
    Ok(capped)
}

/// Mean total loss over a deterministic tiling of the given pairs, with
/// the network in eval mode.
fn validation_loss(
    caches: &[PairCache],
    params: &ModelParams,
    unet_config: &UNetConfig,
    train_config: &TrainConfig,
) -> Result<f64> {
    let pf = unet_config.input_frames;
    let pb = unet_config.input_bins;
    let mut losses = Vec::new();
    for (pair_idx, cache) in caches.iter().enumerate() {
        let bins_used = usable_bins(cache.bins, pb, train_config.max_bin)?;
        let mut frame_offsets: Vec<usize> = (0..cache.frames / pf).map(|k| k * pf).collect();
        if cache.frames % pf != 0 {
            frame_offsets.push(cache.frames - pf);
        }
        let mut bin_offsets: Vec<usize> = (0..bins_used / pb).map(|k| k * pb).collect();
        if bins_used % pb != 0 {
            bin_offsets.push(bins_used - pb);
        }
        for &frame_off in &frame_offsets {
            for &bin_off in &bin_offsets {
                let at = PatchRef {
                    pair: pair_idx,
                    frame_off,
                    bin_off,
                };
                let logmag = batch_tensor(caches, &[at], |c| &c.logmag, pf, pb)?;
                let inmag = batch_tensor(caches, &[at], |c| &c.inmag, pf, pb)?;
                let target = batch_tensor(caches, &[at], |c| &c.tgtmag, pf, pb)?;

                let mut g = Graph::<f32>::new();
                let nodes = load_param_nodes(&mut g, params, unet_config, false)?;
                let input = g.leaf(logmag);
                let out = unet_forward(&mut g, &nodes, params, unet_config, input, ForwardMode::Eval)?;
                let mask = g.value(out.output);
                let masked: Vec<f32> = mask
                    .data()
                    .iter()
                    .zip(inmag.data())
                    .map(|(&m, &x)| m * x)
                    .collect();
                let masked = Tensor::new(target.shape().to_vec(), masked)?;
                losses.push(total_loss(&target, &masked)? as f64);
            }
        }
    }
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Train a fresh model on the corpus under the given split.
///
/// Per epoch: seeded shuffle of sampled patches, forward in train mode,
/// total loss on masked linear magnitudes against target magnitudes,
/// backward, Adam; then validation loss and the early-stopping update.
/// Returns the best-epoch parameters and the full history. Deterministic
/// in (seed, corpus, configs).
pub fn train(
    corpus: &Corpus,
    split: &CorpusSplit,
    stft_config: &SpectrogramConfig,
    unet_config: &UNetConfig,
    train_config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelParams, TrainHistory)> {
    stft_config.validate()?;
    unet_config.validate()?;
    train_config.validate()?;
    if split.train.is_empty() {
        return Err(Error::Input("training split is empty".into()));
    }
    if split.validation.is_empty() {
        return Err(Error::Input("validation split is empty".into()));
    }
    let pf = unet_config.input_frames;
    let pb = unet_config.input_bins;

    let train_caches = build_cache(corpus, &split.train, stft_config, pf)?;
    let val_caches = build_cache(corpus, &split.validation, stft_config, pf)?;

    let mut params = init_params(unet_config, train_config.seed)?;
    let mut adam = AdamState::new(&params, unet_config)?;
    let mut stopper = EarlyStopping::new(train_config.patience, train_config.min_delta);
    let mut best_params = params.clone();
    let mut records = Vec::new();
    let mut stopped_epoch = train_config.max_epochs;
    let mut step = 0usize;

    for epoch in 1..=train_config.max_epochs {
        let t0 = Instant::now();
        // Independent, reproducible randomness per epoch: stream 2k for
        // patch sampling, 2k+1 for dropout masks.
        let mut patch_rng = ChaCha8Rng::seed_from_u64(train_config.seed);
        patch_rng.set_stream(2 * epoch as u64);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(train_config.seed);
        dropout_rng.set_stream(2 * epoch as u64 + 1);

        let mut patches = Vec::new();
        for (pair_idx, cache) in train_caches.iter().enumerate() {
            let bins_used = usable_bins(cache.bins, pb, train_config.max_bin)?;
            for p in 0..train_config.patches_per_pair {
                // Alternate uniform crops with energy-biased crops (best of
                // four candidates) so speech and breath content shows up in
                // every epoch even on mostly-quiet spectrograms.
                let candidates = if p % 2 == 0 { 1 } else { 4 };
                let mut best = None;
                for _ in 0..candidates {
                    let frame_off = patch_rng.gen_range(0..=cache.frames - pf);
                    let bin_off = patch_rng.gen_range(0..=bins_used - pb);
                    let energy: f32 = (0..pf)
                        .map(|f| {
                            let row = (frame_off + f) * cache.bins + bin_off;
                            cache.inmag[row..row + pb].iter().sum::<f32>()
                        })
                        .sum();
                    if best.map_or(true, |(e, _, _)| energy > e) {
                        best = Some((energy, frame_off, bin_off));
                    }
                }
                let (_, frame_off, bin_off) = best.expect("at least one candidate");
                patches.push(PatchRef {
                    pair: pair_idx,
                    frame_off,
                    bin_off,
                });
            }
        }
        // A second pass of index shuffling mixes pairs within batches.
        for i in (1..patches.len()).rev() {
            let j = patch_rng.gen_range(0..=i);
            patches.swap(i, j);
        }

        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for batch in patches.chunks(train_config.batch_size) {
            step += 1;
            let logmag = batch_tensor(&train_caches, batch, |c| &c.logmag, pf, pb)?;
            let inmag = batch_tensor(&train_caches, batch, |c| &c.inmag, pf, pb)?;
            let target = batch_tensor(&train_caches, batch, |c| &c.tgtmag, pf, pb)?;

            let mut g = Graph::<f32>::new();
            let nodes = load_param_nodes(&mut g, &params, unet_config, true)?;
            let input = g.leaf(logmag);
            let in_leaf = g.leaf(inmag);
            let tgt_leaf = g.leaf(target);
            let out = unet_forward(
                &mut g,
                &nodes,
                &params,
                unet_config,
                input,
                ForwardMode::Train {
                    dropout_rng: &mut dropout_rng,
                },
            )?;
            let masked = g.mul(out.output, in_leaf)?;
            let mae = g.mae_loss(tgt_leaf, masked)?;
            let speech = g.speech_loss(tgt_leaf, masked)?;
            let loss = g.add(mae, speech)?;

            let loss_value = g.value(loss).item() as f64;
            if !loss_value.is_finite() {
                return Err(Error::Diverged(format!(
                    "training loss became {loss_value} at step {step}"
                )));
            }
            epoch_loss += loss_value;
            batches += 1;

            g.backward(loss)?;
            for (name, id) in out.bn_nodes.iter().map(|(n, id)| (n, *id)) {
                let (mean, var) = g
                    .batch_norm_stats(id)
                    .expect("train-mode batch norm node");
                let (mean, var) = (mean.to_vec(), var.to_vec());
                params.update_running_stats(name, &mean, &var, BN_MOMENTUM)?;
            }
            let mut grads: BTreeMap<String, Vec<f32>> = BTreeMap::new();
            for (name, id) in nodes.iter() {
                let grad = g
                    .grad(id)
                    .ok_or_else(|| Error::Invariant(format!("no gradient for {name:?}")))?;
                grads.insert(name.to_string(), grad.to_vec());
            }
            adam_step(&mut params, &grads, &mut adam, train_config, step)?;
        }

        let train_loss = epoch_loss / batches.max(1) as f64;
        let val_loss = validation_loss(&val_caches, &params, unet_config, train_config)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged(format!(
                "validation loss became {val_loss} at epoch {epoch}"
            )));
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            seconds: t0.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        records.push(record);

        let (decision, improved) = stopper.update(epoch, val_loss);
        if improved {
            best_params = params.clone();
        }
        if decision == StopDecision::Stop {
            stopped_epoch = epoch;
            break;
        }
        stopped_epoch = epoch;
    }

    let history = TrainHistory {
        records,
        stopped_epoch,
        best_epoch: stopper.best_epoch().expect("at least one epoch ran"),
    };
    Ok((best_params, history))
}
