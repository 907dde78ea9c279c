//! Command implementations behind the `debreath` binary: corpus synthesis,
//! training, inference, evaluation, and spectrogram dumps.

use std::path::{Path, PathBuf};

use crate::audio::{read_wav, write_wav};
use crate::config::RunConfig;
use crate::data::{materialize_corpus, split_corpus, Corpus, CorpusSplit, PairManifest};
use crate::dsp::{split as split_spec, stft};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::{load_model, save_model};
use crate::pipeline::process_clip;
use crate::training::train;

/// Which part of the deterministic split a command operates on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitSelection {
    Train,
    Validation,
    Test,
    All,
}

impl SplitSelection {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "train" => Ok(SplitSelection::Train),
            "validation" => Ok(SplitSelection::Validation),
            "test" => Ok(SplitSelection::Test),
            "all" => Ok(SplitSelection::All),
            other => Err(Error::Input(format!(
                "unknown split {other:?} (expected train, validation, test or all)"
            ))),
        }
    }

    fn ids(self, split: &CorpusSplit, manifest: &PairManifest) -> Vec<String> {
        match self {
            SplitSelection::Train => split.train.clone(),
            SplitSelection::Validation => split.validation.clone(),
            SplitSelection::Test => split.test.clone(),
            SplitSelection::All => manifest.entries.iter().map(|e| e.id.clone()).collect(),
        }
    }
}

/// Write `count` synthetic pairs plus manifest and labels CSV.
pub fn cmd_synth(config: &RunConfig, out_dir: &Path, count: usize) -> Result<PathBuf> {
    if count == 0 {
        eprintln!("warning: synthesizing an empty corpus");
    }
    let manifest = materialize_corpus(&config.synth, &config.stft, count, out_dir)?;
    println!(
        "wrote {count} pairs to {} (manifest: {})",
        out_dir.display(),
        manifest.display()
    );
    Ok(manifest)
}

fn load_split(config: &RunConfig, manifest_path: &Path) -> Result<(PairManifest, CorpusSplit)> {
    let manifest = PairManifest::load(manifest_path, &config.stft)?;
    if manifest.entries.is_empty() {
        return Err(Error::Input(format!(
            "manifest {} lists no pairs",
            manifest_path.display()
        )));
    }
    let split = split_corpus(&manifest, config.split_fractions, config.seed)?;
    for warning in split.warnings() {
        eprintln!("warning: {warning}");
    }
    Ok((manifest, split))
}

/// Train on the manifest's train/validation splits, write the best-epoch
/// model and the history CSV.
pub fn cmd_train(
    config: &RunConfig,
    manifest_path: &Path,
    model_out: &Path,
    history_out: Option<&Path>,
) -> Result<()> {
    let (manifest, split) = load_split(config, manifest_path)?;
    let corpus = Corpus::from_manifest(&manifest)?;
    let (params, history) = train(
        &corpus,
        &split,
        &config.stft,
        &config.unet,
        &config.train,
        |record| {
            println!(
                "epoch={} train_loss={} val_loss={} seconds={}",
                record.epoch, record.train_loss, record.val_loss, record.seconds
            );
        },
    )?;
    save_model(model_out, &config.unet, &params)?;
    let history_path = match history_out {
        Some(p) => p.to_path_buf(),
        None => model_out.with_extension("history.csv"),
    };
    history.write_csv(&history_path)?;
    println!(
        "model written to {} (best epoch {}, stopped after epoch {})",
        model_out.display(),
        history.best_epoch,
        history.stopped_epoch
    );
    Ok(())
}

/// Run breath removal over one WAV file.
pub fn cmd_infer(
    config: &RunConfig,
    model_path: &Path,
    input_path: &Path,
    output_path: &Path,
) -> Result<()> {
    let (model_config, params) = load_model(model_path)?;
    let clip = read_wav(input_path)?;
    if clip.sample_rate() != config.stft.sample_rate {
        return Err(Error::Input(format!(
            "{}: sample rate {} does not match configured {}",
            input_path.display(),
            clip.sample_rate(),
            config.stft.sample_rate
        )));
    }
    let processed = process_clip(&params, &model_config, &config.stft, &clip, false)?;
    write_wav(output_path, &processed.output)?;
    println!(
        "wrote {} ({} samples, input peak {:.4}, output peak {:.4})",
        output_path.display(),
        processed.output.len(),
        clip.peak(),
        processed.output.peak()
    );
    Ok(())
}

/// Evaluate a model over one split of the manifest; write the report CSV
/// and print the aggregate summary line.
pub fn cmd_eval(
    config: &RunConfig,
    model_path: &Path,
    manifest_path: &Path,
    report_out: &Path,
    selection: SplitSelection,
    identity_mask: bool,
) -> Result<()> {
    let (manifest, split) = load_split(config, manifest_path)?;
    let ids = selection.ids(&split, &manifest);
    if ids.is_empty() {
        return Err(Error::Input(format!(
            "selected split {selection:?} is empty for this manifest/seed"
        )));
    }
    let corpus = Corpus::from_manifest(&manifest)?;
    let report = evaluate(
        model_path,
        &corpus,
        &ids,
        &config.stft,
        &config.mfcc,
        &config.label,
        identity_mask,
    )?;
    std::fs::write(report_out, report.to_csv()).map_err(|e| Error::io(report_out, e))?;
    println!("{}", report.summary_line());
    Ok(())
}

/// Dump the magnitude spectrogram of a WAV as CSV (one row per frame) for
/// external plotting.
pub fn cmd_stft_dump(config: &RunConfig, input_path: &Path, output_path: &Path) -> Result<()> {
    let clip = read_wav(input_path)?;
    if clip.sample_rate() != config.stft.sample_rate {
        return Err(Error::Input(format!(
            "{}: sample rate {} does not match configured {}",
            input_path.display(),
            clip.sample_rate(),
            config.stft.sample_rate
        )));
    }
    let (mag, _) = split_spec(&stft(&clip, &config.stft)?);
    let mut out = String::new();
    for frame in 0..mag.frames {
        let row = mag.frame(frame);
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    std::fs::write(output_path, out).map_err(|e| Error::io(output_path, e))?;
    println!(
        "wrote {} ({} frames x {} bins)",
        output_path.display(),
        mag.frames,
        mag.bins
    );
    Ok(())
}
