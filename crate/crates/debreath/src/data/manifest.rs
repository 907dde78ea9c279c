use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::{read_wav, wav_info, AudioClip};
use crate::dsp::SpectrogramConfig;
use crate::error::{Error, Result};

use super::synth::{synth_pair, SynthConfig};

/// One manifest row: a raw recording and its breath-free counterpart.
#[derive(Clone, Debug)]
pub struct ManifestEntry {
    /// Identifier used in splits and reports: the input path as written in
    /// the manifest.
    pub id: String,
    pub input_path: PathBuf,
    pub target_path: PathBuf,
    pub duration_seconds: f64,
}

/// Paired (raw, breath-free) recordings, typically loaded from a
/// `manifest.csv` with header `input,target` and paths relative to the
/// manifest's directory.
#[derive(Clone, Debug)]
pub struct PairManifest {
    pub entries: Vec<ManifestEntry>,
}

impl PairManifest {
    /// Parse and validate a manifest. Every referenced pair must decode,
    /// share a sample rate matching `stft`, and agree in length to within
    /// one hop.
    pub fn load(path: &Path, stft: &SpectrogramConfig) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == "input,target" => {}
            other => {
                return Err(Error::Input(format!(
                    "manifest {} must start with the header \"input,target\", got {:?}",
                    path.display(),
                    other.map(|(_, l)| l)
                )))
            }
        }
        let mut entries = Vec::new();
        for (lineno, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let (input, target) = match (fields.next(), fields.next(), fields.next()) {
                (Some(i), Some(t), None) => (i.trim(), t.trim()),
                _ => {
                    return Err(Error::Input(format!(
                        "manifest line {}: expected exactly \"input,target\", got {line:?}",
                        lineno + 1
                    )))
                }
            };
            let input_path = dir.join(input);
            let target_path = dir.join(target);
            let (in_rate, in_len) = wav_info(&input_path)?;
            let (tgt_rate, tgt_len) = wav_info(&target_path)?;
            if in_rate != tgt_rate {
                return Err(Error::Input(format!(
                    "pair {input:?}: sample rates differ ({in_rate} vs {tgt_rate})"
                )));
            }
            if in_rate != stft.sample_rate {
                return Err(Error::Input(format!(
                    "pair {input:?}: sample rate {in_rate} does not match configured {}",
                    stft.sample_rate
                )));
            }
            if in_len.abs_diff(tgt_len) > stft.hop {
                return Err(Error::Input(format!(
                    "pair {input:?}: lengths differ by more than one hop ({in_len} vs {tgt_len})"
                )));
            }
            entries.push(ManifestEntry {
                id: input.to_string(),
                input_path,
                target_path,
                duration_seconds: in_len as f64 / in_rate as f64,
            });
        }
        Ok(PairManifest { entries })
    }
}

/// Disjoint, exhaustive partition of a manifest into train / validation /
/// test, by cumulative duration.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub fractions: (f64, f64, f64),
}

impl CorpusSplit {
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        for (name, ids) in [("validation", &self.validation), ("test", &self.test)] {
            if ids.is_empty() {
                w.push(format!("{name} split is empty"));
            }
        }
        w
    }
}

/// Seeded shuffle followed by greedy assignment: each clip goes to the
/// split with the largest duration deficit against its target fraction.
pub fn split_corpus(
    manifest: &PairManifest,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<CorpusSplit> {
    if manifest.entries.is_empty() {
        return Err(Error::Input("cannot split an empty manifest".into()));
    }
    let sum = fractions.0 + fractions.1 + fractions.2;
    if (sum - 1.0).abs() > 1e-9 || fractions.0 <= 0.0 || fractions.1 < 0.0 || fractions.2 < 0.0 {
        return Err(Error::Input(format!(
            "split fractions {fractions:?} must be nonnegative and sum to 1"
        )));
    }
    let mut order: Vec<usize> = (0..manifest.entries.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let targets = [fractions.0, fractions.1, fractions.2];
    let mut assigned = [0.0f64; 3];
    let mut total = 0.0f64;
    let mut buckets: [Vec<String>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for idx in order {
        let entry = &manifest.entries[idx];
        total += entry.duration_seconds;
        let mut best = 0;
        let mut best_deficit = f64::NEG_INFINITY;
        for s in 0..3 {
            let deficit = targets[s] * total - assigned[s];
            if deficit > best_deficit {
                best_deficit = deficit;
                best = s;
            }
        }
        assigned[best] += entry.duration_seconds;
        buckets[best].push(entry.id.clone());
    }
    let [train, validation, test] = buckets;
    Ok(CorpusSplit {
        train,
        validation,
        test,
        fractions,
    })
}

/// A fully decoded pair.
#[derive(Clone, Debug)]
pub struct LoadedPair {
    pub id: String,
    pub input: AudioClip,
    pub target: AudioClip,
    pub duration_seconds: f64,
}

/// In-memory corpus, either decoded from a manifest or synthesized.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub pairs: Vec<LoadedPair>,
}

impl Corpus {
    pub fn from_manifest(manifest: &PairManifest) -> Result<Self> {
        let pairs = manifest
            .entries
            .iter()
            .map(|e| {
                Ok(LoadedPair {
                    id: e.id.clone(),
                    input: read_wav(&e.input_path)?,
                    target: read_wav(&e.target_path)?,
                    duration_seconds: e.duration_seconds,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus { pairs })
    }

    /// Synthesize `count` pairs in memory with ids matching the file names
    /// [`super::materialize_corpus`] would write.
    pub fn synthetic(
        config: &SynthConfig,
        stft: &SpectrogramConfig,
        count: usize,
    ) -> Result<Self> {
        let pairs = (0..count)
            .map(|index| {
                let pair = synth_pair(config, stft, index as u64)?;
                Ok(LoadedPair {
                    id: format!("pair_{index:04}_input.wav"),
                    duration_seconds: pair.input.duration_seconds(),
                    input: pair.input,
                    target: pair.target,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus { pairs })
    }

    pub fn by_id(&self, id: &str) -> Result<&LoadedPair> {
        self.pairs
            .iter()
            .find(|p| p.id == id)
            .ok_or_else(|| Error::Input(format!("pair {id:?} is not in the corpus")))
    }

    /// A manifest-shaped view of an in-memory corpus, for splitting.
    pub fn manifest_view(&self) -> PairManifest {
        PairManifest {
            entries: self
                .pairs
                .iter()
                .map(|p| ManifestEntry {
                    id: p.id.clone(),
                    input_path: PathBuf::new(),
                    target_path: PathBuf::new(),
                    duration_seconds: p.duration_seconds,
                })
                .collect(),
        }
    }
}
