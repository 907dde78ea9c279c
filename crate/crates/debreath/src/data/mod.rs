//! Paired-corpus handling: manifest ingestion for real recordings, a
//! deterministic synthetic corpus for desk-scale work, duration-weighted
//! splits, and breath-frame ground-truth labeling.

mod labels;
mod manifest;
mod synth;

pub use labels::{frame_breath_labels, LabelConfig};
pub use manifest::{split_corpus, Corpus, CorpusSplit, LoadedPair, ManifestEntry, PairManifest};
pub use synth::{materialize_corpus, synth_pair, SynthConfig, SynthPair};
