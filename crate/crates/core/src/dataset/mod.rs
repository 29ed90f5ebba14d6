//! Synthetic command datasets: generation, speaker-stratified splits,
//! manifests and Siamese pair selection.

mod pairs;
mod synth;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::audio::{FeatureExtractor, FeatureMatrix, Waveform};
use crate::augment::{self, AugmentSpec};
use crate::error::{Error, Result};
use crate::label::CommandLabel;
use crate::seed;

pub use pairs::{sample_index_pairs, sample_pairs, PairSample};
pub use synth::{synth_command, synth_template, Rendering, Segment, SpeakerProfile, Template};

pub const MANIFEST_FILE: &str = "manifest.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::format("split", format!("`{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Original,
    Augmented(AugmentSpec),
}

impl Provenance {
    pub fn is_original(&self) -> bool {
        matches!(self, Provenance::Original)
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Original => f.write_str("original"),
            Provenance::Augmented(spec) => write!(f, "augmented:{spec}"),
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "original" {
            return Ok(Provenance::Original);
        }
        match s.strip_prefix("augmented:") {
            Some(spec) => Ok(Provenance::Augmented(spec.parse()?)),
            None => Err(Error::format("provenance", format!("`{s}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Entry {
    pub id: String,
    /// Audio location relative to the dataset root. Feature-level
    /// augmentations share their source's file.
    pub relpath: String,
    pub label: CommandLabel,
    pub speaker: String,
    pub provenance: Provenance,
    pub split: Split,
    audio: Option<Arc<Waveform>>,
}

impl Entry {
    pub fn new(
        id: impl Into<String>,
        relpath: impl Into<String>,
        label: CommandLabel,
        speaker: impl Into<String>,
        provenance: Provenance,
        split: Split,
        audio: Option<Arc<Waveform>>,
    ) -> Self {
        Self {
            id: id.into(),
            relpath: relpath.into(),
            label,
            speaker: speaker.into(),
            provenance,
            split,
            audio,
        }
    }

    pub fn with_audio(mut self, audio: Arc<Waveform>) -> Self {
        self.audio = Some(audio);
        self
    }

    pub fn inline_audio(&self) -> Option<&Arc<Waveform>> {
        self.audio.as_ref()
    }

    fn manifest_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.id, self.relpath, self.label, self.speaker, self.provenance, self.split
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub entries: Vec<Entry>,
    root: Option<PathBuf>,
}

impl Dataset {
    pub fn from_entries(entries: Vec<Entry>) -> Result<Self> {
        let ds = Self {
            entries,
            root: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::format("dataset", format!("duplicate sample id `{}`", e.id)));
            }
            if !e.label.is_command() {
                return Err(Error::format("dataset", format!("`{}` is labeled UNKNOWN", e.id)));
            }
            if e.id.contains(['\t', '\n']) || e.relpath.contains(['\t', '\n']) {
                return Err(Error::format("dataset", format!("`{}` contains a tab or newline", e.id)));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn class_counts(&self) -> BTreeMap<CommandLabel, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.label).or_insert(0) += 1;
        }
        counts
    }

    pub fn speakers_by_split(&self) -> BTreeMap<Split, BTreeSet<String>> {
        let mut out: BTreeMap<Split, BTreeSet<String>> = BTreeMap::new();
        for e in &self.entries {
            out.entry(e.split).or_default().insert(e.speaker.clone());
        }
        out
    }

    /// The entry's waveform as stored (inline or read from the dataset root).
    pub fn waveform(&self, entry: &Entry) -> Result<Arc<Waveform>> {
        if let Some(w) = &entry.audio {
            return Ok(Arc::clone(w));
        }
        let root = self.root.as_ref().ok_or_else(|| {
            Error::format("dataset", format!("`{}` has no inline audio and no root", entry.id))
        })?;
        Ok(Arc::new(Waveform::read_wav(root.join(&entry.relpath))?))
    }

    /// Standardized features, with any feature-level augmentation applied.
    pub fn features(&self, entry: &Entry, extractor: &FeatureExtractor) -> Result<FeatureMatrix> {
        let w = self.waveform(entry)?;
        let features = extractor.extract_standardized(&w)?;
        Ok(match &entry.provenance {
            Provenance::Augmented(spec) => augment::apply_to_features(spec, features),
            Provenance::Original => features,
        })
    }

    pub fn manifest_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&e.manifest_line());
            out.push('\n');
        }
        out
    }

    /// Writes inline audio as WAVE files plus the manifest under `dir`.
    pub fn write(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let mut written = HashSet::new();
        for e in &self.entries {
            let Some(w) = &e.audio else { continue };
            if !written.insert(e.relpath.clone()) {
                continue;
            }
            let path = dir.join(&e.relpath);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|err| Error::io(parent, err))?;
            }
            w.write_wav(&path)?;
        }
        let manifest = dir.join(MANIFEST_FILE);
        std::fs::write(&manifest, self.manifest_text()).map_err(|e| Error::io(&manifest, e))?;
        self.root = Some(dir.to_path_buf());
        Ok(())
    }

    /// Loads a manifest; audio is read lazily from `dir`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, relpath, label, speaker, provenance, split] = fields[..] else {
                return Err(Error::format(
                    "manifest",
                    format!("line {}: expected 6 tab-separated fields, got {}", i + 1, fields.len()),
                ));
            };
            entries.push(Entry {
                id: id.into(),
                relpath: relpath.into(),
                label: label.parse()?,
                speaker: speaker.into(),
                provenance: provenance.parse()?,
                split: split.parse()?,
                audio: None,
            });
        }
        let mut ds = Self::from_entries(entries)?;
        ds.root = Some(dir.to_path_buf());
        Ok(ds)
    }

    /// Reads every referenced file into memory so the dataset no longer
    /// depends on its root.
    pub fn materialize(&mut self) -> Result<()> {
        let mut cache: BTreeMap<String, Arc<Waveform>> = BTreeMap::new();
        for i in 0..self.entries.len() {
            if self.entries[i].audio.is_some() {
                continue;
            }
            let rel = self.entries[i].relpath.clone();
            let w = match cache.get(&rel) {
                Some(w) => Arc::clone(w),
                None => {
                    let w = self.waveform(&self.entries[i])?;
                    cache.insert(rel, Arc::clone(&w));
                    w
                }
            };
            self.entries[i].audio = Some(w);
        }
        Ok(())
    }
}

/// Assigns every speaker to one split: 15% test, 15% val (at least one
/// each), the rest train. Requires at least three speakers.
fn assign_speaker_splits(speakers: &[String], seed: u64) -> BTreeMap<String, Split> {
    let mut order: Vec<&String> = speakers.iter().collect();
    order.shuffle(&mut seed::rng_for(seed, "speaker-splits"));
    let n = order.len();
    let held = ((0.15 * n as f64).round() as usize).max(1);
    order
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let split = if i < held {
                Split::Test
            } else if i < 2 * held {
                Split::Val
            } else {
                Split::Train
            };
            (s.clone(), split)
        })
        .collect()
}

fn sample_split(position: usize, count: usize) -> Split {
    let frac = position as f64 / count as f64;
    if frac < 0.70 {
        Split::Train
    } else if frac < 0.85 {
        Split::Val
    } else {
        Split::Test
    }
}

/// `per_class` renderings of each of the six commands across `speakers`.
pub fn build_dataset(per_class: usize, speakers: usize, seed: u64) -> Result<Dataset> {
    let counts: Vec<(CommandLabel, usize)> =
        CommandLabel::COMMANDS.iter().map(|&c| (c, per_class)).collect();
    build_dataset_with_counts(&counts, speakers, seed)
}

/// Renders the requested count per class. With three or more speakers the
/// split is by speaker; otherwise each class is split 70/15/15 by position
/// in a seeded shuffle.
pub fn build_dataset_with_counts(
    counts: &[(CommandLabel, usize)],
    speakers: usize,
    seed: u64,
) -> Result<Dataset> {
    if speakers == 0 {
        return Err(Error::InvalidArgument("need at least one speaker".into()));
    }
    let profiles: Vec<SpeakerProfile> =
        (0..speakers).map(|i| SpeakerProfile::generate(i, seed)).collect();
    let ids: Vec<String> = profiles.iter().map(|p| p.id.clone()).collect();
    let speaker_split = (speakers >= 3).then(|| assign_speaker_splits(&ids, seed));

    let mut entries = Vec::new();
    for &(label, count) in counts {
        let template = Template::for_label(label)?;
        let mut order: Vec<usize> = (0..count).collect();
        order.shuffle(&mut seed::rng_for(seed, &format!("split/{label}")));
        let mut position = vec![0; count];
        for (pos, &i) in order.iter().enumerate() {
            position[i] = pos;
        }
        for i in 0..count {
            let speaker = &profiles[i % speakers];
            let id = format!("{}_{}_{:04}", label.name().to_lowercase(), speaker.id, i);
            let rendering = synth_template(&template, speaker, seed::derive_seed(seed, &id));
            let split = match &speaker_split {
                Some(map) => map[&speaker.id],
                None => sample_split(position[i], count),
            };
            entries.push(Entry {
                relpath: format!("audio/{id}.wav"),
                id,
                label,
                speaker: speaker.id.clone(),
                provenance: Provenance::Original,
                split,
                audio: Some(Arc::new(rendering.waveform)),
            });
        }
    }
    Dataset::from_entries(entries)
}
