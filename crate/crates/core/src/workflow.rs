//! Training all three pipelines from one dataset.
//!
//! Training uses the train split (originals and their augmentations),
//! validation uses val-split originals and evaluation test-split originals.
//! Every random choice derives from the plan's seed.

use std::collections::HashMap;

use crate::audio::{FeatureConfig, FeatureMatrix, Waveform};
use crate::augment::AugmentSpec;
use crate::config::KeyValues;
use crate::dataset::{sample_index_pairs, synth_template, Dataset, Provenance, SpeakerProfile, Split, Template};
use crate::engines::Engines;
use crate::error::{Error, Result};
use crate::eval::EvalSample;
use crate::label::CommandLabel;
use crate::neuro::{train, Example, Network, OptimizerKind, Pairs, Supervised, Target, TrainConfig, TrainLog};
use crate::pipelines::direct::{new_classifier, outlier_waveforms};
use crate::pipelines::siamese::{encode, new_encoder, Record, VectorStore, EMBEDDING_DIM};
use crate::pipelines::stt::{frame_targets, new_transcriber, voiced_frames, FrameTranscriber, FILLER};
use crate::pipelines::{PipelineId, Preprocessor};
use crate::seed::derive_seed;

/// A prepared utterance.
#[derive(Debug, Clone)]
pub struct Item {
    pub id: String,
    pub label: CommandLabel,
    pub original: bool,
    pub features: FeatureMatrix,
    /// Energy voice activity per analysis frame of the clean rendering.
    pub voiced: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: Vec<Item>,
    pub val: Vec<Item>,
    pub test: Vec<Item>,
    /// Features of non-command clips.
    pub outliers: Vec<FeatureMatrix>,
}

impl Corpus {
    pub fn prepare(ds: &Dataset, pre: &Preprocessor, outliers: usize, seed: u64) -> Result<Self> {
        let cfg = pre.extractor().config();
        let by_id: HashMap<&str, &crate::dataset::Entry> =
            ds.entries.iter().map(|e| (e.id.as_str(), e)).collect();
        let mut corpus = Corpus {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
            outliers: Vec::new(),
        };
        for entry in &ds.entries {
            if entry.split != Split::Train && !entry.provenance.is_original() {
                continue;
            }
            // Noise would fool the energy detector; time it on the clean source.
            let vad_entry = match &entry.provenance {
                Provenance::Augmented(AugmentSpec::Noise { .. }) => {
                    let source = entry.id.split('~').next().unwrap_or(&entry.id);
                    by_id.get(source).copied().unwrap_or(entry)
                }
                _ => entry,
            };
            let item = Item {
                id: entry.id.clone(),
                label: entry.label,
                original: entry.provenance.is_original(),
                features: ds.features(entry, pre.extractor())?,
                voiced: voiced_frames(&*ds.waveform(vad_entry)?, cfg),
            };
            match entry.split {
                Split::Train => corpus.train.push(item),
                Split::Val => corpus.val.push(item),
                Split::Test => corpus.test.push(item),
            }
        }
        for w in outlier_waveforms(outliers, derive_seed(seed, "outliers")) {
            corpus.outliers.push(pre.features(&w)?);
        }
        if corpus.train.is_empty() {
            return Err(Error::EmptyBatch);
        }
        Ok(corpus)
    }

    pub fn train_originals(&self) -> impl Iterator<Item = &Item> {
        self.train.iter().filter(|i| i.original)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainPlan {
    pub seed: u64,
    pub p1: TrainConfig,
    pub p2: TrainConfig,
    pub p3: TrainConfig,
    pub train_pairs: usize,
    pub val_pairs: usize,
    pub positive_ratio: f64,
    pub outliers: usize,
    pub embedding_dim: usize,
}

fn stage_config(seed: u64, tag: &str, epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        learning_rate: lr,
        optimizer: OptimizerKind::Adam,
        seed: derive_seed(seed, tag),
        margin: 1.0,
    }
}

impl TrainPlan {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            p1: stage_config(seed, "p1/train", 10, 2e-3),
            p2: stage_config(seed, "p2/train", 10, 2e-3),
            p3: stage_config(seed, "p3/train", 10, 1e-3),
            train_pairs: 3000,
            val_pairs: 400,
            positive_ratio: 0.5,
            outliers: 200,
            embedding_dim: EMBEDDING_DIM,
        }
    }

    /// Reads `train.*`, `p1.*`, `p2.*` and `p3.*` keys over the defaults.
    pub fn from_kv(kv: &KeyValues, seed: u64) -> Result<Self> {
        let d = Self::new(seed);
        let stage = |prefix: &str, base: &TrainConfig| -> Result<TrainConfig> {
            let cfg = TrainConfig {
                epochs: kv.get_or(&format!("{prefix}.epochs"), base.epochs)?,
                batch_size: kv.get_or(&format!("{prefix}.batch_size"), base.batch_size)?,
                learning_rate: kv.get_or(&format!("{prefix}.learning_rate"), base.learning_rate)?,
                optimizer: kv.get_or(&format!("{prefix}.optimizer"), base.optimizer)?,
                seed: base.seed,
                margin: kv.get_or(&format!("{prefix}.margin"), base.margin)?,
            };
            cfg.validate()?;
            Ok(cfg)
        };
        Ok(Self {
            seed,
            p1: stage("p1", &d.p1)?,
            p2: stage("p2", &d.p2)?,
            p3: stage("p3", &d.p3)?,
            train_pairs: kv.get_or("p3.train_pairs", d.train_pairs)?,
            val_pairs: kv.get_or("p3.val_pairs", d.val_pairs)?,
            positive_ratio: kv.get_or("p3.positive_ratio", d.positive_ratio)?,
            outliers: kv.get_or("train.outliers", d.outliers)?,
            embedding_dim: kv.get_or("p3.embedding_dim", d.embedding_dim)?,
        })
    }
}

fn class_index(label: CommandLabel) -> usize {
    label.index().expect("dataset items carry command labels")
}

fn channels(corpus: &Corpus) -> usize {
    corpus.train[0].features.bands()
}

/// Pipeline 2: cross-entropy on commands plus a uniform target on outliers.
pub fn train_p2(corpus: &Corpus, plan: &TrainPlan) -> Result<(Network, TrainLog)> {
    let mut train_set: Vec<Example> = corpus
        .train
        .iter()
        .map(|i| Example::new(i.features.clone(), Target::Class(class_index(i.label))))
        .collect();
    train_set.extend(corpus.outliers.iter().map(|f| Example::new(f.clone(), Target::Uniform)));
    let val_set: Vec<Example> = corpus
        .val
        .iter()
        .map(|i| Example::new(i.features.clone(), Target::Class(class_index(i.label))))
        .collect();
    let net = new_classifier(channels(corpus), derive_seed(plan.seed, "p2/init"))?;
    let (mut net, log) = train(net, &Supervised::new(&train_set, &val_set), &plan.p2)?;
    net.round_to_f32();
    Ok((net, log))
}

fn frame_example(item: &Item, net: &Network) -> Result<Example> {
    let targets = frame_targets(&item.voiced, class_index(item.label), net)?;
    Ok(Example::new(item.features.clone(), Target::Frames(targets)))
}

/// Pipeline 1 transcriber: per-frame word/filler cross-entropy.
pub fn train_p1(corpus: &Corpus, plan: &TrainPlan) -> Result<(Network, TrainLog)> {
    let net = new_transcriber(channels(corpus), derive_seed(plan.seed, "p1/init"))?;
    let mut train_set = corpus
        .train
        .iter()
        .map(|i| frame_example(i, &net))
        .collect::<Result<Vec<_>>>()?;
    for f in &corpus.outliers {
        let (frames, _) = net.output_frames(f.frames(), f.frames())?;
        train_set.push(Example::new(f.clone(), Target::Frames(vec![FILLER; frames])));
    }
    let val_set = corpus
        .val
        .iter()
        .map(|i| frame_example(i, &net))
        .collect::<Result<Vec<_>>>()?;
    let (mut net, log) = train(net, &Supervised::new(&train_set, &val_set), &plan.p1)?;
    net.round_to_f32();
    Ok((net, log))
}

/// Pipeline 3: contrastive training on sampled pairs, then a store of the
/// train-split originals.
pub fn train_p3(corpus: &Corpus, plan: &TrainPlan) -> Result<(Network, VectorStore, TrainLog)> {
    let mut inputs: Vec<FeatureMatrix> = corpus.train.iter().map(|i| i.features.clone()).collect();
    let train_labels: Vec<CommandLabel> = corpus.train.iter().map(|i| i.label).collect();
    let train_pairs = sample_index_pairs(
        &train_labels,
        plan.train_pairs,
        plan.positive_ratio,
        derive_seed(plan.seed, "p3/pairs/train"),
    )?;
    let offset = inputs.len();
    inputs.extend(corpus.val.iter().map(|i| i.features.clone()));
    let val_labels: Vec<CommandLabel> = corpus.val.iter().map(|i| i.label).collect();
    let val_pairs = if corpus.val.is_empty() || plan.val_pairs == 0 {
        Vec::new()
    } else {
        sample_index_pairs(
            &val_labels,
            plan.val_pairs,
            plan.positive_ratio,
            derive_seed(plan.seed, "p3/pairs/val"),
        )?
        .into_iter()
        .map(|(a, b, s)| (a + offset, b + offset, s))
        .collect()
    };
    let objective = Pairs {
        inputs: &inputs,
        train: &train_pairs,
        val: &val_pairs,
        margin: plan.p3.margin,
    };
    let net = new_encoder(channels(corpus), plan.embedding_dim, derive_seed(plan.seed, "p3/init"))?;
    let (mut net, log) = train(net, &objective, &plan.p3)?;
    net.round_to_f32();
    let store = build_store(&net, corpus.train_originals())?;
    Ok((net, store, log))
}

pub fn build_store<'a>(encoder: &Network, items: impl IntoIterator<Item = &'a Item>) -> Result<VectorStore> {
    let mut store = VectorStore::new(encoder.output_channels());
    for item in items {
        store.insert(Record {
            embedding: encode(&item.features, encoder)?,
            label: item.label.into(),
            id: item.id.clone(),
        })?;
    }
    store.round_to_f32();
    Ok(store)
}

/// Trained engines with one training log per pipeline.
#[derive(Debug)]
pub struct Trained {
    pub engines: Engines,
    pub logs: Vec<(PipelineId, TrainLog)>,
}

/// Trains the models of `pipelines` in order P1, P2, P3.
pub fn train_pipelines(
    corpus: &Corpus,
    plan: &TrainPlan,
    cfg: FeatureConfig,
    pipelines: &[PipelineId],
) -> Result<Trained> {
    let mut engines = Engines::empty(cfg)?;
    let mut logs = Vec::new();
    for id in PipelineId::ALL.into_iter().filter(|p| pipelines.contains(p)) {
        match id {
            PipelineId::P1 => {
                let (net, log) = train_p1(corpus, plan)?;
                engines.transcriber = Some(FrameTranscriber { net });
                logs.push((id, log));
            }
            PipelineId::P2 => {
                let (net, log) = train_p2(corpus, plan)?;
                engines.classifier = Some(net);
                logs.push((id, log));
            }
            PipelineId::P3 => {
                let (net, store, log) = train_p3(corpus, plan)?;
                engines.encoder = Some(net);
                engines.store = Some(store);
                logs.push((id, log));
            }
        }
    }
    Ok(Trained { engines, logs })
}

/// The same architectures with their initial weights, for baseline columns.
pub fn untrained_engines(corpus: &Corpus, plan: &TrainPlan, cfg: FeatureConfig) -> Result<Engines> {
    let c = channels(corpus);
    let mut e = Engines::empty(cfg)?;
    let mut p1 = new_transcriber(c, derive_seed(plan.seed, "p1/init"))?;
    let mut p2 = new_classifier(c, derive_seed(plan.seed, "p2/init"))?;
    let mut p3 = new_encoder(c, plan.embedding_dim, derive_seed(plan.seed, "p3/init"))?;
    for net in [&mut p1, &mut p2, &mut p3] {
        net.round_to_f32();
    }
    e.store = Some(build_store(&p3, corpus.train_originals())?);
    e.transcriber = Some(FrameTranscriber { net: p1 });
    e.classifier = Some(p2);
    e.encoder = Some(p3);
    Ok(e)
}

/// Original utterances of `split`, in manifest order.
pub fn eval_samples(ds: &Dataset, split: Split) -> Result<Vec<EvalSample>> {
    ds.split(split)
        .filter(|e| e.provenance.is_original())
        .map(|e| {
            Ok(EvalSample {
                id: e.id.clone(),
                waveform: ds.waveform(e)?,
                label: e.label.into(),
            })
        })
        .collect()
}

/// Renderings of a command outside the built-in six, spread over the
/// dataset's speakers.
pub fn custom_renderings(template: &Template, count: usize, speakers: usize, seed: u64, tag: &str) -> Vec<Waveform> {
    (0..count)
        .map(|i| {
            let speaker = SpeakerProfile::generate(i % speakers.max(1), seed);
            let s = derive_seed(seed, &format!("{}/{tag}/{i}", template.name.to_lowercase()));
            synth_template(template, &speaker, s).waveform
        })
        .collect()
}
