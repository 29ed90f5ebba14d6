//! A loaded set of pipeline models and the files they live in.
//!
//! A model directory holds `p1.vxp` (transcriber), `p2.vxp` (classifier),
//! `p3.vxp` (encoder), `p3.vxs` (embedding store) and optionally
//! `lexicon.txt`; any of them may be missing, which makes that pipeline
//! unavailable.

use std::path::Path;

use crate::audio::{FeatureConfig, Waveform};
use crate::error::{Error, Result};
use crate::neuro::{load_checkpoint, save_checkpoint, Network};
use crate::pipelines::direct::{run_pipeline2, DEFAULT_THRESHOLD};
use crate::pipelines::siamese::{run_pipeline3, KnnConfig, VectorStore};
use crate::pipelines::stt::{run_pipeline1, FrameTranscriber, Lexicon};
use crate::pipelines::{PipelineDecision, PipelineId, Preprocessor};

pub const TRANSCRIBER_FILE: &str = "p1.vxp";
pub const CLASSIFIER_FILE: &str = "p2.vxp";
pub const ENCODER_FILE: &str = "p3.vxp";
pub const STORE_FILE: &str = "p3.vxs";
pub const LEXICON_FILE: &str = "lexicon.txt";

#[derive(Debug)]
pub struct Engines {
    pub pre: Preprocessor,
    pub lexicon: Lexicon,
    pub transcriber: Option<FrameTranscriber>,
    pub classifier: Option<Network>,
    pub encoder: Option<Network>,
    pub store: Option<VectorStore>,
    pub threshold: f64,
    pub knn: KnnConfig,
}

impl Engines {
    pub fn empty(cfg: FeatureConfig) -> Result<Self> {
        Ok(Self {
            pre: Preprocessor::new(cfg)?,
            lexicon: Lexicon::builtin(),
            transcriber: None,
            classifier: None,
            encoder: None,
            store: None,
            threshold: DEFAULT_THRESHOLD,
            knn: KnnConfig::default(),
        })
    }

    pub fn load(dir: impl AsRef<Path>, cfg: FeatureConfig) -> Result<Self> {
        let dir = dir.as_ref();
        let mut e = Self::empty(cfg)?;
        let maybe = |name: &str| {
            let p = dir.join(name);
            p.exists().then_some(p)
        };
        if let Some(p) = maybe(LEXICON_FILE) {
            e.lexicon = Lexicon::from_file(p)?;
        }
        if let Some(p) = maybe(TRANSCRIBER_FILE) {
            e.transcriber = Some(FrameTranscriber {
                net: load_checkpoint(p)?,
            });
        }
        if let Some(p) = maybe(CLASSIFIER_FILE) {
            e.classifier = Some(load_checkpoint(p)?);
        }
        if let Some(p) = maybe(ENCODER_FILE) {
            e.encoder = Some(load_checkpoint(p)?);
        }
        if let Some(p) = maybe(STORE_FILE) {
            e.store = Some(VectorStore::load(p)?);
        }
        Ok(e)
    }

    /// Writes whichever models are present.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if let Some(t) = &self.transcriber {
            save_checkpoint(&t.net, dir.join(TRANSCRIBER_FILE))?;
        }
        if let Some(n) = &self.classifier {
            save_checkpoint(n, dir.join(CLASSIFIER_FILE))?;
        }
        if let Some(n) = &self.encoder {
            save_checkpoint(n, dir.join(ENCODER_FILE))?;
        }
        if let Some(s) = &self.store {
            s.save(dir.join(STORE_FILE))?;
        }
        Ok(())
    }

    pub fn available(&self, id: PipelineId) -> bool {
        match id {
            PipelineId::P1 => self.transcriber.is_some(),
            PipelineId::P2 => self.classifier.is_some(),
            PipelineId::P3 => self.encoder.is_some() && self.store.as_ref().is_some_and(|s| !s.is_empty()),
        }
    }

    pub fn run(&self, id: PipelineId, w: &Waveform) -> Result<PipelineDecision> {
        self.run_with_store(id, w, self.store.as_ref())
    }

    /// As `run`, with Pipeline 3 matching against `store` instead of the
    /// engine's own.
    pub fn run_with_store(
        &self,
        id: PipelineId,
        w: &Waveform,
        store: Option<&VectorStore>,
    ) -> Result<PipelineDecision> {
        let unavailable = || Error::Unavailable(id.name().to_string());
        match id {
            PipelineId::P1 => {
                let t = self.transcriber.as_ref().ok_or_else(unavailable)?;
                run_pipeline1(w, &self.pre, t, &self.lexicon)
            }
            PipelineId::P2 => {
                let net = self.classifier.as_ref().ok_or_else(unavailable)?;
                run_pipeline2(w, &self.pre, net, self.threshold)
            }
            PipelineId::P3 => {
                let enc = self.encoder.as_ref().ok_or_else(unavailable)?;
                let store = store.ok_or_else(unavailable)?;
                run_pipeline3(w, &self.pre, enc, store, &self.knn)
            }
        }
    }
}
