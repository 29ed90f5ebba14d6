//! The three recognition pipelines and what they share: preprocessing,
//! stage timing and the decision record.
//!
//! * `stt`: frame-level word transcriber followed by a lexicon interpreter.
//! * `direct`: a classifier from features straight to a command.
//! * `siamese`: a contrastively trained encoder, an embedding store and
//!   nearest-neighbour voting.

pub mod direct;
pub mod siamese;
pub mod stt;

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::audio::{FeatureConfig, FeatureExtractor, FeatureMatrix, Waveform};
use crate::error::{Error, Result};
use crate::label::DecisionLabel;
use crate::neuro::LayerSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum PipelineId {
    P1,
    P2,
    P3,
}

impl PipelineId {
    pub const ALL: [PipelineId; 3] = [PipelineId::P1, PipelineId::P2, PipelineId::P3];

    pub fn name(self) -> &'static str {
        match self {
            PipelineId::P1 => "P1",
            PipelineId::P2 => "P2",
            PipelineId::P3 => "P3",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            PipelineId::P1 => "transcribe + interpret",
            PipelineId::P2 => "direct classifier",
            PipelineId::P3 => "siamese + knn",
        }
    }
}

impl fmt::Display for PipelineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PipelineId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "P1" | "1" => Ok(PipelineId::P1),
            "P2" | "2" => Ok(PipelineId::P2),
            "P3" | "3" => Ok(PipelineId::P3),
            _ => Err(Error::InvalidArgument(format!("unknown pipeline `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub name: &'static str,
    pub elapsed: Duration,
}

/// Lap timer over a monotonic clock. Every lap starts where the previous
/// one ended, so stage durations sum to the total.
#[derive(Debug)]
pub struct Stopwatch {
    last: Instant,
    stages: Vec<Stage>,
}

impl Stopwatch {
    pub fn start() -> Self {
        Self {
            last: Instant::now(),
            stages: Vec::with_capacity(3),
        }
    }

    pub fn lap(&mut self, name: &'static str) {
        let now = Instant::now();
        self.stages.push(Stage {
            name,
            elapsed: now - self.last,
        });
        self.last = now;
    }

    pub fn finish(self) -> Vec<Stage> {
        self.stages
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineDecision {
    pub pipeline: PipelineId,
    pub label: DecisionLabel,
    /// In `[0, 1]`.
    pub confidence: f64,
    pub stages: Vec<Stage>,
    /// Pipeline 1 only: the decoded word sequence.
    pub transcript: Option<String>,
}

impl PipelineDecision {
    pub fn total(&self) -> Duration {
        self.stages.iter().map(|s| s.elapsed).sum()
    }

    pub fn stage(&self, name: &str) -> Option<Duration> {
        self.stages.iter().find(|s| s.name == name).map(|s| s.elapsed)
    }

    /// `{"direction": "<LABEL>"}`
    pub fn direction_json(&self) -> String {
        stt::direction_json(self.label.name())
    }
}

struct StageMap<'a>(&'a [Stage]);

impl Serialize for StageMap<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for stage in self.0 {
            map.serialize_entry(stage.name, &stage.elapsed.as_secs_f64())?;
        }
        map.end()
    }
}

impl Serialize for PipelineDecision {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(None)?;
        map.serialize_entry("pipeline", &self.pipeline)?;
        map.serialize_entry("direction", self.label.name())?;
        map.serialize_entry("confidence", &self.confidence)?;
        map.serialize_entry("stage_latencies", &StageMap(&self.stages))?;
        map.serialize_entry("total_latency", &self.total().as_secs_f64())?;
        if let Some(t) = &self.transcript {
            map.serialize_entry("transcript", t)?;
        }
        map.end()
    }
}

/// Waveform to standardized features: resample to the model rate, pad or
/// trim to the target length, extract.
#[derive(Debug)]
pub struct Preprocessor {
    extractor: FeatureExtractor,
}

impl Preprocessor {
    pub fn new(cfg: FeatureConfig) -> Result<Self> {
        Ok(Self {
            extractor: FeatureExtractor::new(cfg)?,
        })
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.extractor
    }

    pub fn features(&self, w: &Waveform) -> Result<FeatureMatrix> {
        let rate = self.extractor.config().sample_rate;
        if w.sample_rate() != rate {
            return self.extractor.extract_standardized(&w.downsample_to(rate)?);
        }
        self.extractor.extract_standardized(w)
    }
}

/// Convolutional width shared by every pipeline's backbone.
pub const BACKBONE_CHANNELS: usize = 32;
pub const BACKBONE_KERNEL: usize = 5;

/// Three `conv1d(k=5) + relu` blocks with the given strides.
pub fn backbone(strides: [usize; 3]) -> Vec<LayerSpec> {
    strides
        .iter()
        .flat_map(|&stride| {
            [
                LayerSpec::Conv1d {
                    out_channels: BACKBONE_CHANNELS,
                    kernel: BACKBONE_KERNEL,
                    stride,
                },
                LayerSpec::Relu,
            ]
        })
        .collect()
}
