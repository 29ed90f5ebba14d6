//! Transcribe-then-interpret: a frame-level word-token model decoded
//! greedily into words, then a lexicon matcher that turns the words into a
//! JSON direction object.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::audio::{pad_waveform, FeatureConfig, FeatureMatrix, Waveform};
use crate::error::{Error, Result};
use crate::label::{CommandLabel, DecisionLabel};
use crate::neuro::{softmax, Layer, LayerSpec, Network, Tensor};

use super::{backbone, PipelineDecision, PipelineId, Preprocessor, Stopwatch};

/// Word tokens, in command-index order. Token `FILLER` is silence/other.
pub const WORDS: [&str; 6] = ["up", "down", "forward", "backward", "right", "left"];
pub const FILLER: usize = WORDS.len();
pub const TOKENS: usize = WORDS.len() + 1;

/// Same widths and kernels as the classifier backbone without subsampling,
/// so there is one token posterior per input frame.
pub fn transcriber_specs() -> Vec<LayerSpec> {
    let mut specs = backbone([1, 1, 1]);
    specs.push(LayerSpec::Dense { outputs: TOKENS });
    specs
}

pub fn new_transcriber(input_channels: usize, seed: u64) -> Result<Network> {
    Network::new(input_channels, &transcriber_specs(), seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub words: Vec<String>,
    /// `[frames, TOKENS]` softmax outputs, when produced by a frame model.
    pub frame_posteriors: Option<Tensor>,
    /// Mean top posterior over frames that emitted a word; over all frames
    /// when none did.
    pub confidence: f64,
}

impl Transcript {
    pub fn from_text(text: &str) -> Self {
        Self {
            words: tokenize(text),
            frame_posteriors: None,
            confidence: 1.0,
        }
    }

    pub fn text(&self) -> String {
        self.words.join(" ")
    }
}

/// Collapses runs of the per-frame argmax, then drops filler.
pub fn greedy_decode(posteriors: &Tensor) -> (Vec<usize>, f64) {
    let frames = posteriors.rows();
    let mut tokens = Vec::new();
    let mut prev = None;
    let (mut emitted, mut emitted_n, mut all) = (0.0, 0usize, 0.0);
    for t in 0..frames {
        let row = posteriors.row(t);
        let (best, p) = row
            .iter()
            .copied()
            .enumerate()
            .fold((FILLER, f64::NEG_INFINITY), |acc, (i, p)| if p > acc.1 { (i, p) } else { acc });
        all += p;
        if best != FILLER {
            emitted += p;
            emitted_n += 1;
            if prev != Some(best) {
                tokens.push(best);
            }
        }
        prev = Some(best);
    }
    let confidence = if emitted_n > 0 {
        emitted / emitted_n as f64
    } else if frames > 0 {
        all / frames as f64
    } else {
        0.0
    };
    (tokens, confidence)
}

/// Anything that turns features into a word sequence; the frame model is
/// one implementation.
pub trait SpeechToText: Send + Sync {
    fn transcribe(&self, f: &FeatureMatrix) -> Result<Transcript>;
}

#[derive(Debug, Clone)]
pub struct FrameTranscriber {
    pub net: Network,
}

impl SpeechToText for FrameTranscriber {
    fn transcribe(&self, f: &FeatureMatrix) -> Result<Transcript> {
        transcribe(f, &self.net)
    }
}

pub fn transcribe(f: &FeatureMatrix, net: &Network) -> Result<Transcript> {
    let out = net.forward_sample(f, f.frames())?;
    if out.pooled || out.channels != TOKENS {
        return Err(Error::Shape {
            layer: "output".into(),
            message: format!("transcriber must emit {TOKENS} tokens per frame, got {}", out.channels),
        });
    }
    let mut data = Vec::with_capacity(out.data.len());
    for t in 0..out.frames {
        data.extend(softmax(out.row(t)));
    }
    let posteriors = Tensor::new(vec![out.frames, TOKENS], data)?;
    let (tokens, confidence) = greedy_decode(&posteriors);
    Ok(Transcript {
        words: tokens.into_iter().map(|t| WORDS[t].to_string()).collect(),
        frame_posteriors: Some(posteriors),
        confidence,
    })
}

/// How one output frame of a convolution stack maps onto input frames:
/// output `t` is centred on input frame `t * stride + center`.
pub fn output_geometry(net: &Network) -> (usize, usize) {
    let (mut stride, mut span) = (1, 1);
    for layer in &net.layers {
        match layer {
            Layer::Conv1d(c) => {
                span += (c.kernel - 1) * stride;
                stride *= c.stride;
            }
            Layer::MaxPool { size } => {
                span += (size - 1) * stride;
                stride *= size;
            }
            _ => {}
        }
    }
    (stride, (span - 1) / 2)
}

/// Energy voice-activity decision per analysis frame of the padded
/// waveform: a frame is voiced when its RMS exceeds 5% of the loudest.
pub fn voiced_frames(w: &Waveform, cfg: &FeatureConfig) -> Vec<bool> {
    let w = pad_waveform(w, cfg.target_len);
    let frames = cfg.frames_for(w.len());
    let rms: Vec<f64> = (0..frames)
        .map(|j| {
            let s = &w.samples()[j * cfg.frame_hop..j * cfg.frame_hop + cfg.frame_len];
            (s.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>() / s.len() as f64).sqrt()
        })
        .collect();
    let peak = rms.iter().copied().fold(0.0, f64::max);
    rms.iter().map(|&r| peak > 1e-4 && r > 0.05 * peak).collect()
}

/// Per-output-frame token targets: the word token where the frame centre
/// lands on voiced input, filler elsewhere.
pub fn frame_targets(voiced: &[bool], word: usize, net: &Network) -> Result<Vec<usize>> {
    let (out_frames, _) = net.output_frames(voiced.len(), voiced.len())?;
    let (stride, center) = output_geometry(net);
    Ok((0..out_frames)
        .map(|t| {
            let j = (t * stride + center).min(voiced.len() - 1);
            if voiced[j] {
                word
            } else {
                FILLER
            }
        })
        .collect())
}

/// Output of the interpreter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectionResponse {
    pub direction: CommandLabel,
    pub raw: String,
}

/// `{"direction": "<LABEL>"}`, byte for byte.
pub fn direction_json(label: &str) -> String {
    format!("{{\"direction\": {}}}", serde_json::Value::String(label.to_string()))
}

impl DirectionResponse {
    pub fn new(direction: CommandLabel) -> Self {
        Self {
            direction,
            raw: direction_json(direction.name()),
        }
    }

    /// Parses a single-key direction object.
    pub fn parse(raw: &str) -> Result<Self> {
        let v: serde_json::Value =
            serde_json::from_str(raw).map_err(|e| Error::format("direction", e.to_string()))?;
        let obj = v
            .as_object()
            .filter(|o| o.len() == 1)
            .ok_or_else(|| Error::format("direction", "expected an object with one key"))?;
        let label = obj
            .get("direction")
            .and_then(|d| d.as_str())
            .ok_or_else(|| Error::format("direction", "missing string `direction`"))?;
        Ok(Self::new(label.parse()?))
    }
}

pub trait Interpreter: Send + Sync {
    fn interpret(&self, transcript: &Transcript) -> DirectionResponse;
}

/// Lower-cased words with surrounding punctuation stripped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Surface phrases mapped to commands.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Lexicon {
    entries: BTreeMap<Vec<String>, CommandLabel>,
    longest: usize,
}

const DEFAULT_LEXICON: &str = "\
up -> UP
ascend -> UP
rise -> UP
climb -> UP
higher -> UP
go up -> UP
cima -> UP
subir -> UP
down -> DOWN
descend -> DOWN
lower -> DOWN
drop -> DOWN
sink -> DOWN
go down -> DOWN
baixo -> DOWN
descer -> DOWN
forward -> FORWARD
forwards -> FORWARD
ahead -> FORWARD
advance -> FORWARD
onward -> FORWARD
go forward -> FORWARD
frente -> FORWARD
backward -> BACKWARD
backwards -> BACKWARD
back -> BACKWARD
reverse -> BACKWARD
retreat -> BACKWARD
go back -> BACKWARD
tras -> BACKWARD
trás -> BACKWARD
right -> RIGHT
rightward -> RIGHT
starboard -> RIGHT
turn right -> RIGHT
go right -> RIGHT
direita -> RIGHT
left -> LEFT
leftward -> LEFT
port -> LEFT
turn left -> LEFT
go left -> LEFT
esquerda -> LEFT
";

impl Lexicon {
    /// Parses `phrase -> LABEL` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lex = Lexicon::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (phrase, label) = line.split_once("->").ok_or_else(|| Error::Config {
                line: n + 1,
                message: "expected `phrase -> LABEL`".into(),
            })?;
            let label: CommandLabel = label.trim().parse().map_err(|_| Error::Config {
                line: n + 1,
                message: format!("unknown label `{}`", label.trim()),
            })?;
            lex.insert(phrase, label).map_err(|e| Error::Config {
                line: n + 1,
                message: e.to_string(),
            })?;
        }
        Ok(lex)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn insert(&mut self, phrase: &str, label: CommandLabel) -> Result<()> {
        if !label.is_command() {
            return Err(Error::InvalidArgument("phrases cannot map to UNKNOWN".into()));
        }
        let words = tokenize(phrase);
        if words.is_empty() {
            return Err(Error::InvalidArgument("empty phrase".into()));
        }
        match self.entries.get(&words) {
            Some(&existing) if existing != label => Err(Error::InvalidArgument(format!(
                "`{}` maps to both {existing} and {label}",
                words.join(" ")
            ))),
            _ => {
                self.longest = self.longest.max(words.len());
                self.entries.insert(words, label);
                Ok(())
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn synonyms(&self, label: CommandLabel) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, &l)| l == label)
            .map(|(w, _)| w.join(" "))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (words, label) in &self.entries {
            let _ = writeln!(out, "{} -> {label}", words.join(" "));
        }
        out
    }

    /// Scans left to right; at each position the longest phrase that matches
    /// wins, and the first position with any match decides.
    pub fn find(&self, words: &[String]) -> Option<CommandLabel> {
        for start in 0..words.len() {
            let max = self.longest.min(words.len() - start);
            for len in (1..=max).rev() {
                if let Some(&label) = self.entries.get(&words[start..start + len]) {
                    return Some(label);
                }
            }
        }
        None
    }
}

impl Lexicon {
    /// English synonyms plus a few Portuguese forms, several per command.
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_LEXICON).expect("built-in lexicon parses")
    }
}

impl Interpreter for Lexicon {
    fn interpret(&self, transcript: &Transcript) -> DirectionResponse {
        interpret(transcript, self)
    }
}

pub fn interpret(t: &Transcript, lex: &Lexicon) -> DirectionResponse {
    DirectionResponse::new(lex.find(&t.words).unwrap_or(CommandLabel::Unknown))
}

pub fn interpret_text(text: &str, lex: &Lexicon) -> DirectionResponse {
    interpret(&Transcript::from_text(text), lex)
}

pub fn run_pipeline1<S, I>(w: &Waveform, pre: &Preprocessor, stt: &S, interp: &I) -> Result<PipelineDecision>
where
    S: SpeechToText + ?Sized,
    I: Interpreter + ?Sized,
{
    let mut sw = Stopwatch::start();
    let f = pre.features(w)?;
    sw.lap("preprocess");
    let transcript = stt.transcribe(&f)?;
    sw.lap("transcribe");
    let response = interp.interpret(&transcript);
    sw.lap("interpret");
    Ok(PipelineDecision {
        pipeline: PipelineId::P1,
        label: DecisionLabel::Builtin(response.direction),
        confidence: transcript.confidence.clamp(0.0, 1.0),
        stages: sw.finish(),
        transcript: Some(transcript.text()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex() -> Lexicon {
        Lexicon::builtin()
    }

    #[test]
    fn interpret_examples() {
        assert_eq!(interpret_text("up", &lex()).raw, r#"{"direction": "UP"}"#);
        assert_eq!(interpret_text("please go left now", &lex()).direction, CommandLabel::Left);
        assert_eq!(interpret_text("banana", &lex()).raw, r#"{"direction": "UNKNOWN"}"#);
        assert_eq!(interpret_text("", &lex()).direction, CommandLabel::Unknown);
    }

    #[test]
    fn first_match_wins() {
        assert_eq!(interpret_text("left then right", &lex()).direction, CommandLabel::Left);
        assert_eq!(interpret_text("Go Back, up!", &lex()).direction, CommandLabel::Backward);
    }

    #[test]
    fn longest_phrase_at_a_position() {
        let mut l = Lexicon::default();
        l.insert("turn", CommandLabel::Right).unwrap();
        l.insert("turn around", CommandLabel::Backward).unwrap();
        assert_eq!(interpret_text("turn around", &l).direction, CommandLabel::Backward);
        assert_eq!(interpret_text("turn", &l).direction, CommandLabel::Right);
    }

    #[test]
    fn every_command_has_three_synonyms() {
        let l = lex();
        for c in CommandLabel::COMMANDS {
            assert!(l.synonyms(c).len() >= 3, "{c}");
        }
    }

    #[test]
    fn lexicon_text_round_trip() {
        let l = lex();
        assert_eq!(Lexicon::parse(&l.to_text()).unwrap(), l);
        let err = Lexicon::parse("up -> UP\nup -> DOWN\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(Lexicon::parse("up UP").is_err());
        assert!(Lexicon::parse("up -> SIDEWAYS").is_err());
    }

    #[test]
    fn direction_round_trip() {
        for c in CommandLabel::ALL {
            let r = DirectionResponse::new(c);
            assert_eq!(DirectionResponse::parse(&r.raw).unwrap(), r);
        }
        assert!(DirectionResponse::parse(r#"{"direction": "UP", "x": 1}"#).is_err());
        assert!(DirectionResponse::parse(r#"{"direction": "SIDEWAYS"}"#).is_err());
    }

    #[test]
    fn greedy_collapse() {
        let rows = |toks: &[usize]| {
            let data: Vec<f64> = toks
                .iter()
                .flat_map(|&t| (0..TOKENS).map(move |i| if i == t { 0.9 } else { 0.1 / 6.0 }))
                .collect();
            Tensor::new(vec![toks.len(), TOKENS], data).unwrap()
        };
        let (t, c) = greedy_decode(&rows(&[FILLER, 0, 0, FILLER, 0, 3, 3]));
        assert_eq!(t, vec![0, 0, 3]);
        assert!((c - 0.9).abs() < 1e-12);
        let (t, c) = greedy_decode(&rows(&[FILLER; 5]));
        assert!(t.is_empty());
        assert!((c - 0.9).abs() < 1e-12);
    }

    #[test]
    fn geometry_of_transcriber() {
        let net = new_transcriber(40, 0).unwrap();
        assert_eq!(output_geometry(&net), (1, 6));
        assert_eq!(net.output_frames(98, 98).unwrap().0, 86);
    }

    #[test]
    fn silence_has_no_voiced_frames() {
        let cfg = FeatureConfig::default();
        let v = voiced_frames(&Waveform::silence(16000, 16000), &cfg);
        assert_eq!(v.len(), 98);
        assert!(v.iter().all(|&x| !x));
        let net = new_transcriber(40, 0).unwrap();
        assert!(frame_targets(&v, 2, &net).unwrap().iter().all(|&t| t == FILLER));
    }
}
