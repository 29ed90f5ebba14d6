//! Synthetic command renderings.
//!
//! Each command is a template of tone segments (frequency ratio over a base
//! pitch, duration, harmonic profile). A speaker profile scales pitch and
//! tempo and shapes the envelope; a per-rendering seed jitters pitch,
//! durations, onset and level. Renderings are clean; background noise is
//! the augmentor's job.

use std::f64::consts::TAU;
use std::ops::Range;

use rand::Rng;

use crate::audio::{Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::label::CommandLabel;
use crate::seed;

const BASE_HZ: f64 = 180.0;
const FRAME_SAMPLES: usize = DEFAULT_SAMPLE_RATE as usize;

/// Harmonic amplitude profiles, loosely vowel-like.
const TIMBRE_A: [f64; 5] = [1.0, 0.8, 0.6, 0.3, 0.15];
const TIMBRE_O: [f64; 5] = [1.0, 0.5, 0.2, 0.1, 0.05];
const TIMBRE_E: [f64; 5] = [0.6, 1.0, 0.4, 0.5, 0.2];
const TIMBRE_I: [f64; 5] = [0.4, 0.3, 1.0, 0.6, 0.4];
const TIMBRE_U: [f64; 5] = [1.0, 0.2, 0.05, 0.02, 0.01];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    /// Frequency relative to the speaker's base pitch.
    pub ratio: f64,
    pub duration_secs: f64,
    pub harmonics: [f64; 5],
}

const fn seg(ratio: f64, duration_secs: f64, harmonics: [f64; 5]) -> Segment {
    Segment {
        ratio,
        duration_secs,
        harmonics,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub name: String,
    pub segments: Vec<Segment>,
}

impl Template {
    pub fn for_label(label: CommandLabel) -> Result<Self> {
        let segments = match label {
            CommandLabel::Up => vec![seg(1.0, 0.22, TIMBRE_A), seg(1.5, 0.26, TIMBRE_A)],
            CommandLabel::Down => vec![seg(1.5, 0.26, TIMBRE_O), seg(1.0, 0.22, TIMBRE_O)],
            CommandLabel::Forward => vec![
                seg(1.25, 0.14, TIMBRE_E),
                seg(2.0, 0.14, TIMBRE_E),
                seg(1.25, 0.22, TIMBRE_I),
            ],
            CommandLabel::Backward => vec![
                seg(2.0, 0.16, TIMBRE_O),
                seg(1.2, 0.16, TIMBRE_A),
                seg(2.0, 0.2, TIMBRE_U),
            ],
            CommandLabel::Right => vec![seg(2.4, 0.3, TIMBRE_I), seg(2.2, 0.2, TIMBRE_I)],
            CommandLabel::Left => vec![seg(0.85, 0.34, TIMBRE_U), seg(1.05, 0.2, TIMBRE_U)],
            CommandLabel::Unknown => return Err(Error::CannotSynthesizeUnknown),
        };
        Ok(Template {
            name: label.name().to_string(),
            segments,
        })
    }

    /// A command outside the built-in six, used to exercise enrollment.
    pub fn hover() -> Self {
        Template {
            name: "HOVER".into(),
            segments: vec![
                seg(1.7, 0.12, TIMBRE_E),
                seg(0.95, 0.14, TIMBRE_I),
                seg(1.7, 0.12, TIMBRE_E),
                seg(0.95, 0.16, TIMBRE_I),
            ],
        }
    }

    pub fn duration_secs(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_secs).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerProfile {
    pub id: String,
    /// Multiplies every frequency; 0.8..=1.25.
    pub pitch_scale: f64,
    /// Tempo factor; durations are divided by it. 0.9..=1.1.
    pub speed: f64,
    /// Onset/offset ramp of each segment in seconds.
    pub attack_secs: f64,
    /// Per-harmonic spectral tilt exponent.
    pub brightness: f64,
}

impl SpeakerProfile {
    pub fn generate(index: usize, base_seed: u64) -> Self {
        let id = format!("s{:02}", index + 1);
        let mut rng = seed::rng_for(base_seed, &format!("speaker/{id}"));
        Self {
            pitch_scale: rng.random_range(0.8..=1.25),
            speed: rng.random_range(0.9..=1.1),
            attack_secs: rng.random_range(0.01..=0.03),
            brightness: rng.random_range(-0.3..=0.3),
            id,
        }
    }
}

/// A rendered utterance and the sample range holding voiced content.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendering {
    pub waveform: Waveform,
    pub voiced: Range<usize>,
}

pub fn synth_command(label: CommandLabel, speaker: &SpeakerProfile, seed: u64) -> Result<Waveform> {
    Ok(synth_template(&Template::for_label(label)?, speaker, seed).waveform)
}

/// Renders `template` into a one-second frame at 16 kHz.
pub fn synth_template(template: &Template, speaker: &SpeakerProfile, seed: u64) -> Rendering {
    let sr = DEFAULT_SAMPLE_RATE as f64;
    let mut rng = seed::rng(seed);
    let pitch = speaker.pitch_scale * rng.random_range(0.98..=1.02);
    let amplitude: f64 = rng.random_range(0.35..=0.8);
    let vibrato_hz: f64 = rng.random_range(4.0..=6.5);
    let vibrato_depth: f64 = rng.random_range(0.004..=0.012);

    let durations: Vec<usize> = template
        .segments
        .iter()
        .map(|s| {
            let secs = s.duration_secs / speaker.speed * rng.random_range(0.95..=1.05);
            (secs * sr).round() as usize
        })
        .collect();
    let voiced_len: usize = durations.iter().sum::<usize>().min(FRAME_SAMPLES - 1600);
    let centered = (FRAME_SAMPLES - voiced_len) / 2;
    let jitter = (0.02 * sr) as i64;
    let onset = (centered as i64 + rng.random_range(-jitter..=jitter))
        .clamp(800, (FRAME_SAMPLES - voiced_len - 800) as i64) as usize;

    let mut out = vec![0.0f64; FRAME_SAMPLES];
    let ramp = (speaker.attack_secs * sr).max(1.0);
    let mut phase = [0.0f64; 5];
    let mut cursor = onset;
    for (segment, &len) in template.segments.iter().zip(&durations) {
        let len = len.min(onset + voiced_len - cursor);
        let f0 = BASE_HZ * pitch * segment.ratio;
        let weights: Vec<f64> = segment
            .harmonics
            .iter()
            .enumerate()
            .map(|(h, w)| w * ((h + 1) as f64).powf(speaker.brightness))
            .collect();
        let norm: f64 = weights.iter().sum();
        for i in 0..len {
            let t = (cursor + i) as f64 / sr;
            let f = f0 * (1.0 + vibrato_depth * (TAU * vibrato_hz * t).sin());
            let env = (i as f64 / ramp).min((len - i) as f64 / ramp).min(1.0);
            let mut v = 0.0;
            for (h, w) in weights.iter().enumerate() {
                let fh = f * (h + 1) as f64;
                phase[h] = (phase[h] + TAU * fh / sr) % TAU;
                if fh < sr / 2.0 {
                    v += w * phase[h].sin();
                }
            }
            out[cursor + i] = amplitude * env * v / norm;
        }
        cursor += len;
    }
    let samples = out.into_iter().map(|s| s as f32).collect();
    Rendering {
        waveform: Waveform::clamped(samples, DEFAULT_SAMPLE_RATE),
        voiced: onset..onset + voiced_len,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{extract_features, FeatureConfig};

    fn distance(a: &Waveform, b: &Waveform) -> f64 {
        let cfg = FeatureConfig::default();
        let fa = extract_features(a, &cfg).unwrap();
        let fb = extract_features(b, &cfg).unwrap();
        fa.values()
            .iter()
            .zip(fb.values())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn deterministic_and_bounded() {
        let s1 = SpeakerProfile::generate(0, 42);
        let a = synth_command(CommandLabel::Up, &s1, 7).unwrap();
        let b = synth_command(CommandLabel::Up, &s1, 7).unwrap();
        assert_eq!(a, b);
        for label in CommandLabel::COMMANDS {
            let w = synth_command(label, &s1, 11).unwrap();
            assert_eq!(w.len(), 16000);
            assert!(w.samples().iter().all(|s| s.abs() <= 1.0));
        }
    }

    #[test]
    fn unknown_cannot_be_synthesized() {
        let s1 = SpeakerProfile::generate(0, 42);
        let err = synth_command(CommandLabel::Unknown, &s1, 7).unwrap_err();
        assert_eq!(err.to_string(), "cannot synthesize unknown");
    }

    #[test]
    fn class_distance_exceeds_rendering_distance() {
        let s1 = SpeakerProfile::generate(0, 42);
        let up7 = synth_command(CommandLabel::Up, &s1, 7).unwrap();
        let up8 = synth_command(CommandLabel::Up, &s1, 8).unwrap();
        let down7 = synth_command(CommandLabel::Down, &s1, 7).unwrap();
        let inter = distance(&up7, &down7);
        let intra = distance(&up7, &up8);
        assert!(inter > intra, "inter {inter} <= intra {intra}");
    }

    #[test]
    fn voiced_content_length_in_range() {
        for i in 0..8 {
            let sp = SpeakerProfile::generate(i, 42);
            assert!((0.8..=1.25).contains(&sp.pitch_scale));
            assert!((0.9..=1.1).contains(&sp.speed));
            for label in CommandLabel::COMMANDS {
                let r = synth_template(&Template::for_label(label).unwrap(), &sp, i as u64);
                let secs = r.voiced.len() as f64 / 16000.0;
                assert!((0.4..=0.8).contains(&secs), "{label}: {secs}");
            }
        }
    }
}
