//! Direct audio-to-command classification with a softmax threshold for
//! rejecting unknown input.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::audio::{FeatureMatrix, Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::label::{CommandLabel, DecisionLabel};
use crate::neuro::{softmax, LayerSpec, Network};
use crate::seed;

use super::{backbone, PipelineDecision, PipelineId, Preprocessor, Stopwatch};

pub const DEFAULT_THRESHOLD: f64 = 0.6;

/// Backbone with stride 2 throughout, pooled, then six logits.
pub fn classifier_specs() -> Vec<LayerSpec> {
    let mut specs = backbone([2, 2, 2]);
    specs.push(LayerSpec::GlobalAvgPool);
    specs.push(LayerSpec::Dense { outputs: CommandLabel::COMMANDS.len() });
    specs
}

pub fn new_classifier(input_channels: usize, seed: u64) -> Result<Network> {
    Network::new(input_channels, &classifier_specs(), seed)
}

/// Thresholds a probability vector over the six commands: the argmax label
/// when its probability reaches `tau`, otherwise `Unknown`. The confidence
/// is the top probability either way.
pub fn decide(probs: &[f64], tau: f64) -> (CommandLabel, f64) {
    let (best, p) = probs
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, p)| if p > acc.1 { (i, p) } else { acc });
    let label = if p >= tau {
        CommandLabel::COMMANDS[best]
    } else {
        CommandLabel::Unknown
    };
    (label, p.clamp(0.0, 1.0))
}

pub fn probabilities(f: &FeatureMatrix, net: &Network) -> Result<Vec<f64>> {
    let out = net.forward_sample(f, f.frames())?;
    if !out.pooled || out.channels != CommandLabel::COMMANDS.len() {
        return Err(Error::Shape {
            layer: "output".into(),
            message: format!("classifier must emit 6 pooled logits, got {}", out.channels),
        });
    }
    Ok(softmax(&out.data))
}

pub fn classify(f: &FeatureMatrix, net: &Network, tau: f64) -> Result<PipelineDecision> {
    check_tau(tau)?;
    let mut sw = Stopwatch::start();
    let probs = probabilities(f, net)?;
    let (label, confidence) = decide(&probs, tau);
    sw.lap("classify");
    Ok(PipelineDecision {
        pipeline: PipelineId::P2,
        label: label.into(),
        confidence,
        stages: sw.finish(),
        transcript: None,
    })
}

pub fn run_pipeline2(w: &Waveform, pre: &Preprocessor, net: &Network, tau: f64) -> Result<PipelineDecision> {
    check_tau(tau)?;
    let mut sw = Stopwatch::start();
    let f = pre.features(w)?;
    sw.lap("preprocess");
    let probs = probabilities(&f, net)?;
    let (label, confidence) = decide(&probs, tau);
    sw.lap("classify");
    Ok(PipelineDecision {
        pipeline: PipelineId::P2,
        label: DecisionLabel::Builtin(label),
        confidence,
        stages: sw.finish(),
        transcript: None,
    })
}

fn check_tau(tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("threshold {tau} outside [0, 1]")));
    }
    Ok(())
}

/// Non-command clips (silence, white and low-passed noise at assorted
/// levels) used as outlier-exposure examples with a uniform target.
pub fn outlier_waveforms(count: usize, seed_value: u64) -> Vec<Waveform> {
    let len = DEFAULT_SAMPLE_RATE as usize;
    (0..count)
        .map(|i| {
            let mut rng = seed::rng_for(seed_value, &format!("outlier/{i}"));
            if i % 4 == 0 {
                return Waveform::silence(len, DEFAULT_SAMPLE_RATE);
            }
            let level: f64 = 10f64.powf(rng.random_range(-3.0..-0.7));
            let smooth = if i % 2 == 0 { 0.0 } else { rng.random_range(0.5..0.95) };
            let mut prev = 0.0;
            let samples = (0..len)
                .map(|_| {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    prev = smooth * prev + (1.0 - smooth) * n;
                    (level * prev) as f32
                })
                .collect();
            Waveform::clamped(samples, DEFAULT_SAMPLE_RATE)
        })
        .collect()
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn threshold_extremes() {
        let probs = [0.1, 0.5, 0.1, 0.1, 0.1, 0.1];
        assert_eq!(decide(&probs, 0.0), (CommandLabel::Down, 0.5));
        assert_eq!(decide(&probs, 1.0).0, CommandLabel::Unknown);
        assert_eq!(decide(&probs, 0.5).0, CommandLabel::Down);
    }

    #[test]
    fn classify_checks_shapes_and_tau() {
        let net = new_classifier(40, 1).unwrap();
        let f = FeatureMatrix::new(vec![0.0; 98 * 40], 98, 40).unwrap();
        assert!(classify(&f, &net, 1.5).is_err());
        let d = classify(&f, &net, 0.0).unwrap();
        assert!(d.label.builtin().is_command());
        let wrong = FeatureMatrix::new(vec![0.0; 98 * 20], 98, 20).unwrap();
        assert!(classify(&wrong, &net, 0.0).is_err());
    }

    #[test]
    fn outliers_are_deterministic() {
        let a = outlier_waveforms(6, 3);
        assert_eq!(a, outlier_waveforms(6, 3));
        assert_eq!(a[0].rms(), 0.0);
        assert!(a[1].rms() > 0.0);
    }

    proptest! {
        #[test]
        fn shift_invariance_and_monotone_threshold(
            logits in proptest::collection::vec(-8.0f64..8.0, 6),
            shift in -50.0f64..50.0,
            lo in 0.0f64..1.0,
            hi in 0.0f64..1.0,
        ) {
            let p = softmax(&logits);
            let shifted: Vec<f64> = logits.iter().map(|z| z + shift).collect();
            let q = softmax(&shifted);
            let (a, ca) = decide(&p, lo);
            let (b, cb) = decide(&q, lo);
            prop_assert_eq!(a, b);
            prop_assert!((ca - cb).abs() < 1e-12);

            let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            if decide(&p, lo).0 == CommandLabel::Unknown {
                prop_assert_eq!(decide(&p, hi).0, CommandLabel::Unknown);
            }
            let argmax = logits.iter().enumerate().fold(0, |b, (i, z)| if *z > logits[b] { i } else { b });
            prop_assert_eq!(decide(&p, 0.0).0, CommandLabel::COMMANDS[argmax]);
        }
    }
}
