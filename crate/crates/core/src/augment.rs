//! Label-preserving augmentations and the five-fold dataset expansion.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::audio::{FeatureMatrix, Waveform};
use crate::dataset::{Dataset, Entry, Provenance};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskAxis {
    Time,
    Frequency,
}

/// One augmentation with its parameters. The textual form
/// (`noise:snr_db=20:seed=3`) is what the manifest records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugmentSpec {
    Noise { snr_db: f64, seed: u64 },
    TanhDistortion { drive: f64 },
    Mask { axis: MaskAxis, fraction: f64, seed: u64 },
    PitchShift { semitones: f64 },
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            AugmentSpec::Noise { snr_db, .. } => {
                snr_db == f64::INFINITY || (0.0..=60.0).contains(&snr_db)
            }
            AugmentSpec::TanhDistortion { drive } => drive > 0.0 && drive.is_finite(),
            AugmentSpec::Mask { fraction, .. } => fraction > 0.0 && fraction <= 0.5,
            AugmentSpec::PitchShift { semitones } => semitones.abs() <= 4.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("augmentation out of range: {self}")))
        }
    }

    /// Whether this transform acts on features rather than samples.
    pub fn is_feature_level(&self) -> bool {
        matches!(self, AugmentSpec::Mask { .. })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            AugmentSpec::Noise { .. } => "noise",
            AugmentSpec::TanhDistortion { .. } => "tanh",
            AugmentSpec::Mask { axis: MaskAxis::Time, .. } => "time_mask",
            AugmentSpec::Mask { axis: MaskAxis::Frequency, .. } => "freq_mask",
            AugmentSpec::PitchShift { .. } => "pitch_shift",
        }
    }

    pub fn apply_waveform(&self, w: &Waveform) -> Waveform {
        match *self {
            AugmentSpec::Noise { snr_db, seed } => add_noise(w, snr_db, seed),
            AugmentSpec::TanhDistortion { drive } => tanh_distort(w, drive),
            AugmentSpec::PitchShift { semitones } => pitch_shift(w, semitones),
            AugmentSpec::Mask { .. } => w.clone(),
        }
    }
}

impl fmt::Display for AugmentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            AugmentSpec::Noise { snr_db, seed } => write!(f, "noise:snr_db={snr_db}:seed={seed}"),
            AugmentSpec::TanhDistortion { drive } => write!(f, "tanh:drive={drive}"),
            AugmentSpec::Mask { fraction, seed, .. } => {
                write!(f, "{}:fraction={fraction}:seed={seed}", self.kind())
            }
            AugmentSpec::PitchShift { semitones } => write!(f, "pitch_shift:semitones={semitones}"),
        }
    }
}

impl FromStr for AugmentSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::format("augmentation", format!("`{s}`"));
        let mut parts = s.split(':');
        let kind = parts.next().ok_or_else(bad)?;
        let mut params = std::collections::BTreeMap::new();
        for p in parts {
            let (k, v) = p.split_once('=').ok_or_else(bad)?;
            params.insert(k, v);
        }
        let real = |k: &str| -> Result<f64> {
            params.get(k).ok_or_else(bad)?.parse().map_err(|_| bad())
        };
        let int = |k: &str| -> Result<u64> {
            params.get(k).ok_or_else(bad)?.parse().map_err(|_| bad())
        };
        let spec = match kind {
            "noise" => AugmentSpec::Noise {
                snr_db: real("snr_db")?,
                seed: int("seed")?,
            },
            "tanh" => AugmentSpec::TanhDistortion {
                drive: real("drive")?,
            },
            "time_mask" | "freq_mask" => AugmentSpec::Mask {
                axis: if kind == "time_mask" {
                    MaskAxis::Time
                } else {
                    MaskAxis::Frequency
                },
                fraction: real("fraction")?,
                seed: int("seed")?,
            },
            "pitch_shift" => AugmentSpec::PitchShift {
                semitones: real("semitones")?,
            },
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Adds white Gaussian noise at `snr_db` (RMS ratio), clipping to `[-1, 1]`.
/// A silent input gets noise of absolute RMS `10^(-snr_db/20)`;
/// `f64::INFINITY` leaves the input unchanged.
pub fn add_noise(w: &Waveform, snr_db: f64, seed: u64) -> Waveform {
    if snr_db == f64::INFINITY || w.is_empty() {
        return w.clone();
    }
    let signal_rms = w.rms();
    let reference = if signal_rms > 0.0 { signal_rms } else { 1.0 };
    let target = reference * 10f64.powf(-snr_db / 20.0);
    let mut rng = seed::rng(seed);
    let noise: Vec<f64> = (0..w.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let noise_rms = (noise.iter().map(|n| n * n).sum::<f64>() / noise.len() as f64).sqrt();
    let scale = if noise_rms > 0.0 { target / noise_rms } else { 0.0 };
    let samples = w
        .samples()
        .iter()
        .zip(&noise)
        .map(|(&s, &n)| (s as f64 + scale * n) as f32)
        .collect();
    Waveform::clamped(samples, w.sample_rate())
}

/// `s -> tanh(drive * s) / tanh(drive)`.
pub fn tanh_distort(w: &Waveform, drive: f64) -> Waveform {
    assert!(drive > 0.0, "drive must be positive");
    let norm = drive.tanh();
    let samples = w
        .samples()
        .iter()
        .map(|&s| ((drive * s as f64).tanh() / norm) as f32)
        .collect();
    Waveform::clamped(samples, w.sample_rate())
}

/// Sets one contiguous block of width `round(fraction * extent)` along `axis`
/// to the matrix minimum. The block start is uniform over valid positions.
pub fn mask(f: &FeatureMatrix, axis: MaskAxis, fraction: f64, seed: u64) -> FeatureMatrix {
    let extent = match axis {
        MaskAxis::Time => f.frames(),
        MaskAxis::Frequency => f.bands(),
    };
    let width = ((fraction * extent as f64).round() as usize).min(extent);
    if width == 0 {
        return f.clone();
    }
    let start = seed::rng(seed).random_range(0..=extent - width);
    let floor = f.min_value();
    let bands = f.bands();
    let mut out = f.clone();
    let values = out.values_mut();
    match axis {
        MaskAxis::Time => {
            for v in &mut values[start * bands..(start + width) * bands] {
                *v = floor;
            }
        }
        MaskAxis::Frequency => {
            for row in values.chunks_mut(bands) {
                for v in &mut row[start..start + width] {
                    *v = floor;
                }
            }
        }
    }
    out
}

/// Resamples by `2^(semitones/12)` with linear interpolation, then zero-pads
/// or truncates back to the input length.
pub fn pitch_shift(w: &Waveform, semitones: f64) -> Waveform {
    let ratio = 2f64.powf(semitones / 12.0);
    let src = w.samples();
    let n = src.len();
    let samples = (0..n)
        .map(|i| {
            let pos = i as f64 * ratio;
            let j = pos.floor() as usize;
            if j + 1 < n {
                let frac = pos - j as f64;
                (src[j] as f64 * (1.0 - frac) + src[j + 1] as f64 * frac) as f32
            } else if j + 1 == n && pos == j as f64 {
                src[j]
            } else {
                0.0
            }
        })
        .collect();
    Waveform::clamped(samples, w.sample_rate())
}

/// Applies feature-level transforms; waveform-level ones were already baked
/// into the stored audio and pass through.
pub fn apply_to_features(spec: &AugmentSpec, f: FeatureMatrix) -> FeatureMatrix {
    match *spec {
        AugmentSpec::Mask {
            axis,
            fraction,
            seed,
        } => mask(&f, axis, fraction, seed),
        _ => f,
    }
}

/// Ranges the expansion draws from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentRanges {
    pub snr_db: (f64, f64),
    pub drive: (f64, f64),
    pub mask_fraction: (f64, f64),
    pub semitones: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self {
            snr_db: (10.0, 30.0),
            drive: (1.0, 4.0),
            mask_fraction: (0.05, 0.2),
            semitones: 3.0,
        }
    }
}

/// The four variants drawn for one sample: noise, tanh distortion, a time or
/// frequency mask, and a pitch shift.
pub fn plan_for(sample_id: &str, seed: u64, ranges: &AugmentRanges) -> [AugmentSpec; 4] {
    let mut rng = seed::rng_for(seed, &format!("augment/{sample_id}"));
    let noise = AugmentSpec::Noise {
        snr_db: round3(rng.random_range(ranges.snr_db.0..=ranges.snr_db.1)),
        seed: rng.random(),
    };
    let tanh = AugmentSpec::TanhDistortion {
        drive: round3(rng.random_range(ranges.drive.0..=ranges.drive.1)),
    };
    let mask = AugmentSpec::Mask {
        axis: if rng.random_bool(0.5) {
            MaskAxis::Time
        } else {
            MaskAxis::Frequency
        },
        fraction: round3(rng.random_range(ranges.mask_fraction.0..=ranges.mask_fraction.1)),
        seed: rng.random(),
    };
    let mut semitones = rng.random_range(-ranges.semitones..=ranges.semitones);
    if semitones.abs() < 0.5 {
        semitones = 0.5f64.copysign(semitones);
    }
    let pitch = AugmentSpec::PitchShift {
        semitones: round3(semitones),
    };
    [noise, tanh, mask, pitch]
}

// Parameters are rounded so the manifest text is short and re-parses exactly.
fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

/// Each entry followed by its four augmented variants. Variants inherit the
/// source's label, speaker and split.
pub fn expand_dataset(d: &Dataset, seed: u64) -> Result<Dataset> {
    expand_dataset_with(d, seed, &AugmentRanges::default())
}

pub fn expand_dataset_with(d: &Dataset, seed: u64, ranges: &AugmentRanges) -> Result<Dataset> {
    let mut entries = Vec::with_capacity(d.len() * 5);
    for e in &d.entries {
        let source = d.waveform(e)?;
        entries.push(e.clone().with_audio(Arc::clone(&source)));
        for spec in plan_for(&e.id, seed, ranges) {
            let id = format!("{}~{}", e.id, spec.kind());
            let (relpath, audio) = if spec.is_feature_level() {
                (e.relpath.clone(), Arc::clone(&source))
            } else {
                (format!("audio/{id}.wav"), Arc::new(spec.apply_waveform(&source)))
            };
            entries.push(Entry::new(
                id,
                relpath,
                e.label,
                e.speaker.clone(),
                Provenance::Augmented(spec),
                e.split,
                Some(audio),
            ));
        }
    }
    Dataset::from_entries(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::build_dataset;

    fn sine(freq: f64, amp: f64, len: usize) -> Waveform {
        let samples = (0..len)
            .map(|i| (amp * (std::f64::consts::TAU * freq * i as f64 / 16000.0).sin()) as f32)
            .collect();
        Waveform::new(samples, 16000).unwrap()
    }

    #[test]
    fn infinite_snr_is_identity() {
        let w = sine(440.0, 0.5, 1600);
        assert_eq!(add_noise(&w, f64::INFINITY, 3), w);
    }

    #[test]
    fn noise_level_matches_snr() {
        // Amplitude 0.5 keeps the sum inside [-1, 1] so clipping does not bias the measurement.
        let w = sine(440.0, 0.5, 16000);
        let out = add_noise(&w, 20.0, 11);
        let diff_rms = (out
            .samples()
            .iter()
            .zip(w.samples())
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            / 16000.0)
            .sqrt();
        let expected = 0.1 * w.rms();
        assert!((diff_rms / expected - 1.0).abs() < 0.05, "{diff_rms} vs {expected}");
        assert_eq!(add_noise(&w, 20.0, 11), out);
    }

    #[test]
    fn silent_input_gets_absolute_noise() {
        let w = Waveform::silence(16000, 16000);
        let out = add_noise(&w, 40.0, 1);
        assert!((out.rms() - 0.01).abs() < 0.0005, "{}", out.rms());
    }

    #[test]
    fn tanh_closed_forms() {
        let w = Waveform::new(vec![0.0, 1.0, 0.5, -0.5, -1.0], 16000).unwrap();
        let out = tanh_distort(&w, 2.0);
        let s = out.samples();
        assert_eq!(s[0], 0.0);
        assert!((s[1] - 1.0).abs() < 1e-6);
        let closed = 1f64.tanh() / 2f64.tanh();
        assert!((s[2] as f64 - closed).abs() < 1e-6, "{}", s[2]);
        assert!((s[2] as f64 - 0.7901).abs() < 1e-4);
        assert!((s[3] + s[2]).abs() < 1e-7);
        assert!((s[4] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn mask_block_widths() {
        let f = FeatureMatrix::new((0..100 * 8).map(|v| v as f64).collect(), 100, 8).unwrap();
        let m = mask(&f, MaskAxis::Time, 0.1, 4);
        let masked: Vec<usize> = (0..100).filter(|&t| m.row(t) != f.row(t)).collect();
        assert!(masked.iter().all(|&t| m.row(t).iter().all(|&v| v == 0.0)));
        // Frame 0 already holds the minimum in band 0, so count rows set entirely to it.
        let floor_rows: Vec<usize> = (0..100)
            .filter(|&t| m.row(t).iter().all(|&v| v == 0.0))
            .collect();
        assert_eq!(floor_rows.len(), 10);
        assert_eq!(floor_rows[9] - floor_rows[0], 9);
        assert_eq!(mask(&f, MaskAxis::Time, 0.1, 4), m);

        assert_eq!(mask(&f, MaskAxis::Frequency, 0.05, 1), f);
        let fm = mask(&f, MaskAxis::Frequency, 0.25, 2);
        let cols: Vec<usize> = (0..8).filter(|&b| fm.get(50, b) == 0.0).collect();
        assert_eq!(cols.len(), 2);
    }

    #[test]
    fn pitch_shift_zero_is_identity() {
        let w = sine(440.0, 0.5, 16000);
        assert_eq!(pitch_shift(&w, 0.0), w);
        assert_eq!(pitch_shift(&w, 3.0).len(), 16000);
        assert_eq!(pitch_shift(&w, -3.0).len(), 16000);
    }

    #[test]
    fn spec_text_round_trip() {
        for spec in plan_for("up_s01_0001", 42, &AugmentRanges::default()) {
            let text = spec.to_string();
            assert_eq!(text.parse::<AugmentSpec>().unwrap(), spec, "{text}");
        }
        assert!("noise:snr_db=80:seed=1".parse::<AugmentSpec>().is_err());
        assert!("time_mask:fraction=0.7:seed=1".parse::<AugmentSpec>().is_err());
        assert!("pitch_shift:semitones=5".parse::<AugmentSpec>().is_err());
        assert!("tanh:drive=0".parse::<AugmentSpec>().is_err());
        assert!("wobble:x=1".parse::<AugmentSpec>().is_err());
    }

    #[test]
    fn expansion_is_fivefold_and_deterministic() {
        let d = build_dataset(4, 3, 1).unwrap();
        let x = expand_dataset(&d, 9).unwrap();
        assert_eq!(x.len(), 5 * d.len());
        for (label, n) in d.class_counts() {
            assert_eq!(x.class_counts()[&label], 5 * n);
        }
        assert_eq!(x.manifest_text(), expand_dataset(&d, 9).unwrap().manifest_text());
        for e in &x.entries {
            assert_eq!(e.inline_audio().unwrap().len(), 16000);
        }
    }

    #[test]
    fn empty_dataset_expands_to_empty() {
        let d = Dataset::default();
        assert!(expand_dataset(&d, 1).unwrap().is_empty());
    }
}
