//! Waveforms, length standardization, log-mel feature extraction and batch
//! padding shared by all three pipelines.

use std::io::Cursor;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::label::CommandLabel;

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if let Some(pos) = samples
            .iter()
            .position(|s| !s.is_finite() || s.abs() > 1.0)
        {
            return Err(Error::InvalidArgument(format!(
                "sample {pos} = {} is outside [-1, 1]",
                samples[pos]
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Builds a waveform, clamping into `[-1, 1]` and zeroing non-finite values.
    pub fn clamped(samples: Vec<f32>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        let samples = samples
            .into_iter()
            .map(|s| if s.is_finite() { s.clamp(-1.0, 1.0) } else { 0.0 })
            .collect();
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self::clamped(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
        (sum / self.samples.len() as f64).sqrt()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Integer-factor decimation by block averaging. Rates that are not an
    /// integer multiple of `target` are rejected.
    pub fn downsample_to(&self, target: u32) -> Result<Waveform> {
        if target == 0 {
            return Err(Error::InvalidArgument("target rate must be positive".into()));
        }
        if self.sample_rate == target {
            return Ok(self.clone());
        }
        if self.sample_rate < target || !self.sample_rate.is_multiple_of(target) {
            return Err(Error::UnsupportedAudio(format!(
                "sample rate {} Hz is not an integer multiple of {target} Hz",
                self.sample_rate
            )));
        }
        let factor = (self.sample_rate / target) as usize;
        let samples = self
            .samples
            .chunks(factor)
            .map(|c| c.iter().sum::<f32>() / c.len() as f32)
            .collect();
        Ok(Waveform::clamped(samples, target))
    }

    pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_wav_bytes(&bytes).map_err(|e| match e {
            Error::UnsupportedAudio(m) => {
                Error::UnsupportedAudio(format!("{}: {m}", path.display()))
            }
            other => other,
        })
    }

    /// Decodes RIFF/WAVE PCM 16-bit mono.
    pub fn from_wav_bytes(bytes: &[u8]) -> Result<Waveform> {
        let reader = hound::WavReader::new(Cursor::new(bytes))
            .map_err(|e| Error::UnsupportedAudio(format!("not a RIFF/WAVE stream ({e})")))?;
        let spec = reader.spec();
        if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
            return Err(Error::UnsupportedAudio(format!(
                "expected 16-bit PCM, got {}-bit {:?}",
                spec.bits_per_sample, spec.sample_format
            )));
        }
        if spec.channels != 1 {
            return Err(Error::UnsupportedAudio(format!(
                "expected mono, got {} channels",
                spec.channels
            )));
        }
        let samples = reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::UnsupportedAudio(format!("truncated sample data ({e})")))?;
        Waveform::new(samples, spec.sample_rate)
    }

    pub fn to_wav_bytes(&self) -> Vec<u8> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut cursor = Cursor::new(Vec::with_capacity(44 + 2 * self.samples.len()));
        {
            let mut writer =
                hound::WavWriter::new(&mut cursor, spec).expect("in-memory wav header");
            for &s in &self.samples {
                let v = (s * 32767.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(v).expect("in-memory wav write");
            }
            writer.finalize().expect("in-memory wav finalize");
        }
        cursor.into_inner()
    }

    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_wav_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Zero-pads at the tail or truncates the tail so the result has exactly
/// `target_len` samples.
pub fn pad_waveform(w: &Waveform, target_len: usize) -> Waveform {
    assert!(target_len > 0, "target length must be positive");
    let mut samples = w.samples.clone();
    samples.resize(target_len, 0.0);
    Waveform {
        samples,
        sample_rate: w.sample_rate,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    /// Standardized waveform length in samples.
    pub target_len: usize,
    pub frame_len: usize,
    pub frame_hop: usize,
    pub fft_size: usize,
    pub bands: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Energy floor applied before the logarithm.
    pub log_floor: f64,
    /// Per-utterance mean/variance normalization of each band.
    pub normalize: bool,
    pub norm_eps: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: DEFAULT_SAMPLE_RATE,
            target_len: DEFAULT_SAMPLE_RATE as usize,
            frame_len: 400,
            frame_hop: 160,
            fft_size: 512,
            bands: 40,
            fmin: 20.0,
            fmax: 8000.0,
            log_floor: 1e-2,
            normalize: true,
            norm_eps: 1e-5,
        }
    }
}

impl FeatureConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            sample_rate: kv.get_or("audio.sample_rate", d.sample_rate)?,
            target_len: kv.get_or("audio.target_len", d.target_len)?,
            frame_len: kv.get_or("audio.frame_len", d.frame_len)?,
            frame_hop: kv.get_or("audio.frame_hop", d.frame_hop)?,
            fft_size: kv.get_or("audio.fft_size", d.fft_size)?,
            bands: kv.get_or("audio.bands", d.bands)?,
            fmin: kv.get_or("audio.fmin", d.fmin)?,
            fmax: kv.get_or("audio.fmax", d.fmax)?,
            log_floor: kv.get_or("audio.log_floor", d.log_floor)?,
            normalize: kv.get_or("audio.normalize", d.normalize)?,
            norm_eps: kv.get_or("audio.norm_eps", d.norm_eps)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("feature config: {m}")));
        if self.sample_rate == 0 || self.target_len == 0 {
            return bad("sample_rate and target_len must be positive");
        }
        if self.frame_len == 0 || self.frame_hop == 0 || self.bands == 0 {
            return bad("frame_len, frame_hop and bands must be positive");
        }
        if self.fft_size < self.frame_len {
            return bad("fft_size must be at least frame_len");
        }
        if !(0.0 <= self.fmin && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0)
        {
            return bad("need 0 <= fmin < fmax <= sample_rate / 2");
        }
        if self.log_floor <= 0.0 || self.norm_eps <= 0.0 {
            return bad("log_floor and norm_eps must be positive");
        }
        Ok(())
    }

    /// Frame count for a waveform of `len` samples (0 when shorter than a frame).
    pub fn frames_for(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            (len - self.frame_len) / self.frame_hop + 1
        }
    }

    pub fn log_floor_value(&self) -> f64 {
        self.log_floor.ln()
    }
}

/// Frames × bands matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Vec<f64>,
    frames: usize,
    bands: usize,
    pub frame_len: usize,
    pub frame_hop: usize,
}

impl FeatureMatrix {
    pub fn new(values: Vec<f64>, frames: usize, bands: usize) -> Result<Self> {
        if values.len() != frames * bands {
            return Err(Error::InvalidArgument(format!(
                "{} values for a {frames}x{bands} matrix",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite feature value".into()));
        }
        Ok(Self {
            values,
            frames,
            bands,
            frame_len: 0,
            frame_hop: 0,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.bands..(frame + 1) * self.bands]
    }

    pub fn get(&self, frame: usize, band: usize) -> f64 {
        self.values[frame * self.bands + band]
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

struct MelBand {
    first_bin: usize,
    weights: Vec<f64>,
    edges_hz: (f64, f64, f64),
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Log-mel filter-bank extractor: Hann window, power spectrum, triangular
/// mel bands, natural log with a floor, optional per-utterance normalization.
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    window: Vec<f64>,
    bands: Vec<MelBand>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FeatureExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeatureExtractor").field("cfg", &self.cfg).finish()
    }
}

impl FeatureExtractor {
    pub fn new(cfg: FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.frame_len;
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        let bands = build_mel_bands(&cfg);
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(Self {
            cfg,
            window,
            bands,
            fft,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    /// Nonzero filter weights of `band` as `(fft_bin, weight)` pairs.
    pub fn band_weights(&self, band: usize) -> Vec<(usize, f64)> {
        let b = &self.bands[band];
        b.weights
            .iter()
            .enumerate()
            .map(|(i, &w)| (b.first_bin + i, w))
            .filter(|&(_, w)| w > 0.0)
            .collect()
    }

    /// `(lower, center, upper)` edge frequencies of `band` in Hz.
    pub fn band_edges_hz(&self, band: usize) -> (f64, f64, f64) {
        self.bands[band].edges_hz
    }

    pub fn bin_hz(&self, bin: usize) -> f64 {
        bin as f64 * self.cfg.sample_rate as f64 / self.cfg.fft_size as f64
    }

    /// Pads/truncates to the configured target length, then extracts.
    pub fn extract_standardized(&self, w: &Waveform) -> Result<FeatureMatrix> {
        self.extract(&pad_waveform(w, self.cfg.target_len))
    }

    pub fn extract(&self, w: &Waveform) -> Result<FeatureMatrix> {
        let frames = self.cfg.frames_for(w.len());
        if w.is_empty() || frames == 0 {
            return Err(Error::InputTooShort {
                samples: w.len(),
                frame_len: self.cfg.frame_len,
            });
        }
        let nb = self.cfg.bands;
        let floor = self.cfg.log_floor;
        let mut values = Vec::with_capacity(frames * nb);
        let mut buf = vec![Complex::new(0.0, 0.0); self.cfg.fft_size];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; self.cfg.fft_size / 2 + 1];
        for f in 0..frames {
            let start = f * self.cfg.frame_hop;
            let frame = &w.samples()[start..start + self.cfg.frame_len];
            for (slot, (&s, &win)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                *slot = Complex::new(s as f64 * win, 0.0);
            }
            for slot in buf.iter_mut().skip(self.cfg.frame_len) {
                *slot = Complex::new(0.0, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for band in &self.bands {
                let energy: f64 = band
                    .weights
                    .iter()
                    .zip(&power[band.first_bin..])
                    .map(|(w, p)| w * p)
                    .sum();
                values.push(energy.max(floor).ln());
            }
        }
        if self.cfg.normalize {
            normalize_bands(&mut values, frames, nb, self.cfg.norm_eps);
        }
        Ok(FeatureMatrix {
            values,
            frames,
            bands: nb,
            frame_len: self.cfg.frame_len,
            frame_hop: self.cfg.frame_hop,
        })
    }
}

fn build_mel_bands(cfg: &FeatureConfig) -> Vec<MelBand> {
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax);
    let step = (hi - lo) / (cfg.bands + 1) as f64;
    let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
    let n_bins = cfg.fft_size / 2 + 1;
    (0..cfg.bands)
        .map(|b| {
            let l = mel_to_hz(lo + step * b as f64);
            let c = mel_to_hz(lo + step * (b + 1) as f64);
            let r = mel_to_hz(lo + step * (b + 2) as f64);
            let first_bin = (l / bin_hz).floor() as usize;
            let last_bin = ((r / bin_hz).ceil() as usize).min(n_bins - 1);
            let weights = (first_bin..=last_bin)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let up = (f - l) / (c - l);
                    let down = (r - f) / (r - c);
                    up.min(down).max(0.0)
                })
                .collect();
            MelBand {
                first_bin,
                weights,
                edges_hz: (l, c, r),
            }
        })
        .collect()
}

fn normalize_bands(values: &mut [f64], frames: usize, bands: usize, eps: f64) {
    for b in 0..bands {
        let mean = (0..frames).map(|f| values[f * bands + b]).sum::<f64>() / frames as f64;
        let var = (0..frames)
            .map(|f| (values[f * bands + b] - mean).powi(2))
            .sum::<f64>()
            / frames as f64;
        let scale = 1.0 / (var + eps).sqrt();
        for f in 0..frames {
            let v = &mut values[f * bands + b];
            *v = (*v - mean) * scale;
        }
    }
}

/// One-shot extraction with a fresh extractor.
pub fn extract_features(w: &Waveform, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    FeatureExtractor::new(cfg.clone())?.extract(w)
}

/// Feature matrices padded to a common frame count.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub items: Vec<FeatureMatrix>,
    pub labels: Vec<CommandLabel>,
    /// Frames that existed before padding, per item.
    pub lengths: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn frames(&self) -> usize {
        self.items.first().map_or(0, FeatureMatrix::frames)
    }

    pub fn mask(&self, item: usize) -> Vec<bool> {
        (0..self.frames()).map(|f| f < self.lengths[item]).collect()
    }

    pub fn with_labels(mut self, labels: Vec<CommandLabel>) -> Result<Self> {
        if labels.len() != self.items.len() {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {} items",
                labels.len(),
                self.items.len()
            )));
        }
        self.labels = labels;
        Ok(self)
    }
}

/// Zero-pads every item along the frame axis to the batch maximum.
pub fn pad_batch(items: Vec<FeatureMatrix>) -> Result<Batch> {
    let Some(first) = items.first() else {
        return Err(Error::EmptyBatch);
    };
    let bands = first.bands;
    if let Some(bad) = items.iter().find(|m| m.bands != bands) {
        return Err(Error::InvalidArgument(format!(
            "batch mixes {bands} and {} bands",
            bad.bands
        )));
    }
    let max_frames = items.iter().map(|m| m.frames).max().unwrap_or(0);
    let lengths = items.iter().map(|m| m.frames).collect();
    let items = items
        .into_iter()
        .map(|mut m| {
            m.values.resize(max_frames * bands, 0.0);
            m.frames = max_frames;
            m
        })
        .collect();
    Ok(Batch {
        items,
        labels: Vec::new(),
        lengths,
    })
}
