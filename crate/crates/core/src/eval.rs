//! Classification reports, latency statistics and the cross-pipeline
//! comparison.
//!
//! Metric outputs are pure functions of the decisions and therefore
//! reproducible; timings are kept in separate records because they are not.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::audio::Waveform;
use crate::engines::Engines;
use crate::error::{Error, Result};
use crate::label::DecisionLabel;
use crate::pipelines::{PipelineDecision, PipelineId};

pub const DEFAULT_WARMUP: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub count: usize,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub unknown_fraction: f64,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Per-class and macro metrics. Classes are the labels seen in either
/// sequence; `UNKNOWN` gets a row when it appears in `gold` but never enters
/// the macro averages. Zero denominators give zero.
pub fn compute_report(gold: &[DecisionLabel], pred: &[DecisionLabel]) -> Result<ClassificationReport> {
    if gold.len() != pred.len() {
        return Err(Error::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    if gold.is_empty() {
        return Err(Error::InvalidArgument("cannot report on zero predictions".into()));
    }
    let classes: BTreeSet<&DecisionLabel> = gold
        .iter()
        .chain(pred.iter().filter(|p| !p.is_unknown()))
        .collect();
    let mut per_class = Vec::with_capacity(classes.len());
    let (mut sp, mut sr, mut sf, mut averaged) = (0.0, 0.0, 0.0, 0usize);
    for class in classes {
        let tp = gold.iter().zip(pred).filter(|(g, p)| *g == class && *p == class).count();
        let predicted = pred.iter().filter(|p| *p == class).count();
        let support = gold.iter().filter(|g| *g == class).count();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = f1_score(precision, recall);
        if !class.is_unknown() {
            sp += precision;
            sr += recall;
            sf += f1;
            averaged += 1;
        }
        per_class.push(ClassMetrics {
            label: class.name().to_string(),
            precision,
            recall,
            f1,
            support,
        });
    }
    let n = averaged.max(1) as f64;
    let correct = gold.iter().zip(pred).filter(|(g, p)| g == p).count();
    Ok(ClassificationReport {
        count: gold.len(),
        accuracy: ratio(correct, gold.len()),
        macro_precision: sp / n,
        macro_recall: sr / n,
        macro_f1: sf / n,
        unknown_fraction: ratio(pred.iter().filter(|p| p.is_unknown()).count(), pred.len()),
        per_class,
    })
}

impl ClassificationReport {
    pub fn to_jsonl(&self, pipeline: &str) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            record: &'static str,
            pipeline: &'a str,
            count: usize,
            accuracy: f64,
            macro_precision: f64,
            macro_recall: f64,
            macro_f1: f64,
            unknown_fraction: f64,
        }
        #[derive(Serialize)]
        struct Class<'a> {
            record: &'static str,
            pipeline: &'a str,
            #[serde(flatten)]
            metrics: &'a ClassMetrics,
        }
        let mut out = serde_json::to_string(&Summary {
            record: "summary",
            pipeline,
            count: self.count,
            accuracy: self.accuracy,
            macro_precision: self.macro_precision,
            macro_recall: self.macro_recall,
            macro_f1: self.macro_f1,
            unknown_fraction: self.unknown_fraction,
        })
        .expect("serializable")
            + "\n";
        for c in &self.per_class {
            out += &serde_json::to_string(&Class {
                record: "class",
                pipeline,
                metrics: c,
            })
            .expect("serializable");
            out.push('\n');
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<12} {:>9} {:>9} {:>9} {:>8}\n", "class", "precision", "recall", "f1", "support");
        for c in &self.per_class {
            let _ = writeln!(
                out,
                "{:<12} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                c.label, c.precision, c.recall, c.f1, c.support
            );
        }
        let _ = writeln!(
            out,
            "{:<12} {:>9.4} {:>9.4} {:>9.4} {:>8}",
            "macro", self.macro_precision, self.macro_recall, self.macro_f1, self.count
        );
        let _ = writeln!(out, "accuracy {:.4}  unknown {:.4}", self.accuracy, self.unknown_fraction);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub p50: f64,
    pub p95: f64,
}

/// Linear interpolation between closest ranks of an ascending slice.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl LatencyStats {
    /// Statistics of durations in seconds; the standard deviation is the
    /// population one.
    pub fn from_secs(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("no latency samples".into()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mean = sorted.iter().sum::<f64>() / n;
        let var = sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(Self {
            count: sorted.len(),
            mean,
            std: var.sqrt(),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            p50: percentile(&sorted, 0.5),
            p95: percentile(&sorted, 0.95),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyReport {
    pub total: LatencyStats,
    /// Same order as the pipeline's stages.
    pub stages: Vec<(String, LatencyStats)>,
    /// Wall time of each timed call, in sample order.
    #[serde(skip)]
    pub durations: Vec<f64>,
}

/// Times `runner` once per sample after `warmup` discarded calls (cycling
/// through the samples). Returns the timing report and the timed decisions.
pub fn measure_latency<F>(mut runner: F, samples: &[Waveform], warmup: usize) -> Result<(LatencyReport, Vec<PipelineDecision>)>
where
    F: FnMut(&Waveform) -> Result<PipelineDecision>,
{
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to time".into()));
    }
    for i in 0..warmup {
        runner(&samples[i % samples.len()])?;
    }
    let mut durations = Vec::with_capacity(samples.len());
    let mut decisions = Vec::with_capacity(samples.len());
    for w in samples {
        let start = Instant::now();
        let d = runner(w)?;
        durations.push(start.elapsed().as_secs_f64());
        decisions.push(d);
    }
    let total = LatencyStats::from_secs(&durations)?;
    let mut stages = Vec::new();
    if let Some(first) = decisions.first() {
        for stage in &first.stages {
            let secs: Vec<f64> = decisions
                .iter()
                .filter_map(|d| d.stage(stage.name))
                .map(|e| e.as_secs_f64())
                .collect();
            stages.push((stage.name.to_string(), LatencyStats::from_secs(&secs)?));
        }
    }
    Ok((
        LatencyReport {
            total,
            stages,
            durations,
        },
        decisions,
    ))
}

/// A labelled evaluation utterance.
#[derive(Debug, Clone)]
pub struct EvalSample {
    pub id: String,
    pub waveform: Arc<Waveform>,
    pub label: DecisionLabel,
}

/// CRC-32 over the sorted sample ids, as hex; equal hashes mean the same
/// evaluation set.
pub fn split_hash(samples: &[EvalSample]) -> String {
    let mut ids: Vec<&str> = samples.iter().map(|s| s.id.as_str()).collect();
    ids.sort_unstable();
    format!("{:08x}", crc32fast::hash(ids.join("\n").as_bytes()))
}

#[derive(Debug, Clone)]
pub struct PipelineEvaluation {
    pub pipeline: PipelineId,
    pub report: ClassificationReport,
    pub latency: LatencyReport,
    pub decisions: Vec<PipelineDecision>,
}

pub fn evaluate_pipeline(
    engines: &Engines,
    id: PipelineId,
    samples: &[EvalSample],
    warmup: usize,
) -> Result<PipelineEvaluation> {
    let waves: Vec<Waveform> = samples.iter().map(|s| (*s.waveform).clone()).collect();
    let (latency, decisions) = measure_latency(|w| engines.run(id, w), &waves, warmup)?;
    let gold: Vec<DecisionLabel> = samples.iter().map(|s| s.label.clone()).collect();
    let pred: Vec<DecisionLabel> = decisions.iter().map(|d| d.label.clone()).collect();
    Ok(PipelineEvaluation {
        pipeline: id,
        report: compute_report(&gold, &pred)?,
        latency,
        decisions,
    })
}

/// Predictions only, without timing.
pub fn accuracy_of(engines: &Engines, id: PipelineId, samples: &[EvalSample]) -> Result<f64> {
    let mut correct = 0;
    for s in samples {
        if engines.run(id, &s.waveform)?.label == s.label {
            correct += 1;
        }
    }
    Ok(ratio(correct, samples.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub pipeline: PipelineId,
    pub description: &'static str,
    pub available: bool,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub unknown_fraction: Option<f64>,
    /// Same architecture with freshly initialised weights.
    pub untrained_accuracy: Option<f64>,
    #[serde(skip)]
    pub latency: Option<LatencyStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparativeSummary {
    pub split_hash: String,
    pub samples: usize,
    pub rows: Vec<SummaryRow>,
}

/// Evaluates every pipeline on the same samples. Pipelines whose models are
/// missing get a row marked unavailable.
pub fn compare_pipelines(
    engines: &Engines,
    untrained: Option<&Engines>,
    samples: &[EvalSample],
    warmup: usize,
) -> Result<ComparativeSummary> {
    let mut rows = Vec::new();
    for id in PipelineId::ALL {
        let mut row = SummaryRow {
            pipeline: id,
            description: id.description(),
            available: engines.available(id),
            accuracy: None,
            macro_f1: None,
            unknown_fraction: None,
            untrained_accuracy: None,
            latency: None,
        };
        if row.available {
            let ev = evaluate_pipeline(engines, id, samples, warmup)?;
            row.accuracy = Some(ev.report.accuracy);
            row.macro_f1 = Some(ev.report.macro_f1);
            row.unknown_fraction = Some(ev.report.unknown_fraction);
            row.latency = Some(ev.latency.total);
        }
        if let Some(u) = untrained.filter(|u| u.available(id)) {
            row.untrained_accuracy = Some(accuracy_of(u, id, samples)?);
        }
        rows.push(row);
    }
    Ok(ComparativeSummary {
        split_hash: split_hash(samples),
        samples: samples.len(),
        rows,
    })
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.digits$}"))
}

impl ComparativeSummary {
    /// One record per pipeline; timing-free, so reproducible.
    pub fn metrics_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            split_hash: &'a str,
            samples: usize,
            #[serde(flatten)]
            row: &'a SummaryRow,
        }
        self.rows
            .iter()
            .map(|row| {
                serde_json::to_string(&Line {
                    split_hash: &self.split_hash,
                    samples: self.samples,
                    row,
                })
                .expect("serializable")
                    + "\n"
            })
            .collect()
    }

    pub fn metrics_table(&self) -> String {
        let mut out = format!(
            "test set {} ({} samples)\n{:<4} {:<24} {:>9} {:>9} {:>9} {:>10}\n",
            self.split_hash, self.samples, "id", "pipeline", "accuracy", "macro_f1", "unknown", "untrained"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<4} {:<24} {:>9} {:>9} {:>9} {:>10}",
                r.pipeline.name(),
                r.description,
                if r.available { opt(r.accuracy, 4) } else { "unavail".into() },
                opt(r.macro_f1, 4),
                opt(r.unknown_fraction, 4),
                opt(r.untrained_accuracy, 4),
            );
        }
        out
    }

    pub fn timing_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            pipeline: PipelineId,
            #[serde(flatten)]
            stats: &'a LatencyStats,
        }
        self.rows
            .iter()
            .filter_map(|r| r.latency.as_ref().map(|stats| (r.pipeline, stats)))
            .map(|(pipeline, stats)| serde_json::to_string(&Line { pipeline, stats }).expect("serializable") + "\n")
            .collect()
    }

    pub fn timing_table(&self) -> String {
        let mut out = format!("{:<4} {:>10} {:>10} {:>10} {:>10}\n", "id", "mean_ms", "p50_ms", "p95_ms", "std_ms");
        for r in &self.rows {
            if let Some(l) = &r.latency {
                let _ = writeln!(
                    out,
                    "{:<4} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
                    r.pipeline.name(),
                    l.mean * 1e3,
                    l.p50 * 1e3,
                    l.p95 * 1e3,
                    l.std * 1e3
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::CommandLabel::*;
    use std::time::Duration;

    fn l(v: &[crate::label::CommandLabel]) -> Vec<DecisionLabel> {
        v.iter().map(|&c| c.into()).collect()
    }

    #[test]
    fn hand_computed_example() {
        let r = compute_report(&l(&[Up, Up, Down, Down]), &l(&[Up, Down, Down, Down])).unwrap();
        assert_eq!(r.accuracy, 0.75);
        let up = &r.per_class[0];
        assert_eq!((up.label.as_str(), up.precision, up.recall), ("UP", 1.0, 0.5));
        assert!((up.f1 - 2.0 / 3.0).abs() < 1e-12);
        let down = &r.per_class[1];
        assert!((down.precision - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(down.recall, 1.0);
        assert!((down.f1 - 0.8).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_all_unknown() {
        let g = l(&[Up, Left, Right]);
        let r = compute_report(&g, &g).unwrap();
        assert_eq!((r.accuracy, r.macro_f1, r.unknown_fraction), (1.0, 1.0, 0.0));
        let r = compute_report(&g, &l(&[Unknown, Unknown, Unknown])).unwrap();
        assert_eq!((r.accuracy, r.unknown_fraction), (0.0, 1.0));
        assert_eq!(r.per_class.iter().map(|c| c.support).sum::<usize>(), 3);
    }

    #[test]
    fn report_errors() {
        assert!(matches!(
            compute_report(&l(&[Up]), &l(&[])),
            Err(Error::LengthMismatch { gold: 1, pred: 0 })
        ));
        assert!(compute_report(&[], &[]).is_err());
    }

    #[test]
    fn percentiles_interpolate() {
        let s = LatencyStats::from_secs(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.min, s.max, s.mean), (1.0, 4.0, 2.5));
        assert_eq!(s.p50, 2.5);
        assert!((s.p95 - 3.85).abs() < 1e-12);
        let one = LatencyStats::from_secs(&[0.2]).unwrap();
        assert_eq!([one.mean, one.min, one.max, one.p50, one.p95], [0.2; 5]);
        assert_eq!(one.std, 0.0);
    }

    #[test]
    fn stats_are_permutation_invariant() {
        let a = [0.3, 0.1, 0.7, 0.2, 0.9];
        let mut b = a;
        b.reverse();
        assert_eq!(LatencyStats::from_secs(&a).unwrap(), LatencyStats::from_secs(&b).unwrap());
    }

    #[test]
    fn constant_stub_runner() {
        let samples = vec![Waveform::silence(10, 16000); 5];
        let mut calls = 0;
        let (rep, decisions) = measure_latency(
            |_| {
                calls += 1;
                std::thread::sleep(Duration::from_millis(3));
                Ok(PipelineDecision {
                    pipeline: PipelineId::P2,
                    label: DecisionLabel::UNKNOWN,
                    confidence: 0.0,
                    stages: vec![],
                    transcript: None,
                })
            },
            &samples,
            DEFAULT_WARMUP,
        )
        .unwrap();
        assert_eq!(calls, 8);
        assert_eq!(decisions.len(), 5);
        assert!((rep.total.mean - 0.003).abs() < 0.002, "{:?}", rep.total);
        assert!(rep.total.std < 0.002);
        assert!(rep.total.min <= rep.total.p50 && rep.total.p50 <= rep.total.p95 && rep.total.p95 <= rep.total.max);
    }
}
