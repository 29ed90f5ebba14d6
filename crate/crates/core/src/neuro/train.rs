//! Mini-batch training loop and the objectives it optimizes.

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::audio::FeatureMatrix;
use crate::error::{Error, Result};
use crate::seed;

use super::loss::{contrastive_loss, xent_row};
use super::network::{Gradients, Network};
use super::optim::{Optimizer, OptimizerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Val,
}

impl Part {
    pub fn name(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Val => "val",
        }
    }
}

/// Loss and bookkeeping for one training unit (a sample or a pair).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UnitOutcome {
    pub loss: f64,
    pub hits: f64,
    pub counted: f64,
    /// `(similar, distance)` for pair objectives.
    pub pair: Option<(bool, f64)>,
}

pub trait Objective {
    fn len(&self, part: Part) -> usize;

    /// Evaluates unit `index` of `part`; when `grads` is given, adds the
    /// gradient of this unit's loss into it.
    fn evaluate(
        &self,
        net: &Network,
        part: Part,
        index: usize,
        grads: Option<&mut Gradients>,
    ) -> Result<UnitOutcome>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    /// Uniform distribution over all outputs (outlier exposure).
    Uniform,
    /// One class per output frame.
    Frames(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: FeatureMatrix,
    pub valid: usize,
    pub target: Target,
}

impl Example {
    pub fn new(features: FeatureMatrix, target: Target) -> Self {
        let valid = features.frames();
        Self {
            features,
            valid,
            target,
        }
    }
}

/// Softmax cross-entropy over pooled logits or per-frame logits.
#[derive(Debug, Clone, Copy)]
pub struct Supervised<'a> {
    pub train: &'a [Example],
    pub val: &'a [Example],
    /// Loss weight of `Target::Uniform` examples.
    pub uniform_weight: f64,
}

impl<'a> Supervised<'a> {
    pub fn new(train: &'a [Example], val: &'a [Example]) -> Self {
        Self {
            train,
            val,
            uniform_weight: 1.0,
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl Objective for Supervised<'_> {
    fn len(&self, part: Part) -> usize {
        match part {
            Part::Train => self.train.len(),
            Part::Val => self.val.len(),
        }
    }

    fn evaluate(
        &self,
        net: &Network,
        part: Part,
        index: usize,
        grads: Option<&mut Gradients>,
    ) -> Result<UnitOutcome> {
        let ex = match part {
            Part::Train => &self.train[index],
            Part::Val => &self.val[index],
        };
        let (out, trace) = net.forward_traced(&ex.features, ex.valid)?;
        let c = out.channels;
        let mut grad = vec![0.0; out.data.len()];
        let mut outcome = UnitOutcome::default();
        let one_hot = |y: usize| -> Result<Vec<f64>> {
            if y >= c {
                return Err(Error::LabelOutOfRange { index: y, classes: c });
            }
            let mut t = vec![0.0; c];
            t[y] = 1.0;
            Ok(t)
        };
        if !matches!(ex.target, Target::Frames(_)) && !out.pooled {
            return Err(Error::Shape {
                layer: "loss".into(),
                message: "class targets need pooled outputs".into(),
            });
        }
        match &ex.target {
            Target::Class(y) => {
                let (loss, g) = xent_row(&out.data, &one_hot(*y)?);
                outcome.loss = loss;
                outcome.hits = f64::from(u8::from(argmax(&out.data) == *y));
                outcome.counted = 1.0;
                grad = g;
            }
            Target::Uniform => {
                let t = vec![1.0 / c as f64; c];
                let (loss, g) = xent_row(&out.data, &t);
                outcome.loss = self.uniform_weight * loss;
                grad = g.into_iter().map(|v| self.uniform_weight * v).collect();
            }
            Target::Frames(labels) => {
                if labels.len() != out.frames {
                    return Err(Error::DimensionMismatch {
                        expected: out.frames,
                        actual: labels.len(),
                    });
                }
                let n = out.valid as f64;
                for (t, &y) in labels.iter().enumerate().take(out.valid) {
                    let row = out.row(t);
                    let (loss, g) = xent_row(row, &one_hot(y)?);
                    outcome.loss += loss / n;
                    outcome.hits += f64::from(u8::from(argmax(row) == y));
                    for (dst, v) in grad[t * c..(t + 1) * c].iter_mut().zip(g) {
                        *dst = v / n;
                    }
                }
                outcome.counted = n;
            }
        }
        if let Some(grads) = grads {
            net.backward(&trace, &grad, grads);
        }
        Ok(outcome)
    }
}

/// A pair of indices into `Pairs::inputs` and whether they share a class.
pub type PairIndex = (usize, usize, bool);

/// Contrastive loss over pairs of inputs encoded by the same network.
#[derive(Debug, Clone, Copy)]
pub struct Pairs<'a> {
    pub inputs: &'a [FeatureMatrix],
    pub train: &'a [PairIndex],
    pub val: &'a [PairIndex],
    pub margin: f64,
}

impl Objective for Pairs<'_> {
    fn len(&self, part: Part) -> usize {
        match part {
            Part::Train => self.train.len(),
            Part::Val => self.val.len(),
        }
    }

    fn evaluate(
        &self,
        net: &Network,
        part: Part,
        index: usize,
        grads: Option<&mut Gradients>,
    ) -> Result<UnitOutcome> {
        let (a, b, similar) = match part {
            Part::Train => self.train[index],
            Part::Val => self.val[index],
        };
        let fa = &self.inputs[a];
        let fb = &self.inputs[b];
        let (ea, ta) = net.forward_traced(fa, fa.frames())?;
        let (eb, tb) = net.forward_traced(fb, fb.frames())?;
        let c = contrastive_loss(&ea.data, &eb.data, similar, self.margin)?;
        if let Some(grads) = grads {
            net.backward(&ta, &c.grad_first, grads);
            net.backward(&tb, &c.grad_second, grads);
        }
        Ok(UnitOutcome {
            loss: c.loss,
            hits: 0.0,
            counted: 0.0,
            pair: Some((similar, c.distance)),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Contrastive margin; ignored by supervised objectives.
    pub margin: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            margin: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::InvalidArgument(format!("margin must be positive, got {}", self.margin)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub similar_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dissimilar_distance: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
            .collect()
    }

    pub fn last(&self, part: Part) -> Option<&EpochRecord> {
        self.records.iter().rev().find(|r| r.split == part.name())
    }

    pub fn first(&self, part: Part) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.split == part.name())
    }
}

#[derive(Default)]
struct Tally {
    loss: f64,
    units: f64,
    hits: f64,
    counted: f64,
    sim: (f64, f64),
    dis: (f64, f64),
}

impl Tally {
    fn add(&mut self, o: &UnitOutcome) {
        self.loss += o.loss;
        self.units += 1.0;
        self.hits += o.hits;
        self.counted += o.counted;
        match o.pair {
            Some((true, d)) => self.sim = (self.sim.0 + d, self.sim.1 + 1.0),
            Some((false, d)) => self.dis = (self.dis.0 + d, self.dis.1 + 1.0),
            None => {}
        }
    }

    fn record(&self, epoch: usize, part: Part) -> EpochRecord {
        let ratio = |(s, n): (f64, f64)| (n > 0.0).then(|| s / n);
        EpochRecord {
            epoch,
            split: part.name(),
            loss: if self.units > 0.0 { self.loss / self.units } else { 0.0 },
            accuracy: ratio((self.hits, self.counted)),
            similar_distance: ratio(self.sim),
            dissimilar_distance: ratio(self.dis),
        }
    }
}

/// Evaluates every unit of `part` without touching parameters.
pub fn evaluate<O: Objective>(net: &Network, objective: &O, part: Part, epoch: usize) -> Result<EpochRecord> {
    let mut tally = Tally::default();
    for i in 0..objective.len(part) {
        tally.add(&objective.evaluate(net, part, i, None)?);
    }
    Ok(tally.record(epoch, part))
}

/// Trains `net` on `objective`. Training units are shuffled per epoch from
/// the seed; per-unit gradients are summed in batch order, so a run is a
/// pure function of the network, the data and `cfg`.
pub fn train<O: Objective>(
    mut net: Network,
    objective: &O,
    cfg: &TrainConfig,
) -> Result<(Network, TrainLog)> {
    cfg.validate()?;
    let n = objective.len(Part::Train);
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, &net);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.epochs {
        let mut rng = seed::rng_for(cfg.seed, &format!("epoch/{epoch}"));
        order.shuffle(&mut rng);
        let mut tally = Tally::default();
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = Gradients::zeros_like(&net);
            let mut batch_loss = 0.0;
            for &i in chunk {
                let o = objective.evaluate(&net, Part::Train, i, Some(&mut grads))?;
                batch_loss += o.loss;
                tally.add(&o);
            }
            let finite = batch_loss.is_finite() && grads.flatten().iter().all(|g| g.is_finite());
            if !finite {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch + 1,
                });
            }
            grads.scale(1.0 / chunk.len() as f64);
            optimizer.step(&mut net, &grads);
        }
        let train_rec = tally.record(epoch, Part::Train);
        log::debug!("epoch {epoch}: train loss {:.4}", train_rec.loss);
        log.records.push(train_rec);
        if objective.len(Part::Val) > 0 {
            log.records.push(evaluate(&net, objective, Part::Val, epoch)?);
        }
    }
    Ok((net, log))
}
