//! Siamese encoder, flat embedding store and k-nearest-neighbour matching.
//!
//! New commands are added by encoding a few samples and inserting them into
//! the store; the encoder is never retrained.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::audio::{FeatureMatrix, Waveform};
use crate::error::{Error, Result};
use crate::label::DecisionLabel;
use crate::neuro::{LayerSpec, Network};

use super::{backbone, PipelineDecision, PipelineId, Preprocessor, Stopwatch};

pub const EMBEDDING_DIM: usize = 64;
pub const DEFAULT_K: usize = 5;
/// Fixed widths of the label and id fields of a stored record.
pub const LABEL_BYTES: usize = 32;
pub const ID_BYTES: usize = 64;

pub fn encoder_specs(dim: usize) -> Vec<LayerSpec> {
    let mut specs = backbone([2, 2, 2]);
    specs.push(LayerSpec::GlobalAvgPool);
    specs.push(LayerSpec::Dense { outputs: dim });
    specs
}

pub fn new_encoder(input_channels: usize, dim: usize, seed: u64) -> Result<Network> {
    Network::new(input_channels, &encoder_specs(dim), seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<f64>,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn distance(&self, other: &Embedding) -> f64 {
        squared_distance(&self.values, &other.values).sqrt()
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn encode(f: &FeatureMatrix, encoder: &Network) -> Result<Embedding> {
    let out = encoder.forward_sample(f, f.frames())?;
    if !out.pooled {
        return Err(Error::Shape {
            layer: "output".into(),
            message: "encoder must pool to a fixed-size vector".into(),
        });
    }
    Ok(Embedding { values: out.data })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub embedding: Embedding,
    pub label: DecisionLabel,
    pub id: String,
}

/// Exact flat-scan store under Euclidean distance.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    dim: usize,
    records: Vec<Record>,
    ids: BTreeSet<String>,
}

const MAGIC: &[u8; 4] = b"VXS1";
const WHAT: &str = "vector store";

impl VectorStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            records: Vec::new(),
            ids: BTreeSet::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn labels(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            *out.entry(r.label.name().to_string()).or_default() += 1;
        }
        out
    }

    pub fn insert(&mut self, record: Record) -> Result<()> {
        if record.embedding.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: record.embedding.dim(),
            });
        }
        if !record.embedding.values.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite embedding for `{}`", record.id)));
        }
        if record.label.name().is_empty() || record.label.name().len() > LABEL_BYTES {
            return Err(Error::InvalidArgument(format!(
                "label must be 1..={LABEL_BYTES} bytes, got `{}`",
                record.label.name()
            )));
        }
        if record.id.is_empty() || record.id.len() > ID_BYTES {
            return Err(Error::InvalidArgument(format!("id must be 1..={ID_BYTES} bytes")));
        }
        if !self.ids.insert(record.id.clone()) {
            return Err(Error::InvalidArgument(format!("duplicate record id `{}`", record.id)));
        }
        self.records.push(record);
        Ok(())
    }

    /// The `k` nearest records as `(index, distance)`, nearest first; equal
    /// distances are ordered by record id.
    pub fn nearest(&self, q: &Embedding, k: usize) -> Result<Vec<(usize, f64)>> {
        if self.records.is_empty() {
            return Err(Error::EmptyStore);
        }
        if q.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: q.dim(),
            });
        }
        let mut scored: Vec<(usize, f64)> = self
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| (i, squared_distance(&r.embedding.values, &q.values)))
            .collect();
        let by_rank = |a: &(usize, f64), b: &(usize, f64)| {
            a.1.total_cmp(&b.1)
                .then_with(|| self.records[a.0].id.cmp(&self.records[b.0].id))
        };
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, by_rank);
            scored.truncate(k);
        }
        scored.sort_by(by_rank);
        Ok(scored.into_iter().map(|(i, d2)| (i, d2.sqrt())).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.records.len() * (self.dim * 4 + LABEL_BYTES + ID_BYTES));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            for &v in &r.embedding.values {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
            put_fixed(&mut out, r.label.name(), LABEL_BYTES);
            put_fixed(&mut out, &r.id, ID_BYTES);
        }
        out.extend_from_slice(&crc32fast::hash(&out).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(Error::format(WHAT, "missing VXS1 header"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
            return Err(Error::format(WHAT, "checksum mismatch"));
        }
        let dim = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes")) as usize;
        let count = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes")) as usize;
        let width = dim * 4 + LABEL_BYTES + ID_BYTES;
        if body.len() - 12 != count.saturating_mul(width) {
            return Err(Error::format(WHAT, format!("{count} records of {width} bytes do not fit")));
        }
        let mut store = VectorStore::new(dim);
        for rec in body[12..].chunks_exact(width) {
            let values = rec[..dim * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            let label = get_fixed(&rec[dim * 4..dim * 4 + LABEL_BYTES])?;
            let id = get_fixed(&rec[dim * 4 + LABEL_BYTES..])?;
            store.insert(Record {
                embedding: Embedding { values },
                label: DecisionLabel::from_name(&label),
                id,
            })?;
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Rounds stored embeddings to `f32`, as persisted.
    pub fn round_to_f32(&mut self) {
        for r in &mut self.records {
            r.embedding.values.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }
}

fn put_fixed(out: &mut Vec<u8>, s: &str, width: usize) {
    let mut field = vec![0u8; width];
    field[..s.len()].copy_from_slice(s.as_bytes());
    out.extend_from_slice(&field);
}

fn get_fixed(field: &[u8]) -> Result<String> {
    let end = field.iter().position(|&b| b == 0).unwrap_or(field.len());
    String::from_utf8(field[..end].to_vec()).map_err(|_| Error::format(WHAT, "non-UTF-8 text field"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Vote {
    Majority,
    DistanceWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnConfig {
    pub k: usize,
    pub vote: Vote,
    /// Reject as `UNKNOWN` when the nearest record is farther than this.
    pub reject_distance: Option<f64>,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            vote: Vote::Majority,
            reject_distance: None,
        }
    }
}

impl KnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if let Some(rho) = self.reject_distance {
            if rho.is_nan() || rho <= 0.0 {
                return Err(Error::InvalidArgument(format!("reject distance must be positive, got {rho}")));
            }
        }
        Ok(())
    }
}

/// Label and confidence from the neighbours of `q`. Majority ties go to the
/// tied label whose member ranks nearest.
pub fn knn_vote(store: &VectorStore, q: &Embedding, cfg: &KnnConfig) -> Result<(DecisionLabel, f64)> {
    cfg.validate()?;
    let neighbours = store.nearest(q, cfg.k)?;
    if let Some(rho) = cfg.reject_distance {
        if neighbours[0].1 > rho {
            return Ok((DecisionLabel::UNKNOWN, 0.0));
        }
    }
    // (score, rank of first occurrence) per label
    let mut tally: Vec<(&DecisionLabel, f64, usize)> = Vec::new();
    let mut total = 0.0;
    for (rank, &(i, d)) in neighbours.iter().enumerate() {
        let w = match cfg.vote {
            Vote::Majority => 1.0,
            Vote::DistanceWeighted => 1.0 / (d + 1e-9),
        };
        total += w;
        let label = &store.records[i].label;
        match tally.iter_mut().find(|(l, _, _)| *l == label) {
            Some(entry) => entry.1 += w,
            None => tally.push((label, w, rank)),
        }
    }
    let (label, score, _) = tally
        .into_iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal).then(b.2.cmp(&a.2)))
        .expect("at least one neighbour");
    Ok((label.clone(), (score / total).clamp(0.0, 1.0)))
}

pub fn knn_match(store: &VectorStore, q: &Embedding, cfg: &KnnConfig) -> Result<PipelineDecision> {
    let mut sw = Stopwatch::start();
    let (label, confidence) = knn_vote(store, q, cfg)?;
    sw.lap("match");
    Ok(PipelineDecision {
        pipeline: PipelineId::P3,
        label,
        confidence,
        stages: sw.finish(),
        transcript: None,
    })
}

/// Encodes `samples` and inserts them under `name`. Returns the number of
/// records added; nothing is added when any sample fails.
pub fn enroll(
    store: &mut VectorStore,
    samples: &[Waveform],
    name: &str,
    encoder: &Network,
    pre: &Preprocessor,
) -> Result<usize> {
    let name = name.trim();
    if name.is_empty() {
        return Err(Error::InvalidArgument("command name must not be empty".into()));
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument("enrollment needs at least one sample".into()));
    }
    let label = DecisionLabel::from_name(name);
    if label.is_unknown() {
        return Err(Error::InvalidArgument("cannot enroll UNKNOWN".into()));
    }
    let existing = store.records.iter().filter(|r| r.label == label).count();
    let mut staged = Vec::with_capacity(samples.len());
    for (i, w) in samples.iter().enumerate() {
        let mut embedding = encode(&pre.features(w)?, encoder)?;
        embedding.values.iter_mut().for_each(|v| *v = *v as f32 as f64);
        staged.push(Record {
            embedding,
            label: label.clone(),
            id: format!("enroll/{}/{:04}", label.name().to_lowercase(), existing + i),
        });
    }
    let mut next = store.clone();
    for r in staged {
        next.insert(r)?;
    }
    *store = next;
    Ok(samples.len())
}

pub fn run_pipeline3(
    w: &Waveform,
    pre: &Preprocessor,
    encoder: &Network,
    store: &VectorStore,
    cfg: &KnnConfig,
) -> Result<PipelineDecision> {
    let mut sw = Stopwatch::start();
    let f = pre.features(w)?;
    sw.lap("preprocess");
    let q = encode(&f, encoder)?;
    sw.lap("encode");
    let (label, confidence) = knn_vote(store, &q, cfg)?;
    sw.lap("match");
    Ok(PipelineDecision {
        pipeline: PipelineId::P3,
        label,
        confidence,
        stages: sw.finish(),
        transcript: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::CommandLabel;
    use proptest::prelude::*;

    fn rec(values: Vec<f64>, label: &str, id: &str) -> Record {
        Record {
            embedding: Embedding { values },
            label: DecisionLabel::from_name(label),
            id: id.into(),
        }
    }

    #[test]
    fn singleton_store() {
        let mut s = VectorStore::new(2);
        s.insert(rec(vec![0.0, 0.0], "LEFT", "a")).unwrap();
        let cfg = KnnConfig { k: 1, ..KnnConfig::default() };
        let d = knn_match(&s, &Embedding { values: vec![9.0, -3.0] }, &cfg).unwrap();
        assert_eq!(d.label, CommandLabel::Left.into());
        assert_eq!(d.confidence, 1.0);
    }

    #[test]
    fn majority_of_three() {
        let mut s = VectorStore::new(1);
        s.insert(rec(vec![0.0], "A", "r1")).unwrap();
        s.insert(rec(vec![0.1], "A", "r2")).unwrap();
        s.insert(rec(vec![1.0], "B", "r3")).unwrap();
        let cfg = KnnConfig { k: 3, ..KnnConfig::default() };
        let (label, conf) = knn_vote(&s, &Embedding { values: vec![0.05] }, &cfg).unwrap();
        assert_eq!(label, DecisionLabel::Custom("A".into()));
        assert!((conf - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn majority_tie_goes_to_nearest() {
        let mut s = VectorStore::new(1);
        s.insert(rec(vec![0.0], "A", "r1")).unwrap();
        s.insert(rec(vec![0.3], "B", "r2")).unwrap();
        let cfg = KnnConfig { k: 2, ..KnnConfig::default() };
        assert_eq!(knn_vote(&s, &Embedding { values: vec![0.2] }, &cfg).unwrap().0.name(), "B");
    }

    #[test]
    fn distance_ties_broken_by_id() {
        let mut s = VectorStore::new(1);
        s.insert(rec(vec![1.0], "B", "z")).unwrap();
        s.insert(rec(vec![-1.0], "A", "m")).unwrap();
        let cfg = KnnConfig { k: 1, ..KnnConfig::default() };
        assert_eq!(knn_vote(&s, &Embedding { values: vec![0.0] }, &cfg).unwrap().0.name(), "A");
    }

    #[test]
    fn reject_distance() {
        let mut s = VectorStore::new(1);
        s.insert(rec(vec![0.0], "UP", "a")).unwrap();
        let cfg = KnnConfig { reject_distance: Some(0.001), ..KnnConfig::default() };
        let (l, _) = knn_vote(&s, &Embedding { values: vec![5.0] }, &cfg).unwrap();
        assert!(l.is_unknown());
        assert!(KnnConfig { reject_distance: Some(0.0), ..cfg }.validate().is_err());
        assert!(KnnConfig { k: 0, ..cfg }.validate().is_err());
    }

    #[test]
    fn weighted_vote_confidence() {
        let mut s = VectorStore::new(1);
        s.insert(rec(vec![1.0], "A", "a")).unwrap();
        s.insert(rec(vec![3.0], "B", "b")).unwrap();
        let cfg = KnnConfig { k: 2, vote: Vote::DistanceWeighted, reject_distance: None };
        let (l, c) = knn_vote(&s, &Embedding { values: vec![0.0] }, &cfg).unwrap();
        assert_eq!(l.name(), "A");
        assert!((c - 0.75).abs() < 1e-6);
    }

    #[test]
    fn errors() {
        let mut s = VectorStore::new(2);
        let q = Embedding { values: vec![0.0, 0.0] };
        assert!(matches!(s.nearest(&q, 1), Err(Error::EmptyStore)));
        assert!(s.insert(rec(vec![0.0], "UP", "a")).is_err());
        s.insert(rec(vec![0.0, 1.0], "UP", "a")).unwrap();
        assert!(s.insert(rec(vec![0.0, 1.0], "UP", "a")).is_err());
        assert!(s.insert(rec(vec![0.0, 1.0], &"X".repeat(33), "b")).is_err());
        assert!(matches!(
            s.nearest(&Embedding { values: vec![0.0] }, 1),
            Err(Error::DimensionMismatch { expected: 2, actual: 1 })
        ));
    }

    #[test]
    fn store_file_round_trip() {
        let mut s = VectorStore::new(3);
        s.insert(rec(vec![0.5, -1.25, 2.0], "UP", "up_s01_0001")).unwrap();
        s.insert(rec(vec![0.0, 0.0, 1.0], "HOVER", "enroll/hover/0000")).unwrap();
        let bytes = s.to_bytes();
        assert_eq!(&bytes[..4], b"VXS1");
        assert_eq!(bytes.len(), 12 + 2 * (12 + LABEL_BYTES + ID_BYTES) + 4);
        assert_eq!(VectorStore::from_bytes(&bytes).unwrap(), s);
        let mut bad = bytes.clone();
        bad[13] ^= 1;
        assert!(VectorStore::from_bytes(&bad).is_err());
        assert!(VectorStore::from_bytes(&bytes[..30]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn k1_equals_brute_force(
            points in proptest::collection::vec(proptest::collection::vec(-3i32..3, 2), 1..60),
            q in proptest::collection::vec(-3i32..3, 2),
        ) {
            let mut s = VectorStore::new(2);
            for (i, p) in points.iter().enumerate() {
                let v = p.iter().map(|&x| f64::from(x)).collect();
                s.insert(rec(v, ["UP", "DOWN", "LEFT"][i % 3], &format!("id{:03}", (i * 37) % 101))).ok();
            }
            let q = Embedding { values: q.iter().map(|&x| f64::from(x)).collect() };
            let cfg = KnnConfig { k: 1, ..KnnConfig::default() };
            let (label, _) = knn_vote(&s, &q, &cfg).unwrap();
            let best = s.records().iter()
                .min_by(|a, b| a.embedding.distance(&q).total_cmp(&b.embedding.distance(&q)).then(a.id.cmp(&b.id)))
                .unwrap();
            prop_assert_eq!(label, best.label.clone());
        }
    }
}
