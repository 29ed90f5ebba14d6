use std::collections::BTreeMap;

use rand::Rng;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::label::CommandLabel;
use crate::seed;

/// Two train-split sample ids and whether they share a class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSample {
    pub a: String,
    pub b: String,
    pub similar: bool,
}

/// Draws `n` pairs from the train split, `round(n * positive_ratio)` of them
/// same-class. Classes are chosen uniformly, then members uniformly within
/// the class.
pub fn sample_pairs(d: &Dataset, n: usize, positive_ratio: f64, seed: u64) -> Result<Vec<PairSample>> {
    let mut by_class: BTreeMap<CommandLabel, usize> = BTreeMap::new();
    for e in &d.entries {
        by_class.entry(e.label).or_default();
    }
    let train: Vec<&super::Entry> = d.split(Split::Train).collect();
    for e in &train {
        *by_class.get_mut(&e.label).expect("class registered") += 1;
    }
    if let Some((label, _)) = by_class.iter().find(|(_, &n)| n < 2) {
        return Err(Error::TooFewSamples(label.name().to_string()));
    }
    let labels: Vec<CommandLabel> = train.iter().map(|e| e.label).collect();
    Ok(sample_index_pairs(&labels, n, positive_ratio, seed)?
        .into_iter()
        .map(|(a, b, similar)| PairSample {
            a: train[a].id.clone(),
            b: train[b].id.clone(),
            similar,
        })
        .collect())
}

/// Index form of `sample_pairs` over an arbitrary labelled list.
pub fn sample_index_pairs<L: Ord + Copy + std::fmt::Display>(
    labels: &[L],
    n: usize,
    positive_ratio: f64,
    seed: u64,
) -> Result<Vec<(usize, usize, bool)>> {
    if !(positive_ratio > 0.0 && positive_ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "positive ratio {positive_ratio} must lie in (0, 1)"
        )));
    }
    let mut by_class: BTreeMap<L, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    if let Some((label, _)) = by_class.iter().find(|(_, ids)| ids.len() < 2) {
        return Err(Error::TooFewSamples(label.to_string()));
    }
    let classes: Vec<&Vec<usize>> = by_class.values().collect();
    let n_pos = (n as f64 * positive_ratio).round() as usize;
    if n > n_pos && classes.len() < 2 {
        return Err(Error::InvalidArgument(
            "negative pairs need at least two classes".into(),
        ));
    }
    let mut rng = seed::rng_for(seed, "pairs");
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let similar = i < n_pos;
        let (a, b) = if similar {
            let ids = classes[rng.random_range(0..classes.len())];
            let a = rng.random_range(0..ids.len());
            let mut b = rng.random_range(0..ids.len() - 1);
            if b >= a {
                b += 1;
            }
            (ids[a], ids[b])
        } else {
            let ca = rng.random_range(0..classes.len());
            let mut cb = rng.random_range(0..classes.len() - 1);
            if cb >= ca {
                cb += 1;
            }
            let (xa, xb) = (classes[ca], classes[cb]);
            (xa[rng.random_range(0..xa.len())], xb[rng.random_range(0..xb.len())])
        };
        out.push((a, b, similar));
    }
    Ok(out)
}
