use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::record::{SeriesLabel, SignalRecord};
use super::synth::apportion;
use crate::error::{Error, Result};
use crate::rng;

/// Record ids per split, each in input order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitIds {
    pub fn get(&self, name: &str) -> Option<&[String]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Stratified random split into (train, val, test) by series label.
pub fn split_dataset(records: &[SignalRecord], ratios: [f64; 3], seed: u64) -> Result<[Vec<SignalRecord>; 3]> {
    let idx = split_indices(records, ratios, seed)?;
    Ok(idx.map(|part| part.into_iter().map(|i| records[i].clone()).collect()))
}

pub fn split_ids(records: &[SignalRecord], ratios: [f64; 3], seed: u64) -> Result<SplitIds> {
    let [a, b, c] = split_indices(records, ratios, seed)?;
    let ids = |v: Vec<usize>| v.into_iter().map(|i| records[i].record_id.clone()).collect();
    Ok(SplitIds {
        train: ids(a),
        val: ids(b),
        test: ids(c),
    })
}

fn split_indices(records: &[SignalRecord], ratios: [f64; 3], seed: u64) -> Result<[Vec<usize>; 3]> {
    if ratios.iter().any(|&r| r <= 0.0 || !r.is_finite()) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Stratification(format!(
            "ratios {ratios:?} must be positive and sum to 1"
        )));
    }
    let mut parts: [Vec<usize>; 3] = Default::default();
    for label in SeriesLabel::ALL {
        let mut members: Vec<usize> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.series_label == label)
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < ratios.len() {
            return Err(Error::Stratification(format!(
                "class {label} has {} records, fewer than {} splits",
                members.len(),
                ratios.len()
            )));
        }
        members.shuffle(&mut rng::stream(seed, &[label.index() as u64]));
        let counts = apportion(members.len(), &ratios);
        let mut it = members.into_iter();
        for (part, n) in parts.iter_mut().zip(counts) {
            part.extend(it.by_ref().take(n));
        }
    }
    parts.iter_mut().for_each(|p| p.sort_unstable());
    Ok(parts)
}
