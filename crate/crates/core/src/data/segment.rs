use serde::{Deserialize, Serialize};

use super::record::{SeriesLabel, SignalRecord};
use crate::error::{Error, Result};

/// Population std below which a slice is treated as constant.
pub const STD_GUARD: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceOrigin {
    pub record_id: String,
    pub start: usize,
}

/// Fixed-length slices stored row-major (`len() × slice_len`).
#[derive(Clone, Debug, PartialEq)]
pub struct SliceBatch {
    slice_len: usize,
    slices: Vec<f64>,
    mask: Vec<bool>,
    slice_labels: Vec<SeriesLabel>,
    point_labels: Vec<u8>,
    origins: Vec<SliceOrigin>,
}

/// Borrowed view of one slice.
#[derive(Clone, Copy, Debug)]
pub struct SliceView<'a> {
    pub samples: &'a [f64],
    pub mask: &'a [bool],
    pub label: SeriesLabel,
    pub point_labels: &'a [u8],
    pub origin: &'a SliceOrigin,
}

impl SliceView<'_> {
    /// Number of real samples (the mask is a true-prefix).
    pub fn valid_len(&self) -> usize {
        self.mask.iter().take_while(|&&m| m).count()
    }
}

impl SliceBatch {
    pub fn empty(slice_len: usize) -> Self {
        Self {
            slice_len,
            slices: Vec::new(),
            mask: Vec::new(),
            slice_labels: Vec::new(),
            point_labels: Vec::new(),
            origins: Vec::new(),
        }
    }

    pub fn slice_len(&self) -> usize {
        self.slice_len
    }

    pub fn len(&self) -> usize {
        self.slice_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slice_labels.is_empty()
    }

    pub fn get(&self, i: usize) -> SliceView<'_> {
        let r = i * self.slice_len..(i + 1) * self.slice_len;
        SliceView {
            samples: &self.slices[r.clone()],
            mask: &self.mask[r.clone()],
            label: self.slice_labels[i],
            point_labels: &self.point_labels[r],
            origin: &self.origins[i],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = SliceView<'_>> {
        (0..self.len()).map(|i| self.get(i))
    }

    pub fn append(&mut self, mut other: SliceBatch) -> Result<()> {
        if other.slice_len != self.slice_len {
            return Err(Error::dim("SliceBatch::append", &[self.slice_len], &[other.slice_len]));
        }
        self.slices.append(&mut other.slices);
        self.mask.append(&mut other.mask);
        self.slice_labels.append(&mut other.slice_labels);
        self.point_labels.append(&mut other.point_labels);
        self.origins.append(&mut other.origins);
        Ok(())
    }

    /// Z-scores every slice over its unmasked samples.
    pub fn normalize(&mut self) -> Result<()> {
        let l = self.slice_len;
        for (chunk, mask) in self.slices.chunks_mut(l).zip(self.mask.chunks(l)) {
            let out = normalize(chunk, mask)?;
            chunk.copy_from_slice(&out);
        }
        Ok(())
    }

    /// Concatenates the unmasked samples of every slice in order.
    pub fn reassemble(&self) -> Vec<f64> {
        self.slices
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .collect()
    }
}

/// Z-score over unmasked samples; masked positions become 0. Constant
/// slices (std below [`STD_GUARD`]) map to all zeros.
pub fn normalize(slice: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if slice.len() != mask.len() {
        return Err(Error::dim("normalize", &[slice.len()], &[mask.len()]));
    }
    let live: Vec<f64> = slice.iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
    if live.is_empty() {
        return Err(Error::DegenerateInput("slice is fully masked".into()));
    }
    let n = live.len() as f64;
    let mean = live.iter().sum::<f64>() / n;
    let std = (live.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(slice
        .iter()
        .zip(mask)
        .map(|(&v, &m)| if !m || std < STD_GUARD { 0.0 } else { (v - mean) / std })
        .collect())
}

/// Cuts a record into consecutive non-overlapping slices of `slice_len`,
/// zero-padding the last one.
pub fn segment(record: &SignalRecord, slice_len: usize, beat_len: usize) -> Result<SliceBatch> {
    if record.samples.is_empty() {
        return Err(Error::DegenerateInput(format!(
            "record `{}` is empty",
            record.record_id
        )));
    }
    if slice_len == 0 || beat_len == 0 || !slice_len.is_multiple_of(beat_len) {
        return Err(Error::Contract(format!(
            "slice length {slice_len} is not a positive multiple of beat length {beat_len}"
        )));
    }
    let n = record.samples.len();
    let count = n.div_ceil(slice_len);
    let labels = record.point_labels();
    let mut batch = SliceBatch::empty(slice_len);
    batch.slices.reserve(count * slice_len);
    for k in 0..count {
        let start = k * slice_len;
        let end = (start + slice_len).min(n);
        let pad = slice_len - (end - start);
        batch.slices.extend_from_slice(&record.samples[start..end]);
        batch.slices.extend(std::iter::repeat_n(0.0, pad));
        batch.mask.extend(std::iter::repeat_n(true, end - start));
        batch.mask.extend(std::iter::repeat_n(false, pad));
        batch.point_labels.extend_from_slice(&labels[start..end]);
        batch.point_labels.extend(std::iter::repeat_n(0, pad));
        batch.slice_labels.push(record.series_label);
        batch.origins.push(SliceOrigin {
            record_id: record.record_id.clone(),
            start,
        });
    }
    Ok(batch)
}

/// Segments and normalizes every record into one batch.
pub fn prepare_slices(records: &[SignalRecord], slice_len: usize, beat_len: usize) -> Result<SliceBatch> {
    let mut all = SliceBatch::empty(slice_len);
    for r in records {
        let mut b = segment(r, slice_len, beat_len)?;
        b.normalize()?;
        all.append(b)?;
    }
    Ok(all)
}
