use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of beats in every episode and every inter-episode gap.
pub const MIN_SEGMENT_BEATS: usize = 5;

/// Series-level rhythm class. Index order (N, AFf, AFp) is used everywhere
/// a class is encoded as an integer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SeriesLabel {
    #[serde(rename = "N")]
    Normal,
    #[serde(rename = "AFF")]
    Persistent,
    #[serde(rename = "AFP")]
    Paroxysmal,
}

impl SeriesLabel {
    pub const ALL: [SeriesLabel; 3] = [SeriesLabel::Normal, SeriesLabel::Persistent, SeriesLabel::Paroxysmal];

    pub fn index(self) -> usize {
        match self {
            SeriesLabel::Normal => 0,
            SeriesLabel::Persistent => 1,
            SeriesLabel::Paroxysmal => 2,
        }
    }

    pub fn from_index(idx: usize) -> Result<Self> {
        Self::ALL
            .get(idx)
            .copied()
            .ok_or_else(|| Error::Label(format!("class index {idx} out of range")))
    }

    pub fn code(self) -> &'static str {
        match self {
            SeriesLabel::Normal => "N",
            SeriesLabel::Persistent => "AFF",
            SeriesLabel::Paroxysmal => "AFP",
        }
    }
}

impl fmt::Display for SeriesLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for SeriesLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "N" => Ok(SeriesLabel::Normal),
            "AFF" => Ok(SeriesLabel::Persistent),
            "AFP" => Ok(SeriesLabel::Paroxysmal),
            other => Err(Error::Label(format!("unknown series label `{other}`"))),
        }
    }
}

/// Inclusive sample interval `[onset, end]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Episode {
    pub onset: usize,
    pub end: usize,
}

impl Episode {
    pub fn new(onset: usize, end: usize) -> Self {
        Self { onset, end }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.onset
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.onset
    }

    pub fn contains(&self, idx: usize) -> bool {
        (self.onset..=self.end).contains(&idx)
    }
}

impl From<[usize; 2]> for Episode {
    fn from([onset, end]: [usize; 2]) -> Self {
        Self { onset, end }
    }
}

impl From<Episode> for [usize; 2] {
    fn from(e: Episode) -> Self {
        [e.onset, e.end]
    }
}

/// Checks that intervals are well-formed, sorted and disjoint.
pub fn check_sorted_disjoint(episodes: &[Episode]) -> std::result::Result<(), String> {
    for (i, e) in episodes.iter().enumerate() {
        if e.end < e.onset {
            return Err(format!("episode {i} ends before it starts: [{}, {}]", e.onset, e.end));
        }
        if i > 0 && e.onset <= episodes[i - 1].end {
            return Err(format!(
                "episode {i} [{}, {}] overlaps or precedes [{}, {}]",
                e.onset,
                e.end,
                episodes[i - 1].onset,
                episodes[i - 1].end
            ));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalRecord {
    pub record_id: String,
    pub sampling_rate: u32,
    pub samples: Vec<f64>,
    pub series_label: SeriesLabel,
    pub episodes: Vec<Episode>,
    pub beat_positions: Option<Vec<usize>>,
}

impl SignalRecord {
    pub const DEFAULT_SAMPLING_RATE: u32 = 200;

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Per-sample 0/1 membership in any episode.
    pub fn point_labels(&self) -> Vec<u8> {
        let mut labels = vec![0u8; self.samples.len()];
        for e in &self.episodes {
            let end = e.end.min(labels.len().saturating_sub(1));
            labels[e.onset.min(end)..=end].iter_mut().for_each(|l| *l = 1);
        }
        labels
    }

    fn span_beats(&self, start: usize, end: usize, beat_len: usize) -> usize {
        match &self.beat_positions {
            Some(beats) => beats.iter().filter(|&&b| b >= start && b <= end).count(),
            None => (end + 1 - start) / beat_len,
        }
    }

    /// Validates every record invariant; `beat_len` is the per-beat sample
    /// count used when beat positions are absent.
    pub fn validate(&self, beat_len: usize) -> Result<()> {
        let fail = |message: String| Error::Validation {
            record_id: self.record_id.clone(),
            message,
        };
        if self.samples.is_empty() {
            return Err(fail("record has no samples".into()));
        }
        if self.sampling_rate == 0 {
            return Err(fail("sampling rate must be positive".into()));
        }
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(fail(format!("sample {i} is not finite")));
        }
        let n = self.samples.len();
        if let Some(beats) = &self.beat_positions {
            if beats.windows(2).any(|w| w[0] >= w[1]) {
                return Err(fail("beat positions are not strictly increasing".into()));
            }
            if beats.last().is_some_and(|&b| b >= n) {
                return Err(fail("beat position beyond record end".into()));
            }
        }
        check_sorted_disjoint(&self.episodes).map_err(fail)?;
        if let Some(last) = self.episodes.last() {
            if last.end >= n {
                return Err(fail(format!("episode end {} beyond record length {n}", last.end)));
            }
        }

        let min_samples = MIN_SEGMENT_BEATS * beat_len;
        match self.series_label {
            SeriesLabel::Normal => {
                if !self.episodes.is_empty() {
                    return Err(fail("N record carries episodes".into()));
                }
            }
            SeriesLabel::Persistent => {
                let [e] = self.episodes.as_slice() else {
                    return Err(fail(format!(
                        "AFF record needs exactly one episode, has {}",
                        self.episodes.len()
                    )));
                };
                // uncovered head or tail may not form a segment of its own
                if e.onset >= min_samples || n - 1 - e.end >= min_samples {
                    return Err(fail(format!(
                        "AFF episode [{}, {}] does not span the record",
                        e.onset, e.end
                    )));
                }
            }
            SeriesLabel::Paroxysmal => {
                if self.episodes.is_empty() {
                    return Err(fail("AFP record has no episodes".into()));
                }
                if let [e] = self.episodes.as_slice() {
                    if e.onset == 0 && e.end == n - 1 {
                        return Err(fail("AFP episode covers the whole record".into()));
                    }
                }
            }
        }

        for (i, e) in self.episodes.iter().enumerate() {
            let beats = self.span_beats(e.onset, e.end, beat_len);
            if beats < MIN_SEGMENT_BEATS {
                return Err(fail(format!("episode {i} spans {beats} beats (< {MIN_SEGMENT_BEATS})")));
            }
            if i > 0 {
                let gap = (self.episodes[i - 1].end + 1, e.onset - 1);
                let beats = self.span_beats(gap.0, gap.1, beat_len);
                if beats < MIN_SEGMENT_BEATS {
                    return Err(fail(format!(
                        "gap before episode {i} spans {beats} beats (< {MIN_SEGMENT_BEATS})"
                    )));
                }
            }
        }
        Ok(())
    }
}
