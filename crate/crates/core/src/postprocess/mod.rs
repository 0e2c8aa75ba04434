//! Record-level decisions from slice and point outputs: proportion
//! classifier, moving-average smoothing, interval extraction and blending.

mod mlp;

use serde::{Deserialize, Serialize};

use crate::data::{Episode, SeriesLabel};
use crate::error::{Error, Result};

pub use mlp::{MlpSchedule, ProportionMlp, HIDDEN_UNITS};

/// Share of a record's slices predicted as each class (N, AFf, AFp).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProportionVector(pub [f64; 3]);

impl ProportionVector {
    pub fn new(p: [f64; 3]) -> Result<Self> {
        if p.iter().any(|&v| v.is_nan() || v < 0.0) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!("{p:?} is not a probability vector")));
        }
        Ok(Self(p))
    }

    /// Proportions of the given slice class indices.
    pub fn from_classes(classes: &[usize]) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::DegenerateInput("no slices to count".into()));
        }
        let mut p = [0.0; 3];
        for &c in classes {
            *p.get_mut(c)
                .ok_or_else(|| Error::Label(format!("class index {c} out of range")))? += 1.0;
        }
        p.iter_mut().for_each(|v| *v /= classes.len() as f64);
        Ok(Self(p))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlendPolicy {
    /// Override to N when at most `1 − θ_normal` of the points are abnormal.
    pub theta_normal: f64,
    /// Override to AFf when at least `θ_abnormal` of the points are abnormal.
    pub theta_abnormal: f64,
    pub min_episode_samples: usize,
    pub smoothing_window: usize,
    /// Centered window; `false` averages the trailing window.
    pub centered: bool,
    /// Threshold point probabilities at 0.5 before smoothing.
    pub binarize_before_smoothing: bool,
}

impl Default for BlendPolicy {
    fn default() -> Self {
        Self {
            theta_normal: 0.98,
            theta_abnormal: 0.98,
            min_episode_samples: 750,
            smoothing_window: 1200,
            centered: true,
            binarize_before_smoothing: true,
        }
    }
}

impl BlendPolicy {
    /// Defaults rescaled to a `beat_len`-sample beat (5 beats minimum,
    /// 8-beat window).
    pub fn for_beat_len(beat_len: usize) -> Self {
        Self {
            min_episode_samples: 5 * beat_len,
            smoothing_window: 8 * beat_len,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("theta_normal", self.theta_normal),
            ("theta_abnormal", self.theta_abnormal),
        ] {
            if !(t > 0.5 && t <= 1.0) {
                return Err(Error::Spec(format!("{name} = {t} outside (0.5, 1]")));
            }
        }
        if self.smoothing_window == 0 {
            return Err(Error::Spec("smoothing window must be at least 1".into()));
        }
        Ok(())
    }
}

/// Moving average over `window` samples, truncated at the edges. The
/// centered window spans `(window − 1) / 2` samples back and `window / 2`
/// forward; the trailing window ends at the current sample.
pub fn smooth(x: &[f64], window: usize, centered: bool) -> Vec<f64> {
    let w = window.max(1);
    if w == 1 {
        return x.to_vec();
    }
    let (back, fwd) = if centered { ((w - 1) / 2, w / 2) } else { (w - 1, 0) };
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    for &v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    let n = x.len();
    let lo_bound = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi_bound = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(back);
            let hi = (i + fwd + 1).min(n);
            // rounding in the prefix sums may not leave the input range
            ((prefix[hi] - prefix[lo]) / (hi - lo) as f64).clamp(lo_bound, hi_bound)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodePrediction {
    pub intervals: Vec<Episode>,
    pub smoothed: Vec<f64>,
}

/// Maximal runs of `true` as inclusive intervals.
fn runs(flags: &[bool]) -> Vec<Episode> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &f) in flags.iter().enumerate() {
        match (f, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(Episode::new(s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(Episode::new(s, flags.len() - 1));
    }
    out
}

/// Thresholds at 0.5, drops abnormal runs shorter than the minimum, then
/// merges runs separated by gaps shorter than the minimum.
pub fn extract_episodes(smoothed: &[f64], policy: &BlendPolicy) -> EpisodePrediction {
    let min = policy.min_episode_samples;
    let flags: Vec<bool> = smoothed.iter().map(|&p| p > 0.5).collect();
    let mut intervals: Vec<Episode> = Vec::new();
    for run in runs(&flags).into_iter().filter(|r| r.len() >= min) {
        match intervals.last_mut() {
            Some(last) if run.onset - last.end - 1 < min => last.end = run.end,
            _ => intervals.push(run),
        }
    }
    EpisodePrediction {
        intervals,
        smoothed: smoothed.to_vec(),
    }
}

/// Combines the series label from the slice head with smoothed point
/// probabilities.
pub fn blend(head1: SeriesLabel, smoothed: &[f64], policy: &BlendPolicy) -> (SeriesLabel, Vec<Episode>) {
    let n = smoothed.len();
    let whole = || {
        if n == 0 {
            Vec::new()
        } else {
            vec![Episode::new(0, n - 1)]
        }
    };
    match head1 {
        SeriesLabel::Normal => (SeriesLabel::Normal, Vec::new()),
        SeriesLabel::Persistent => (SeriesLabel::Persistent, whole()),
        SeriesLabel::Paroxysmal => {
            if n == 0 {
                return (SeriesLabel::Normal, Vec::new());
            }
            let r = smoothed.iter().filter(|&&p| p > 0.5).count() as f64 / n as f64;
            if r <= 1.0 - policy.theta_normal {
                (SeriesLabel::Normal, Vec::new())
            } else if r >= policy.theta_abnormal {
                (SeriesLabel::Persistent, whole())
            } else {
                (SeriesLabel::Paroxysmal, extract_episodes(smoothed, policy).intervals)
            }
        }
    }
}

/// Point probabilities → smoothed curve under `policy`.
pub fn smooth_points(point_probs: &[f64], policy: &BlendPolicy) -> Vec<f64> {
    if policy.binarize_before_smoothing {
        let b: Vec<f64> = point_probs.iter().map(|&p| if p > 0.5 { 1.0 } else { 0.0 }).collect();
        smooth(&b, policy.smoothing_window, policy.centered)
    } else {
        smooth(point_probs, policy.smoothing_window, policy.centered)
    }
}

/// One record's final output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordPrediction {
    pub record_id: String,
    pub predicted_label: SeriesLabel,
    pub episodes: Vec<Episode>,
}
