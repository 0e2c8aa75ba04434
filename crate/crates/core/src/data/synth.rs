//! Synthetic annotated corpora.
//!
//! Normal rhythm is a quasi-periodic P-QRS-T train with small RR jitter.
//! Fibrillation drops the P wave, speeds up and randomizes the RR interval
//! and overlays a fibrillatory oscillation. Paroxysmal records alternate the
//! two rhythms in segments that each span at least the minimum beat count.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::record::{Episode, SeriesLabel, SignalRecord, MIN_SEGMENT_BEATS};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub count: usize,
    /// Proportions of (N, AFF, AFP).
    pub class_mix: [f64; 3],
    /// Inclusive record length range in samples.
    pub length_range: (usize, usize),
    pub sampling_rate: u32,
    pub beat_len: usize,
    pub heart_rate_bpm: f64,
    /// Per-record heart rate spread, uniform in ±jitter bpm.
    pub heart_rate_jitter_bpm: f64,
    /// Relative RR spread during fibrillation, uniform in ±irregularity.
    pub af_irregularity: f64,
    /// Mean ventricular rate multiplier during fibrillation.
    pub af_rate_factor: f64,
    pub fibrillation_amplitude: f64,
    pub noise_std: f64,
    /// Segment length range for paroxysmal records, in beats of `beat_len`.
    pub segment_beats: (usize, usize),
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            count: 100,
            class_mix: [0.50, 0.33, 0.17],
            length_range: (3000, 9000),
            sampling_rate: 200,
            beat_len: 150,
            heart_rate_bpm: 75.0,
            heart_rate_jitter_bpm: 8.0,
            af_irregularity: 0.35,
            af_rate_factor: 1.35,
            fibrillation_amplitude: 0.12,
            noise_std: 0.03,
            segment_beats: (5, 15),
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Small-scale preset: 40 Hz, 30-sample beats, short records.
    pub fn desk() -> Self {
        Self {
            count: 60,
            length_range: (600, 1500),
            sampling_rate: 40,
            beat_len: 30,
            segment_beats: (5, 10),
            ..Self::default()
        }
    }

    fn min_segment(&self) -> usize {
        self.segment_beats.0 * self.beat_len
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(m));
        if self.class_mix.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad(format!("class proportions {:?} outside [0, 1]", self.class_mix));
        }
        if (self.class_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("class proportions {:?} do not sum to 1", self.class_mix));
        }
        let (lo, hi) = self.length_range;
        if lo == 0 || lo > hi {
            return bad(format!("invalid length range {lo}..={hi}"));
        }
        if self.sampling_rate == 0 || self.beat_len == 0 {
            return bad("sampling rate and beat length must be positive".into());
        }
        if self.heart_rate_bpm <= 0.0
            || self.heart_rate_jitter_bpm < 0.0
            || self.heart_rate_jitter_bpm >= self.heart_rate_bpm
        {
            return bad("heart rate must be positive and exceed its jitter".into());
        }
        if !(0.0..1.0).contains(&self.af_irregularity) || self.af_rate_factor <= 0.0 {
            return bad("fibrillation irregularity must be in [0, 1) and rate factor positive".into());
        }
        if self.noise_std < 0.0 || self.fibrillation_amplitude < 0.0 {
            return bad("amplitudes must be non-negative".into());
        }
        let (smin, smax) = self.segment_beats;
        if smin < MIN_SEGMENT_BEATS || smax < smin {
            return bad(format!(
                "segment beats {smin}..={smax} must start at {MIN_SEGMENT_BEATS} or more"
            ));
        }
        if self.class_mix[1] > 0.0 && lo < MIN_SEGMENT_BEATS * self.beat_len {
            return bad(format!(
                "AFF records need at least {} samples",
                MIN_SEGMENT_BEATS * self.beat_len
            ));
        }
        if self.class_mix[2] > 0.0 && lo < 2 * self.min_segment() {
            return bad(format!(
                "AFP records need at least two {}-sample segments but minimum length is {lo}",
                self.min_segment()
            ));
        }
        Ok(())
    }
}

/// Largest-remainder allocation of `total` items over `weights`.
pub(crate) fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let ideal: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let short = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

fn gaussian(x: f64, center: f64, width: f64) -> f64 {
    (-0.5 * ((x - center) / width).powi(2)).exp()
}

/// (amplitude, offset s, width s) of the P, Q, R, S and T waves.
const WAVES: [(f64, f64, f64); 5] = [
    (0.15, -0.16, 0.025),
    (-0.10, -0.03, 0.010),
    (1.00, 0.00, 0.012),
    (-0.20, 0.03, 0.010),
    (0.30, 0.25, 0.050),
];

fn plan_segments(n: usize, spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<Episode> {
    let min_seg = spec.min_segment();
    let max_seg = spec.segment_beats.1 * spec.beat_len;
    let mut af = rng.random_bool(0.5);
    let mut pos = 0;
    let mut episodes = Vec::new();
    while pos < n {
        let remaining = n - pos;
        let len = if remaining < 2 * min_seg {
            remaining
        } else {
            rng.random_range(min_seg..=max_seg.min(remaining - min_seg))
        };
        if af {
            episodes.push(Episode::new(pos, pos + len - 1));
        }
        pos += len;
        af = !af;
    }
    episodes
}

fn synth_record(id: String, label: SeriesLabel, spec: &SynthSpec, rng: &mut ChaCha8Rng) -> SignalRecord {
    let n = rng.random_range(spec.length_range.0..=spec.length_range.1);
    let episodes = match label {
        SeriesLabel::Normal => Vec::new(),
        SeriesLabel::Persistent => vec![Episode::new(0, n - 1)],
        SeriesLabel::Paroxysmal => plan_segments(n, spec, rng),
    };
    let mut in_af = vec![false; n];
    for e in &episodes {
        in_af[e.onset..=e.end].iter_mut().for_each(|v| *v = true);
    }

    let fs = spec.sampling_rate as f64;
    let hr = spec.heart_rate_bpm + rng.random_range(-1.0..=1.0) * spec.heart_rate_jitter_bpm;
    let base_rr = 60.0 / hr * fs;
    let rr_jitter = Normal::new(0.0, 0.03).expect("finite std");
    let mut samples = vec![0.0; n];

    let mut t = rng.random_range(0.0..base_rr);
    while t < n as f64 {
        let idx = t as usize;
        let af = in_af[idx];
        for (k, &(amp, offset, width)) in WAVES.iter().enumerate() {
            if af && k == 0 {
                continue;
            }
            let center = t + offset * fs;
            let w = width * fs;
            let lo = (center - 4.0 * w).floor().max(0.0) as usize;
            let hi = ((center + 4.0 * w).ceil() as usize).min(n.saturating_sub(1));
            for (i, s) in samples.iter_mut().enumerate().take(hi + 1).skip(lo) {
                // P and T waves only belong to the rhythm they were drawn in
                if in_af[i] == af || k == 2 {
                    *s += amp * gaussian(i as f64, center, w);
                }
            }
        }
        let rr = if af {
            base_rr / spec.af_rate_factor * (1.0 + rng.random_range(-1.0..=1.0) * spec.af_irregularity)
        } else {
            base_rr * (1.0 + rr_jitter.sample(rng))
        };
        t += rr.max(0.25 * base_rr);
    }

    // fibrillatory waves, one frequency and phase per episode
    for e in &episodes {
        let freq = rng.random_range(4.5..7.5) / fs;
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        for (i, s) in samples.iter_mut().enumerate().take(e.end + 1).skip(e.onset) {
            let wobble = 1.0 + 0.3 * (i as f64 * 0.37 / fs).sin();
            *s += spec.fibrillation_amplitude * wobble * (std::f64::consts::TAU * freq * i as f64 + phase).sin();
        }
    }
    if spec.noise_std > 0.0 {
        let noise = Normal::new(0.0, spec.noise_std).expect("finite std");
        samples.iter_mut().for_each(|s| *s += noise.sample(rng));
    }

    SignalRecord {
        record_id: id,
        sampling_rate: spec.sampling_rate,
        samples,
        series_label: label,
        episodes,
        beat_positions: None,
    }
}

/// Generates `spec.count` records. Output depends only on the spec.
pub fn synthesize(spec: &SynthSpec) -> Result<Vec<SignalRecord>> {
    synthesize_with(spec, Execution::default())
}

pub fn synthesize_with(spec: &SynthSpec, exec: Execution) -> Result<Vec<SignalRecord>> {
    spec.validate()?;
    let counts = apportion(spec.count, &spec.class_mix);
    let mut labels: Vec<SeriesLabel> = SeriesLabel::ALL
        .iter()
        .zip(&counts)
        .flat_map(|(&l, &c)| std::iter::repeat_n(l, c))
        .collect();
    labels.shuffle(&mut rng::stream(spec.seed, &[0]));
    let width = spec.count.max(1).to_string().len().max(4);
    Ok(exec.map_indexed(labels.len(), |i| {
        let mut r = rng::stream(spec.seed, &[1, i as u64]);
        synth_record(format!("syn{i:0width$}"), labels[i], spec, &mut r)
    }))
}
