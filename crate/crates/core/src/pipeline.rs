//! Record-level glue: slicing a record through a trained model, the
//! series-label classifier, final predictions, scoring and checkpoints.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::checkpoint::{read_params, write_params};
use crate::autodiff::ParamSet;
use crate::data::io::write_atomic;
use crate::data::{segment, SeriesLabel, SignalRecord};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{ForwardOutput, Model, ModelConfig, TrainMode};
use crate::postprocess::{
    blend, smooth_points, BlendPolicy, MlpSchedule, ProportionMlp, ProportionVector, RecordPrediction,
};
use crate::scoring::{score_dataset, score_record, BeatRuler, RecordInput, ScoreReport, ScoringMatrix};

const POST_PREFIX: &str = "post/";

/// Normalized slices of `record`, each run through the model in inference mode.
pub fn record_outputs(model: &Model, record: &SignalRecord) -> Result<Vec<ForwardOutput>> {
    let cfg = model.config();
    let mut slices = segment(record, cfg.slice_len, cfg.beat_len)?;
    slices.normalize()?;
    slices.iter().map(|s| model.forward(s.samples, s.mask)).collect()
}

/// Slice-head proportions of a record.
pub fn proportions(outputs: &[ForwardOutput]) -> Result<ProportionVector> {
    let classes: Vec<usize> = outputs.iter().map(ForwardOutput::predicted_class).collect();
    ProportionVector::from_classes(&classes)
}

/// Point probabilities of all slices joined back to record length.
pub fn record_points(outputs: &[ForwardOutput]) -> Vec<f64> {
    outputs
        .iter()
        .flat_map(|o| {
            o.point_probs
                .iter()
                .zip(&o.point_valid)
                .filter(|(_, &v)| v)
                .map(|(&p, _)| p)
        })
        .collect()
}

/// Fits the series-label classifier on the model's slice predictions for
/// `records` against their true labels.
pub fn fit_proportion_mlp(
    model: &Model,
    records: &[SignalRecord],
    schedule: &MlpSchedule,
    exec: Execution,
) -> Result<ProportionMlp> {
    let examples = exec.map(records, |r| -> Result<(ProportionVector, SeriesLabel)> {
        Ok((proportions(&record_outputs(model, r)?)?, r.series_label))
    });
    let examples = examples.into_iter().collect::<Result<Vec<_>>>()?;
    ProportionMlp::train(&examples, schedule)
}

/// A trained model with its post-processing.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictor {
    pub model: Model,
    pub mode: TrainMode,
    pub mlp: ProportionMlp,
    pub policy: BlendPolicy,
}

/// Everything computed for one record.
#[derive(Clone, Debug)]
pub struct RecordOutput {
    pub prediction: RecordPrediction,
    /// Slice-head label before blending.
    pub head1: SeriesLabel,
    pub slices: Vec<ForwardOutput>,
    pub smoothed: Vec<f64>,
}

impl Predictor {
    pub fn predict(&self, record: &SignalRecord) -> Result<RecordOutput> {
        let slices = record_outputs(&self.model, record)?;
        // without a trained slice head every record goes through the point rules
        let head1 = if self.mode == TrainMode::Head2Only {
            SeriesLabel::Paroxysmal
        } else {
            self.mlp.apply(&proportions(&slices)?)?
        };
        let smoothed = smooth_points(&record_points(&slices), &self.policy);
        let (label, episodes) = blend(head1, &smoothed, &self.policy);
        Ok(RecordOutput {
            prediction: RecordPrediction {
                record_id: record.record_id.clone(),
                predicted_label: label,
                episodes,
            },
            head1,
            slices,
            smoothed,
        })
    }

    pub fn predict_all(&self, records: &[SignalRecord], exec: Execution) -> Result<Vec<RecordOutput>> {
        exec.map(records, |r| self.predict(r)).into_iter().collect()
    }
}

/// Scores predictions against annotated records, pairing by record id.
/// Every truth record must have a prediction.
pub fn score_predictions(
    truth: &[SignalRecord],
    predictions: &[RecordPrediction],
    matrix: &ScoringMatrix,
    beat_len: usize,
) -> Result<ScoreReport> {
    let mut rows = Vec::with_capacity(truth.len());
    for r in truth {
        let p = predictions
            .iter()
            .find(|p| p.record_id == r.record_id)
            .ok_or_else(|| Error::MissingPrediction {
                record_id: r.record_id.clone(),
            })?;
        let ruler = BeatRuler::from_positions(r.beat_positions.as_deref(), beat_len);
        rows.push(score_record(
            &RecordInput {
                record_id: &r.record_id,
                truth_label: r.series_label,
                truth_episodes: &r.episodes,
                pred_label: p.predicted_label,
                pred_episodes: &p.episodes,
            },
            matrix,
            ruler,
        )?);
    }
    score_dataset(rows, matrix)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    mode: TrainMode,
    model: ModelConfig,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes the parameters of `model` and `mlp` to `path` and the model
/// configuration to the `.json` sidecar next to it.
pub fn save_checkpoint(path: &Path, model: &Model, mode: TrainMode, mlp: &ProportionMlp) -> Result<()> {
    let mut set = model.to_params()?;
    set.extend_prefixed(POST_PREFIX, mlp.params())?;
    let mut bytes = Vec::new();
    write_params(&set, &mut bytes)?;
    write_atomic(path, &bytes)?;
    let sidecar = Sidecar {
        format_version: 1,
        mode,
        model: model.config().clone(),
    };
    write_atomic(
        &sidecar_path(path),
        (serde_json::to_string_pretty(&sidecar)? + "\n").as_bytes(),
    )
}

/// Loads a checkpoint; with `expected` set, its configuration must match.
pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<(Model, TrainMode, ProportionMlp)> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::Checkpoint(format!("{}: {e}", side.display())))?;
    let sidecar: Sidecar =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", side.display())))?;
    if let Some(cfg) = expected {
        if *cfg != sidecar.model {
            return Err(Error::Checkpoint(format!(
                "{} was trained with a different model configuration",
                path.display()
            )));
        }
    }
    let file = std::fs::File::open(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let set: ParamSet = read_params(std::io::BufReader::new(file))?;
    let model = Model::from_params(&sidecar.model, &set)?;
    let mlp = ProportionMlp::from_params(set.extract_prefixed(POST_PREFIX))?;
    Ok((model, sidecar.mode, mlp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Episode;

    fn micro() -> ModelConfig {
        ModelConfig {
            d_proj: 4,
            d_hidden: 5,
            beat_len: 10,
            slice_len: 30,
            ..ModelConfig::default()
        }
    }

    fn record(n: usize) -> SignalRecord {
        SignalRecord {
            record_id: "r0".into(),
            sampling_rate: 40,
            samples: (0..n).map(|i| (i as f64 * 0.3).sin()).collect(),
            series_label: SeriesLabel::Normal,
            episodes: vec![],
            beat_positions: None,
        }
    }

    #[test]
    fn outputs_cover_the_record() {
        let model = Model::init(&micro(), TrainMode::Joint, 1).unwrap();
        let outs = record_outputs(&model, &record(75)).unwrap();
        assert_eq!(outs.len(), 3);
        assert_eq!(record_points(&outs).len(), 75);
        let p = proportions(&outs).unwrap();
        assert!((p.0.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn head2_only_routes_through_point_rules() {
        let predictor = Predictor {
            model: Model::init(&micro(), TrainMode::Head2Only, 1).unwrap(),
            mode: TrainMode::Head2Only,
            mlp: ProportionMlp::zeros(),
            policy: BlendPolicy::for_beat_len(10),
        };
        let out = predictor.predict(&record(75)).unwrap();
        assert_eq!(out.head1, SeriesLabel::Paroxysmal);
        assert_eq!(out.smoothed.len(), 75);
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let model = Model::init(&micro(), TrainMode::Independent, 4).unwrap();
        let mlp = ProportionMlp::init(&mut crate::rng::stream(1, &[]));
        save_checkpoint(&path, &model, TrainMode::Independent, &mlp).unwrap();
        let (m, mode, p) = load_checkpoint(&path, Some(&micro())).unwrap();
        assert_eq!((m, mode, p), (model, TrainMode::Independent, mlp));
        let other = ModelConfig { d_hidden: 6, ..micro() };
        assert!(matches!(
            load_checkpoint(&path, Some(&other)),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn scoring_pairs_by_id() {
        let mut truth = record(3000);
        truth.series_label = SeriesLabel::Paroxysmal;
        truth.episodes = vec![Episode::new(1000, 2000)];
        let pred = RecordPrediction {
            record_id: "r0".into(),
            predicted_label: SeriesLabel::Paroxysmal,
            episodes: vec![Episode::new(1000, 2000)],
        };
        let rep = score_predictions(&[truth.clone()], &[pred], &ScoringMatrix::default(), 150).unwrap();
        assert_eq!(rep.u, 3.0);
        assert!(matches!(
            score_predictions(&[truth], &[], &ScoringMatrix::default(), 150),
            Err(Error::MissingPrediction { .. })
        ));
    }
}
