use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use mma_core::data::io::write_atomic;
use mma_core::data::{
    load_records, prepare_slices, split_ids, synthesize_with, write_corpus, SeriesLabel, SignalRecord, SplitIds,
};
use mma_core::exec::Execution;
use mma_core::model::{train, EpochRecord, Model, TrainMode};
use mma_core::pipeline::{
    fit_proportion_mlp, load_checkpoint, save_checkpoint, score_predictions, Predictor, RecordOutput,
};
use mma_core::postprocess::{ProportionMlp, RecordPrediction};
use mma_core::scoring::{ScoreReport, ScoringMatrix};
use mma_core::{Error, Result};
use serde::Serialize;

use crate::config::RunConfig;

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn csv_bytes<F>(fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> csv::Result<()>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        fill(&mut w).map_err(|e| Error::Data(e.to_string()))?;
        w.flush()?;
    }
    Ok(buf)
}

pub fn save_config(out: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(out)?;
    write_text(&out.join("config.ini"), &cfg.to_ini()?)
}

fn manifest_path(cfg: &RunConfig) -> Result<PathBuf> {
    if cfg.run.manifest.is_empty() {
        return Err(Error::Spec(
            "no manifest given (`--manifest` or `[run] manifest`)".into(),
        ));
    }
    Ok(PathBuf::from(&cfg.run.manifest))
}

fn select(records: &[SignalRecord], ids: &[String]) -> Vec<SignalRecord> {
    let wanted: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    records
        .iter()
        .filter(|r| wanted.contains(r.record_id.as_str()))
        .cloned()
        .collect()
}

/// Corpus summary: count, class mix and record length per class.
pub fn corpus_stats(records: &[SignalRecord]) -> String {
    let mut out = String::from("class  count  share   len_mean   len_std\n");
    let mut row = |name: &str, lens: Vec<f64>| {
        let n = lens.len() as f64;
        let mean = if lens.is_empty() {
            0.0
        } else {
            lens.iter().sum::<f64>() / n
        };
        let var = if lens.is_empty() {
            0.0
        } else {
            lens.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n
        };
        let share = if records.is_empty() {
            0.0
        } else {
            n / records.len() as f64
        };
        let _ = writeln!(
            out,
            "{name:<5}  {:>5}  {share:>5.3}  {mean:>9.1}  {:>8.1}",
            lens.len(),
            var.sqrt()
        );
    };
    for label in SeriesLabel::ALL {
        let lens = records
            .iter()
            .filter(|r| r.series_label == label)
            .map(|r| r.len() as f64)
            .collect();
        row(label.code(), lens);
    }
    row("all", records.iter().map(|r| r.len() as f64).collect());
    out
}

pub fn synth(cfg: &RunConfig, out: &Path, exec: Execution) -> Result<String> {
    cfg.synth.validate()?;
    let records = synthesize_with(&cfg.synth, exec)?;
    std::fs::create_dir_all(out)?;
    let manifest = write_corpus(out, &records)?;
    let stats = corpus_stats(&records);
    write_text(&out.join("stats.txt"), &stats)?;
    save_config(out, cfg)?;
    info!("wrote {} records to {}", records.len(), manifest.display());
    Ok(stats)
}

/// A trained predictor plus its training history.
pub struct Trained {
    pub predictor: Predictor,
    pub history: Vec<EpochRecord>,
    pub split: SplitIds,
}

/// Splits `records`, trains under the configured mode and fits the
/// series-label classifier on the training records.
pub fn fit(cfg: &RunConfig, records: &[SignalRecord], init: Option<Model>, exec: Execution) -> Result<Trained> {
    cfg.validate()?;
    let split = split_ids(records, cfg.run.split, cfg.run.seed)?;
    let train_recs = select(records, &split.train);
    let val_recs = select(records, &split.val);
    let m = &cfg.model;
    let train_set = prepare_slices(&train_recs, m.slice_len, m.beat_len)?;
    let val_set = prepare_slices(&val_recs, m.slice_len, m.beat_len)?;
    info!(
        "training {} on {} slices ({} validation)",
        cfg.run.mode,
        train_set.len(),
        val_set.len()
    );
    let outcome = train(&train_set, &val_set, m, cfg.run.mode, &cfg.schedule, init, exec)?;
    let mlp = if cfg.run.mode == TrainMode::Head2Only {
        ProportionMlp::zeros()
    } else {
        fit_proportion_mlp(&outcome.model, &train_recs, &cfg.proportion_mlp, exec)?
    };
    Ok(Trained {
        predictor: Predictor {
            model: outcome.model,
            mode: cfg.run.mode,
            mlp,
            policy: cfg.postprocess.clone(),
        },
        history: outcome.history,
        split,
    })
}

pub fn history_csv(history: &[EpochRecord]) -> Result<Vec<u8>> {
    csv_bytes(|w| history.iter().try_for_each(|h| w.serialize(h)))
}

pub fn train_cmd(cfg: &RunConfig, out: &Path, init_from: Option<&Path>, exec: Execution) -> Result<()> {
    cfg.validate()?;
    let records = load_records(&manifest_path(cfg)?, cfg.model.beat_len)?;
    let init = match init_from {
        Some(p) => Some(load_checkpoint(p, Some(&cfg.model))?.0),
        None => None,
    };
    let trained = fit(cfg, &records, init, exec)?;
    std::fs::create_dir_all(out)?;
    let p = &trained.predictor;
    save_checkpoint(&out.join("checkpoint.bin"), &p.model, p.mode, &p.mlp)?;
    write_atomic(&out.join("history.csv"), &history_csv(&trained.history)?)?;
    write_json(&out.join("split.json"), &trained.split)?;
    save_config(out, cfg)?;
    if let Some(last) = trained.history.last() {
        info!(
            "finished after {} epochs, best validation loss {:.6}",
            last.epoch + 1,
            last.best_val_loss
        );
    }
    Ok(())
}

/// Record ids of one named split in a `split.json`.
pub fn split_members(split_file: &Path, name: &str) -> Result<Vec<String>> {
    let text =
        std::fs::read_to_string(split_file).map_err(|e| Error::Spec(format!("{}: {e}", split_file.display())))?;
    let ids: SplitIds = serde_json::from_str(&text)?;
    ids.get(name)
        .map(<[String]>::to_vec)
        .ok_or_else(|| Error::Spec(format!("unknown split `{name}` (train, val or test)")))
}

/// Records of the manifest, optionally limited to one split.
pub fn load_subset(cfg: &RunConfig, split: Option<(&Path, &str)>) -> Result<Vec<SignalRecord>> {
    let records = load_records(&manifest_path(cfg)?, cfg.model.beat_len)?;
    Ok(match split {
        Some((file, name)) => select(&records, &split_members(file, name)?),
        None => records,
    })
}

/// Attention dump of one record: per slice, `M` slice-attention rows,
/// `M·T` beat-attention rows and `L` point rows.
pub fn dump_csv(out: &RecordOutput, slice_len: usize, beat_len: usize) -> Result<Vec<u8>> {
    let beats = slice_len / beat_len;
    csv_bytes(|w| {
        w.write_record([
            "slice",
            "kind",
            "beat",
            "offset",
            "sample",
            "valid",
            "value",
            "point_prob",
        ])?;
        let mut cursor = 0usize;
        for (s, o) in out.slices.iter().enumerate() {
            let start = s * slice_len;
            for m in 0..beats {
                let valid = o.point_valid[m * beat_len];
                w.write_record([
                    s.to_string(),
                    "slice_attn".into(),
                    m.to_string(),
                    String::new(),
                    (start + m * beat_len).to_string(),
                    u8::from(valid).to_string(),
                    o.slice_attention[m].to_string(),
                    String::new(),
                ])?;
            }
            for m in 0..beats {
                for (t, a) in o.beat_row(m, beat_len).iter().enumerate() {
                    let i = m * beat_len + t;
                    w.write_record([
                        s.to_string(),
                        "beat_attn".into(),
                        m.to_string(),
                        t.to_string(),
                        (start + i).to_string(),
                        u8::from(o.point_valid[i]).to_string(),
                        a.to_string(),
                        String::new(),
                    ])?;
                }
            }
            for i in 0..slice_len {
                let valid = o.point_valid[i];
                let smoothed = if valid {
                    out.smoothed[cursor].to_string()
                } else {
                    String::new()
                };
                w.write_record([
                    s.to_string(),
                    "point".into(),
                    (i / beat_len).to_string(),
                    (i % beat_len).to_string(),
                    (start + i).to_string(),
                    u8::from(valid).to_string(),
                    smoothed,
                    if valid {
                        o.point_probs[i].to_string()
                    } else {
                        String::new()
                    },
                ])?;
                cursor += usize::from(valid);
            }
        }
        Ok(())
    })
}

/// Predicted and annotated episode boundaries of one record.
pub fn boundaries_csv(pred: &RecordPrediction, truth: &SignalRecord) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record(["source", "episode", "onset", "end"])?;
        for (source, eps) in [("pred", &pred.episodes), ("true", &truth.episodes)] {
            for (k, e) in eps.iter().enumerate() {
                w.write_record([
                    source.to_string(),
                    k.to_string(),
                    e.onset.to_string(),
                    e.end.to_string(),
                ])?;
            }
        }
        Ok(())
    })
}

pub fn predict_cmd(
    cfg: &RunConfig,
    out: &Path,
    checkpoint: &Path,
    split: Option<(&Path, &str)>,
    dump: bool,
    exec: Execution,
) -> Result<Vec<RecordPrediction>> {
    let (model, mode, mlp) = load_checkpoint(checkpoint, Some(&cfg.model))?;
    let records = load_subset(cfg, split)?;
    let predictor = Predictor {
        model,
        mode,
        mlp,
        policy: cfg.postprocess.clone(),
    };
    let outputs = predictor.predict_all(&records, exec)?;
    let pred_dir = out.join("predictions");
    std::fs::create_dir_all(&pred_dir)?;
    for o in &outputs {
        write_json(
            &pred_dir.join(format!("{}.json", o.prediction.record_id)),
            &o.prediction,
        )?;
    }
    if dump {
        let dump_dir = out.join("dump");
        std::fs::create_dir_all(&dump_dir)?;
        for (o, r) in outputs.iter().zip(&records) {
            let id = &r.record_id;
            write_atomic(
                &dump_dir.join(format!("{id}_attention.csv")),
                &dump_csv(o, cfg.model.slice_len, cfg.model.beat_len)?,
            )?;
            write_atomic(
                &dump_dir.join(format!("{id}_boundaries.csv")),
                &boundaries_csv(&o.prediction, r)?,
            )?;
        }
    }
    save_config(out, cfg)?;
    info!("wrote {} predictions to {}", outputs.len(), pred_dir.display());
    Ok(outputs.into_iter().map(|o| o.prediction).collect())
}

/// Reads every `*.json` prediction in `dir` (or in `dir/predictions`).
pub fn read_predictions(dir: &Path) -> Result<Vec<RecordPrediction>> {
    let nested = dir.join("predictions");
    let dir = if nested.is_dir() { nested } else { dir.to_path_buf() };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|x| x == "json"));
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: p.clone(),
                position: format!("line {}", e.line()),
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn report_files(out: &Path, report: &ScoreReport) -> Result<()> {
    std::fs::create_dir_all(out)?;
    write_text(&out.join("report.csv"), &report.to_csv()?)?;
    write_text(&out.join("report.json"), &report.to_json()?)
}

pub fn score_cmd(
    cfg: &RunConfig,
    out: &Path,
    pred_dir: &Path,
    matrix: Option<&Path>,
    split: Option<(&Path, &str)>,
) -> Result<ScoreReport> {
    let matrix = match matrix {
        Some(p) => ScoringMatrix::load(p)?,
        None => {
            warn!("scoring with the unverified default matrix");
            ScoringMatrix::default()
        }
    };
    let truth = load_subset(cfg, split)?;
    let preds = read_predictions(pred_dir)?;
    let report = score_predictions(&truth, &preds, &matrix, cfg.model.beat_len)?;
    report_files(out, &report)?;
    save_config(out, cfg)?;
    Ok(report)
}

/// One ablation knob setting.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub knob: &'static str,
    pub value: String,
}

pub const D_PROJ: [usize; 4] = [0, 8, 64, 256];
pub const SLICE_BEATS: [usize; 3] = [1, 10, 40];

/// One-factor-at-a-time grid around the base configuration.
pub fn full_grid() -> Vec<Cell> {
    let mut cells: Vec<Cell> = TrainMode::ALL
        .iter()
        .map(|m| Cell {
            knob: "mode",
            value: m.name().into(),
        })
        .collect();
    cells.extend(D_PROJ.iter().map(|d| Cell {
        knob: "d_proj",
        value: d.to_string(),
    }));
    cells.extend(SLICE_BEATS.iter().map(|b| Cell {
        knob: "slice_beats",
        value: b.to_string(),
    }));
    cells.extend(["off", "on"].iter().map(|v| Cell {
        knob: "slice_features",
        value: (*v).into(),
    }));
    cells
}

/// Keeps cells matching any `knob=value` filter; no filters keep all.
pub fn filter_grid(cells: Vec<Cell>, filters: &[String]) -> Result<Vec<Cell>> {
    let mut parsed = Vec::new();
    for f in filters {
        let (k, v) = f
            .split_once('=')
            .ok_or_else(|| Error::Spec(format!("grid filter `{f}` is not knob=value")))?;
        let (k, v) = (k.trim(), v.trim());
        if !cells.iter().any(|c| c.knob == k && c.value == v) {
            return Err(Error::Spec(format!("grid has no cell {k}={v}")));
        }
        parsed.push((k.to_string(), v.to_string()));
    }
    if parsed.is_empty() {
        return Ok(cells);
    }
    Ok(cells
        .into_iter()
        .filter(|c| parsed.iter().any(|(k, v)| c.knob == k && c.value == *v))
        .collect())
}

pub fn apply_cell(base: &RunConfig, cell: &Cell) -> Result<RunConfig> {
    let mut cfg = base.clone();
    let bad = || Error::Spec(format!("bad value {} for {}", cell.value, cell.knob));
    match cell.knob {
        "mode" => cfg.run.mode = cell.value.parse()?,
        "d_proj" => cfg.model.d_proj = cell.value.parse().map_err(|_| bad())?,
        "slice_beats" => {
            let beats: usize = cell.value.parse().map_err(|_| bad())?;
            cfg.model.slice_len = beats * cfg.model.beat_len;
        }
        "slice_features" => {
            cfg.model.concat_slice_features = match cell.value.as_str() {
                "on" => true,
                "off" => false,
                _ => return Err(bad()),
            }
        }
        _ => return Err(bad()),
    }
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub outcome: std::result::Result<(f64, f64, f64), String>,
}

/// Trains on the train split, predicts the test split and scores it, the
/// same sequence as `train`, `predict --split test` and `score`.
pub fn run_cell(
    cfg: &RunConfig,
    records: &[SignalRecord],
    matrix: &ScoringMatrix,
    exec: Execution,
) -> Result<ScoreReport> {
    let trained = fit(cfg, records, None, exec)?;
    let test = select(records, &trained.split.test);
    let preds: Vec<RecordPrediction> = trained
        .predictor
        .predict_all(&test, exec)?
        .into_iter()
        .map(|o| o.prediction)
        .collect();
    score_predictions(&test, &preds, matrix, cfg.model.beat_len)
}

/// Directional check: the 64-dimensional projection should score at least
/// as well as no projection.
pub fn trend(results: &[CellResult]) -> &'static str {
    let u = |v: &str| {
        results
            .iter()
            .find(|r| r.cell.knob == "d_proj" && r.cell.value == v)
            .and_then(|r| r.outcome.as_ref().ok())
            .map(|s| s.2)
    };
    match (u("64"), u("0")) {
        (Some(a), Some(b)) if a >= b => "reproduced",
        (Some(_), Some(_)) => "not reproduced",
        _ => "not evaluated",
    }
}

pub fn ablation_csv(results: &[CellResult]) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record(["knob", "value", "U_r", "U_e", "U", "status"])?;
        for r in results {
            let (scores, status) = match &r.outcome {
                Ok((a, b, c)) => ([a.to_string(), b.to_string(), c.to_string()], "ok".to_string()),
                Err(e) => ([String::new(), String::new(), String::new()], format!("failed: {e}")),
            };
            w.write_record([
                r.cell.knob.to_string(),
                r.cell.value.clone(),
                scores[0].clone(),
                scores[1].clone(),
                scores[2].clone(),
                status,
            ])?;
        }
        Ok(())
    })
}

pub fn ablate_cmd(
    cfg: &RunConfig,
    out: &Path,
    filters: &[String],
    matrix: Option<&Path>,
    exec: Execution,
) -> Result<Vec<CellResult>> {
    let cells = filter_grid(full_grid(), filters)?;
    let matrix = match matrix {
        Some(p) => ScoringMatrix::load(p)?,
        None => ScoringMatrix::default(),
    };
    let records = load_records(&manifest_path(cfg)?, cfg.model.beat_len)?;
    let mut results = Vec::with_capacity(cells.len());
    for cell in cells {
        let outcome = apply_cell(cfg, &cell)
            .and_then(|c| run_cell(&c, &records, &matrix, exec))
            .map(|r| (r.u_r_mean, r.u_e_mean, r.u))
            .map_err(|e| e.to_string());
        match &outcome {
            Ok((ur, ue, u)) => info!("{}={}: U_r {ur:.4} U_e {ue:.4} U {u:.4}", cell.knob, cell.value),
            Err(e) => warn!("{}={} failed: {e}", cell.knob, cell.value),
        }
        results.push(CellResult { cell, outcome });
    }
    std::fs::create_dir_all(out)?;
    write_atomic(&out.join("ablation.csv"), &ablation_csv(&results)?)?;
    let trend = trend(&results);
    write_json(
        &out.join("trend.json"),
        &serde_json::json!({ "check": "d_proj=64 scores U at least as high as d_proj=0", "result": trend }),
    )?;
    save_config(out, cfg)?;
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_fifteen_cells() {
        let g = full_grid();
        assert_eq!(g.len(), 15);
        let f = filter_grid(g.clone(), &["d_proj=64".into(), "mode=joint".into()]).unwrap();
        assert_eq!(f.len(), 2);
        assert!(matches!(filter_grid(g, &["d_proj=3".into()]), Err(Error::Spec(_))));
    }

    #[test]
    fn cells_change_one_knob() {
        let base = RunConfig::load(None).unwrap();
        let c = apply_cell(
            &base,
            &Cell {
                knob: "slice_beats",
                value: "40".into(),
            },
        )
        .unwrap();
        assert_eq!(c.model.slice_len, 40 * base.model.beat_len);
        assert_eq!(c.model.d_proj, base.model.d_proj);
        let c = apply_cell(
            &base,
            &Cell {
                knob: "slice_features",
                value: "on".into(),
            },
        )
        .unwrap();
        assert!(c.model.concat_slice_features);
    }

    #[test]
    fn trend_compares_projection_cells() {
        let r = |v: &str, u: f64| CellResult {
            cell: Cell {
                knob: "d_proj",
                value: v.into(),
            },
            outcome: Ok((0.0, 0.0, u)),
        };
        assert_eq!(trend(&[r("0", 1.0), r("64", 1.5)]), "reproduced");
        assert_eq!(trend(&[r("0", 2.0), r("64", 1.5)]), "not reproduced");
        assert_eq!(trend(&[r("0", 2.0)]), "not evaluated");
    }

    #[test]
    fn stats_table_counts() {
        let spec = mma_core::data::SynthSpec {
            count: 12,
            ..mma_core::data::SynthSpec::desk()
        };
        let recs = mma_core::data::synthesize(&spec).unwrap();
        let t = corpus_stats(&recs);
        assert_eq!(t.lines().count(), 5);
        assert!(t.lines().last().unwrap().contains("   12  1.000"));
    }
}
