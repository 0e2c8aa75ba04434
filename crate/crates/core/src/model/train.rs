use std::fmt;
use std::str::FromStr;

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::forward::{argmax, forward_on_tape, ForwardOptions, ForwardOutput};
use super::loss::{joint_loss, Objective};
use super::params::ParamStore;
use crate::autodiff::{sum_grads, Adam, ParamSet, Tape};
use crate::data::SliceBatch;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng;

/// Training regimes of the multi-task ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Joint,
    Head1Only,
    Head2Only,
    Pretrain1Finetune2,
    Pretrain2Finetune1,
    /// Two separate networks, one per task.
    Independent,
}

impl TrainMode {
    pub const ALL: [TrainMode; 6] = [
        TrainMode::Joint,
        TrainMode::Head1Only,
        TrainMode::Head2Only,
        TrainMode::Pretrain1Finetune2,
        TrainMode::Pretrain2Finetune1,
        TrainMode::Independent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Joint => "joint",
            TrainMode::Head1Only => "head1_only",
            TrainMode::Head2Only => "head2_only",
            TrainMode::Pretrain1Finetune2 => "pretrain1_finetune2",
            TrainMode::Pretrain2Finetune1 => "pretrain2_finetune1",
            TrainMode::Independent => "independent",
        }
    }

    /// Objectives of the sequential phases.
    fn phases(self) -> &'static [(&'static str, Objective)] {
        match self {
            TrainMode::Joint => &[("joint", Objective::Joint)],
            TrainMode::Head1Only => &[("head1", Objective::Discrimination)],
            TrainMode::Head2Only => &[("head2", Objective::Localization)],
            TrainMode::Pretrain1Finetune2 => &[
                ("pretrain", Objective::Discrimination),
                ("finetune", Objective::Localization),
            ],
            TrainMode::Pretrain2Finetune1 => &[
                ("pretrain", Objective::Localization),
                ("finetune", Objective::Discrimination),
            ],
            TrainMode::Independent => &[("disc", Objective::Discrimination), ("loc", Objective::Localization)],
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::Spec(format!("unknown training mode `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub learning_rate: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 16,
            seed: 0,
            patience: 20,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub best_val_loss: f64,
}

/// Trained network(s). `Independent` keeps one network per task.
#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Model {
    Shared(ParamStore),
    Independent { disc: ParamStore, loc: ParamStore },
}

const DISC_PREFIX: &str = "disc/";
const LOC_PREFIX: &str = "loc/";

impl Model {
    pub fn init(config: &ModelConfig, mode: TrainMode, seed: u64) -> Result<Self> {
        let store = |k: u64| ParamStore::init(config, &mut rng::stream(seed, &[0x1417, k]));
        match mode {
            TrainMode::Independent => Ok(Model::Independent {
                disc: store(0)?,
                loc: store(1)?,
            }),
            _ => Ok(Model::Shared(store(0)?)),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            Model::Shared(s) => s.config(),
            Model::Independent { disc, .. } => disc.config(),
        }
    }

    pub fn is_independent(&self) -> bool {
        matches!(self, Model::Independent { .. })
    }

    /// Inference forward pass. Independent models take the slice outputs
    /// from the classification network and the point outputs from the
    /// localization network.
    pub fn forward(&self, samples: &[f64], mask: &[bool]) -> Result<ForwardOutput> {
        match self {
            Model::Shared(s) => super::forward(s, samples, mask),
            Model::Independent { disc, loc } => {
                let mut out = super::forward(disc, samples, mask)?;
                out.point_probs = super::forward(loc, samples, mask)?.point_probs;
                Ok(out)
            }
        }
    }

    /// Flattened parameters; independent networks carry name prefixes.
    pub fn to_params(&self) -> Result<ParamSet> {
        match self {
            Model::Shared(s) => Ok(s.params().clone()),
            Model::Independent { disc, loc } => {
                let mut set = ParamSet::new();
                set.extend_prefixed(DISC_PREFIX, disc.params())?;
                set.extend_prefixed(LOC_PREFIX, loc.params())?;
                Ok(set)
            }
        }
    }

    /// Inverse of [`Model::to_params`]; entries with other prefixes are ignored.
    pub fn from_params(config: &ModelConfig, set: &ParamSet) -> Result<Self> {
        let disc = set.extract_prefixed(DISC_PREFIX);
        if !disc.is_empty() {
            return Ok(Model::Independent {
                disc: ParamStore::from_params(config, disc)?,
                loc: ParamStore::from_params(config, set.extract_prefixed(LOC_PREFIX))?,
            });
        }
        let mut own = ParamSet::new();
        for (name, t) in set.iter().filter(|(n, _)| !n.contains('/')) {
            own.push(name, t.clone())?;
        }
        Ok(Model::Shared(ParamStore::from_params(config, own)?))
    }
}

/// Loss, accuracy and localization quality over one batch of slices.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub slice_accuracy: f64,
    pub point_f1: f64,
}

struct SliceResult {
    loss: f64,
    correct: bool,
    grads: Option<Vec<Vec<f64>>>,
}

fn run_slice(
    store: &ParamStore,
    batch: &SliceBatch,
    i: usize,
    objective: Objective,
    training: bool,
    dropout_seed: u64,
) -> Result<SliceResult> {
    let view = batch.get(i);
    let mut tape = Tape::new();
    let vars = store.bind(&mut tape);
    let mut rng = rng::stream(dropout_seed, &[]);
    let opts = ForwardOptions {
        training,
        ..ForwardOptions::default()
    };
    let fv = forward_on_tape(store, &mut tape, &vars, view.samples, view.mask, opts, &mut rng)?;
    let loss = joint_loss(
        &mut tape,
        &fv,
        view.label.index(),
        view.point_labels,
        store.config(),
        objective,
    )?;
    let correct = argmax(tape.value(fv.slice_probs)) == view.label.index();
    let value = tape.scalar(loss.total);
    let grads = if training {
        tape.backward(loss.total)?;
        Some(store.params().grads_from(&tape, &vars))
    } else {
        None
    };
    Ok(SliceResult {
        loss: value,
        correct,
        grads,
    })
}

/// Summed gradients of the mean objective over `indices` (training mode,
/// dropout seeded per slice from `seed`), plus the mean loss.
pub fn batch_gradients(
    store: &ParamStore,
    batch: &SliceBatch,
    indices: &[usize],
    objective: Objective,
    seed: u64,
    exec: Execution,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let (loss, _, grads) = batch_step(store, batch, indices, objective, seed, exec)?;
    Ok((loss, grads))
}

fn batch_step(
    store: &ParamStore,
    batch: &SliceBatch,
    indices: &[usize],
    objective: Objective,
    seed: u64,
    exec: Execution,
) -> Result<(f64, usize, Vec<Vec<f64>>)> {
    if indices.is_empty() {
        return Err(Error::DegenerateInput("empty batch".into()));
    }
    let results = exec.map(indices, |&i| {
        run_slice(store, batch, i, objective, true, rng::derive_seed(seed, &[i as u64]))
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let scale = 1.0 / indices.len() as f64;
    let loss = results.iter().map(|r| r.loss).sum::<f64>() * scale;
    let correct = results.iter().filter(|r| r.correct).count();
    let mut grads = sum_grads(results.into_iter().map(|r| r.grads.expect("training pass"))).expect("non-empty batch");
    grads.iter_mut().flatten().for_each(|g| *g *= scale);
    Ok((loss, correct, grads))
}

/// Inference-mode loss, slice accuracy and point F1 over a whole batch.
pub fn evaluate(store: &ParamStore, batch: &SliceBatch, objective: Objective, exec: Execution) -> Result<Evaluation> {
    if batch.is_empty() {
        return Err(Error::DegenerateInput("cannot evaluate an empty batch".into()));
    }
    let outcomes = exec.map_indexed(batch.len(), |i| -> Result<(f64, bool, [usize; 3])> {
        let view = batch.get(i);
        let r = run_slice(store, batch, i, objective, false, 0)?;
        let out = super::forward(store, view.samples, view.mask)?;
        Ok((r.loss, r.correct, point_counts(&out, view.point_labels)))
    });
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let n = outcomes.len() as f64;
    let mut counts = [0usize; 3];
    for (_, _, c) in &outcomes {
        counts.iter_mut().zip(c).for_each(|(a, b)| *a += b);
    }
    Ok(Evaluation {
        loss: outcomes.iter().map(|o| o.0).sum::<f64>() / n,
        slice_accuracy: outcomes.iter().filter(|o| o.1).count() as f64 / n,
        point_f1: f1(counts),
    })
}

/// `[true positives, false positives, false negatives]` at threshold 0.5
/// over valid points.
pub fn point_counts(out: &ForwardOutput, labels: &[u8]) -> [usize; 3] {
    let mut c = [0usize; 3];
    for ((&p, &valid), &l) in out.point_probs.iter().zip(&out.point_valid).zip(labels) {
        if !valid {
            continue;
        }
        match (p > 0.5, l == 1) {
            (true, true) => c[0] += 1,
            (true, false) => c[1] += 1,
            (false, true) => c[2] += 1,
            _ => {}
        }
    }
    c
}

/// F1 from `[tp, fp, fn]`; 1 when there are no positives on either side.
pub fn f1([tp, fp, fn_]: [usize; 3]) -> f64 {
    if tp + fp + fn_ == 0 {
        return 1.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

struct Phase<'a> {
    name: &'a str,
    tag: u64,
    objective: Objective,
}

fn fit(
    mut store: ParamStore,
    train: &SliceBatch,
    val: &SliceBatch,
    phase: Phase<'_>,
    schedule: &Schedule,
    exec: Execution,
    history: &mut Vec<EpochRecord>,
) -> Result<ParamStore> {
    let mut adam = Adam::new(schedule.learning_rate);
    let mut best = store.clone();
    let mut best_loss = f64::INFINITY;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=schedule.epochs {
        order.shuffle(&mut rng::stream(schedule.seed, &[phase.tag, 1, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (b, chunk) in order.chunks(schedule.batch_size.max(1)).enumerate() {
            let seed = rng::derive_seed(schedule.seed, &[phase.tag, 2, epoch as u64, b as u64]);
            let (loss, ok, grads) = batch_step(&store, train, chunk, phase.objective, seed, exec)?;
            if !loss.is_finite() {
                return Err(Error::NanLoss { epoch, batch: b });
            }
            loss_sum += loss * chunk.len() as f64;
            correct += ok;
            store.params_mut().accumulate_grads(&grads)?;
            adam.step(store.params_mut())?;
        }
        let train_loss = loss_sum / train.len() as f64;
        let train_acc = correct as f64 / train.len() as f64;
        let (val_loss, val_acc) = if val.is_empty() {
            (train_loss, train_acc)
        } else {
            let e = evaluate(&store, val, phase.objective, exec)?;
            (e.loss, e.slice_accuracy)
        };
        if !val_loss.is_finite() {
            return Err(Error::NanLoss { epoch, batch: 0 });
        }
        if val_loss < best_loss {
            best_loss = val_loss;
            best = store.clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        debug!(
            "{} epoch {epoch}: train {train_loss:.5} val {val_loss:.5} acc {train_acc:.3}/{val_acc:.3}",
            phase.name
        );
        history.push(EpochRecord {
            phase: phase.name.to_string(),
            epoch,
            train_loss,
            val_loss,
            train_acc,
            val_acc,
            best_val_loss: best_loss,
        });
        if since_best >= schedule.patience {
            info!(
                "{}: early stop at epoch {epoch}, best val loss {best_loss:.5}",
                phase.name
            );
            break;
        }
    }
    Ok(best)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
}

/// Trains under `mode`. `init` replaces random initialization; for the
/// pretrain/finetune modes it also stands in for the pretraining phase.
pub fn train(
    train_set: &SliceBatch,
    val_set: &SliceBatch,
    config: &ModelConfig,
    mode: TrainMode,
    schedule: &Schedule,
    init: Option<Model>,
    exec: Execution,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::DegenerateInput("no training slices".into()));
    }
    if train_set.slice_len() != config.slice_len || (!val_set.is_empty() && val_set.slice_len() != config.slice_len) {
        return Err(Error::Contract(format!(
            "batches of {}-sample slices do not match slice length {}",
            train_set.slice_len(),
            config.slice_len
        )));
    }
    let skip_pretrain = init.is_some() && matches!(mode, TrainMode::Pretrain1Finetune2 | TrainMode::Pretrain2Finetune1);
    let mut model = match init {
        Some(m) => {
            if m.config() != config {
                return Err(Error::Checkpoint(
                    "initial model was built for a different configuration".into(),
                ));
            }
            match (mode, m) {
                (TrainMode::Independent, Model::Shared(s)) => Model::Independent {
                    disc: s.clone(),
                    loc: s,
                },
                (TrainMode::Independent, m) => m,
                (_, Model::Shared(s)) => Model::Shared(s),
                (_, Model::Independent { .. }) => {
                    return Err(Error::Checkpoint(
                        "a two-network checkpoint cannot seed a shared model".into(),
                    ))
                }
            }
        }
        None => Model::init(config, mode, schedule.seed)?,
    };
    let mut history = Vec::new();
    if schedule.epochs == 0 {
        return Ok(TrainOutcome { model, history });
    }
    for (k, &(name, objective)) in mode.phases().iter().enumerate() {
        if skip_pretrain && k == 0 {
            continue;
        }
        let phase = Phase {
            name,
            tag: k as u64,
            objective,
        };
        model = match model {
            Model::Shared(s) => Model::Shared(fit(s, train_set, val_set, phase, schedule, exec, &mut history)?),
            Model::Independent { disc, loc } => match objective {
                Objective::Localization => Model::Independent {
                    disc,
                    loc: fit(loc, train_set, val_set, phase, schedule, exec, &mut history)?,
                },
                _ => Model::Independent {
                    disc: fit(disc, train_set, val_set, phase, schedule, exec, &mut history)?,
                    loc,
                },
            },
        };
    }
    Ok(TrainOutcome { model, history })
}
