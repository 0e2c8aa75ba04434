use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ProportionVector;
use crate::autodiff::{Adam, InitScheme, ParamSet, Tape, Tensor};
use crate::data::SeriesLabel;
use crate::error::{Error, Result};
use crate::rng;

pub const HIDDEN_UNITS: usize = 100;

/// Tie-break order when several classes share the top score.
const PRIORITY: [usize; 3] = [1, 2, 0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpSchedule {
    pub epochs: usize,
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for MlpSchedule {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 1e-2,
            dropout_rate: 0.5,
            seed: 0,
        }
    }
}

/// `3 → 100 (tanh) → 3` softmax classifier over slice-label proportions.
#[derive(Clone, Debug, PartialEq)]
pub struct ProportionMlp {
    params: ParamSet,
}

const NAMES: [&str; 4] = ["hidden.weight", "hidden.bias", "out.weight", "out.bias"];

impl ProportionMlp {
    pub fn zeros() -> Self {
        let mut params = ParamSet::new();
        let shapes: [&[usize]; 4] = [&[HIDDEN_UNITS, 3], &[HIDDEN_UNITS], &[3, HIDDEN_UNITS], &[3]];
        for (name, shape) in NAMES.iter().zip(shapes) {
            params.push(*name, Tensor::zeros(shape)).expect("distinct names");
        }
        Self { params }
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut mlp = Self::zeros();
        let g = InitScheme::Glorot;
        *mlp.params.tensor_mut(0) = g.sample(&[HIDDEN_UNITS, 3], 3, HIDDEN_UNITS, rng);
        *mlp.params.tensor_mut(2) = g.sample(&[3, HIDDEN_UNITS], HIDDEN_UNITS, 3, rng);
        mlp.params.iter_mut().for_each(|(_, t)| t.set_requires_grad(true));
        mlp
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        if !Self::zeros().params.same_layout(&params) {
            return Err(Error::Checkpoint(
                "proportion classifier parameters have the wrong layout".into(),
            ));
        }
        Ok(Self { params })
    }

    /// Fits on `(proportions, true label)` pairs; every class needs at least
    /// one example.
    pub fn train(examples: &[(ProportionVector, SeriesLabel)], schedule: &MlpSchedule) -> Result<Self> {
        for label in SeriesLabel::ALL {
            if !examples.iter().any(|(_, l)| *l == label) {
                return Err(Error::Data(format!(
                    "no training example of class {label} for the proportion classifier"
                )));
            }
        }
        let mut mlp = Self::init(&mut rng::stream(schedule.seed, &[0]));
        let mut adam = Adam::new(schedule.learning_rate);
        let inputs: Vec<f64> = examples.iter().flat_map(|(p, _)| p.0).collect();
        let n = examples.len();
        for epoch in 0..schedule.epochs {
            let mut tape = Tape::new();
            let vars = mlp.params.bind(&mut tape);
            let x = tape.constant(&[n, 3], inputs.clone())?;
            let mut drop_rng = rng::stream(schedule.seed, &[1, epoch as u64]);
            let logits = mlp.logits(&mut tape, &vars, x, Some((schedule.dropout_rate, &mut drop_rng)))?;
            let mut total = None;
            for (i, (_, label)) in examples.iter().enumerate() {
                let row = tape.slice_rows(logits, i, 1)?;
                let p = tape.softmax(row, None)?;
                let l = tape.cross_entropy(p, label.index())?;
                total = Some(match total {
                    Some(t) => tape.add(t, l)?,
                    None => l,
                });
            }
            let mean = tape.scale(total.expect("examples checked non-empty"), 1.0 / n as f64);
            if !tape.scalar(mean).is_finite() {
                return Err(Error::NanLoss { epoch, batch: 0 });
            }
            tape.backward(mean)?;
            let grads = mlp.params.grads_from(&tape, &vars);
            mlp.params.accumulate_grads(&grads)?;
            adam.step(&mut mlp.params)?;
        }
        Ok(mlp)
    }

    fn logits<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        vars: &[crate::autodiff::Var],
        x: crate::autodiff::Var,
        dropout: Option<(f64, &mut R)>,
    ) -> Result<crate::autodiff::Var> {
        let w1 = tape.transpose(vars[0])?;
        let z = tape.matmul(x, w1)?;
        let z = tape.add_row(z, vars[1])?;
        let mut hidden = tape.tanh(z);
        if let Some((rate, rng)) = dropout {
            hidden = tape.dropout(hidden, rate, true, rng)?;
        }
        let w2 = tape.transpose(vars[2])?;
        let o = tape.matmul(hidden, w2)?;
        tape.add_row(o, vars[3])
    }

    pub fn probabilities(&self, p: &ProportionVector) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars: Vec<_> = self
            .params
            .iter()
            .map(|(_, t)| tape.constant(t.shape(), t.data().to_vec()))
            .collect::<Result<_>>()?;
        let x = tape.constant(&[1, 3], p.0.to_vec())?;
        let logits = self.logits::<rand_chacha::ChaCha8Rng>(&mut tape, &vars, x, None)?;
        let probs = tape.softmax(logits, None)?;
        Ok(tape.value(probs).to_vec())
    }

    /// Most probable series label; ties resolve toward AFf, then AFp, then N.
    pub fn apply(&self, p: &ProportionVector) -> Result<SeriesLabel> {
        let probs = self.probabilities(p)?;
        let mut best = PRIORITY[0];
        for &k in &PRIORITY[1..] {
            if probs[k] > probs[best] {
                best = k;
            }
        }
        SeriesLabel::from_index(best)
    }
}
