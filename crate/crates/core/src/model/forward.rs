use rand::Rng;

use super::layers::{attention_pool, bilstm, project_points, AttentionVars, LstmCellVars};
use super::params::{AttentionIdx, BiLstmIdx, ParamStore};
use crate::autodiff::{Axis, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Dropout active.
    pub training: bool,
    /// Feed beat vectors straight to slice attention, skipping the
    /// beat-level recurrence. Test hook only.
    pub bypass_beat_recurrence: bool,
}

impl ForwardOptions {
    pub fn train() -> Self {
        Self {
            training: true,
            ..Self::default()
        }
    }
}

/// Activations recorded on a tape for one slice. Only the valid prefix of
/// the slice is ever recorded.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    /// `[1 × n_classes]`
    pub slice_probs: Var,
    /// `[n_valid × 1]`
    pub point_probs: Var,
    /// One `[1 × len]` row per valid beat.
    pub beat_weights: Vec<Var>,
    /// `[1 × valid beats]`
    pub slice_weights: Var,
    /// `[1 × 2h]`
    pub slice_vector: Var,
    pub n_valid: usize,
}

/// Plain-valued forward result for one slice.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub slice_probs: Vec<f64>,
    /// Length `slice_len`; 0 where `point_valid` is false.
    pub point_probs: Vec<f64>,
    pub point_valid: Vec<bool>,
    /// `M × T`, row-major; 0 at masked points.
    pub beat_attention: Vec<f64>,
    /// Length `M`; 0 for fully masked beats.
    pub slice_attention: Vec<f64>,
    pub slice_vector: Vec<f64>,
}

impl ForwardOutput {
    pub fn beat_row(&self, m: usize, beat_len: usize) -> &[f64] {
        &self.beat_attention[m * beat_len..(m + 1) * beat_len]
    }

    /// Index of the most probable class; ties go to the lower index.
    pub fn predicted_class(&self) -> usize {
        argmax(&self.slice_probs)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Length of the true-prefix of `mask`; errors when the mask is not a prefix
/// or selects nothing.
pub fn valid_prefix(mask: &[bool]) -> Result<usize> {
    let n = mask.iter().take_while(|&&m| m).count();
    if mask[n..].iter().any(|&m| m) {
        return Err(Error::Contract(
            "mask must be a run of valid points followed by padding".into(),
        ));
    }
    if n == 0 {
        return Err(Error::DegenerateMask("slice has no valid points".into()));
    }
    Ok(n)
}

fn cells(vars: &[Var], idx: BiLstmIdx) -> (LstmCellVars, LstmCellVars) {
    let cell = |c: super::params::LstmCellIdx| LstmCellVars {
        w_ih: vars[c.w_ih],
        w_hh: vars[c.w_hh],
        bias: vars[c.bias],
    };
    (cell(idx.fwd), cell(idx.bwd))
}

fn attention(vars: &[Var], idx: AttentionIdx) -> AttentionVars {
    AttentionVars {
        weight: vars[idx.weight],
        bias: vars[idx.bias],
        context: vars[idx.context],
    }
}

/// Records the network on `tape`. `vars` are the parameters bound with
/// [`ParamStore::bind`].
pub fn forward_on_tape<R: Rng + ?Sized>(
    store: &ParamStore,
    tape: &mut Tape,
    vars: &[Var],
    samples: &[f64],
    mask: &[bool],
    opts: ForwardOptions,
    rng: &mut R,
) -> Result<ForwardVars> {
    let cfg = store.config();
    let layout = store.layout();
    if samples.len() != cfg.slice_len || mask.len() != cfg.slice_len {
        return Err(Error::Contract(format!(
            "slice of {} samples with {} mask entries, expected {}",
            samples.len(),
            mask.len(),
            cfg.slice_len
        )));
    }
    let n = valid_prefix(mask)?;
    let t_len = cfg.beat_len;

    let x = tape.constant(&[n, 1], samples[..n].to_vec())?;
    let proj = layout.proj.map(|(w, b)| (vars[w], vars[b]));
    let x = project_points(tape, x, proj)?;
    let (f, b) = cells(vars, layout.point_lstm);
    let h = bilstm(tape, x, f, b)?;

    let beat_attn = attention(vars, layout.beat_attn);
    let mut beat_vecs = Vec::new();
    let mut beat_weights = Vec::new();
    for start in (0..n).step_by(t_len) {
        let len = t_len.min(n - start);
        let rows = tape.slice_rows(h, start, len)?;
        let p = attention_pool(tape, rows, beat_attn, None)?;
        beat_vecs.push(p.pooled);
        beat_weights.push(p.weights);
    }
    let c = tape.concat(&beat_vecs, Axis::Rows)?;
    let beats = if opts.bypass_beat_recurrence {
        c
    } else {
        let (f, b) = cells(vars, layout.beat_lstm);
        bilstm(tape, c, f, b)?
    };
    let s = attention_pool(tape, beats, attention(vars, layout.slice_attn), None)?;

    let wd_t = tape.transpose(vars[layout.head1])?;
    let logits = tape.matmul(s.pooled, wd_t)?;
    let slice_probs = tape.softmax(logits, None)?;

    let head_in = if cfg.concat_slice_features {
        let rep = tape.concat(&vec![s.pooled; n], Axis::Rows)?;
        tape.concat(&[h, rep], Axis::Cols)?
    } else {
        h
    };
    let w1_t = tape.transpose(vars[layout.head2_hidden_w])?;
    let z = tape.matmul(head_in, w1_t)?;
    let z = tape.add_row(z, vars[layout.head2_hidden_b])?;
    let hidden = tape.tanh(z);
    let hidden = tape.dropout(hidden, cfg.dropout_rate, opts.training, rng)?;
    let w2_t = tape.transpose(vars[layout.head2_out_w])?;
    let o = tape.matmul(hidden, w2_t)?;
    let o = tape.add_row(o, vars[layout.head2_out_b])?;
    let point_probs = tape.sigmoid(o);

    Ok(ForwardVars {
        slice_probs,
        point_probs,
        beat_weights,
        slice_weights: s.weights,
        slice_vector: s.pooled,
        n_valid: n,
    })
}

impl ForwardVars {
    pub fn read(&self, tape: &Tape, slice_len: usize, beat_len: usize) -> ForwardOutput {
        let m = slice_len / beat_len;
        let mut point_probs = vec![0.0; slice_len];
        point_probs[..self.n_valid].copy_from_slice(tape.value(self.point_probs));
        let mut beat_attention = vec![0.0; m * beat_len];
        for (k, w) in self.beat_weights.iter().enumerate() {
            let row = tape.value(*w);
            beat_attention[k * beat_len..k * beat_len + row.len()].copy_from_slice(row);
        }
        let mut slice_attention = vec![0.0; m];
        let sw = tape.value(self.slice_weights);
        slice_attention[..sw.len()].copy_from_slice(sw);
        ForwardOutput {
            slice_probs: tape.value(self.slice_probs).to_vec(),
            point_probs,
            point_valid: (0..slice_len).map(|i| i < self.n_valid).collect(),
            beat_attention,
            slice_attention,
            slice_vector: tape.value(self.slice_vector).to_vec(),
        }
    }
}

/// Forward pass with explicit options; `rng` feeds dropout when training.
pub fn forward_with<R: Rng + ?Sized>(
    store: &ParamStore,
    samples: &[f64],
    mask: &[bool],
    opts: ForwardOptions,
    rng: &mut R,
) -> Result<ForwardOutput> {
    let mut tape = Tape::new();
    let vars = store.params().iter().map(|(_, t)| {
        let shape = t.shape().to_vec();
        tape.constant(&shape, t.data().to_vec())
    });
    let vars = vars.collect::<Result<Vec<_>>>()?;
    let fv = forward_on_tape(store, &mut tape, &vars, samples, mask, opts, rng)?;
    let cfg = store.config();
    Ok(fv.read(&tape, cfg.slice_len, cfg.beat_len))
}

/// Inference-mode forward pass.
pub fn forward(store: &ParamStore, samples: &[f64], mask: &[bool]) -> Result<ForwardOutput> {
    forward_with(
        store,
        samples,
        mask,
        ForwardOptions::default(),
        &mut crate::rng::stream(0, &[]),
    )
}
