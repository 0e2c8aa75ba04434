use rand::Rng;

use super::config::ModelConfig;
use crate::autodiff::{ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Indices of one direction of an LSTM in the parameter list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmCellIdx {
    /// `[4h × d_in]`, gate order input, forget, candidate, output.
    pub w_ih: usize,
    /// `[4h × h]`
    pub w_hh: usize,
    /// `[4h]`
    pub bias: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BiLstmIdx {
    pub fwd: LstmCellIdx,
    pub bwd: LstmCellIdx,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionIdx {
    /// `[a × d]`
    pub weight: usize,
    /// `[a]`
    pub bias: usize,
    /// `[a]`
    pub context: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    /// `[d_proj × 1]` weight and `[d_proj]` bias.
    pub proj: Option<(usize, usize)>,
    pub point_lstm: BiLstmIdx,
    pub beat_attn: AttentionIdx,
    pub beat_lstm: BiLstmIdx,
    pub slice_attn: AttentionIdx,
    /// `[n_classes × 2h]`
    pub head1: usize,
    /// `[2h × in]`, `[2h]`, `[1 × 2h]`, `[1]`
    pub head2_hidden_w: usize,
    pub head2_hidden_b: usize,
    pub head2_out_w: usize,
    pub head2_out_b: usize,
}

/// Which loss terms a parameter can receive gradient from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    Head1,
    Head2,
}

/// All trainable tensors of the network, laid out by [`ModelConfig`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    config: ModelConfig,
    params: ParamSet,
    layout: Layout,
}

struct Builder<'a, R: Rng + ?Sized> {
    set: ParamSet,
    cfg: &'a ModelConfig,
    rng: &'a mut R,
}

impl<R: Rng + ?Sized> Builder<'_, R> {
    fn weight(&mut self, name: &str, rows: usize, cols: usize) -> Result<usize> {
        let t = self.cfg.init_scheme.sample(&[rows, cols], cols, rows, self.rng);
        self.set.push(name, t)
    }

    fn vector(&mut self, name: &str, n: usize) -> Result<usize> {
        let t = self.cfg.init_scheme.sample(&[n], n, 1, self.rng);
        self.set.push(name, t)
    }

    fn zeros(&mut self, name: &str, n: usize) -> Result<usize> {
        self.set.push(name, Tensor::zeros(&[n]))
    }

    fn lstm(&mut self, prefix: &str, d_in: usize) -> Result<BiLstmIdx> {
        let h = self.cfg.d_hidden;
        let mut cell = |dir: &str| -> Result<LstmCellIdx> {
            Ok(LstmCellIdx {
                w_ih: self.weight(&format!("{prefix}.{dir}.w_ih"), 4 * h, d_in)?,
                w_hh: self.weight(&format!("{prefix}.{dir}.w_hh"), 4 * h, h)?,
                bias: self.zeros(&format!("{prefix}.{dir}.bias"), 4 * h)?,
            })
        };
        Ok(BiLstmIdx {
            fwd: cell("fwd")?,
            bwd: cell("bwd")?,
        })
    }

    fn attention(&mut self, prefix: &str) -> Result<AttentionIdx> {
        let (a, d) = (self.cfg.attn_dim(), self.cfg.feature_dim());
        Ok(AttentionIdx {
            weight: self.weight(&format!("{prefix}.weight"), a, d)?,
            bias: self.zeros(&format!("{prefix}.bias"), a)?,
            context: self.vector(&format!("{prefix}.context"), a)?,
        })
    }
}

impl ParamStore {
    /// Fresh parameters: weight matrices and attention context vectors from
    /// the configured init scheme, biases zero.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            set: ParamSet::new(),
            cfg: config,
            rng,
        };
        let d2 = config.feature_dim();
        let proj = if config.d_proj > 0 {
            Some((
                b.weight("proj.weight", config.d_proj, 1)?,
                b.zeros("proj.bias", config.d_proj)?,
            ))
        } else {
            None
        };
        let point_lstm = b.lstm("point_lstm", config.point_input_dim())?;
        let beat_attn = b.attention("beat_attn")?;
        let beat_lstm = b.lstm("beat_lstm", d2)?;
        let slice_attn = b.attention("slice_attn")?;
        let head1 = b.weight("head1.weight", config.n_classes, d2)?;
        let head2_hidden_w = b.weight("head2.hidden.weight", d2, config.head2_input_dim())?;
        let head2_hidden_b = b.zeros("head2.hidden.bias", d2)?;
        let head2_out_w = b.weight("head2.out.weight", 1, d2)?;
        let head2_out_b = b.zeros("head2.out.bias", 1)?;
        Ok(Self {
            config: config.clone(),
            params: b.set,
            layout: Layout {
                proj,
                point_lstm,
                beat_attn,
                beat_lstm,
                slice_attn,
                head1,
                head2_hidden_w,
                head2_hidden_b,
                head2_out_w,
                head2_out_b,
            },
        })
    }

    /// All-zero parameters with the layout of `config`.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        let mut rng = crate::rng::stream(0, &[]);
        let mut store = Self::init(config, &mut rng)?;
        store.params.iter_mut().for_each(|(_, t)| t.data_mut().fill(0.0));
        Ok(store)
    }

    /// Adopts loaded parameters after checking them against `config`.
    pub fn from_params(config: &ModelConfig, params: ParamSet) -> Result<Self> {
        let template = Self::zeros(config)?;
        if !template.params.same_layout(&params) {
            let expected: Vec<String> = template
                .params
                .iter()
                .map(|(n, t)| format!("{n}{:?}", t.shape()))
                .collect();
            let found: Vec<String> = params.iter().map(|(n, t)| format!("{n}{:?}", t.shape())).collect();
            return Err(Error::Checkpoint(format!(
                "parameters do not match config: expected [{}], found [{}]",
                expected.join(", "),
                found.join(", ")
            )));
        }
        Ok(Self { params, ..template })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet {
        self.params
    }

    pub fn group(&self, idx: usize) -> ParamGroup {
        let name = self.params.name(idx);
        if name.starts_with("head1.") {
            ParamGroup::Head1
        } else if name.starts_with("head2.") {
            ParamGroup::Head2
        } else {
            ParamGroup::Encoder
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.bind(tape)
    }
}
