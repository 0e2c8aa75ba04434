use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::forward::ForwardVars;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// Which loss terms drive training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Joint,
    /// Slice classification only.
    Discrimination,
    /// Per-point localization only.
    Localization,
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    /// Unweighted slice cross-entropy.
    pub discrimination: Var,
    /// Unweighted mean point cross-entropy over valid points.
    pub localization: Var,
}

/// `w_d·L_d + w_l·L_l`
pub fn combine_losses(l_d: f64, l_l: f64, cfg: &ModelConfig) -> f64 {
    cfg.w_d * l_d + cfg.w_l * l_l
}

/// Records the slice loss on `tape`. `point_labels` covers the whole slice;
/// only the first `fv.n_valid` entries take part.
pub fn joint_loss(
    tape: &mut Tape,
    fv: &ForwardVars,
    slice_label: usize,
    point_labels: &[u8],
    cfg: &ModelConfig,
    objective: Objective,
) -> Result<LossVars> {
    if fv.n_valid == 0 {
        return Err(Error::DegenerateInput("no unmasked points in slice".into()));
    }
    if point_labels.len() < fv.n_valid {
        return Err(Error::dim("joint_loss", &[fv.n_valid], &[point_labels.len()]));
    }
    let targets: Vec<f64> = point_labels[..fv.n_valid].iter().map(|&l| f64::from(l)).collect();
    let l_d = tape.cross_entropy(fv.slice_probs, slice_label)?;
    let l_l = tape.binary_cross_entropy(fv.point_probs, &targets)?;
    let wd = tape.scale(l_d, cfg.w_d);
    let wl = tape.scale(l_l, cfg.w_l);
    let total = match objective {
        Objective::Joint => tape.add(wd, wl)?,
        Objective::Discrimination => wd,
        Objective::Localization => wl,
    };
    Ok(LossVars {
        total,
        discrimination: l_d,
        localization: l_l,
    })
}
