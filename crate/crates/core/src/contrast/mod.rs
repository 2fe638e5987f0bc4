//! Representation-learning objectives: label-smoothed cross-entropy, tuned
//! contrastive loss (TCL) with its `k1` ramp, the per-class memory dictionary
//! and the dictionary loss, and the blends into `L_con` and `L_pre`.

mod dictionary;
mod losses;
mod memory;

pub use dictionary::dictionary_loss;
pub use losses::{ce_label_smoothed, tcl_loss};
pub use memory::{memory_update, ClassMemory, Retrieval};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Var};

/// A scalar loss on the tape plus the number of anchors that contributed.
#[derive(Clone, Copy, Debug)]
pub struct Loss {
    pub var: Var,
    pub anchors: usize,
}

impl Loss {
    /// True when no anchor was valid and the loss is the constant 0.
    pub fn is_empty(&self) -> bool {
        self.anchors == 0
    }
}

/// Contrastive-stage hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContrastConfig {
    /// TCL temperature.
    pub tau: f64,
    pub k1_start: f64,
    pub k1_end: f64,
    /// Epochs over which `k1` ramps from `k1_start` to `k1_end`.
    pub k1_ramp_epochs: usize,
    pub k2: f64,
    pub tau_dict: f64,
    /// Stored positives retrieved per anchor.
    pub mem_positives: usize,
    /// Hard negatives retrieved per anchor.
    pub mem_negatives: usize,
    pub proto_weight: f64,
    pub alpha_dict: f64,
    pub alpha_ramp_epochs: usize,
    /// Weight of the contrastive term against the classification term.
    pub lambda: f64,
    pub label_smoothing: f64,
    pub memory_capacity: usize,
    pub momentum: f64,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            k1_start: 0.0,
            k1_end: 0.2,
            k1_ramp_epochs: 5,
            k2: 1.0,
            tau_dict: 0.1,
            mem_positives: 8,
            mem_negatives: 32,
            proto_weight: 0.5,
            alpha_dict: 0.5,
            alpha_ramp_epochs: 3,
            lambda: 0.5,
            label_smoothing: 0.1,
            memory_capacity: 512,
            momentum: 0.99,
        }
    }
}

impl ContrastConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be in [0, 1), got {v}")))
            }
        };
        if !(self.tau > 0.0) || !(self.tau_dict > 0.0) {
            return Err(Error::Config("tau and tau_dict must be > 0".into()));
        }
        if self.k1_start < 0.0 || self.k1_end < 0.0 || self.k2 < 0.0 || self.proto_weight < 0.0 {
            return Err(Error::Config("k1, k2 and proto_weight must be >= 0".into()));
        }
        unit("alpha_dict", self.alpha_dict)?;
        unit("lambda", self.lambda)?;
        unit("label_smoothing", self.label_smoothing)?;
        unit("momentum", self.momentum)?;
        if self.memory_capacity == 0 || self.mem_positives == 0 || self.mem_negatives == 0 {
            return Err(Error::Config("memory_capacity, mem_positives and mem_negatives must be >= 1".into()));
        }
        Ok(())
    }

    pub fn k1(&self, epoch: usize) -> f64 {
        k1_schedule(epoch, self.k1_ramp_epochs, self.k1_start, self.k1_end)
    }

    pub fn alpha(&self, epoch: usize) -> f64 {
        alpha_schedule(epoch, self.alpha_ramp_epochs, self.alpha_dict)
    }
}

/// Ramp position `t = min(1, (e - 1) / R)` for 1-based epoch `e`; `R = 0`
/// means no ramp.
pub fn ramp_t(epoch: usize, ramp: usize) -> f64 {
    if ramp == 0 {
        return 1.0;
    }
    (epoch.saturating_sub(1) as f64 / ramp as f64).min(1.0)
}

/// `k1(e) = (1 - t) k1_start + t k1_end`.
pub fn k1_schedule(epoch: usize, ramp: usize, k1_start: f64, k1_end: f64) -> f64 {
    let t = ramp_t(epoch, ramp);
    (1.0 - t) * k1_start + t * k1_end
}

/// `alpha_dict(e)` ramps from 0 to `alpha` with the same shape as `k1`.
pub fn alpha_schedule(epoch: usize, ramp: usize, alpha: f64) -> f64 {
    ramp_t(epoch, ramp) * alpha
}

/// `L_con = (1 - alpha) L_tcl + alpha L_dict` and
/// `L_pre = (1 - lambda) L_ce + lambda L_con` on the tape.
pub fn pre_objective<T: Scalar>(
    tape: &mut Tape<T>,
    ce: Var,
    tcl: Var,
    dict: Var,
    alpha: f64,
    lambda: f64,
) -> Result<(Var, Var)> {
    let con = blend(tape, tcl, dict, alpha)?;
    let pre = blend(tape, ce, con, lambda)?;
    Ok((con, pre))
}

/// `(1 - w) a + w b`.
pub fn blend<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var, w: f64) -> Result<Var> {
    let sa = tape.scale(a, T::lit(1.0 - w));
    let sb = tape.scale(b, T::lit(w));
    tape.add(sa, sb)
}

/// Scalar form of [`pre_objective`]: returns `(L_con, L_pre)`.
pub fn pre_objective_values(ce: f64, tcl: f64, dict: f64, alpha: f64, lambda: f64) -> (f64, f64) {
    let con = (1.0 - alpha) * tcl + alpha * dict;
    (con, (1.0 - lambda) * ce + lambda * con)
}
