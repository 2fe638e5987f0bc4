//! Teacher snapshots, structured channel pruning, distillation loss and the
//! post-pruning objectives.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contrast::blend;
use crate::error::{Error, Result};
use crate::model::{Conv, Linear, Model, ParamCount};
use crate::tensor::{kernels, Scalar, Tape, Tensor, Var};

/// Frozen copy of a model used only to produce soft targets.
#[derive(Clone, Debug)]
pub struct TeacherSnapshot {
    model: Arc<Model>,
}

pub fn snapshot_teacher(model: &Model) -> TeacherSnapshot {
    TeacherSnapshot { model: Arc::new(model.clone()) }
}

impl TeacherSnapshot {
    pub fn logits(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.model.logits(x)
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// SHA-256 of the serialized parameters.
    pub fn param_hash(&self) -> String {
        hex::encode(Sha256::digest(self.model.to_bytes()))
    }
}

/// Per-stage record of a pruning pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StagePrune {
    pub stage: usize,
    pub original_channels: usize,
    /// Strictly increasing retained output-channel indices.
    pub retained: Vec<usize>,
    /// L1 norm of each original filter including its bias.
    pub l1_scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub ratio_requested: f64,
    /// Fraction of conv output channels removed.
    pub ratio_achieved: f64,
    pub stages: Vec<StagePrune>,
    pub params_before: usize,
    pub params_after: usize,
    pub conv_params_before: usize,
    pub conv_params_after: usize,
    /// Counts without the projection head, i.e. the deployable network.
    pub deploy_params_before: usize,
    pub deploy_params_after: usize,
}

/// Channels kept for a stage of `c` channels.
pub fn retained_count(c: usize, ratio: f64) -> usize {
    (((1.0 - ratio) * c as f64).round() as usize).clamp(1, c)
}

fn deploy_params(pc: &ParamCount) -> usize {
    pc.layers.iter().filter(|(n, _)| !n.starts_with("proj.")).map(|(_, n)| n).sum()
}

/// One-shot structured pruning by filter L1 norm.
///
/// Every conv stage keeps its `round((1 - ratio) * C_out)` highest-scoring
/// output channels (at least one; ties favour lower indices). The next
/// stage's input slices, and the input rows of the classifier and projection
/// head, follow the retained channels.
pub fn prune_structured(model: &Model, ratio: f64) -> Result<(Model, PruneReport)> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!("prune ratio must be in [0, 1), got {ratio}")));
    }
    let mut stages = Vec::with_capacity(model.convs.len());
    let mut convs = Vec::with_capacity(model.convs.len());
    let mut prev_keep: Vec<usize> = (0..model.arch.in_channels).collect();
    for (si, conv) in model.convs.iter().enumerate() {
        let ws = conv.weight.shape();
        let (c_out, c_in, k) = (ws[0], ws[1], ws[2] * ws[3]);
        let per = c_in * k;
        let scores: Vec<f64> = (0..c_out)
            .map(|o| {
                conv.weight.data()[o * per..(o + 1) * per].iter().map(|v| v.abs() as f64).sum::<f64>()
                    + conv.bias.data()[o].abs() as f64
            })
            .collect();
        let n_keep = retained_count(c_out, ratio);
        let mut order: Vec<usize> = (0..c_out).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let mut keep: Vec<usize> = order[..n_keep].to_vec();
        keep.sort_unstable();

        let mut w = Vec::with_capacity(n_keep * prev_keep.len() * k);
        for &o in &keep {
            for &i in &prev_keep {
                let start = (o * c_in + i) * k;
                w.extend_from_slice(&conv.weight.data()[start..start + k]);
            }
        }
        let bias = keep.iter().map(|&o| conv.bias.data()[o]).collect();
        convs.push(Conv {
            weight: Tensor::new(&[n_keep, prev_keep.len(), ws[2], ws[3]], w)?,
            bias: Tensor::new(&[n_keep], bias)?,
        });
        stages.push(StagePrune { stage: si + 1, original_channels: c_out, retained: keep.clone(), l1_scores: scores });
        prev_keep = keep;
    }

    let slice_rows = |l: &Linear| -> Result<Linear> {
        let n_out = l.n_out();
        let mut w = Vec::with_capacity(prev_keep.len() * n_out);
        for &r in &prev_keep {
            w.extend_from_slice(&l.weight.data()[r * n_out..(r + 1) * n_out]);
        }
        Ok(Linear { weight: Tensor::new(&[prev_keep.len(), n_out], w)?, bias: l.bias.clone() })
    };
    let classifier = slice_rows(&model.classifier)?;
    let projection = match &model.projection {
        Some(p) => Some(crate::model::ProjectionHead { fc1: slice_rows(&p.fc1)?, fc2: p.fc2.clone() }),
        None => None,
    };
    let mut arch = model.arch.clone();
    arch.widths = stages.iter().map(|s| s.retained.len()).collect();
    let pruned = Model { arch, convs, classifier, projection };

    let (before, after) = (model.param_count(), pruned.param_count());
    let total_before: usize = stages.iter().map(|s| s.original_channels).sum();
    let total_after: usize = stages.iter().map(|s| s.retained.len()).sum();
    let report = PruneReport {
        ratio_requested: ratio,
        ratio_achieved: 1.0 - total_after as f64 / total_before as f64,
        stages,
        params_before: before.total,
        params_after: after.total,
        conv_params_before: model.conv_param_count(),
        conv_params_after: pruned.conv_param_count(),
        deploy_params_before: deploy_params(&before),
        deploy_params_after: deploy_params(&after),
    };
    Ok((pruned, report))
}

/// Which augmented views enter the distillation term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KdViews {
    /// First view only.
    First,
    /// Both views.
    Both,
}

/// `T^2 / |V| * sum_v mean_batch KL(softmax(o_t / T) || softmax(o_s / T))`.
///
/// Teacher logits are plain values, so no gradient reaches the teacher.
pub fn kd_loss<T: Scalar>(
    tape: &mut Tape<T>,
    student: &[Var],
    teacher: &[Tensor<T>],
    temperature: f64,
) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("KD temperature must be > 0, got {temperature}")));
    }
    if student.is_empty() || student.len() != teacher.len() {
        return Err(Error::InvalidArgument(format!(
            "kd_loss: {} student views vs {} teacher views",
            student.len(),
            teacher.len()
        )));
    }
    let inv_t = T::lit(1.0 / temperature);
    let mut total: Option<Var> = None;
    for (&s, t) in student.iter().zip(teacher) {
        if tape.value(s).shape() != t.shape() || t.shape().len() != 2 {
            return Err(Error::shape(
                "kd_loss",
                format!("student {:?} vs teacher {:?}", tape.value(s).shape(), t.shape()),
            ));
        }
        let (rows, c) = (t.shape()[0], t.shape()[1]);
        let scaled: Vec<T> = t.data().iter().map(|&v| v * inv_t).collect();
        let log_pt = kernels::log_softmax_rows(&scaled, c);
        let pt: Vec<T> = log_pt.iter().map(|v| v.exp()).collect();
        let log_pt = tape.constant(Tensor::new(&[rows, c], log_pt)?);
        let pt = tape.constant(Tensor::new(&[rows, c], pt)?);
        let ss = tape.scale(s, inv_t);
        let log_ps = tape.log_softmax(ss);
        let diff = tape.sub(log_pt, log_ps)?;
        let kl = tape.mul(pt, diff)?;
        let kl = tape.sum(kl);
        let kl = tape.scale(kl, T::lit(1.0 / rows as f64));
        total = Some(match total {
            Some(acc) => tape.add(acc, kl)?,
            None => kl,
        });
    }
    let factor = temperature * temperature / student.len() as f64;
    Ok(tape.scale(total.expect("non-empty"), T::lit(factor)))
}

/// `L_cls = (1 - kd_alpha) L_ce + kd_alpha L_kd` and
/// `L_post = (1 - lambda) L_cls + lambda L_con`.
pub fn post_objective<T: Scalar>(
    tape: &mut Tape<T>,
    ce: Var,
    kd: Var,
    con: Var,
    kd_alpha: f64,
    lambda: f64,
) -> Result<(Var, Var)> {
    if !(0.0..=1.0).contains(&kd_alpha) {
        return Err(Error::InvalidArgument(format!("kd_alpha must be in [0, 1], got {kd_alpha}")));
    }
    let cls = blend(tape, ce, kd, kd_alpha)?;
    let post = blend(tape, cls, con, lambda)?;
    Ok((cls, post))
}

/// Scalar form of [`post_objective`]: returns `(L_cls, L_post)`.
pub fn post_objective_values(ce: f64, kd: f64, con: f64, kd_alpha: f64, lambda: f64) -> (f64, f64) {
    let cls = (1.0 - kd_alpha) * ce + kd_alpha * kd;
    (cls, (1.0 - lambda) * cls + lambda * con)
}

/// Drops the projection head; backbone and classifier are untouched.
pub fn strip_for_deployment(model: &Model) -> Model {
    let mut m = model.clone();
    m.projection = None;
    m.arch.projection = None;
    m
}
