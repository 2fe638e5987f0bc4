//! Training loops, evaluation and benchmarking.

mod augment;
mod eval;
mod train;

pub use augment::{apply_view, derive_seed, draw_view, two_view_augment, view_seed, AugmentParams, ViewDraw};
pub use eval::{bench, evaluate, BenchReport, EvalReport};
pub use train::{train_post, train_pre, Datasets, RunOptions, TrainOutcome};

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compress::KdViews;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::synthgen::write_file;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdConfig {
    pub lr: f64,
    /// Floor of the cosine schedule.
    pub lr_min: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { lr: 0.01, lr_min: 0.001, momentum: 0.9, weight_decay: 0.0 }
    }
}

/// `lr_min + (lr - lr_min) (1 + cos(pi step / total)) / 2`.
pub fn cosine_lr(cfg: &SgdConfig, step: usize, total: usize) -> f64 {
    if total == 0 {
        return cfg.lr;
    }
    let t = (step.min(total) as f64) / total as f64;
    cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + (PI * t).cos())
}

/// SGD with heavy-ball momentum: `v = mu v + g + wd p`, `p -= lr v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    cfg: SgdConfig,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(cfg: SgdConfig, model: &Model) -> Self {
        let velocity = model.params().iter().map(|p| vec![0.0; p.numel()]).collect();
        Self { cfg, velocity }
    }

    pub fn step(&mut self, model: &mut Model, grads: &[Option<&[f32]>], lr: f64) {
        let (mu, wd, lr) = (self.cfg.momentum as f32, self.cfg.weight_decay as f32, lr as f32);
        for ((p, v), g) in model.params_mut().into_iter().zip(&mut self.velocity).zip(grads) {
            let Some(g) = g else { continue };
            for ((w, vel), &gi) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(g.iter()) {
                *vel = mu * *vel + gi + wd * *w;
                *w -= lr * *vel;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Pre-pruning epochs.
    pub epochs: usize,
    /// Post-pruning epochs.
    pub post_epochs: usize,
    /// Samples per step; each contributes two views.
    pub batch_size: usize,
    pub optimizer: SgdConfig,
    pub augment: AugmentParams,
    pub seed: u64,
    /// Skip every contrastive term and train on smoothed CE alone.
    pub ce_only: bool,
    pub eval_batch: usize,
    /// Cap on training images per class, applied when a split is loaded.
    pub samples_per_class: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            post_epochs: 15,
            batch_size: 32,
            optimizer: SgdConfig::default(),
            augment: AugmentParams::default(),
            seed: 0,
            ce_only: false,
            eval_batch: 128,
            samples_per_class: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.post_epochs == 0 {
            return Err(Error::Config("epochs and post_epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be >= 2 samples, got {}", self.batch_size)));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0) || !(o.lr_min >= 0.0) || !(0.0..1.0).contains(&o.momentum) || !(o.weight_decay >= 0.0) {
            return Err(Error::Config(format!("bad optimizer settings {o:?}")));
        }
        if self.samples_per_class == Some(0) {
            return Err(Error::Config("samples_per_class must be >= 1".into()));
        }
        if self.eval_batch == 0 {
            return Err(Error::Config("eval_batch must be >= 1".into()));
        }
        self.augment.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompressConfig {
    pub prune_ratio: f64,
    pub kd_alpha: f64,
    pub kd_t: f64,
    pub kd_views: KdViews,
    /// Keep the pre-pruning memory dictionary instead of starting empty.
    pub carry_memory: bool,
}

impl Default for CompressConfig {
    fn default() -> Self {
        Self { prune_ratio: 0.5, kd_alpha: 0.75, kd_t: 3.0, kd_views: KdViews::Both, carry_memory: false }
    }
}

impl CompressConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.prune_ratio) {
            return Err(Error::Config(format!("prune_ratio must be in [0, 1), got {}", self.prune_ratio)));
        }
        if !(0.0..=1.0).contains(&self.kd_alpha) || !(self.kd_t > 0.0) {
            return Err(Error::Config(format!("kd_alpha in [0, 1] and kd_t > 0 required, got {} / {}", self.kd_alpha, self.kd_t)));
        }
        Ok(())
    }
}

/// Per-epoch record. Loss fields are means over the epoch's steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub k1: f64,
    pub alpha_dict: f64,
    pub l_ce: f64,
    pub l_tcl: f64,
    pub l_dict: f64,
    pub l_con: f64,
    pub l_kd: f64,
    pub l_cls: f64,
    pub l_total: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    /// Anchors without an in-batch positive.
    pub tcl_empty: usize,
    /// Anchors without any memory entry or prototype.
    pub dict_empty: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub stage: String,
    pub epochs: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub test: Option<EvalReport>,
    pub wall_time_s: f64,
    pub teacher_hash_start: Option<String>,
    pub teacher_hash_end: Option<String>,
}

pub const METRICS_HEADER: &str =
    "epoch,lr,k1,alpha_dict,l_ce,l_tcl,l_dict,l_con,l_kd,l_cls,l_total,train_acc,val_acc,tcl_empty,dict_empty";

impl RunMetrics {
    /// Per-epoch rows; values print in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(METRICS_HEADER);
        s.push('\n');
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                e.epoch, e.lr, e.k1, e.alpha_dict, e.l_ce, e.l_tcl, e.l_dict, e.l_con, e.l_kd, e.l_cls, e.l_total,
                e.train_acc, e.val_acc, e.tcl_empty, e.dict_empty
            );
        }
        s
    }

    /// Writes `metrics.csv`, `summary.json` and, with a test report,
    /// `confusion.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join("metrics.csv"), self.to_csv().as_bytes())?;
        write_file(&dir.join("summary.json"), &crate::synthgen::to_json(self))?;
        if let Some(t) = &self.test {
            write_file(&dir.join("confusion.csv"), t.confusion_csv().as_bytes())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        let c = SgdConfig::default();
        assert!((cosine_lr(&c, 0, 100) - 0.01).abs() < 1e-15);
        assert!((cosine_lr(&c, 100, 100) - 0.001).abs() < 1e-15);
        assert!((cosine_lr(&c, 50, 100) - 0.0055).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_arithmetic() {
        let mut m = crate::model::build_model(&Default::default(), 0).unwrap();
        let before = m.classifier.bias.data().to_vec();
        let mut opt = Sgd::new(SgdConfig::default(), &m);
        let n = m.params().len();
        let g = vec![1.0f32; 6];
        let mut grads: Vec<Option<&[f32]>> = vec![None; n];
        grads[9] = Some(&g);
        opt.step(&mut m, &grads, 0.1);
        opt.step(&mut m, &grads, 0.1);
        for (a, b) in m.classifier.bias.data().iter().zip(&before) {
            assert!((b - a - (0.1 + 0.1 * 1.9)).abs() < 1e-6);
        }
    }
}
