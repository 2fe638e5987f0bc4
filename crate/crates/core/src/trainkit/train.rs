use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::augment::{apply_view, derive_seed, draw_view, view_seed};
use super::eval::evaluate;
use super::{cosine_lr, CompressConfig, EpochMetrics, RunMetrics, Sgd, TrainConfig};
use crate::compress::{kd_loss, post_objective, KdViews, TeacherSnapshot};
use crate::contrast::{blend, ce_label_smoothed, dictionary_loss, memory_update, pre_objective, tcl_loss, ClassMemory, ContrastConfig};
use crate::corpus::ImageSet;
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, Model};
use crate::tensor::{kernels, Tape, Tensor};

pub struct Datasets<'a> {
    pub train: &'a ImageSet,
    pub val: &'a ImageSet,
    pub test: Option<&'a ImageSet>,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Where `metrics.csv`, `summary.json`, `confusion.csv`, `model.ckpt`
    /// and `last_good.ckpt` are written.
    pub out_dir: Option<PathBuf>,
    /// Print one line per epoch to stderr.
    pub verbose: bool,
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy.
    pub model: Model,
    pub metrics: RunMetrics,
    /// Memory dictionary at the end of the run.
    pub memory: ClassMemory,
}

enum Stage<'a> {
    Pre,
    Post { teacher: &'a TeacherSnapshot, compress: &'a CompressConfig },
}

#[derive(Default)]
struct Sums {
    ce: f64,
    tcl: f64,
    dict: f64,
    con: f64,
    kd: f64,
    cls: f64,
    total: f64,
    correct: usize,
    seen: usize,
    tcl_empty: usize,
    dict_empty: usize,
    steps: usize,
}

/// Pre-pruning stage: `L_pre = (1 - lambda) L_ce + lambda L_con`.
pub fn train_pre(
    data: &Datasets,
    model: Model,
    contrast: &ContrastConfig,
    train: &TrainConfig,
    opts: &RunOptions,
) -> Result<TrainOutcome> {
    run(Stage::Pre, data, model, contrast, train, train.epochs, None, opts)
}

/// Post-pruning stage: `L_post = (1 - lambda) L_cls + lambda L_con` with
/// distillation from `teacher`. `memory` is used only when
/// `compress.carry_memory` is set.
#[allow(clippy::too_many_arguments)]
pub fn train_post(
    data: &Datasets,
    student: Model,
    teacher: &TeacherSnapshot,
    contrast: &ContrastConfig,
    compress: &CompressConfig,
    train: &TrainConfig,
    memory: Option<ClassMemory>,
    opts: &RunOptions,
) -> Result<TrainOutcome> {
    compress.validate()?;
    let t = &teacher.model().arch;
    if (t.img_size, t.in_channels, t.num_classes) != (student.arch.img_size, student.arch.in_channels, student.arch.num_classes) {
        return Err(Error::InvalidArgument("teacher and student input geometry or class count differ".into()));
    }
    let memory = if compress.carry_memory { memory } else { None };
    run(Stage::Post { teacher, compress }, data, student, contrast, train, train.post_epochs, memory, opts)
}

#[allow(clippy::too_many_arguments)]
fn run(
    stage: Stage,
    data: &Datasets,
    mut model: Model,
    contrast: &ContrastConfig,
    train: &TrainConfig,
    epochs: usize,
    memory: Option<ClassMemory>,
    opts: &RunOptions,
) -> Result<TrainOutcome> {
    contrast.validate()?;
    train.validate()?;
    let started = Instant::now();
    let c = model.arch.num_classes;
    for (name, set) in [("train", Some(data.train)), ("val", Some(data.val)), ("test", data.test)] {
        if let Some(s) = set {
            if s.num_classes() != c || s.size != model.arch.img_size {
                return Err(Error::InvalidArgument(format!(
                    "{name} split has {} classes at {}px, model expects {c} at {}px",
                    s.num_classes(),
                    s.size,
                    model.arch.img_size
                )));
            }
        }
    }
    if data.train.len() < 2 {
        return Err(Error::InvalidArgument("training split needs at least 2 samples".into()));
    }
    let ce_only = train.ce_only;
    let dim = model.arch.projection.map(|p| p.dim);
    if !ce_only && dim.is_none() {
        return Err(Error::InvalidArgument("contrastive training needs a projection head".into()));
    }
    let mut memory = match memory {
        Some(m) if Some(m.dim()) == dim && m.num_classes() == c => m,
        _ => ClassMemory::new(c, dim.unwrap_or(1), contrast.memory_capacity),
    };
    let (stage_name, salt) = match stage {
        Stage::Pre => ("pre", 1u64),
        Stage::Post { .. } => ("post", 2u64),
    };
    let run_seed = derive_seed(&[train.seed, salt]);
    let teacher_hash_start = match &stage {
        Stage::Post { teacher, .. } => Some(teacher.param_hash()),
        Stage::Pre => None,
    };

    let last_good = opts.out_dir.as_ref().map(|d| d.join("last_good.ckpt"));
    if let Some(p) = &last_good {
        save_checkpoint(&model, p)?;
    }

    let n = data.train.len();
    let bsz = train.batch_size.min(n);
    let batches_per_epoch = n / bsz + usize::from(n % bsz >= 2);
    let total_steps = epochs * batches_per_epoch;
    let mut opt = Sgd::new(train.optimizer.clone(), &model);
    let (s, plane) = (data.train.size, data.train.image_len());
    let mut step = 0usize;
    let mut best: Option<(Model, usize, f64)> = None;
    let mut history = Vec::with_capacity(epochs);
    let mut lr = train.optimizer.lr;

    for epoch in 1..=epochs {
        let k1 = contrast.k1(epoch);
        let alpha = contrast.alpha(epoch);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[run_seed, epoch as u64])));
        let mut sums = Sums::default();
        for batch in perm.chunks(bsz).filter(|b| b.len() >= 2) {
            let b = batch.len();
            let mut x = vec![0.0f32; 2 * b * plane];
            let mut src = vec![0.0f32; plane];
            let mut labels = vec![0usize; 2 * b];
            for (r, &k) in batch.iter().enumerate() {
                for (d, &p) in src.iter_mut().zip(data.train.image(k)) {
                    *d = crate::dsp::dequantize(p);
                }
                for v in 0..2 {
                    let draw = draw_view(&train.augment, s, s, view_seed(run_seed, step as u64, k as u64, v as u64));
                    let row = v * b + r;
                    apply_view(&src, s, s, &draw, &mut x[row * plane..(row + 1) * plane]);
                    labels[row] = data.train.labels[k];
                }
            }
            assert!((0..b).all(|r| labels[r] == labels[b + r]), "views of one sample carry different labels");
            let x = Tensor::new(&[2 * b, 3, s, s], x)?;

            let mut tape = Tape::<f32>::new();
            let fwd = model.forward_tape(&mut tape, &x)?;
            let ce = ce_label_smoothed(&mut tape, fwd.logits, &labels, contrast.label_smoothing)?;
            let val = |tape: &Tape<f32>, v| tape.value(v).item() as f64;
            let (l_ce, mut l_tcl, mut l_dict, mut l_kd) = (val(&tape, ce), 0.0, 0.0, 0.0);
            let mut kd_var = None;
            if let Stage::Post { teacher, compress } = &stage {
                let t_logits = teacher.logits(&x)?;
                let views = match compress.kd_views {
                    KdViews::First => 1,
                    KdViews::Both => 2,
                };
                let mut sv = Vec::with_capacity(views);
                let mut tv = Vec::with_capacity(views);
                for v in 0..views {
                    let idx: Vec<usize> = (v * b..(v + 1) * b).collect();
                    sv.push(tape.gather_rows(fwd.logits, &idx)?);
                    let rows: Vec<f32> = idx.iter().flat_map(|&r| t_logits.row(r).iter().copied()).collect();
                    tv.push(Tensor::new(&[b, c], rows)?);
                }
                let kd = kd_loss(&mut tape, &sv, &tv, compress.kd_t)?;
                l_kd = val(&tape, kd);
                kd_var = Some(kd);
            }
            let mut z_var = None;
            let total_var = if ce_only {
                match (&stage, kd_var) {
                    (Stage::Post { compress, .. }, Some(kd)) => blend(&mut tape, ce, kd, compress.kd_alpha)?,
                    _ => ce,
                }
            } else {
                let z = fwd.z.expect("checked above");
                z_var = Some(z);
                let tcl = tcl_loss(&mut tape, z, &labels, contrast.tau, k1, contrast.k2)?;
                let dict = dictionary_loss(
                    &mut tape,
                    z,
                    &labels,
                    &memory,
                    contrast.tau_dict,
                    contrast.mem_positives,
                    contrast.mem_negatives,
                    contrast.proto_weight,
                )?;
                l_tcl = val(&tape, tcl.var);
                l_dict = val(&tape, dict.var);
                sums.tcl_empty += 2 * b - tcl.anchors;
                sums.dict_empty += 2 * b - dict.anchors;
                match (&stage, kd_var) {
                    (Stage::Post { compress, .. }, Some(kd)) => {
                        let con = blend(&mut tape, tcl.var, dict.var, alpha)?;
                        post_objective(&mut tape, ce, kd, con, compress.kd_alpha, contrast.lambda)?.1
                    }
                    _ => pre_objective(&mut tape, ce, tcl.var, dict.var, alpha, contrast.lambda)?.1,
                }
            };

            let (l_con, l_cls, l_total) = reported_losses(&stage, ce_only, contrast.lambda, alpha, l_ce, l_tcl, l_dict, l_kd);
            let tape_total = val(&tape, total_var);
            if !tape_total.is_finite() {
                let origin = tape
                    .first_non_finite()
                    .map(|(v, k)| format!(" (first at node {} {k})", v.index()))
                    .unwrap_or_default();
                let ckpt = last_good.as_ref().map_or("none written".to_string(), |p| p.display().to_string());
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, step {step}{origin}; last good checkpoint: {ckpt}"
                )));
            }
            if (tape_total - l_total).abs() > 1e-3 * (1.0 + l_total.abs()) {
                return Err(Error::Numeric(format!("loss blend mismatch: tape {tape_total} vs {l_total}")));
            }

            let grads = tape.backward(total_var)?;
            let gslices: Vec<Option<&[f32]>> = fwd.params.iter().map(|&p| grads.get(p).map(|g| g.data())).collect();
            lr = cosine_lr(&train.optimizer, step, total_steps);
            opt.step(&mut model, &gslices, lr);
            if let Some(z) = z_var {
                memory_update(&mut memory, tape.value(z), &labels, contrast.momentum)?;
            }

            let logits = tape.value(fwd.logits);
            sums.correct += (0..2 * b).filter(|&r| kernels::argmax(logits.row(r)) == labels[r]).count();
            sums.seen += 2 * b;
            sums.ce += l_ce;
            sums.tcl += l_tcl;
            sums.dict += l_dict;
            sums.con += l_con;
            sums.kd += l_kd;
            sums.cls += l_cls;
            sums.total += l_total;
            sums.steps += 1;
            step += 1;
        }

        let val_acc = evaluate(&model, data.val, train.eval_batch)?.accuracy;
        if best.as_ref().is_none_or(|(_, _, a)| val_acc >= *a) {
            best = Some((model.clone(), epoch, val_acc));
        }
        if let Some(p) = &last_good {
            save_checkpoint(&model, p)?;
        }
        let k = sums.steps.max(1) as f64;
        let e = EpochMetrics {
            epoch,
            lr,
            k1,
            alpha_dict: alpha,
            l_ce: sums.ce / k,
            l_tcl: sums.tcl / k,
            l_dict: sums.dict / k,
            l_con: sums.con / k,
            l_kd: sums.kd / k,
            l_cls: sums.cls / k,
            l_total: sums.total / k,
            train_acc: sums.correct as f64 / sums.seen.max(1) as f64,
            val_acc,
            tcl_empty: sums.tcl_empty,
            dict_empty: sums.dict_empty,
        };
        if opts.verbose {
            eprintln!(
                "[{stage_name}] epoch {epoch:>3}  loss {:.4}  ce {:.4}  con {:.4}  kd {:.4}  train {:.3}  val {:.3}  ({:.0}s)",
                e.l_total,
                e.l_ce,
                e.l_con,
                e.l_kd,
                e.train_acc,
                e.val_acc,
                started.elapsed().as_secs_f64()
            );
        }
        history.push(e);
    }

    let (best_model, best_epoch, best_val_acc) = best.unwrap_or((model.clone(), 0, 0.0));
    let test = data.test.map(|t| evaluate(&best_model, t, train.eval_batch)).transpose()?;
    let teacher_hash_end = match &stage {
        Stage::Post { teacher, .. } => Some(teacher.param_hash()),
        Stage::Pre => None,
    };
    let metrics = RunMetrics {
        stage: stage_name.to_string(),
        epochs: history,
        best_epoch,
        best_val_acc,
        test,
        wall_time_s: started.elapsed().as_secs_f64(),
        teacher_hash_start,
        teacher_hash_end,
    };
    if let Some(dir) = &opts.out_dir {
        metrics.write(dir)?;
        save_checkpoint(&best_model, &dir.join("model.ckpt"))?;
    }
    Ok(TrainOutcome { model: best_model, metrics, memory })
}

/// `(L_con, L_cls, L_total)` from the component values.
#[allow(clippy::too_many_arguments)]
fn reported_losses(
    stage: &Stage,
    ce_only: bool,
    lambda: f64,
    alpha: f64,
    ce: f64,
    tcl: f64,
    dict: f64,
    kd: f64,
) -> (f64, f64, f64) {
    let cls = match stage {
        Stage::Post { compress, .. } => (1.0 - compress.kd_alpha) * ce + compress.kd_alpha * kd,
        Stage::Pre => ce,
    };
    if ce_only {
        return (0.0, cls, cls);
    }
    let con = (1.0 - alpha) * tcl + alpha * dict;
    (con, cls, (1.0 - lambda) * cls + lambda * con)
}
