//! Command-line front end. Exit codes: 0 success, 1 config or usage error,
//! 2 runtime error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::compress::{prune_structured, snapshot_teacher, strip_for_deployment};
use crate::config::RunConfig;
use crate::contrast::ClassMemory;
use crate::corpus::{build_corpus, load_split, ImageSet, Split};
use crate::error::{Error, Result};
use crate::model::{build_model, load_checkpoint, save_checkpoint, Model};
use crate::synthgen::{synth_dataset, to_json, write_file};
use crate::trainkit::{bench, evaluate, train_post, train_pre, Datasets, RunOptions, TrainConfig};
use crate::verify;

pub const CHECKPOINT: &str = "model.ckpt";
pub const MEMORY: &str = "memory.json";
pub const PRUNE_REPORT: &str = "prune_report.json";

#[derive(Parser, Debug)]
#[command(name = "dbcl", version, about = "Synthetic jamming corpora, contrastive training, pruning and distillation")]
pub struct Cli {
    /// JSON run config merged over the defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dotted override, e.g. `train.epochs=5`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Worker threads; every stage currently runs on one.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write synthetic IQ recordings.
    Synth,
    /// Segment recordings into spectrogram images and print the manifest hash.
    BuildCorpus,
    /// Pre-pruning training.
    TrainPre,
    /// Structured pruning of the pre-pruning checkpoint.
    Prune,
    /// Post-pruning fine-tune with distillation from the pre-pruning model.
    Distill,
    /// Accuracy and confusion matrix of a checkpoint on a split.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Parameter count, deployed size and single-sample latency.
    Bench {
        /// Checkpoints to compare; defaults to the pre and post outputs.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        #[arg(long, default_value_t = 200)]
        reps: usize,
    },
    /// Grid over samples per class, prune ratio and KD weight.
    Sweep,
    /// Gradient-check and oracle suites.
    Verify,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::Config("--threads must be >= 1".into()));
    }
    if cli.threads > 1 {
        eprintln!("note: --threads {} requested; all stages run single-threaded", cli.threads);
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.sets)?;
    match &cli.command {
        Command::Synth => cmd_synth(&cfg),
        Command::BuildCorpus => cmd_build_corpus(&cfg),
        Command::TrainPre => cmd_train_pre(&cfg),
        Command::Prune => cmd_prune(&cfg),
        Command::Distill => cmd_distill(&cfg),
        Command::Eval { checkpoint, split } => cmd_eval(&cfg, checkpoint.as_deref(), split),
        Command::Bench { checkpoint, reps } => cmd_bench(&cfg, checkpoint, *reps),
        Command::Sweep => cmd_sweep(&cfg),
        Command::Verify => cmd_verify(&cfg),
    }
}

fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let m = synth_dataset(&cfg.synth, &cfg.paths.recordings)?;
    cfg.archive(&cfg.paths.recordings)?;
    println!("wrote {} recordings to {}", m.entries.len(), cfg.paths.recordings.display());
    Ok(())
}

fn cmd_build_corpus(cfg: &RunConfig) -> Result<()> {
    let m = build_corpus(&cfg.paths.recordings, &cfg.corpus, &cfg.paths.corpus)?;
    cfg.archive(&cfg.paths.corpus)?;
    eprintln!("wrote {} images to {}", m.entries.len(), cfg.paths.corpus.display());
    println!("{}", m.manifest_hash);
    Ok(())
}

/// Train, validation and test splits, with the training cap applied.
pub fn load_splits(corpus: &Path, train: &TrainConfig) -> Result<(ImageSet, ImageSet, ImageSet)> {
    let mut tr = load_split(corpus, Split::Train)?;
    if let Some(n) = train.samples_per_class {
        tr = tr.take_per_class(n);
    }
    Ok((tr, load_split(corpus, Split::Val)?, load_split(corpus, Split::Test)?))
}

fn report_outcome(stage: &str, metrics: &crate::trainkit::RunMetrics, dir: &Path) {
    let test = metrics.test.as_ref().map(|t| format!("{:.4}", t.accuracy)).unwrap_or_else(|| "-".into());
    println!(
        "{stage}: best epoch {} val {:.4} test {} -> {}",
        metrics.best_epoch,
        metrics.best_val_acc,
        test,
        dir.display()
    );
}

fn cmd_train_pre(cfg: &RunConfig) -> Result<()> {
    let (tr, va, te) = load_splits(&cfg.paths.corpus, &cfg.train)?;
    let model = build_model(&cfg.model, cfg.train.seed)?;
    let out_dir = &cfg.paths.pre;
    let out = train_pre(
        &Datasets { train: &tr, val: &va, test: Some(&te) },
        model,
        &cfg.contrast,
        &cfg.train,
        &RunOptions { out_dir: Some(out_dir.clone()), verbose: true },
    )?;
    write_file(&out_dir.join(MEMORY), &to_json(&out.memory))?;
    cfg.archive(out_dir)?;
    report_outcome("train-pre", &out.metrics, out_dir);
    Ok(())
}

fn cmd_prune(cfg: &RunConfig) -> Result<()> {
    let model = load_checkpoint(&cfg.paths.pre.join(CHECKPOINT))?;
    let (pruned, report) = prune_structured(&model, cfg.compress.prune_ratio)?;
    let dir = &cfg.paths.pruned;
    save_checkpoint(&pruned, &dir.join(CHECKPOINT))?;
    write_file(&dir.join(PRUNE_REPORT), &to_json(&report))?;
    cfg.archive(dir)?;
    println!(
        "pruned {:.2}: params {} -> {}, widths {:?}",
        report.ratio_achieved, report.params_before, report.params_after, pruned.arch.widths
    );
    Ok(())
}

fn read_memory(path: &Path) -> Result<ClassMemory> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn cmd_distill(cfg: &RunConfig) -> Result<()> {
    let teacher = snapshot_teacher(&load_checkpoint(&cfg.paths.pre.join(CHECKPOINT))?);
    let student = load_checkpoint(&cfg.paths.pruned.join(CHECKPOINT))?;
    let memory = if cfg.compress.carry_memory { Some(read_memory(&cfg.paths.pre.join(MEMORY))?) } else { None };
    let (tr, va, te) = load_splits(&cfg.paths.corpus, &cfg.train)?;
    let out_dir = &cfg.paths.post;
    let out = train_post(
        &Datasets { train: &tr, val: &va, test: Some(&te) },
        student,
        &teacher,
        &cfg.contrast,
        &cfg.compress,
        &cfg.train,
        memory,
        &RunOptions { out_dir: Some(out_dir.clone()), verbose: true },
    )?;
    cfg.archive(out_dir)?;
    report_outcome("distill", &out.metrics, out_dir);
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>, split: &str) -> Result<()> {
    let split: Split = split.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
    let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| cfg.paths.post.join(CHECKPOINT));
    let model = load_checkpoint(&path)?;
    let set = load_split(&cfg.paths.corpus, split)?;
    let r = evaluate(&model, &set, cfg.train.eval_batch)?;
    println!("{} on {}: accuracy {:.4} ({}/{})", path.display(), split.name(), r.accuracy, r.correct, r.total);
    print!("{}", r.confusion_csv());
    Ok(())
}

fn cmd_bench(cfg: &RunConfig, checkpoints: &[PathBuf], reps: usize) -> Result<()> {
    let paths: Vec<PathBuf> = if checkpoints.is_empty() {
        vec![cfg.paths.pre.join(CHECKPOINT), cfg.paths.post.join(CHECKPOINT)]
    } else {
        checkpoints.to_vec()
    };
    let mut csv = String::from("checkpoint,params,deploy_bytes,repetitions,median_ms,mean_ms,min_ms\n");
    for p in &paths {
        let model = strip_for_deployment(&load_checkpoint(p)?);
        let r = bench(&model, reps)?;
        let _ = writeln!(
            csv,
            "{},{},{},{},{:.5},{:.5},{:.5}",
            p.display(),
            r.params,
            r.checkpoint_bytes,
            r.repetitions,
            r.median_ms,
            r.mean_ms,
            r.min_ms
        );
    }
    write_file(&cfg.paths.bench.join("bench.csv"), csv.as_bytes())?;
    cfg.archive(&cfg.paths.bench)?;
    print!("{csv}");
    Ok(())
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// One grid cell of the sweep: test accuracy per seed and the pruned size.
struct Cell {
    acc: Vec<f64>,
    params: usize,
}

fn post_run(
    cfg: &RunConfig,
    data: &Datasets,
    pre: &Model,
    memory: &ClassMemory,
    train: &TrainConfig,
    ratio: f64,
    kd_alpha: f64,
) -> Result<(f64, usize)> {
    let mut compress = cfg.compress.clone();
    compress.prune_ratio = ratio;
    compress.kd_alpha = kd_alpha;
    let (pruned, report) = prune_structured(pre, ratio)?;
    let out = train_post(
        data,
        pruned,
        &snapshot_teacher(pre),
        &cfg.contrast,
        &compress,
        train,
        Some(memory.clone()),
        &RunOptions::default(),
    )?;
    Ok((out.metrics.test.map(|t| t.accuracy).unwrap_or(f64::NAN), report.params_after))
}

fn cmd_sweep(cfg: &RunConfig) -> Result<()> {
    let (full, va, te) = load_splits(&cfg.paths.corpus, &cfg.train)?;
    let s = &cfg.sweep;
    let variants = ["backbone", "dbcl", "dbcl_pruned"];
    let mut table = String::from("samples,variant,seeds,mean_accuracy,std_accuracy\n");
    let mut grid = String::from("samples,prune_ratio,kd_alpha,seeds,mean_accuracy,std_accuracy,params\n");
    for &n in &s.samples {
        let tr = full.take_per_class(n);
        let data = Datasets { train: &tr, val: &va, test: Some(&te) };
        let mut acc: Vec<Vec<f64>> = vec![Vec::new(); variants.len()];
        let mut cells: Vec<Cell> = Vec::new();
        for &seed in &s.seeds {
            let mut train = cfg.train.clone();
            train.seed = seed;
            let quiet = RunOptions::default();
            let mut ce = train.clone();
            ce.ce_only = true;
            let base = train_pre(&data, build_model(&cfg.model, seed)?, &cfg.contrast, &ce, &quiet)?;
            acc[0].push(base.metrics.test.map(|t| t.accuracy).unwrap_or(f64::NAN));
            let pre = train_pre(&data, build_model(&cfg.model, seed)?, &cfg.contrast, &train, &quiet)?;
            acc[1].push(pre.metrics.test.as_ref().map(|t| t.accuracy).unwrap_or(f64::NAN));

            let mut default_cell = None;
            let mut k = 0;
            for &ratio in &s.prune_ratios {
                for &alpha in &s.kd_alphas {
                    let (a, params) = post_run(cfg, &data, &pre.model, &pre.memory, &train, ratio, alpha)?;
                    eprintln!("sweep n={n} seed={seed} ratio={ratio} kd_alpha={alpha}: {a:.4}");
                    if cells.len() <= k {
                        cells.push(Cell { acc: Vec::new(), params });
                    }
                    cells[k].acc.push(a);
                    if ratio == cfg.compress.prune_ratio && alpha == cfg.compress.kd_alpha {
                        default_cell = Some(a);
                    }
                    k += 1;
                }
            }
            let pruned = match default_cell {
                Some(a) => a,
                None => {
                    let (r, a) = (cfg.compress.prune_ratio, cfg.compress.kd_alpha);
                    post_run(cfg, &data, &pre.model, &pre.memory, &train, r, a)?.0
                }
            };
            acc[2].push(pruned);
        }
        for (name, a) in variants.iter().zip(&acc) {
            let (m, sd) = mean_std(a);
            let _ = writeln!(table, "{n},{name},{},{m:.6},{sd:.6}", a.len());
        }
        let mut k = 0;
        for &ratio in &s.prune_ratios {
            for &alpha in &s.kd_alphas {
                let (m, sd) = mean_std(&cells[k].acc);
                let _ = writeln!(grid, "{n},{ratio},{alpha},{},{m:.6},{sd:.6},{}", cells[k].acc.len(), cells[k].params);
                k += 1;
            }
        }
        eprint!("{table}");
    }
    let dir = &cfg.paths.sweep;
    write_file(&dir.join("accuracy_vs_samples.csv"), table.as_bytes())?;
    write_file(&dir.join("prune_kd_grid.csv"), grid.as_bytes())?;
    cfg.archive(dir)?;
    print!("{table}");
    Ok(())
}

fn cmd_verify(cfg: &RunConfig) -> Result<()> {
    let v = &cfg.verify;
    let report = verify::run_all(v.cases, v.oracle_cases, v.seed)?;
    for s in &report.suites {
        println!("{s}");
    }
    if report.passed() {
        println!("all {} suites passed", report.suites.len());
        Ok(())
    } else {
        let failed = report.suites.iter().filter(|s| !s.passed).count();
        Err(Error::Numeric(format!("{failed} verification suites failed")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["dbcl", "frobnicate"]), 1);
        assert_eq!(run(["dbcl", "verify", "--bogus"]), 1);
        assert_eq!(run(["dbcl", "--help"]), 0);
    }

    #[test]
    fn config_errors_exit_one() {
        assert_eq!(run(["dbcl", "verify", "--set", "train.nope=1"]), 1);
        assert_eq!(run(["dbcl", "verify", "--threads", "0"]), 1);
        assert_eq!(run(["dbcl", "eval", "--split", "dev"]), 1);
    }

    #[test]
    fn missing_inputs_exit_two() {
        let dir = tempfile::tempdir().unwrap();
        let set = format!("paths.pre={}", dir.path().join("absent").display());
        assert_eq!(run(["dbcl", "prune", "--set", &set]), 2);
    }
}
