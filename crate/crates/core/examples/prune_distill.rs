//! Trains a short teacher, prunes half its channels, then fine-tunes the
//! pruned student with distillation and prints the size and accuracy trade.

use dbcl::compress::{prune_structured, snapshot_teacher};
use dbcl::contrast::ContrastConfig;
use dbcl::corpus::{build_corpus, load_split, CorpusConfig, Split};
use dbcl::dsp::ImageOptions;
use dbcl::model::{build_model, BackboneConfig};
use dbcl::synthgen::{synth_dataset, SynthConfig};
use dbcl::trainkit::{evaluate, train_post, train_pre, CompressConfig, Datasets, RunOptions, TrainConfig};

fn main() -> dbcl::Result<()> {
    let root = std::env::temp_dir().join("dbcl_example_prune");
    let _ = std::fs::remove_dir_all(&root);
    synth_dataset(&SynthConfig::default().with_count(16), &root.join("recordings"))?;
    let ccfg = CorpusConfig {
        holdout: 3,
        test_files: 4,
        image: ImageOptions { img_size: 32, ..Default::default() },
        ..Default::default()
    };
    build_corpus(&root.join("recordings"), &ccfg, &root.join("corpus"))?;
    let c = root.join("corpus");
    let (tr, va, te) = (load_split(&c, Split::Train)?, load_split(&c, Split::Val)?, load_split(&c, Split::Test)?);
    let data = Datasets { train: &tr, val: &va, test: Some(&te) };

    let contrast = ContrastConfig::default();
    let train = TrainConfig { epochs: 5, post_epochs: 3, batch_size: 16, ..Default::default() };
    let model = build_model(&BackboneConfig { img_size: 32, ..Default::default() }, 0)?;
    let pre = train_pre(&data, model, &contrast, &train, &RunOptions::default())?;
    let teacher = snapshot_teacher(&pre.model);

    let compress = CompressConfig::default();
    let (pruned, report) = prune_structured(&pre.model, compress.prune_ratio)?;
    println!(
        "pruned {:.0}% of channels: params {} -> {}, conv params {} -> {}",
        100.0 * report.ratio_achieved,
        report.params_before,
        report.params_after,
        report.conv_params_before,
        report.conv_params_after
    );
    println!("accuracy right after pruning: {:.3}", evaluate(&pruned, &te, 128)?.accuracy);

    let post = train_post(&data, pruned, &teacher, &contrast, &compress, &train, None, &RunOptions::default())?;
    let acc = |m: &dbcl::trainkit::RunMetrics| m.test.as_ref().map(|t| t.accuracy).unwrap_or(f64::NAN);
    println!("teacher {:.3}, distilled student {:.3}", acc(&pre.metrics), acc(&post.metrics));
    println!("teacher unchanged: {}", teacher.param_hash() == snapshot_teacher(&pre.model).param_hash());
    Ok(())
}
