//! End-to-end pre-pruning training on a tiny synthetic corpus (32x32
//! images, a few epochs). Writes metrics.csv, summary.json and the
//! checkpoint under the system temp directory.

use dbcl::contrast::ContrastConfig;
use dbcl::corpus::{build_corpus, load_split, CorpusConfig, Split};
use dbcl::dsp::ImageOptions;
use dbcl::model::{build_model, BackboneConfig};
use dbcl::synthgen::{synth_dataset, SynthConfig};
use dbcl::trainkit::{train_pre, Datasets, RunOptions, TrainConfig};

fn main() -> dbcl::Result<()> {
    let root = std::env::temp_dir().join("dbcl_example_train");
    let _ = std::fs::remove_dir_all(&root);
    synth_dataset(&SynthConfig::default().with_count(20), &root.join("recordings"))?;
    let ccfg = CorpusConfig {
        holdout: 3,
        test_files: 5,
        image: ImageOptions { img_size: 32, ..Default::default() },
        ..Default::default()
    };
    build_corpus(&root.join("recordings"), &ccfg, &root.join("corpus"))?;
    let (tr, va, te) = (
        load_split(&root.join("corpus"), Split::Train)?,
        load_split(&root.join("corpus"), Split::Val)?,
        load_split(&root.join("corpus"), Split::Test)?,
    );
    println!("train {} / val {} / test {} images", tr.len(), va.len(), te.len());

    let model = build_model(&BackboneConfig { img_size: 32, ..Default::default() }, 0)?;
    let train = TrainConfig { epochs: 6, batch_size: 16, ..Default::default() };
    let out = train_pre(
        &Datasets { train: &tr, val: &va, test: Some(&te) },
        model,
        &ContrastConfig::default(),
        &train,
        &RunOptions { out_dir: Some(root.join("pre")), verbose: true },
    )?;
    let test = out.metrics.test.as_ref().expect("test split given");
    println!("best epoch {}, test accuracy {:.3}", out.metrics.best_epoch, test.accuracy);
    print!("{}", test.confusion_csv());
    println!("outputs in {}", root.join("pre").display());
    Ok(())
}
