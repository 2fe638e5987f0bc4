//! Synthesizes a small recording set, segments it into a balanced image
//! corpus and prints the per-split counts and manifest hash.

use dbcl::corpus::{build_corpus, CorpusConfig, Split, SplitCounts};
use dbcl::synthgen::{synth_dataset, SynthConfig};

fn main() -> dbcl::Result<()> {
    let root = std::env::temp_dir().join("dbcl_example_corpus");
    let _ = std::fs::remove_dir_all(&root);
    synth_dataset(&SynthConfig::default().with_count(8), &root.join("recordings"))?;

    let cfg = CorpusConfig {
        holdout: 2,
        test_files: 2,
        targets: Some(SplitCounts { train: 20, val: 8, test: 6 }),
        ..Default::default()
    };
    let g = cfg.geometry();
    println!("crop length {} samples, hop {}", g.len, g.hop);
    let m = build_corpus(&root.join("recordings"), &cfg, &root.join("corpus"))?;
    for split in Split::ALL {
        let per_class: Vec<usize> = (0..m.classes.len()).map(|c| m.count(split, c)).collect();
        println!("{:<5} {:?}", split.name(), per_class);
    }
    let shifted = m.entries.iter().filter(|e| e.shift > 0).count();
    println!("{} images, {} circularly shifted", m.entries.len(), shifted);
    println!("manifest {}", m.manifest_hash);
    Ok(())
}
