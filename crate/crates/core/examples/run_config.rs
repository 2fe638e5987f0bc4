//! Resolves a run config from defaults and dotted overrides, then drives
//! the command-line pipeline (synth, build-corpus, sweep) on a tiny grid.

use dbcl::cli;
use dbcl::config::RunConfig;

fn main() {
    let root = std::env::temp_dir().join("dbcl_example_sweep");
    let _ = std::fs::remove_dir_all(&root);
    let sets: Vec<String> = [
        format!("paths.recordings={}", root.join("recordings").display()),
        format!("paths.corpus={}", root.join("corpus").display()),
        format!("paths.sweep={}", root.join("sweep").display()),
        "synth.counts={\"Clean\":10,\"SingleTone\":10,\"SingleChirp\":10,\"SingleAM\":10,\"SingleFM\":10,\"NoiseBand\":10}".into(),
        "corpus.holdout=2".into(),
        "corpus.test_files=3".into(),
        "corpus.image.img_size=32".into(),
        "model.img_size=32".into(),
        "train.epochs=2".into(),
        "train.post_epochs=1".into(),
        "train.batch_size=16".into(),
        "sweep.samples=[8,20]".into(),
        "sweep.prune_ratios=[0.5]".into(),
        "sweep.kd_alphas=[0.5,0.75]".into(),
    ]
    .into();
    let cfg = RunConfig::load(None, &sets).expect("valid overrides");
    println!("contrast section: {}", serde_json::to_string(&cfg.contrast).unwrap());

    for cmd in ["synth", "build-corpus", "sweep"] {
        let mut argv = vec!["dbcl".to_string(), cmd.to_string()];
        for s in &sets {
            argv.push("--set".into());
            argv.push(s.clone());
        }
        let code = cli::run(argv);
        println!("{cmd} exited with {code}");
        if code != 0 {
            std::process::exit(code);
        }
    }
    let grid = std::fs::read_to_string(root.join("sweep/prune_kd_grid.csv")).unwrap_or_default();
    print!("{grid}");
}
