use std::path::Path;
use std::process::{Command, Output};

fn dbcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dbcl")).args(args).output().expect("spawn dbcl")
}

fn small_sets(root: &Path, corpus: &str) -> Vec<String> {
    vec![
        format!("paths.recordings={}", root.join("rec").display()),
        format!("paths.corpus={}", root.join(corpus).display()),
        "synth.counts={\"Clean\":4,\"SingleTone\":4,\"SingleChirp\":4,\"SingleAM\":4,\"SingleFM\":4,\"NoiseBand\":4}".into(),
        "corpus.holdout=1".into(),
        "corpus.test_files=1".into(),
        "corpus.image.img_size=32".into(),
        "model.img_size=32".into(),
    ]
}

fn with_sets<'a>(cmd: &'a str, sets: &'a [String]) -> Vec<&'a str> {
    let mut argv = vec![cmd];
    for s in sets {
        argv.push("--set");
        argv.push(s);
    }
    argv
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn corpus_hash_is_reproducible_from_archived_config() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_sets(dir.path(), "corpus_a");
    stdout(&dbcl(&with_sets("synth", &a)));
    let hash_a = stdout(&dbcl(&with_sets("build-corpus", &a)));
    assert_eq!(hash_a.trim().len(), 64);

    let b = small_sets(dir.path(), "corpus_b");
    let hash_b = stdout(&dbcl(&with_sets("build-corpus", &b)));
    assert_eq!(hash_a, hash_b);

    // Replaying the resolved config written next to the corpus rebuilds it.
    let archived = dir.path().join("corpus_a/config.json");
    assert!(archived.exists());
    let out_c = format!("paths.corpus={}", dir.path().join("corpus_c").display());
    let hash_c = stdout(&dbcl(&[
        "--config",
        archived.to_str().unwrap(),
        "--set",
        &out_c,
        "build-corpus",
    ]));
    assert_eq!(hash_a, hash_c);
    let manifest = |d: &str| std::fs::read(dir.path().join(d).join("manifest.json")).unwrap();
    assert_eq!(manifest("corpus_a"), manifest("corpus_b"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dbcl(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(dbcl(&["--set", "model.widths=oops", "verify"]).status.code(), Some(1));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"train\": {\"epochs\": 0}}").unwrap();
    assert_eq!(dbcl(&["--config", bad.to_str().unwrap(), "verify"]).status.code(), Some(1));

    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    assert_eq!(dbcl(&["eval", "--checkpoint", junk.to_str().unwrap()]).status.code(), Some(2));

    let out = dbcl(&["--set", "verify.cases=3", "--set", "verify.oracle_cases=5", "verify"]);
    assert!(stdout(&out).contains("suites passed"));
}
