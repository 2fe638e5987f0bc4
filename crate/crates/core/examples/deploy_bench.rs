//! Strips the projection head for deployment and compares parameter
//! counts, checkpoint sizes and single-sample latency before and after
//! pruning.

use dbcl::compress::{prune_structured, strip_for_deployment};
use dbcl::model::{build_model, BackboneConfig};
use dbcl::tensor::Tensor;
use dbcl::trainkit::bench;

fn main() -> dbcl::Result<()> {
    let full = build_model(&BackboneConfig::default(), 0)?;
    let deployed = strip_for_deployment(&full);
    let x = Tensor::from_fn(&[4, 3, 64, 64], |k| (k % 255) as f32 / 255.0);
    println!("stripped logits identical: {}", full.logits(&x)?.data() == deployed.logits(&x)?.data());
    println!("head bytes removed: {}", full.to_bytes().len() - deployed.to_bytes().len());

    let (pruned, _) = prune_structured(&full, 0.5)?;
    let pruned = strip_for_deployment(&pruned);
    println!("{:<10} {:>9} {:>11} {:>10}", "model", "params", "bytes", "median ms");
    for (name, m) in [("full", &deployed), ("pruned", &pruned)] {
        let r = bench(m, 200)?;
        println!("{name:<10} {:>9} {:>11} {:>10.4}", r.params, r.checkpoint_bytes, r.median_ms);
    }
    Ok(())
}
