//! Evaluates every training loss on a small hand-made batch.

use dbcl::compress::kd_loss;
use dbcl::contrast::{ce_label_smoothed, dictionary_loss, memory_update, pre_objective, tcl_loss, ClassMemory};
use dbcl::tensor::{Tape, Tensor};

fn main() -> dbcl::Result<()> {
    let labels = [0, 0, 1, 1];
    let mut tape = Tape::<f64>::new();
    let feats = tape.param(Tensor::new(&[4, 3], vec![1.0, 0.2, 0.0, 0.9, 0.1, 0.1, 0.0, 1.0, 0.3, 0.1, 0.8, 0.2])?);
    let z = tape.l2_normalize_rows(feats);
    let logits = tape.param(Tensor::new(&[4, 2], vec![2.0, -1.0, 1.5, 0.0, -0.5, 1.0, 0.2, 0.1])?);

    let ce = ce_label_smoothed(&mut tape, logits, &labels, 0.1)?;
    let tcl = tcl_loss(&mut tape, z, &labels, 0.1, 0.2, 1.0)?;

    let mut mem = ClassMemory::new(2, 3, 16);
    let past = Tensor::new(&[2, 3], vec![0.8, 0.6, 0.0, 0.0, 0.6, 0.8])?;
    memory_update(&mut mem, &past, &[0, 1], 0.99)?;
    let dict = dictionary_loss(&mut tape, z, &labels, &mem, 0.1, 8, 32, 0.5)?;

    let (con, pre) = pre_objective(&mut tape, ce, tcl.var, dict.var, 0.5, 0.5)?;
    let teacher = Tensor::new(&[4, 2], vec![3.0, -2.0, 2.0, -1.0, -1.0, 2.5, -0.5, 1.5])?;
    let kd = kd_loss(&mut tape, &[logits], &[teacher], 3.0)?;

    for (name, v) in [("ce", ce), ("tcl", tcl.var), ("dict", dict.var), ("con", con), ("pre", pre), ("kd", kd)] {
        println!("{name:<5} {:.6}", tape.value(v).item());
    }
    let grads = tape.backward(pre)?;
    println!("d pre / d feats row 0: {:?}", &grads.get(feats).map(|g| g.row(0).to_vec()).unwrap_or_default());
    Ok(())
}
