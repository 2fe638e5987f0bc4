//! Fills the class memory, shows FIFO eviction, prototype drift and
//! top-P / top-Q retrieval for an anchor.

use dbcl::contrast::{memory_update, ClassMemory};
use dbcl::tensor::Tensor;

fn main() -> dbcl::Result<()> {
    let mut mem = ClassMemory::new(2, 2, 3);
    let angle = |deg: f64| [deg.to_radians().cos(), deg.to_radians().sin()];
    for step in 0..5 {
        let (a, b) = (angle(10.0 * step as f64), angle(90.0 + 10.0 * step as f64));
        let z = Tensor::new(&[2, 2], vec![a[0], a[1], b[0], b[1]])?;
        memory_update(&mut mem, &z, &[0, 1], 0.9)?;
        let seqs: Vec<u64> = mem.queue_seqs(0).collect();
        let mu = mem.prototype(0).unwrap();
        println!("step {step}: class 0 queue {seqs:?}, prototype ({:.4}, {:.4})", mu[0], mu[1]);
    }
    let anchor = angle(30.0);
    let r = mem.retrieve(&anchor, 0, 2, 2);
    let (bank, meta) = mem.bank();
    for (kind, rows) in [("positives", &r.positives), ("negatives", &r.negatives)] {
        for &row in rows {
            let v = &bank[row * 2..row * 2 + 2];
            println!("{kind}: class {} seq {} cos {:.4}", meta[row].0, meta[row].1, v[0] * anchor[0] + v[1] * anchor[1]);
        }
    }
    Ok(())
}
