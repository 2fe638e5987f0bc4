use dbcl::compress::{kd_loss, prune_structured};
use dbcl::contrast::{ce_label_smoothed, dictionary_loss, memory_update, tcl_loss, ClassMemory};
use dbcl::model::{build_model, BackboneConfig};
use dbcl::tensor::{Tape, Tensor};
use proptest::prelude::*;

fn unit_rows(raw: &[f64], d: usize) -> Vec<f64> {
    raw.chunks(d)
        .flat_map(|r| {
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
            r.iter().map(move |x| x / n).collect::<Vec<_>>()
        })
        .collect()
}

fn tcl(z: &[f64], d: usize, labels: &[usize], tau: f64, k1: f64, k2: f64) -> f64 {
    let mut t = Tape::new();
    let v = t.constant(Tensor::new(&[labels.len(), d], z.to_vec()).unwrap());
    let l = tcl_loss(&mut t, v, labels, tau, k1, k2).unwrap();
    t.value(l.var).item()
}

fn dict(z: &[f64], d: usize, labels: &[usize], mem: &ClassMemory) -> f64 {
    let mut t = Tape::new();
    let v = t.constant(Tensor::new(&[labels.len(), d], z.to_vec()).unwrap());
    let l = dictionary_loss(&mut t, v, labels, mem, 0.1, 3, 5, 0.5).unwrap();
    t.value(l.var).item()
}

fn permute_rows(z: &[f64], d: usize, perm: &[usize]) -> Vec<f64> {
    perm.iter().flat_map(|&p| z[p * d..(p + 1) * d].to_vec()).collect()
}

/// Batch of `b` rows in `d` dims with labels in `0..c`, plus a permutation.
fn batch() -> impl Strategy<Value = (Vec<f64>, Vec<usize>, Vec<usize>, usize)> {
    (2usize..10, 2usize..6, 2usize..4).prop_flat_map(|(b, d, c)| {
        (
            prop::collection::vec(-1.0f64..1.0, b * d),
            prop::collection::vec(0..c, b),
            Just((0..b).collect::<Vec<usize>>()).prop_shuffle(),
            Just(d),
        )
    })
}

fn filled_memory(c: usize, d: usize, rows: &[f64]) -> ClassMemory {
    let mut mem = ClassMemory::new(c, d, 6);
    let z = Tensor::new(&[rows.len() / d, d], unit_rows(rows, d)).unwrap();
    let labels: Vec<usize> = (0..rows.len() / d).map(|i| i % c).collect();
    memory_update(&mut mem, &z, &labels, 0.9).unwrap();
    mem
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tcl_is_permutation_invariant_and_non_negative((raw, labels, perm, d) in batch(), tau in 0.05f64..1.0, k1 in 0.0f64..1.0, k2 in 0.0f64..2.0) {
        let z = unit_rows(&raw, d);
        let a = tcl(&z, d, &labels, tau, k1, k2);
        let lp: Vec<usize> = perm.iter().map(|&p| labels[p]).collect();
        let b = tcl(&permute_rows(&z, d, &perm), d, &lp, tau, k1, k2);
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
    }

    #[test]
    fn tcl_is_monotone_in_k2((raw, labels, _perm, d) in batch(), k2 in 0.0f64..2.0, dk in 0.0f64..2.0) {
        let z = unit_rows(&raw, d);
        let lo = tcl(&z, d, &labels, 0.2, 0.1, k2);
        let hi = tcl(&z, d, &labels, 0.2, 0.1, k2 + dk);
        prop_assert!(hi >= lo - 1e-12, "{lo} -> {hi}");
    }

    #[test]
    fn dictionary_is_permutation_invariant_and_non_negative(
        (raw, labels, perm, d) in batch(),
        stored in prop::collection::vec(-1.0f64..1.0, 60),
    ) {
        let c = labels.iter().max().unwrap() + 1;
        let mem = filled_memory(c.max(2), d, &stored[..stored.len() / d * d]);
        let z = unit_rows(&raw, d);
        let a = dict(&z, d, &labels, &mem);
        let lp: Vec<usize> = perm.iter().map(|&p| labels[p]).collect();
        let b = dict(&permute_rows(&z, d, &perm), d, &lp, &mem);
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
    }

    #[test]
    fn kd_is_non_negative_and_zero_on_agreement(
        s in prop::collection::vec(-5.0f64..5.0, 12),
        t in prop::collection::vec(-5.0f64..5.0, 12),
        temp in 0.5f64..6.0,
    ) {
        let mut tape = Tape::new();
        let sv = tape.param(Tensor::new(&[4, 3], s.clone()).unwrap());
        let teacher = Tensor::new(&[4, 3], t).unwrap();
        let l = kd_loss(&mut tape, &[sv], &[teacher], temp).unwrap();
        prop_assert!(tape.value(l).item() >= -1e-12);
        let same = kd_loss(&mut tape, &[sv], &[Tensor::new(&[4, 3], s).unwrap()], temp).unwrap();
        prop_assert!(tape.value(same).item().abs() < 1e-12);
    }

    #[test]
    fn smoothed_ce_is_non_negative(logits in prop::collection::vec(-20.0f64..20.0, 12), eps in 0.0f64..0.9) {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::new(&[3, 4], logits).unwrap());
        let v = ce_label_smoothed(&mut tape, l, &[0, 3, 1], eps).unwrap();
        prop_assert!(tape.value(v).item() >= 0.0);
    }

    #[test]
    fn memory_stays_bounded_fifo_and_unit_norm(
        ops in prop::collection::vec((0usize..3, prop::collection::vec(-1.0f64..1.0, 4)), 1..200),
        k in 1usize..8,
    ) {
        let mut mem = ClassMemory::new(3, 4, k);
        let mut expected: Vec<Vec<u64>> = vec![Vec::new(); 3];
        let mut seq = 0u64;
        for (c, v) in &ops {
            let z = Tensor::new(&[1, 4], unit_rows(v, 4)).unwrap();
            memory_update(&mut mem, &z, &[*c], 0.99).unwrap();
            expected[*c].push(seq);
            seq += 1;
            for class in 0..3 {
                prop_assert!(mem.queue_len(class) <= k);
                if let Some(mu) = mem.prototype(class) {
                    let n = mu.iter().map(|x| x * x).sum::<f64>().sqrt();
                    prop_assert!((n - 1.0).abs() < 1e-6);
                }
            }
        }
        for class in 0..3 {
            let e = &expected[class];
            let tail: Vec<u64> = e[e.len().saturating_sub(k)..].to_vec();
            prop_assert_eq!(mem.queue_seqs(class).collect::<Vec<_>>(), tail);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn pruned_size_is_non_increasing_in_ratio(seed in 0u64..1000, w0 in 2usize..12) {
        let cfg = BackboneConfig { widths: vec![w0, 2 * w0, 3 * w0], img_size: 16, ..Default::default() };
        let model = build_model(&cfg, seed).unwrap();
        let mut last = usize::MAX;
        for ratio in [0.0, 0.25, 0.5, 0.75] {
            let (pruned, report) = prune_structured(&model, ratio).unwrap();
            prop_assert_eq!(report.params_after, pruned.param_count().total);
            prop_assert!(report.params_after <= last, "ratio {}: {} > {}", ratio, report.params_after, last);
            last = report.params_after;
        }
    }
}

#[test]
fn memory_receives_no_gradient() {
    let d = 4;
    let stored: Vec<f64> = (0..40).map(|i| ((i * 7919) % 23) as f64 / 11.0 - 1.0).collect();
    let mem = filled_memory(3, d, &stored);
    let before = mem.clone();
    let raw: Vec<f64> = (0..5 * d).map(|i| ((i * 31) % 17) as f64 / 8.0 - 1.0).collect();
    let labels = [0, 1, 2, 0, 1];

    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::new(&[5, d], raw.clone()).unwrap());
    let z = tape.l2_normalize_rows(x);
    let l = dictionary_loss(&mut tape, z, &labels, &mem, 0.1, 3, 5, 0.5).unwrap();
    let grads = tape.backward(l.var).unwrap();
    assert_eq!(mem, before, "backward touched the memory");

    // With the memory held fixed, the analytic gradient matches finite
    // differences, so no path runs from the batch back into stored entries.
    let g = grads.get(x).unwrap().data().to_vec();
    let f = |v: &[f64]| {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::new(&[5, d], v.to_vec()).unwrap());
        let z = t.l2_normalize_rows(x);
        let l = dictionary_loss(&mut t, z, &labels, &mem, 0.1, 3, 5, 0.5).unwrap();
        t.value(l.var).item()
    };
    let h = 1e-6;
    for i in 0..raw.len() {
        let mut p = raw.clone();
        p[i] += h;
        let mut m = raw.clone();
        m[i] -= h;
        let num = (f(&p) - f(&m)) / (2.0 * h);
        assert!((num - g[i]).abs() < 1e-6 * (1.0 + num.abs()), "coord {i}: {num} vs {}", g[i]);
    }
}
