use super::losses::{anchor_mean, check_unit_rows};
use super::{ClassMemory, Loss};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Dictionary contrastive loss against a memory snapshot.
///
/// For anchor `i` the top-`p` stored same-class vectors and the top-`q`
/// stored other-class vectors (by cosine similarity) are retrieved. With
/// `s = dot / tau_dict`:
///
/// `N_i = sum_pos e^{s} + w_p e^{z_i . mu_{y_i} / tau_dict}` (prototype term
/// only once initialized), `D_i = N_i + sum_neg e^{s}`, and the loss is the
/// mean of `-log(N_i / D_i)` over anchors with a non-empty class queue or a
/// usable prototype.
///
/// Memory enters the tape as constants only.
#[allow(clippy::too_many_arguments)]
pub fn dictionary_loss<T: Scalar>(
    tape: &mut Tape<T>,
    z: Var,
    labels: &[usize],
    mem: &ClassMemory,
    tau_dict: f64,
    p: usize,
    q: usize,
    proto_weight: f64,
) -> Result<Loss> {
    if p < 1 || q < 1 {
        return Err(Error::InvalidArgument(format!("dictionary_loss: P={p} and Q={q} must be >= 1")));
    }
    if !(tau_dict > 0.0) || proto_weight < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "dictionary_loss: tau_dict={tau_dict}, w_p={proto_weight}"
        )));
    }
    let zv = tape.value(z);
    let (b, d) = (zv.rows(), zv.cols());
    if labels.len() != b || d != mem.dim() {
        return Err(Error::InvalidArgument(format!(
            "dictionary_loss: batch {:?}, {} labels, memory dim {}",
            zv.shape(),
            labels.len(),
            mem.dim()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= mem.num_classes()) {
        return Err(Error::InvalidArgument(format!("dictionary_loss: label {bad} out of range")));
    }
    check_unit_rows("dictionary_loss", zv)?;

    let use_proto = |c: usize| proto_weight > 0.0 && mem.prototype(c).is_some();
    let valid: Vec<bool> = labels.iter().map(|&l| mem.queue_len(l) > 0 || use_proto(l)).collect();
    if !valid.iter().any(|&v| v) {
        let var = tape.constant(Tensor::scalar(T::zero()));
        return Ok(Loss { var, anchors: 0 });
    }

    let anchors: Vec<Vec<f64>> = (0..b).map(|r| zv.row(r).iter().map(|v| v.to_f64().unwrap()).collect()).collect();
    let shift = T::lit(-1.0 / tau_dict);
    let inv_tau = T::lit(1.0 / tau_dict);
    let (flat, meta) = mem.bank();
    let n_mem = meta.len();

    let mut num: Option<Var> = None;
    let mut neg: Option<Var> = None;
    if n_mem > 0 {
        let mut pos_mask = vec![T::zero(); b * n_mem];
        let mut neg_mask = vec![T::zero(); b * n_mem];
        for i in 0..b {
            let r = mem.retrieve(&anchors[i], labels[i], p, q);
            for j in r.positives {
                pos_mask[i * n_mem + j] = T::one();
            }
            for j in r.negatives {
                neg_mask[i * n_mem + j] = T::one();
            }
        }
        let bank = tape.constant(Tensor::new(&[n_mem, d], flat.iter().map(|&v| T::lit(v)).collect())?);
        let pos_mask = tape.constant(Tensor::new(&[b, n_mem], pos_mask)?);
        let neg_mask = tape.constant(Tensor::new(&[b, n_mem], neg_mask)?);
        let sim = tape.matmul_nt(z, bank)?;
        let s = tape.scale(sim, inv_tau);
        let s = tape.add_scalar(s, shift);
        let e = tape.exp(s);
        let pm = tape.mul(e, pos_mask)?;
        num = Some(tape.sum_rows(pm));
        let nm = tape.mul(e, neg_mask)?;
        neg = Some(tape.sum_rows(nm));
    }

    let c = mem.num_classes();
    if (0..c).any(use_proto) {
        let protos = Tensor::from_fn(&[c, d], |k| match mem.prototype(k / d) {
            Some(mu) if use_proto(k / d) => T::lit(mu[k % d]),
            _ => T::zero(),
        });
        let w = T::lit(proto_weight);
        let proto_w =
            Tensor::from_fn(&[b, c], |k| if labels[k / c] == k % c && use_proto(k % c) { w } else { T::zero() });
        let protos = tape.constant(protos);
        let proto_w = tape.constant(proto_w);
        let sim = tape.matmul_nt(z, protos)?;
        let s = tape.scale(sim, inv_tau);
        let s = tape.add_scalar(s, shift);
        let e = tape.exp(s);
        let pw = tape.mul(e, proto_w)?;
        let term = tape.sum_rows(pw);
        num = Some(match num {
            Some(n) => tape.add(n, term)?,
            None => term,
        });
    }

    let num = num.expect("at least one valid anchor implies a numerator term");
    let den = match neg {
        Some(n) => tape.add(num, n)?,
        None => num,
    };
    anchor_mean(tape, num, den, &valid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_memory_gives_flagged_zero() {
        let mem = ClassMemory::new(2, 2, 4);
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap());
        let l = dictionary_loss(&mut tape, z, &[0], &mem, 0.1, 1, 1, 0.5).unwrap();
        assert!(l.is_empty());
        assert_eq!(tape.value(l.var).item(), 0.0);
    }

    #[test]
    fn hand_value() {
        let mut mem = ClassMemory::new(2, 2, 4);
        mem.enqueue(0, &[1.0, 0.0]);
        mem.enqueue(1, &[0.0, 1.0]);
        mem.update_prototype(0, &[1.0, 0.0], 0.9);
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap());
        let l = dictionary_loss(&mut tape, z, &[0], &mem, 1.0, 1, 1, 0.5).unwrap();
        let e = 1f64.exp();
        let n = e + 0.5 * e;
        let expect = ((n + 1.0) / n).ln();
        assert!((tape.value(l.var).item() - expect).abs() < 1e-12);
        assert!((expect - 0.219339).abs() < 1e-6);
    }

    #[test]
    fn prototype_alone_makes_an_anchor_valid() {
        let mut mem = ClassMemory::new(2, 2, 4);
        mem.update_prototype(0, &[0.0, 1.0], 0.5);
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let l = dictionary_loss(&mut tape, z, &[0, 1], &mem, 0.5, 2, 2, 0.5).unwrap();
        assert_eq!(l.anchors, 1);
        // N == D with no negatives stored.
        assert!(tape.value(l.var).item().abs() < 1e-15);
    }

    #[test]
    fn rejects_zero_p_or_q() {
        let mem = ClassMemory::new(2, 2, 4);
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap());
        assert!(dictionary_loss(&mut tape, z, &[0], &mem, 0.1, 0, 1, 0.5).is_err());
        assert!(dictionary_loss(&mut tape, z, &[0], &mem, 0.1, 1, 0, 0.5).is_err());
    }
}
