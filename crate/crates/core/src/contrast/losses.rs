use super::Loss;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

fn check_labels(op: &str, labels: &[usize], rows: usize, classes: Option<usize>) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::InvalidArgument(format!("{op}: {} labels for {} rows", labels.len(), rows)));
    }
    if let Some(c) = classes {
        if let Some(bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::InvalidArgument(format!("{op}: label {bad} out of {c} classes")));
        }
    }
    Ok(())
}

/// Mean over rows of `-q^T log softmax(logits)`, where `q` puts `1 - eps` on
/// the true class and `eps / (C - 1)` on every other class. Rows cover all
/// classification views, so the row mean is also the view average.
pub fn ce_label_smoothed<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &[usize], eps: f64) -> Result<Var> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidArgument(format!("label smoothing must be in [0, 1), got {eps}")));
    }
    let shape = tape.value(logits).shape().to_vec();
    if shape.len() != 2 || shape[1] < 2 {
        return Err(Error::InvalidArgument(format!("logits must be B x C with C >= 2, got {:?}", shape)));
    }
    let (rows, c) = (shape[0], shape[1]);
    check_labels("ce_label_smoothed", labels, rows, Some(c))?;
    let off = T::lit(eps / (c as f64 - 1.0));
    let on = T::lit(1.0 - eps);
    let q = Tensor::from_fn(&[rows, c], |i| if labels[i / c] == i % c { on } else { off });
    let q = tape.constant(q);
    let lsm = tape.log_softmax(logits);
    let prod = tape.mul(q, lsm)?;
    let s = tape.sum(prod);
    Ok(tape.scale(s, T::lit(-1.0 / rows as f64)))
}

pub(crate) fn check_unit_rows<T: Scalar>(op: &str, z: &Tensor<T>) -> Result<()> {
    for r in 0..z.rows() {
        let n = z.row(r).iter().map(|v| v.to_f64().unwrap().powi(2)).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-5 {
            return Err(Error::InvalidArgument(format!("{op}: row {r} has norm {n}, expected unit norm")));
        }
    }
    Ok(())
}

/// Tuned contrastive loss over view-level embeddings.
///
/// With `s_ij = z_i . z_j / tau`, each anchor with at least one positive
/// contributes `-log(sum_p e^{s_ip} / D_i)` where
/// `D_i = sum_p e^{s_ip} + k2 sum_n e^{s_in} + k1 sum_p e^{-s_ip}`.
/// The loss is the mean over those anchors; with none it is the constant 0.
///
/// All exponentials are shifted by `-1/tau` (the bound on `|s_ij|` for unit
/// rows), which leaves the log-ratio unchanged.
pub fn tcl_loss<T: Scalar>(tape: &mut Tape<T>, z: Var, labels: &[usize], tau: f64, k1: f64, k2: f64) -> Result<Loss> {
    if !(tau > 0.0) || k1 < 0.0 || k2 < 0.0 {
        return Err(Error::InvalidArgument(format!("tcl_loss: tau={tau}, k1={k1}, k2={k2}")));
    }
    let b = tape.value(z).rows();
    check_labels("tcl_loss", labels, b, None)?;
    check_unit_rows("tcl_loss", tape.value(z))?;

    let pos = |i: usize, j: usize| i != j && labels[i] == labels[j];
    let valid: Vec<bool> = (0..b).map(|i| (0..b).any(|j| pos(i, j))).collect();
    let n_valid = valid.iter().filter(|&&v| v).count();
    if n_valid == 0 {
        let var = tape.constant(Tensor::scalar(T::zero()));
        return Ok(Loss { var, anchors: 0 });
    }
    let one = T::one();
    let pos_mask = tape.constant(Tensor::from_fn(&[b, b], |k| if pos(k / b, k % b) { one } else { T::zero() }));
    let neg_mask =
        tape.constant(Tensor::from_fn(&[b, b], |k| if labels[k / b] != labels[k % b] { one } else { T::zero() }));

    let shift = T::lit(-1.0 / tau);
    let sim = tape.matmul_nt(z, z)?;
    let s = tape.scale(sim, T::lit(1.0 / tau));
    let s_shift = tape.add_scalar(s, shift);
    let e_pos = tape.exp(s_shift);
    let neg_s = tape.scale(s, -one);
    let neg_s = tape.add_scalar(neg_s, shift);
    let e_inv = tape.exp(neg_s);

    let pm = tape.mul(e_pos, pos_mask)?;
    let num = tape.sum_rows(pm);
    let nm = tape.mul(e_pos, neg_mask)?;
    let negs = tape.sum_rows(nm);
    let hm = tape.mul(e_inv, pos_mask)?;
    let hard = tape.sum_rows(hm);
    let negs = tape.scale(negs, T::lit(k2));
    let hard = tape.scale(hard, T::lit(k1));
    let den = tape.add(num, negs)?;
    let den = tape.add(den, hard)?;

    anchor_mean(tape, num, den, &valid)
}

/// Mean over valid rows of `log(den) - log(num)`. Invalid rows get `+1` on
/// both sides to stay finite and carry zero weight.
pub(crate) fn anchor_mean<T: Scalar>(tape: &mut Tape<T>, num: Var, den: Var, valid: &[bool]) -> Result<Loss> {
    let b = valid.len();
    let n_valid = valid.iter().filter(|&&v| v).count();
    let pad = tape.constant(Tensor::from_fn(&[b], |i| if valid[i] { T::zero() } else { T::one() }));
    let w = T::lit(1.0 / n_valid as f64);
    let weights = tape.constant(Tensor::from_fn(&[b], |i| if valid[i] { w } else { T::zero() }));
    let num = tape.add(num, pad)?;
    let den = tape.add(den, pad)?;
    let ln = tape.log(num);
    let ld = tape.log(den);
    let l = tape.sub(ld, ln)?;
    let wl = tape.mul(l, weights)?;
    let var = tape.sum(wl);
    Ok(Loss { var, anchors: n_valid })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_c() {
        for eps in [0.0, 0.1, 0.5] {
            let mut tape = Tape::<f64>::new();
            let l = tape.constant(Tensor::full(&[4, 6], 0.7));
            let v = ce_label_smoothed(&mut tape, l, &[0, 1, 2, 5], eps).unwrap();
            assert!((tape.value(v).item() - 6f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn two_class_hand_value() {
        let mut tape = Tape::<f64>::new();
        let l = tape.constant(Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap());
        let v = ce_label_smoothed(&mut tape, l, &[0], 0.1).unwrap();
        let p0 = 1f64.exp() / (1f64.exp() + 1.0);
        let expect = -(0.9 * p0.ln() + 0.1 * (1.0 - p0).ln());
        assert!((tape.value(v).item() - expect).abs() < 1e-12);
        assert!((expect - 0.413262).abs() < 1e-6);
    }

    #[test]
    fn smoothing_of_one_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let l = tape.constant(Tensor::zeros(&[1, 3]));
        assert!(ce_label_smoothed(&mut tape, l, &[0], 1.0).is_err());
    }

    #[test]
    fn two_identical_positives() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::new(&[2, 3], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap());
        let l = tcl_loss(&mut tape, z, &[4, 4], 1.0, 1.0, 1.0).unwrap();
        let expect = (1.0 + (-2f64).exp()).ln();
        assert!((tape.value(l.var).item() - expect).abs() < 1e-12);
        assert!((expect - 0.126928).abs() < 1e-6);
        assert_eq!(l.anchors, 2);
    }

    #[test]
    fn distinct_labels_give_empty_loss() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let l = tcl_loss(&mut tape, z, &[0, 1], 0.1, 0.0, 1.0).unwrap();
        assert!(l.is_empty());
        assert_eq!(tape.value(l.var).item(), 0.0);
    }

    #[test]
    fn non_unit_rows_rejected() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::new(&[2, 2], vec![2.0, 0.0, 0.0, 1.0]).unwrap());
        assert!(matches!(tcl_loss(&mut tape, z, &[0, 0], 0.1, 0.0, 1.0), Err(Error::InvalidArgument(_))));
    }
}
