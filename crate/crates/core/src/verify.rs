//! Gradient-check and oracle suites behind the `verify` command.
//!
//! Every loss is checked in `f64` against central finite differences on
//! randomized batches; the oracle suites compare against plain reference
//! code that shares nothing with the tape.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::compress::{kd_loss, post_objective};
use crate::contrast::{ce_label_smoothed, dictionary_loss, pre_objective, tcl_loss, ClassMemory};
use crate::error::{Error, Result};
use crate::tensor::{grad_check, GradCheckOptions, Tape, Tensor, Var};

/// Finite-difference step for every gradient suite.
pub const GRAD_STEP: f64 = 1e-5;
/// Maximum relative error accepted by the gradient suites.
pub const GRAD_TOL: f64 = 1e-5;
pub const GRAD_SUITES: [&str; 6] = ["ce", "tcl", "dict", "kd", "pre", "post"];

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: String,
    pub cases: usize,
    /// Largest observed error (relative for gradients, absolute otherwise).
    pub max_err: f64,
    pub tol: f64,
    pub passed: bool,
}

impl fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<22} cases {:>4}  max err {:.3e}  tol {:.0e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.max_err,
            self.tol
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerifyReport {
    pub suites: Vec<SuiteResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }
}

/// Batch geometry for case `i`, cycling through `B x d x C`.
pub fn case_shape(i: usize) -> (usize, usize, usize) {
    ([4, 8, 16][i % 3], [8, 16][(i / 3) % 2], [2, 6][(i / 6) % 2])
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| scale * rng.sample::<f64, _>(StandardNormal))
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Random labels in `0..c` with `labels[1] == labels[0]`, so at least one
/// in-batch positive pair exists.
fn labels(rng: &mut ChaCha8Rng, b: usize, c: usize) -> Vec<usize> {
    let mut l: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
    l[1] = l[0];
    l
}

fn random_memory(rng: &mut ChaCha8Rng, c: usize, d: usize) -> ClassMemory {
    let mut mem = ClassMemory::new(c, d, 12);
    for _ in 0..rng.random_range(4..30) {
        let v = unit(rng, d);
        mem.enqueue(rng.random_range(0..c), &v);
    }
    for class in 0..c {
        if rng.random_bool(0.7) {
            let v = unit(rng, d);
            mem.update_prototype(class, &v, 0.9);
        }
    }
    mem
}

struct Case {
    b: usize,
    labels: Vec<usize>,
    params: Vec<Tensor<f64>>,
    mem: ClassMemory,
    teacher: Vec<Tensor<f64>>,
    tau: f64,
    k1: f64,
    k2: f64,
    p: usize,
    q: usize,
    temperature: f64,
    alpha: f64,
    lambda: f64,
    kd_alpha: f64,
}

impl Case {
    fn draw(rng: &mut ChaCha8Rng, i: usize) -> Self {
        let (b, d, c) = case_shape(i);
        Case {
            b,
            labels: labels(rng, b, c),
            params: vec![normal(rng, &[b, c], 1.5), normal(rng, &[b, d], 1.0), normal(rng, &[b, c], 1.5)],
            mem: random_memory(rng, c, d),
            teacher: vec![normal(rng, &[b, c], 2.0), normal(rng, &[b, c], 2.0)],
            tau: rng.random_range(0.1..1.0),
            k1: rng.random_range(0.0..0.5),
            k2: rng.random_range(0.5..1.5),
            p: rng.random_range(1..5),
            q: rng.random_range(1..9),
            temperature: rng.random_range(1.0..5.0),
            alpha: rng.random_range(0.0..1.0),
            lambda: rng.random_range(0.0..1.0),
            kd_alpha: rng.random_range(0.0..1.0),
        }
    }

    fn con(&self, t: &mut Tape<f64>, feats: Var) -> Result<(Var, Var)> {
        let z = t.l2_normalize_rows(feats);
        let tcl = tcl_loss(t, z, &self.labels, self.tau, self.k1, self.k2)?.var;
        let dict = dictionary_loss(t, z, &self.labels, &self.mem, self.tau, self.p, self.q, 0.5)?.var;
        Ok((tcl, dict))
    }

    /// Scalar objective for suite `name` over `[logits, features, logits2]`.
    fn objective(&self, name: &str, t: &mut Tape<f64>, v: &[Var]) -> Result<Var> {
        let eps = 0.1;
        match name {
            "ce" => ce_label_smoothed(t, v[0], &self.labels, eps),
            "tcl" => Ok(self.con(t, v[1])?.0),
            "dict" => Ok(self.con(t, v[1])?.1),
            "kd" => kd_loss(t, &[v[0], v[2]], &self.teacher, self.temperature),
            "pre" => {
                let ce = ce_label_smoothed(t, v[0], &self.labels, eps)?;
                let (tcl, dict) = self.con(t, v[1])?;
                Ok(pre_objective(t, ce, tcl, dict, self.alpha, self.lambda)?.1)
            }
            "post" => {
                // Two views stacked as rows, the layout used in training.
                let lab2: Vec<usize> = self.labels.iter().chain(&self.labels).copied().collect();
                let stacked = stack_rows(t, v[0], v[2], self.b)?;
                let ce = ce_label_smoothed(t, stacked, &lab2, eps)?;
                let kd = kd_loss(t, &[v[0], v[2]], &self.teacher, self.temperature)?;
                let (tcl, dict) = self.con(t, v[1])?;
                let con = crate::contrast::blend(t, tcl, dict, self.alpha)?;
                Ok(post_objective(t, ce, kd, con, self.kd_alpha, self.lambda)?.1)
            }
            other => Err(Error::InvalidArgument(format!("unknown gradient suite {other}"))),
        }
    }
}

/// Vertical concatenation of two `b x c` matrices using tape primitives:
/// `[a; 0] + [0; b]` through selection matrices.
fn stack_rows(t: &mut Tape<f64>, a: Var, b: Var, rows: usize) -> Result<Var> {
    let n = 2 * rows;
    let top = t.constant(Tensor::from_fn(&[n, rows], |k| if k / rows == k % rows { 1.0 } else { 0.0 }));
    let bottom = t.constant(Tensor::from_fn(&[n, rows], |k| if k / rows == k % rows + rows { 1.0 } else { 0.0 }));
    let a2 = t.matmul(top, a)?;
    let b2 = t.matmul(bottom, b)?;
    t.add(a2, b2)
}

/// Runs `cases` randomized gradient checks for one objective.
pub fn grad_suite(name: &str, cases: usize, seed: u64) -> Result<SuiteResult> {
    if !GRAD_SUITES.contains(&name) {
        return Err(Error::InvalidArgument(format!("unknown gradient suite {name}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name.bytes().fold(0u64, |h, c| h.wrapping_mul(131).wrapping_add(c as u64)));
    let opts = GradCheckOptions { step: GRAD_STEP, coords: usize::MAX, tol_rel: GRAD_TOL, seed };
    let mut max_err = 0f64;
    for i in 0..cases {
        let case = Case::draw(&mut rng, i);
        let report = grad_check(|t, v| case.objective(name, t, v), &case.params, &opts)?;
        max_err = max_err.max(report.max_rel_err);
    }
    Ok(SuiteResult {
        name: format!("grad/{name}"),
        cases,
        max_err,
        tol: GRAD_TOL,
        passed: max_err < GRAD_TOL,
    })
}

/// Supervised contrastive loss in plain loops: for each anchor with a
/// positive, `-log(sum_p e^{s_ip} / sum_{a != i} e^{s_ia})`, averaged.
pub fn supcon_reference(z: &[Vec<f64>], labels: &[usize], tau: f64) -> f64 {
    let mut total = 0.0;
    let mut anchors = 0;
    for i in 0..z.len() {
        let s = |j: usize| z[i].iter().zip(&z[j]).map(|(a, b)| a * b).sum::<f64>() / tau;
        let mut num = 0.0;
        let mut den = 0.0;
        let mut has_pos = false;
        for j in (0..z.len()).filter(|&j| j != i) {
            let e = s(j).exp();
            den += e;
            if labels[j] == labels[i] {
                num += e;
                has_pos = true;
            }
        }
        if has_pos {
            total -= (num / den).ln();
            anchors += 1;
        }
    }
    if anchors == 0 {
        0.0
    } else {
        total / anchors as f64
    }
}

/// TCL with `k1 = 0, k2 = 1` against [`supcon_reference`].
pub fn supcon_oracle_suite(batches: usize, seed: u64) -> Result<SuiteResult> {
    let tol = 1e-10;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err = 0f64;
    for i in 0..batches {
        let (b, d, c) = case_shape(i);
        let tau = rng.random_range(0.05..1.0);
        let z: Vec<Vec<f64>> = (0..b).map(|_| unit(&mut rng, d)).collect();
        let l = labels(&mut rng, b, c);
        let mut tape = Tape::new();
        let zv = tape.constant(Tensor::new(&[b, d], z.concat())?);
        let loss = tcl_loss(&mut tape, zv, &l, tau, 0.0, 1.0)?;
        let got = tape.value(loss.var).item();
        max_err = max_err.max((got - supcon_reference(&z, &l, tau)).abs());
    }
    Ok(SuiteResult { name: "oracle/supcon".into(), cases: batches, max_err, tol, passed: max_err < tol })
}

/// Exhaustive selection: repeatedly take the best remaining row by
/// `(score desc, age asc)`.
fn select_exhaustive(cands: &[(f64, u64, usize)], k: usize) -> Vec<usize> {
    let mut left: Vec<(f64, u64, usize)> = cands.to_vec();
    let mut out = Vec::new();
    while out.len() < k && !left.is_empty() {
        let mut best = 0;
        for j in 1..left.len() {
            let (s, q, _) = left[j];
            let (bs, bq, _) = left[best];
            if s > bs || (s == bs && q < bq) {
                best = j;
            }
        }
        out.push(left.remove(best).2);
    }
    out
}

/// Memory retrieval against exhaustive scoring of every stored row.
pub fn retrieval_oracle_suite(memories: usize, seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0usize;
    for i in 0..memories {
        let (_, d, c) = case_shape(i);
        let mut mem = ClassMemory::new(c, d, rng.random_range(1..20));
        let mut pool: Vec<Vec<f64>> = Vec::new();
        for _ in 0..rng.random_range(0..80) {
            // Re-insert earlier vectors now and then to force score ties.
            let v = if !pool.is_empty() && rng.random_bool(0.2) {
                pool[rng.random_range(0..pool.len())].clone()
            } else {
                unit(&mut rng, d)
            };
            mem.enqueue(rng.random_range(0..c), &v);
            pool.push(v);
        }
        let anchor = if !pool.is_empty() && rng.random_bool(0.3) {
            pool[rng.random_range(0..pool.len())].clone()
        } else {
            unit(&mut rng, d)
        };
        let label = rng.random_range(0..c);
        let (p, q) = (rng.random_range(1..10), rng.random_range(1..40));

        let (flat, meta) = mem.bank();
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (row, &(class, seq)) in meta.iter().enumerate() {
            let s: f64 = anchor.iter().zip(&flat[row * d..(row + 1) * d]).map(|(a, b)| a * b).sum();
            if class == label {
                pos.push((s, seq, row));
            } else {
                neg.push((s, seq, row));
            }
        }
        let got = mem.retrieve(&anchor, label, p, q);
        if got.positives != select_exhaustive(&pos, p) || got.negatives != select_exhaustive(&neg, q) {
            mismatches += 1;
        }
    }
    Ok(SuiteResult {
        name: "oracle/retrieval".into(),
        cases: memories,
        max_err: mismatches as f64,
        tol: 1.0,
        passed: mismatches == 0,
    })
}

/// Closed-form values for small inputs.
pub fn hand_value_suite() -> Result<Vec<SuiteResult>> {
    let e = 1f64.exp();
    let mut out = Vec::new();
    let mut push = |name: &str, got: f64, want: f64, tol: f64| {
        let err = (got - want).abs();
        out.push(SuiteResult { name: format!("pin/{name}"), cases: 1, max_err: err, tol, passed: err <= tol });
    };

    let mut t = Tape::<f64>::new();
    let z = t.constant(Tensor::new(&[2, 3], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0])?);
    let v = tcl_loss(&mut t, z, &[0, 0], 1.0, 1.0, 1.0)?.var;
    push("tcl_two_positive", t.value(v).item(), (1.0 + (-2f64).exp()).ln(), 1e-9);

    let s = t.constant(Tensor::new(&[1, 2], vec![0.0, 1.0])?);
    let v = kd_loss(&mut t, &[s], &[Tensor::new(&[1, 2], vec![1.0, 0.0])?], 1.0)?;
    push("kd_two_class", t.value(v).item(), (e - 1.0) / (e + 1.0), 1e-9);

    for c in [2usize, 6, 10] {
        let l = t.constant(Tensor::full(&[3, c], -0.25));
        let v = ce_label_smoothed(&mut t, l, &[0, 1, c - 1], 0.1)?;
        push(&format!("ce_uniform_c{c}"), t.value(v).item(), (c as f64).ln(), 1e-12);
    }

    let mut mem = ClassMemory::new(1, 2, 1);
    mem.update_prototype(0, &[1.0, 0.0], 0.9);
    mem.update_prototype(0, &[0.0, 1.0], 0.9);
    let mu = mem.prototype(0).map(|m| m.to_vec()).unwrap_or_default();
    push("ema_x", mu[0], 0.99388, 1e-5);
    push("ema_y", mu[1], 0.11043, 1e-5);
    Ok(out)
}

/// Every suite: `cases` gradient cases per objective and `oracle_cases`
/// batches per oracle.
pub fn run_all(cases: usize, oracle_cases: usize, seed: u64) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    for name in GRAD_SUITES {
        report.suites.push(grad_suite(name, cases, seed)?);
    }
    report.suites.push(supcon_oracle_suite(oracle_cases, seed)?);
    report.suites.push(retrieval_oracle_suite(oracle_cases, seed)?);
    report.suites.extend(hand_value_suite()?);
    Ok(report)
}
