use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Settings for [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates checked per parameter (all when the parameter is smaller).
    pub coords: usize,
    pub tol_rel: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, coords: 200, tol_rel: 1e-5, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub worst_coord: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub tol_rel: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol_rel
    }
}

fn eval<F>(f: &F, params: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    check_finite(&tape)?;
    Ok(tape.value(out).item())
}

fn check_finite(tape: &Tape<f64>) -> Result<()> {
    match tape.first_non_finite() {
        Some((v, kind)) => Err(Error::Numeric(format!(
            "non-finite value produced by node {} ({})",
            v.index(),
            kind
        ))),
        None => Ok(()),
    }
}

/// Compares tape gradients of a scalar function against central finite
/// differences. Relative error is `|ga - gn| / max(1, |ga|, |gn|)`.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    check_finite(&tape)?;
    let grads = tape.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut report = GradCheckReport { params: Vec::new(), max_rel_err: 0.0, tol_rel: opts.tol_rel };
    for (pi, var) in vars.iter().enumerate() {
        let n = params[pi].numel();
        let analytic = grads.get(*var).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; n]);
        let coords: Vec<usize> = if n <= opts.coords {
            (0..n).collect()
        } else {
            let mut c = rand::seq::index::sample(&mut rng, n, opts.coords).into_vec();
            c.sort_unstable();
            c
        };
        let mut pc = ParamCheck { coords_checked: coords.len(), max_rel_err: 0.0, worst_coord: 0 };
        for &c in &coords {
            let orig = work[pi].data()[c];
            work[pi].data_mut()[c] = orig + opts.step;
            let fp = eval(&f, &work)?;
            work[pi].data_mut()[c] = orig - opts.step;
            let fm = eval(&f, &work)?;
            work[pi].data_mut()[c] = orig;
            let numeric = (fp - fm) / (2.0 * opts.step);
            let ga = analytic[c];
            let rel = (ga - numeric).abs() / 1f64.max(ga.abs()).max(numeric.abs());
            if rel > pc.max_rel_err {
                pc.max_rel_err = rel;
                pc.worst_coord = c;
            }
        }
        report.max_rel_err = report.max_rel_err.max(pc.max_rel_err);
        report.params.push(pc);
    }
    Ok(report)
}
