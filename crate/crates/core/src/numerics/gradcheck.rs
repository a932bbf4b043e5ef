//! Central finite-difference validation of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CoordMismatch {
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub param: usize,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    pub mismatches: Vec<CoordMismatch>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tol: f64,
    pub eps: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.mismatches.is_empty())
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

/// `|a - n| / max(1, |a|, |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok((tape, vars, out))
}

fn perturbed_value<F>(f: &F, params: &mut [Tensor], param: usize, coord: usize, delta: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let original = params[param].data()[coord];
    params[param].data_mut()[coord] = original + delta;
    let result = evaluate(f, params).map(|(tape, _, out)| tape.scalar(out));
    params[param].data_mut()[coord] = original;
    match result {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) | Err(Error::NonFinite(_)) => Err(Error::Evaluation(format!(
            "non-finite objective at parameter {param}, coordinate {coord} perturbed by {delta:e}"
        ))),
        Err(e) => Err(e),
    }
}

/// Checks every coordinate of every parameter.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_sampled(f, params, eps, tol, usize::MAX, 0)
}

/// Checks at most `max_coords` randomly chosen coordinates per parameter.
pub fn grad_check_sampled<F>(
    f: F,
    params: &[Tensor],
    eps: f64,
    tol: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("finite-difference step {eps:e} outside [1e-7, 1e-3]")));
    }
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    let (tape, vars, out) = evaluate(&f, params)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get_or_zeros(v, p.len()))
        .collect();
    drop(tape);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        tol,
        eps,
        params: Vec::with_capacity(params.len()),
    };
    for (pi, param) in params.iter().enumerate() {
        let coords: Vec<usize> = if param.len() <= max_coords {
            (0..param.len()).collect()
        } else {
            let mut picked = sample(&mut rng, param.len(), max_coords).into_vec();
            picked.sort_unstable();
            picked
        };
        let mut check = ParamCheck {
            param: pi,
            coords_checked: coords.len(),
            max_rel_error: 0.0,
            mismatches: Vec::new(),
        };
        for &c in &coords {
            let plus = perturbed_value(&f, &mut work, pi, c, eps)?;
            let minus = perturbed_value(&f, &mut work, pi, c, -eps)?;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[pi][c];
            let err = relative_error(a, numeric);
            check.max_rel_error = check.max_rel_error.max(err);
            if err > tol {
                check.mismatches.push(CoordMismatch {
                    coord: c,
                    analytic: a,
                    numeric,
                    rel_error: err,
                });
            }
        }
        report.params.push(check);
    }
    Ok(report)
}
