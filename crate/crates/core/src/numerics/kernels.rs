//! Elementary kernels shared by the tape and by value-level code paths.

use crate::error::{Error, Result};

/// Logit assigned to masked positions wherever a finite stand-in for -inf is needed.
pub const MASK_LOGIT: f64 = -1e9;

fn check_softmax_args(len: usize, tau: f64, mask: Option<&[bool]>) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    if let Some(mask) = mask {
        if mask.len() != len {
            return Err(Error::Shape {
                op: "softmax mask",
                left: vec![len],
                right: vec![mask.len()],
            });
        }
        if !mask.iter().any(|&keep| keep) {
            return Err(Error::Degenerate("every softmax position is masked".into()));
        }
    } else if len == 0 {
        return Err(Error::Degenerate("softmax over an empty vector".into()));
    }
    Ok(())
}

#[inline]
fn kept(mask: Option<&[bool]>, i: usize) -> bool {
    mask.map_or(true, |m| m[i])
}

/// `softmax(logits / tau)` over the unmasked positions. `mask[i] == true`
/// keeps position `i`; masked positions come out exactly zero.
pub fn softmax_temp(logits: &[f64], tau: f64, mask: Option<&[bool]>) -> Result<Vec<f64>> {
    check_softmax_args(logits.len(), tau, mask)?;
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, tau, mask, &mut out);
    Ok(out)
}

/// `log_softmax(logits / tau)`; masked positions receive [`MASK_LOGIT`].
pub fn log_softmax_temp(logits: &[f64], tau: f64, mask: Option<&[bool]>) -> Result<Vec<f64>> {
    check_softmax_args(logits.len(), tau, mask)?;
    let mut out = vec![0.0; logits.len()];
    log_softmax_into(logits, tau, mask, &mut out);
    Ok(out)
}

pub(crate) fn softmax_into(logits: &[f64], tau: f64, mask: Option<&[bool]>, out: &mut [f64]) {
    let max = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| kept(mask, i))
        .map(|(_, &v)| v / tau)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (i, (o, &x)) in out.iter_mut().zip(logits).enumerate() {
        *o = if kept(mask, i) {
            let e = (x / tau - max).exp();
            total += e;
            e
        } else {
            0.0
        };
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub(crate) fn log_softmax_into(logits: &[f64], tau: f64, mask: Option<&[bool]>, out: &mut [f64]) {
    let max = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| kept(mask, i))
        .map(|(_, &v)| v / tau)
        .fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| kept(mask, i))
        .map(|(_, &x)| (x / tau - max).exp())
        .sum();
    let log_z = max + total.ln();
    for (i, (o, &x)) in out.iter_mut().zip(logits).enumerate() {
        *o = if kept(mask, i) { x / tau - log_z } else { MASK_LOGIT };
    }
}

/// Shannon entropy in nats, ignoring zero entries.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// KL(p || q) in nats over entries where p > 0.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).ln())
        .sum()
}

/// Row-major `[r, k] x [k, c]` product accumulated into `out` (length `r * c`).
pub(crate) fn matmul_into(a: &[f64], b: &[f64], r: usize, k: usize, c: usize, out: &mut [f64]) {
    for i in 0..r {
        let out_row = &mut out[i * c..(i + 1) * c];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * c..(p + 1) * c];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_uniform_distribution() {
        let p = softmax_temp(&[0.0, 0.0, 0.0], 2.0, None).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn two_logits_at_temperature_two() {
        let e = std::f64::consts::E;
        let p = softmax_temp(&[2.0, 0.0], 2.0, None).unwrap();
        assert!((p[0] - e / (1.0 + e)).abs() < 1e-15);
        assert!((p[1] - 1.0 / (1.0 + e)).abs() < 1e-15);
    }

    #[test]
    fn shift_invariance() {
        let x = [0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = x.iter().map(|v| v + 17.25).collect();
        let a = softmax_temp(&x, 1.5, None).unwrap();
        let b = softmax_temp(&shifted, 1.5, None).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_positions_are_exactly_zero() {
        let p = softmax_temp(&[1.0, 5.0, 2.0], 1.0, Some(&[true, false, true])).unwrap();
        assert_eq!(p[1], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let lp = log_softmax_temp(&[1.0, 5.0, 2.0], 1.0, Some(&[true, false, true])).unwrap();
        assert_eq!(lp[1], MASK_LOGIT);
    }

    #[test]
    fn error_cases() {
        assert!(matches!(softmax_temp(&[1.0], 0.0, None), Err(Error::Config(_))));
        assert!(matches!(softmax_temp(&[1.0], -1.0, None), Err(Error::Config(_))));
        assert!(matches!(
            softmax_temp(&[1.0, 2.0], 1.0, Some(&[false, false])),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn entropy_grows_with_temperature() {
        let x = [3.0, 1.0, -0.5, 0.2, 2.2];
        let mut last = 0.0;
        for tau in [0.5, 1.0, 2.0, 3.0, 5.0, 10.0] {
            let h = entropy(&softmax_temp(&x, tau, None).unwrap());
            assert!(h >= last - 1e-12);
            last = h;
        }
    }

    #[test]
    fn large_logits_stay_finite() {
        let p = softmax_temp(&[1000.0, -1000.0, 999.0], 1.0, None).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        let lp = log_softmax_temp(&[1000.0, -1000.0], 1.0, None).unwrap();
        assert!(lp.iter().all(|v| v.is_finite()));
    }
}
