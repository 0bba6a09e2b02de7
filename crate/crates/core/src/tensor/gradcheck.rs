//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Pass threshold on the maximum relative error.
    pub rtol: f64,
    /// Lower bound on the relative-error denominator, so entries whose
    /// gradient is ~0 compare absolutely.
    pub abs_floor: f64,
    /// One-sided slopes disagreeing by more than this (relative) mark the
    /// entry as a non-differentiable point; it is skipped.
    pub kink_tol: f64,
    /// Check at most this many entries per input (sampled with `seed`).
    pub max_entries_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rtol: 1e-4,
            abs_floor: 1e-5,
            kink_tol: 1e-2,
            max_entries_per_input: None,
            seed: 0,
        }
    }
}

impl GradCheckConfig {
    pub fn with_rtol(rtol: f64) -> Self {
        Self {
            rtol,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntryCheck {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst: Option<EntryCheck>,
    pub checked: usize,
    /// `(input, index)` of entries skipped as kinks.
    pub skipped: Vec<(usize, usize)>,
    /// Set when evaluation produced a non-finite value; names the op.
    pub failure: Option<String>,
    pub rtol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.max_rel_err <= self.rtol
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        write!(
            f,
            "{verdict} max_rel_err={:.3e} (rtol {:.0e}) checked={} kinks_skipped={}",
            self.max_rel_err,
            self.rtol,
            self.checked,
            self.skipped.len()
        )?;
        if let Some(msg) = &self.failure {
            write!(f, " failure: {msg}")?;
        }
        Ok(())
    }
}

/// First op, in recording order, whose output is non-finite.
fn locate_non_finite(loss: &Tensor) -> String {
    let op = Tape::record(loss).ok().and_then(|tape| {
        tape.nodes()
            .iter()
            .find(|t| !t.all_finite())
            .map(|t| t.op_name().unwrap_or("leaf"))
    });
    format!("non-finite value produced by op `{}`", op.unwrap_or("?"))
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let v = {
        let _guard = super::no_grad();
        f(inputs)?.item()?
    };
    if !v.is_finite() {
        // Re-run with recording on to name the offending op.
        let tracked: Vec<Tensor> = inputs.iter().map(|t| t.detach().into_leaf(true)).collect();
        let y = f(&tracked)?;
        return Err(Error::Numeric(locate_non_finite(&y)));
    }
    Ok(v)
}

/// Compares the autodiff gradient of the scalar `f(inputs)` with respect to
/// every input against central differences.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let mut report = GradCheckReport {
        rtol: cfg.rtol,
        ..Default::default()
    };
    let leaves: Vec<Tensor> = inputs.iter().map(|t| t.detach().into_leaf(true)).collect();
    let loss = match f(&leaves) {
        Ok(l) => l,
        Err(Error::Numeric(msg)) => {
            report.failure = Some(msg);
            return Ok(report);
        }
        Err(e) => return Err(e),
    };
    if loss.numel() != 1 {
        return Err(Error::Contract("grad_check needs a scalar function".into()));
    }
    if !loss.all_finite() {
        report.failure = Some(locate_non_finite(&loss));
        return Ok(report);
    }
    let grads = loss.backward()?;

    let f0 = match evaluate(&f, &leaves) {
        Ok(v) => v,
        Err(Error::Numeric(msg)) => {
            report.failure = Some(msg);
            return Ok(report);
        }
        Err(e) => return Err(e),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let h = cfg.step;
    for (k, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get_or_zeros(leaf);
        let n = leaf.numel();
        let mut indices: Vec<usize> = match cfg.max_entries_per_input {
            Some(m) if m < n => sample(&mut rng, n, m).into_vec(),
            _ => (0..n).collect(),
        };
        indices.sort_unstable();
        for idx in indices {
            let probe = |delta: f64| -> Result<f64> {
                let mut data = leaf.to_vec();
                data[idx] += delta;
                let mut xs = leaves.clone();
                xs[k] = Tensor::from_vec(data, leaf.shape().clone())?;
                evaluate(&f, &xs)
            };
            let outcome = (|| -> Result<(f64, f64)> { Ok((probe(h)?, probe(-h)?)) })();
            let (fp, fm) = match outcome {
                Ok(v) => v,
                Err(Error::Numeric(msg)) => {
                    report.failure = Some(msg);
                    return Ok(report);
                }
                Err(e) => return Err(e),
            };
            let d_plus = (fp - f0) / h;
            let d_minus = (f0 - fm) / h;
            let scale = 1f64.max(d_plus.abs()).max(d_minus.abs());
            if (d_plus - d_minus).abs() > cfg.kink_tol * scale {
                report.skipped.push((k, idx));
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[idx];
            let denom = a.abs().max(numeric.abs()).max(cfg.abs_floor);
            let rel_err = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel_err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel_err);
                report.worst = Some(EntryCheck {
                    input: k,
                    index: idx,
                    analytic: a,
                    numeric,
                    rel_err,
                });
            }
        }
    }
    Ok(report)
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F>(f: F, x: &Tensor, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    grad_check_many(|xs: &[Tensor]| f(&xs[0]), std::slice::from_ref(x), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn sigmoid_sum_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::uniform([8], -2.0, 2.0, &mut rng);
        let r = grad_check(|x| x.sigmoid()?.sum_all(), &x, &GradCheckConfig::default()).unwrap();
        assert!(r.passed(), "{r}");
        assert_eq!(r.checked, 8);
    }

    #[test]
    fn abs_kink_is_skipped() {
        let x = Tensor::from_vec(vec![0.5, 0.0, -1.5], [3]).unwrap();
        let r = grad_check(|x| x.abs()?.sum_all(), &x, &GradCheckConfig::default()).unwrap();
        assert_eq!(r.skipped, vec![(0, 1)]);
        assert_eq!(r.checked, 2);
        assert!(r.passed());
    }

    #[test]
    fn wrong_gradient_fails() {
        // d/dx of x*stop(x) is reported as x by autodiff, but 2x numerically.
        let x = Tensor::from_vec(vec![1.0, 2.0], [2]).unwrap();
        let r = grad_check(|x| x.mul(&x.detach())?.sum_all(), &x, &GradCheckConfig::default()).unwrap();
        assert!(!r.passed());
        assert!((r.max_rel_err - 0.5).abs() < 1e-6);
    }

    #[test]
    fn non_finite_is_reported_with_op() {
        let x = Tensor::from_vec(vec![800.0], [1]).unwrap();
        let r = grad_check(|x| x.exp()?.exp()?.sum_all(), &x, &GradCheckConfig::default()).unwrap();
        assert!(!r.passed());
        assert!(r.failure.unwrap().contains("exp"));
    }
}
