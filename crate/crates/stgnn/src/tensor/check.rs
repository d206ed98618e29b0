//! Finite-difference gradient verification.

use super::{tape, Tensor};
use crate::error::{Error, Result};

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1e-8, a.abs() + b.abs())
}

/// Compare the reverse-mode gradient of a scalar function against central
/// finite differences, coordinate by coordinate. Returns the maximum
/// relative error `|ad - fd| / max(1e-8, |ad| + |fd|)`.
///
/// `f` must be a pure function of its argument (plus captured constants)
/// and must not start or consume tapes itself.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if eps <= 0.0 {
        return Err(Error::Autodiff("grad_check: eps must be positive".into()));
    }
    if !x.requires_grad() {
        return Err(Error::Autodiff("grad_check: input must have requires_grad".into()));
    }
    x.zero_grad();
    tape::begin();
    let y = f(x)?;
    if y.numel() != 1 {
        tape::abort();
        return Err(Error::Autodiff(format!(
            "grad_check: function output must be scalar, got shape {:?}",
            y.shape()
        )));
    }
    tape::backward(&y)?;
    let ad = x.grad().unwrap_or_else(|| vec![0.0; x.numel()]);

    let mut max_err: f64 = 0.0;
    for i in 0..x.numel() {
        let orig = x.with_data_mut(|d| d[i]);
        x.with_data_mut(|d| d[i] = orig + eps);
        let fp = f(x)?.item()?;
        x.with_data_mut(|d| d[i] = orig - eps);
        let fm = f(x)?.item()?;
        x.with_data_mut(|d| d[i] = orig);
        let fd = (fp - fm) / (2.0 * eps);
        max_err = max_err.max(rel_err(ad[i], fd));
    }
    Ok(max_err)
}

/// Gradient check of a scalar loss against every coordinate of every named
/// parameter. Returns per-parameter maximum relative errors.
pub fn grad_check_params<F>(loss: F, params: &[(String, Tensor)], eps: f64) -> Result<Vec<(String, f64)>>
where
    F: Fn() -> Result<Tensor>,
{
    for (_, p) in params {
        p.zero_grad();
    }
    tape::begin();
    let l = loss()?;
    if l.numel() != 1 {
        tape::abort();
        return Err(Error::Autodiff("grad_check_params: loss must be scalar".into()));
    }
    tape::backward(&l)?;
    let grads: Vec<Vec<f64>> = params
        .iter()
        .map(|(_, p)| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let mut report = Vec::with_capacity(params.len());
    for ((name, p), ad) in params.iter().zip(&grads) {
        let mut max_err: f64 = 0.0;
        for i in 0..p.numel() {
            let orig = p.with_data_mut(|d| d[i]);
            p.with_data_mut(|d| d[i] = orig + eps);
            let fp = loss()?.item()?;
            p.with_data_mut(|d| d[i] = orig - eps);
            let fm = loss()?.item()?;
            p.with_data_mut(|d| d[i] = orig);
            let fd = (fp - fm) / (2.0 * eps);
            max_err = max_err.max(rel_err(ad[i], fd));
        }
        report.push((name.clone(), max_err));
    }
    Ok(report)
}
