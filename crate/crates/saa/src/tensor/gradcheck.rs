//! Central finite-difference gradient checking.
//!
//! The numeric side re-evaluates the loss at x ± step per coordinate and is
//! fully independent of the backward pass it verifies. Callers must disable
//! dropout (eval mode) so the loss is deterministic.

use super::Tensor;
use crate::error::{Result, SaaError};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "max rel err {:.3e} at {}[{}] (analytic {:.6e}, numeric {:.6e})",
            self.max_rel_err, self.worst_param, self.worst_index, self.analytic, self.numeric
        )
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1.0_f64.max(a.abs()).max(n.abs())
}

/// Check analytic gradients of `loss_fn` with respect to every listed leaf
/// tensor. `loss_fn` must read the listed tensors and return a scalar loss.
pub fn grad_check_params(
    loss_fn: &dyn Fn() -> Result<Tensor>,
    params: &[(&str, Tensor)],
    step: f64,
) -> Result<GradCheckReport> {
    for (_, p) in params {
        p.zero_grad();
    }
    let loss = loss_fn()?;
    if !loss.item().is_finite() {
        return Err(SaaError::numerical("grad_check", "loss is not finite"));
    }
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|(_, p)| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for (pi, (name, p)) in params.iter().enumerate() {
        for i in 0..p.numel() {
            let orig = p.data()[i];
            p.set_data(|d| d[i] = orig + step);
            let fp = loss_fn()?.item();
            p.set_data(|d| d[i] = orig - step);
            let fm = loss_fn()?.item();
            p.set_data(|d| d[i] = orig);
            if !fp.is_finite() || !fm.is_finite() {
                return Err(SaaError::numerical(
                    "grad_check",
                    format!("non-finite loss perturbing {}[{}]", name, i),
                ));
            }
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic[pi][i];
            let e = rel_err(a, numeric);
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst_param = name.to_string();
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Single-input convenience: check d loss_fn(x) / dx against central
/// differences over every coordinate of `x`.
pub fn grad_check(
    loss_fn: &dyn Fn(&Tensor) -> Result<Tensor>,
    x: &Tensor,
    step: f64,
) -> Result<GradCheckReport> {
    let x = x.clone();
    let x2 = x.clone();
    grad_check_params(&move || loss_fn(&x2), &[("x", x.clone())], step)
}
