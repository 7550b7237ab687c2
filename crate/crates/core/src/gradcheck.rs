//! Central finite-difference gradient checking in 64-bit precision.

use alloc::vec::Vec;

use crate::error::{contract_err, Result};
use crate::{Graph, Tensor, Var};

/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the autodiff gradient of a scalar function `f` at `x` with
/// central differences `(f(x + eps) - f(x - eps)) / 2 eps`, element by
/// element. Reports, never asserts.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new();
        let v = g.param(x.clone());
        let out = f(&mut g, v)?;
        g.backward(out)?;
        g.grad_tensor(v).into_vec()
    };
    let eval = |t: Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(t);
        let out = f(&mut g, v)?;
        let value = g.value(out);
        if value.numel() != 1 {
            return Err(contract_err("grad_check", "function must return a scalar"));
        }
        Ok(value.data()[0])
    };
    let mut numeric = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * eps));
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: analytic.first().copied().unwrap_or(0.0),
        numeric: numeric.first().copied().unwrap_or(0.0),
    };
    for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        let e = relative_error(a, n);
        if e > report.max_rel_error {
            report = GradCheckReport {
                max_rel_error: e,
                worst_index: i,
                analytic: a,
                numeric: n,
            };
        }
    }
    Ok(report)
}

/// [`grad_check`] over several inputs at once. `worst_index` counts through
/// the inputs' elements in order.
pub fn grad_check_many<F>(f: F, xs: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let analytic: Vec<f64> = {
        let mut g = Graph::new();
        let vs: Vec<Var> = xs.iter().map(|x| g.param(x.clone())).collect();
        let out = f(&mut g, &vs)?;
        g.backward(out)?;
        vs.iter().flat_map(|&v| g.grad_tensor(v).into_vec()).collect()
    };
    let eval = |ts: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vs: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vs)?;
        if g.value(out).numel() != 1 {
            return Err(contract_err("grad_check", "function must return a scalar"));
        }
        Ok(g.value(out).data()[0])
    };
    let mut work: Vec<Tensor<f64>> = xs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut flat = 0;
    for t in 0..xs.len() {
        for i in 0..xs[t].numel() {
            let orig = xs[t].data()[i];
            work[t].data_mut()[i] = orig + eps;
            let plus = eval(&work)?;
            work[t].data_mut()[i] = orig - eps;
            let minus = eval(&work)?;
            work[t].data_mut()[i] = orig;
            let n = (plus - minus) / (2.0 * eps);
            let a = analytic[flat];
            let e = relative_error(a, n);
            if e > report.max_rel_error || flat == 0 {
                report = GradCheckReport {
                    max_rel_error: e.max(report.max_rel_error),
                    worst_index: flat,
                    analytic: a,
                    numeric: n,
                };
            }
            flat += 1;
        }
    }
    Ok(report)
}

/// Checks the gradient of the training loss with respect to every
/// parameter of `model`. Batch norm runs in training mode on a fresh copy
/// of the buffers for every evaluation.
pub fn model_grad_check(
    model: &crate::models::Model,
    store: &crate::ParamStore<f64>,
    x: &Tensor<f64>,
    labels: &[usize],
    eps: f64,
) -> Result<GradCheckReport> {
    let params: Vec<Tensor<f64>> = store.params().iter().map(|p| p.tensor.clone()).collect();
    grad_check_many(
        |g, vs| {
            let bound = crate::params::Bound::from_vars(vs.to_vec());
            let mut buffers = store.buffers().to_vec();
            let input = g.constant(x.clone());
            let out = model.forward(
                &mut crate::models::Ctx {
                    graph: g,
                    bound: &bound,
                    buffers: &mut buffers,
                    train: true,
                },
                input,
                crate::attention::GateMode::Learned,
            )?;
            model.loss(g, &out, labels)
        },
        &params,
        eps,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::Rng64;

    #[test]
    fn sum_of_squares_is_exact() {
        let mut rng = Rng64::new(1);
        let x = Tensor::from_vec(&[3, 4], (0..12).map(|_| rng.uniform(-2.0, 2.0)).collect()).unwrap();
        let report = grad_check(
            |g, v| {
                let sq = g.mul(v, v)?;
                Ok(g.sum(sq))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-7, "{:?}", report);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // stop_gradient hides the dependence, so autodiff reports zero.
        let x = Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let report = grad_check(
            |g, v| {
                let b = g.stop_gradient(v);
                let sq = g.mul(b, b)?;
                Ok(g.sum(sq))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error > 0.5);
    }
}
