//! Finite-difference gradient checking with a five-point central stencil.

use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compares the analytic gradient returned by `f` against the fourth-order
/// central difference
/// `(-f(p + 2eps) + 8f(p + eps) - 8f(p - eps) + f(p - 2eps)) / (12 eps)`
/// for every parameter entry and returns the maximum relative error `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(f: F, params: &ParamStore<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&ParamStore<f64>) -> Result<(f64, ParamStore<f64>)>,
{
    grad_check_report(f, params, eps).map(|r| r.max_rel_error)
}

pub fn grad_check_report<F>(f: F, params: &ParamStore<f64>, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore<f64>) -> Result<(f64, ParamStore<f64>)>,
{
    let (loss, grads) = f(params)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss is {loss}")));
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe = params.clone();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let n = params.get(&name).len();
        let analytic: Vec<f64> = match grads.try_get(&name) {
            Some(g) => g.iter().copied().collect(),
            None => vec![0.0; n],
        };
        for i in 0..n {
            let orig = params
                .get(&name)
                .as_slice_memory_order()
                .expect("contiguous")[i];
            let mut at = |delta: f64| -> Result<f64> {
                probe
                    .get_mut(&name)
                    .as_slice_memory_order_mut()
                    .expect("contiguous")[i] = orig + delta;
                let (l, _) = f(&probe)?;
                if !l.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss probing `{name}`[{i}]"
                    )));
                }
                Ok(l)
            };
            let (up2, up, down, down2) = (at(2.0 * eps)?, at(eps)?, at(-eps)?, at(-2.0 * eps)?);
            probe
                .get_mut(&name)
                .as_slice_memory_order_mut()
                .expect("contiguous")[i] = orig;
            let numeric = (8.0 * (up - down) - (up2 - down2)) / (12.0 * eps);
            let err = rel_error(analytic[i], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = name.clone();
                report.worst_index = i;
                report.analytic = analytic[i];
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};

    fn params() -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.insert(
            "a",
            ArrayD::from_shape_vec(IxDyn(&[3]), vec![0.3, -1.2, 2.5]).unwrap(),
        )
        .unwrap();
        p.insert("b", ArrayD::from_elem(IxDyn(&[2, 2]), 0.7))
            .unwrap();
        p
    }

    #[test]
    fn half_squared_norm_is_exact() {
        let err = grad_check(
            |p| {
                let loss = p.iter().map(|(_, a)| a.mapv(|v| v * v).sum()).sum::<f64>() * 0.5;
                Ok((loss, p.clone()))
            },
            &params(),
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let err = grad_check(|p| Ok((4.2, p.zeros_like())), &params(), 1e-3).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let err = grad_check(
            |p| {
                let loss = p.iter().map(|(_, a)| a.mapv(|v| v * v).sum()).sum::<f64>();
                Ok((loss, p.clone()))
            },
            &params(),
            1e-3,
        )
        .unwrap();
        assert!(err > 0.1);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        assert!(matches!(
            grad_check(|p| Ok((f64::NAN, p.clone())), &params(), 1e-3),
            Err(Error::Numeric(_))
        ));
    }
}
