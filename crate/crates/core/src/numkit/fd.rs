use super::ParamVector;
use crate::{Error, Result};

/// Central differences `(L(θ + εe_j) - L(θ - εe_j)) / 2ε` for every coordinate.
pub fn finite_diff_grad<F>(mut loss_fn: F, params: &ParamVector, eps: f64) -> Result<ParamVector>
where
    F: FnMut(&ParamVector) -> f64,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::input(format!("eps must be positive, got {eps}")));
    }
    let mut probe = params.clone();
    let mut grad = ParamVector::zeros(params.layout().clone());
    for j in 0..params.len() {
        let orig = probe.data()[j];
        probe.data_mut()[j] = orig + eps;
        let plus = loss_fn(&probe);
        probe.data_mut()[j] = orig - eps;
        let minus = loss_fn(&probe);
        probe.data_mut()[j] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss when perturbing coordinate {j}")));
        }
        grad.data_mut()[j] = (plus - minus) / (2.0 * eps);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{LayerSlot, Layout};
    use std::sync::Arc;

    fn vector(data: Vec<f64>) -> ParamVector {
        let layout = Layout::new(vec![LayerSlot {
            name: "theta".into(),
            offset: 0,
            shape: vec![data.len()],
        }])
        .unwrap();
        ParamVector::new(Arc::new(layout), data).unwrap()
    }

    #[test]
    fn quadratic_gradient_is_identity() {
        let theta = vector(vec![1.5, -2.0, 0.25, 3.0]);
        let eps = 1e-4;
        let g = finite_diff_grad(|p| 0.5 * p.dot(p), &theta, eps).unwrap();
        assert!(g.max_abs_diff(&theta) <= eps * eps * 10.0);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let theta = vector(vec![1.0, 2.0]);
        let g = finite_diff_grad(|_| 4.2, &theta, 1e-3).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let theta = vector(vec![0.0]);
        let r = finite_diff_grad(|p| if p.data()[0] > 0.0 { f64::NAN } else { 0.0 }, &theta, 1e-3);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn bad_eps_rejected() {
        assert!(finite_diff_grad(|_| 0.0, &vector(vec![1.0]), 0.0).is_err());
    }
}
