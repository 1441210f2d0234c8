//! Top Hessian eigenvalues by power iteration with deflation. Hessian-vector
//! products are central differences of the gradient.

use serde::{Deserialize, Serialize};

use crate::numkit::{cross_entropy, mlp_backward, mlp_forward, MlpSpec, Mode, ParamVector, Purpose, SeededRng, Tensor};
use crate::{Error, Result};

pub const HVP_DELTA: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianSpectrum {
    /// Ordered by decreasing magnitude.
    pub eigenvalues: Vec<f64>,
    pub iterations: Vec<usize>,
    pub residuals: Vec<f64>,
    pub converged: Vec<bool>,
}

/// `(g(θ + εv) - g(θ - εv)) / 2ε` with `ε = delta / ‖v‖`.
pub fn hvp<G>(grad_fn: &G, params: &ParamVector, v: &ParamVector, delta: f64) -> Result<ParamVector>
where
    G: Fn(&ParamVector) -> Result<ParamVector>,
{
    let norm = v.norm();
    if norm == 0.0 {
        return Ok(ParamVector::zeros(params.layout().clone()));
    }
    let eps = delta / norm;
    let mut plus = params.clone();
    plus.axpy(eps, v)?;
    let mut minus = params.clone();
    minus.axpy(-eps, v)?;
    let mut out = grad_fn(&plus)?;
    out.axpy(-1.0, &grad_fn(&minus)?)?;
    out.scale(1.0 / (2.0 * eps));
    if !out.is_finite() {
        return Err(Error::Numeric("non-finite Hessian-vector product".into()));
    }
    Ok(out)
}

/// Power iteration on the Hessian of an arbitrary gradient oracle.
pub fn hessian_top_eigs_with<G>(
    grad_fn: G,
    params: &ParamVector,
    k: usize,
    max_iter: usize,
    tol: f64,
    seed: u64,
) -> Result<HessianSpectrum>
where
    G: Fn(&ParamVector) -> Result<ParamVector>,
{
    if k == 0 || k > params.len() {
        return Err(Error::input(format!("k must be in 1..={}", params.len())));
    }
    let mut found: Vec<(f64, ParamVector)> = Vec::new();
    let mut spec = HessianSpectrum {
        eigenvalues: Vec::new(),
        iterations: Vec::new(),
        residuals: Vec::new(),
        converged: Vec::new(),
    };
    for idx in 0..k {
        let mut rng = SeededRng::for_purpose(seed, Purpose::Analysis, idx as u64);
        let mut v = params.with_data((0..params.len()).map(|_| rng.normal()).collect())?;
        orthogonalize(&mut v, &found);
        v.scale(1.0 / v.norm());
        let mut lambda = 0.0;
        let mut residual = f64::INFINITY;
        let mut iters = 0;
        let mut ok = false;
        while iters < max_iter {
            iters += 1;
            let mut w = hvp(&grad_fn, params, &v, HVP_DELTA)?;
            for (lam, u) in &found {
                w.axpy(-lam * u.dot(&v), u)?;
            }
            lambda = v.dot(&w);
            let mut r = w.clone();
            r.axpy(-lambda, &v)?;
            residual = r.norm();
            if residual <= tol * lambda.abs().max(1.0) {
                ok = true;
                break;
            }
            let wn = w.norm();
            if wn == 0.0 {
                ok = true;
                break;
            }
            w.scale(1.0 / wn);
            orthogonalize(&mut w, &found);
            let n = w.norm();
            w.scale(1.0 / n);
            v = w;
        }
        spec.eigenvalues.push(lambda);
        spec.iterations.push(iters);
        spec.residuals.push(residual);
        spec.converged.push(ok);
        found.push((lambda, v));
    }
    Ok(spec)
}

fn orthogonalize(v: &mut ParamVector, basis: &[(f64, ParamVector)]) {
    for (_, u) in basis {
        let c = u.dot(v);
        v.axpy(-c, u).expect("same layout");
    }
}

/// Top-`k` Hessian eigenvalues of the mean cross-entropy on `(x, y)`.
#[allow(clippy::too_many_arguments)]
pub fn hessian_top_eigs(
    spec: &MlpSpec,
    params: &ParamVector,
    x: &Tensor,
    y: &[usize],
    k: usize,
    max_iter: usize,
    tol: f64,
    seed: u64,
) -> Result<HessianSpectrum> {
    let grad = |p: &ParamVector| -> Result<ParamVector> {
        let (logits, cache) = mlp_forward(spec, p, x, Mode::Eval)?;
        let (_, g) = cross_entropy(&logits, y)?;
        mlp_backward(spec, &cache, &g)
    };
    hessian_top_eigs_with(grad, params, k, max_iter, tol, seed)
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
    fn diagonal_quadratic_spectrum() {
        let theta = vector(vec![0.3, -0.7]);
        let grad = |p: &ParamVector| Ok(p.with_data(vec![3.0 * p.data()[0], p.data()[1]]).unwrap());
        let s = hessian_top_eigs_with(grad, &theta, 2, 1000, 1e-10, 0).unwrap();
        assert!((s.eigenvalues[0] - 3.0).abs() < 1e-6);
        assert!((s.eigenvalues[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn scaling_the_loss_scales_the_top_eigenvalue() {
        let theta = vector(vec![1.0, 2.0, 3.0]);
        let d = [5.0, 2.0, 1.0];
        let make = |c: f64| {
            move |p: &ParamVector| Ok(p.with_data(p.data().iter().zip(d).map(|(v, h)| c * h * v).collect()).unwrap())
        };
        let a = hessian_top_eigs_with(make(1.0), &theta, 1, 1000, 1e-10, 1).unwrap();
        let b = hessian_top_eigs_with(make(2.5), &theta, 1, 1000, 1e-10, 1).unwrap();
        assert!((b.eigenvalues[0] - 2.5 * a.eigenvalues[0]).abs() < 1e-6);
    }

    #[test]
    fn bad_k_rejected() {
        let theta = vector(vec![1.0]);
        assert!(hessian_top_eigs_with(|p: &ParamVector| Ok(p.clone()), &theta, 2, 10, 1e-6, 0).is_err());
    }
}
