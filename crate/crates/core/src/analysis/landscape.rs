use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::numkit::{evaluate, MlpSpec, ParamVector, Purpose, SeededRng, Tensor};
use crate::weightspace::{convex_combine, multiplicative_perturb, EnsembleWeights, SimplexPoint};
use crate::{Error, Result};

/// Loss and accuracy along `α·w_a + (1-α)·w_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEval {
    pub alphas: Vec<f64>,
    pub losses: Vec<f64>,
    pub accuracies: Vec<f64>,
    /// Labels of `(w_a, w_b)`; `α = 1` is `w_a`.
    pub endpoints: (String, String),
}

/// `k` evenly spaced points from `w_b` (`α = 0`) to `w_a` (`α = 1`). The
/// endpoints are exact copies.
pub fn linear_path(w_a: &ParamVector, w_b: &ParamVector, k: usize) -> Result<Vec<(f64, ParamVector)>> {
    if k < 2 {
        return Err(Error::input("a path needs at least 2 points"));
    }
    w_a.check_layout(w_b, "path endpoints")?;
    Ok((0..k)
        .map(|j| {
            let alpha = j as f64 / (k - 1) as f64;
            let point = if j == 0 {
                w_b.clone()
            } else if j == k - 1 {
                w_a.clone()
            } else {
                let mut p = w_a.scaled(alpha);
                p.axpy(1.0 - alpha, w_b).expect("layouts checked");
                p
            };
            (alpha, point)
        })
        .collect())
}

/// Path evaluation with an arbitrary `(loss, accuracy)` oracle.
pub fn eval_linear_path_with<F>(
    w_a: &ParamVector,
    w_b: &ParamVector,
    k: usize,
    labels: (&str, &str),
    eval: F,
) -> Result<PathEval>
where
    F: Fn(&ParamVector) -> Result<(f64, f64)> + Sync,
{
    let points = linear_path(w_a, w_b, k)?;
    let evals: Vec<(f64, f64)> = points.par_iter().map(|(_, p)| eval(p)).collect::<Result<_>>()?;
    Ok(PathEval {
        alphas: points.iter().map(|(a, _)| *a).collect(),
        losses: evals.iter().map(|e| e.0).collect(),
        accuracies: evals.iter().map(|e| e.1).collect(),
        endpoints: (labels.0.to_string(), labels.1.to_string()),
    })
}

pub fn eval_linear_path(
    spec: &MlpSpec,
    w_a: &ParamVector,
    w_b: &ParamVector,
    k: usize,
    x: &Tensor,
    y: &[usize],
) -> Result<PathEval> {
    eval_linear_path_with(w_a, w_b, k, ("later", "earlier"), |p| evaluate(spec, p, x, y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub alpha: [f64; 3],
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexGrid {
    pub resolution: usize,
    pub points: Vec<GridPoint>,
}

/// Barycentric points `(i, j, k) / r` with `i + j + k = r`.
pub fn simplex_grid_points(r: usize) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity((r + 1) * (r + 2) / 2);
    let rf = r as f64;
    for i in (0..=r).rev() {
        for j in (0..=r - i).rev() {
            let k = r - i - j;
            out.push([i as f64 / rf, j as f64 / rf, k as f64 / rf]);
        }
    }
    out
}

/// Evaluates a three-member subspace on a barycentric grid.
pub fn eval_simplex_grid(
    spec: &MlpSpec,
    w: &EnsembleWeights,
    resolution: usize,
    x: &Tensor,
    y: &[usize],
) -> Result<SimplexGrid> {
    if w.n() != 3 {
        return Err(Error::input(format!("simplex grids are only supported for n = 3, got {}", w.n())));
    }
    if resolution < 2 {
        return Err(Error::input("grid resolution must be >= 2"));
    }
    let points = simplex_grid_points(resolution)
        .into_par_iter()
        .map(|alpha| {
            let p = convex_combine(w, &SimplexPoint::new(alpha.to_vec())?)?;
            let (loss, accuracy) = evaluate(spec, &p, x, y)?;
            Ok(GridPoint { alpha, loss, accuracy })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimplexGrid { resolution, points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub sigma: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub accuracies: Vec<f64>,
}

/// Accuracy under `trials` multiplicative `N(1, σ)` perturbations per σ.
pub fn eval_noise_robustness(
    spec: &MlpSpec,
    params: &ParamVector,
    sigmas: &[f64],
    trials: usize,
    x: &Tensor,
    y: &[usize],
    seed: u64,
) -> Result<Vec<NoisePoint>> {
    if trials == 0 {
        return Err(Error::input("trials must be >= 1"));
    }
    sigmas
        .iter()
        .enumerate()
        .map(|(si, &sigma)| {
            let accuracies = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let mut rng = SeededRng::for_purpose(seed, Purpose::Analysis, (si * 100_000 + t) as u64);
                    let p = multiplicative_perturb(params, sigma, &mut rng)?;
                    evaluate(spec, &p, x, y).map(|(_, acc)| acc)
                })
                .collect::<Result<Vec<f64>>>()?;
            let n = accuracies.len() as f64;
            let mean = accuracies.iter().sum::<f64>() / n;
            let std = if accuracies.len() > 1 {
                (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            Ok(NoisePoint {
                sigma,
                mean_accuracy: mean,
                std_accuracy: std,
                accuracies,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{LayerSlot, Layout};
    use crate::weightspace::midpoint;
    use std::sync::Arc;

    fn setup() -> (MlpSpec, Tensor, Vec<usize>) {
        let spec = MlpSpec::new(4, vec![6], 3).unwrap();
        let mut rng = SeededRng::for_purpose(2, Purpose::Test, 0);
        let x = Tensor::new(vec![30, 4], (0..120).map(|_| rng.normal()).collect()).unwrap();
        let y = (0..30).map(|i| i % 3).collect();
        (spec, x, y)
    }

    fn members(spec: &MlpSpec, n: usize) -> EnsembleWeights {
        EnsembleWeights::new(
            (0..n)
                .map(|i| spec.init_params(&mut SeededRng::for_purpose(7, Purpose::Test, i as u64)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn path_endpoints_bit_match() {
        let (spec, x, y) = setup();
        let w = members(&spec, 2);
        let path = eval_linear_path(&spec, w.member(0), w.member(1), 5, &x, &y).unwrap();
        assert_eq!(path.alphas, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let at_b = evaluate(&spec, w.member(1), &x, &y).unwrap();
        let at_a = evaluate(&spec, w.member(0), &x, &y).unwrap();
        assert_eq!((path.losses[0], path.accuracies[0]), at_b);
        assert_eq!((path.losses[4], path.accuracies[4]), at_a);
    }

    #[test]
    fn identical_endpoints_give_constant_path() {
        let (spec, x, y) = setup();
        let w = members(&spec, 1);
        let path = eval_linear_path(&spec, w.member(0), w.member(0), 7, &x, &y).unwrap();
        for l in &path.losses {
            assert!((l - path.losses[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn quadratic_path_is_a_parabola() {
        let layout = Arc::new(
            Layout::new(vec![LayerSlot {
                name: "theta".into(),
                offset: 0,
                shape: vec![3],
            }])
            .unwrap(),
        );
        let a = ParamVector::new(layout.clone(), vec![1.0, -2.0, 0.5]).unwrap();
        let b = ParamVector::new(layout, vec![-1.0, 0.0, 2.0]).unwrap();
        let h = [2.0, 0.5, 3.0];
        let loss = |p: &ParamVector| 0.5 * p.data().iter().zip(h).map(|(v, h)| h * v * v).sum::<f64>();
        let path = eval_linear_path_with(&a, &b, 11, ("a", "b"), |p| Ok((loss(p), 0.0))).unwrap();
        // L(α) = ½ Σ h (b + α(a-b))²
        for (alpha, l) in path.alphas.iter().zip(&path.losses) {
            let want: f64 = (0..3)
                .map(|i| {
                    let v = b.data()[i] + alpha * (a.data()[i] - b.data()[i]);
                    0.5 * h[i] * v * v
                })
                .sum();
            assert!((l - want).abs() < 1e-10);
        }
    }

    #[test]
    fn grid_cardinality_and_corners() {
        for r in 0..=20 {
            assert_eq!(simplex_grid_points(r).len(), (r + 1) * (r + 2) / 2);
        }
        let (spec, x, y) = setup();
        let w = members(&spec, 3);
        let grid = eval_simplex_grid(&spec, &w, 6, &x, &y).unwrap();
        assert_eq!(grid.points.len(), 28);
        for (i, corner) in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]].iter().enumerate() {
            let p = grid.points.iter().find(|p| &p.alpha == corner).unwrap();
            assert_eq!((p.loss, p.accuracy), evaluate(&spec, w.member(i), &x, &y).unwrap());
        }
        let center = grid.points.iter().find(|p| p.alpha.iter().all(|a| *a == 1.0 / 3.0)).unwrap();
        let (ml, _) = evaluate(&spec, &midpoint(&w), &x, &y).unwrap();
        assert!((center.loss - ml).abs() < 1e-12);
        assert!(eval_simplex_grid(&spec, &members(&spec, 2), 4, &x, &y).is_err());
    }

    #[test]
    fn zero_noise_keeps_accuracy() {
        let (spec, x, y) = setup();
        let p = members(&spec, 1).member(0).clone();
        let res = eval_noise_robustness(&spec, &p, &[0.0, 0.5], 4, &x, &y, 1).unwrap();
        let (_, acc) = evaluate(&spec, &p, &x, &y).unwrap();
        assert_eq!(res[0].mean_accuracy, acc);
        assert_eq!(res[0].std_accuracy, 0.0);
        assert_eq!(res[1].accuracies.len(), 4);
    }
}
