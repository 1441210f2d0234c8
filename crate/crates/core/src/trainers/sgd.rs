use crate::numkit::ParamVector;
use crate::Result;

/// `lr0 · decay^(task-1)` for 1-based `task`.
pub fn task_lr(lr0: f64, decay: f64, task: usize) -> f64 {
    lr0 * decay.powi(task as i32 - 1)
}

/// Classical momentum: `v ← μv + g`, `θ ← θ - lr·v`. An empty velocity is
/// treated as zero.
pub fn sgd_step(params: &mut ParamVector, grad: &ParamVector, lr: f64, momentum: f64, velocity: &mut Vec<f64>) -> Result<()> {
    params.check_layout(grad, "sgd step")?;
    if velocity.len() != params.len() {
        velocity.clear();
        velocity.resize(params.len(), 0.0);
    }
    for ((p, g), v) in params.data_mut().iter_mut().zip(grad.data()).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
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
    fn plain_step_on_quadratic() {
        let theta0 = vector(vec![2.0, -4.0]);
        let mut theta = theta0.clone();
        let mut v = Vec::new();
        sgd_step(&mut theta, &theta0.clone(), 0.1, 0.0, &mut v).unwrap();
        assert_eq!(theta, theta0.scaled(0.9));
    }

    #[test]
    fn decay_schedule() {
        assert_eq!(task_lr(0.1, 0.5, 1), 0.1);
        assert_eq!(task_lr(0.1, 0.5, 3), 0.1 / 4.0);
    }

    #[test]
    fn momentum_two_steps_on_linear_loss() {
        // L = c·θ: g = c every step. v1 = c, v2 = μc + c.
        let (c, mu, lr) = (0.7, 0.8, 0.05);
        let mut theta = vector(vec![1.0]);
        let g = vector(vec![c]);
        let mut v = Vec::new();
        sgd_step(&mut theta, &g, lr, mu, &mut v).unwrap();
        sgd_step(&mut theta, &g, lr, mu, &mut v).unwrap();
        let want = 1.0 - lr * c - lr * (mu * c + c);
        assert!((theta.data()[0] - want).abs() < 1e-15);
        assert!((v[0] - (mu * c + c)).abs() < 1e-15);
    }
}
