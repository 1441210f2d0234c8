//! Subspace training followed, from the second task on, by a connectivity
//! step that keeps a low-loss linear path to the previous solution.

use super::eval::{eval_accuracy, Predictor};
use super::sequential::{subspace_entries, subspace_task, SubspaceRngs};
use super::{check_loss, finish_record, Method, RunRecord, Snapshot, TrainConfig};
use crate::numkit::{cross_entropy, mlp_backward, mlp_forward, MlpSpec, Mode, ParamVector, Purpose, Tensor};
use crate::tasks::{stack_examples, ReplayBuffer, TaskStream};
use crate::weightspace::{init_ensemble, midpoint, multiplicative_perturb, sample_simplex, EnsembleWeights, SimplexPoint};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct ConnectivityLoss {
    /// `Σ_j L_j` over earlier tasks at `Wᵀα + α_{n+1}·prev_anchor`.
    pub loss_previous: f64,
    /// `L_τ` at `Wᵀα + α_{n+1}·current_anchor`.
    pub loss_current: f64,
    pub member_grads: Vec<ParamVector>,
}

impl ConnectivityLoss {
    pub fn total(&self) -> f64 {
        self.loss_previous + self.loss_current
    }
}

fn mix_with_anchor(w: &EnsembleWeights, alpha: &[f64], anchor: &ParamVector) -> Result<ParamVector> {
    let mut p = ParamVector::zeros(anchor.layout().clone());
    for (m, &a) in w.members().iter().zip(alpha) {
        p.axpy(a, m)?;
    }
    p.axpy(alpha[w.n()], anchor)?;
    Ok(p)
}

fn ce_grad(spec: &MlpSpec, p: &ParamVector, x: &Tensor, y: &[usize]) -> Result<(f64, ParamVector)> {
    let (logits, cache) = mlp_forward(spec, p, x, Mode::Eval)?;
    let (loss, g) = cross_entropy(&logits, y)?;
    Ok((loss, mlp_backward(spec, &cache, &g)?))
}

/// Loss of one connectivity step for `α ∈ Δ^{n+1}`, one batch per earlier
/// task and one batch of the current task, with member gradients
/// `α_i · (Σ_j ∇L_j + ∇L_τ)`.
pub fn connectivity_loss(
    spec: &MlpSpec,
    w: &EnsembleWeights,
    alpha: &SimplexPoint,
    prev_anchor: &ParamVector,
    current_anchor: &ParamVector,
    previous: &[(Tensor, Vec<usize>)],
    current: &(Tensor, Vec<usize>),
) -> Result<ConnectivityLoss> {
    if alpha.n() != w.n() + 1 {
        return Err(Error::input(format!(
            "connectivity needs {} simplex coordinates, got {}",
            w.n() + 1,
            alpha.n()
        )));
    }
    let a = alpha.alpha();
    let p_prev = mix_with_anchor(w, a, prev_anchor)?;
    let p_cur = mix_with_anchor(w, a, current_anchor)?;
    let mut grad = ParamVector::zeros(prev_anchor.layout().clone());
    let mut loss_previous = 0.0;
    for (x, y) in previous {
        let (l, g) = ce_grad(spec, &p_prev, x, y)?;
        loss_previous += l;
        grad.axpy(1.0, &g)?;
    }
    let (loss_current, g) = ce_grad(spec, &p_cur, &current.0, &current.1)?;
    grad.axpy(1.0, &g)?;
    Ok(ConnectivityLoss {
        loss_previous,
        loss_current,
        member_grads: a[..w.n()].iter().map(|&ai| grad.scaled(ai)).collect(),
    })
}

pub fn train_subspace_connectivity(stream: &TaskStream, cfg: &TrainConfig, spec: &MlpSpec) -> Result<RunRecord> {
    let n = cfg.n_models;
    let mut w = init_ensemble(spec, n, cfg.sigma_init, cfg.seed)?;
    let mut rngs = SubspaceRngs::new(cfg);
    let mut connect_simplex = cfg.rng(Purpose::Simplex, 1);
    let mut buffer = ReplayBuffer::new(cfg.m_b, cfg.replay_policy, cfg.rng(Purpose::Replay, 1));
    let mut prev_mid: Option<ParamVector> = None;
    let mut rows = Vec::new();
    let mut snapshots = Vec::new();

    for (ti, task) in stream.tasks.iter().enumerate() {
        let t = ti + 1;
        subspace_task(&mut w, task, cfg, spec, &mut rngs, None)?;
        let hat = w.clone();
        let hat_mid = midpoint(&hat);
        task.train.iter().for_each(|ex| {
            buffer.insert(ex.clone());
        });

        if let Some(prev) = &prev_mid {
            for j in 1..=t {
                if buffer.items(j).is_empty() {
                    return Err(Error::State(format!("replay buffer has no examples of task {j}")));
                }
            }
            let mut start = prev.scaled(cfg.alpha_init_mix);
            start.axpy(1.0 - cfg.alpha_init_mix, &hat_mid)?;
            let members = (0..n)
                .map(|i| {
                    let mut rng = cfg.rng(Purpose::ConnectNoise, (t * 1000 + i) as u64);
                    multiplicative_perturb(&start, cfg.sigma_connect_noise, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            w = EnsembleWeights::new(members)?;
            for step in 0..cfg.connect_steps {
                let alpha = sample_simplex(n + 1, &mut connect_simplex);
                let previous = (1..t)
                    .map(|j| {
                        buffer
                            .sample_per_class(cfg.reg_samples, j, &mut rngs.replay)
                            .map(|ex| stack_examples(&ex))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let current = stack_examples(&buffer.sample_per_class(cfg.reg_samples, t, &mut rngs.replay)?);
                let cl = connectivity_loss(spec, &w, &alpha, prev, &hat_mid, &previous, &current)?;
                check_loss(cl.total(), t, step)?;
                for (m, g) in w.members_mut().iter_mut().zip(&cl.member_grads) {
                    m.axpy(-cfg.connect_lr, g)?;
                }
            }
            if !w.is_finite() {
                return Err(Error::Numeric(format!("connectivity step diverged on task {t}")));
            }
        }

        let mid = midpoint(&w);
        rows.push(
            stream.tasks[..t]
                .iter()
                .map(|tk| eval_accuracy(spec, Predictor::Single(&mid), &tk.test))
                .collect::<Result<Vec<_>>>()?,
        );
        let mut entries = subspace_entries(&hat, "hat_");
        entries.extend(subspace_entries(&w, ""));
        snapshots.push(Snapshot { task: t, entries });
        prev_mid = Some(mid);
        log::info!("subspace connectivity: task {t} done, row {:?}", rows.last().unwrap());
    }
    finish_record(Method::SubspaceConnectivity, rows, None, snapshots, cfg, spec)
}
